from pathlib import Path

import numpy as np
import pytest

from cmcforge.cli import load_run

DATA = Path(__file__).parent / "data"


def random_sl2(rng, scale=1.0):
    m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    m = np.eye(2) + scale * m
    return m / np.sqrt(np.linalg.det(m))


@pytest.fixture(scope="session")
def lawson_run():
    return load_run(DATA / "lawson_xi21_run.json")


@pytest.fixture(scope="session")
def clifford_run():
    return load_run(DATA / "clifford_g1_run.json")


@pytest.fixture(scope="session")
def family1_run():
    return load_run(DATA / "familyI_step5_run.json")


@pytest.fixture(scope="session")
def familyII_run():
    return load_run(DATA / "familyII_start_run.json")
