"""Genus-1 run: the minimal Clifford torus, area 2 pi^2.

    python scripts/clifford_torus.py
"""
import argparse
import math

from cmcforge import SearchConfig, lawson_params, minimize_surface
from cmcforge.surface import SurfaceConfig, build_surface


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", type=int, default=64)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    run = minimize_surface(lawson_params(1), SearchConfig(N_ladder=(0, 2, 4, 6, 8, 10), K=16),
                           threads=args.threads)
    print(f"solve: F={run.final_F:.3e} N={run.N} converged={run.converged}")
    mesh = build_surface(run, SurfaceConfig(grid=(args.grid, args.grid), samples=64, threads=args.threads))
    a = mesh.diagnostics["area"]
    print(f"area={a:.6f} 2pi^2={2 * math.pi ** 2:.6f} rel={abs(a / (2 * math.pi ** 2) - 1):.2e}")


if __name__ == "__main__":
    main()
