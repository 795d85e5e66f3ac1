"""Search a start with one unstable zero in the disk and continue it.

    python scripts/family_two.py --count 5
"""
import argparse
import cmath

from cmcforge import FamilySpec, SearchConfig, continue_family, lawson_params
from cmcforge.analysis import classify_stability, family_summary
from cmcforge.model import conformal_type, mean_curvature
from cmcforge.search import find_familyII_start


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--theta", type=float, default=1.0, help="Sym points exp(+-i theta)")
    ap.add_argument("--step", type=float, default=-0.02)
    ap.add_argument("--count", type=int, default=5)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    p = lawson_params(2).replace(lambda1=cmath.exp(1j * args.theta), lambda2=cmath.exp(-1j * args.theta))
    config = SearchConfig(N_ladder=(0, 2, 4, 6, 8, 10, 12), K=16, max_evals=2500, rung_evals=2500)
    start = find_familyII_start(p, config, threads=args.threads,
                                callback=lambda N, r: print(f"N={N}: F={r.final_F:.2e}", flush=True))
    print(f"start: F={start.final_F:.2e} lambda0={start.lambda0:.4f} "
          f"unstable={classify_stability(start).unstable_count}")

    def show(k, run):
        print(f"step {k}: H={mean_curvature(run.params):.4f} "
              f"cross_ratio={conformal_type(run.params).real:.2f} lambda0={run.lambda0.real:.4f} "
              f"F={run.final_F:.2e} unstable={classify_stability(run).unstable_count}", flush=True)

    runs, failed = continue_family(FamilySpec("II", "sym", start, args.step, args.count), config,
                                   threads=args.threads, callback=show)
    if failed is not None:
        print(f"stopped: {failed.message}")
    print(family_summary([start] + runs).to_csv())


if __name__ == "__main__":
    main()
