"""Continue the family through the Lawson surface by moving the Sym points.

    python scripts/family_one.py --start runs/lawson/run.json --step -0.05 --count 5
"""
import argparse

from cmcforge import FamilySpec, SearchConfig, continue_family
from cmcforge.analysis import classify_stability, family_summary
from cmcforge.cli import load_run
from cmcforge.model import conformal_type, mean_curvature


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--start", default="tests/data/lawson_xi21_run.json")
    ap.add_argument("--step", type=float, default=-0.05)
    ap.add_argument("--count", type=int, default=5)
    ap.add_argument("--csv", default=None)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    start = load_run(args.start)
    config = SearchConfig.from_dict(start.provenance.get("config") or {})

    def show(k, run):
        print(f"step {k}: H={mean_curvature(run.params):.4f} "
              f"cross_ratio={conformal_type(run.params).real:.4f} F={run.final_F:.2e} "
              f"unstable={classify_stability(run).unstable_count}", flush=True)

    runs, failed = continue_family(FamilySpec("I", "sym", start, args.step, args.count), config,
                                   threads=args.threads, callback=show)
    if failed is not None:
        print(f"stopped: {failed.message}")
    table = family_summary([start] + runs)
    print(table.to_csv(args.csv))


if __name__ == "__main__":
    main()
