"""False-alarm versus delay trade-off over a sweep of uniform PFA parameters.

One engine pass per corpus and variant; every budget replays the stored curves.
"""
import argparse
from pathlib import Path

from hqcd.evaluation import frontier, write_frontier_csv
from hqcd.experiments import frontier_detector, surrogate_benefit

BUDGETS = (1, 2, 4, 9, 19, 49, 99)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--out", type=Path, default=Path("frontier"))
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    _, stored = surrogate_benefit(range(args.seeds), keep_curves=True)
    names = [f"S{k + 1}" for k in range(5)] + [f"K{k + 1}" for k in range(10)] + ["E"]
    for which, label in ((0, "full"), (1, "ablated")):
        pts = frontier(BUDGETS, stored, frontier_detector(names, 5, 10, which), horizon=60)
        write_frontier_csv(pts, args.out / f"frontier_{label}.csv")
        for pt in pts:
            print(f"{label:8s} alpha={pt.budget:5.0f} fa={pt.fa_rate:.3f} ml_pfa={pt.ml_pfa:.3f} "
                  f"add={pt.mean_add:.2f}")


if __name__ == "__main__":
    main()
