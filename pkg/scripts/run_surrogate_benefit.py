"""Target-layer delay of the full model against the surrogate-ablated engine."""
import argparse

import numpy as np

from hqcd.experiments import surrogate_benefit


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--alpha", type=float, default=9.0)
    p.add_argument("--n-theta", type=int, default=50)
    p.add_argument("--n-x", type=int, default=100)
    args = p.parse_args()
    runs = surrogate_benefit(range(args.seeds), alpha=args.alpha, n_theta=args.n_theta, n_x=args.n_x)
    print("seed  full_add  ablated_add  full_fa(exact)  ablated_fa(exact)")
    for r in runs:
        print(f"{r.seed:4d}  {r.full_add:8.2f}  {r.ablated_add:11.2f}  {r.full_fa:7d}({r.full_exact})  {r.ablated_fa:10d}({r.ablated_exact})")
    wins = sum(r.full_wins for r in runs)
    print(f"full <= ablated in {wins}/{len(runs)} seeds; mean ADD "
          f"{np.nanmean([r.full_add for r in runs]):.2f} vs {np.nanmean([r.ablated_add for r in runs]):.2f}")


if __name__ == "__main__":
    main()
