"""Recovery of one planted surrogate-to-target coupling from the influence matrix."""
import argparse

from hqcd.experiments import influence_recovery


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--n-x", type=int, default=400)
    p.add_argument("--sigma-a", type=float, default=0.01, help="weight random-walk scale in the prior")
    args = p.parse_args()
    runs = influence_recovery(range(args.seeds), n_x=args.n_x, sigma_a_scale=args.sigma_a)
    for r in runs:
        print(f"seed {r.seed:3d}  cell {r.cell:9.1f}  median of others {r.median_other:8.1f}  "
              f"{'recovered' if r.recovered else '-'}")
    print(f"recovered in {sum(r.recovered for r in runs)}/{len(runs)} seeds")


if __name__ == "__main__":
    main()
