"""False-alarm calibration on corpora whose pre- and post-change regimes coincide."""
import argparse
import json

import numpy as np

from hqcd.experiments import calibration


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--alpha", type=float, default=9.0)
    p.add_argument("--n-theta", type=int, default=100)
    p.add_argument("--n-x", type=int, default=100)
    p.add_argument("--seed0", type=int, default=0)
    args = p.parse_args()
    res = calibration(n_runs=args.runs, alpha=args.alpha, n_theta=args.n_theta, n_x=args.n_x,
                      seed0=args.seed0)
    print(json.dumps({"runs": res.n_runs, "bound": res.bound, "limit": res.bound + 3 * res.se,
                      "modified_pfa": res.modified_pfa, "ml_pfa": res.ml_pfa,
                      "fa_rate": np.round(res.fa_rate, 4).tolist()}, indent=2))


if __name__ == "__main__":
    main()
