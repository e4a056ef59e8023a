"""Log-likelihood paths of every one-step estimator from a shared start.

Writes one column per estimator (blank once it has stopped) so decays and
convergence speed can be plotted with any external tool.

    python3 scripts/convergence_traces.py --seed 3 --out traces.csv
"""

import argparse
import csv
import itertools

from nestedlca import EstimationError, EstimatorConfig, fit, init_random, simulate
from nestedlca.harness import election_like_model

ALGOS = ["nested_em", "mm_em", "nr_em", "nr_em_q1", "hybrid_em"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=880)
    ap.add_argument("--seed", type=int, default=0, help="initialization seed")
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--max-iter", type=int, default=2000)
    ap.add_argument("--out", default="traces.csv")
    args = ap.parse_args()

    ds, _ = simulate(election_like_model(), args.n, args.data_seed)
    init = init_random(ds, 3, args.seed)
    cfg = EstimatorConfig(max_iter=args.max_iter)
    traces = {}
    for algo in ALGOS:
        try:
            res = fit(algo, ds, 3, init, cfg)
            traces[algo] = res.loglik_trace
            status = f"loglik {res.loglik:.6f} after {res.iterations} iterations, {res.decay_count} decays"
        except EstimationError as err:
            traces[algo] = err.trace
            status = f"failed: {err}"
        print(f"{algo:10s} {status}")

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration"] + ALGOS)
        columns = [traces[a] for a in ALGOS]
        for t, row in enumerate(itertools.zip_longest(*columns)):
            w.writerow([t] + ["" if v is None else repr(float(v)) for v in row])


if __name__ == "__main__":
    main()
