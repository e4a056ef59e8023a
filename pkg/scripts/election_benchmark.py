"""Multi-start comparison of all estimators on an election-shaped dataset.

Uses a CSV export of the real survey when ``--data`` is given (12 four-level
items followed by a party column), otherwise draws the simulated analog.

    python3 scripts/election_benchmark.py --runs 100 --out results/election
"""

import argparse
import time
from pathlib import Path

from nestedlca import EstimatorConfig, io, run_benchmark, simulate
from nestedlca.harness import election_like_model, format_table

ALGOS = ["nested_em", "mm_em", "nr_em", "nr_em_q1", "hybrid_em", "three_step"]
DATA_SEED = 1


def election_dataset(path=None):
    if path:
        return io.read_dataset(path, 12, 4, intercept=True)
    ds, _ = simulate(election_like_model(), 880, DATA_SEED)
    return ds


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data")
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()

    ds = election_dataset(args.data)
    start = time.perf_counter()
    report = run_benchmark(ds, 3, ALGOS, args.runs, EstimatorConfig(), args.seed, args.jobs)
    print(format_table(report))
    print(f"\nglobal max loglik {report.global_max_loglik:.6f}, "
          f"{time.perf_counter() - start:.0f}s total")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "report.json", report.to_dict())
        io.write_runs(out / "runs.csv", report.runs)


if __name__ == "__main__":
    main()
