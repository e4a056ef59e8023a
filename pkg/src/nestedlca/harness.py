"""Synthetic data and the multi-start benchmark.

Every run ``k`` of a benchmark draws one initialization from seed
``base_seed + k`` and hands it to all algorithms, so differences between
algorithms are never due to starting values. A run counts as a local mode
when its final log-likelihood is more than ``mode_tol`` below the best value
found by any algorithm in any run.
"""

from __future__ import annotations

import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, EstimationError
from .estimators import EstimatorConfig, count_decays, fit, init_random, parse_algorithm
from .model import Dataset, ModelParams, class_probabilities

MODE_TOL = 1e-4
NO_DECAY_COUNT = frozenset({"three_step"})


@dataclass(frozen=True)
class Categorical:
    """Integer-valued covariate entered as a numeric score."""

    levels: tuple[float, ...]
    probs: tuple[float, ...]

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(np.asarray(self.levels, dtype=float), size=n, p=self.probs)


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 1.0

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.sd, size=n)


@dataclass(frozen=True, eq=False)
class TrueModel:
    """Generating parameters plus a recipe for the covariate columns.

    The design is ``[1, covariates...]`` when ``intercept`` is set.
    """

    params: ModelParams
    covariates: tuple = ()
    intercept: bool = True

    def __post_init__(self):
        p = len(self.covariates) + int(self.intercept)
        if p != self.params.beta.shape[1]:
            raise DataError(f"covariate recipe gives {p} columns, beta has {self.params.beta.shape[1]}")

    def draw_design(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cols = [c.draw(rng, n) for c in self.covariates]
        if self.intercept:
            cols.insert(0, np.ones(n))
        return np.column_stack(cols)


def _draw_categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    # inverse-cdf draw, one category per row of probs
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None]
    return np.minimum((u > cdf).sum(axis=1), probs.shape[1] - 1)


def simulate(model: TrueModel, n: int, seed: int) -> tuple[Dataset, np.ndarray]:
    """Draw a dataset and its hidden 0-based class labels."""
    if n < 1:
        raise DataError("n must be at least 1")
    rng = np.random.default_rng(seed)
    x = model.draw_design(rng, n)
    counts = model.params.category_counts
    placeholder = Dataset(np.zeros((n, len(counts)), dtype=int), counts, x)
    nu = class_probabilities(model.params, placeholder)
    labels = _draw_categorical(rng, nu)
    y = np.column_stack([_draw_categorical(rng, p[labels]) for p in model.params.pi])
    return Dataset(y, counts, x), labels


# Party identification shares on a 1-7 scale (strong Democrat ... strong Republican).
PARTY_LEVELS = (1, 2, 3, 4, 5, 6, 7)
PARTY_PROBS = (0.20, 0.15, 0.13, 0.10, 0.12, 0.13, 0.17)


def election_like_model(n_classes: int = 3, n_items: int = 12, n_categories: int = 4,
                        spread: float = 1.2, party_effect: float = 1.2) -> TrueModel:
    """Survey-style generating model: candidate ratings driven by party.

    The first half of the items rate one candidate and the second half the
    other. Class profiles are discretized bell shapes whose centre moves from
    one end of the scale to the other across classes (reversed for the second
    candidate), so classes differ in which candidate they favour. Membership
    depends on a 1-7 party score; ``party_effect`` is the slope of the first
    class against the reference class, later classes get evenly smaller
    slopes. Intercepts centre each contrast near the middle of the scale.
    """
    if n_classes < 1 or n_items < 1 or n_categories < 2:
        raise DataError("need R >= 1, J >= 1, K >= 2")
    cats = np.arange(1, n_categories + 1)
    pi = []
    for j in range(n_items):
        rows = []
        for r in range(n_classes):
            frac = r / (n_classes - 1) if n_classes > 1 else 0.5
            if j >= n_items // 2:
                frac = 1.0 - frac
            centre = 1.0 + (n_categories - 1) * (0.1 + 0.8 * frac)
            w = np.exp(-0.5 * ((cats - centre) / spread) ** 2)
            rows.append(w / w.sum())
        pi.append(np.array(rows))
    slopes = party_effect * (n_classes - 1 - np.arange(n_classes - 1)) / max(n_classes - 1, 1)
    beta = np.column_stack([-4.0 * slopes + 0.3, slopes])
    return TrueModel(ModelParams(beta, tuple(pi)),
                     covariates=(Categorical(PARTY_LEVELS, PARTY_PROBS),))


# -- benchmark ---------------------------------------------------------------


@dataclass
class RunRecord:
    run: int
    seed: int
    algorithm: str
    loglik: float | None
    iterations: int | None
    decays: int | None
    converged: bool
    wall_time: float
    error: str | None = None


@dataclass
class AlgorithmSummary:
    algorithm: str
    decay_runs: int | None
    local_mode_runs: int
    failed_runs: int
    median_gap: float | None
    median_iters_to_max: float | None
    mean_wall_time: float


@dataclass
class BenchmarkReport:
    per_algorithm: list[AlgorithmSummary]
    global_max_loglik: float
    n_runs: int
    seeds: list[int]
    n_classes: int
    mode_tol: float
    config: dict
    runs: list[RunRecord] = field(repr=False, default_factory=list)

    def row(self, algorithm: str) -> AlgorithmSummary:
        for s in self.per_algorithm:
            if s.algorithm == algorithm:
                return s
        raise KeyError(algorithm)

    def to_dict(self) -> dict:
        """Deterministic summary: everything except timings and per-run rows."""
        rows = []
        for s in self.per_algorithm:
            d = asdict(s)
            del d["mean_wall_time"]
            rows.append(d)
        return {
            "global_max_loglik": self.global_max_loglik,
            "n_runs": self.n_runs,
            "n_classes": self.n_classes,
            "mode_tol": self.mode_tol,
            "seeds": self.seeds,
            "config": self.config,
            "per_algorithm": rows,
        }


def _one_run(dataset: Dataset, n_classes: int, algorithms: Sequence[str],
             cfg: EstimatorConfig, run: int, seed: int) -> list[RunRecord]:
    init = init_random(dataset, n_classes, seed)
    out = []
    for algo in algorithms:
        start = time.perf_counter()
        try:
            res = fit(algo, dataset, n_classes, init, cfg)
        except EstimationError as err:
            decays = None if _base(algo) in NO_DECAY_COUNT else count_decays(err.trace, cfg.decay_slack)
            out.append(RunRecord(run, seed, algo, None, err.iteration, decays, False,
                                 time.perf_counter() - start, str(err)))
            continue
        decays = None if _base(algo) in NO_DECAY_COUNT else res.decay_count
        out.append(RunRecord(run, seed, algo, res.loglik, res.iterations, decays,
                             res.converged, res.wall_time))
    return out


def _base(algo: str) -> str:
    return algo.partition("@")[0]


def _median(values):
    return float(statistics.median(values)) if values else None


def summarize(records: Sequence[RunRecord], algorithms: Sequence[str], n_runs: int,
              mode_tol: float = MODE_TOL) -> tuple[list[AlgorithmSummary], float]:
    finished = [r.loglik for r in records if r.loglik is not None]
    best = max(finished) if finished else float("nan")
    rows = []
    for algo in algorithms:
        mine = [r for r in records if r.algorithm == algo]
        ok = [r for r in mine if r.loglik is not None]
        local = [r for r in ok if r.loglik < best - mode_tol]
        at_max = [r for r in ok if r.loglik >= best - mode_tol]
        decays = None
        if _base(algo) not in NO_DECAY_COUNT:
            decays = sum(1 for r in mine if r.decays)
        iters = None
        if _base(algo) not in NO_DECAY_COUNT:
            iters = _median([r.iterations for r in at_max])
        rows.append(AlgorithmSummary(
            algorithm=algo,
            decay_runs=decays,
            local_mode_runs=len(local),
            failed_runs=len(mine) - len(ok),
            median_gap=_median([best - r.loglik for r in local]),
            median_iters_to_max=iters,
            mean_wall_time=float(np.mean([r.wall_time for r in mine])) if mine else 0.0,
        ))
    return rows, best


def run_benchmark(dataset: Dataset, n_classes: int, algorithms: Sequence[str], n_runs: int,
                  cfg: EstimatorConfig = EstimatorConfig(), base_seed: int = 0,
                  jobs: int = 1, mode_tol: float = MODE_TOL) -> BenchmarkReport:
    """Fit every algorithm from ``n_runs`` shared random starts and tabulate."""
    if n_runs < 1:
        raise DataError("n_runs must be at least 1")
    if not algorithms:
        raise DataError("no algorithms given")
    for algo in algorithms:
        parse_algorithm(algo)
    seeds = [base_seed + k for k in range(n_runs)]
    args = [(dataset, n_classes, list(algorithms), cfg, k, s) for k, s in enumerate(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_run = list(pool.map(_one_run, *zip(*args)))
    else:
        per_run = [_one_run(*a) for a in args]
    records = [rec for run in per_run for rec in run]
    rows, best = summarize(records, algorithms, n_runs, mode_tol)
    return BenchmarkReport(
        per_algorithm=rows,
        global_max_loglik=best,
        n_runs=n_runs,
        seeds=seeds,
        n_classes=n_classes,
        mode_tol=mode_tol,
        config=asdict(cfg),
        runs=records,
    )


TABLE_ROWS = (
    ("runs with a decay", "decay_runs"),
    ("runs reaching a local mode", "local_mode_runs"),
    ("failed runs", "failed_runs"),
    ("median |gap| at local modes", "median_gap"),
    ("median iterations to max", "median_iters_to_max"),
    ("mean time per run (s)", "mean_wall_time"),
)


def format_table(report: BenchmarkReport) -> str:
    """Plain-text table with one column per algorithm."""
    def cell(v):
        if v is None:
            return "NA"
        if isinstance(v, float):
            return f"{v:.3f}" if abs(v) >= 1e-3 or v == 0 else f"{v:.2e}"
        return str(v)

    names = [s.algorithm for s in report.per_algorithm]
    label_w = max(len(label) for label, _ in TABLE_ROWS)
    col_w = max(10, *(len(n) for n in names))
    lines = [f"{'R=' + str(report.n_classes):<{label_w}}  " + "  ".join(f"{n:>{col_w}}" for n in names)]
    for label, attr in TABLE_ROWS:
        vals = [cell(getattr(s, attr)) for s in report.per_algorithm]
        lines.append(f"{label:<{label_w}}  " + "  ".join(f"{v:>{col_w}}" for v in vals))
    lines.append(f"max log-likelihood over {report.n_runs} runs: {report.global_max_loglik:.6f}")
    return "\n".join(lines)
