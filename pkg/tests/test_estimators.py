import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestedlca import (
    DataError,
    Dataset,
    EmptyClassError,
    EstimatorConfig,
    Initialization,
    ModelParams,
    SingularSystemError,
    TrueModel,
    class_probabilities,
    expected_loglik_q1,
    fit,
    fit_em_two_class,
    fit_hybrid_em,
    fit_mm_em,
    fit_nested_em,
    fit_nr_em,
    fit_nr_em_q1,
    fit_three_step_classical,
    init_random,
    log_likelihood,
    m_step_pi,
    responsibilities,
    simulate,
)
from nestedlca.estimators import (
    ESTIMATORS,
    bohning_bound,
    observed_hessian,
    q1_hessian,
    q1_score,
)
from nestedlca.harness import Normal, election_like_model
from oracles import fd_gradient, fd_hessian, mp_loglik, mp_q1, random_problem

ONE_STEP = ["nested_em", "hybrid_em", "nr_em", "nr_em_q1", "mm_em"]


def small_problem(seed, n=80, n_classes=3, n_items=4, n_categories=3):
    model = election_like_model(n_classes, n_items, n_categories, spread=0.8)
    ds, _ = simulate(model, n, seed)
    return ds


# -- initialization ----------------------------------------------------------


def test_init_deterministic(rng):
    ds, _ = random_problem(rng, 10, 3, 3)
    a, b = init_random(ds, 3, 11), init_random(ds, 3, 11)
    np.testing.assert_array_equal(a.params.beta, b.params.beta)
    for p, q in zip(a.params.pi, b.params.pi):
        np.testing.assert_array_equal(p, q)
    assert not np.array_equal(a.params.beta, init_random(ds, 3, 12).params.beta)


def test_init_single_class_has_no_coefficients(rng):
    ds, _ = random_problem(rng, 10, 1, 2, n_cov=3)
    assert init_random(ds, 1, 0).params.beta.shape == (0, 3)


def test_init_beta_variance():
    ds = Dataset(np.zeros((1, 1), dtype=int), (2,), np.ones((1, 100)))
    beta = init_random(ds, 101, 5).params.beta
    assert beta.size == 10_000
    assert 0.45 <= beta.var(ddof=1) <= 0.55
    assert abs(beta.mean()) < 0.03


# -- profile M-step ----------------------------------------------------------


def test_m_step_hard_single_class(rng):
    ds, _ = random_problem(rng, 25, 2, 3)
    sbar = np.column_stack([np.ones(25), np.zeros(25)])
    sbar[0] = [0.0, 1.0]  # keep class 2 non-empty
    pi = m_step_pi(sbar, ds)
    for j, k in enumerate(ds.category_counts):
        freq = np.bincount(ds.responses[1:, j], minlength=k) / 24
        np.testing.assert_allclose(pi[j][0], freq, atol=1e-15)


def test_m_step_weighted_by_hand():
    ds = Dataset.from_codes([[1], [2]], (2,), np.ones((2, 1)))
    pi = m_step_pi(np.array([[0.75, 0.25], [0.25, 0.75]]), ds)
    assert pi[0][0, 0] == pytest.approx(0.75, abs=1e-15)
    assert pi[0][1, 0] == pytest.approx(0.25, abs=1e-15)


def test_m_step_uniform_responsibilities_pool(rng):
    ds, _ = random_problem(rng, 30, 3, 2)
    pi = m_step_pi(np.full((30, 3), 1 / 3), ds)
    for j, k in enumerate(ds.category_counts):
        pooled = np.bincount(ds.responses[:, j], minlength=k) / 30
        np.testing.assert_allclose(pi[j], np.tile(pooled, (3, 1)), atol=1e-14)


def test_m_step_empty_class(rng):
    ds, _ = random_problem(rng, 5, 2, 2)
    with pytest.raises(EmptyClassError, match="class 2"):
        m_step_pi(np.column_stack([np.ones(5), np.zeros(5)]), ds)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_m_step_maximizes_q2(seed):
    rng = np.random.default_rng(seed)
    ds, params = random_problem(rng, 20, 3, 3)
    sbar = responsibilities(params, ds)
    pi = m_step_pi(sbar, ds)

    def q2(profiles):
        with np.errstate(divide="ignore"):
            return sum(float(np.sum(sbar * np.log(p[:, ds.responses[:, j]]).T))
                       for j, p in enumerate(profiles))

    best = q2(pi)
    for j, p in enumerate(pi):
        for r in range(3):
            for a, b in itertools.permutations(range(p.shape[1]), 2):
                moved = [q.copy() for q in pi]
                delta = min(1e-3, moved[j][r, b])
                moved[j][r, a] += delta
                moved[j][r, b] -= delta
                assert q2(moved) <= best + 1e-12


# -- nested EM ---------------------------------------------------------------


def test_nested_single_class_closed_form(rng):
    ds, _ = random_problem(rng, 40, 1, 3)
    res = fit_nested_em(ds, 1, init_random(ds, 1, 0))
    assert res.iterations == 1 and res.converged
    expected = 0.0
    for j, k in enumerate(ds.category_counts):
        freq = np.bincount(ds.responses[:, j], minlength=k) / 40
        np.testing.assert_allclose(res.params.pi[j][0], freq, atol=1e-15)
        expected += sum(c * math.log(c / 40) for c in np.bincount(ds.responses[:, j]) if c)
    assert res.loglik == pytest.approx(expected, abs=1e-10)


def _zoom_grid_max(pattern_counts, rounds=6, points=11):
    """Maximize the 2-class, 2-binary-item likelihood over (nu, p11, p21, p12, p22)
    by repeatedly refining a product grid around the incumbent."""
    lo, hi = np.full(5, 1e-6), np.full(5, 1 - 1e-6)
    best_val, best = -np.inf, None
    for _ in range(rounds):
        axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
        g = np.meshgrid(*axes, indexing="ij")
        nu, a1, a2, b1, b2 = (v.ravel() for v in g)
        val = 0.0
        for (y1, y2), c in pattern_counts.items():
            pa = (a1 if y1 else 1 - a1) * (a2 if y2 else 1 - a2)
            pb = (b1 if y1 else 1 - b1) * (b2 if y2 else 1 - b2)
            val = val + c * np.log(nu * pa + (1 - nu) * pb)
        k = int(np.argmax(val))
        if val[k] > best_val:
            best_val, best = float(val[k]), np.array([v[k] for v in (nu, a1, a2, b1, b2)])
        width = (hi - lo) / (points - 1) * 2
        lo, hi = np.clip(best - width, 1e-9, 1 - 1e-9), np.clip(best + width, 1e-9, 1 - 1e-9)
    return best_val


def test_nested_matches_grid_search_oracle():
    rng = np.random.default_rng(3)
    codes = rng.integers(0, 2, size=(20, 2))
    codes[:4] = [[0, 0], [0, 1], [1, 0], [1, 1]]
    ds = Dataset(codes, (2, 2), np.ones((20, 1)))
    counts = {}
    for row in codes.tolist():
        counts[tuple(row)] = counts.get(tuple(row), 0) + 1
    oracle = _zoom_grid_max(counts)
    saturated = sum(c * math.log(c / 20) for c in counts.values())
    best = max(fit_nested_em(ds, 2, init_random(ds, 2, s)).loglik for s in range(5))
    assert best == pytest.approx(oracle, abs=1e-4)
    assert oracle <= saturated + 1e-12 and best <= saturated + 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n_classes=st.integers(2, 4))
def test_nested_monotone(seed, n_classes):
    ds = small_problem(seed, n_classes=n_classes)
    res = fit_nested_em(ds, n_classes, init_random(ds, n_classes, seed + 1),
                        EstimatorConfig(max_iter=400))
    assert np.all(np.diff(res.loglik_trace) >= -1e-9)
    assert res.decay_count == 0


def test_nested_cycle_chain(rng):
    ds = small_problem(7, n_classes=4)
    records = []
    fit_nested_em(ds, 4, init_random(ds, 4, 2), EstimatorConfig(max_iter=50),
                  on_cycle=records.append)
    assert len(records) == 150
    assert [r.class_index for r in records[:6]] == [0, 1, 2, 0, 1, 2]
    for rec in records:
        changed = np.any(rec.beta_before != rec.beta_after, axis=1)
        assert not np.any(np.delete(changed, rec.class_index))
        gain = (expected_loglik_q1(rec.beta_after, rec.sbar, ds)
                - expected_loglik_q1(rec.beta_before, rec.sbar, ds))
        assert gain >= -1e-9


def test_final_trace_entry_is_loglik_of_params():
    ds = small_problem(4)
    for name in ESTIMATORS:
        if name == "em_two_class":
            continue
        res = fit(name, ds, 3, init_random(ds, 3, 9), EstimatorConfig(max_iter=300))
        assert res.loglik == pytest.approx(log_likelihood(res.params, ds), abs=1e-10)


# -- two-class EM ------------------------------------------------------------


def test_two_class_equals_nested():
    ds = small_problem(5, n_classes=2)
    init = init_random(ds, 2, 3)
    a = fit_em_two_class(ds, init)
    b = fit_nested_em(ds, 2, init)
    np.testing.assert_allclose(a.loglik_trace, b.loglik_trace, rtol=0, atol=1e-12)


def test_two_class_rejects_other_class_counts():
    ds = small_problem(5)
    with pytest.raises(DataError):
        fit_em_two_class(ds, init_random(ds, 3, 0))


def test_two_class_step_is_gls():
    ds = small_problem(6, n_classes=2)
    x = ds.design
    params = init_random(ds, 2, 1).params
    for _ in range(4):
        nxt = fit_em_two_class(ds, Initialization(params), EstimatorConfig(max_iter=1)).params
        # independent recomputation of one iteration
        pi_new = m_step_pi(responsibilities(params, ds), ds)
        s = responsibilities(ModelParams(params.beta, pi_new), ds)[:, 0]
        z = x @ params.beta[0]
        omega = np.tanh(z / 2) / (2 * z)
        eta = (s - 0.5) / omega
        beta1 = np.linalg.solve(x.T @ (omega[:, None] * x), x.T @ (omega * eta))
        np.testing.assert_allclose(nxt.beta[0], beta1, rtol=1e-9, atol=1e-12)
        params = nxt


def test_two_class_symmetric_truth_recovers_half():
    pi = (np.array([[0.8, 0.2], [0.2, 0.8]]),) * 5
    model = TrueModel(ModelParams(np.zeros((1, 2)), pi), (Normal(),))
    ds, _ = simulate(model, 2000, 11)
    res = max((fit_em_two_class(ds, init_random(ds, 2, s)) for s in range(3)),
              key=lambda r: r.loglik)
    nu = class_probabilities(res.params, ds).mean(axis=0)
    assert abs(nu[0] - 0.5) < 0.05


# -- hybrid ------------------------------------------------------------------


def test_hybrid_zero_epsilon_follows_nested():
    ds = small_problem(8)
    init = init_random(ds, 3, 4)
    nested = fit_nested_em(ds, 3, init)
    hybrid = fit_hybrid_em(ds, 3, init, EstimatorConfig(epsilon=0.0))
    k = min(len(nested.loglik_trace), len(hybrid.loglik_trace)) - 1
    np.testing.assert_array_equal(hybrid.loglik_trace[:k], nested.loglik_trace[:k])


def test_hybrid_large_epsilon_switches_after_one_step():
    ds = small_problem(8)
    init = init_random(ds, 3, 4)
    hybrid = fit_hybrid_em(ds, 3, init, EstimatorConfig(epsilon=1e6, max_iter=30))
    assert hybrid.diagnostics["switch_iteration"] == 1
    nested_one = fit_nested_em(ds, 3, init, EstimatorConfig(max_iter=1))
    after = fit_nr_em_q1(ds, 3, Initialization(nested_one.params), EstimatorConfig(max_iter=29))
    np.testing.assert_allclose(hybrid.loglik_trace[1:], after.loglik_trace, rtol=0, atol=1e-9)


# -- Newton variants ---------------------------------------------------------


def test_q1_newton_fixed_point():
    ds = small_problem(9)
    params = init_random(ds, 3, 0).params
    nu = class_probabilities(params, ds)
    score = q1_score(nu, nu, ds.design)
    assert np.all(score == 0)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_q1_score_and_hessian_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ds, params = random_problem(rng, 10, 3, 2)
    sbar = responsibilities(params, ds)
    shape = params.beta.shape
    f = lambda b: mp_q1(b, shape, sbar, ds)
    nu = class_probabilities(params, ds)
    np.testing.assert_allclose(q1_score(sbar, nu, ds.design).ravel(),
                               fd_gradient(f, params.beta.ravel()), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(q1_hessian(nu, ds.design), fd_hessian(f, params.beta.ravel()),
                               rtol=1e-6, atol=1e-9)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_observed_hessian_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ds, params = random_problem(rng, 10, 3, 2)
    f = lambda b: mp_loglik(b, params.beta.shape, params, ds)
    sbar, nu = responsibilities(params, ds), class_probabilities(params, ds)
    np.testing.assert_allclose(q1_score(sbar, nu, ds.design).ravel(),
                               fd_gradient(f, params.beta.ravel()), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(observed_hessian(sbar, nu, ds.design),
                               fd_hessian(f, params.beta.ravel()), rtol=1e-5, atol=1e-9)


def test_observed_hessian_vanishes_with_identical_profiles(rng):
    # the likelihood does not depend on beta, so score and Hessian are zero
    ds, one = random_problem(rng, 15, 1, 3)
    params = ModelParams(rng.normal(size=(1, 2)), tuple(np.vstack([p, p]) for p in one.pi))
    sbar, nu = responsibilities(params, ds), class_probabilities(params, ds)
    np.testing.assert_allclose(sbar, nu, atol=1e-14)
    np.testing.assert_allclose(observed_hessian(sbar, nu, ds.design), 0, atol=1e-12)
    with pytest.raises(SingularSystemError):
        fit_nr_em(ds, 2, Initialization(params), EstimatorConfig(max_iter=1))


def test_alpha_scales_newton_step():
    ds = small_problem(10)
    init = init_random(ds, 3, 2)
    full = fit_nr_em_q1(ds, 3, init, EstimatorConfig(max_iter=1)).params.beta
    half = fit_nr_em_q1(ds, 3, init, EstimatorConfig(max_iter=1, alpha=0.5)).params.beta
    np.testing.assert_allclose(half - init.params.beta, 0.5 * (full - init.params.beta),
                               rtol=1e-12, atol=1e-14)
    via_name = fit("nr_em_q1@0.5", ds, 3, init, EstimatorConfig(max_iter=1)).params.beta
    np.testing.assert_array_equal(via_name, half)


# -- MM ----------------------------------------------------------------------


def test_bohning_bound_dominates_q1_curvature():
    ds = small_problem(12, n_classes=4)
    bound = bohning_bound(4, ds.design)
    for seed in range(5):
        nu = class_probabilities(init_random(ds, 4, seed).params, ds)
        gap = bound + q1_hessian(nu, ds.design)  # B - (-H) must be PSD
        assert np.linalg.eigvalsh(gap).min() >= -1e-9


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_mm_monotone(seed):
    ds = small_problem(seed)
    res = fit_mm_em(ds, 3, init_random(ds, 3, seed), EstimatorConfig(max_iter=400))
    assert res.decay_count == 0


def test_mm_rank_deficient_design():
    ds = Dataset(np.zeros((5, 1), dtype=int), (2,), np.ones((5, 2)))
    with pytest.raises(SingularSystemError):
        fit_mm_em(ds, 2, init_random(ds, 2, 0))


# -- three-step --------------------------------------------------------------


def test_three_step_no_signal_slope():
    pi = (np.array([[0.85, 0.15], [0.15, 0.85]]),) * 6
    model = TrueModel(ModelParams(np.array([[0.3, 0.0]]), pi), (Normal(),))
    ds, _ = simulate(model, 4000, 2)
    res = fit_three_step_classical(ds, 2, init_random(ds, 2, 0))
    assert abs(res.params.beta[0, 1]) < 0.1
    assert len(res.loglik_trace) == 1
    stage1 = np.array(res.diagnostics["stage1_trace"])
    assert np.all(np.diff(stage1) >= -1e-9)


def test_three_step_below_one_step_maximum():
    ds = small_problem(13, n=300)
    init = init_random(ds, 3, 1)
    three = fit_three_step_classical(ds, 3, init)
    cfg = EstimatorConfig(max_iter=3000)
    best = max(fit_nested_em(ds, 3, init_random(ds, 3, s), cfg).loglik for s in range(5))
    assert three.loglik < best
    assert three.loglik == pytest.approx(log_likelihood(three.params, ds), abs=1e-10)


# -- cross-estimator invariants ----------------------------------------------


def _fd_score(params, ds, h=1e-5):
    out = np.zeros_like(params.beta)
    for idx in np.ndindex(*params.beta.shape):
        up, dn = params.beta.copy(), params.beta.copy()
        up[idx] += h
        dn[idx] -= h
        out[idx] = (log_likelihood(ModelParams(up, params.pi), ds)
                    - log_likelihood(ModelParams(dn, params.pi), ds)) / (2 * h)
    return out


def test_score_vanishes_at_convergence():
    ds = small_problem(14, n=200)
    init = init_random(ds, 3, 5)
    for name in ONE_STEP:
        try:
            res = fit(name, ds, 3, init)
        except SingularSystemError:
            continue
        if not res.converged or res.decay_count:
            continue
        assert np.abs(_fd_score(res.params, ds)).max() <= 1e-4 * (1 + abs(res.loglik)), name


def test_estimators_agree_on_separated_data():
    pi = tuple(np.array([[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]]) for _ in range(6))
    model = TrueModel(ModelParams(np.array([[0.5, 1.0], [0.2, -0.8]]), pi), (Normal(),))
    ds, _ = simulate(model, 600, 3)
    init = init_random(ds, 3, 0)
    results = []
    for name in ONE_STEP:
        try:
            results.append(fit(name, ds, 3, init, EstimatorConfig(alpha=1.0)))
        except SingularSystemError:
            pass
    clean = [r for r in results if r.decay_count == 0 and r.converged]
    assert len(clean) >= 3
    values = [r.loglik for r in clean]
    assert max(values) - min(values) < 1e-6


def test_fit_unknown_algorithm():
    ds = small_problem(1)
    with pytest.raises(DataError, match="unknown algorithm"):
        fit("simplex", ds, 3, init_random(ds, 3, 0))


def test_config_validation():
    for bad in ({"tol": 0}, {"alpha": 0}, {"alpha": 1.5}, {"epsilon": -1}):
        with pytest.raises(DataError):
            EstimatorConfig(**bad)
