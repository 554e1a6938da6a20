import math

import numpy as np
import pytest

from lfmkit.estim import ParamSpace, maximize, rw_metropolis


def test_param_space_validation():
    with pytest.raises(ValueError):
        ParamSpace(("a",), [0.0], [0.0], ("identity",))
    with pytest.raises(ValueError):
        ParamSpace(("a",), [-1.0], [1.0], ("log",))
    with pytest.raises(ValueError):
        ParamSpace(("a",), [0.0], [1.0], ("sqrt",))
    with pytest.raises(ValueError):
        ParamSpace(("a", "b"), [0.0], [1.0], ("identity",))


def test_transform_roundtrip():
    space = ParamSpace(("a", "b", "c"), [1e-6, -10.0, 0.0], [1e3, 10.0, math.inf],
                       ("log", "identity", "log"))
    rng = np.random.default_rng(0)
    for _ in range(100):
        theta = np.array([math.exp(rng.uniform(-10, 6)),
                          rng.uniform(-10, 10),
                          math.exp(rng.uniform(-5, 5))])
        back = space.to_natural(space.to_unconstrained(theta))
        np.testing.assert_allclose(back, theta, rtol=1e-12)


def test_maximize_quadratic_bowl():
    space = ParamSpace(("x",), [-math.inf], [math.inf], ("identity",))
    res = maximize(lambda th: -(th[0] - 2.0) ** 2, space, [0.0], budget=500)
    assert res.theta[0] == pytest.approx(2.0, abs=1e-4)
    assert res.converged
    assert not res.on_boundary


def test_maximize_boundary_clamp_and_flag():
    space = ParamSpace(("x",), [0.1], [10.0], ("log",))
    res = maximize(lambda th: -(th[0] - 20.0) ** 2, space, [5.0], budget=400)
    assert res.theta[0] == pytest.approx(10.0, rel=1e-6)
    assert res.on_boundary


def test_maximize_budget_exhaustion():
    space = ParamSpace(("x", "y"), [-10, -10], [10, 10], ("identity", "identity"))
    res = maximize(lambda th: -np.sum(th ** 2), space, [8.0, -7.0], budget=12)
    assert not res.converged
    assert res.n_evals <= 12
    assert np.isfinite(res.value)


def test_maximize_monotone_best_trace():
    space = ParamSpace(("x",), [-math.inf], [math.inf], ("identity",))
    res = maximize(lambda th: -abs(th[0] - 1.0), space, [4.0], budget=200)
    assert np.all(np.diff(res.best_trace) >= 0.0)


def test_maximize_rejects_out_of_bounds_start():
    space = ParamSpace(("x",), [0.0], [1.0], ("identity",))
    with pytest.raises(ValueError):
        maximize(lambda th: 0.0, space, [2.0])


def test_rwm_standard_normal_target():
    space = ParamSpace(("x",), [-math.inf], [math.inf], ("identity",))
    chain = rw_metropolis(lambda th: -0.5 * th[0] ** 2, space, [0.0],
                          n_samples=50_000, step_scales=[2.4], seed=1)
    kept = chain.post_burn()[:, 0]
    assert abs(np.mean(kept)) < 0.05
    assert 0.9 <= np.var(kept) <= 1.1
    assert 0.0 < chain.acceptance_rate < 1.0


def test_rwm_tiny_steps_accept_everything():
    space = ParamSpace(("x",), [-math.inf], [math.inf], ("identity",))
    chain = rw_metropolis(lambda th: -0.5 * th[0] ** 2, space, [0.3],
                          n_samples=2000, step_scales=[1e-6], seed=2)
    assert chain.acceptance_rate > 0.999


def test_rwm_deterministic_given_seed():
    space = ParamSpace(("x",), [0.0], [math.inf], ("log",))
    logp = lambda th: -0.5 * (math.log(th[0])) ** 2
    a = rw_metropolis(logp, space, [1.5], 500, [0.5], seed=77)
    b = rw_metropolis(logp, space, [1.5], 500, [0.5], seed=77)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.logposts, b.logposts)
    assert a.acceptance_rate == b.acceptance_rate


def test_rwm_requires_finite_start():
    space = ParamSpace(("x",), [-math.inf], [math.inf], ("identity",))
    with pytest.raises(ValueError):
        rw_metropolis(lambda th: -math.inf, space, [0.0], 10, [1.0], seed=0)


def test_rwm_detailed_balance_on_grid_target():
    # Step-constant 1-D target: bin the chain and compare i->j against j->i
    # transition counts, which detailed balance equates in stationarity.
    edges = np.linspace(-3.0, 3.0, 7)
    heights = np.array([0.2, 1.0, 2.0, 1.5, 0.7, 0.1])

    def logpost(th):
        x = th[0]
        if x <= edges[0] or x >= edges[-1]:
            return -math.inf
        return math.log(heights[np.searchsorted(edges, x) - 1])

    space = ParamSpace(("x",), [-math.inf], [math.inf], ("identity",))
    chain = rw_metropolis(logpost, space, [0.1], 100_000, [1.2], seed=3)
    xs = chain.samples[:, 0]
    bins = np.clip(np.searchsorted(edges, xs) - 1, 0, 5)
    counts = np.zeros((6, 6))
    for a, b in zip(bins[:-1], bins[1:]):
        counts[a, b] += 1
    for i in range(6):
        for j in range(i + 1, 6):
            total = counts[i, j] + counts[j, i]
            if total < 50:
                continue
            diff = abs(counts[i, j] - counts[j, i])
            assert diff <= 3.0 * math.sqrt(total)


def test_chain_summary_and_csv(tmp_path):
    space = ParamSpace(("rate", "scale"), [0.0, 0.0], [math.inf, math.inf],
                       ("log", "log"))
    logp = lambda th: -0.5 * np.sum(np.log(th) ** 2)
    chain = rw_metropolis(logp, space, [1.0, 2.0], 200, [0.4, 0.4], seed=5)
    summ = chain.summary()
    assert set(summ["params"]) == {"rate", "scale"}
    assert summ["n_samples"] == 200
    path = tmp_path / "chain.csv"
    chain.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,logpost,rate,scale"
    assert len(lines) == 201
    jpath = tmp_path / "summary.json"
    chain.summary_json(jpath)
    import json
    assert json.loads(jpath.read_text())["n_samples"] == 200
