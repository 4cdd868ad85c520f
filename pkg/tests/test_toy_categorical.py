import numpy as np
import pytest

from tod_reward.toy_categorical import (
    EXACT,
    GUMBEL,
    LINKS,
    REINFORCE,
    ToyConfig,
    exact_grad,
    exact_objective,
    grad_variance_estimate,
    gs_step,
    gumbel_relaxed_grads,
    gumbel_relaxed_objective,
    probs_from_psi,
    reinforce_grads,
    reinforce_step,
    run_toy,
    toy_reward,
)

D = R = 30


def test_toy_reward_values():
    assert toy_reward(30, 30, 30) == pytest.approx(0.5 + 30 / 900, abs=1e-15)
    assert round(toy_reward(30, 30, 30), 3) == 0.533
    assert toy_reward(1, 30, 30) == pytest.approx(0.5011111111111111, abs=1e-15)
    assert toy_reward(2, 2, 1) == 1.5
    with pytest.raises(ValueError):
        toy_reward(0, 30, 30)
    with pytest.raises(ValueError):
        toy_reward(31, 30, 30)


@pytest.mark.parametrize("link", LINKS)
def test_probs_from_psi(link):
    np.testing.assert_allclose(probs_from_psi(np.zeros(D), link), np.full(D, 1 / D), atol=1e-15)
    psi = np.full(D, -30.0)
    psi[-1] = 30.0
    assert probs_from_psi(psi, link)[-1] >= 1 - 1e-9
    rng = np.random.default_rng(0)
    for _ in range(100):
        psi = rng.normal(scale=3, size=D)
        perm = rng.permutation(D)
        p = probs_from_psi(psi, link)
        np.testing.assert_allclose(probs_from_psi(psi[perm], link), p[perm], atol=1e-15)
        assert abs(p.sum() - 1) <= 1e-12 and np.all(p > 0)


@pytest.mark.parametrize("link", LINKS)
def test_exact_objective(link):
    assert exact_objective(np.zeros(D), D, R, link) == pytest.approx(0.5 + 31 / 1800, abs=1e-15)
    psi = np.full(D, -30.0)
    psi[-1] = 30.0
    assert exact_objective(psi, D, R, link) == pytest.approx(0.5 + 1 / 30, abs=1e-9)
    g = exact_grad(np.zeros(D), D, R, link)
    assert g[-1] > 0 and g[0] < 0


@pytest.mark.parametrize("link", LINKS)
def test_exact_grad_matches_finite_differences(link):
    rng = np.random.default_rng(1)
    h = 1e-5
    for _ in range(100):
        psi = rng.normal(scale=2, size=D)
        num = np.empty(D)
        for i in range(D):
            e = np.zeros(D)
            e[i] = h
            num[i] = (exact_objective(psi + e, D, R, link) - exact_objective(psi - e, D, R, link)) / (2 * h)
        ana = exact_grad(psi, D, R, link)
        # finite differences of an O(0.5) objective carry ~1e-11 roundoff
        assert np.max(np.abs(ana - num) / np.maximum(1.0, np.abs(num))) <= 1e-8


@pytest.mark.parametrize("link", LINKS)
def test_reinforce_unbiased_at_zero(link):
    cfg = ToyConfig(link=link)
    rng = np.random.default_rng(2)
    g = reinforce_grads(np.zeros(D), cfg, rng, n=100_000)
    se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0) - exact_grad(np.zeros(D), D, R, link)) <= 3 * se)


def test_reinforce_constant_reward_has_zero_mean():
    cfg = ToyConfig()
    rng = np.random.default_rng(3)
    psi = rng.normal(size=D)
    g = reinforce_grads(psi, cfg, rng, n=100_000, f=np.full(D, 0.7))
    se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0)) <= 3 * se)


@pytest.mark.parametrize("link", LINKS)
@pytest.mark.parametrize("lam", [1.0, 0.5])
def test_gs_grad_matches_finite_differences(link, lam):
    cfg = ToyConfig(link=link, temperature=lam)
    rng = np.random.default_rng(4)
    h = 1e-5
    for _ in range(20):
        psi = rng.normal(size=D)
        eps = rng.gumbel(size=D)
        ana = gumbel_relaxed_grads(psi, cfg, eps)[0]
        num = np.empty(D)
        for i in range(D):
            e = np.zeros(D)
            e[i] = h
            num[i] = (gumbel_relaxed_objective(psi + e, cfg, eps) - gumbel_relaxed_objective(psi - e, cfg, eps)) / (2 * h)
        assert np.max(np.abs(ana - num) / np.maximum(1.0, np.abs(num))) <= 1e-6


def test_steps_ascend_with_lr():
    cfg = ToyConfig(lr=0.5)
    psi = np.zeros(D)
    new, g = reinforce_step(psi, cfg, np.random.default_rng(5))
    np.testing.assert_allclose(new, 0.5 * g)
    new, g = gs_step(psi, cfg, np.random.default_rng(5))
    np.testing.assert_allclose(new, 0.5 * g)


def test_variance_estimates_at_init():
    cfg = ToyConfig()
    psi = np.zeros(D)
    assert grad_variance_estimate(psi, EXACT, 500, cfg, np.random.default_rng(0)) == 0.0
    v_rf = grad_variance_estimate(psi, REINFORCE, 500, cfg, np.random.default_rng(0))
    v_gs = grad_variance_estimate(psi, GUMBEL, 500, cfg, np.random.default_rng(0))
    assert 1e-3 <= v_rf <= 1e-1
    assert v_gs <= 1e-5
    assert v_rf / v_gs >= 1e3
    with pytest.raises(ValueError):
        grad_variance_estimate(psi, GUMBEL, 1, cfg, np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ValueError):
        ToyConfig(D=1)
    with pytest.raises(ValueError):
        ToyConfig(temperature=0)
    with pytest.raises(ValueError):
        ToyConfig(estimator="straight_through")


@pytest.mark.parametrize("estimator", [EXACT, REINFORCE, GUMBEL])
def test_run_toy_objective_in_range_and_deterministic(estimator):
    cfg = ToyConfig(estimator=estimator, steps=400, seed=11, variance_samples=50)
    a = run_toy(cfg)
    b = run_toy(cfg)
    assert a.trace_csv() == b.trace_csv()
    assert a.probs_csv() == b.probs_csv()
    obj = np.array(a.objective)
    assert np.all(obj >= 0.5 + 1 / 900) and np.all(obj <= 0.5 + 1 / 30)
    assert len(obj) == cfg.steps + 1
    assert sorted(a.probs) == [0, 100, 200, 300, 400]


def test_variance_tracking_does_not_perturb_path():
    cfg = ToyConfig(estimator=REINFORCE, steps=300, seed=3)
    assert run_toy(cfg).objective == run_toy(cfg, track_variance=False).objective


def test_exact_run_climbs():
    tr = run_toy(ToyConfig(estimator=EXACT, steps=5000))
    assert tr.final_objective >= 0.532
    assert np.all(np.diff(tr.objective) > 0)


def test_trace_csv_header():
    tr = run_toy(ToyConfig(steps=3, record_every=2, variance_samples=10))
    lines = tr.trace_csv().splitlines()
    assert lines[0] == "step,objective,grad_first,grad_last,variance"
    assert len(lines) == 5
    assert lines[2].endswith(",")  # no variance at step 1
    assert tr.probs_csv().splitlines()[0].startswith("step,p1,p2")
