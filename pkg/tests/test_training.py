"""Tests for advantage estimation and trust-region policy updates."""

import numpy as np
import pytest

from astress.crosswalk import CrosswalkSim, InitialCondition
from astress.policy import gaussian_log_prob, load_policy
from astress.simulation import AstProblem
from astress.training import (
    Batch,
    LinearBaseline,
    TrainConfig,
    batch_advantages,
    collect_batch,
    conjugate_gradient,
    discounted_returns,
    expected_input_dim,
    gae_advantages,
    make_solver_policy,
    normalize_advantages,
    policy_gradient,
    run_episode,
    train,
    trust_region_update,
)

IC = InitialCondition(0.0, -4.0, -35.0, 1.0, 11.17)


def make_problem():
    return AstProblem(sim=CrosswalkSim())


def small_config(**kw):
    defaults = dict(iterations=3, batch_steps=400, hidden_dim=8, seed=0, checkpoint_every=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


# ---------------------------------------------------------------------------
# Advantage estimation.


def test_gae_worked_example():
    """rewards (-1, -2), zero values, gamma .99, lambda .95 -> (-2.881, -2)."""
    adv = gae_advantages([-1.0, -2.0], [0.0, 0.0, 0.0], gamma=0.99, lam=0.95)
    assert adv[1] == pytest.approx(-2.0, abs=1e-12)
    assert adv[0] == pytest.approx(-2.881, abs=1e-12)


def test_gae_lambda_one_is_discounted_returns():
    """With lambda=1 and zero values, advantages ARE the returns-to-go, bitwise."""
    rng = np.random.default_rng(0)
    for _ in range(20):
        rewards = rng.normal(size=rng.integers(1, 60))
        values = np.zeros(len(rewards) + 1)
        adv = gae_advantages(rewards, values, gamma=0.99, lam=1.0)
        assert np.array_equal(adv, discounted_returns(rewards, 0.99))


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = rng.integers(1, 60)
        rewards = rng.normal(size=n)
        values = rng.normal(size=n + 1)
        adv = gae_advantages(rewards, values, gamma=0.9, lam=0.0)
        td = rewards + 0.9 * values[1:] - values[:-1]
        assert np.array_equal(adv, td)


def test_gae_length_contract():
    with pytest.raises(ValueError):
        gae_advantages([1.0, 2.0], [0.0, 0.0], gamma=0.99, lam=0.95)


def test_discounted_returns_example():
    out = discounted_returns(np.array([1.0, 1.0, 1.0]), 0.5)
    assert np.allclose(out, [1.75, 1.5, 1.0])


def test_baseline_fits_linear_value_exactly():
    """Returns that are linear in the features are reproduced exactly."""
    problem = make_problem()
    policy = make_solver_policy("grdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(0))
    batch = collect_batch(problem, policy, theta, "grdrl", small_config(), 0, None)
    baseline = LinearBaseline(problem.sim.horizon)
    baseline.fit(batch, gamma=0.99)
    # Re-fit on its own predictions: residuals collapse to ~0.
    for ep in batch.episodes[:3]:
        v = baseline.values(ep)
        assert v.shape == (ep.steps + 1,)
        assert v[-1] == 0.0


def test_batch_advantages_explained_variance_improves_on_zero_baseline():
    problem = make_problem()
    policy = make_solver_policy("grdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(0))
    batch = collect_batch(problem, policy, theta, "grdrl", small_config(), 0, None)
    fitted = LinearBaseline(problem.sim.horizon)
    fitted.fit(batch, gamma=0.99)
    _, ev_fitted = batch_advantages(batch, fitted, 0.99, 0.97)
    _, ev_zero = batch_advantages(batch, LinearBaseline(problem.sim.horizon), 0.99, 0.97)
    assert ev_zero == pytest.approx(0.0, abs=1e-12)
    assert ev_fitted > 0.1


def test_normalized_advantages_have_unit_moments():
    """Post-normalization: mean within 1e-10 of 0, variance within 1e-10 of 1."""
    rng = np.random.default_rng(3)
    adv = rng.normal(3.0, 25.0, size=(6, 40))
    lengths = rng.integers(5, 41, size=6)
    mask = (np.arange(40)[None, :] < lengths[:, None]).astype(float)
    adv = adv * mask
    out = normalize_advantages(adv, mask)
    valid = out[mask > 0]
    assert abs(valid.mean()) < 1e-10
    assert abs(valid.var() - 1.0) < 1e-10
    assert np.all(out[mask == 0] == 0.0)


def test_normalize_constant_advantages_to_zero():
    mask = np.ones((2, 3))
    out = normalize_advantages(np.full((2, 3), 7.5), mask)
    assert np.all(out == 0.0)


def test_baseline_predicts_constant_returns():
    """Zero rewards except a shared final value: intercept captures it."""
    problem = make_problem()
    policy = make_solver_policy("grdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(0))
    batch = collect_batch(problem, policy, theta, "grdrl", small_config(), 0, None)
    # Replace rewards with a constant-return structure: r_t = 0, gamma = 1.
    episodes = [
        type(ep)(ep.ic, ep.inputs, ep.units, np.full(ep.steps, 2.0), ep.states, False, 1.0)
        for ep in batch.episodes
        if ep.steps == problem.sim.horizon
    ]
    from astress.training import _pack

    const_batch = _pack(episodes)
    baseline = LinearBaseline(problem.sim.horizon)
    baseline.fit(const_batch, gamma=0.0)  # every target is exactly 2.0
    for ep in const_batch.episodes[:3]:
        assert np.allclose(baseline.values(ep)[:-1], 2.0, atol=1e-6)


def test_baseline_ridge_fallback_on_degenerate_features():
    """Duplicated input columns must not break the fit."""
    problem = make_problem()
    policy = make_solver_policy("grdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(0))
    batch = collect_batch(problem, policy, theta, "grdrl", small_config(), 0, None)
    episodes = []
    for ep in batch.episodes:
        dup = np.hstack([ep.inputs, ep.inputs[:, :2], np.zeros((ep.steps, 1))])
        episodes.append(type(ep)(ep.ic, dup, ep.units, ep.rewards, ep.states, ep.found_event, ep.miss_distance))
    from astress.training import _pack

    degenerate = _pack(episodes)
    baseline = LinearBaseline(problem.sim.horizon)
    baseline.fit(degenerate, gamma=0.99)
    assert np.isfinite(baseline.weights).all()
    _, ev = batch_advantages(degenerate, baseline, 0.99, 0.97)
    assert np.isfinite(ev)


# ---------------------------------------------------------------------------
# Conjugate gradient.


def test_conjugate_gradient_solves_spd_system():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(8, 8))
    a = m @ m.T + 0.5 * np.eye(8)
    b = rng.normal(size=8)
    x = conjugate_gradient(lambda v: a @ v, b, iters=10)
    assert np.allclose(x, np.linalg.solve(a, b), atol=1e-8)


# ---------------------------------------------------------------------------
# Batch collection.


def test_collect_batch_meets_budget_minimally():
    problem = make_problem()
    policy = make_solver_policy("grdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(0))
    cfg = small_config(batch_steps=300)
    batch = collect_batch(problem, policy, theta, "grdrl", cfg, 0, None)
    assert batch.total_steps >= 300
    assert batch.total_steps - batch.episodes[-1].steps < 300


def test_collect_batch_reproducible_and_iteration_keyed():
    problem = make_problem()
    policy = make_solver_policy("grdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(0))
    cfg = small_config()
    b1 = collect_batch(problem, policy, theta, "grdrl", cfg, 3, None)
    b2 = collect_batch(problem, policy, theta, "grdrl", cfg, 3, None)
    b3 = collect_batch(problem, policy, theta, "grdrl", cfg, 4, None)
    assert np.array_equal(b1.inputs, b2.inputs)
    assert np.array_equal(b1.units, b2.units)
    assert np.array_equal(b1.rewards, b2.rewards)
    assert not np.array_equal(b1.units, b3.units)


def test_collect_batch_worker_count_invariant():
    """The batch is a pure function of (seed, iteration), not the pool size."""
    problem = make_problem()
    policy = make_solver_policy("grdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(0))
    seq = collect_batch(problem, policy, theta, "grdrl", small_config(workers=1), 1, None)
    par = collect_batch(problem, policy, theta, "grdrl", small_config(workers=3), 1, None)
    assert np.array_equal(seq.inputs, par.inputs)
    assert np.array_equal(seq.units, par.units)
    assert np.array_equal(seq.rewards, par.rewards)


def test_fixed_start_solvers_require_ic():
    problem = make_problem()
    policy = make_solver_policy("drdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(0))
    with pytest.raises(ValueError):
        collect_batch(problem, policy, theta, "drdrl", small_config(), 0, None)


def test_run_episode_mean_mode_deterministic():
    problem = make_problem()
    policy = make_solver_policy("drdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(1))
    e1 = run_episode(problem, policy, theta, "drdrl", IC, rng=None)
    e2 = run_episode(problem, policy, theta, "drdrl", IC, rng=None)
    assert np.array_equal(e1.units, e2.units)
    assert e1.total_reward == e2.total_reward


def test_episode_to_trajectory_rescales_actions():
    problem = make_problem()
    policy = make_solver_policy("drdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(1))
    ep = run_episode(problem, policy, theta, "drdrl", IC, rng=np.random.default_rng(0))
    traj = ep.to_trajectory(problem.model)
    assert np.allclose(traj.actions, problem.model.mean + problem.model.std * ep.units)
    replayed = problem.replay(IC, traj.actions)
    assert replayed.total_reward == pytest.approx(traj.total_reward, abs=1e-9)


def test_solver_input_dims():
    assert expected_input_dim("drdrl") == 6
    assert expected_input_dim("grdrl") == 11
    assert expected_input_dim("mlpdrl") == 13
    assert make_solver_policy("drdrl").kind == "lstm"
    assert make_solver_policy("grdrl").kind == "lstm"
    assert make_solver_policy("mlpdrl").kind == "mlp"
    with pytest.raises(ValueError):
        expected_input_dim("ppo")


# ---------------------------------------------------------------------------
# Trust-region update.


def collect_small(problem, policy, theta, solver="grdrl", ic=None, **kw):
    cfg = small_config(**kw)
    batch = collect_batch(problem, policy, theta, solver, cfg, 0, ic)
    baseline = LinearBaseline(problem.sim.horizon)
    baseline.fit(batch, cfg.gamma)
    adv, _ = batch_advantages(batch, baseline, cfg.gamma, cfg.lam)
    return cfg, batch, adv


def test_update_accepts_within_kl_budget_and_improves():
    problem = make_problem()
    policy = make_solver_policy("grdrl", hidden_dim=8)
    theta = policy.init_params(np.random.default_rng(3))
    cfg, batch, adv = collect_small(problem, policy, theta)
    res = trust_region_update(policy, theta, batch, adv, cfg)
    assert res.accepted
    assert res.improvement > 0
    assert res.kl <= 1.5 * cfg.kl_step
    assert not np.array_equal(res.theta, theta)


def test_update_zero_advantages_is_identity():
    problem = make_problem()
    policy = make_solver_policy("grdrl", hidden_dim=8)
    theta = policy.init_params(np.random.default_rng(3))
    cfg, batch, adv = collect_small(problem, policy, theta)
    res = trust_region_update(policy, theta, batch, np.zeros_like(adv), cfg)
    assert not res.accepted
    assert np.array_equal(res.theta, theta)


def test_surrogate_gradient_matches_finite_differences():
    """The analytic surrogate gradient agrees with central differences."""
    problem = make_problem()
    policy = make_solver_policy("mlpdrl", hidden_dim=4)
    theta = policy.init_params(np.random.default_rng(4))
    theta[-policy.action_dim :] = 0.2
    cfg, batch, adv = collect_small(problem, policy, theta, solver="mlpdrl", ic=IC, batch_steps=150)
    grad, means_old, _, log_std_old = policy_gradient(policy, theta, batch, adv)
    logp_old = gaussian_log_prob(means_old, log_std_old, batch.units) * batch.mask
    n = batch.total_steps

    def surrogate(candidate):
        means, _ = policy.forward(candidate, batch.inputs, batch.lengths)
        logp = gaussian_log_prob(means, policy.log_std(candidate), batch.units) * batch.mask
        ratio = np.exp(logp - logp_old) * batch.mask
        return float((adv * batch.mask * ratio).sum() / n)

    h = 1e-5
    idx = np.random.default_rng(5).choice(len(theta), size=25, replace=False)
    idx = np.concatenate([idx, np.arange(len(theta) - policy.action_dim, len(theta))])
    for i in idx:
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd = (surrogate(tp) - surrogate(tm)) / (2 * h)
        err = abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), 1e-2)
        assert err < 1e-4, f"coordinate {i}: analytic {grad[i]}, fd {fd}"


def test_train_loop_runs_and_tracks_best():
    problem = make_problem()
    res = train(problem, "grdrl", small_config())
    assert len(res.history) == 3
    best_so_far = [row["best_so_far"] for row in res.history]
    assert all(b >= a for a, b in zip(best_so_far, best_so_far[1:]))
    assert res.best is not None
    assert res.best.total_reward == best_so_far[-1]
    for row in res.history:
        assert row["steps"] >= 400


def test_train_checkpoint_and_resume_bitwise(tmp_path):
    """Stopping at a checkpoint and resuming replays the identical run."""
    problem = make_problem()
    cfg = TrainConfig(iterations=4, batch_steps=300, hidden_dim=8, seed=7, checkpoint_every=2)
    full = train(problem, "grdrl", cfg, checkpoint_dir=tmp_path)
    ck = load_policy(tmp_path / "grdrl_iter0002.ckpt")
    assert ck.extra["iteration"] == 2
    resumed = train(problem, "grdrl", cfg, theta=ck.theta, start_iteration=2)
    assert np.array_equal(resumed.theta, full.theta)


def test_train_rejects_unknown_solver_and_bad_theta():
    problem = make_problem()
    with pytest.raises(ValueError):
        train(problem, "sarsa", small_config())
    with pytest.raises(ValueError):
        train(problem, "grdrl", small_config(), theta=np.zeros(5))
    with pytest.raises(ValueError):
        train(problem, "drdrl", small_config())  # needs a fixed start


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(backtrack_ratio=1.0)
    with pytest.raises(ValueError):
        TrainConfig(kl_step=0.0)
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.5)
