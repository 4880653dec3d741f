"""Acceptance gate: end-to-end checks at stated tolerances.

Each test prints one [PASS]/[FAIL] line naming its criterion (visible under
pytest -s). The training-based criteria run desk-scale budgets and dominate
the suite's runtime; everything else finishes in seconds.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest
import scipy.stats

from astress.actions import ACTION_DIM, ActionModel, mahalanobis
from astress.config import parse_config
from astress.crosswalk import IC_FIELDS, IC_HIGH, IC_LOW, CrosswalkSim
from astress.harness import BinGrid, emit_results, run_experiment
from astress.mcts import DiscreteActionSource, MctsConfig, search
from astress.policy import LstmPolicy, MlpPolicy, gaussian_log_prob
from astress.records import read_records, verify_record
from astress.reward import RewardSpec, step_reward
from astress.simulation import AstProblem, sampling_controller
from astress.training import (
    LinearBaseline,
    TrainConfig,
    batch_advantages,
    collect_batch,
    discounted_returns,
    gae_advantages,
    make_solver_policy,
    normalize_advantages,
    train,
    trust_region_update,
)

from toy_mdp import random_chain_problem


@contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {number}: {description}")
        raise
    print(f"[PASS] criterion {number}: {description}")


def make_problem():
    return AstProblem(sim=CrosswalkSim())


# Matched-budget comparison scales for criterion 9 (pilot-tuned, frozen).
# grdrl trains once on C9_ITER iterations x (32 * C9_DRDRL_BATCH) steps;
# drdrl trains per bin on C9_ITER iterations x C9_DRDRL_BATCH steps, 32 bins.
# Total simulation budget is identical; hidden size is shared.
C9_ITER = 30
C9_DRDRL_BATCH = 200
C9_HIDDEN = 32


# ---------------------------------------------------------------------------
# 1. Determinism and replay fidelity.

TINY_RUN = """
[experiment]
solvers = mcts drdrl grdrl
eval_samples = 4
[grid]
bins_per_dim = 1
[mcts]
iterations = 30
[drdrl]
iterations = 2
batch_steps = 150
hidden_dim = 8
checkpoint_every = 0
[grdrl]
iterations = 2
batch_steps = 200
hidden_dim = 8
checkpoint_every = 0
"""


def test_criterion_1_replay_determinism(tmp_path):
    with criterion(1, "1000 random replays are bit-identical; persisted records replay exactly"):
        problem = make_problem()
        # Inflated disturbance scale so episode lengths vary and some collide.
        rough = ActionModel(covariance_diag=np.array([4.0, 4.0, 0.25, 0.25, 0.25, 0.25]))
        rng = np.random.default_rng(2024)
        start = time.monotonic()
        collided = 0
        for _ in range(1000):
            ic = problem.sim.sample_initial_condition(rng)
            original = problem.rollout(ic, sampling_controller(rough, rng))
            a = problem.replay(ic, original.actions)
            b = problem.replay(ic, original.actions)
            for replayed in (a, b):
                assert replayed.found_event == original.found_event
                assert replayed.total_reward == original.total_reward
                assert np.array_equal(replayed.rewards, original.rewards)
                assert replayed.states[-1] == original.states[-1]
            collided += original.found_event
        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"1000 replay pairs took {elapsed:.1f}s"
        assert collided > 0, "perturbation scale never produced an event episode"

        result = run_experiment(parse_config(TINY_RUN), seed=0)
        emit_results(result, tmp_path)
        checked = 0
        for path in sorted(tmp_path.glob("trajectories_*.jsonl")):
            for record in read_records(path):
                ok, _ = verify_record(problem, record)
                assert ok, f"{path.name}: record {record['solver']}/{record['bin']} drifted"
                checked += 1
        assert checked >= 4, "experiment persisted fewer trajectory records than solver rows"


# ---------------------------------------------------------------------------
# 2. Mahalanobis oracle.


def test_criterion_2_mahalanobis_oracle():
    with criterion(2, "1e4 Mahalanobis evaluations match the matrix-inverse oracle to 1e-12"):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(10_000):
            mean = rng.normal(size=ACTION_DIM)
            diag = rng.uniform(0.01, 4.0, size=ACTION_DIM)
            model = ActionModel(mean=mean, covariance_diag=diag)
            action = rng.normal(size=ACTION_DIM) * 3.0
            got = mahalanobis(action, model)
            delta = action - mean
            oracle = float(np.sqrt(delta @ np.linalg.inv(np.diag(diag)) @ delta))
            rel = abs(got - oracle) / max(oracle, 1e-300)
            worst = max(worst, rel)
        assert worst < 1e-12, f"worst relative error {worst:.3e}"


# ---------------------------------------------------------------------------
# 3. Reward branches.


def test_criterion_3_reward_branches():
    with criterion(3, "all three reward branches verified, including horizon distances 0, 1, 3"):
        spec = RewardSpec()
        model = ActionModel()
        zero = np.zeros(ACTION_DIM)

        assert step_reward(spec, model, zero, found_event=True, at_horizon=False) == 0.0
        assert step_reward(spec, model, zero, found_event=True, at_horizon=True) == 0.0

        for dist, expected in ((0.0, -1.0e5), (1.0, -1.1e5), (3.0, -1.3e5)):
            got = step_reward(
                spec, model, zero, found_event=False, at_horizon=True, miss_distance=dist
            )
            assert got == expected, (dist, got)

        action = zero.copy()
        action[0] = 2.0
        mid = step_reward(spec, model, action, found_event=False, at_horizon=False)
        assert mid == -2.0
        assert mid == -mahalanobis(action, model)


# ---------------------------------------------------------------------------
# 4. Gradient oracle for both architectures and both objectives.


def _fd_worst(loss, theta, grad, coords, h=1e-5):
    worst = 0.0
    for j in coords:
        up = theta.copy()
        up[j] += h
        down = theta.copy()
        down[j] -= h
        fd = (loss(up) - loss(down)) / (2.0 * h)
        rel = abs(grad[j] - fd) / max(abs(grad[j]), abs(fd), 1e-3)
        worst = max(worst, rel)
    return worst


def test_criterion_4_gradient_oracle():
    with criterion(4, ">= 20 random small policies pass BPTT finite-difference checks at 1e-4"):
        start = time.monotonic()
        rng = np.random.default_rng(11)
        for case in range(24):
            hidden = int(rng.integers(2, 9))
            d = int(rng.integers(2, 7))
            T = int(rng.integers(2, 11))
            B = int(rng.integers(1, 4))
            a_dim = int(rng.integers(1, 5))
            cls = LstmPolicy if case % 2 == 0 else MlpPolicy
            policy = cls(d, hidden, a_dim)
            theta = policy.init_params(rng) + rng.normal(scale=0.05, size=policy.param_count)
            inputs = rng.normal(size=(B, T, d))
            lengths = rng.integers(1, T + 1, size=B)
            mask = (np.arange(T)[None, :] < lengths[:, None]).astype(float)
            units = rng.normal(size=(B, T, a_dim)) * mask[:, :, None]
            advantages = rng.normal(size=(B, T)) * mask
            n = mask.sum()

            means, cache = policy.forward(theta, inputs, lengths)
            log_std = policy.log_std(theta)
            sigma = np.exp(log_std)
            dmean_logp = (units - means) / sigma**2 * mask[:, :, None]
            resid = (units - means) / sigma

            coords = rng.choice(policy.param_count - a_dim, size=12, replace=False)
            coords = np.concatenate(
                [coords, np.arange(policy.param_count - a_dim, policy.param_count)]
            )

            def logp_loss(th):
                m, _ = policy.forward(th, inputs, lengths)
                return float((gaussian_log_prob(m, policy.log_std(th), units) * mask).sum())

            grad = policy.vjp(cache, dmean_logp)
            grad[-a_dim:] = ((resid**2 - 1.0) * mask[:, :, None]).sum(axis=(0, 1))
            worst = _fd_worst(logp_loss, theta, grad, coords)
            assert worst < 1e-4, f"case {case} ({policy.kind}) logp gradient off by {worst:.2e}"

            def surrogate_loss(th):
                m, _ = policy.forward(th, inputs, lengths)
                logp = gaussian_log_prob(m, policy.log_std(th), units) * mask
                return float((logp * advantages).sum() / n)

            weight = (advantages / n)[:, :, None]
            grad = policy.vjp(cache, dmean_logp * weight)
            grad[-a_dim:] = ((resid**2 - 1.0) * weight * mask[:, :, None]).sum(axis=(0, 1))
            worst = _fd_worst(surrogate_loss, theta, grad, coords)
            assert worst < 1e-4, f"case {case} ({policy.kind}) surrogate gradient off by {worst:.2e}"
        elapsed = time.monotonic() - start
        assert elapsed < 120.0, f"gradient oracle took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 5. Advantage-estimator identities.


def test_criterion_5_gae_identities():
    with criterion(5, "GAE lambda=0 equals TD residuals and lambda=1 equals returns on 100 sequences"):
        rng = np.random.default_rng(13)
        for _ in range(100):
            n = int(rng.integers(1, 80))
            rewards = rng.normal(scale=5.0, size=n)
            gamma = float(rng.uniform(0.5, 1.0))

            values = rng.normal(size=n + 1)
            adv0 = gae_advantages(rewards, values, gamma=gamma, lam=0.0)
            td = rewards + gamma * values[1:] - values[:-1]
            assert np.array_equal(adv0, td)

            adv1 = gae_advantages(rewards, np.zeros(n + 1), gamma=gamma, lam=1.0)
            assert np.array_equal(adv1, discounted_returns(rewards, gamma))


# ---------------------------------------------------------------------------
# 6. Trust-region contract over a 50-iteration desk-scale run.


def test_criterion_6_trust_region_contract():
    with criterion(6, "accepted updates obey KL <= 1.5*step with positive improvement; rejections freeze theta"):
        problem = make_problem()
        config = TrainConfig(
            iterations=50, batch_steps=10_000, hidden_dim=32, seed=3, checkpoint_every=0
        )
        policy = make_solver_policy("grdrl", config.hidden_dim)
        theta = policy.init_params(
            np.random.default_rng(np.random.SeedSequence((config.seed, 0x1A17)))
        )
        baseline = LinearBaseline(problem.sim.horizon)
        accepted = 0
        for iteration in range(config.iterations):
            batch = collect_batch(problem, policy, theta, "grdrl", config, iteration, None)
            baseline.fit(batch, config.gamma)
            advantages, _ = batch_advantages(batch, baseline, config.gamma, config.lam)
            advantages = normalize_advantages(advantages, batch.mask)
            update = trust_region_update(policy, theta, batch, advantages, config)
            if update.accepted:
                accepted += 1
                assert update.kl <= 1.5 * config.kl_step, (iteration, update.kl)
                assert update.improvement > 0.0, (iteration, update.improvement)
            else:
                assert np.array_equal(update.theta, theta), f"rejection moved theta at {iteration}"
                assert update.theta.tobytes() == theta.tobytes()
            theta = update.theta
        assert accepted >= 1, "no update was ever accepted in 50 iterations"


# ---------------------------------------------------------------------------
# 7. Tree search against brute force on an enumerable MDP.


def test_criterion_7_mcts_oracle():
    with criterion(7, "budget-1e4 tree search recovers the brute-force optimum of 27-leaf MDPs exactly"):
        for seed in (0, 1, 2):
            problem, best_seq, best_value = random_chain_problem(
                np.random.default_rng(seed), n_actions=3, horizon=3
            )
            source = DiscreteActionSource([np.array([float(i)]) for i in range(3)])
            config = MctsConfig(iterations=10_000, exploration=5.0, k_action=3.0, alpha_action=0.0)
            result = search(problem, (), config, np.random.default_rng(seed + 100), source=source)
            got = tuple(int(a[0]) for a in result.best.actions)
            assert got == best_seq, (seed, got, best_seq)
            assert result.best.total_reward == pytest.approx(best_value, abs=1e-12)


# ---------------------------------------------------------------------------
# 8. Desk-scale end-to-end training, three seeds.


def _zero_action_baseline(problem) -> float:
    """Best zero-disturbance total reward over a dense start-state sample."""
    best = -np.inf
    rng = np.random.default_rng(99)
    starts = [b.center for b in BinGrid(3).bins]
    starts += [problem.sim.sample_initial_condition(rng) for _ in range(500)]
    zeros = np.zeros((problem.sim.horizon, ACTION_DIM))
    for ic in starts:
        t = problem.replay(ic, zeros)
        assert not t.found_event, "zero-disturbance rollout collided"
        best = max(best, t.total_reward)
    return best


def test_criterion_8_desk_scale_grdrl():
    with criterion(8, "3 desk-scale grdrl seeds each find collisions and beat the zero-action baseline"):
        problem = make_problem()
        floor = _zero_action_baseline(problem)
        assert floor < -1.0e5
        for seed in (0, 1, 2):
            config = TrainConfig(
                iterations=100, batch_steps=10_000, hidden_dim=64, seed=seed, checkpoint_every=0
            )
            start = time.monotonic()
            result = train(problem, "grdrl", config)
            elapsed = time.monotonic() - start
            assert elapsed < 1800.0, f"seed {seed} took {elapsed:.0f}s"

            collisions = sum(row["collisions"] for row in result.history)
            assert collisions >= 1, f"seed {seed} found no collision episode"
            assert result.best.found_event, f"seed {seed} best trajectory has no event"

            trace = [row["best_so_far"] for row in result.history]
            assert trace == sorted(trace), f"seed {seed} best-so-far trace decreased"
            assert trace[-1] > floor, f"seed {seed} final {trace[-1]:.2f} <= baseline {floor:.2f}"
            print(
                f"  seed {seed}: {elapsed:.0f}s, {collisions} collision episodes, "
                f"final best {trace[-1]:.2f} vs zero-action {floor:.2f}"
            )


# ---------------------------------------------------------------------------
# 9. Qualitative ordering: generalized beats per-bin at matched budgets.


def test_criterion_9_grdrl_dominates_drdrl():
    with criterion(9, "grdrl bin evaluation matches or beats drdrl on both metrics in >= 2 of 3 seeds"):
        text = f"""
[experiment]
solvers = drdrl grdrl
eval_samples = 100
[grid]
bins_per_dim = 2
[drdrl]
iterations = {C9_ITER}
batch_steps = {C9_DRDRL_BATCH}
hidden_dim = {C9_HIDDEN}
checkpoint_every = 0
[grdrl]
iterations = {C9_ITER}
batch_steps = {32 * C9_DRDRL_BATCH}
hidden_dim = {C9_HIDDEN}
checkpoint_every = 0
"""
        config = parse_config(text)
        wins = 0
        for seed in (0, 1, 2):
            report = run_experiment(config, seed).report
            d = report.summary("drdrl")
            g = report.summary("grdrl_bin")
            d_max = d.max_collision_reward if d.collisions_found else -np.inf
            g_max = g.max_collision_reward if g.collisions_found else -np.inf
            ok = g.collision_percentage >= d.collision_percentage and g_max >= d_max
            wins += ok
            print(
                f"  seed {seed}: drdrl {d.collisions_found}/32 max {d_max:.2f} | "
                f"grdrl_bin {g.collisions_found}/32 max {g_max:.2f} | "
                f"{'pass' if ok else 'fail'}"
            )
        assert wins >= 2, f"grdrl dominated in only {wins} of 3 seeds"


# ---------------------------------------------------------------------------
# 10. Uniformity of sampled initial conditions.


def test_criterion_10_uniform_sampling():
    with criterion(10, "KS uniformity holds per dimension for 1e3 sampled start states at 1%"):
        sim = CrosswalkSim()
        rng = np.random.default_rng(5)
        samples = np.array([sim.sample_initial_condition(rng).to_vector() for _ in range(1000)])
        for d, name in enumerate(IC_FIELDS):
            low, high = IC_LOW[d], IC_HIGH[d]
            stat = scipy.stats.kstest(samples[:, d], "uniform", args=(low, high - low))
            assert stat.pvalue > 0.01, f"{name}: KS p-value {stat.pvalue:.4f}"
