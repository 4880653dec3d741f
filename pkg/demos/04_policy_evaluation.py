"""Point versus bin evaluation of a trained policy.

A generalized policy can be scored two ways on a grid cell: execute its
mean action from the cell's center (point evaluation, deterministic) or
sample many stochastic rollouts from start states drawn inside the cell
and keep the best (bin evaluation). Bin evaluation is the stronger
protocol because it searches both the start state and the action noise,
ranking any collision above every non-collision.

Run:  python3 demos/04_policy_evaluation.py
"""

import numpy as np

from astress import (
    AstProblem,
    BinGrid,
    CrosswalkSim,
    TrainConfig,
    evaluate_bin,
    evaluate_policy,
    train,
)

problem = AstProblem(sim=CrosswalkSim())

# A short training run is enough to make the comparison interesting.
config = TrainConfig(iterations=6, batch_steps=2000, hidden_dim=16, seed=1, checkpoint_every=0)
result = train(problem, "grdrl", config)
print(f"trained for {config.iterations} iterations, best reward {result.best_return:.1f}")
print()

grid = BinGrid(2)
print(f"grid: {grid.bins_per_dim} bins per dimension, {grid.bin_count} bins")
print()
print(f"{'bin':>3} {'point reward':>14} {'point event':>11} {'bin reward':>14} {'bin event':>9}")

for bin_ in grid.bins[:8]:
    point = evaluate_policy(
        problem, result.policy, result.theta, "grdrl", bin_.center, mode="mean"
    )
    rng = np.random.default_rng(np.random.SeedSequence((1, bin_.index)))
    best = evaluate_bin(
        problem, result.policy, result.theta, "grdrl", bin_, samples=20, rng=rng
    )
    print(f"{bin_.index:3d} {point.total_reward:14.1f} {str(point.found_event):>11} "
          f"{best.total_reward:14.1f} {str(best.found_event):>9}")

print()
print("bin evaluation can only match or beat its own samples' mean rollout,")
print("and a collision at any reward outranks every non-collision.")
