"""Find a failure with Monte Carlo tree search.

The search treats each 6-d disturbance vector as an action, growing the
tree with progressive widening so the continuous action space never
exhausts a node. Every iteration completes one full episode, so the
tracked best trajectory only improves with budget.

Run:  python3 demos/02_tree_search.py
"""

import numpy as np

from astress import AstProblem, CrosswalkSim, InitialCondition, MctsConfig, search

problem = AstProblem(sim=CrosswalkSim())
ic = InitialCondition(ped_x=0.5, ped_y=-3.0, car_x=-28.0, ped_vy=1.5, car_vx=12.5)

config = MctsConfig(iterations=600, exploration=100.0, k_action=1.0, alpha_action=0.5)
result = search(problem, ic, config, np.random.default_rng(0))

print(f"iterations      {result.iterations}")
print(f"found event     {result.found_event}")
print(f"best reward     {result.best.total_reward:.2f}")
print(f"episode length  {result.best.steps} steps")
print()

# The cumulative-best trace is the search's anytime curve.
trace = np.asarray(result.trace)
marks = [0, 9, 49, 99, 299, len(trace) - 1]
print("best-so-far trace:")
for i in marks:
    print(f"  after {i + 1:4d} iterations: {trace[i]:12.2f}")
print()

# The best trajectory is a real episode: replaying its actions through
# the simulator reproduces the score exactly.
replayed = problem.replay(ic, result.best.actions)
print(f"replay total    {replayed.total_reward:.2f}")
print(f"bit-exact       {replayed.total_reward == result.best.total_reward}")

# Root statistics show where the search spent its visits.
children = sorted(result.root.children, key=lambda e: -e.visits)[:5]
print()
print("most-visited root actions (visits, mean return):")
for edge in children:
    print(f"  {edge.visits:5d}  {edge.value:12.2f}")
