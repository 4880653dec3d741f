"""Drive the crosswalk scenario by hand.

A car approaches a crosswalk while a pedestrian steps into the road.
The driving logic brakes when its tracker predicts the pedestrian will
occupy the car's corridor. Disturbance vectors perturb the pedestrian's
acceleration and the tracker's position/velocity measurements; the
per-step cost is the Mahalanobis distance of the disturbance, so quiet
trajectories are cheap and contrived ones are expensive.

Run:  python3 demos/01_scenario_rollouts.py
"""

import numpy as np

from astress import AstProblem, CrosswalkSim, InitialCondition

problem = AstProblem(sim=CrosswalkSim())
sim = problem.sim
ic = InitialCondition(ped_x=0.0, ped_y=-4.0, car_x=-35.0, ped_vy=1.0, car_vx=11.17)

# --- A quiet crossing: no disturbances at all. -----------------------------
quiet = problem.rollout(ic, lambda state, t: np.zeros(6))
print("zero-disturbance rollout")
print(f"  steps          {quiet.steps}")
print(f"  collision      {quiet.found_event}")
print(f"  miss distance  {quiet.miss_distance:.3f} m")
print(f"  total reward   {quiet.total_reward:.1f}")
print()

# The car slows for the pedestrian; watch the speed dip mid-episode.
state = sim.initialize(ic)
speeds = [state.car_vx]
while not sim.is_terminal(state):
    state, _ = sim.step(state, np.zeros(6))
    speeds.append(state.car_vx)
print(f"  car speed profile: start {speeds[0]:.2f}, min {min(speeds):.2f}, end {speeds[-1]:.2f} m/s")
print()

# --- A contrived failure. ---------------------------------------------------
# From the far-away start above the driver always stops in time; the
# vulnerable regime is a fast car already near the crosswalk. The car
# brakes hard, but a pedestrian at the lane's edge who keeps
# accelerating along the road toward it closes the gap on foot.
close_call = InitialCondition(ped_x=1.0, ped_y=-2.0, car_x=-26.25, ped_vy=2.0, car_vx=13.96)

def ambush(state, t):
    u = np.zeros(6)
    u[0] = -3.0  # x acceleration toward the oncoming car
    u[1] = -0.5  # ease off the crossing speed
    return u

crash = problem.rollout(close_call, ambush)
print("adversarial rollout")
print(f"  steps          {crash.steps}")
print(f"  collision      {crash.found_event}")
print(f"  total reward   {crash.total_reward:.2f}")
print()

# Reward branches at a glance: each non-terminal step pays the negative
# Mahalanobis distance, a collision step pays zero, and reaching the
# horizon without an event pays -(1e5 + 1e4 * miss distance).
print("per-step rewards, adversarial rollout (last five):")
print(" ", np.round(crash.rewards[-5:], 3))
print("per-step rewards, quiet rollout (last five):")
print(" ", np.round(quiet.rewards[-5:], 1))
