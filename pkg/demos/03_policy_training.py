"""Train a recurrent disturbance policy with trust-region updates.

The generalized solver ("grdrl") samples a fresh initial condition for
every episode and feeds the policy its previous action plus the
normalized start state, so one network learns to attack the whole
initial-condition space. Updates are natural-gradient steps solved by
conjugate gradient on exact Fisher-vector products, accepted only when
the surrogate improves inside the KL budget.

Budgets here are kept small so the demo finishes in about a minute;
see demos/05_full_experiment.py for the full protocol.

Run:  python3 demos/03_policy_training.py
"""

import tempfile
from pathlib import Path

from astress import AstProblem, CrosswalkSim, TrainConfig, load_policy, resume_point, train

problem = AstProblem(sim=CrosswalkSim())
config = TrainConfig(iterations=8, batch_steps=2000, hidden_dim=16, seed=0, checkpoint_every=4)

workdir = Path(tempfile.mkdtemp(prefix="astress_demo_"))
result = train(problem, "grdrl", config, checkpoint_dir=workdir)

print(f"{'iter':>4} {'episodes':>8} {'collisions':>10} {'mean':>12} {'best so far':>12} "
      f"{'accepted':>8} {'kl':>8}")
for row in result.history:
    print(f"{row['iteration']:4d} {row['episodes']:8d} {row['collisions']:10d} "
          f"{row['mean_return']:12.1f} {row['best_so_far']:12.1f} "
          f"{str(row['accepted']):>8} {row['kl']:8.4f}")

print()
print(f"best trajectory reward {result.best_return:.2f}, event={result.best.found_event}")

# Checkpoints carry the policy kind, dimensions, and training cursor, so
# a run can resume exactly where it stopped.
ckpt = workdir / "grdrl_iter0008.ckpt"
solver, theta, next_iteration = resume_point(ckpt)
print()
print(f"checkpoint {ckpt.name}: solver={solver}, resume at iteration {next_iteration}")
print(f"parameters match in-memory result: {bool((theta == result.theta).all())}")

# The same file loads as a plain policy for evaluation elsewhere.
restored = load_policy(ckpt)
print(f"restored policy kind={restored.policy.kind}, "
      f"input_dim={restored.policy.input_dim}, params={restored.policy.param_count}")
