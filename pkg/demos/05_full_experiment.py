"""The full evaluation protocol, miniature edition.

Discretize the initial-condition space into a bin grid, attack every
bin center with the per-bin solvers, train the generalized solver once
on the whole space, and score it per bin in both point and bin modes.
Everything lands in plain-text artifacts: an aggregate table, per-bin
tables, cumulative-max traces, and line-delimited trajectory records
that replay bit-exactly.

Budgets are shrunk (one bin, tiny training runs) so this finishes in
well under a minute. The command-line equivalent at full scale is:

    ast run <config-file>

Run:  python3 demos/05_full_experiment.py
"""

import tempfile
from pathlib import Path

from astress import (
    AstProblem,
    CrosswalkSim,
    emit_results,
    load_report,
    parse_config,
    read_records,
    report_text,
    run_experiment,
    verify_record,
)

CONFIG_TEXT = """
[experiment]
solvers = mcts drdrl grdrl
eval_samples = 10

[grid]
bins_per_dim = 1

[mcts]
iterations = 200

[drdrl]
iterations = 3
batch_steps = 400
hidden_dim = 8
checkpoint_every = 0

[grdrl]
iterations = 3
batch_steps = 600
hidden_dim = 8
checkpoint_every = 0
"""

config = parse_config(CONFIG_TEXT)
result = run_experiment(config, seed=0)

out = Path(tempfile.mkdtemp(prefix="astress_experiment_"))
written = emit_results(result, out)
print(f"wrote {len(written)} artifact files under {out}")
print()
print(report_text(result.report), end="")
print()

# The aggregate table reloads from the per-bin CSVs alone.
reloaded = load_report(out)
print(f"reloaded report rows: {[s.solver for s in reloaded.summaries]}")
print()

# Every persisted trajectory replays through the simulator bit-exactly.
problem = AstProblem(
    sim=CrosswalkSim(config.scenario), model=config.model, reward=config.reward
)
total = exact = 0
for path in sorted(out.glob("trajectories_*.jsonl")):
    for record in read_records(path):
        ok, _ = verify_record(problem, record)
        total += 1
        exact += ok
print(f"replay fidelity: {exact}/{total} records reproduce their stored outcome exactly")
