"""Plain-text result files: trajectory records, CSV tables, aligned text.

Trajectory records are line-delimited JSON, one object per line. Floats
are serialized through Python's repr, which round-trips IEEE binary64
exactly, so a persisted record carries enough precision for bit-exact
replay through the simulator.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .actions import ACTION_DIM
from .crosswalk import InitialCondition
from .simulation import AstProblem, Trajectory


def _floats(values) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def trajectory_record(trajectory: Trajectory, **meta) -> dict:
    """Flatten a trajectory into a JSON-serializable replay record.

    Keyword arguments become leading metadata fields (solver, bin, seed).
    The record holds everything replay needs: initial condition, the
    action sequence, per-step rewards, and the event flag.
    """
    record = dict(meta)
    record.update(
        ic=_floats(trajectory.ic.to_vector()),
        actions=[_floats(row) for row in np.asarray(trajectory.actions, dtype=float)],
        rewards=_floats(trajectory.rewards),
        found_event=bool(trajectory.found_event),
        miss_distance=float(trajectory.miss_distance),
        total_reward=float(trajectory.total_reward),
    )
    return record


def write_records(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record))
            fh.write("\n")


def read_records(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def replay_inputs(record: dict) -> tuple[InitialCondition, np.ndarray]:
    """Extract the (initial condition, action matrix) pair a replay needs."""
    ic = InitialCondition.from_vector(np.array(record["ic"], dtype=float))
    if not record["actions"]:
        return ic, np.zeros((0, ACTION_DIM))
    actions = np.array(record["actions"], dtype=float)
    return ic, actions.reshape(len(record["actions"]), -1)


def verify_record(problem: AstProblem, record: dict) -> tuple[bool, Trajectory]:
    """Replay a record; True iff event flag and total reward match bit-exactly."""
    ic, actions = replay_inputs(record)
    trajectory = problem.replay(ic, actions)
    ok = (
        trajectory.found_event == bool(record["found_event"])
        and trajectory.total_reward == record["total_reward"]
    )
    return ok, trajectory


# ---------------------------------------------------------------------------
# Tabular output. CSV cells keep full float precision; the aligned text
# mirror rounds for human eyes.


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "True" if value else "False"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _pretty(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "True" if value else "False"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".6g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"empty CSV file: {path}")
    return rows[0], rows[1:]


def format_aligned(header, rows) -> str:
    """Render a table as plain text with space-aligned columns."""
    cells = [[str(h) for h in header]] + [[_pretty(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for j, row in enumerate(cells):
        parts = []
        for i, (text, width) in enumerate(zip(row, widths)):
            parts.append(text.ljust(width) if i == 0 else text.rjust(width))
        lines.append("  ".join(parts).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_aligned(path, header, rows) -> None:
    Path(path).write_text(format_aligned(header, rows), encoding="utf-8")
