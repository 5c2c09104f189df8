"""Result summaries and loss-surface grids."""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .ipm import IpmSettings, LinearProgram, solve_lp
from .losses import LossKind, loss_fn
from .tape import Tape

__all__ = ["best_rows", "summarize", "format_summary", "SUMMARY_FIELDS", "loss_surface"]

SUMMARY_FIELDS = ("task", "d", "m", "loss_kind", "target", "n",
                  "initial_q1", "initial_median", "initial_q3",
                  "train_q1", "train_median", "train_q3",
                  "test_q1", "test_median", "test_q3")


def best_rows(rows: list[dict]) -> list[dict]:
    """Lowest final training loss per (instance, target, loss kind)."""
    best = {}
    for row in rows:
        key = (row["instance_id"], row["target"], row["loss_kind"])
        loss = row["final_train_loss"]
        loss = math.inf if loss is None or math.isnan(loss) else loss
        if key not in best or loss < best[key][0]:
            best[key] = (loss, row)
    return [row for _, row in best.values()]


def _quartiles(values):
    vals = [v for v in values if v is not None and not math.isnan(v)]
    if not vals:
        return (None, None, None)
    q1, med, q3 = np.percentile(vals, [25, 50, 75])
    return float(q1), float(med), float(q3)


def summarize(rows: list[dict]) -> list[dict]:
    """Per size and loss kind: quartiles of initial, final training and test losses."""
    groups = defaultdict(list)
    for row in best_rows(rows):
        key = (row["task"], int(row["d"]), int(row["m"]), row["loss_kind"], row["target"])
        groups[key].append(row)
    out = []
    for key in sorted(groups):
        members = groups[key]
        entry = dict(zip(("task", "d", "m", "loss_kind", "target"), key))
        entry["n"] = len(members)
        for name, col in (("initial", "initial_loss"), ("train", "final_train_loss"),
                          ("test", "final_test_loss")):
            q1, med, q3 = _quartiles(r[col] for r in members)
            entry.update({f"{name}_q1": q1, f"{name}_median": med, f"{name}_q3": q3})
        out.append(entry)
    return out


def format_summary(summary: list[dict]) -> str:
    def f(v):
        return "-" if v is None else f"{v:.3g}" if isinstance(v, float) else str(v)

    header = ("task", "d", "m", "loss", "target", "n", "init_med", "train_med", "train_q1",
              "train_q3", "test_med")
    lines = ["  ".join(f"{h:>10}" for h in header)]
    for e in summary:
        cells = (e["task"], e["d"], e["m"], e["loss_kind"], e["target"] or "-", e["n"],
                 e["initial_median"], e["train_median"], e["train_q1"], e["train_q3"],
                 e["test_median"])
        lines.append("  ".join(f"{f(c):>10}" for c in cells))
    return "\n".join(lines)


def loss_surface(A, b, x_tru, kind, eps_list, resolution: int, t0: float = 1.0,
                 mu: float = 10.0) -> list[tuple[float, float, float]]:
    """Loss as the cost direction sweeps the unit circle, one sweep per precision.

    Returns ``(theta, eps, loss)`` rows; an unsolvable direction yields ``nan``.
    """
    A = np.asarray(A, float)
    if A.shape[1] != 2:
        raise ValueError(f"loss surfaces need d = 2, got d = {A.shape[1]}")
    kind = LossKind(kind)
    fn = loss_fn(kind)
    thetas = 2.0 * np.pi * np.arange(resolution) / resolution
    rows = []
    for eps in eps_list:
        settings = IpmSettings(t0=t0, mu=mu, eps=float(eps))
        for theta in thetas:
            tape = Tape(grad_enabled=False)
            lp = LinearProgram.from_arrays(tape, [math.cos(theta), math.sin(theta)], A, b)
            res = solve_lp(lp, settings)
            loss = fn(lp.c, res.x, x_tru).item() if res.ok else math.nan
            rows.append((float(theta), float(eps), loss))
    return rows
