"""Training losses between a solver output and an observed target."""

from __future__ import annotations

import enum

from .tape import TapeError, Var

__all__ = ["LossKind", "adg", "adg_classical", "se", "mse", "loss_fn"]


class LossKind(str, enum.Enum):
    ADG = "adg"
    SE = "se"
    MSE = "mse"


def _target(x_lrn: Var, x_tru) -> Var:
    t = x_lrn.tape.const(x_tru)
    if t.shape != x_lrn.shape:
        raise TapeError(f"target shape {t.shape} does not match solution shape {x_lrn.shape}")
    return t


def adg(c_lrn: Var, x_lrn: Var, x_tru) -> Var:
    """Absolute duality gap ``c_lrn' |x_tru - x_lrn|`` with the absolute value taken per entry.

    Negative entries of ``c_lrn`` can make the result negative.
    """
    tape = x_lrn.tape
    if c_lrn.shape != x_lrn.shape:
        raise TapeError(f"cost shape {c_lrn.shape} does not match solution shape {x_lrn.shape}")
    resid = tape.apply("abs", _target(x_lrn, x_tru) - x_lrn)
    return tape.apply("dot", c_lrn, resid)


def adg_classical(c_lrn: Var, x_lrn: Var, x_tru) -> Var:
    """``|c_lrn'(x_tru - x_lrn)|``; diagnostic only, never used for training."""
    tape = x_lrn.tape
    return tape.apply("abs", tape.apply("dot", c_lrn, _target(x_lrn, x_tru) - x_lrn))


def se(x_lrn: Var, x_tru) -> Var:
    """Squared Euclidean distance to the target."""
    return x_lrn.tape.apply("sqnorm", _target(x_lrn, x_tru) - x_lrn)


def mse(per_obs_losses: list[Var]) -> Var:
    if not per_obs_losses:
        raise ValueError("mse of an empty batch")
    tape = per_obs_losses[0].tape
    total = tape.apply("concat", *per_obs_losses) if len(per_obs_losses) > 1 else per_obs_losses[0]
    return tape.apply("sum", total) * (1.0 / len(per_obs_losses))


def loss_fn(kind: LossKind | str):
    """Per-observation loss ``f(c_lrn, x_lrn, x_tru)`` for ``kind``.

    ``MSE`` trains on the per-observation SE and averages across
    observations, so it maps to the same callable as ``SE``.
    """
    kind = LossKind(kind)
    if kind is LossKind.ADG:
        return adg
    return lambda c_lrn, x_lrn, x_tru: se(x_lrn, x_tru)
