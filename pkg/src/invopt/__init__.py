"""Inverse linear optimization by differentiating through an unrolled barrier solver."""

from .ipm import IpmSettings, LinearProgram, SolveResult, Status, solve_lp
from .learner import LearnSettings, LearnResult, Problem, hyper_search, learn
from .losses import LossKind, adg, mse, se
from .models import Family, ParametricModel, instantiate
from .tape import Tape, Var, grad_check

__version__ = "0.1.0"

__all__ = [
    "Tape", "Var", "grad_check",
    "IpmSettings", "LinearProgram", "SolveResult", "Status", "solve_lp",
    "LossKind", "adg", "se", "mse",
    "Family", "ParametricModel", "instantiate",
    "LearnSettings", "LearnResult", "Problem", "learn", "hyper_search",
]
