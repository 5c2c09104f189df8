"""``invopt`` command line: gen, learn, report, loss-surface.

Exit codes: 0 success, 2 invalid input, 3 forward-solve failure at the
initial weights, 4 early termination without improving the loss.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .instances import Task, make_task
from .ipm import IpmSettings
from .learner import (Constant, ExpDecay, ForwardSolveError, HyperParams, LearnSettings,
                      Problem, Termination, hyper_search, learn, lp_arrays)
from .losses import LossKind
from .models import Family
from .persistence import (MalformedFileError, append_rows, read_instance, read_rows,
                          write_instance)
from .report import SUMMARY_FIELDS, format_summary, loss_surface, summarize

log = logging.getLogger("invopt")

EXIT_OK, EXIT_INVALID, EXIT_SOLVE, EXIT_NO_IMPROVEMENT = 0, 2, 3, 4
DEFAULT_COUNT, FULL_COUNT = 20, 50


class UsageError(Exception):
    pass


def _instance_path(out_dir: Path, task, d, m, seed, i) -> Path:
    return out_dir / f"{task}_d{d}_m{m}_s{seed}_{i:03d}.json"


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = args.count if args.count is not None else (FULL_COUNT if args.full else DEFAULT_COUNT)
    if args.task == Task.TRIG_DEMO:
        count = 1
    elif args.d is None or args.m is None:
        raise UsageError(f"--d and --m are required for task {args.task}")
    for i in range(count):
        inst = make_task(args.task, args.d, args.m, args.seed, i)
        path = _instance_path(out, args.task, inst.d, inst.m, args.seed, i)
        write_instance(inst, path)
        for w in inst.warnings:
            log.warning("%s: %s", path.name, w)
        print(path)
    return EXIT_OK


def _problems(inst, instance_id):
    """One learning problem per independently learned target set."""
    if inst.task == Task.LEARN_CAB:
        return [(obs.label, Problem(inst.model, inst.w_ini, [obs], label=obs.label))
                for obs in inst.targets]
    return [("", Problem(inst.model, inst.w_ini, inst.targets, inst.test_targets))]


def _settings_from_args(args, inst) -> LearnSettings:
    default_loss = LossKind.MSE if inst.task in (Task.PARAMETRIC, Task.TRIG_DEMO) else LossKind.SE
    loss = LossKind(args.loss) if args.loss else default_loss
    if args.eps_decay is None:
        schedule = None
    else:
        schedule = ExpDecay() if args.eps_decay else Constant(1e-5)
    return LearnSettings(max_steps=args.max_steps, alpha_c=args.alpha_c, alpha_ab=args.alpha_ab,
                         eps_schedule=schedule, loss=loss,
                         ipm=IpmSettings(t0=args.t0, mu=args.mu), truncate=args.truncate)


def _row(instance_id, inst, target, settings, hp, res) -> dict:
    return {
        "instance_id": instance_id, "task": inst.task, "target": target,
        "d": inst.d, "m": inst.m, "loss_kind": settings.loss.value,
        "t0": hp.t0, "mu": hp.mu, "alpha_c": hp.alpha_c, "alpha_ab": hp.alpha_ab,
        "eps_schedule": type(settings.eps_schedule).__name__,
        "truncate": settings.truncate if settings.truncate else "",
        "initial_loss": res.initial_loss, "final_train_loss": res.final_loss,
        "final_test_loss": res.test_loss, "steps_used": res.steps_used,
        "termination": res.termination, "wall_ms": round(res.wall_ms, 1),
    }


def cmd_learn(args) -> int:
    inst = read_instance(args.instance)
    instance_id = Path(args.instance).stem
    settings = _settings_from_args(args, inst)
    rows, learned, code = [], [], EXIT_OK
    for target, problem in _problems(inst, instance_id):
        if args.hyper_search:
            outcome = hyper_search(problem, settings, inst.task, args.hyper_search,
                                   np.random.default_rng(args.seed))
            runs = outcome.runs
            if outcome.failed:
                print(f"error: forward solve failed at the initial weights ({target or 'all'})",
                      file=sys.stderr)
                return EXIT_SOLVE
            best_hp, best = outcome.best, outcome.result
        else:
            hp = HyperParams(args.t0, args.mu, args.alpha_c, args.alpha_ab)
            try:
                best = learn(problem, settings)
            except ForwardSolveError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_SOLVE
            runs, best_hp = [(hp, best, None)], hp
        for hp, res, _ in runs:
            if res is not None:
                rows.append(_row(instance_id, inst, target, hp.apply(settings), hp, res))
        learned.append({
            "instance_id": instance_id, "target": target, "family": inst.model.family.value,
            "loss_kind": settings.loss.value, "w_lrn": best.w_lrn.tolist(),
            "hyper": vars(best_hp), "initial_loss": best.initial_loss,
            "final_train_loss": best.final_loss, "final_test_loss": best.test_loss,
            "termination": best.termination,
        })
        print(f"{instance_id} {target or '-'} {settings.loss.value}: "
              f"initial {best.initial_loss:.3e} -> final {best.final_loss:.3e} "
              f"({best.termination}, {best.steps_used} steps)")
        if best.termination == Termination.BETA_UNDERFLOW and not best.final_loss < best.initial_loss:
            code = EXIT_NO_IMPROVEMENT
    append_rows(args.results, rows)
    model_out = Path(args.model_out) if args.model_out else \
        Path(args.results).with_name(f"{instance_id}.learned.json")
    model_out.write_text(json.dumps(learned, indent=1) + "\n")
    return code


def cmd_report(args) -> int:
    summary = summarize(read_rows(args.results))
    print(format_summary(summary))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
            writer.writeheader()
            for entry in summary:
                writer.writerow({k: "" if entry[k] is None else entry[k] for k in SUMMARY_FIELDS})
    return EXIT_OK


def cmd_loss_surface(args) -> int:
    inst = read_instance(args.instance)
    if inst.d != 2:
        raise UsageError(f"loss-surface supports d = 2 instances only, got d = {inst.d}")
    target = args.target
    if not 0 <= target < len(inst.targets):
        raise UsageError(f"--target {target} out of range")
    obs = inst.targets[target]
    A, b = inst.A, inst.b
    if inst.w_tru is not None and inst.model.family is not Family.DIRECT:
        # the feasible region that generated this target
        _, A, b = lp_arrays(inst.model, inst.w_tru, obs.u)
    rows = loss_surface(A, b, obs.x, args.loss, args.eps,
                        args.resolution, t0=args.t0, mu=args.mu)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(("theta", "eps", "loss"))
        for theta, eps, loss in rows:
            writer.writerow((repr(theta), repr(eps), repr(loss)))
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def _eps_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("precisions must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="invopt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate instance files")
    g.add_argument("--task", required=True, choices=Task.ALL)
    g.add_argument("--d", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--full", action="store_true", help="50 instances instead of 20")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    lrn = sub.add_parser("learn", help="learn LP parameters for one instance file")
    lrn.add_argument("instance")
    lrn.add_argument("--loss", choices=[k.value for k in LossKind])
    lrn.add_argument("--hyper-search", type=int, default=0, metavar="N")
    decay = lrn.add_mutually_exclusive_group()
    decay.add_argument("--eps-decay", dest="eps_decay", action="store_true", default=None)
    decay.add_argument("--no-eps-decay", dest="eps_decay", action="store_false")
    lrn.add_argument("--truncate", type=int, default=None, metavar="K",
                     help="backpropagate through the last K Newton steps only")
    lrn.add_argument("--seed", type=int, default=0)
    lrn.add_argument("--max-steps", type=int, default=200)
    lrn.add_argument("--t0", type=float, default=1.0)
    lrn.add_argument("--mu", type=float, default=2.0)
    lrn.add_argument("--alpha-c", type=float, default=1.0)
    lrn.add_argument("--alpha-ab", type=float, default=1.0)
    lrn.add_argument("--results", default="results.csv")
    lrn.add_argument("--model-out")
    lrn.set_defaults(func=cmd_learn)

    rep = sub.add_parser("report", help="summarize a results CSV")
    rep.add_argument("results")
    rep.add_argument("--out")
    rep.set_defaults(func=cmd_report)

    ls = sub.add_parser("loss-surface", help="loss over cost directions on the unit circle")
    ls.add_argument("instance")
    ls.add_argument("--loss", choices=["adg", "se"], default="se")
    ls.add_argument("--eps", type=_eps_list, default=[1e-5, 0.01, 0.1])
    ls.add_argument("--resolution", type=int, default=360)
    ls.add_argument("--target", type=int, default=0)
    ls.add_argument("--t0", type=float, default=1.0)
    ls.add_argument("--mu", type=float, default=10.0)
    ls.add_argument("--out")
    ls.set_defaults(func=cmd_loss_surface)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, MalformedFileError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
