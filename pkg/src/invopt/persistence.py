"""Instance JSON files and result CSV rows."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .instances import Observation, Task, TaskInstance
from .models import Family, direct_model, linear_shift_model, trig_demo_model

__all__ = [
    "SCHEMA_VERSION",
    "RESULT_FIELDS",
    "instance_to_dict",
    "instance_from_dict",
    "dumps_instance",
    "write_instance",
    "read_instance",
    "append_rows",
    "read_rows",
    "MalformedFileError",
    "bundled_trig_demo_path",
]

SCHEMA_VERSION = 1
RESULTS_VERSION = "1"
RESULT_FIELDS = (
    "results_version", "instance_id", "task", "target", "d", "m", "loss_kind",
    "t0", "mu", "alpha_c", "alpha_ab", "eps_schedule", "truncate",
    "initial_loss", "final_train_loss", "final_test_loss", "steps_used",
    "termination", "wall_ms",
)


class MalformedFileError(ValueError):
    pass


def _vec(a):
    return None if a is None else np.asarray(a, float).ravel().tolist()


def _mat(a):
    return None if a is None else np.asarray(a, float).tolist()


def instance_to_dict(inst: TaskInstance) -> dict:
    targets = [{"u": float(o.u), "x": _vec(o.x), "split": "train", "label": o.label}
               for o in inst.targets]
    targets += [{"u": float(o.u), "x": _vec(o.x), "split": "test", "label": o.label}
                for o in inst.test_targets]
    model = inst.model.to_dict()
    model.update({
        "w_tru": _vec(inst.w_tru),
        "w_ini": _vec(inst.w_ini),
        "u_range": None if inst.u_range is None else [float(v) for v in inst.u_range],
        "u_train": _vec(inst.u_train),
        "u_test": _vec(inst.u_test),
    })
    return {
        "schema_version": SCHEMA_VERSION,
        "task": inst.task,
        "d": int(inst.d),
        "m": int(inst.m),
        "seed": inst.seed,
        "A": _mat(inst.A),
        "b": _vec(inst.b),
        "c_ini": _vec(inst.c_ini),
        "c_tru": _vec(inst.c_tru),
        "vertices": _mat(inst.vertices),
        "targets": targets,
        "model": model,
        "warnings": list(inst.warnings),
    }


def _col(v):
    return None if v is None else np.asarray(v, float).reshape(-1, 1)


def instance_from_dict(doc: dict) -> TaskInstance:
    try:
        if doc["schema_version"] != SCHEMA_VERSION:
            raise MalformedFileError(f"unsupported schema_version {doc['schema_version']}")
        d, m = int(doc["d"]), int(doc["m"])
        A = np.asarray(doc["A"], float).reshape(m, d)
        b = _col(doc["b"])
        spec = doc["model"]
        family = Family(spec["family"])
        if family is Family.DIRECT:
            model = direct_model(d, m, learn=spec.get("learn", "cab"), A=A, b=b)
        elif family is Family.LINEAR_SHIFT:
            model = linear_shift_model(doc["c_ini"], A, b, spec["masks"])
        else:
            model = trig_demo_model()
        train = [Observation(t["u"], _col(t["x"]), t.get("label", ""))
                 for t in doc["targets"] if t.get("split", "train") == "train"]
        test = [Observation(t["u"], _col(t["x"]), t.get("label", ""))
                for t in doc["targets"] if t.get("split") == "test"]
        arr = lambda k: None if spec.get(k) is None else np.asarray(spec[k], float)
        return TaskInstance(
            task=doc["task"], d=d, m=m, A=A, b=b, model=model,
            w_ini=np.asarray(spec["w_ini"], float), targets=train,
            c_ini=_col(doc.get("c_ini")), c_tru=_col(doc.get("c_tru")), w_tru=arr("w_tru"),
            u_range=None if spec.get("u_range") is None else tuple(spec["u_range"]),
            u_train=arr("u_train"), u_test=arr("u_test"), test_targets=test,
            vertices=None if doc.get("vertices") is None else np.asarray(doc["vertices"], float),
            seed=doc.get("seed"), warnings=list(doc.get("warnings", [])))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MalformedFileError):
            raise
        raise MalformedFileError(f"invalid instance document: {exc}") from exc


def dumps_instance(inst: TaskInstance) -> str:
    # json writes floats with repr, the shortest string that round-trips.
    return json.dumps(instance_to_dict(inst), indent=1, allow_nan=False) + "\n"


def write_instance(inst: TaskInstance, path) -> Path:
    path = Path(path)
    path.write_text(dumps_instance(inst))
    return path


def read_instance(path) -> TaskInstance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(doc)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return str(v)


def append_rows(path, rows: list[dict]) -> None:
    """Append result rows, writing the header when the file is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, extrasaction="raise")
        if new:
            writer.writeheader()
        for row in rows:
            full = {k: _fmt(row.get(k)) for k in RESULT_FIELDS}
            full["results_version"] = RESULTS_VERSION
            writer.writerow(full)


_NUMERIC = {"d", "m", "t0", "mu", "alpha_c", "alpha_ab", "initial_loss", "final_train_loss",
            "final_test_loss", "steps_used", "wall_ms"}


def read_rows(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RESULT_FIELDS:
            raise MalformedFileError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            row = dict(raw)
            try:
                for k in _NUMERIC:
                    row[k] = float(row[k]) if row[k] not in ("", None) else None
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: {exc}") from exc
            rows.append(row)
    return rows


def task_of(inst: TaskInstance) -> str:
    return inst.task if inst.task in Task.ALL else Task.LEARN_C


def bundled_trig_demo_path() -> Path:
    """Path of the trig-demo instance shipped with the package."""
    return Path(__file__).with_name("data") / "trig_demo.json"
