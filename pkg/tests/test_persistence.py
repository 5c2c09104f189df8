import json

import numpy as np
import pytest

from invopt.instances import Task, make_task
from invopt.persistence import (RESULT_FIELDS, MalformedFileError, append_rows,
                                bundled_trig_demo_path, dumps_instance, instance_from_dict,
                                read_instance, read_rows, write_instance)


@pytest.mark.parametrize("task,d,m", [(Task.LEARN_C, 2, 4), (Task.LEARN_CAB, 2, 8),
                                      (Task.PARAMETRIC, 2, 8), (Task.TRIG_DEMO, 2, 3)])
def test_instance_roundtrip_identity(tmp_path, task, d, m):
    inst = make_task(task, d, m, seed=5)
    first = dumps_instance(inst)
    path = write_instance(inst, tmp_path / "a.json")
    again = read_instance(path)
    assert dumps_instance(again) == first
    np.testing.assert_array_equal(again.A, inst.A)
    for o1, o2 in zip(again.targets, inst.targets):
        np.testing.assert_array_equal(o1.x, o2.x)
        assert o1.u == o2.u and o1.label == o2.label
    np.testing.assert_array_equal(again.w_ini, inst.w_ini)
    assert again.model.to_dict() == inst.model.to_dict()


def test_floats_are_full_precision(tmp_path):
    inst = make_task(Task.LEARN_C, 2, 4, seed=1)
    doc = json.loads(dumps_instance(inst))
    assert np.array(doc["A"]).tobytes() == inst.A.tobytes()


def test_bundled_trig_demo_matches_generator():
    assert bundled_trig_demo_path().read_text() == dumps_instance(make_task(Task.TRIG_DEMO, 2, 3, 0))


def test_malformed_instance(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(MalformedFileError):
        read_instance(bad)
    with pytest.raises(MalformedFileError):
        instance_from_dict({"schema_version": 1, "task": "learn-c"})
    with pytest.raises(MalformedFileError):
        instance_from_dict({"schema_version": 99})


def _row(**kw):
    row = {"instance_id": "i0", "task": "learn-c", "target": "", "d": 2, "m": 4,
           "loss_kind": "se", "t0": 1.0, "mu": 2.0, "alpha_c": 1.0, "alpha_ab": 1.0,
           "eps_schedule": "ExpDecay", "truncate": "", "initial_loss": 1.5,
           "final_train_loss": 1e-9, "final_test_loss": None, "steps_used": 10,
           "termination": "max_steps", "wall_ms": 3.0}
    row.update(kw)
    return row


def test_results_csv_roundtrip(tmp_path):
    path = tmp_path / "r.csv"
    append_rows(path, [_row(), _row(instance_id="i1", final_train_loss=0.1 + 0.2)])
    append_rows(path, [_row(instance_id="i2")])
    rows = read_rows(path)
    assert [r["instance_id"] for r in rows] == ["i0", "i1", "i2"]
    assert rows[1]["final_train_loss"] == 0.1 + 0.2
    assert rows[0]["final_test_loss"] is None
    assert path.read_text().splitlines()[0] == ",".join(RESULT_FIELDS)


def test_malformed_results(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(MalformedFileError):
        read_rows(path)
    append_rows(tmp_path / "s.csv", [_row(initial_loss="oops")])
    with pytest.raises(MalformedFileError):
        read_rows(tmp_path / "s.csv")
