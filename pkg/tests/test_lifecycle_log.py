import json

import pytest

from lifecycle_log import FINAL_EVALUATION, LifecycleLog, LogLeakageError, check_lifecycle_log, read_events
from skill_bank import EventKind, LifecycleEvent


def _events():
    return [
        LifecycleEvent(step=10, skill_id="pick_a", kind=EventKind.RETAIN, mec_raw=0.1, mec_smoothed=0.1),
        LifecycleEvent(step=10, skill_id="dyn_pick_001", kind=EventKind.EXPAND, anchor_id="pick_a",
                       source_tasks=["val-0001", "val-0004"]),
    ]


def test_log_writes_one_record_per_line(tmp_path):
    path = tmp_path / "run" / "lifecycle.jsonl"
    log = LifecycleLog(path)
    log.extend(_events())
    log.write_final_evaluation({"test_with_skills": 0.5})

    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3
    assert json.loads(lines[-1])["record"] == FINAL_EVALUATION
    assert [e.skill_id for e in read_events(path)] == ["pick_a", "dyn_pick_001"]


def test_reopening_truncates(tmp_path):
    path = tmp_path / "lifecycle.jsonl"
    LifecycleLog(path).extend(_events())
    LifecycleLog(path)
    assert path.read_text(encoding="utf-8") == ""


def test_log_without_path_keeps_events_in_memory():
    log = LifecycleLog(None)
    log.extend(_events())
    assert log.path is None
    assert len(log.events) == 2


def test_leakage_check_passes_on_validation_ids(tmp_path):
    path = tmp_path / "lifecycle.jsonl"
    log = LifecycleLog(path)
    log.extend(_events())
    log.write_final_evaluation({"tasks": ["tes-0000"]})
    assert check_lifecycle_log(path, {"tes-0000"}) == 2


def test_leakage_check_flags_test_ids(tmp_path):
    path = tmp_path / "lifecycle.jsonl"
    log = LifecycleLog(path)
    log.append(LifecycleEvent(step=10, skill_id="dyn_pick_001", kind=EventKind.EXPAND,
                              source_tasks=["tes-0003"]))
    with pytest.raises(LogLeakageError, match="tes-0003"):
        check_lifecycle_log(path, {"tes-0003"})
