"""
JSONL lifecycle log.

One LifecycleEvent per line, in the order the control thread produced them.
A single ``final_evaluation`` record closes a run; it is the only record
allowed to mention test-split tasks.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Union

from skill_bank import LifecycleEvent

logger = logging.getLogger(__name__)

FINAL_EVALUATION = "final_evaluation"


class LogLeakageError(Exception):
    """A test-split task id shows up before the final evaluation record."""


class LifecycleLog:
    """
    Append-only JSONL writer.

    The file is truncated on open so repeated runs produce identical bytes.
    """

    def __init__(self, path: Union[str, Path, None]):
        self._path = Path(path) if path else None
        self.events: List[LifecycleEvent] = []
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            self._path.write_text("", encoding="utf-8")

    @property
    def path(self) -> Optional[Path]:
        return self._path

    def append(self, event: LifecycleEvent):
        self.events.append(event)
        self._write(event.to_dict())

    def extend(self, events: Iterable[LifecycleEvent]):
        for event in events:
            self.append(event)

    def write_final_evaluation(self, payload: Mapping[str, Any]):
        record = {"record": FINAL_EVALUATION}
        record.update(payload)
        self._write(record)

    def _write(self, record: Dict[str, Any]):
        if self._path is None:
            return
        try:
            with self._path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True))
                f.write("\n")
        except OSError as e:
            logger.error("Failed to append to lifecycle log %s: %s", self._path, e)
            raise


def iter_records(path: Union[str, Path]) -> Iterator[Dict[str, Any]]:
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield json.loads(line)


def read_events(path: Union[str, Path]) -> List[LifecycleEvent]:
    """Lifecycle events only; the final evaluation record is skipped."""
    return [LifecycleEvent.from_dict(r) for r in iter_records(path) if r.get("record") != FINAL_EVALUATION]


def check_lifecycle_log(path: Union[str, Path], test_ids: Iterable[str]) -> int:
    """
    Leakage post-processor: no test-split id may appear before the final
    evaluation record.

    Returns:
        Number of lifecycle records checked

    Raises:
        LogLeakageError: on the first leaking record
    """
    test_ids = set(test_ids)
    checked = 0
    for line_no, record in enumerate(iter_records(path), start=1):
        if record.get("record") == FINAL_EVALUATION:
            break
        mentioned = set(record.get("source_tasks", []))
        mentioned.add(record.get("skill_id", ""))
        leaked = mentioned & test_ids
        if leaked:
            raise LogLeakageError(f"{path}:{line_no}: test-split task(s) {sorted(leaked)} in lifecycle record")
        checked += 1
    return checked
