"""
Skill bank: the hierarchical store of external skills and their lifecycle state.

A bank keeps a general pool and one pool per task type. Every skill sits in
exactly one pool for its whole life; the lifecycle only moves ids between the
active set and the retired set. Retired skills stay in their pools so that
post-hoc analysis can still read their history.

Banks serialize to a line-oriented JSON file, one skill per line.
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Set

import numpy as np

logger = logging.getLogger(__name__)

UNIT_NORM_TOLERANCE = 1e-9
EXPANDED_ID_PREFIX = "dyn_"


class SkillBankError(Exception):
    """Base class for skill bank errors."""


class DuplicateIdError(SkillBankError):
    pass


class MissingTaskTypeError(SkillBankError):
    pass


class NotActiveError(SkillBankError):
    pass


class InvalidSkillError(SkillBankError):
    pass


class Tier(str, Enum):
    GENERAL = "general"
    TASK_SPECIFIC = "task_specific"


class Origin(str, Enum):
    INITIAL = "initial"
    EXPANDED = "expanded"


class EventKind(str, Enum):
    RETAIN = "retain"
    RETIRE = "retire"
    EXPAND = "expand"
    SKIP = "skip"
    HOLD = "hold"


@dataclass(eq=False)
class Skill:
    """
    One external skill artifact.

    concept_weights is ground truth for the simulator. Controller code
    (routing, auditing, lifecycle rules) never reads it.
    """
    id: str
    tier: Tier
    embedding: np.ndarray
    task_type: Optional[str] = None
    concept_weights: Dict[str, float] = field(default_factory=dict)
    origin: Origin = Origin.INITIAL
    created_at_step: int = 0

    def __post_init__(self):
        self.tier = Tier(self.tier)
        self.origin = Origin(self.origin)
        self.embedding = np.asarray(self.embedding, dtype=np.float64)

        if not self.id:
            raise InvalidSkillError("Skill id must be a non-empty string")
        if self.embedding.ndim != 1 or self.embedding.size < 2:
            raise InvalidSkillError(f'Skill "{self.id}" embedding must be a vector of dimension >= 2')
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
            raise InvalidSkillError(f'Skill "{self.id}" embedding is not unit norm (norm={norm!r})')

        if self.tier is Tier.TASK_SPECIFIC and not self.task_type:
            raise MissingTaskTypeError(f'Task-specific skill "{self.id}" has no task_type')
        if self.tier is Tier.GENERAL and self.task_type:
            raise InvalidSkillError(f'General skill "{self.id}" must not carry a task_type')
        if self.origin is Origin.EXPANDED and self.tier is not Tier.TASK_SPECIFIC:
            raise InvalidSkillError(f'Expanded skill "{self.id}" must be task-specific')

        for concept, weight in self.concept_weights.items():
            if not 0.0 <= weight <= 1.0:
                raise InvalidSkillError(f'Skill "{self.id}" weight for {concept} outside [0, 1]: {weight}')

    @property
    def is_general(self) -> bool:
        return self.tier is Tier.GENERAL

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "tier": self.tier.value,
            "task_type": self.task_type,
            "embedding": self.embedding.tolist(),
            "origin": self.origin.value,
            "created_at_step": self.created_at_step,
            "concept_weights": dict(sorted(self.concept_weights.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Skill":
        return cls(
            id=data["id"],
            tier=Tier(data["tier"]),
            embedding=np.array(data["embedding"], dtype=np.float64),
            task_type=data.get("task_type"),
            concept_weights={k: float(v) for k, v in data.get("concept_weights", {}).items()},
            origin=Origin(data.get("origin", Origin.INITIAL.value)),
            created_at_step=int(data.get("created_at_step", 0)),
        )


@dataclass
class LifecycleEvent:
    """One lifecycle record per audited skill per cycle (plus extra moves)."""
    step: int
    skill_id: str
    kind: EventKind
    mec_raw: Optional[float] = None
    mec_smoothed: Optional[float] = None
    exposure: int = 0
    streak: int = 0
    failures: int = 0
    reason: str = ""
    anchor_id: Optional[str] = None
    source_tasks: List[str] = field(default_factory=list)
    skill: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        record = {
            "step": self.step,
            "skill_id": self.skill_id,
            "kind": EventKind(self.kind).value,
            "mec_raw": self.mec_raw,
            "mec_smoothed": self.mec_smoothed,
            "exposure": self.exposure,
            "streak": self.streak,
            "failures": self.failures,
            "reason": self.reason,
        }
        if self.anchor_id is not None:
            record["anchor_id"] = self.anchor_id
        if self.source_tasks:
            record["source_tasks"] = list(self.source_tasks)
        if self.skill is not None:
            record["skill"] = self.skill
        return record

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LifecycleEvent":
        return cls(
            step=int(data["step"]),
            skill_id=data["skill_id"],
            kind=EventKind(data["kind"]),
            mec_raw=data.get("mec_raw"),
            mec_smoothed=data.get("mec_smoothed"),
            exposure=int(data.get("exposure", 0)),
            streak=int(data.get("streak", 0)),
            failures=int(data.get("failures", 0)),
            reason=data.get("reason", ""),
            anchor_id=data.get("anchor_id"),
            source_tasks=list(data.get("source_tasks", [])),
            skill=data.get("skill"),
        )


class ActiveView(NamedTuple):
    """Read-only active view for one task type. Unpacks as (general, task)."""
    general_active: FrozenSet[str]
    task_active: FrozenSet[str]
    keys: Mapping[str, np.ndarray]


class SkillBank:
    """Global skill store partitioned into a general pool and per-type pools."""

    def __init__(self, skills: Iterable[Skill] = ()):
        self._skills: Dict[str, Skill] = {}
        self.general_pool: Set[str] = set()
        self.task_pools: Dict[str, Set[str]] = {}
        self.active: Set[str] = set()
        self.retired: Dict[str, int] = {}
        for skill in skills:
            self.add_skill(skill)

    def __contains__(self, skill_id: str) -> bool:
        return skill_id in self._skills

    def __len__(self) -> int:
        return len(self._skills)

    def __iter__(self) -> Iterator[Skill]:
        return iter(self._skills[skill_id] for skill_id in sorted(self._skills))

    def get(self, skill_id: str) -> Skill:
        return self._skills[skill_id]

    def add_skill(self, skill: Skill) -> "SkillBank":
        """Insert a skill into its pool and into the active set."""
        if skill.id in self._skills:
            raise DuplicateIdError(f'Skill id "{skill.id}" already present in bank')
        if skill.tier is Tier.TASK_SPECIFIC and not skill.task_type:
            raise MissingTaskTypeError(f'Task-specific skill "{skill.id}" has no task_type')

        self._skills[skill.id] = skill
        if skill.is_general:
            self.general_pool.add(skill.id)
        else:
            self.task_pools.setdefault(skill.task_type, set()).add(skill.id)
        self.active.add(skill.id)
        logger.debug("Added skill %s (%s)", skill.id, skill.tier.value)
        return self

    def retire_skill(self, skill_id: str, step: int = 0) -> "SkillBank":
        """Deactivate a skill. Pool membership is unchanged; nothing is re-activated later."""
        if skill_id not in self.active:
            raise NotActiveError(f'Skill "{skill_id}" is not active')
        self.active.remove(skill_id)
        self.retired[skill_id] = step
        logger.debug("Retired skill %s at step %d", skill_id, step)
        return self

    def active_view(self, task_type: Optional[str]) -> ActiveView:
        general_active = frozenset(self.active & self.general_pool)
        task_active = frozenset(self.active & self.task_pools.get(task_type, set()))
        keys = {skill_id: self._skills[skill_id].embedding for skill_id in general_active | task_active}
        return ActiveView(general_active, task_active, keys)

    def active_skills(self) -> List[Skill]:
        return [self._skills[skill_id] for skill_id in sorted(self.active)]

    def pool_of(self, skill_id: str) -> Optional[str]:
        """Task type of the skill's pool, None for the general pool."""
        return self._skills[skill_id].task_type

    def state_of(self, skill_id: str) -> str:
        if skill_id in self.active:
            return "active"
        if skill_id in self.retired:
            return "retired"
        return "inactive"

    @property
    def task_types(self) -> List[str]:
        return sorted(self.task_pools)

    def expanded_count(self) -> int:
        return sum(1 for skill in self._skills.values() if skill.origin is Origin.EXPANDED)

    def copy(self) -> "SkillBank":
        clone = SkillBank()
        clone._skills = dict(self._skills)
        clone.general_pool = set(self.general_pool)
        clone.task_pools = {k: set(v) for k, v in self.task_pools.items()}
        clone.active = set(self.active)
        clone.retired = dict(self.retired)
        return clone

    def same_state(self, other: "SkillBank") -> bool:
        """Structural equality: same skills, pools, active and retired sets."""
        if set(self._skills) != set(other._skills):
            return False
        for skill_id, skill in self._skills.items():
            if skill.to_dict() != other._skills[skill_id].to_dict():
                return False
        return (
            self.general_pool == other.general_pool
            and self.task_pools == other.task_pools
            and self.active == other.active
            and self.retired == other.retired
        )


def replay_events(initial_bank: SkillBank, events: Iterable[LifecycleEvent]) -> SkillBank:
    """
    Rebuild a bank by applying the lifecycle log to a copy of the initial bank.

    Only Retire and Expand events change state; Expand events carry the full
    skill payload.
    """
    bank = initial_bank.copy()
    for event in events:
        kind = EventKind(event.kind)
        if kind is EventKind.RETIRE:
            bank.retire_skill(event.skill_id, step=event.step)
        elif kind is EventKind.EXPAND:
            if event.skill is None:
                raise SkillBankError(f'Expand event for "{event.skill_id}" has no skill payload')
            bank.add_skill(Skill.from_dict(event.skill))
    return bank


def save_bank(bank: SkillBank, path: str) -> None:
    """Write the bank as line-oriented JSON, one skill per line, sorted by id."""
    with open(path, "w", encoding="utf-8") as f:
        for skill in bank:
            record = skill.to_dict()
            record["state"] = bank.state_of(skill.id)
            if skill.id in bank.retired:
                record["retired_at"] = bank.retired[skill.id]
            f.write(json.dumps(record, sort_keys=True))
            f.write("\n")


def load_bank(path: str) -> SkillBank:
    bank = SkillBank()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise SkillBankError(f"{path}:{line_no}: malformed skill record: {e}") from e
            bank.add_skill(Skill.from_dict(record))
            state = record.get("state", "active")
            if state == "retired":
                bank.retire_skill(record["id"], step=int(record.get("retired_at", 0)))
            elif state == "inactive":
                bank.active.discard(record["id"])
    return bank


def unit(vector: Iterable[float]) -> np.ndarray:
    """Normalize a vector to unit length."""
    v = np.asarray(vector, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise InvalidSkillError("Cannot normalize a zero vector")
    return v / norm
