"""
Retain / retire / expand lifecycle control.

decide() applies the three rules to one audited skill with precedence
Retire > Expand > Retain > Hold. apply_decisions() turns a cycle's decisions
into bank moves under the active regime: retirements first, then at most B
expansions from the largest failure buckets.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from harness.utils.run_settings import ConfigError
from sim_environment import SimTask, Split
from skill_auditor import MecRecord, SplitLeakageError, ValidationOutcome
from skill_bank import EXPANDED_ID_PREFIX, EventKind, LifecycleEvent, Origin, Skill, SkillBank, Tier, unit
from skill_router import RoutedSet, cosine

logger = logging.getLogger(__name__)

TYPE_ANCHOR = ""


class LifecycleError(Exception):
    """Base class for lifecycle errors."""


class CreatorRejection(LifecycleError):
    """The creator refused to produce a skill for a bucket."""


class DuplicateSkillError(CreatorRejection):
    pass


class EmptyBucketError(CreatorRejection):
    pass


class Regime(str, Enum):
    SLIM = "slim"
    ACCUMULATE_ONLY = "accumulate_only"
    ELIMINATE_ONLY = "eliminate_only"
    NO_EXPANSION = "no_expansion"
    RANDOM_AUDIT = "random_audit"
    FIXED_SIZE = "fixed_size"

    @property
    def allows_retirement(self) -> bool:
        return self is not Regime.ACCUMULATE_ONLY

    @property
    def allows_expansion(self) -> bool:
        return self not in (Regime.ELIMINATE_ONLY, Regime.NO_EXPANSION)


class Decision(str, Enum):
    RETAIN = "retain"
    RETIRE = "retire"
    EXPAND = "expand"
    HOLD = "hold"


@dataclass(frozen=True)
class LifecycleConfig:
    tau_keep: float = 0.03
    tau_retire: float = 0.001
    tau_expand: float = 0.40
    patience: int = 3
    min_exposure: int = 30
    n_expand: int = 20
    expand_budget: int = 2
    regime: Regime = Regime.SLIM
    dedup_threshold: float = 0.95
    expand_boost: float = 0.35
    random_retain_prob: float = 0.8
    random_expand_prob: float = 0.1
    withdrawal_horizon: float = 0.75
    max_moves_per_cycle: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "regime", Regime(self.regime))
        except ValueError:
            raise ConfigError(f'Unknown regime "{self.regime}"; choose from {", ".join(r.value for r in Regime)}')
        if not self.tau_retire < self.tau_keep:
            raise ConfigError(f"tau_retire ({self.tau_retire}) must be below tau_keep ({self.tau_keep})")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.min_exposure < 1:
            raise ConfigError(f"min_exposure must be >= 1, got {self.min_exposure}")
        if self.expand_budget < 0:
            raise ConfigError(f"expand_budget must be >= 0, got {self.expand_budget}")
        if self.n_expand < 1:
            raise ConfigError(f"n_expand must be >= 1, got {self.n_expand}")
        for name in ("random_retain_prob", "random_expand_prob", "dedup_threshold", "expand_boost"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if not 0.0 < self.withdrawal_horizon <= 1.0:
            raise ConfigError(f"withdrawal_horizon must lie in (0, 1], got {self.withdrawal_horizon}")
        if self.max_moves_per_cycle < 0:
            raise ConfigError("max_moves_per_cycle must be >= 0 (0 means audit budget + expansion budget)")


LIFECYCLE_PRESETS: Dict[str, Dict[str, float]] = {
    "alfworld": {"tau_keep": 0.03, "tau_retire": 0.001, "tau_expand": 0.40, "patience": 3,
                 "min_exposure": 30, "n_expand": 20, "expand_budget": 2},
    "searchqa": {"tau_keep": 0.05, "tau_retire": 0.001, "tau_expand": 0.40, "patience": 3,
                 "min_exposure": 20, "n_expand": 15, "expand_budget": 3},
}


def retire_predicate(record: MecRecord, cfg: LifecycleConfig) -> bool:
    return (record.mec_smoothed is not None
            and record.mec_smoothed < cfg.tau_retire
            and record.exposure >= cfg.min_exposure
            and record.streak >= cfg.patience)


def expand_predicate(record: MecRecord, perf_with: Optional[float], cfg: LifecycleConfig) -> bool:
    return (perf_with is not None
            and record.mec_smoothed is not None
            and perf_with < cfg.tau_expand
            and record.failures >= cfg.n_expand
            and record.mec_smoothed < cfg.tau_keep)


def decide(record: MecRecord, perf_with: Optional[float], cfg: LifecycleConfig) -> Decision:
    if retire_predicate(record, cfg):
        return Decision.RETIRE
    if expand_predicate(record, perf_with, cfg):
        return Decision.EXPAND
    if record.mec_smoothed is not None and record.mec_smoothed >= cfg.tau_keep:
        return Decision.RETAIN
    return Decision.HOLD


@dataclass
class FailureBucket:
    """Validation failures routed to the same anchor skill and task type."""
    anchor_skill_id: str
    task_type: str
    failed_tasks: List[Tuple[SimTask, RoutedSet]] = field(default_factory=list)
    opened_step: int = 0

    @property
    def count(self) -> int:
        return len(self.failed_tasks)

    @property
    def task_ids(self) -> List[str]:
        return [task.id for task, _ in self.failed_tasks]


class BucketBook:
    """Failure buckets keyed by (task type, anchor). The anchor "" holds type-level failures."""

    def __init__(self):
        self.buckets: Dict[Tuple[str, str], FailureBucket] = {}
        self.type_perf: Dict[str, float] = {}

    def __iter__(self):
        return iter(self.buckets[key] for key in sorted(self.buckets))

    def get(self, task_type: str, anchor_id: str) -> Optional[FailureBucket]:
        return self.buckets.get((task_type, anchor_id))

    def for_anchor(self, anchor_id: str) -> List[FailureBucket]:
        return [b for b in self if b.anchor_skill_id == anchor_id]

    def observe(self, outcomes: Sequence[ValidationOutcome], tasks_by_id: Mapping[str, SimTask], step: int):
        """File this pass's failures and refresh per-type validation success."""
        totals: Dict[str, List[int]] = {}
        for outcome in outcomes:
            if outcome.split is not Split.VALIDATION:
                raise SplitLeakageError(f'Outcome for "{outcome.task_id}" is not from the validation split')
            task = tasks_by_id[outcome.task_id]
            tally = totals.setdefault(task.task_type, [0, 0])
            tally[1] += 1
            if outcome.success:
                tally[0] += 1
                continue
            key = (task.task_type, outcome.routed.anchor_id)
            bucket = self.buckets.get(key)
            if bucket is None:
                bucket = self.buckets[key] = FailureBucket(outcome.routed.anchor_id, task.task_type,
                                                           opened_step=step)
            bucket.failed_tasks.append((task, outcome.routed))
        self.type_perf = {t: s / n for t, (s, n) in totals.items()}

    def reset(self, bucket: FailureBucket):
        bucket.failed_tasks.clear()


Creator = Callable[[FailureBucket, SkillBank, np.random.Generator], Skill]


def next_expanded_id(bank: SkillBank, task_type: str) -> str:
    seq = sum(1 for s in bank.task_pools.get(task_type, ()) if s.startswith(EXPANDED_ID_PREFIX)) + 1
    while f"{EXPANDED_ID_PREFIX}{task_type}_{seq:03d}" in bank:
        seq += 1
    return f"{EXPANDED_ID_PREFIX}{task_type}_{seq:03d}"


def dominant_uncovered_concept(bucket: FailureBucket, bank: SkillBank) -> str:
    """Concept with the largest need left open by the routed skills, ties by id."""
    gap: Dict[str, float] = {}
    for task, routed in bucket.failed_tasks:
        coverage: Dict[str, float] = {}
        for skill_id in routed.skill_ids:
            if skill_id in bank:
                for concept, weight in bank.get(skill_id).concept_weights.items():
                    coverage[concept] = max(coverage.get(concept, 0.0), weight)
        for concept, need in task.required_concepts.items():
            gap[concept] = gap.get(concept, 0.0) + need * (1.0 - coverage.get(concept, 0.0))
    return min(gap, key=lambda c: (-gap[c], c))


def synth_create(bucket: FailureBucket, bank: SkillBank, rng: Optional[np.random.Generator] = None,
                 boost: float = 0.35, dedup_threshold: float = 0.95, step: int = 0) -> Skill:
    """
    Synthesize a task-specific skill for a failure bucket.

    The embedding is the renormalized mean of the failed tasks that need the
    dominant uncovered concept; the skill's weight on that concept is
    ``boost``. Rejected when it sits within ``dedup_threshold`` cosine of any
    same-type skill, retired ones included.

    Raises:
        EmptyBucketError: bucket holds no failures
        DuplicateSkillError: too close to an existing skill
    """
    if bucket.count == 0:
        raise EmptyBucketError(f'Bucket ({bucket.task_type}, "{bucket.anchor_skill_id}") is empty')

    concept = dominant_uncovered_concept(bucket, bank)
    members = [task for task, _ in bucket.failed_tasks if concept in task.required_concepts]
    embedding = unit(np.mean([task.embedding for task in members], axis=0))

    for skill_id in sorted(bank.task_pools.get(bucket.task_type, ())):
        similarity = cosine(embedding, bank.get(skill_id).embedding)
        if similarity >= dedup_threshold:
            raise DuplicateSkillError(
                f'Candidate for {bucket.task_type} duplicates "{skill_id}" (cosine {similarity:.3f})')

    return Skill(
        id=next_expanded_id(bank, bucket.task_type),
        tier=Tier.TASK_SPECIFIC,
        embedding=embedding,
        task_type=bucket.task_type,
        concept_weights={concept: boost},
        origin=Origin.EXPANDED,
        created_at_step=step,
    )


def _anchor_age(bank: SkillBank, anchor_id: str) -> int:
    if anchor_id == TYPE_ANCHOR or anchor_id not in bank:
        return -1
    return bank.get(anchor_id).created_at_step


def _bucket_order(bank: SkillBank):
    # largest first, older anchor first on ties
    return lambda b: (-b.count, _anchor_age(bank, b.anchor_skill_id), b.anchor_skill_id, b.task_type)


def _event(step: int, skill_id: str, kind: EventKind, record: Optional[MecRecord], reason: str = "",
           **extra) -> LifecycleEvent:
    record = record or MecRecord(skill_id)
    return LifecycleEvent(
        step=step, skill_id=skill_id, kind=kind,
        mec_raw=record.mec_raw, mec_smoothed=record.mec_smoothed,
        exposure=record.exposure, streak=record.streak, failures=record.failures,
        reason=reason, **extra,
    )


def move_budget(cfg: LifecycleConfig, audit_budget: int) -> int:
    return cfg.max_moves_per_cycle or audit_budget + cfg.expand_budget


def expand_from(bank: SkillBank, bucket: FailureBucket, buckets: BucketBook, creator: Creator,
                rng: np.random.Generator, step: int, reason: str) -> LifecycleEvent:
    """Run the creator on one bucket; returns an Expand event or a Skip event on rejection."""
    try:
        skill = creator(bucket, bank, rng)
    except CreatorRejection as e:
        logger.warning("Expansion from %s/%s rejected: %s", bucket.task_type, bucket.anchor_skill_id or "-", e)
        return _event(step, bucket.anchor_skill_id or f"type:{bucket.task_type}", EventKind.SKIP, None,
                      reason=f"creator rejected: {e}", anchor_id=bucket.anchor_skill_id)
    bank.add_skill(skill)
    event = _event(step, skill.id, EventKind.EXPAND, None, reason=reason, anchor_id=bucket.anchor_skill_id,
                   source_tasks=sorted(set(bucket.task_ids)), skill=skill.to_dict())
    buckets.reset(bucket)
    return event


def apply_decisions(bank: SkillBank, decisions: Mapping[str, Decision], buckets: BucketBook, creator: Creator,
                    cfg: LifecycleConfig, step: int = 0, rng: Optional[np.random.Generator] = None,
                    records: Optional[Mapping[str, MecRecord]] = None,
                    max_moves: Optional[int] = None) -> Tuple[SkillBank, List[LifecycleEvent]]:
    """
    Apply one audit cycle's decisions.

    Args:
        bank: bank before the cycle (left untouched)
        decisions: audited skill id to rule decision, in audit order
        buckets: failure buckets; expanded buckets are reset in place
        creator: skill generator
        cfg: lifecycle parameters and regime
        step: audit step stamped on events and new skills
        rng: randomness for the random-audit regime and the creator
        records: audit records, for event fields and the expansion predicate
        max_moves: cap on retirements plus expansions this cycle

    Returns:
        (new bank, events)
    """
    bank = bank.copy()
    rng = rng if rng is not None else np.random.default_rng(0)
    records = records or {}
    cap = max_moves if max_moves is not None else cfg.expand_budget + len(decisions)
    events: List[LifecycleEvent] = []
    moves = 0
    expand_anchors: List[str] = []

    for skill_id, decision in decisions.items():
        record = records.get(skill_id)
        wants_expand = decision is Decision.EXPAND
        if cfg.regime is Regime.RANDOM_AUDIT:
            decision = Decision.RETAIN if rng.random() < cfg.random_retain_prob else Decision.RETIRE
            wants_expand = rng.random() < cfg.random_expand_prob
            reason = "random audit draw"
        else:
            reason = "rule"
            if decision is Decision.RETIRE and record is not None:
                wants_expand = expand_predicate(record, record.last_perf_with, cfg)
            if decision is Decision.RETIRE and not cfg.regime.allows_retirement:
                decision, reason = Decision.HOLD, "retirement disabled"

        if wants_expand and cfg.regime.allows_expansion:
            expand_anchors.append(skill_id)
        elif wants_expand and decision is Decision.EXPAND:
            reason = "expansion disabled"

        if decision is Decision.RETIRE:
            if moves >= cap:
                events.append(_event(step, skill_id, EventKind.HOLD, record, "move cap reached"))
                continue
            bank.retire_skill(skill_id, step=step)
            moves += 1
            events.append(_event(step, skill_id, EventKind.RETIRE, record, reason))
        elif decision is Decision.RETAIN:
            events.append(_event(step, skill_id, EventKind.RETAIN, record, reason))
        else:
            if decision is Decision.EXPAND and reason == "rule":
                reason = "expansion requested"
            events.append(_event(step, skill_id, EventKind.HOLD, record, reason))

    if not cfg.regime.allows_expansion:
        return bank, events

    candidates = []
    for anchor in expand_anchors:
        candidates.extend(b for b in buckets.for_anchor(anchor) if b.count > 0)
    for bucket in buckets.for_anchor(TYPE_ANCHOR):
        perf_type = buckets.type_perf.get(bucket.task_type)
        if bucket.count >= cfg.n_expand and perf_type is not None and perf_type < cfg.tau_expand:
            candidates.append(bucket)
    candidates.sort(key=_bucket_order(bank))

    budget = min(cfg.expand_budget, max(0, cap - moves))
    for bucket in candidates[:budget]:
        events.append(expand_from(bank, bucket, buckets, creator, rng, step, "failure bucket"))
    return bank, events


def fixed_size_adjust(bank: SkillBank, cfg: LifecycleConfig, target_size: int, buckets: BucketBook,
                      creator: Creator, records: Mapping[str, MecRecord], step: int = 0,
                      rng: Optional[np.random.Generator] = None,
                      protect: Sequence[str] = ()) -> Tuple[SkillBank, List[LifecycleEvent]]:
    """
    Restore the active-set size: least-recently-routed removal when above the
    target, expansion from the largest pending buckets when below it.
    """
    bank = bank.copy()
    rng = rng if rng is not None else np.random.default_rng(0)
    events: List[LifecycleEvent] = []
    protected = set(protect)

    while len(bank.active) > target_size:
        removable = [s for s in bank.active if s not in protected] or list(bank.active)
        victim = min(removable, key=lambda s: (records[s].last_routed_step if s in records else -1, s))
        bank.retire_skill(victim, step=step)
        events.append(_event(step, victim, EventKind.RETIRE, records.get(victim), "fixed size: LRU removal"))

    pending = sorted((b for b in buckets if b.count > 0), key=_bucket_order(bank))
    for bucket in pending:
        if len(bank.active) >= target_size:
            break
        events.append(expand_from(bank, bucket, buckets, creator, rng, step, "fixed size: refill"))
    return bank, events


def withdrawal_target(initial_size: int, step: int, total_steps: int, horizon: float) -> int:
    """Active-set size the zero-skill schedule allows at ``step``."""
    cutoff = horizon * total_steps
    if step >= cutoff:
        return 0
    return int(np.ceil(initial_size * (1.0 - step / cutoff)))


def withdraw_to_target(bank: SkillBank, target_size: int, records: Mapping[str, MecRecord],
                       step: int = 0) -> Tuple[SkillBank, List[LifecycleEvent]]:
    """Retire the lowest-contribution skills until the active set fits the target."""
    bank = bank.copy()
    events: List[LifecycleEvent] = []

    def key(skill_id: str):
        record = records.get(skill_id)
        # unaudited skills count as neutral and go after audited ones at the same score
        if record is None or record.mec_smoothed is None:
            return 0.0, 1, skill_id
        return record.mec_smoothed, 0, skill_id

    for skill_id in sorted(bank.active, key=key)[:max(0, len(bank.active) - target_size)]:
        bank.retire_skill(skill_id, step=step)
        events.append(_event(step, skill_id, EventKind.RETIRE, records.get(skill_id), "withdrawal schedule"))
    return bank, events
