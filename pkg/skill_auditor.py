"""
Leave-one-skill-out auditing.

For an audited skill s, the routed subset V(s) is the validation rollouts
whose routed set contains s. Its marginal external contribution is the paired
difference of performance on V(s) with the current active set and with s
removed (tasks re-routed without s, same seeds). Raw estimates are smoothed
with an exponential moving average seeded by the first observation.
"""
import logging
from collections import Counter
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from harness.utils.run_settings import ConfigError
from sim_environment import NO_EXPOSURE, RolloutResult, SimTask, Split
from skill_bank import NotActiveError, SkillBank
from skill_router import RoutedSet

logger = logging.getLogger(__name__)

DEFAULT_TAU_RETIRE = 0.001
METRICS = ("success", "reward", "expected")


class AuditError(Exception):
    """Base class for audit errors."""


class EmptySubsetError(AuditError):
    pass


class SplitLeakageError(AuditError):
    pass


@dataclass(frozen=True)
class AuditConfig:
    ema_alpha: float = 0.9
    audit_interval: int = 10
    audit_budget: int = 4
    validation_batch: int = 32
    val_rollouts: int = 4
    general_audits_per_cycle: int = 1
    metric: str = "success"

    def __post_init__(self):
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ConfigError(f"ema_alpha must lie in (0, 1], got {self.ema_alpha}")
        if self.audit_interval < 1:
            raise ConfigError(f"audit_interval must be >= 1, got {self.audit_interval}")
        if self.audit_budget < 1:
            raise ConfigError(f"audit_budget must be >= 1, got {self.audit_budget}")
        if self.validation_batch < 1 or self.val_rollouts < 1:
            raise ConfigError("validation_batch and val_rollouts must be >= 1")
        if self.general_audits_per_cycle not in (0, 1):
            raise ConfigError("general_audits_per_cycle must be 0 or 1")
        if self.metric not in METRICS:
            raise ConfigError(f'metric must be one of {", ".join(METRICS)}, got "{self.metric}"')


@dataclass(frozen=True)
class MecRecord:
    skill_id: str
    mec_raw: Optional[float] = None
    mec_smoothed: Optional[float] = None
    exposure: int = 0
    streak: int = 0
    failures: int = 0
    audits_seen: int = 0
    last_routed_step: int = -1
    last_perf_with: Optional[float] = None
    last_perf_without: Optional[float] = None

    def __post_init__(self):
        if min(self.exposure, self.streak, self.failures, self.audits_seen) < 0:
            raise AuditError(f'Negative counter in record for "{self.skill_id}"')
        if self.streak > self.audits_seen:
            raise AuditError(f'Streak exceeds audits seen for "{self.skill_id}"')

    def to_dict(self) -> Dict[str, object]:
        return {
            "skill_id": self.skill_id,
            "mec_raw": self.mec_raw,
            "mec_smoothed": self.mec_smoothed,
            "exposure": self.exposure,
            "streak": self.streak,
            "failures": self.failures,
            "audits_seen": self.audits_seen,
            "last_routed_step": self.last_routed_step,
        }


@dataclass(frozen=True)
class ValidationOutcome:
    task_id: str
    routed: RoutedSet
    success: bool
    reward: float
    replicate: int = 0
    split: Split = Split.VALIDATION
    success_prob: float = 0.0

    @classmethod
    def from_rollout(cls, result: RolloutResult) -> "ValidationOutcome":
        if result.split is not Split.VALIDATION:
            raise SplitLeakageError(f'Rollout for "{result.task_id}" is from the {result.split.value} split')
        return cls(result.task_id, result.routed, result.success, result.reward, result.replicate,
                   result.split, result.success_prob)


@dataclass(frozen=True)
class LosoEstimate:
    skill_id: str
    delta: Optional[float]
    perf_with: Optional[float]
    perf_without: Optional[float]
    routed_count: int
    reruns: int


def routed_subset(outcomes: Sequence[ValidationOutcome], skill_id: str) -> List[ValidationOutcome]:
    return [o for o in outcomes if o.routed.contains(skill_id)]


def perf(outcomes: Sequence[ValidationOutcome], metric: str = "success") -> float:
    """
    Mean validation performance.

    Raises:
        EmptySubsetError: no outcomes to average
    """
    if not outcomes:
        raise EmptySubsetError("Cannot compute performance on an empty subset")
    if metric == "success":
        values = [1.0 if o.success else 0.0 for o in outcomes]
    elif metric == "reward":
        values = [o.reward for o in outcomes]
    elif metric == "expected":
        values = [o.success_prob for o in outcomes]
    else:
        raise ConfigError(f'Unknown metric "{metric}"')
    return float(np.mean(values))


def to_outcomes(results: Iterable[RolloutResult]) -> List[ValidationOutcome]:
    return [ValidationOutcome.from_rollout(r) for r in results]


def _check_validation_split(tasks: Sequence[SimTask]):
    for task in tasks:
        if task.split is not Split.VALIDATION:
            raise SplitLeakageError(f'Task "{task.id}" from the {task.split.value} split offered to an audit')


def loso_estimate(evaluator, bank: SkillBank, skill_id: str, validation_tasks: Sequence[SimTask], seed: int,
                  baseline: Optional[Sequence[ValidationOutcome]] = None,
                  metric: str = "success") -> LosoEstimate:
    """
    Paired leave-one-skill-out estimate with its ingredients.

    Args:
        evaluator: object with ``evaluate(bank, tasks, seed, exclude=...)``
        bank: bank whose active set is audited
        skill_id: skill to leave out
        validation_tasks: validation tasks of this cycle
        seed: root seed shared by both passes
        baseline: outcomes of the with-skill pass when already available
        metric: success, reward or expected

    Returns:
        LosoEstimate; delta is NO_EXPOSURE when no rollout routes to the skill
    """
    if skill_id not in bank.active:
        raise NotActiveError(f'Skill "{skill_id}" is not active')
    _check_validation_split(validation_tasks)

    if baseline is None:
        baseline = to_outcomes(evaluator.evaluate(bank, validation_tasks, seed))
    subset = routed_subset(baseline, skill_id)
    if not subset:
        return LosoEstimate(skill_id, NO_EXPOSURE, None, None, 0, 0)

    routed_ids = {o.task_id for o in subset}
    routed_tasks = [t for t in validation_tasks if t.id in routed_ids]
    without = to_outcomes(evaluator.evaluate(bank, routed_tasks, seed, exclude=frozenset({skill_id})))

    # pair by (task, replicate) so both sides average over the same rollouts
    keys = {(o.task_id, o.replicate) for o in subset}
    without = [o for o in without if (o.task_id, o.replicate) in keys]

    perf_with = perf(subset, metric)
    perf_without = perf(without, metric)
    return LosoEstimate(skill_id, perf_with - perf_without, perf_with, perf_without, len(subset), 1)


def mec_loso(evaluator, bank: SkillBank, skill_id: str, validation_tasks: Sequence[SimTask], seed: int,
             baseline: Optional[Sequence[ValidationOutcome]] = None, metric: str = "success") -> Optional[float]:
    """Marginal external contribution of one skill, or NO_EXPOSURE."""
    return loso_estimate(evaluator, bank, skill_id, validation_tasks, seed, baseline, metric).delta


def ema_update(record: MecRecord, delta_raw: Optional[float], cfg: AuditConfig,
               tau_retire: float = DEFAULT_TAU_RETIRE) -> MecRecord:
    """
    Fold one raw estimate into the smoothed contribution.

    The first audit seeds the average directly. A NO_EXPOSURE audit leaves the
    record untouched, streak included.
    """
    if delta_raw is NO_EXPOSURE:
        return record
    if record.mec_smoothed is None:
        smoothed = float(delta_raw)
    else:
        smoothed = cfg.ema_alpha * delta_raw + (1.0 - cfg.ema_alpha) * record.mec_smoothed
    streak = record.streak + 1 if smoothed < tau_retire else 0
    return replace(record, mec_raw=float(delta_raw), mec_smoothed=smoothed, streak=streak,
                   audits_seen=record.audits_seen + 1)


def routed_usage(outcomes: Iterable[ValidationOutcome]) -> Counter:
    """How often each task-specific skill was retrieved in a validation pass."""
    usage: Counter = Counter()
    for outcome in outcomes:
        usage.update(outcome.routed.task_ids)
    return usage


def select_audit_candidates(records: Mapping[str, MecRecord], usage: Mapping[str, int], cfg: AuditConfig,
                            general_ids: Iterable[str] = ()) -> List[str]:
    """
    Top-M task-specific skills by recent routed usage, then one general skill.

    Unused skills are never padded in. The general skill rotates: the one with
    the fewest completed audits goes first, ties by id.
    """
    used = [(skill_id, count) for skill_id, count in usage.items() if count > 0]
    used.sort(key=lambda item: (-item[1], item[0]))
    candidates = [skill_id for skill_id, _ in used[:cfg.audit_budget]]

    general = sorted(general_ids)
    if cfg.general_audits_per_cycle and general:
        def audits(skill_id: str) -> int:
            record = records.get(skill_id)
            return record.audits_seen if record else 0
        candidates.append(min(general, key=lambda s: (audits(s), s)))
    return candidates


class RecordBook:
    """Per-skill audit state, updated on the control thread only."""

    def __init__(self):
        self.records: Dict[str, MecRecord] = {}

    def __contains__(self, skill_id: str) -> bool:
        return skill_id in self.records

    def get(self, skill_id: str) -> MecRecord:
        return self.records.get(skill_id) or MecRecord(skill_id)

    def observe_pass(self, outcomes: Sequence[ValidationOutcome], step: int):
        """
        Accumulate exposure and routed failures from one validation pass.

        Exposure counts distinct routed tasks, so replicated rollouts of one
        task add one. Failures count every failed routed rollout.
        """
        routed_tasks: Dict[str, set] = {}
        failures: Counter = Counter()
        for outcome in outcomes:
            for skill_id in outcome.routed.skill_ids:
                routed_tasks.setdefault(skill_id, set()).add(outcome.task_id)
                if not outcome.success:
                    failures[skill_id] += 1
        for skill_id, task_ids in routed_tasks.items():
            count = len(task_ids)
            record = self.get(skill_id)
            self.records[skill_id] = replace(
                record,
                exposure=record.exposure + count,
                failures=record.failures + failures[skill_id],
                last_routed_step=step,
            )

    def apply_estimate(self, estimate: LosoEstimate, cfg: AuditConfig, tau_retire: float) -> MecRecord:
        record = ema_update(self.get(estimate.skill_id), estimate.delta, cfg, tau_retire)
        if estimate.delta is not NO_EXPOSURE:
            record = replace(record, last_perf_with=estimate.perf_with, last_perf_without=estimate.perf_without)
        self.records[estimate.skill_id] = record
        return record

    def reset_failures(self, skill_id: str):
        if skill_id in self.records:
            self.records[skill_id] = replace(self.records[skill_id], failures=0)

    def touch(self, skill_id: str, step: int):
        """Mark a skill as routed now (new skills start fresh for LRU)."""
        self.records[skill_id] = replace(self.get(skill_id), last_routed_step=step)
