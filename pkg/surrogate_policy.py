"""
Capacity-constrained surrogate policy learner.

Competence is a value in [0, 1] per (task type, concept) pair. Group-relative
advantages over each task's G rollouts decide which pairs grow; the total
competence mass is kept under a fixed capacity cap, so learning one concept
can crowd out another.
"""
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from harness.utils.run_settings import ConfigError
from skill_bank import Skill

logger = logging.getLogger(__name__)

STD_EPSILON = 1e-12


class PolicyError(Exception):
    """Base class for policy learner errors."""


class GroupTooSmallError(PolicyError):
    pass


@dataclass(frozen=True)
class LearnConfig:
    group_size: int = 8
    learn_rate: float = 0.02
    capacity_cap: float = 10.0
    skill_transfer_coeff: float = 1.0
    forget_rate: float = 0.0

    def __post_init__(self):
        if self.group_size < 2:
            raise ConfigError(f"group_size must be >= 2, got {self.group_size}")
        if self.learn_rate <= 0:
            raise ConfigError(f"learn_rate must be > 0, got {self.learn_rate}")
        if self.capacity_cap < 0:
            raise ConfigError(f"capacity_cap must be >= 0, got {self.capacity_cap}")
        if self.skill_transfer_coeff < 0:
            raise ConfigError(f"skill_transfer_coeff must be >= 0, got {self.skill_transfer_coeff}")
        if not 0.0 <= self.forget_rate <= 1.0:
            raise ConfigError(f"forget_rate must lie in [0, 1], got {self.forget_rate}")


@dataclass(frozen=True)
class PolicyState:
    """Immutable policy snapshot; updates return a new state."""
    competence: Dict[Tuple[str, str], float] = field(default_factory=dict)
    capacity_cap: float = 10.0
    learn_rate: float = 0.02
    forget_rate: float = 0.0
    task_types: Tuple[str, ...] = ()

    @classmethod
    def from_config(cls, cfg: LearnConfig, task_types: Iterable[str] = ()) -> "PolicyState":
        return cls(
            competence={},
            capacity_cap=cfg.capacity_cap,
            learn_rate=cfg.learn_rate,
            forget_rate=cfg.forget_rate,
            task_types=tuple(sorted(task_types)),
        )

    def competence_of(self, task_type: Optional[str], concept: str) -> float:
        if task_type is None:
            if not self.task_types:
                return 0.0
            return float(np.mean([self.competence.get((t, concept), 0.0) for t in self.task_types]))
        return self.competence.get((task_type, concept), 0.0)

    def total_mass(self) -> float:
        return float(sum(self.competence.values()))


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """
    Group-relative normalized advantages (population std).

    A group with zero reward spread yields all-zero advantages.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupTooSmallError(f"Group of size {r.size} has no defined spread")
    std = r.std()
    if std < STD_EPSILON:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def _group_batch(batch) -> "OrderedDict[str, list]":
    groups: "OrderedDict[str, list]" = OrderedDict()
    for sample in batch:
        groups.setdefault(sample.task.id, []).append(sample)
    return groups


def policy_update(policy: PolicyState, batch, cfg: LearnConfig,
                  skill_lookup: Optional[Callable[[str], Skill]] = None) -> PolicyState:
    """
    One surrogate learning step over a batch of grouped rollouts.

    Args:
        policy: current snapshot
        batch: samples with ``task``, ``support`` (RoutedSet) and ``result`` (RolloutResult),
            G per task
        cfg: learning parameters; its learn_rate drives the step and is recorded
            on the returned state
        skill_lookup: resolves support ids to skills for the skill-transfer term

    Returns:
        New PolicyState with total competence no greater than the capacity cap
    """
    groups = _group_batch(batch)
    for task_id, samples in groups.items():
        if len(samples) < 2:
            raise GroupTooSmallError(f'Task "{task_id}" has {len(samples)} rollout(s); need at least 2')

    deltas: Dict[Tuple[str, str], float] = {}
    exercised = set()
    for samples in groups.values():
        task = samples[0].task
        advantages = group_advantages([s.result.reward for s in samples])
        for concept in task.required_concepts:
            exercised.add((task.task_type, concept))
        if not np.any(advantages > 0):
            continue

        group_size = len(samples)
        for sample, advantage in zip(samples, advantages):
            if advantage <= 0:
                continue
            external = _external_coverage(sample.support, skill_lookup)
            for concept, need in task.required_concepts.items():
                key = (task.task_type, concept)
                current = policy.competence.get(key, 0.0)
                boost = 1.0 + cfg.skill_transfer_coeff * external.get(concept, 0.0)
                step = cfg.learn_rate * advantage * need * boost * (1.0 - current) / group_size
                deltas[key] = deltas.get(key, 0.0) + step

    if not deltas:
        return policy

    competence = dict(policy.competence)
    for key, delta in deltas.items():
        competence[key] = min(1.0, competence.get(key, 0.0) + delta)

    competence = _project_to_capacity(competence, policy.capacity_cap, policy.forget_rate, exercised)
    updated = replace(policy, competence=competence, learn_rate=cfg.learn_rate)
    logger.debug("Policy update: %d pairs moved, mass %.4f", len(deltas), updated.total_mass())
    return updated


def _external_coverage(support, skill_lookup) -> Dict[str, float]:
    if support is None or skill_lookup is None:
        return {}
    coverage: Dict[str, float] = {}
    for skill_id in support.skill_ids:
        for concept, weight in skill_lookup(skill_id).concept_weights.items():
            if weight > coverage.get(concept, 0.0):
                coverage[concept] = weight
    return coverage


def _project_to_capacity(competence: Dict[Tuple[str, str], float], cap: float, forget_rate: float,
                         exercised) -> Dict[Tuple[str, str], float]:
    total = sum(competence.values())
    if total <= cap:
        return competence

    if forget_rate > 0:
        competence = {
            key: value if key in exercised else value * (1.0 - forget_rate)
            for key, value in competence.items()
        }
        total = sum(competence.values())
        if total <= cap:
            return competence

    if cap == 0:
        return {key: 0.0 for key in competence}

    # proportional scaling; nudge the factor down until float rounding respects the cap
    factor = cap / total
    scaled = {key: value * factor for key, value in competence.items()}
    while sum(scaled.values()) > cap:
        factor = float(np.nextafter(factor, 0.0))
        scaled = {key: value * factor for key, value in competence.items()}
    return scaled


def internalization_probe(policy: PolicyState, skill: Skill, threshold: float) -> bool:
    """
    True iff the policy's competence covers at least ``threshold`` of the
    skill's concept mass for its task type. Diagnostic only.
    """
    mass = sum(skill.concept_weights.values())
    if mass <= 0:
        return threshold <= 0
    covered = sum(
        weight * policy.competence_of(skill.task_type, concept)
        for concept, weight in skill.concept_weights.items()
    )
    return covered / mass >= threshold


def save_policy(policy: PolicyState, path: str):
    """Checkpoint as line-JSON: a header line then one line per competence pair."""
    with open(path, "w", encoding="utf-8") as f:
        header = {
            "kind": "policy",
            "capacity_cap": policy.capacity_cap,
            "learn_rate": policy.learn_rate,
            "forget_rate": policy.forget_rate,
            "task_types": list(policy.task_types),
        }
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for (task_type, concept), value in sorted(policy.competence.items()):
            f.write(json.dumps({"task_type": task_type, "concept": concept, "competence": value},
                               sort_keys=True) + "\n")


def load_policy(path: str) -> PolicyState:
    with open(path, "r", encoding="utf-8") as f:
        lines: List[str] = [line for line in f if line.strip()]
    if not lines:
        raise PolicyError(f"{path}: empty policy checkpoint")
    header = json.loads(lines[0])
    if header.get("kind") != "policy":
        raise PolicyError(f"{path}: missing policy header")
    competence = {}
    for line in lines[1:]:
        record = json.loads(line)
        competence[(record["task_type"], record["concept"])] = float(record["competence"])
    return PolicyState(
        competence=competence,
        capacity_cap=float(header["capacity_cap"]),
        learn_rate=float(header["learn_rate"]),
        forget_rate=float(header["forget_rate"]),
        task_types=tuple(header.get("task_types", [])),
    )
