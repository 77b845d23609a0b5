"""
Synthetic task environment with ground-truth skill utilities.

Every task needs a few concepts; a concept is covered by policy competence
first and by the best routed skill for whatever competence leaves open:

    covered_c = comp(type, c) + (1 - comp(type, c)) * max_s w_s(c)
    p = expit(base(task) + concept_gain * sum_c need_c * covered_c - clutter_coeff * |support|)

Rollouts draw one uniform per (root seed, stream, cycle, task, replicate), so
with-skill and without-skill evaluations of the same task share their noise.
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit

from harness.utils.run_settings import ConfigError
from skill_bank import Skill, SkillBank, Tier, unit
from skill_router import RetrievalConfig, RoutedSet, route
from surrogate_policy import PolicyState

logger = logging.getLogger(__name__)

TYPE_NAMES = ("pick", "look", "clean", "heat", "cool", "pick2")
NO_EXPOSURE = None


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


class Stream(IntEnum):
    """Seed streams; one per consumer of randomness."""
    WORLD = 0
    TRAIN_SAMPLE = 1
    TRAIN = 2
    VALIDATION = 3
    TEST = 4
    CREATOR = 5
    REGIME = 6
    THEORY = 7


def derive_seed(root: int, *keys: int) -> int:
    """Deterministic 32-bit seed for a tuple of non-negative integer keys."""
    return int(np.random.SeedSequence(int(root), spawn_key=tuple(int(k) for k in keys)).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class SimTask:
    id: str
    index: int
    task_type: str
    embedding: np.ndarray
    required_concepts: Dict[str, float]
    split: Split
    base_logit: float = 0.0
    primary_concept: str = ""

    def __post_init__(self):
        if not self.required_concepts:
            raise ValueError(f'Task "{self.id}" has no required concepts')
        if abs(float(np.linalg.norm(self.embedding)) - 1.0) > 1e-9:
            raise ValueError(f'Task "{self.id}" embedding is not unit norm')


@dataclass(frozen=True)
class EnvConfig:
    n_types: int = 6
    concepts_per_type: int = 4
    general_concepts: int = 3
    embedding_dim: int = 16
    clutter_coeff: float = 0.18
    concept_gain: float = 3.0
    base_logit: float = -2.2
    type_logit_spread: float = 0.3
    difficulty_spread: float = 0.3
    concept_offset: float = 1.5
    embedding_noise: float = 0.25
    zipf_exponent: float = 1.0
    secondary_need_prob: float = 0.4
    general_need_prob: float = 0.5
    general_need: float = 0.5
    invalid_action_penalty: float = 0.0
    noise_seed: int = 0
    train_size: int = 16
    val_size: int = 32
    test_size: int = 128
    train_pool_size: int = 384

    def __post_init__(self):
        if not 1 <= self.n_types <= len(TYPE_NAMES) * 4:
            raise ConfigError(f"n_types out of range: {self.n_types}")
        if self.concepts_per_type < 1:
            raise ConfigError(f"concepts_per_type must be >= 1, got {self.concepts_per_type}")
        if self.clutter_coeff < 0:
            raise ConfigError(f"clutter_coeff must be >= 0, got {self.clutter_coeff}")
        if self.embedding_dim < 2:
            raise ConfigError(f"embedding_dim must be >= 2, got {self.embedding_dim}")
        for name in ("invalid_action_penalty", "general_need_prob", "general_need", "secondary_need_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        for name in ("train_size", "val_size", "test_size", "train_pool_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def n_concepts(self) -> int:
        return self.n_types * self.concepts_per_type + self.general_concepts

    @property
    def type_names(self) -> List[str]:
        names = list(TYPE_NAMES)
        while len(names) < self.n_types:
            names.append(f"type{len(names)}")
        return names[:self.n_types]


@dataclass(frozen=True)
class RolloutResult:
    task_id: str
    success: bool
    reward: float
    routed: RoutedSet
    replicate: int = 0
    split: Split = Split.VALIDATION
    success_prob: float = 0.0


def support_coverage(support: RoutedSet, bank: SkillBank) -> Dict[str, float]:
    """Best routed skill weight per concept."""
    coverage: Dict[str, float] = {}
    for skill_id in support.skill_ids:
        for concept, weight in bank.get(skill_id).concept_weights.items():
            if weight > coverage.get(concept, 0.0):
                coverage[concept] = weight
    return coverage


def success_logit(task: SimTask, policy: PolicyState, support: RoutedSet, env: EnvConfig,
                  bank: SkillBank) -> float:
    coverage = support_coverage(support, bank)
    gained = 0.0
    for concept, need in task.required_concepts.items():
        comp = policy.competence_of(task.task_type, concept)
        covered = comp + (1.0 - comp) * coverage.get(concept, 0.0)
        gained += need * covered
    return task.base_logit + env.concept_gain * gained - env.clutter_coeff * len(support)


def success_prob(task: SimTask, policy: PolicyState, support: RoutedSet, env: EnvConfig,
                 bank: SkillBank) -> float:
    return float(np.clip(expit(success_logit(task, policy, support, env, bank)), 0.0, 1.0))


def rollout(task: SimTask, policy: PolicyState, support: RoutedSet, env: EnvConfig, seed: int,
            bank: SkillBank, replicate: int = 0) -> RolloutResult:
    """One Bernoulli rollout; the same seed always gives the same outcome."""
    p = success_prob(task, policy, support, env, bank)
    draw = np.random.default_rng(seed).random()
    success = bool(draw < p)
    reward = 1.0 if success else -env.invalid_action_penalty
    return RolloutResult(task.id, success, reward, support, replicate, task.split, p)


def empty_support(task: SimTask) -> RoutedSet:
    return RoutedSet(task_id=task.id)


class RolloutEvaluator:
    """
    Routes and rolls out a set of tasks against a bank.

    Seeds derive from (root seed, stream, cycle, task index, replicate), so
    the outcome of a task never depends on the active set used or on the
    order tasks are evaluated in.
    """

    def __init__(self, env: EnvConfig, policy: PolicyState, retrieval: RetrievalConfig,
                 stream: Stream = Stream.VALIDATION, cycle: int = 0, replicates: int = 1):
        self.env = env
        self.policy = policy
        self.retrieval = retrieval
        self.stream = stream
        self.cycle = cycle
        self.replicates = replicates

    def evaluate(self, bank: SkillBank, tasks: Sequence[SimTask], seed: int,
                 exclude: FrozenSet[str] = frozenset(), with_skills: bool = True) -> List[RolloutResult]:
        results = []
        for task in tasks:
            if with_skills:
                support = route(bank.active_view(task.task_type), task, self.retrieval, exclude)
            else:
                support = empty_support(task)
            for replicate in range(self.replicates):
                task_seed = derive_seed(seed, self.stream, self.cycle, task.index, replicate)
                results.append(rollout(task, self.policy, support, self.env, task_seed, bank, replicate))
        return results


def expected_success(env: EnvConfig, policy: PolicyState, bank: SkillBank, tasks: Sequence[SimTask],
                     retrieval: RetrievalConfig, with_skills: bool = True,
                     exclude: FrozenSet[str] = frozenset()) -> float:
    """Exact success expectation over tasks (no sampling)."""
    if not tasks:
        return 0.0
    total = 0.0
    for task in tasks:
        support = route(bank.active_view(task.task_type), task, retrieval, exclude) if with_skills \
            else empty_support(task)
        total += success_prob(task, policy, support, env, bank)
    return total / len(tasks)


def oracle_mec(env: EnvConfig, policy: PolicyState, bank: SkillBank, skill_id: str,
               tasks: Sequence[SimTask], retrieval: RetrievalConfig) -> Optional[float]:
    """
    Ground-truth leave-one-skill-out contribution by exact expectation.

    Returns NO_EXPOSURE when no task routes to the skill.
    """
    diffs = []
    for task in tasks:
        view = bank.active_view(task.task_type)
        with_support = route(view, task, retrieval)
        if not with_support.contains(skill_id):
            continue
        without_support = route(view, task, retrieval, frozenset({skill_id}))
        diffs.append(success_prob(task, policy, with_support, env, bank)
                     - success_prob(task, policy, without_support, env, bank))
    if not diffs:
        return NO_EXPOSURE
    return float(np.mean(diffs))


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    description: str
    general_skills: int = 5
    task_skills: int = 33
    uncovered_per_type: int = 1
    twins: bool = True
    noisy: bool = True
    keep_fraction: float = 1.0
    corrupted_fraction: float = 0.0
    mismatched_fraction: float = 0.0
    balanced_batches: bool = False
    env_overrides: Mapping[str, float] = field(default_factory=dict)
    learn_overrides: Mapping[str, float] = field(default_factory=dict)


# one general concept needed in full by every task
FOCUS_GENERAL_ENV = {"general_concepts": 1, "general_need_prob": 1.0, "general_need": 1.0, "base_logit": -3.4}

SCENARIOS: Dict[str, ScenarioPreset] = {
    "reference": ScenarioPreset(
        "reference", "38 initial skills with twins, junk near each type centroid and an uncovered frequent concept"),
    "capacity_limited": ScenarioPreset(
        "capacity_limited", "bounded capacity with forgetting; a frequent general concept fits in it",
        general_skills=2, twins=False, balanced_batches=True, env_overrides=FOCUS_GENERAL_ENV,
        learn_overrides={"capacity_cap": 14.0, "forget_rate": 0.5, "learn_rate": 0.04}),
    "capacity_saturated": ScenarioPreset(
        "capacity_saturated", "capacity_limited with a cap too small to hold the frequent general concept",
        general_skills=2, twins=False, balanced_batches=True, env_overrides=FOCUS_GENERAL_ENV,
        learn_overrides={"capacity_cap": 1.0, "forget_rate": 0.5, "learn_rate": 0.04}),
    "noisy_init": ScenarioPreset(
        "noisy_init", "30% corrupted skills plus 30% mismatched extra skills",
        corrupted_fraction=0.3, mismatched_fraction=0.3),
    "weak_init": ScenarioPreset(
        "weak_init", "only a quarter of the task-specific skills", keep_fraction=0.25),
    "empty_bank": ScenarioPreset(
        "empty_bank", "no initial skills", general_skills=0, task_skills=0),
}

STALE_OFFSET = 0.5


@dataclass
class World:
    """Tasks per split, the initial bank and the ground-truth layout behind them."""
    env: EnvConfig
    tasks: Dict[Split, List[SimTask]]
    bank: SkillBank
    concepts_by_type: Dict[str, List[str]]
    general_concepts: List[str]
    uncovered: Dict[str, List[str]]
    scenario: str = "reference"

    @property
    def type_names(self) -> List[str]:
        return list(self.concepts_by_type)

    @property
    def preset(self) -> ScenarioPreset:
        return _scenario(self.scenario)

    def split(self, split: Split) -> List[SimTask]:
        return self.tasks[split]

    def task_ids(self, split: Split) -> FrozenSet[str]:
        return frozenset(t.id for t in self.tasks[split])

    def __iter__(self):
        yield self.tasks
        yield self.bank


def scenario_env(env: EnvConfig, scenario: str) -> EnvConfig:
    preset = _scenario(scenario)
    if not preset.env_overrides:
        return env
    return replace(env, **preset.env_overrides)


def _scenario(name: str) -> ScenarioPreset:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ConfigError(f'Unknown scenario "{name}"; choose from {", ".join(SCENARIOS)}')


def _type_frame(rng: np.random.Generator, dim: int, concepts: int) -> List[np.ndarray]:
    """Centroid direction followed by one direction per concept, orthonormal when dim allows it."""
    if dim <= concepts:
        return [unit(rng.normal(size=dim)) for _ in range(concepts + 1)]
    q, _ = np.linalg.qr(rng.normal(size=(dim, concepts + 1)))
    return [unit(q[:, j]) for j in range(concepts + 1)]


def generate_world(env: EnvConfig, rng: np.random.Generator, scenario: str = "reference") -> World:
    """
    Build tasks for every split plus the scenario's initial bank.

    Each type owns an orthonormal frame: a centroid direction and one
    direction per concept. Tasks sit at the centroid shifted by concept_offset
    toward their primary concept, so a skill near one concept is far from
    tasks of another while a skill at the centroid reaches the whole type.
    Concepts are ranked by Zipf frequency; the most frequent ones stay
    uncovered by the initial bank.
    """
    preset = _scenario(scenario)
    env = scenario_env(env, scenario)
    dim = env.embedding_dim
    types = env.type_names

    centroids: Dict[str, np.ndarray] = {}
    concepts_by_type: Dict[str, List[str]] = {}
    concept_dirs: Dict[str, np.ndarray] = {}
    idx = 0
    for t in types:
        frame = _type_frame(rng, dim, env.concepts_per_type)
        centroids[t] = frame[0]
        concepts_by_type[t] = []
        for direction in frame[1:]:
            concept = f"c{idx:02d}"
            concepts_by_type[t].append(concept)
            concept_dirs[concept] = direction
            idx += 1
    general_concepts = [f"c{idx + i:02d}" for i in range(env.general_concepts)]

    offsets = rng.normal(0.0, env.type_logit_spread, size=len(types))
    offsets -= offsets.mean()
    type_base = {t: env.base_logit + float(o) for t, o in zip(types, offsets)}

    ranks = np.arange(1, env.concepts_per_type + 1, dtype=np.float64)
    primary_probs = ranks ** -env.zipf_exponent
    primary_probs /= primary_probs.sum()

    def noisy(vector: np.ndarray) -> np.ndarray:
        return unit(vector + rng.normal(0.0, env.embedding_noise / np.sqrt(dim), size=dim))

    tasks: Dict[Split, List[SimTask]] = {}
    index = 0
    sizes = {Split.TRAIN: env.train_pool_size, Split.VALIDATION: env.val_size, Split.TEST: env.test_size}
    for split, size in sizes.items():
        tasks[split] = []
        for n in range(size):
            t = types[int(rng.integers(len(types)))]
            own = concepts_by_type[t]
            primary = own[int(rng.choice(len(own), p=primary_probs))]
            required = {primary: 1.0}
            if len(own) > 1 and rng.random() < env.secondary_need_prob:
                others = [c for c in own if c != primary]
                required[others[int(rng.integers(len(others)))]] = 0.5
            if general_concepts and rng.random() < env.general_need_prob:
                required[general_concepts[int(rng.integers(len(general_concepts)))]] = env.general_need
            embedding = noisy(centroids[t] + env.concept_offset * concept_dirs[primary])
            base = type_base[t] + float(rng.normal(0.0, env.difficulty_spread))
            tasks[split].append(SimTask(
                id=f"{split.value[:3]}-{n:04d}", index=index, task_type=t, embedding=embedding,
                required_concepts=required, split=split, base_logit=base, primary_concept=primary,
            ))
            index += 1

    uncovered = {t: sorted(concepts_by_type[t][:preset.uncovered_per_type]) for t in types}

    skills: List[Skill] = []
    skills.extend(_general_skills(preset, env, rng, general_concepts, noisy))
    skills.extend(_task_skills(preset, env, rng, types, concepts_by_type, uncovered, centroids,
                               concept_dirs, noisy))

    bank = SkillBank(skills)
    logger.info("Generated %s world: %d tasks, %d skills", scenario,
                sum(len(v) for v in tasks.values()), len(bank))
    return World(env, tasks, bank, concepts_by_type, general_concepts, uncovered, scenario)


def _general_skills(preset: ScenarioPreset, env: EnvConfig, rng, general_concepts, noisy) -> List[Skill]:
    # the empty skill comes first so the general audit rotation reaches it early
    kinds = [("noisy", None)] if preset.noisy else []
    kinds.extend(("cover", c) for c in general_concepts)
    if preset.twins and general_concepts:
        kinds.append(("twin", general_concepts[0]))

    skills: List[Skill] = []
    first_cover: Dict[str, Skill] = {}
    for n in range(preset.general_skills):
        kind, concept = kinds[n] if n < len(kinds) else ("noisy", None)
        if kind == "cover":
            weights = {concept: float(rng.uniform(0.6, 0.9))}
        elif kind == "twin":
            weights = dict(first_cover[concept].concept_weights)
        else:
            weights = {}
        skill = Skill(id=f"gen_{n:02d}", tier=Tier.GENERAL, embedding=noisy(rng.normal(size=env.embedding_dim)),
                      concept_weights=weights)
        if kind == "cover":
            first_cover.setdefault(concept, skill)
        skills.append(skill)
    return skills


def _task_skills(preset, env, rng, types, concepts_by_type, uncovered, centroids, concept_dirs,
                 noisy) -> List[Skill]:
    # per type: one skill per covered concept, a hub at the centroid, a stale skill leaning toward
    # the uncovered concept, a twin, then partial covers
    plans: Dict[str, List[tuple]] = {}
    for t in types:
        covered = [c for c in concepts_by_type[t] if c not in uncovered[t]]
        kinds = [("cover", c) for c in covered]
        if preset.noisy:
            kinds.append(("hub", None))
            if uncovered[t]:
                kinds.append(("stale", uncovered[t][0]))
        if preset.twins and covered:
            kinds.append(("twin", covered[0]))
        kinds.extend(("partial", c) for c in covered)
        plans[t] = kinds

    allocation = {t: 0 for t in types}
    for n in range(preset.task_skills):
        allocation[types[n % len(types)]] += 1

    skills: List[Skill] = []
    for t in types:
        kinds = plans[t]
        if not kinds:
            continue
        first_cover: Dict[str, Skill] = {}
        count = allocation[t]
        if preset.keep_fraction < 1.0:
            count = int(round(count * preset.keep_fraction))
        for n in range(count):
            kind, concept = kinds[n % len(kinds)]
            skill_id = f"{t}_{n:02d}"
            if kind == "cover" or (kind == "twin" and concept not in first_cover):
                embedding = noisy(centroids[t] + env.concept_offset * concept_dirs[concept])
                weights = {concept: float(rng.uniform(0.7, 0.95))}
            elif kind == "twin":
                original = first_cover[concept]
                embedding = unit(original.embedding + rng.normal(0.0, 1e-3, size=env.embedding_dim))
                weights = dict(original.concept_weights)
            elif kind == "hub":
                embedding = noisy(centroids[t])
                weights = {}
            elif kind == "stale":
                embedding = noisy(centroids[t] + STALE_OFFSET * concept_dirs[concept])
                weights = {}
            else:
                embedding = noisy(centroids[t] + env.concept_offset * concept_dirs[concept])
                weights = {concept: float(rng.uniform(0.2, 0.4))}
            skill = Skill(id=skill_id, tier=Tier.TASK_SPECIFIC, embedding=embedding, task_type=t,
                          concept_weights=weights)
            if kind == "cover":
                first_cover.setdefault(concept, skill)
            skills.append(skill)

    corrupted = int(round(len(skills) * preset.corrupted_fraction))
    corrupted_idx = rng.choice(len(skills), size=corrupted, replace=False).tolist() if corrupted else []
    for i in sorted(corrupted_idx):
        skills[i] = replace(skills[i], concept_weights={})

    mismatched = int(round(len(skills) * preset.mismatched_fraction))
    for n in range(mismatched):
        t = types[n % len(types)]
        other = types[(n + 1) % len(types)]
        concept = concepts_by_type[other][int(rng.integers(len(concepts_by_type[other])))]
        skills.append(Skill(id=f"{t}_mis_{n:02d}", tier=Tier.TASK_SPECIFIC, embedding=noisy(centroids[t]),
                            task_type=t, concept_weights={concept: float(rng.uniform(0.5, 0.9))}))
    return skills


def sample_train_batch(world: World, size: int, seed: int, step: int) -> List[SimTask]:
    """
    Training tasks for one step. Balanced scenarios give every type an equal
    share, the remainder rotating with the step.
    """
    rng = np.random.default_rng(derive_seed(seed, Stream.TRAIN_SAMPLE, step))
    pool = world.tasks[Split.TRAIN]
    if not world.preset.balanced_batches:
        picks = rng.choice(len(pool), size=min(size, len(pool)), replace=False)
        return [pool[i] for i in sorted(picks.tolist())]

    by_type: Dict[str, List[int]] = {}
    for i, task in enumerate(pool):
        by_type.setdefault(task.task_type, []).append(i)
    types = sorted(by_type)
    chosen: List[int] = []
    for n, t in enumerate(types):
        quota = size // len(types) + (1 if (n - step) % len(types) < size % len(types) else 0)
        members = by_type[t]
        chosen.extend(rng.choice(members, size=min(quota, len(members)), replace=False).tolist())
    return [pool[i] for i in sorted(chosen)]


def world_from_scenario(env: EnvConfig, scenario: str, seed: int) -> World:
    rng = np.random.default_rng(derive_seed(seed, Stream.WORLD))
    return generate_world(env, rng, scenario)
