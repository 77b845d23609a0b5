"""
Monte Carlo checks of the lifecycle controller's guarantees.

Each check plants a situation with a known answer, runs the real routing,
auditing and rule code against it, and reports a PASS/FAIL verdict with the
measured statistic, the bound it is held to and a standard error.
"""
import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from harness.utils.phase_colors import format_table, theory_printer
from harness.utils.run_settings import ConfigError
from lifecycle_manager import LifecycleConfig, retire_predicate
from sim_environment import (EnvConfig, RolloutEvaluator, SimTask, Split, Stream, derive_seed,
                             generate_world, oracle_mec, rollout, success_logit, success_prob)
from skill_auditor import AuditConfig, MecRecord, ema_update, mec_loso
from skill_bank import ActiveView, Skill, SkillBank, Tier, unit
from skill_router import RetrievalConfig, RoutedSet, route
from slim_trainer import TrainSample
from surrogate_policy import LearnConfig, PolicyState, policy_update

logger = logging.getLogger(__name__)

REPORT_FIELDS = ["lemma", "passed", "statistic", "bound", "std_error", "details"]


class DeltaSource(str, Enum):
    """Where raw contribution estimates come from."""
    SIMULATOR = "simulator"
    SYNTHETIC = "synthetic"


class Lemma(str, Enum):
    RETRIEVAL_UNION_BOUND = "retrieval_union_bound"
    RETENTION_PROXY = "retention_proxy"
    PATIENCE_DECAY = "patience_decay"
    NECESSARY_PROTECTION = "necessary_protection"
    SINGLE_MOVE_COST = "single_move_cost"
    ORACLE_CONVERGENCE = "oracle_convergence"
    POLICY_IMPROVEMENT = "policy_improvement"


@dataclass(frozen=True)
class LemmaCheckConfig:
    lemma: Lemma = Lemma.PATIENCE_DECAY
    trials: int = 500
    seed: int = 0
    margin: float = 0.02
    validation_sizes: Tuple[int, ...] = (32, 64, 128, 256)
    validation_size: int = 32
    audits: int = 6
    patience_grid: Tuple[int, ...] = (1, 2, 3, 5)
    miss_prob: float = 0.05
    relevant_skills: int = 3
    confidence_delta: float = 0.05
    contribution_spread: float = 0.05
    clutter_coeff: float = 0.01
    configurations: int = 20
    oracle_tasks: int = 512
    oracle_tolerance: float = 0.03
    delta_source: DeltaSource = DeltaSource.SIMULATOR

    def __post_init__(self):
        object.__setattr__(self, "lemma", Lemma(self.lemma))
        object.__setattr__(self, "delta_source", DeltaSource(self.delta_source))
        if self.trials < 100:
            raise ConfigError(f"trials must be >= 100, got {self.trials}")
        if any(p < 1 for p in self.patience_grid):
            raise ConfigError("patience values must be >= 1")
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ConfigError(f"miss_prob must lie in [0, 1], got {self.miss_prob}")
        if not 0.0 < self.confidence_delta < 1.0:
            raise ConfigError(f"confidence_delta must lie in (0, 1), got {self.confidence_delta}")


@dataclass
class CheckReport:
    lemma: str
    passed: bool
    statistic: float
    bound: float
    std_error: float
    details: Dict[str, Any] = field(default_factory=dict)

    def as_row(self) -> List[str]:
        detail = ";".join(f"{k}={_fmt(v)}" for k, v in sorted(self.details.items()))
        return [self.lemma, "PASS" if self.passed else "FAIL", _fmt(self.statistic), _fmt(self.bound),
                _fmt(self.std_error), detail]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_fmt(v) for v in value) + "]"
    return str(value)


def hoeffding_epsilon(n: int, delta: float) -> float:
    """Deviation bound for the mean of n paired differences in [-1, 1] at confidence 1 - delta."""
    return math.sqrt(2.0 * math.log(2.0 / delta) / n)


def _binomial_se(rate: float, trials: int) -> float:
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / trials)


def _vector_with_cosine(query: np.ndarray, similarity: float, rng: np.random.Generator) -> np.ndarray:
    """Unit vector whose cosine with a unit query is exactly ``similarity``."""
    orth = rng.normal(size=query.size)
    orth -= orth.dot(query) * query
    orth = unit(orth)
    return unit(similarity * query + math.sqrt(max(0.0, 1.0 - similarity ** 2)) * orth)


def _probe_task(task_id: str, embedding: np.ndarray) -> SimTask:
    return SimTask(id=task_id, index=0, task_type="probe", embedding=embedding,
                   required_concepts={"probe": 1.0}, split=Split.VALIDATION)


def check_retrieval_union_bound(cfg: LemmaCheckConfig, retrieval: Optional[RetrievalConfig] = None) -> CheckReport:
    """
    Every relevant skill independently lands below the routing threshold with
    probability miss_prob; the set-level miss rate must stay under
    |L| * miss_prob plus three standard errors.
    """
    relevant = cfg.relevant_skills
    retrieval = retrieval or RetrievalConfig()
    retrieval = replace(retrieval, top_k=max(retrieval.top_k, relevant))
    tau = retrieval.emb_threshold
    rng = np.random.default_rng(derive_seed(cfg.seed, Stream.THEORY, 1))
    dim = retrieval.embedding_dim

    misses = 0
    for trial in range(cfg.trials):
        query = unit(rng.normal(size=dim))
        keys = {}
        for j in range(relevant):
            if rng.random() < cfg.miss_prob:
                sim = rng.uniform(max(-1.0, tau - 0.3), tau - 1e-3)
            else:
                sim = rng.uniform(tau + 1e-3, 1.0)
            keys[f"rel_{j}"] = _vector_with_cosine(query, sim, rng)
        for j in range(2):
            keys[f"off_{j}"] = _vector_with_cosine(query, rng.uniform(max(-1.0, tau - 0.5), tau - 1e-3), rng)
        view = ActiveView(frozenset(), frozenset(keys), keys)
        routed = route(view, _probe_task(f"probe-{trial}", query), retrieval)
        if any(f"rel_{j}" not in routed.task_ids for j in range(relevant)):
            misses += 1

    rate = misses / cfg.trials
    bound = relevant * cfg.miss_prob
    se = _binomial_se(rate, cfg.trials)
    return CheckReport(Lemma.RETRIEVAL_UNION_BOUND.value, rate <= bound + 3 * se, rate, bound, se,
                       {"relevant": relevant, "miss_prob": cfg.miss_prob, "trials": cfg.trials})


def simulate_raw_deltas(rng: np.random.Generator, shape: Tuple[int, ...], n: int, true_delta: float,
                        spread: float) -> np.ndarray:
    """
    Paired LOSO estimates with common random numbers, drawn without the simulator.

    Each of the n routed tasks has a base success probability and a per-task
    contribution around ``true_delta``; with and without rollouts share one
    uniform draw. Stands in for real rollouts when a check runs with the
    synthetic delta source, and feeds the retention check directly.
    """
    base = rng.uniform(0.05, 0.45, size=shape + (n,))
    contribution = true_delta + spread * rng.standard_normal(size=shape + (n,))
    with_p = np.clip(base + contribution, 0.0, 1.0)
    draw = rng.random(size=shape + (n,))
    diff = (draw < with_p).astype(np.float64) - (draw < base).astype(np.float64)
    return diff.mean(axis=-1)


PLANTED_SKILL = "planted"


def planted_world(n: int, target: float, seed: int, env: Optional[EnvConfig] = None,
                  retrieval: Optional[RetrievalConfig] = None):
    """
    One task type, n validation tasks and one skill routed to all of them.

    Task difficulty is spread uniformly over base logits in [-1.5, 0]. The
    skill's concept weight is solved so its exact leave-one-out contribution
    equals ``target``.

    Returns:
        (env, policy, bank, tasks)

    Raises:
        ConfigError: the target is not reachable with a weight in [0, 1]
    """
    env = env or EnvConfig()
    retrieval = retrieval or RetrievalConfig(embedding_dim=env.embedding_dim)
    rng = np.random.default_rng(derive_seed(seed, Stream.THEORY, 10, n))
    embedding = unit(rng.normal(size=env.embedding_dim))
    tasks = [SimTask(f"planted-{i:04d}", i, "planted", embedding, {"planted": 1.0}, Split.VALIDATION,
                     float(rng.uniform(-1.5, 0.0))) for i in range(n)]
    policy = PolicyState()

    def bank_with(weight: float) -> SkillBank:
        return SkillBank([Skill(PLANTED_SKILL, Tier.TASK_SPECIFIC, embedding, "planted", {"planted": weight})])

    def gap(weight: float) -> float:
        return oracle_mec(env, policy, bank_with(weight), PLANTED_SKILL, tasks, retrieval) - target

    low, high = gap(0.0), gap(1.0)
    if low > 0 or high < 0:
        raise ConfigError(f"Planted contribution {target} is outside the reachable range "
                          f"[{low + target:.4f}, {high + target:.4f}]")
    weight = optimize.brentq(gap, 0.0, 1.0, xtol=1e-12)
    return env, policy, bank_with(weight), tasks


def simulator_raw_deltas(cfg: LemmaCheckConfig, n: int, target: float, key: int) -> np.ndarray:
    """
    LOSO estimates from real rollouts of the planted world, one row per trial
    and one column per audit. Each audit is a fresh validation cycle.
    """
    env, policy, bank, tasks = planted_world(n, target, cfg.seed)
    retrieval = RetrievalConfig(embedding_dim=env.embedding_dim)
    evaluators = [RolloutEvaluator(env, policy, retrieval, Stream.VALIDATION, cycle=audit, replicates=1)
                  for audit in range(cfg.audits)]
    raw = np.empty((cfg.trials, cfg.audits))
    for trial in range(cfg.trials):
        seed = derive_seed(cfg.seed, Stream.THEORY, 9, key, n, trial)
        for audit, evaluator in enumerate(evaluators):
            raw[trial, audit] = mec_loso(evaluator, bank, PLANTED_SKILL, tasks, seed)
    return raw


def raw_deltas(cfg: LemmaCheckConfig, rng: np.random.Generator, n: int, target: float, key: int) -> np.ndarray:
    if cfg.delta_source is DeltaSource.SYNTHETIC:
        return simulate_raw_deltas(rng, (cfg.trials, cfg.audits), n, target, cfg.contribution_spread)
    return simulator_raw_deltas(cfg, n, target, key)


def _retired_flags(raw: np.ndarray, n: int, lifecycle: LifecycleConfig, audit: AuditConfig) -> np.ndarray:
    """Run the real EMA and retire rule over each trial's audit sequence."""
    flags = np.zeros(raw.shape[0], dtype=bool)
    for trial in range(raw.shape[0]):
        record = MecRecord("planted")
        for delta in raw[trial]:
            record = replace(record, exposure=record.exposure + n)
            record = ema_update(record, float(delta), audit, lifecycle.tau_retire)
            if retire_predicate(record, lifecycle):
                flags[trial] = True
                break
    return flags


def check_patience_decay(cfg: LemmaCheckConfig) -> CheckReport:
    """
    False-retire frequency of a skill sitting margin above tau_retire, per
    patience value. Raw estimates come from real rollouts of a planted
    one-skill world unless the synthetic source is selected.
    Pass: non-increasing in p with a negative log-frequency slope.
    """
    base = LifecycleConfig()
    audit = AuditConfig()
    true_delta = base.tau_retire + cfg.margin
    rng = np.random.default_rng(derive_seed(cfg.seed, Stream.THEORY, 2))
    raw = raw_deltas(cfg, rng, cfg.validation_size, true_delta, key=2)

    rates = []
    for p in cfg.patience_grid:
        lifecycle = replace(base, patience=p)
        rates.append(float(_retired_flags(raw, cfg.validation_size, lifecycle, audit).mean()))

    non_increasing = all(b <= a for a, b in zip(rates, rates[1:]))
    floor = 0.5 / cfg.trials
    slope = stats.linregress(cfg.patience_grid, np.log(np.asarray(rates) + floor)).slope
    passed = non_increasing and (slope < 0 or max(rates) == 0.0)
    return CheckReport(Lemma.PATIENCE_DECAY.value, passed, float(slope), 0.0, _binomial_se(rates[0], cfg.trials),
                       {"patience": list(cfg.patience_grid), "rates": rates, "margin": cfg.margin,
                        "n": cfg.validation_size, "audits": cfg.audits,
                        "source": cfg.delta_source.value})


def check_necessary_protection(cfg: LemmaCheckConfig) -> CheckReport:
    """
    A skill whose true contribution is tau_retire + eps_val (Hoeffding at
    1 - delta_val) must be retired in at most delta_val of runs, per
    validation size. Raw estimates come from the planted world as above.
    """
    lifecycle = LifecycleConfig()
    audit = AuditConfig()
    rng = np.random.default_rng(derive_seed(cfg.seed, Stream.THEORY, 3))
    worst_rate, worst_se = 0.0, 0.0
    rates = []
    passed = True
    for n in cfg.validation_sizes:
        eps = hoeffding_epsilon(n, cfg.confidence_delta)
        raw = raw_deltas(cfg, rng, n, lifecycle.tau_retire + eps, key=3)
        rate = float(_retired_flags(raw, n, lifecycle, audit).mean())
        se = _binomial_se(rate, cfg.trials)
        rates.append(rate)
        passed = passed and rate <= cfg.confidence_delta + 3 * se
        if rate >= worst_rate:
            worst_rate, worst_se = rate, se
    return CheckReport(Lemma.NECESSARY_PROTECTION.value, passed, worst_rate, cfg.confidence_delta, worst_se,
                       {"validation_sizes": list(cfg.validation_sizes), "rates": rates,
                        "source": cfg.delta_source.value})


def check_retention_proxy(cfg: LemmaCheckConfig) -> CheckReport:
    """
    The smoothed contribution must sit within eps_val of the planted value in
    at least 1 - delta_val of trials. Reports the measured error quantile.
    """
    audit = AuditConfig()
    rng = np.random.default_rng(derive_seed(cfg.seed, Stream.THEORY, 4))
    worst_cover, quantiles, passed = 1.0, [], True
    for n in cfg.validation_sizes:
        eps = hoeffding_epsilon(n, cfg.confidence_delta)
        truth = rng.uniform(-0.1, 0.3, size=cfg.trials)
        errors = np.empty(cfg.trials)
        for trial in range(cfg.trials):
            raw = simulate_raw_deltas(rng, (cfg.audits,), n, float(truth[trial]), 0.0)
            record = MecRecord("planted")
            for delta in raw:
                record = ema_update(record, float(delta), audit)
            errors[trial] = abs(record.mec_smoothed - expected_paired_delta(float(truth[trial])))
        cover = float(np.mean(errors <= eps))
        quantiles.append(float(np.quantile(errors, 1.0 - cfg.confidence_delta)))
        passed = passed and cover >= 1.0 - cfg.confidence_delta
        worst_cover = min(worst_cover, cover)
    return CheckReport(Lemma.RETENTION_PROXY.value, passed, worst_cover, 1.0 - cfg.confidence_delta,
                       _binomial_se(worst_cover, cfg.trials),
                       {"validation_sizes": list(cfg.validation_sizes), "error_quantiles": quantiles})


def expected_paired_delta(true_delta: float, low: float = 0.05, high: float = 0.45) -> float:
    """Exact mean of the clipped per-task contribution under the planted base distribution."""
    # E[clip(b + d, 0, 1) - b] for b ~ U(low, high), zero spread
    grid = np.linspace(low, high, 2001)
    return float(np.mean(np.clip(grid + true_delta, 0.0, 1.0) - grid))


def check_single_move_cost(cfg: LemmaCheckConfig) -> CheckReport:
    """
    Adding or removing one zero-utility skill moves the success logit by
    exactly clutter_coeff and the success probability by at most that much.
    """
    env = EnvConfig(clutter_coeff=cfg.clutter_coeff)
    rng = np.random.default_rng(derive_seed(cfg.seed, Stream.THEORY, 5))
    dim = env.embedding_dim
    concepts = [f"c{i:02d}" for i in range(6)]
    skills = [Skill(f"s{i}", Tier.TASK_SPECIFIC, unit(rng.normal(size=dim)), "probe",
                    {concepts[i]: float(rng.uniform(0.2, 0.9))}) for i in range(len(concepts))]
    neutral = Skill("neutral", Tier.TASK_SPECIFIC, unit(rng.normal(size=dim)), "probe", {})
    bank = SkillBank(skills + [neutral])
    policy = PolicyState(competence={("probe", c): float(rng.uniform(0, 0.5)) for c in concepts},
                         capacity_cap=float(len(concepts)))

    worst_logit_error, worst_prob_change = 0.0, 0.0
    for trial in range(cfg.trials):
        need = {c: float(rng.uniform(0.2, 1.0)) for c in rng.choice(concepts, size=3, replace=False)}
        task = SimTask(f"move-{trial}", trial, "probe", unit(rng.normal(size=dim)), need, Split.VALIDATION,
                       float(rng.normal(-0.5, 0.5)))
        chosen = sorted(rng.choice([s.id for s in skills], size=int(rng.integers(0, 4)), replace=False).tolist())
        before = RoutedSet(task.id, task_ids=chosen)
        after = RoutedSet(task.id, task_ids=chosen + ["neutral"])
        logit_change = success_logit(task, policy, after, env, bank) - success_logit(task, policy, before, env, bank)
        prob_change = abs(success_prob(task, policy, after, env, bank) - success_prob(task, policy, before, env, bank))
        worst_logit_error = max(worst_logit_error, abs(abs(logit_change) - env.clutter_coeff))
        worst_prob_change = max(worst_prob_change, prob_change)

    passed = worst_logit_error <= 1e-12 and worst_prob_change <= env.clutter_coeff
    return CheckReport(Lemma.SINGLE_MOVE_COST.value, passed, worst_prob_change, env.clutter_coeff, 0.0,
                       {"logit_error": worst_logit_error, "trials": cfg.trials})


def _planted_configuration(cfg: LemmaCheckConfig, index: int):
    env = EnvConfig(val_size=cfg.oracle_tasks, train_pool_size=16, test_size=16)
    rng = np.random.default_rng(derive_seed(cfg.seed, Stream.THEORY, 6, index))
    world = generate_world(env, rng, "reference")
    general = sorted(world.bank.general_pool)
    skill_id = general[index % len(general)]
    competence = {(t, c): float(rng.uniform(0.0, 0.6))
                  for t in world.type_names for c in world.concepts_by_type[t] + world.general_concepts}
    policy = PolicyState(competence=competence, capacity_cap=float(len(competence)),
                         task_types=tuple(world.type_names))
    return world, policy, skill_id


def check_oracle_convergence(cfg: LemmaCheckConfig, retrieval: Optional[RetrievalConfig] = None) -> CheckReport:
    """
    LOSO estimates at oracle_tasks paired validation tasks must land within
    the tolerance of the exact-expectation contribution in at least 95% of
    seeds, for every planted configuration.
    """
    retrieval = retrieval or RetrievalConfig()
    coverages = []
    engine_checked = True
    for index in range(cfg.configurations):
        world, policy, skill_id = _planted_configuration(cfg, index)
        env, bank = world.env, world.bank
        tasks = world.split(Split.VALIDATION)
        truth = oracle_mec(env, policy, bank, skill_id, tasks, retrieval)

        routed = [(task, route(bank.active_view(task.task_type), task, retrieval)) for task in tasks]
        routed = [(task, support) for task, support in routed if support.contains(skill_id)]
        p_with = np.array([success_prob(t, policy, s, env, bank) for t, s in routed])
        p_without = np.array([
            success_prob(t, policy, route(bank.active_view(t.task_type), t, retrieval, frozenset({skill_id})), env,
                         bank)
            for t, _ in routed
        ])

        hits = 0
        for trial in range(cfg.trials):
            seed = derive_seed(cfg.seed, Stream.THEORY, 7, index, trial)
            draws = np.array([
                np.random.default_rng(derive_seed(seed, Stream.VALIDATION, 0, task.index, 0)).random()
                for task, _ in routed
            ])
            estimate = float(np.mean(draws < p_with) - np.mean(draws < p_without))
            if trial == 0:
                evaluator = RolloutEvaluator(env, policy, retrieval, Stream.VALIDATION, 0, 1)
                engine = mec_loso(evaluator, bank, skill_id, tasks, seed)
                engine_checked = engine_checked and engine is not None and abs(engine - estimate) < 1e-12
            hits += abs(estimate - truth) <= cfg.oracle_tolerance
        coverages.append(hits / cfg.trials)

    worst = min(coverages)
    passed = engine_checked and worst >= 0.95
    return CheckReport(Lemma.ORACLE_CONVERGENCE.value, passed, worst, 0.95, _binomial_se(worst, cfg.trials),
                       {"configurations": cfg.configurations, "tasks": cfg.oracle_tasks,
                        "tolerance": cfg.oracle_tolerance, "engine_matches": engine_checked})


def check_policy_improvement(cfg: LemmaCheckConfig, steps: int = 20) -> CheckReport:
    """
    Assumption-level smoke test: with the bank fixed, the exact mean
    validation success over the second half of a short training window is
    no lower than over the first half.
    """
    env = EnvConfig()
    rng = np.random.default_rng(derive_seed(cfg.seed, Stream.THEORY, 8))
    world = generate_world(env, rng, "reference")
    retrieval = RetrievalConfig()
    learn = LearnConfig()
    policy = PolicyState.from_config(learn, world.type_names)
    bank = world.bank
    tasks = world.split(Split.VALIDATION)
    train = world.split(Split.TRAIN)

    curve = []
    for step in range(1, steps + 1):
        batch = []
        for i in range(env.train_size):
            task = train[(step * env.train_size + i) % len(train)]
            support = route(bank.active_view(task.task_type), task, retrieval)
            for g in range(learn.group_size):
                result = rollout(task, policy, support, env, derive_seed(cfg.seed, Stream.TRAIN, step, task.index, g),
                                 bank, g)
                batch.append(TrainSample(task, support, result))
        policy = policy_update(policy, batch, learn, bank.get)
        curve.append(float(np.mean([
            success_prob(t, policy, route(bank.active_view(t.task_type), t, retrieval), env, bank) for t in tasks
        ])))

    half = steps // 2
    first, second = float(np.mean(curve[:half])), float(np.mean(curve[half:]))
    return CheckReport(Lemma.POLICY_IMPROVEMENT.value, second >= first, second - first, 0.0,
                       float(np.std(curve) / math.sqrt(len(curve))),
                       {"level": "assumption", "steps": steps, "first_half": first, "second_half": second})


CHECKS = {
    Lemma.RETRIEVAL_UNION_BOUND: check_retrieval_union_bound,
    Lemma.RETENTION_PROXY: check_retention_proxy,
    Lemma.PATIENCE_DECAY: check_patience_decay,
    Lemma.NECESSARY_PROTECTION: check_necessary_protection,
    Lemma.SINGLE_MOVE_COST: check_single_move_cost,
    Lemma.ORACLE_CONVERGENCE: check_oracle_convergence,
    Lemma.POLICY_IMPROVEMENT: check_policy_improvement,
}


def run_theory_checks(names: Optional[Sequence[str]] = None, base: Optional[LemmaCheckConfig] = None,
                      out_dir: str = "") -> List[CheckReport]:
    """Run the selected checks (all by default), print a summary and optionally write theory_checks.csv."""
    base = base or LemmaCheckConfig()
    try:
        lemmas = [Lemma(n) for n in names] if names else list(CHECKS)
    except ValueError as e:
        raise ConfigError(f"{e}; choose from {', '.join(l.value for l in Lemma)}")

    reports = []
    for lemma in lemmas:
        theory_printer.print_info(f"Running {lemma.value}")
        report = CHECKS[lemma](replace(base, lemma=lemma))
        reports.append(report)
        if report.passed:
            theory_printer.print_success(f"{lemma.value}: PASS (statistic {report.statistic:.4g}, "
                                         f"bound {report.bound:.4g})")
        else:
            theory_printer.print_error(f"{lemma.value}: FAIL (statistic {report.statistic:.4g}, "
                                       f"bound {report.bound:.4g})")

    theory_printer.print(format_table(REPORT_FIELDS[:-1], [r.as_row()[:-1] for r in reports]))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "theory_checks.csv")
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(REPORT_FIELDS)
            for report in reports:
                writer.writerow(report.as_row())
        logger.info("Wrote %s", path)
    return reports
