#!/usr/bin/env python3

"""
Skill Lifecycle Trainer

Alternates surrogate policy updates with lifecycle audits:

1. every step: sample training tasks, route, roll out G times, update the policy
2. every d steps: validation pass, audit candidate selection, leave-one-skill-out
   reruns, retain/retire rules, expansion from failure buckets
3. after the last step: frozen evaluation on the test split

All bank, policy and record mutations happen on the control thread; only the
LOSO reruns fan out to worker threads.
"""

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from functools import partial
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from harness.utils.phase_colors import audit_printer, lifecycle_printer, print_run_banner, trainer_printer
from harness.utils.run_settings import ConfigError, apply_settings
from lifecycle_log import LifecycleLog, check_lifecycle_log
from lifecycle_manager import (LIFECYCLE_PRESETS, BucketBook, Decision, LifecycleConfig, Regime,
                               apply_decisions, decide, fixed_size_adjust, move_budget, synth_create,
                               withdraw_to_target, withdrawal_target)
from sim_environment import (NO_EXPOSURE, SCENARIOS, EnvConfig, RolloutEvaluator, SimTask, Split, Stream, World,
                             derive_seed, expected_success, rollout, sample_train_batch, world_from_scenario)
from skill_auditor import (AuditConfig, AuditError, RecordBook, loso_estimate, routed_usage,
                           select_audit_candidates, to_outcomes)
from skill_bank import EventKind, LifecycleEvent, SkillBank, save_bank
from skill_router import RetrievalConfig, RoutedSet, route
from surrogate_policy import LearnConfig, PolicyState, policy_update, save_policy

logger = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
METRICS_HEADER = [
    "step", "with_skill_success", "no_skill_success", "active_count", "retired_count", "expanded_count",
    "audit_calls_this_cycle", "mean_support_size", "policy_mass",
]

ABLATION_REGIMES = (Regime.SLIM, Regime.NO_EXPANSION, Regime.ACCUMULATE_ONLY, Regime.RANDOM_AUDIT,
                    Regime.FIXED_SIZE)
REGIME_LABELS = {
    Regime.SLIM: "SLIM",
    Regime.ACCUMULATE_ONLY: "w/o Retirement",
    Regime.NO_EXPANSION: "w/o Expansion",
    Regime.RANDOM_AUDIT: "Random Audit",
    Regime.FIXED_SIZE: "Fixed Size",
    Regime.ELIMINATE_ONLY: "Eliminate Only",
}

# Lifecycle thresholds plus the batch, audit and horizon shape of each setting.
RUN_PRESETS: Dict[str, Dict[str, Any]] = {
    "alfworld": {**LIFECYCLE_PRESETS["alfworld"], "audit_budget": 4, "group_size": 8, "train_size": 16,
                 "val_size": 32, "validation_batch": 32},
    "searchqa": {**LIFECYCLE_PRESETS["searchqa"], "audit_budget": 12, "group_size": 4, "train_size": 64,
                 "val_size": 512, "validation_batch": 512, "total_steps": 180},
}

NESTED_CONFIGS = {
    "retrieval": RetrievalConfig,
    "audit": AuditConfig,
    "lifecycle": LifecycleConfig,
    "learn": LearnConfig,
    "env": EnvConfig,
}


@dataclass(frozen=True)
class RunConfig:
    total_steps: int = 120
    seed: int = 0
    scenario: str = "reference"
    out_dir: str = ""
    workers: int = 1
    record_wallclock: bool = False
    probe_threshold: float = 0.8
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    lifecycle: LifecycleConfig = field(default_factory=LifecycleConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        if not self.total_steps >= self.audit.audit_interval >= 1:
            raise ConfigError(f"total_steps ({self.total_steps}) must be >= audit_interval "
                              f"({self.audit.audit_interval}) >= 1")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f'Unknown scenario "{self.scenario}"; choose from {", ".join(SCENARIOS)}')
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.retrieval.embedding_dim != self.env.embedding_dim:
            raise ConfigError("retrieval and environment embedding_dim differ")

    @property
    def regime(self) -> Regime:
        return self.lifecycle.regime

    @classmethod
    def known_keys(cls) -> List[str]:
        keys = [f.name for f in fields(cls) if f.name not in NESTED_CONFIGS]
        for config_cls in NESTED_CONFIGS.values():
            keys.extend(f.name for f in fields(config_cls))
        keys.append("lifecycle_preset")
        return sorted(set(keys))

    @classmethod
    def from_settings(cls, values: Mapping[str, Any]) -> "RunConfig":
        """Build a RunConfig from flat key-value settings; shared keys feed every config naming them."""
        values = dict(values)
        preset = values.pop("lifecycle_preset", None)
        if preset:
            if preset not in RUN_PRESETS:
                raise ConfigError(f'Unknown preset "{preset}"; choose from {", ".join(RUN_PRESETS)}')
            for key, value in RUN_PRESETS[preset].items():
                values.setdefault(key, str(value))
        nested = {name: apply_settings(config_cls, values) for name, config_cls in NESTED_CONFIGS.items()}
        return apply_settings(cls, {k: v for k, v in values.items() if k not in NESTED_CONFIGS}, **nested)

    def flat(self) -> Dict[str, Any]:
        """Flat field view for printing and the run summary."""
        out: Dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in NESTED_CONFIGS:
                for sub in fields(value):
                    sub_value = getattr(value, sub.name)
                    out[sub.name] = sub_value.value if isinstance(sub_value, Regime) else sub_value
            else:
                out[f.name] = value
        return out


@dataclass
class MetricsRow:
    step: int
    with_skill_success: float
    no_skill_success: float
    active_count: int
    retired_count: int
    expanded_count: int
    audit_calls_this_cycle: int
    mean_support_size: float
    policy_mass: float
    wallclock: Optional[float] = None

    def as_csv(self, include_wallclock: bool) -> List[str]:
        row = [
            str(self.step), f"{self.with_skill_success:.6f}", f"{self.no_skill_success:.6f}",
            str(self.active_count), str(self.retired_count), str(self.expanded_count),
            str(self.audit_calls_this_cycle), f"{self.mean_support_size:.4f}", f"{self.policy_mass:.6f}",
        ]
        if include_wallclock:
            row.append(f"{self.wallclock or 0.0:.3f}")
        return row


@dataclass(frozen=True)
class TrainSample:
    task: SimTask
    support: RoutedSet
    result: Any


def is_non_monotone(trajectory: Sequence[int]) -> bool:
    """True when the active count both rises and falls somewhere along the run."""
    steps = np.diff(np.asarray(trajectory, dtype=np.int64))
    return bool((steps > 0).any() and (steps < 0).any())


def post_zero_drop(metrics: Sequence[MetricsRow]) -> Optional[float]:
    """
    Peak with-skill validation success before the bank first empties, minus
    the mean from that point on. None if the bank never empties.
    """
    first_zero = next((i for i, row in enumerate(metrics) if row.active_count == 0), None)
    if first_zero is None or first_zero == 0:
        return None
    peak = max(row.with_skill_success for row in metrics[:first_zero])
    after = np.mean([row.with_skill_success for row in metrics[first_zero:]])
    return float(peak - after)


@dataclass
class RunSummary:
    scenario: str
    regime: str
    seed: int
    test_with_skills: float
    test_without_skills: float
    active_count: int
    retired_count: int
    expanded_count: int
    audit_calls_total: int
    max_audit_calls_per_cycle: int
    metrics: List[MetricsRow]
    transfer: Dict[str, float]
    test_outcomes: List[bool] = field(default_factory=list)
    final_bank: Optional[SkillBank] = None
    initial_bank: Optional[SkillBank] = None
    final_policy: Optional[PolicyState] = None
    records: Dict[str, Any] = field(default_factory=dict)
    events: List[LifecycleEvent] = field(default_factory=list)
    out_dir: str = ""

    @property
    def active_trajectory(self) -> List[int]:
        return [row.active_count for row in self.metrics]

    @property
    def non_monotone(self) -> bool:
        return is_non_monotone(self.active_trajectory)

    @property
    def post_zero_drop(self) -> Optional[float]:
        return post_zero_drop(self.metrics)

    def to_json(self) -> Dict[str, Any]:
        return {
            "metrics_schema_version": METRICS_SCHEMA_VERSION,
            "scenario": self.scenario,
            "regime": self.regime,
            "seed": self.seed,
            "test_with_skills": self.test_with_skills,
            "test_without_skills": self.test_without_skills,
            "active_count": self.active_count,
            "retired_count": self.retired_count,
            "expanded_count": self.expanded_count,
            "audit_calls_total": self.audit_calls_total,
            "max_audit_calls_per_cycle": self.max_audit_calls_per_cycle,
            "active_trajectory": self.active_trajectory,
            "non_monotone": self.non_monotone,
            "post_zero_drop": self.post_zero_drop,
            "transfer": self.transfer,
        }


def evaluate(world: World, policy: PolicyState, bank: SkillBank, split: Split, with_skills: bool, seed: int,
             retrieval: RetrievalConfig, replicates: int = 1) -> float:
    """Frozen evaluation: success rate over a split, no lifecycle updates."""
    return float(np.mean(evaluate_outcomes(world, policy, bank, split, with_skills, seed, retrieval, replicates)))


def evaluate_outcomes(world: World, policy: PolicyState, bank: SkillBank, split: Split, with_skills: bool,
                      seed: int, retrieval: RetrievalConfig, replicates: int = 1) -> List[bool]:
    if split not in (Split.VALIDATION, Split.TEST):
        raise ConfigError(f"Evaluation runs on the validation or test split, not {split.value}")
    stream = Stream.TEST if split is Split.TEST else Stream.VALIDATION
    evaluator = RolloutEvaluator(world.env, policy, retrieval, stream=stream, replicates=replicates)
    return [r.success for r in evaluator.evaluate(bank, world.split(split), seed, with_skills=with_skills)]


def evaluate_bank_transfer(world: World, final_bank: SkillBank, seed: int,
                           retrieval: RetrievalConfig) -> Dict[str, float]:
    """Test success of an untrained policy with no skills, the initial bank and the final active bank."""
    fresh = PolicyState.from_config(LearnConfig(), world.type_names)
    return {
        "no_skills": evaluate(world, fresh, world.bank, Split.TEST, False, seed, retrieval),
        "initial_bank": evaluate(world, fresh, world.bank, Split.TEST, True, seed, retrieval),
        "final_bank": evaluate(world, fresh, final_bank, Split.TEST, True, seed, retrieval),
    }


class SlimTrainer:
    """Runs one training loop for a RunConfig."""

    def __init__(self, cfg: RunConfig, world: Optional[World] = None):
        self.cfg = cfg
        self.world = world or world_from_scenario(cfg.env, cfg.scenario, cfg.seed)
        self.env = self.world.env
        self.initial_bank = self.world.bank
        self.bank = self.world.bank.copy()
        self.initial_size = len(self.bank.active)

        learn = replace(cfg.learn, **self.world.preset.learn_overrides)
        self.learn = learn
        self.policy = PolicyState.from_config(learn, self.world.type_names)

        self.records = RecordBook()
        self.buckets = BucketBook()
        self.validation_tasks = self.world.split(Split.VALIDATION)[:cfg.audit.validation_batch]
        self.tasks_by_id = {t.id: t for t in self.validation_tasks}

        self.out_dir = cfg.out_dir
        log_path = os.path.join(self.out_dir, "lifecycle.jsonl") if self.out_dir else None
        self.log = LifecycleLog(log_path)
        self.metrics: List[MetricsRow] = []
        self.audit_calls: List[int] = []
        self._support_sizes: List[int] = []
        self._started = 0.0

    def train_step(self, step: int):
        tasks = sample_train_batch(self.world, self.env.train_size, self.cfg.seed, step)
        batch = []
        for task in tasks:
            support = route(self.bank.active_view(task.task_type), task, self.cfg.retrieval)
            self._support_sizes.append(len(support))
            for g in range(self.learn.group_size):
                seed = derive_seed(self.cfg.seed, Stream.TRAIN, step, task.index, g)
                result = rollout(task, self.policy, support, self.env, seed, self.bank, g)
                batch.append(TrainSample(task, support, result))
        self.policy = policy_update(self.policy, batch, self.learn, self.bank.get)

    def _estimate_all(self, evaluator, candidates: Sequence[str], baseline) -> list:
        run = partial(loso_estimate, evaluator, self.bank, validation_tasks=self.validation_tasks,
                      seed=self.cfg.seed, baseline=baseline, metric=self.cfg.audit.metric)
        if self.cfg.workers > 1 and len(candidates) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return list(pool.map(lambda skill_id: run(skill_id=skill_id), candidates))
        return [run(skill_id=skill_id) for skill_id in candidates]

    def audit_cycle(self, step: int, cycle: int) -> int:
        """One validation pass plus lifecycle moves. Returns the number of LOSO reruns."""
        cfg = self.cfg
        evaluator = RolloutEvaluator(self.env, self.policy, cfg.retrieval, Stream.VALIDATION, cycle,
                                     cfg.audit.val_rollouts)
        outcomes = to_outcomes(evaluator.evaluate(self.bank, self.validation_tasks, cfg.seed))
        self.records.observe_pass(outcomes, step)
        self.buckets.observe(outcomes, self.tasks_by_id, step)

        general_active = self.bank.active & self.bank.general_pool
        candidates = select_audit_candidates(self.records.records, routed_usage(outcomes), cfg.audit,
                                             general_active)
        estimates = self._estimate_all(evaluator, candidates, outcomes)
        calls = sum(e.reruns for e in estimates)
        bound = cfg.audit.audit_budget + cfg.audit.general_audits_per_cycle
        if calls > bound:
            raise AuditError(f"Audit cycle at step {step} ran {calls} LOSO reruns (bound {bound})")

        events: List[LifecycleEvent] = []
        decisions: Dict[str, Decision] = {}
        for estimate in estimates:
            record = self.records.apply_estimate(estimate, cfg.audit, cfg.lifecycle.tau_retire)
            if estimate.delta is NO_EXPOSURE:
                events.append(LifecycleEvent(step=step, skill_id=estimate.skill_id, kind=EventKind.SKIP,
                                             exposure=record.exposure, streak=record.streak,
                                             failures=record.failures, reason="no routed validation tasks",
                                             mec_smoothed=record.mec_smoothed))
                continue
            decisions[estimate.skill_id] = decide(record, record.last_perf_with, cfg.lifecycle)
            audit_printer.print_info(f"{estimate.skill_id}: Δ={estimate.delta:+.3f} "
                                     f"Δ̄={record.mec_smoothed:+.3f} u={record.exposure} ℓ={record.streak}")

        rng = np.random.default_rng(derive_seed(cfg.seed, Stream.REGIME, cycle))
        creator = partial(synth_create, boost=cfg.lifecycle.expand_boost,
                          dedup_threshold=cfg.lifecycle.dedup_threshold, step=step)
        self.bank, moves = apply_decisions(self.bank, decisions, self.buckets, creator, cfg.lifecycle, step, rng,
                                           self.records.records, move_budget(cfg.lifecycle, cfg.audit.audit_budget))
        events.extend(moves)
        expanded = self._register_expansions(moves, step)

        if cfg.regime is Regime.FIXED_SIZE:
            self.bank, extra = fixed_size_adjust(self.bank, cfg.lifecycle, self.initial_size, self.buckets,
                                                 creator, self.records.records, step, rng, protect=expanded)
            self._register_expansions(extra, step)
            events.extend(extra)
        elif cfg.regime is Regime.ELIMINATE_ONLY:
            target = withdrawal_target(self.initial_size, step, cfg.total_steps, cfg.lifecycle.withdrawal_horizon)
            self.bank, extra = withdraw_to_target(self.bank, target, self.records.records, step)
            events.extend(extra)

        self.log.extend(events)
        for event in events:
            if event.kind in (EventKind.RETIRE, EventKind.EXPAND):
                lifecycle_printer.print_success(f"{event.kind.value} {event.skill_id} ({event.reason})")
            elif event.kind is EventKind.SKIP and event.reason.startswith("creator"):
                lifecycle_printer.print_warning(f"skip {event.skill_id}: {event.reason}")
        return calls

    def _register_expansions(self, events: Sequence[LifecycleEvent], step: int) -> List[str]:
        created = []
        for event in events:
            if event.kind is EventKind.EXPAND:
                if event.anchor_id:
                    self.records.reset_failures(event.anchor_id)
                self.records.touch(event.skill_id, step)
                created.append(event.skill_id)
        return created

    def record_metrics(self, step: int, audit_calls: int):
        cfg = self.cfg
        with_skills = expected_success(self.env, self.policy, self.bank, self.validation_tasks, cfg.retrieval, True)
        without = expected_success(self.env, self.policy, self.bank, self.validation_tasks, cfg.retrieval, False)
        support = float(np.mean(self._support_sizes)) if self._support_sizes else 0.0
        self._support_sizes = []
        row = MetricsRow(
            step=step,
            with_skill_success=with_skills,
            no_skill_success=without,
            active_count=len(self.bank.active),
            retired_count=len(self.bank.retired),
            expanded_count=self.bank.expanded_count(),
            audit_calls_this_cycle=audit_calls,
            mean_support_size=support,
            policy_mass=self.policy.total_mass(),
            wallclock=time.monotonic() - self._started if cfg.record_wallclock else None,
        )
        self.metrics.append(row)
        return row

    def evaluate(self, split: Split, with_skills: bool, seed: Optional[int] = None) -> float:
        seed = self.cfg.seed if seed is None else seed
        return evaluate(self.world, self.policy, self.bank, split, with_skills, seed, self.cfg.retrieval)

    def run(self) -> RunSummary:
        cfg = self.cfg
        self._started = time.monotonic()
        print_run_banner(cfg.scenario, cfg.regime.value, cfg.seed)
        self.record_metrics(0, 0)

        cycle = 0
        for step in range(1, cfg.total_steps + 1):
            self.train_step(step)
            if step % cfg.audit.audit_interval == 0:
                cycle += 1
                calls = self.audit_cycle(step, cycle)
                self.audit_calls.append(calls)
                row = self.record_metrics(step, calls)
                trainer_printer.print_task(
                    f"step {step}: active={row.active_count} with={row.with_skill_success:.3f} "
                    f"without={row.no_skill_success:.3f} audits={calls}")

        test_outcomes = evaluate_outcomes(self.world, self.policy, self.bank, Split.TEST, True, cfg.seed,
                                          cfg.retrieval)
        test_with = float(np.mean(test_outcomes))
        test_without = self.evaluate(Split.TEST, False)
        self.log.write_final_evaluation({"step": cfg.total_steps, "test_with_skills": test_with,
                                         "test_without_skills": test_without,
                                         "test_task_count": len(self.world.split(Split.TEST))})

        summary = RunSummary(
            scenario=cfg.scenario,
            regime=cfg.regime.value,
            seed=cfg.seed,
            test_with_skills=test_with,
            test_without_skills=test_without,
            active_count=len(self.bank.active),
            retired_count=len(self.bank.retired),
            expanded_count=self.bank.expanded_count(),
            audit_calls_total=sum(self.audit_calls),
            max_audit_calls_per_cycle=max(self.audit_calls, default=0),
            metrics=self.metrics,
            transfer=evaluate_bank_transfer(self.world, self.bank, cfg.seed, cfg.retrieval),
            test_outcomes=test_outcomes,
            final_bank=self.bank,
            initial_bank=self.initial_bank,
            final_policy=self.policy,
            records=dict(self.records.records),
            events=list(self.log.events),
            out_dir=self.out_dir,
        )
        if self.out_dir:
            self.write_outputs(summary)
        trainer_printer.print_success(f"Run finished: test with skills {test_with:.3f}, "
                                      f"without {test_without:.3f}, active {summary.active_count}")
        return summary

    def write_outputs(self, summary: RunSummary):
        out = self.out_dir
        os.makedirs(out, exist_ok=True)
        include_wallclock = self.cfg.record_wallclock
        header = METRICS_HEADER + (["wallclock"] if include_wallclock else [])
        with open(os.path.join(out, "metrics.csv"), "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in summary.metrics:
                writer.writerow(row.as_csv(include_wallclock))
        save_bank(self.bank, os.path.join(out, "bank_final.jsonl"))
        save_policy(self.policy, os.path.join(out, "policy_final.jsonl"))
        with open(os.path.join(out, "run_summary.json"), "w", encoding="utf-8") as f:
            json.dump(summary.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")
        check_lifecycle_log(os.path.join(out, "lifecycle.jsonl"), self.world.task_ids(Split.TEST))
        logger.info("Wrote run outputs to %s", out)


def run(cfg: RunConfig, world: Optional[World] = None) -> RunSummary:
    return SlimTrainer(cfg, world).run()


@dataclass
class AblationReport:
    scenario: str
    seeds: List[int]
    means: Dict[str, float]
    stds: Dict[str, float]
    ordering: List[str]
    ties: List[Tuple[str, str]]
    insufficient_replication: bool
    gap_intervals: Dict[str, Tuple[float, float]]
    final_active: Dict[str, float]

    def rows(self) -> List[List[Any]]:
        out = []
        for regime in self.ordering:
            low, high = self.gap_intervals.get(regime, (float("nan"), float("nan")))
            out.append([REGIME_LABELS.get(Regime(regime), regime), self.means[regime], self.stds[regime],
                        self.final_active[regime], low, high])
        return out


def bootstrap_gap(reference: Sequence[bool], other: Sequence[bool], seed: int,
                  n_resamples: int = 2000, confidence: float = 0.95) -> Tuple[float, float]:
    """Percentile bootstrap interval of mean(reference) - mean(other) over pooled binary outcomes."""
    x = np.asarray(reference, dtype=np.float64)
    y = np.asarray(other, dtype=np.float64)
    if x.size < 2 or y.size < 2:
        return float("nan"), float("nan")
    result = stats.bootstrap(
        (x, y),
        lambda a, b, axis: np.mean(a, axis=axis) - np.mean(b, axis=axis),
        n_resamples=n_resamples,
        confidence_level=confidence,
        method="percentile",
        vectorized=True,
        random_state=np.random.default_rng(seed),
    )
    return float(result.confidence_interval.low), float(result.confidence_interval.high)


def compare_ablations(scenario: str, seeds: Sequence[int], base: Optional[RunConfig] = None,
                      regimes: Sequence[Regime] = ABLATION_REGIMES, n_resamples: int = 2000) -> AblationReport:
    """
    Run each regime under matched seeds and rank mean final test success.

    Each seed shares its world and rollout seeds across regimes, so regime
    differences come from lifecycle behavior alone.
    """
    base = base or RunConfig()
    finals: Dict[str, List[float]] = {}
    pooled: Dict[str, List[bool]] = {}
    active: Dict[str, List[int]] = {}
    for regime in regimes:
        key = Regime(regime).value
        finals[key], pooled[key], active[key] = [], [], []
        for seed in seeds:
            cfg = replace(base, seed=seed, scenario=scenario, out_dir="",
                          lifecycle=replace(base.lifecycle, regime=Regime(regime)))
            summary = run(cfg)
            finals[key].append(summary.test_with_skills)
            pooled[key].extend(summary.test_outcomes)
            active[key].append(summary.active_count)

    means = {k: float(np.mean(v)) for k, v in finals.items()}
    stds = {k: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0 for k, v in finals.items()}
    ordering = sorted(means, key=lambda k: (-means[k], k))
    ties = [(a, b) for i, a in enumerate(ordering) for b in ordering[i + 1:] if abs(means[a] - means[b]) < 1e-12]

    gaps: Dict[str, Tuple[float, float]] = {}
    reference = Regime.SLIM.value
    if reference in pooled:
        for key in pooled:
            if key != reference:
                gaps[key] = bootstrap_gap(pooled[reference], pooled[key], seed=int(seeds[0]) if seeds else 0,
                                          n_resamples=n_resamples)

    return AblationReport(
        scenario=scenario,
        seeds=list(seeds),
        means=means,
        stds=stds,
        ordering=ordering,
        ties=ties,
        insufficient_replication=len(seeds) < 2,
        gap_intervals=gaps,
        final_active={k: float(np.mean(v)) for k, v in active.items()},
    )
