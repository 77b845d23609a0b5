import csv
import json
import math
from dataclasses import replace

import pytest

from harness.utils.run_settings import ConfigError
from lifecycle_log import FINAL_EVALUATION, check_lifecycle_log, iter_records
from lifecycle_manager import LifecycleConfig, Regime
from sim_environment import Split
from skill_bank import load_bank, replay_events
from skill_router import RetrievalConfig
from slim_trainer import (METRICS_HEADER, MetricsRow, RunConfig, SlimTrainer, bootstrap_gap, compare_ablations,
                          is_non_monotone, post_zero_drop, run)
from surrogate_policy import load_policy


def _cfg(**kw):
    regime = kw.pop("regime", Regime.SLIM)
    base = RunConfig(total_steps=30, seed=kw.pop("seed", 0), lifecycle=LifecycleConfig(regime=regime))
    return replace(base, **kw)


@pytest.fixture(scope="module")
def slim_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("slim")
    cfg = _cfg(out_dir=str(out))
    return cfg, run(cfg)


def test_run_writes_every_output(slim_run):
    cfg, summary = slim_run
    out = cfg.out_dir
    with open(f"{out}/metrics.csv", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == METRICS_HEADER
    assert [int(r[0]) for r in rows[1:]] == [0, 10, 20, 30]

    records = list(iter_records(f"{out}/lifecycle.jsonl"))
    assert records[-1]["record"] == FINAL_EVALUATION
    assert all(r.get("record") != FINAL_EVALUATION for r in records[:-1])

    with open(f"{out}/run_summary.json", encoding="utf-8") as f:
        payload = json.load(f)
    assert payload["metrics_schema_version"] == 1
    assert payload["test_with_skills"] == summary.test_with_skills
    assert set(payload["transfer"]) == {"no_skills", "initial_bank", "final_bank"}

    assert load_bank(f"{out}/bank_final.jsonl").same_state(summary.final_bank)
    assert load_policy(f"{out}/policy_final.jsonl") == summary.final_policy


def test_log_never_mentions_test_tasks(slim_run):
    cfg, summary = slim_run
    world = SlimTrainer(replace(cfg, out_dir="")).world
    assert check_lifecycle_log(f"{cfg.out_dir}/lifecycle.jsonl", world.task_ids(Split.TEST)) >= 0


def test_audit_calls_stay_within_budget(slim_run):
    cfg, summary = slim_run
    bound = cfg.audit.audit_budget + cfg.audit.general_audits_per_cycle
    assert all(row.audit_calls_this_cycle <= bound for row in summary.metrics)
    assert summary.max_audit_calls_per_cycle <= bound
    assert summary.audit_calls_total == sum(row.audit_calls_this_cycle for row in summary.metrics)


def test_log_replays_to_final_bank(slim_run):
    _, summary = slim_run
    assert replay_events(summary.initial_bank, summary.events).same_state(summary.final_bank)


def test_bank_bookkeeping_is_consistent(slim_run):
    _, summary = slim_run
    bank = summary.final_bank
    assert summary.active_count == len(bank.active)
    assert summary.retired_count == len(bank.retired)
    assert summary.active_count + summary.retired_count == len(bank)
    assert summary.final_policy.total_mass() <= summary.final_policy.capacity_cap


def test_runs_are_byte_identical(tmp_path):
    outputs = []
    for name in ("a", "b"):
        cfg = _cfg(out_dir=str(tmp_path / name), total_steps=20)
        run(cfg)
        outputs.append([(tmp_path / name / f).read_bytes() for f in ("metrics.csv", "lifecycle.jsonl",
                                                                      "bank_final.jsonl", "policy_final.jsonl")])
    assert outputs[0] == outputs[1]


def test_worker_threads_do_not_change_results():
    single = run(_cfg(total_steps=20))
    threaded = run(_cfg(total_steps=20, workers=3))
    assert single.final_bank.same_state(threaded.final_bank)
    assert single.test_outcomes == threaded.test_outcomes


def test_accumulate_only_never_retires():
    summary = run(_cfg(regime=Regime.ACCUMULATE_ONLY))
    assert summary.retired_count == 0
    assert summary.active_trajectory == sorted(summary.active_trajectory)


def test_no_expansion_never_expands():
    summary = run(_cfg(regime=Regime.NO_EXPANSION))
    assert summary.expanded_count == 0


def test_eliminate_only_withdraws_to_zero():
    summary = run(_cfg(regime=Regime.ELIMINATE_ONLY, total_steps=40))
    trajectory = summary.active_trajectory
    assert trajectory[0] == 38
    assert trajectory == sorted(trajectory, reverse=True)
    assert summary.active_count == 0
    assert summary.expanded_count == 0


def test_fixed_size_keeps_active_count():
    summary = run(_cfg(regime=Regime.FIXED_SIZE))
    trajectory = summary.active_trajectory
    assert trajectory[0] == 38
    assert max(trajectory) == 38


def test_empty_bank_can_grow():
    summary = run(_cfg(scenario="empty_bank", total_steps=60))
    assert summary.active_trajectory[0] == 0
    assert summary.expanded_count >= 1
    assert summary.transfer["initial_bank"] == summary.transfer["no_skills"]


def test_embedding_dims_must_agree():
    with pytest.raises(ConfigError):
        RunConfig(retrieval=RetrievalConfig(embedding_dim=8))


def test_bootstrap_gap_brackets_the_difference():
    low, high = bootstrap_gap([True] * 80 + [False] * 20, [True] * 50 + [False] * 50, seed=0, n_resamples=500)
    assert low < 0.3 < high
    assert low > 0.0
    assert all(math.isnan(v) for v in bootstrap_gap([True], [False], seed=0))


@pytest.mark.slow
def test_ablation_report_shape():
    base = RunConfig(total_steps=20)
    regimes = (Regime.SLIM, Regime.NO_EXPANSION, Regime.ACCUMULATE_ONLY)
    report = compare_ablations("reference", [0, 1], base, regimes, n_resamples=200)
    assert sorted(report.ordering) == sorted(r.value for r in regimes)
    assert [report.means[k] for k in report.ordering] == sorted(report.means.values(), reverse=True)
    assert not report.insufficient_replication
    assert set(report.gap_intervals) == {"no_expansion", "accumulate_only"}
    assert len(report.rows()) == 3

    single = compare_ablations("reference", [0], base, (Regime.SLIM,), n_resamples=200)
    assert single.insufficient_replication
    assert single.stds["slim"] == 0.0


def test_non_monotone_needs_a_rise_and_a_fall():
    assert is_non_monotone([38, 40, 36, 30])
    assert not is_non_monotone([38, 38, 35, 33])
    assert not is_non_monotone([0, 2, 2, 5])
    assert not is_non_monotone([])


def _row(step, success, active):
    return MetricsRow(step, success, 0.3, active, 0, 0, 0, 0.0, 0.0)


def test_post_zero_drop_compares_peak_with_the_empty_tail():
    rows = [_row(0, 0.5, 38), _row(10, 0.6, 20), _row(20, 0.45, 0), _row(30, 0.5, 0)]
    assert post_zero_drop(rows) == pytest.approx(0.6 - 0.475)
    assert post_zero_drop(rows[:2]) is None
    assert post_zero_drop([_row(0, 0.2, 0)]) is None


DYNAMICS_SEEDS = range(10)


@pytest.mark.slow
def test_slim_grows_then_settles_while_accumulation_keeps_growing():
    base = RunConfig()
    wins = 0
    for seed in DYNAMICS_SEEDS:
        slim = run(replace(base, seed=seed))
        accumulate = run(replace(base, seed=seed, lifecycle=replace(base.lifecycle,
                                                                    regime=Regime.ACCUMULATE_ONLY)))
        if slim.non_monotone and slim.active_count > 0 and accumulate.active_count > slim.active_count:
            wins += 1
    assert wins > len(DYNAMICS_SEEDS) // 2


@pytest.mark.slow
def test_emptying_the_bank_costs_validation_success():
    base = RunConfig(lifecycle=LifecycleConfig(regime=Regime.ELIMINATE_ONLY))
    dropped = 0
    for seed in DYNAMICS_SEEDS:
        summary = run(replace(base, seed=seed))
        drop = summary.post_zero_drop
        if summary.active_count == 0 and drop is not None and drop >= 0.05:
            dropped += 1
    assert dropped > len(DYNAMICS_SEEDS) // 2


@pytest.mark.slow
def test_full_lifecycle_beats_every_ablation_on_average():
    report = compare_ablations("reference", list(range(10)), RunConfig(), n_resamples=200)
    means = report.means
    assert means["slim"] > means["no_expansion"] > means["accumulate_only"]
    assert means["slim"] > means["random_audit"]
    assert means["slim"] > means["fixed_size"]
    assert report.ordering[0] == "slim"
