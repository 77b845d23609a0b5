from functools import partial

import numpy as np
import pytest

from harness.utils.run_settings import ConfigError
from lifecycle_manager import (TYPE_ANCHOR, BucketBook, Decision, DuplicateSkillError, EmptyBucketError,
                               FailureBucket, LifecycleConfig, Regime, apply_decisions, decide,
                               dominant_uncovered_concept, expand_from, fixed_size_adjust, move_budget,
                               next_expanded_id, retire_predicate, synth_create, withdraw_to_target,
                               withdrawal_target)
from sim_environment import Split
from skill_auditor import MecRecord, SplitLeakageError, ValidationOutcome
from skill_bank import EventKind, Origin, SkillBank
from skill_router import RoutedSet, cosine

CFG = LifecycleConfig()
FRESH = (0.6, 0.8)


def _retirable(skill_id, **kw):
    return MecRecord(skill_id, mec_smoothed=0.0, exposure=40, streak=3, audits_seen=3, **kw)


def _fail(task, routed):
    return ValidationOutcome(task.id, routed, False, 0.0)


def _pick_routed(task_id, anchor="pick_a"):
    return RoutedSet(task_id, ["gen_a", "gen_b"], [anchor] if anchor else [])


@pytest.fixture
def failing_bucket_book(make_task):
    """25 failures anchored on pick_a, all needing the uncovered concept c_new."""
    tasks = [make_task(f"f{i}", FRESH, need={"c_pick": 1.0, "c_new": 1.0}) for i in range(25)]
    book = BucketBook()
    book.observe([_fail(t, _pick_routed(t.id)) for t in tasks], {t.id: t for t in tasks}, step=10)
    return book


def test_decide_precedence():
    assert decide(_retirable("s", failures=50), 0.1, CFG) is Decision.RETIRE
    assert decide(MecRecord("s", mec_smoothed=0.01, failures=20), 0.2, CFG) is Decision.EXPAND
    assert decide(MecRecord("s", mec_smoothed=0.03), 0.9, CFG) is Decision.RETAIN
    assert decide(MecRecord("s", mec_smoothed=0.01), 0.9, CFG) is Decision.HOLD
    assert decide(MecRecord("s"), None, CFG) is Decision.HOLD


@pytest.mark.parametrize("field,value", [("exposure", 29), ("streak", 2), ("mec_smoothed", 0.001)])
def test_retire_needs_every_guard(field, value):
    record = _retirable("s")
    record = MecRecord(**{**record.__dict__, field: value})
    assert not retire_predicate(record, CFG)


def test_expand_needs_low_perf_and_failures():
    assert decide(MecRecord("s", mec_smoothed=0.01, failures=19), 0.2, CFG) is Decision.HOLD
    assert decide(MecRecord("s", mec_smoothed=0.01, failures=20), 0.4, CFG) is Decision.HOLD
    assert decide(MecRecord("s", mec_smoothed=0.05, failures=20), 0.2, CFG) is Decision.RETAIN


def test_config_validation():
    with pytest.raises(ConfigError):
        LifecycleConfig(tau_retire=0.05, tau_keep=0.03)
    with pytest.raises(ConfigError):
        LifecycleConfig(patience=0)
    with pytest.raises(ConfigError):
        LifecycleConfig(regime="sometimes")
    assert LifecycleConfig(regime="fixed_size").regime is Regime.FIXED_SIZE


def test_move_budget_defaults_to_audit_plus_expansion():
    assert move_budget(CFG, 4) == 6
    assert move_budget(LifecycleConfig(max_moves_per_cycle=1), 4) == 1


def test_retirement_returns_new_bank(small_bank):
    records = {"pick_c": _retirable("pick_c")}
    bank, events = apply_decisions(small_bank, {"pick_c": Decision.RETIRE}, BucketBook(), synth_create, CFG,
                                   step=30, records=records)
    assert "pick_c" not in bank.active
    assert "pick_c" in small_bank.active
    assert [(e.skill_id, e.kind) for e in events] == [("pick_c", EventKind.RETIRE)]
    assert events[0].exposure == 40


def test_accumulate_only_holds_instead_of_retiring(small_bank):
    cfg = LifecycleConfig(regime=Regime.ACCUMULATE_ONLY)
    bank, events = apply_decisions(small_bank, {"pick_c": Decision.RETIRE}, BucketBook(), synth_create, cfg,
                                   records={"pick_c": _retirable("pick_c")})
    assert "pick_c" in bank.active
    assert events[0].kind is EventKind.HOLD
    assert events[0].reason == "retirement disabled"


def test_move_cap_limits_retirements(small_bank):
    decisions = {s: Decision.RETIRE for s in ("pick_a", "pick_b", "pick_c")}
    bank, events = apply_decisions(small_bank, decisions, BucketBook(), synth_create, CFG, max_moves=2)
    assert len(small_bank.active) - len(bank.active) == 2
    assert events[-1].kind is EventKind.HOLD
    assert events[-1].reason == "move cap reached"


def test_random_audit_is_seeded(small_bank):
    cfg = LifecycleConfig(regime=Regime.RANDOM_AUDIT)
    decisions = {s: Decision.RETAIN for s in ("pick_a", "pick_b", "pick_c", "look_a")}
    runs = [apply_decisions(small_bank, decisions, BucketBook(), synth_create, cfg,
                            rng=np.random.default_rng(9))[1] for _ in range(2)]
    assert [(e.skill_id, e.kind) for e in runs[0]] == [(e.skill_id, e.kind) for e in runs[1]]
    assert all(e.reason == "random audit draw" for e in runs[0])


def test_expansion_from_anchor_bucket(small_bank, failing_bucket_book):
    records = {"pick_a": MecRecord("pick_a", mec_smoothed=0.01, failures=25, audits_seen=1)}
    creator = partial(synth_create, step=10)
    bank, events = apply_decisions(small_bank, {"pick_a": Decision.EXPAND}, failing_bucket_book, creator, CFG,
                                   step=10, records=records)
    expand = [e for e in events if e.kind is EventKind.EXPAND]
    assert len(expand) == 1
    new = bank.get(expand[0].skill_id)
    assert new.id == "dyn_pick_001"
    assert new.origin is Origin.EXPANDED and new.created_at_step == 10
    assert new.concept_weights == {"c_new": CFG.expand_boost}
    assert expand[0].anchor_id == "pick_a"
    assert len(expand[0].source_tasks) == 25
    assert failing_bucket_book.get("pick", "pick_a").count == 0


@pytest.mark.parametrize("regime", [Regime.NO_EXPANSION, Regime.ELIMINATE_ONLY])
def test_regimes_without_expansion(small_bank, failing_bucket_book, regime):
    cfg = LifecycleConfig(regime=regime)
    bank, events = apply_decisions(small_bank, {"pick_a": Decision.EXPAND}, failing_bucket_book, synth_create, cfg)
    assert bank.expanded_count() == 0
    assert all(e.kind is not EventKind.EXPAND for e in events)


def test_retire_decision_can_also_expand(small_bank, failing_bucket_book):
    record = _retirable("pick_a", failures=25, last_perf_with=0.1)
    bank, events = apply_decisions(small_bank, {"pick_a": Decision.RETIRE}, failing_bucket_book, synth_create,
                                   CFG, records={"pick_a": record})
    assert "pick_a" not in bank.active
    assert bank.expanded_count() == 1
    assert [e.kind for e in events] == [EventKind.RETIRE, EventKind.EXPAND]


def test_expansion_budget_takes_largest_buckets(small_bank, make_task):
    book = BucketBook()
    outcomes, tasks = [], {}
    for anchor, n, direction in (("pick_a", 5, (0.6, 0.8)), ("pick_b", 9, (0.6, -0.8)), ("pick_c", 7, (-1, 0))):
        for i in range(n):
            task = make_task(f"{anchor}-{i}", direction, need={"c_new": 1.0})
            tasks[task.id] = task
            outcomes.append(_fail(task, _pick_routed(task.id, anchor)))
    book.observe(outcomes, tasks, step=0)

    cfg = LifecycleConfig(expand_budget=2)
    decisions = {a: Decision.EXPAND for a in ("pick_a", "pick_b", "pick_c")}
    bank, events = apply_decisions(small_bank, decisions, book, synth_create, cfg)
    anchors = [e.anchor_id for e in events if e.kind is EventKind.EXPAND]
    assert anchors == ["pick_b", "pick_c"]
    assert book.get("pick", "pick_a").count == 5


def test_type_level_bucket_expands_an_empty_bank(make_task):
    tasks = [make_task(f"e{i}", (1, 0), need={"c_pick": 1.0}) for i in range(20)]
    book = BucketBook()
    book.observe([_fail(t, RoutedSet(t.id)) for t in tasks], {t.id: t for t in tasks}, step=0)
    assert book.type_perf["pick"] == 0.0
    assert book.get("pick", TYPE_ANCHOR).count == 20

    bank, events = apply_decisions(SkillBank(), {}, book, synth_create, CFG)
    assert bank.expanded_count() == 1
    assert events[0].anchor_id == TYPE_ANCHOR


def test_bucket_book_refuses_test_outcomes(make_task):
    task = make_task("t", (1, 0))
    outcome = ValidationOutcome(task.id, RoutedSet(task.id), False, 0.0, split=Split.TEST)
    with pytest.raises(SplitLeakageError):
        BucketBook().observe([outcome], {task.id: task}, step=0)


def test_creator_targets_dominant_uncovered_concept(small_bank, failing_bucket_book):
    bucket = failing_bucket_book.get("pick", "pick_a")
    assert dominant_uncovered_concept(bucket, small_bank) == "c_new"
    skill = synth_create(bucket, small_bank)
    assert cosine(skill.embedding, np.array([0.6, 0.8, 0.0, 0.0])) == pytest.approx(1.0)


def test_creator_rejects_duplicates_and_empty_buckets(small_bank, make_task):
    task = make_task("d", (1, 0), need={"c_new": 1.0})
    bucket = FailureBucket("pick_a", "pick", [(task, _pick_routed(task.id))])
    with pytest.raises(DuplicateSkillError):
        synth_create(bucket, small_bank)
    with pytest.raises(EmptyBucketError):
        synth_create(FailureBucket("pick_a", "pick"), small_bank)


def test_duplicate_check_includes_retired_skills(small_bank, make_task):
    small_bank.retire_skill("pick_a")
    task = make_task("d", (1, 0), need={"c_new": 1.0})
    with pytest.raises(DuplicateSkillError):
        synth_create(FailureBucket("pick_a", "pick", [(task, _pick_routed(task.id))]), small_bank)


def test_rejected_expansion_becomes_skip(small_bank, make_task):
    task = make_task("d", (1, 0), need={"c_new": 1.0})
    book = BucketBook()
    bucket = FailureBucket("pick_a", "pick", [(task, _pick_routed(task.id))])
    before = len(small_bank)
    event = expand_from(small_bank, bucket, book, synth_create, np.random.default_rng(0), 5, "failure bucket")
    assert event.kind is EventKind.SKIP
    assert event.reason.startswith("creator rejected")
    assert len(small_bank) == before
    assert bucket.count == 1


def test_expanded_ids_are_sequential(small_bank, make_skill):
    assert next_expanded_id(small_bank, "pick") == "dyn_pick_001"
    small_bank.add_skill(make_skill("dyn_pick_001", FRESH, origin=Origin.EXPANDED))
    assert next_expanded_id(small_bank, "pick") == "dyn_pick_002"
    assert next_expanded_id(small_bank, "look") == "dyn_look_001"


def test_fixed_size_removes_least_recently_routed(small_bank):
    records = {s: MecRecord(s, last_routed_step=step)
               for s, step in (("gen_a", 30), ("gen_b", 5), ("pick_a", 30), ("pick_b", 10), ("pick_c", 3),
                               ("look_a", 20))}
    bank, events = fixed_size_adjust(small_bank, CFG, 4, BucketBook(), synth_create, records, step=30,
                                     protect=["pick_c"])
    assert bank.active == {"gen_a", "pick_a", "pick_c", "look_a"}
    assert [e.reason for e in events] == ["fixed size: LRU removal"] * 2


def test_fixed_size_refills_from_pending_buckets(small_bank, failing_bucket_book):
    small_bank.retire_skill("pick_c")
    bank, events = fixed_size_adjust(small_bank, CFG, 6, failing_bucket_book, synth_create, {}, step=20)
    assert len(bank.active) == 6
    assert events[0].kind is EventKind.EXPAND
    assert events[0].reason == "fixed size: refill"


def test_withdrawal_schedule_reaches_zero():
    assert withdrawal_target(38, 0, 120, 0.75) == 38
    assert withdrawal_target(38, 45, 120, 0.75) == 19
    assert withdrawal_target(38, 46, 120, 0.75) == 19
    assert withdrawal_target(38, 90, 120, 0.75) == 0
    assert withdrawal_target(38, 120, 120, 0.75) == 0


def test_withdraw_retires_lowest_contribution_first(small_bank):
    records = {"pick_a": MecRecord("pick_a", mec_smoothed=0.2), "pick_b": MecRecord("pick_b", mec_smoothed=-0.1),
               "gen_a": MecRecord("gen_a", mec_smoothed=0.05)}
    bank, events = withdraw_to_target(small_bank, 3, records)
    # unaudited skills rank as neutral, after audited harmful ones
    assert [e.skill_id for e in events] == ["pick_b", "gen_b", "look_a"]
    assert bank.active == {"pick_a", "gen_a", "pick_c"}


def test_withdraw_prefers_audited_zero_over_unaudited(small_bank):
    records = {s: MecRecord(s, mec_smoothed=0.3) for s in ("gen_a", "pick_a", "pick_b", "look_a")}
    records["pick_b"] = MecRecord("pick_b", mec_smoothed=0.0)
    bank, events = withdraw_to_target(small_bank, 5, records)
    assert [e.skill_id for e in events] == ["pick_b"]
    assert "gen_b" in bank.active and "pick_c" in bank.active


def _reference_decision(smoothed, exposure, streak, failures, perf_with, cfg):
    """Plain transcription of the four lifecycle rules, checked in priority order."""
    if smoothed is None:
        return Decision.HOLD
    if smoothed < cfg.tau_retire and exposure >= cfg.min_exposure and streak >= cfg.patience:
        return Decision.RETIRE
    if (perf_with is not None and perf_with < cfg.tau_expand and failures >= cfg.n_expand
            and smoothed < cfg.tau_keep):
        return Decision.EXPAND
    if smoothed >= cfg.tau_keep:
        return Decision.RETAIN
    return Decision.HOLD


@pytest.mark.parametrize("cfg", [CFG, LifecycleConfig(tau_keep=0.05, min_exposure=20, n_expand=15, patience=1)])
def test_decide_matches_the_rule_table_on_random_records(cfg):
    rng = np.random.default_rng(7)
    n = 100_000
    # thresholds themselves are over-represented so boundary ties get exercised
    edges = np.array([cfg.tau_retire, cfg.tau_keep, cfg.tau_retire - 1e-9, cfg.tau_keep - 1e-9, 0.0])
    smoothed = np.where(rng.random(n) < 0.3, rng.choice(edges, n), rng.uniform(-0.2, 0.2, n))
    missing = rng.random(n) < 0.05
    audits = rng.integers(0, 8, n)
    streak = np.minimum(rng.integers(0, 8, n), audits)
    exposure = rng.integers(0, 2 * cfg.min_exposure, n)
    failures = rng.integers(0, 2 * cfg.n_expand, n)
    perf_with = np.where(rng.random(n) < 0.2, cfg.tau_expand, rng.uniform(0.0, 1.0, n))
    no_perf = rng.random(n) < 0.05

    counts = {d: 0 for d in Decision}
    for i in range(n):
        s = None if missing[i] else float(smoothed[i])
        p = None if no_perf[i] else float(perf_with[i])
        record = MecRecord("s", mec_smoothed=s, exposure=int(exposure[i]), streak=int(streak[i]),
                           failures=int(failures[i]), audits_seen=int(audits[i]))
        expected = _reference_decision(s, record.exposure, record.streak, record.failures, p, cfg)
        got = decide(record, p, cfg)
        assert got is expected, (record, p)
        counts[got] += 1
    assert all(count > 0 for count in counts.values())
