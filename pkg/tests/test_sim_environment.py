import numpy as np
import pytest
from scipy.special import expit

from harness.utils.run_settings import ConfigError
from sim_environment import (SCENARIOS, EnvConfig, RolloutEvaluator, Split, Stream, derive_seed, empty_support,
                             expected_success, oracle_mec, rollout, sample_train_batch, success_logit, success_prob,
                             world_from_scenario)
from skill_bank import SkillBank, Tier
from skill_router import RetrievalConfig, RoutedSet
from surrogate_policy import PolicyState

RETRIEVAL = RetrievalConfig(embedding_dim=4)


@pytest.fixture
def env():
    return EnvConfig(embedding_dim=4, concept_gain=1.5, clutter_coeff=0.04)


def test_derive_seed_is_stable_and_key_sensitive():
    assert derive_seed(7, Stream.VALIDATION, 1, 3, 0) == derive_seed(7, Stream.VALIDATION, 1, 3, 0)
    assert derive_seed(7, Stream.VALIDATION, 1, 3, 0) != derive_seed(7, Stream.VALIDATION, 1, 3, 1)
    assert derive_seed(7, Stream.VALIDATION, 1, 3, 0) != derive_seed(7, Stream.TEST, 1, 3, 0)


def test_success_logit_matches_coverage_formula(env, small_bank, make_task):
    task = make_task("t", (1, 0), need={"c_pick": 1.0, "c_gen": 0.5}, base_logit=-1.0)
    policy = PolicyState(competence={("pick", "c_pick"): 0.5})
    support = RoutedSet("t", ["gen_a"], ["pick_a"])

    covered_pick = 0.5 + 0.5 * 0.9
    covered_gen = 0.0 + 1.0 * 0.8
    expected = -1.0 + 1.5 * (1.0 * covered_pick + 0.5 * covered_gen) - 0.04 * 2
    assert success_logit(task, policy, support, env, small_bank) == pytest.approx(expected)
    assert success_prob(task, policy, support, env, small_bank) == pytest.approx(expit(expected))


def test_best_routed_weight_covers_a_concept(env, small_bank, make_task):
    task = make_task("t", (1, 0), need={"c_pick": 1.0})
    policy = PolicyState()
    both = RoutedSet("t", [], ["pick_a", "pick_b"])
    best = RoutedSet("t", [], ["pick_a"])
    # pick_b is dominated by pick_a, so it only adds clutter
    diff = success_logit(task, policy, both, env, small_bank) - success_logit(task, policy, best, env, small_bank)
    assert diff == pytest.approx(-env.clutter_coeff)


def test_zero_weight_skill_costs_exactly_clutter(env, small_bank, make_task):
    task = make_task("t", (1, 0))
    policy = PolicyState()
    base = RoutedSet("t", [], ["pick_a"])
    noisy = RoutedSet("t", ["gen_b"], ["pick_a"])
    diff = success_logit(task, policy, noisy, env, small_bank) - success_logit(task, policy, base, env, small_bank)
    assert diff == pytest.approx(-env.clutter_coeff, abs=1e-12)


def test_full_competence_makes_skill_redundant(env, small_bank, make_task):
    task = make_task("t", (1, 0))
    policy = PolicyState(competence={("pick", "c_pick"): 1.0})
    with_skill = RoutedSet("t", [], ["pick_a"])
    without = empty_support(task)
    diff = success_logit(task, policy, with_skill, env, small_bank) - success_logit(task, policy, without, env,
                                                                                     small_bank)
    assert diff == pytest.approx(-env.clutter_coeff)


def test_rollout_is_deterministic_per_seed(env, small_bank, make_task):
    task = make_task("t", (1, 0))
    support = RoutedSet("t", [], ["pick_a"])
    first = rollout(task, PolicyState(), support, env, 1234, small_bank)
    second = rollout(task, PolicyState(), support, env, 1234, small_bank)
    assert first.success == second.success
    assert first.reward == (1.0 if first.success else -env.invalid_action_penalty)
    assert first.split is Split.VALIDATION


def test_failure_reward_uses_penalty(small_bank, make_task):
    env = EnvConfig(embedding_dim=4, invalid_action_penalty=0.5, base_logit=-30.0)
    task = make_task("t", (1, 0), base_logit=-30.0)
    result = rollout(task, PolicyState(), empty_support(task), env, 1, small_bank)
    assert not result.success
    assert result.reward == -0.5


def test_evaluator_outcomes_do_not_depend_on_task_order(env, small_bank, make_task):
    tasks = [make_task(f"t{i}", (1, 0.1 * i)) for i in range(6)]
    evaluator = RolloutEvaluator(env, PolicyState(), RETRIEVAL, Stream.VALIDATION, cycle=2, replicates=3)
    forward = {(r.task_id, r.replicate): r.success for r in evaluator.evaluate(small_bank, tasks, seed=5)}
    backward = {(r.task_id, r.replicate): r.success for r in evaluator.evaluate(small_bank, tasks[::-1], seed=5)}
    assert forward == backward
    assert len(forward) == 18


def test_evaluator_shares_noise_across_active_sets(env, small_bank, make_task):
    tasks = [make_task(f"t{i}", (1, 0)) for i in range(20)]
    evaluator = RolloutEvaluator(env, PolicyState(), RETRIEVAL)
    with_skills = evaluator.evaluate(small_bank, tasks, seed=3)
    without_pick = evaluator.evaluate(small_bank, tasks, seed=3, exclude=frozenset({"pick_a"}))
    # pick_a only raises p, so a success without it implies a success with it
    for a, b in zip(with_skills, without_pick):
        assert a.success_prob >= b.success_prob
        if b.success:
            assert a.success


def test_oracle_mec_is_paired_expectation(env, small_bank, make_task):
    tasks = [make_task("t0", (1, 0)), make_task("t1", (0.9, 0.1))]
    policy = PolicyState()
    delta = oracle_mec(env, policy, small_bank, "pick_a", tasks, RETRIEVAL)
    assert delta > 0
    assert oracle_mec(env, policy, small_bank, "look_a", tasks, RETRIEVAL) is None

    total = expected_success(env, policy, small_bank, tasks, RETRIEVAL)
    without = expected_success(env, policy, small_bank, tasks, RETRIEVAL, exclude=frozenset({"pick_a"}))
    assert delta == pytest.approx(total - without)


def test_reference_world_layout():
    world = world_from_scenario(EnvConfig(), "reference", seed=0)
    bank = world.bank
    assert len(bank) == 38
    assert len(bank.general_pool) == 5
    assert sum(len(pool) for pool in bank.task_pools.values()) == 33
    assert len(world.split(Split.VALIDATION)) == 32
    assert len(world.split(Split.TEST)) == 128
    assert not world.task_ids(Split.TEST) & world.task_ids(Split.VALIDATION)
    for t in world.type_names:
        assert world.uncovered[t]
        assert all(c in world.concepts_by_type[t] for c in world.uncovered[t])


def test_world_generation_is_reproducible():
    a = world_from_scenario(EnvConfig(), "reference", seed=4)
    b = world_from_scenario(EnvConfig(), "reference", seed=4)
    assert a.bank.same_state(b.bank)
    assert [t.id for t in a.split(Split.TRAIN)] == [t.id for t in b.split(Split.TRAIN)]
    assert np.array_equal(a.split(Split.TEST)[0].embedding, b.split(Split.TEST)[0].embedding)


@pytest.mark.parametrize("scenario", sorted(SCENARIOS))
def test_every_scenario_builds(scenario):
    world = world_from_scenario(EnvConfig(), scenario, seed=1)
    tasks, bank = world
    assert set(tasks) == {Split.TRAIN, Split.VALIDATION, Split.TEST}
    if scenario == "empty_bank":
        assert len(bank) == 0
    elif scenario == "weak_init":
        task_skills = sum(len(p) for p in bank.task_pools.values())
        assert 0 < task_skills < 33
    elif scenario == "noisy_init":
        assert any("_mis_" in s.id for s in bank)
        assert sum(1 for s in bank if s.tier is Tier.TASK_SPECIFIC and not s.concept_weights) > 6


@pytest.mark.parametrize("scenario", ["capacity_limited", "capacity_saturated"])
def test_capacity_scenarios_focus_on_one_general_concept(scenario):
    world = world_from_scenario(EnvConfig(), scenario, seed=0)
    assert world.env.general_need_prob == 1.0
    assert world.env.general_need == 1.0
    assert len(world.general_concepts) == 1
    assert all(world.general_concepts[0] in t.required_concepts for t in world.split(Split.VALIDATION))
    assert sorted(world.bank.general_pool) == ["gen_00", "gen_01"]
    assert world.bank.get("gen_00").concept_weights == {}
    assert set(world.bank.get("gen_01").concept_weights) == set(world.general_concepts)


def test_capacity_scenarios_differ_only_in_cap():
    limited, saturated = SCENARIOS["capacity_limited"], SCENARIOS["capacity_saturated"]
    assert limited.learn_overrides["capacity_cap"] > saturated.learn_overrides["capacity_cap"]
    assert limited.env_overrides == saturated.env_overrides
    assert {k: v for k, v in limited.learn_overrides.items() if k != "capacity_cap"} == \
        {k: v for k, v in saturated.learn_overrides.items() if k != "capacity_cap"}


def test_uncovered_concept_is_the_most_frequent():
    world = world_from_scenario(EnvConfig(), "reference", seed=0)
    for t in world.type_names:
        assert world.uncovered[t] == [world.concepts_by_type[t][0]]
        covered_ids = {c for s in world.bank.task_pools[t] for c in world.bank.get(s).concept_weights}
        assert not covered_ids & set(world.uncovered[t])


def test_reference_skill_kinds_per_type():
    world = world_from_scenario(EnvConfig(), "reference", seed=0)
    bank = world.bank
    pick = [bank.get(f"pick_{n:02d}") for n in range(6)]
    covers, hub, stale, twin = pick[:3], pick[3], pick[4], pick[5]
    assert all(len(s.concept_weights) == 1 for s in covers)
    assert hub.concept_weights == {} and stale.concept_weights == {}
    assert twin.concept_weights == covers[0].concept_weights
    assert float(twin.embedding @ covers[0].embedding) > 0.99
    assert len(bank.task_pools["cool"]) == 5


def test_stale_skill_sits_closest_to_uncovered_tasks():
    world = world_from_scenario(EnvConfig(), "reference", seed=0)
    stale = world.bank.get("pick_04")
    hub = world.bank.get("pick_03")
    uncovered = world.uncovered["pick"][0]
    tasks = [t for t in world.split(Split.TRAIN) if t.task_type == "pick" and t.primary_concept == uncovered]
    assert tasks
    assert np.mean([t.embedding @ stale.embedding for t in tasks]) > np.mean([t.embedding @ hub.embedding
                                                                              for t in tasks])


def test_general_skills_start_with_the_empty_one():
    world = world_from_scenario(EnvConfig(), "reference", seed=0)
    general = {s: world.bank.get(s) for s in world.bank.general_pool}
    assert general["gen_00"].concept_weights == {}
    assert [next(iter(general[f"gen_0{n}"].concept_weights)) for n in (1, 2, 3)] == world.general_concepts
    assert general["gen_04"].concept_weights == general["gen_01"].concept_weights


def test_unknown_scenario_raises():
    with pytest.raises(ConfigError):
        world_from_scenario(EnvConfig(), "nope", seed=0)


def test_train_batches_are_seeded_per_step():
    world = world_from_scenario(EnvConfig(), "reference", seed=0)
    first = sample_train_batch(world, 16, seed=0, step=1)
    assert [t.id for t in first] == [t.id for t in sample_train_batch(world, 16, seed=0, step=1)]
    assert len({t.id for t in first}) == 16
    assert all(t.split is Split.TRAIN for t in first)


def test_bank_with_no_skills_routes_nothing(env, make_task):
    task = make_task("t", (1, 0))
    evaluator = RolloutEvaluator(env, PolicyState(), RETRIEVAL)
    (result,) = evaluator.evaluate(SkillBank(), [task], seed=0)
    assert len(result.routed) == 0


def test_balanced_batches_split_evenly_across_types():
    world = world_from_scenario(EnvConfig(), "capacity_limited", seed=0)
    for step in (1, 2, 3):
        batch = sample_train_batch(world, 16, seed=0, step=step)
        assert len({t.id for t in batch}) == 16
        counts = [sum(1 for t in batch if t.task_type == name) for name in world.type_names]
        assert sorted(set(counts)) == [2, 3]
