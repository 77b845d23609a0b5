import numpy as np
import pytest

from harness.utils.phase_colors import configure_console
from sim_environment import SimTask, Split
from skill_bank import Origin, Skill, SkillBank, Tier, unit

DIM = 4


def axis(*weights: float) -> np.ndarray:
    """Unit vector from up to DIM leading components."""
    v = np.zeros(DIM)
    v[:len(weights)] = weights
    return unit(v)


@pytest.fixture(autouse=True)
def quiet_console():
    configure_console(False)
    yield
    configure_console(True)


@pytest.fixture
def make_skill():
    def _make(skill_id, direction, task_type="pick", weights=None, tier=Tier.TASK_SPECIFIC,
              origin=Origin.INITIAL, step=0):
        return Skill(
            id=skill_id,
            tier=tier,
            embedding=axis(*direction),
            task_type=None if tier is Tier.GENERAL else task_type,
            concept_weights=dict(weights or {}),
            origin=origin,
            created_at_step=step,
        )
    return _make


@pytest.fixture
def make_task():
    counter = {"index": 0}

    def _make(task_id, direction, task_type="pick", need=None, split=Split.VALIDATION, base_logit=0.0,
              index=None):
        if index is None:
            index = counter["index"]
            counter["index"] += 1
        return SimTask(
            id=task_id,
            index=index,
            task_type=task_type,
            embedding=axis(*direction),
            required_concepts=dict(need or {"c_pick": 1.0}),
            split=split,
            base_logit=base_logit,
        )
    return _make


@pytest.fixture
def small_bank(make_skill):
    """Two general skills, three pick skills and one look skill."""
    return SkillBank([
        make_skill("gen_a", (0, 0, 0, 1), tier=Tier.GENERAL, weights={"c_gen": 0.8}),
        make_skill("gen_b", (0, 0, 1, 0), tier=Tier.GENERAL),
        make_skill("pick_a", (1, 0), weights={"c_pick": 0.9}),
        make_skill("pick_b", (1, 0.2), weights={"c_pick": 0.5}),
        make_skill("pick_c", (0, 1)),
        make_skill("look_a", (1, 0), task_type="look", weights={"c_look": 0.9}),
    ])
