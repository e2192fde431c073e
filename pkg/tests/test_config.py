import pytest

from mdeplan.config import AppConfig, ConfigError, flatten, load_config, loads_config
from mdeplan.core import Skill
from mdeplan.world import TaskName


def test_flatten_produces_dotted_keys():
    assert flatten({"a": {"b": 1, "c": {"d": 2}}, "e": 3}) == {"a.b": 1, "a.c.d": 2, "e": 3}


def test_defaults():
    cfg = AppConfig()
    assert cfg.collect_counts == {TaskName.ROD_IN_BOX: 26, TaskName.ROD_IN_DRAWER: 17}
    assert cfg.eval_cost == {"fine_simulator": 200.0, "analytical_drawer": 1.1, "analytical_pick_place": 1.0}
    assert cfg.train.c1 == 3.0 and cfg.train.c2 == 1.0
    assert load_config(None) == cfg


def test_overrides_are_applied():
    cfg = loads_config("""
world.eval_cost.fine_simulator = 50
mde.max_epochs = 10
planner.expansion_budget = 500
planner.RodInBox.epsilon = 2.0
planner.RodInBox.weights = [4, 1]
planner.RodInBox.samples_per_skill = 3
planner.RodInDrawer.d_max.LiftAndDrop = 6.5
collect.RodInBox = 2
collect.RodInDrawer = 0
bench.instances = 3
bench.methods = ["ps_pe"]
verify.instances = 7
""")
    assert cfg.eval_cost["fine_simulator"] == 50.0
    assert cfg.train.max_epochs == 10
    over = cfg.planner_overrides(TaskName.ROD_IN_BOX)
    assert over == {"expansion_budget": 500, "epsilon": 2.0, "weights": (4.0, 1.0)}
    assert cfg.task_kwargs(TaskName.ROD_IN_BOX) == {"samples_per_skill": 3}
    assert cfg.planner_overrides(TaskName.ROD_IN_DRAWER)["d_max"] == {Skill.LIFT_AND_DROP: 6.5}
    assert cfg.collect_counts == {TaskName.ROD_IN_BOX: 2, TaskName.ROD_IN_DRAWER: 0}
    assert (cfg.bench_instances, cfg.bench_methods, cfg.verify_instances) == (3, ("ps_pe",), 7)


@pytest.mark.parametrize("text", [
    "nonsense = 1",
    "world.gravity = 9.8",
    "planner.RodOnShelf.epsilon = 2",
    "planner.RodInBox.d_max.Push = 3",
    "collect.RodInBox = -1",
    "mde.c1 = 0.5",
    "this is not toml",
])
def test_bad_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        loads_config(text)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")
