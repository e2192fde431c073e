import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exact_mdes
from mdeplan.core import DEFAULT_SCENE, Pose2, Skill, SkillAction, WorldState
from mdeplan.planner import (
    ModelSelector,
    OracleInfeasible,
    PlannerConfig,
    RandomModel,
    SearchState,
    SingleModel,
    Status,
    choose_queue,
    default_planner_config,
    full_expansion,
    generate_actions,
    optimal_oracle,
    oracle_search,
    partial_expansion,
    plan,
    plan_baseline,
    plan_ps_only,
    solve,
    state_key,
)
from mdeplan.world import TaskName, TaskSpec, build_models, edge_cost, ground_truth, sample_instance
from reference_wastar import weighted_astar

SC = DEFAULT_SCENE
BOX = TaskSpec(TaskName.ROD_IN_BOX, target_rod=0)
BOX_MODELS = build_models(BOX.model_names)


def start_state(rod0=(30.0, 25.0, 0.0), rod1=(10.0, 8.0, math.pi / 2), drawer=0.0):
    return WorldState(Pose2(*SC.gripper_home), SC.gripper_open_width, None, (Pose2(*rod0), Pose2(*rod1)), drawer)


class Stub:
    """Deviation estimator returning fixed values per skill."""

    def __init__(self, by_skill, default=0.0):
        self.by_skill, self.default = by_skill, default

    def predict(self, s, a):
        return self.by_skill.get(a.skill, self.default)


def stub_table(task, per_model):
    return {(s, m): Stub({}, v) for m, v in per_model.items() for s in task.skills}


# -- choose_queue -------------------------------------------------------------------

@pytest.mark.parametrize("keys,weights,expected", [
    ([5.0, 40.0], (10.0, 1.0), 1),
    ([5.0, 100.0], (10.0, 1.0), 0),
    ([10.0, 100.0, 110.0], (10.0, 1.1, 1.0), 0),
])
def test_choose_queue_examples(keys, weights, expected):
    assert choose_queue(keys, weights) == expected


def test_choose_queue_skips_empty_and_breaks_ties_toward_faster():
    assert choose_queue([None, None], (10.0, 1.0)) is None
    assert choose_queue([None, 7.0], (10.0, 1.0)) == 1
    assert choose_queue([4.0, 40.0], (10.0, 1.0)) == 1
    assert choose_queue([1.0, None, 1.0], (1.0, 1.0, 1.0)) == 2


@given(st.lists(st.one_of(st.none(), st.floats(0, 1e4)), min_size=1, max_size=4))
def test_choose_queue_returns_an_argmin(keys):
    weights = sorted((float(len(keys) - j) for j in range(len(keys))), reverse=True)
    i = choose_queue(keys, weights)
    live = [(w * k, j) for j, (w, k) in enumerate(zip(weights, keys)) if k is not None]
    if not live:
        assert i is None
    else:
        assert weights[i] * keys[i] == min(v for v, _ in live)


# -- expansions -----------------------------------------------------------------------

def held_start():
    s = start_state()
    return ground_truth(s, SkillAction(Skill.PICK, (30.0, 25.0, 0.0, 0.0)))


def drops(n=3):
    return [SkillAction(Skill.LIFT_AND_DROP, (40.0 + 2 * k, 14.0)) for k in range(n)]


class PerAction:
    def __init__(self, covered):
        self.covered = covered

    def predict(self, s, a):
        return 0.0 if a in self.covered else 100.0


def test_full_expansion_uses_fastest_model_in_precondition():
    s, A = held_start(), drops()
    mdes = {(Skill.LIFT_AND_DROP, "fine_simulator"): Stub({}),
            (Skill.LIFT_AND_DROP, "analytical_pick_place"): PerAction({A[0]})}
    sel = ModelSelector(BOX_MODELS, mdes, BOX.d_max)
    succ = full_expansion(s, A, BOX_MODELS, sel)
    assert [(a, i) for a, i, _ in succ] == [(A[0], 1), (A[1], 0), (A[2], 0)]


def test_full_expansion_drops_uncovered_edges():
    s, A = held_start(), drops()
    mdes = stub_table(BOX, {"fine_simulator": 100.0, "analytical_pick_place": 100.0})
    assert full_expansion(s, A, BOX_MODELS, ModelSelector(BOX_MODELS, mdes, BOX.d_max)) == []


def test_partial_expansion_defers_actions_outside_the_precondition():
    s, A = held_start(), drops()
    mdes = {(Skill.LIFT_AND_DROP, "fine_simulator"): Stub({}),
            (Skill.LIFT_AND_DROP, "analytical_pick_place"): PerAction({A[1]})}
    sel = ModelSelector(BOX_MODELS, mdes, BOX.d_max)
    succ, deferred = partial_expansion(s, 1, A, BOX_MODELS, sel)
    assert [(a, i) for a, i, _ in succ] == [(A[1], 1)]
    assert deferred == [A[0], A[2]]

    everything = ModelSelector(BOX_MODELS, None, BOX.d_max)
    succ, deferred = partial_expansion(s, 1, A, BOX_MODELS, everything)
    assert deferred == [] and len(succ) == 3

    nothing = ModelSelector(BOX_MODELS, {}, BOX.d_max)
    succ, deferred = partial_expansion(s, 1, A, BOX_MODELS, nothing)
    assert succ == [] and deferred == A

    with pytest.raises(ValueError):
        partial_expansion(s, 0, A, BOX_MODELS, sel)


def test_anchor_closure_and_single_queue_closure():
    search = SearchState(3, 5.0)
    search.close_all("k")
    assert all("k" in c for c in search.closed)


# -- plan --------------------------------------------------------------------------

def test_start_in_goal_gives_empty_plan():
    s = start_state(rod0=(*SC.box.center, 0.0))
    for fn in (plan, plan_ps_only):
        res = fn(s, BOX, BOX_MODELS, None, default_planner_config(TaskName.ROD_IN_BOX))
        assert res.status is Status.FOUND and res.actions == [] and res.cost == 0.0
        assert len(res.predicted_states) == 1
    assert optimal_oracle(s, BOX, BOX_MODELS, None, default_planner_config(TaskName.ROD_IN_BOX)) == 0.0


def brute_force_two_steps(s, task, models, mdes, cfg):
    """Cheapest plan of length <= 2 over the PS edge set, by enumeration."""
    sel = ModelSelector(models, mdes, task.d_max)

    def edges(x):
        for a, i, x2 in full_expansion(x, generate_actions(x, state_key(x, cfg), task, cfg), models, sel):
            yield x2, edge_cost(x, a, x2)

    best = math.inf
    for s1, c1 in edges(s):
        if task.goal(s1):
            best = min(best, c1)
        for s2, c2 in edges(s1):
            if task.goal(s2):
                best = min(best, c1 + c2)
    return best


def test_center_graspable_start_gives_two_step_plan():
    s = start_state(rod0=(20.0, 30.0, 0.0))
    cfg = default_planner_config(TaskName.ROD_IN_BOX, epsilon=1.0)
    mdes = exact_mdes(BOX)
    res = plan(s, BOX, BOX_MODELS, mdes, cfg)
    assert res.found
    assert [a.skill for a in res.actions] == [Skill.PICK, Skill.LIFT_AND_DROP]
    assert res.actions[0].theta[3] == 0.0
    assert len(res.predicted_states) == 3
    g_star = optimal_oracle(s, BOX, BOX_MODELS, mdes, cfg)
    assert res.cost == pytest.approx(g_star)
    assert g_star == pytest.approx(brute_force_two_steps(s, BOX, BOX_MODELS, mdes, cfg))


def test_only_simulator_covers_the_drop():
    s = start_state()
    cfg = default_planner_config(TaskName.ROD_IN_BOX)
    mdes = {(Skill.PICK, "fine_simulator"): Stub({}), (Skill.PICK, "analytical_pick_place"): Stub({}),
            (Skill.LIFT_AND_DROP, "fine_simulator"): Stub({}),
            (Skill.LIFT_AND_DROP, "analytical_pick_place"): Stub({}, default=100.0)}
    for fn in (plan, plan_ps_only):
        res = fn(s, BOX, BOX_MODELS, mdes, cfg)
        assert res.found
        drop_models = [i for a, i in zip(res.actions, res.models_used) if a.skill is Skill.LIFT_AND_DROP]
        assert drop_models == [0]
        assert all(i == 1 for a, i in zip(res.actions, res.models_used) if a.skill is Skill.PICK)


def test_no_model_coverage_exhausts():
    s = start_state()
    cfg = default_planner_config(TaskName.ROD_IN_BOX)
    res = plan(s, BOX, BOX_MODELS, {}, cfg)
    assert res.status is Status.EXHAUSTED and res.cost == math.inf
    assert optimal_oracle(s, BOX, BOX_MODELS, {}, cfg) == math.inf


def test_expansion_budget_gives_timeout():
    s, task = sample_instance(TaskName.ROD_IN_BOX, 5)
    cfg = default_planner_config(TaskName.ROD_IN_BOX, expansion_budget=1)
    res = plan(s, task, build_models(task.model_names), None, cfg)
    assert res.status is Status.TIMEOUT and res.expansions == 1
    res = plan(s, task, build_models(task.model_names), None,
               default_planner_config(TaskName.ROD_IN_BOX, time_budget=0.0))
    assert res.status is Status.TIMEOUT


def test_oracle_budget_signals_infeasible():
    s, task = sample_instance(TaskName.ROD_IN_BOX, 5)
    with pytest.raises(OracleInfeasible):
        oracle_search(s, task, build_models(task.model_names), None,
                      default_planner_config(TaskName.ROD_IN_BOX), max_expansions=1)


@pytest.mark.parametrize("method", ["ps_pe", "ps_only", "random", "sim_only", "analytical_only"])
def test_planning_is_deterministic(method):
    for task_name in TaskName:
        s, task = sample_instance(task_name, 11)
        mdes = exact_mdes(task)
        a = solve(method, s, task, mdes, seed=4)
        b = solve(method, s, task, mdes, seed=4)
        assert a.dumps(include_wall_time=False) == b.dumps(include_wall_time=False)


def test_sim_only_charges_every_evaluation_to_the_simulator():
    s, task = sample_instance(TaskName.ROD_IN_BOX, 3)
    res = solve("sim_only", s, task)
    assert res.found
    assert res.per_model_evals[1] == 0 and res.per_model_evals[0] > 0
    assert res.weighted_eval_cost == pytest.approx(200.0 * res.per_model_evals[0])


def test_analytical_only_never_solves_the_drawer_task():
    for seed in range(3):
        s, task = sample_instance(TaskName.ROD_IN_DRAWER, seed)
        assert not solve("analytical_only", s, task).found


def test_evaluation_log_obeys_the_ps_rule_and_never_repeats_an_edge():
    for task_name in TaskName:
        for seed in range(4):
            s, task = sample_instance(task_name, seed)
            models = build_models(task.model_names)
            mdes = exact_mdes(task)
            cfg = default_planner_config(task_name, record_evaluations=True)
            for fn in (plan, plan_ps_only):
                res = fn(s, task, models, mdes, cfg)
                seen = set()
                for key, st_, a, i in res.evaluations:
                    fastest = max(j for j, m in enumerate(models) if mdes[(a.skill, m.name)].predict(st_, a) < task.d_max[a.skill])
                    assert i == fastest
                    assert (key, a) not in seen
                    seen.add((key, a))
                assert sum(res.per_model_evals.values()) == len(res.evaluations)


def test_plan_uses_queue_weights_of_matching_length():
    s, task = sample_instance(TaskName.ROD_IN_DRAWER, 0)
    with pytest.raises(ValueError):
        plan(s, task, build_models(task.model_names), None, PlannerConfig(weights=(10.0, 1.0)))


def test_planner_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(epsilon=0.5)
    with pytest.raises(ValueError):
        PlannerConfig(weights=(1.0, 10.0))
    with pytest.raises(ValueError):
        PlannerConfig(weights=(1.0, 0.0))
    assert default_planner_config(TaskName.ROD_IN_DRAWER).weights == (10.0, 1.1, 1.0)
    assert default_planner_config(TaskName.ROD_IN_DRAWER).epsilon == 10.0


def test_random_baseline_is_seeded():
    s, task = sample_instance(TaskName.ROD_IN_BOX, 2)
    cfg = default_planner_config(TaskName.ROD_IN_BOX)
    a = plan_baseline(s, task, RandomModel(7), cfg)
    b = plan_baseline(s, task, RandomModel(7), cfg)
    assert a.dumps(False) == b.dumps(False)
    with pytest.raises(ValueError):
        plan_baseline(s, task, "sim", cfg)
    single = plan_baseline(s, task, SingleModel(1), cfg)
    assert set(single.models_used) <= {1}


# -- search properties -------------------------------------------------------------------

@settings(max_examples=15)
@given(st.integers(0, 5000))
def test_single_model_search_matches_textbook_weighted_astar(seed):
    s, task = sample_instance(TaskName.ROD_IN_BOX, seed)
    model = build_models(["analytical_pick_place"])
    cfg = default_planner_config(TaskName.ROD_IN_BOX, weights=(1.0,))
    ref = weighted_astar(s, task, model[0].forward, cfg)
    assert plan(s, task, model, None, cfg).cost == ref
    assert plan_ps_only(s, task, model, None, cfg).cost == ref


@settings(max_examples=10)
@given(st.integers(0, 5000))
def test_heuristic_is_admissible_along_optimal_paths(seed):
    s, task = sample_instance(TaskName.ROD_IN_BOX, seed)
    models = build_models(task.model_names)
    cfg = default_planner_config(TaskName.ROD_IN_BOX)
    try:
        res = oracle_search(s, task, models, exact_mdes(task), cfg, 5000)
    except OracleInfeasible:
        return
    for st_, g in zip(res.states, res.g_values):
        assert task.heuristic(st_) <= res.cost - g + 1e-9


@settings(max_examples=10)
@given(st.integers(0, 5000), st.sampled_from([0.0, 0.25, 1.0]))
def test_cost_within_epsilon_of_optimum(seed, delta):
    s, task = sample_instance(TaskName.ROD_IN_BOX, seed)
    models = build_models(task.model_names)
    mdes = exact_mdes(task)
    cfg = default_planner_config(TaskName.ROD_IN_BOX, epsilon=1.0 + delta)
    try:
        g_star = optimal_oracle(s, task, models, mdes, cfg, 5000)
    except OracleInfeasible:
        return
    res = plan_ps_only(s, task, models, mdes, cfg)
    if res.found:
        assert res.cost <= (1.0 + delta) * g_star + 1e-9
    pe = plan(s, task, models, mdes, cfg)
    if pe.found:
        assert pe.cost <= 10.0 * (1.0 + delta) * g_star + 1e-9


def test_g_values_never_increase_and_anchor_closes_everywhere(monkeypatch):
    import mdeplan.planner as P

    history = {}
    real_close_all = P.SearchState.close_all
    real_push = P.SearchState.push
    anchor_checks = []

    def push(self, i, node):
        prev = history.get(node.key)
        assert prev is None or node.g <= prev
        history[node.key] = node.g
        return real_push(self, i, node)

    def close_all(self, key):
        real_close_all(self, key)
        anchor_checks.append(all(key in c for c in self.closed))

    monkeypatch.setattr(P.SearchState, "push", push)
    monkeypatch.setattr(P.SearchState, "close_all", close_all)
    # analytical drops are never trusted, so the anchor has to expand
    mdes = stub_table(BOX, {"fine_simulator": 0.0, "analytical_pick_place": 0.0})
    mdes[(Skill.LIFT_AND_DROP, "analytical_pick_place")] = Stub({}, 100.0)
    for seed in range(3):
        s, task = sample_instance(TaskName.ROD_IN_BOX, seed)
        history.clear()
        assert P.plan(s, task, BOX_MODELS, mdes, default_planner_config(task.name)).found
    assert anchor_checks and all(anchor_checks)
