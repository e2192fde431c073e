"""Acceptance criteria, each at its stated tolerance, one PASS/FAIL line per criterion."""

import time

import numpy as np
import pytest

from mdeplan.cli import main
from mdeplan.config import AppConfig
from mdeplan.core import Skill
from mdeplan.datagen import collect, dumps_logs, loads_logs
from mdeplan.experiments import run_benchmark, summarize, train_all, verify_bounds
from mdeplan.mde import asymmetric_loss, asymmetric_loss_grad, extract_features
from mdeplan.planner import choose_queue, default_planner_config, plan, plan_ps_only
from mdeplan.world import TASK_D_MAX, TaskName, build_models, sample_instance
from reference_wastar import weighted_astar

BOX, DRAWER = TaskName.ROD_IN_BOX, TaskName.ROD_IN_DRAWER


@pytest.fixture(scope="session")
def app():
    return AppConfig()


@pytest.fixture(scope="session")
def trained(app):
    # train from the serialized log, exactly as the command-line pipeline does
    logs = loads_logs(dumps_logs(collect(app.collect_counts, 0, app.collect_method, None, app.scene)))
    mdes, mae_rows = train_all(logs, app.train, 0, app.eval_cost)
    return logs, mdes, mae_rows


@pytest.fixture(scope="session")
def bench10(app, trained):
    _, mdes, _ = trained
    rows = run_benchmark(app, mdes, app.bench_methods, (BOX, DRAWER), 10, 0, record_evaluations=True)
    return rows, {(s.task, s.method): s for s in summarize(rows)}


def test_criterion_1_suboptimality_bounds(app, trained, criterion):
    _, mdes, _ = trained
    t0 = time.perf_counter()
    report = verify_bounds(app, mdes, 100, 0, BOX)
    elapsed = time.perf_counter() - t0
    ok = (len(report.rows) >= 100 and not report.violations and not report.unfinished
          and report.ps_only_bound == 5.0 and report.ps_pe_bound == 50.0 and elapsed < 300)
    criterion(1, "suboptimality bounds", ok,
              f"{len(report.rows)} instances, {len(report.violations)} violations, "
              f"{len(report.unfinished)} unfinished, max ratio ps_only {report.max_ratio('ps_only'):.3f} <= 5, "
              f"ps_pe {report.max_ratio('ps_pe'):.3f} <= 50, {elapsed:.1f}s")
    assert ok


def test_criterion_2_loss_correctness(criterion):
    rng = np.random.default_rng(2024)
    d = rng.uniform(-20, 20, 100)
    err = rng.uniform(0.01, 10, 100) * rng.choice([-1.0, 1.0], 100)
    d_hat = d + err
    h = 1e-6
    numeric = (asymmetric_loss(d, d_hat + h) - asymmetric_loss(d, d_hat - h)) / (2 * h)
    rel = np.abs(asymmetric_loss_grad(d, d_hat) - numeric) / np.abs(numeric)
    # dyadic points keep |d - d_hat| exactly equal on both sides
    xs = rng.integers(-20, 20, 100).astype(float)
    es = rng.integers(1, 80, 100) / 8.0
    ratios = [asymmetric_loss(x, x - e) / asymmetric_loss(x, x + e) for x, e in zip(xs, es)]
    ok = rel.max() < 1e-4 and all(r == 3.0 for r in ratios)
    criterion(2, "loss correctness", ok, f"max relative gradient error {rel.max():.2e}, "
                                         f"under/over ratios in [{min(ratios)}, {max(ratios)}]")
    assert ok


def test_criterion_3_prioritized_selection(trained, bench10, criterion):
    _, mdes, _ = trained
    rows, _ = bench10
    checked = bad = 0
    for r in rows:
        if r.method not in ("ps_pe", "ps_only"):
            continue
        names = r.result.model_names
        d_max = TASK_D_MAX[r.task]
        for _, s, a, i in r.result.evaluations:
            inside = [j for j, n in enumerate(names)
                      if (a.skill, n) in mdes and mdes[(a.skill, n)].predict(s, a) < d_max[a.skill]]
            checked += 1
            bad += i != max(inside)
    ok = checked > 0 and bad == 0
    criterion(3, "PS rule", ok, f"{bad} of {checked} recorded evaluations used a slower model than needed")
    assert ok


def test_criterion_4_mde_difficulty_ordering(trained, criterion):
    logs, mdes, mae_rows = trained
    mae = {(r.skill, r.model): r.test_mae for r in mae_rows}
    pick = mae[(Skill.PICK, "analytical_pick_place")]
    drop = mae[(Skill.LIFT_AND_DROP, "analytical_pick_place")]
    transports = [t for ep in logs for t in ep.transitions if t.a.skill is Skill.LIFT_AND_DROP]
    drawer_mde = mdes[(Skill.LIFT_AND_DROP, "analytical_drawer")]
    mean_pred = float(np.mean(drawer_mde.predict_features(np.stack([extract_features(t.s, t.a) for t in transports]))))
    threshold = max(TASK_D_MAX[t][Skill.LIFT_AND_DROP] for t in TaskName)
    ok = 2 * pick <= drop and pick < drop and mean_pred > threshold
    criterion(4, "MDE skill difficulty", ok,
              f"MAE Pick {pick:.3f} vs LiftAndDrop {drop:.3f} (need factor 2); "
              f"drawer-model MDE mean LiftAndDrop prediction {mean_pred:.2f} > d_max {threshold}")
    assert ok


def test_criterion_5a_planning_cost_rod_in_box(bench10, criterion):
    _, s = bench10
    c = {m: s[(BOX, m)].weighted_eval_cost_mean for m in ("ps_pe", "ps_only", "random", "sim_only")}
    ok = c["ps_pe"] < c["ps_only"] < min(c["random"], c["sim_only"])
    criterion("5a", "planning cost RodInBox", ok,
              "ps_pe {ps_pe:.1f} < ps_only {ps_only:.1f} < min(random {random:.1f}, sim_only {sim_only:.1f})".format(**c))
    assert ok


def test_criterion_5b_planning_cost_rod_in_drawer(bench10, criterion):
    _, s = bench10
    c = {m: s[(DRAWER, m)].weighted_eval_cost_mean for m in ("ps_pe", "ps_only", "sim_only")}
    ok = max(c["ps_pe"], c["ps_only"]) < c["sim_only"]
    criterion("5b", "planning cost RodInDrawer", ok,
              "ps_pe {ps_pe:.1f}, ps_only {ps_only:.1f} < sim_only {sim_only:.1f}".format(**c))
    assert ok


def test_criterion_6_reliability(app, trained, criterion):
    _, mdes, _ = trained
    box = {s.method: s for s in summarize(run_benchmark(app, mdes, ("ps_pe", "analytical_only"), (BOX,), 50, 0))}
    drawer = summarize(run_benchmark(app, None, ("analytical_only",), (DRAWER,), 50, 0))[0]
    gap = box["ps_pe"].execution_success_rate - box["analytical_only"].execution_success_rate
    ok = gap >= 0.2 - 1e-12 and drawer.plan_found_rate == 0.0
    criterion(6, "reliability", ok,
              f"success ps_pe {box['ps_pe'].execution_success_rate:.2f} vs analytical_only "
              f"{box['analytical_only'].execution_success_rate:.2f} (gap {gap:.2f} >= 0.2); "
              f"analytical_only RodInDrawer found rate {drawer.plan_found_rate:.2f}")
    assert ok


def test_criterion_7_degenerate_equivalence(criterion):
    mismatches = []
    found = 0
    for k in range(50):
        task_name = BOX if k % 2 == 0 else DRAWER
        start, task = sample_instance(task_name, 500 + k)
        model = build_models([task.model_names[0]])
        cfg = default_planner_config(task_name, weights=(1.0,))
        ref = weighted_astar(start, task, model[0].forward, cfg)
        a = plan(start, task, model, None, cfg).cost
        b = plan_ps_only(start, task, model, None, cfg).cost
        found += a < float("inf")
        if not (a == b == ref):
            mismatches.append((k, a, b, ref))
    ok = not mismatches
    criterion(7, "degenerate equivalence", ok, f"50 instances ({found} solved), {len(mismatches)} cost mismatches")
    assert ok


def test_criterion_8_determinism(tmp_path, criterion):
    def run(d):
        d.mkdir()
        assert main(["collect", "--out", str(d / "logs.jsonl")]) == 0
        assert main(["train", "--logs", str(d / "logs.jsonl"), "--out", str(d / "mdes")]) == 0
        assert main(["bench", "--mdes", str(d / "mdes"), "--instances", "3", "--out", str(d / "bench.csv")]) == 0
        assert main(["verify-bounds", "--mdes", str(d / "mdes"), "--instances", "10",
                     "--out", str(d / "bounds.csv")]) == 0
        assert main(["plan", "--mdes", str(d / "mdes"), "--seed", "5", "--out", str(d / "plan.json")]) == 0
        return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()
                and not p.name.endswith(".timing.csv")}

    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    differing = sorted(str(p) for p in a if a[p] != b.get(p))
    ok = a.keys() == b.keys() and not differing and len(a) >= 14
    criterion(8, "determinism", ok, f"{len(a)} output files compared, {len(differing)} differ {differing}")
    assert ok


def test_criterion_9_queue_choice(criterion):
    cases = [([5.0, 40.0], (10.0, 1.0), 1), ([5.0, 100.0], (10.0, 1.0), 0),
             ([10.0, 100.0, 110.0], (10.0, 1.1, 1.0), 0)]
    got = [choose_queue(k, w) for k, w, _ in cases]
    ok = got == [e for _, _, e in cases]
    criterion(9, "queue choice", ok, f"choose_queue gave {got}, expected [1, 0, 0]")
    assert ok
