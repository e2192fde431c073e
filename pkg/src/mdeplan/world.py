"""Synthetic two-rod manipulation world: ground-truth dynamics, imperfect models and tasks.

All dynamics are closed-form rule sets. Collisions are only considered at motion
endpoints. Distances are in cm, angles in radians.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from shapely.geometry import Polygon, box as shapely_box

from .core import (
    DEFAULT_SCENE,
    Grasp,
    InvalidActionError,
    Pose2,
    Rect,
    SceneConfig,
    Skill,
    SkillAction,
    WorldState,
)

ForwardFn = Callable[[WorldState, SkillAction], WorldState]


# -- geometry helpers -------------------------------------------------------

def rod_footprint(pose: Pose2, scene: SceneConfig) -> Polygon:
    ux, uy = pose.axis()
    vx, vy = -uy, ux
    hl, hw = scene.rod_length / 2, scene.rod_width / 2
    corners = [
        (pose.x + sx * hl * ux + sy * hw * vx, pose.y + sx * hl * uy + sy * hw * vy)
        for sx, sy in ((1, 1), (1, -1), (-1, -1), (-1, 1))
    ]
    return Polygon(corners)


def _rect_poly(r: Rect) -> Polygon:
    return shapely_box(r.x0, r.y0, r.x1, r.y1)


def containers(s: WorldState) -> list[Rect]:
    """Walled regions a dropped rod can hit: the box and the pulled-out drawer."""
    out = [s.scene.box]
    if s.drawer_open > s.scene.rod_width:
        out.append(s.scene.drawer_rect(s.drawer_open))
    return out


def wall_contact(pose: Pose2, s: WorldState) -> Optional[Rect]:
    """First container whose wall the rod footprint crosses, if any."""
    foot = rod_footprint(pose, s.scene)
    for rect in containers(s):
        if foot.intersects(_rect_poly(rect).exterior):
            return rect
    return None


def _rest_outside(pose: Pose2, rect: Rect, half_w: float) -> Pose2:
    if not rect.contains(pose.x, pose.y):
        return pose
    gaps = {
        "left": pose.x - rect.x0,
        "right": rect.x1 - pose.x,
        "bottom": pose.y - rect.y0,
        "top": rect.y1 - pose.y,
    }
    side = min(gaps, key=lambda k: (gaps[k], k))
    if side == "left":
        return Pose2(rect.x0 - half_w, pose.y, pose.yaw)
    if side == "right":
        return Pose2(rect.x1 + half_w, pose.y, pose.yaw)
    if side == "bottom":
        return Pose2(pose.x, rect.y0 - half_w, pose.yaw)
    return Pose2(pose.x, rect.y1 + half_w, pose.yaw)


def _slide_inside(pose: Pose2, rect: Rect, half_w: float) -> Pose2:
    if rect.contains(pose.x, pose.y):
        return pose
    inner = rect.shrink(min(half_w, 0.5 * (rect.x1 - rect.x0), 0.5 * (rect.y1 - rect.y0)))
    return Pose2(min(max(pose.x, inner.x0), inner.x1), min(max(pose.y, inner.y0), inner.y1), pose.yaw)


def in_workspace(scene: SceneConfig, x: float, y: float) -> bool:
    return scene.workspace.contains(x, y)


def drawer_contact_pose(s: WorldState) -> Pose2:
    """Pose the OpenDrawer skill moves to: at the handle, just in front of the drawer front."""
    sc = s.scene
    front = sc.drawer_face_y - s.drawer_open
    return Pose2(0.5 * (sc.drawer_x0 + sc.drawer_x1) + sc.drawer_grip_x_offset, front - sc.contact_band, 0.0)


def in_contact_band(s: WorldState, gripper: Pose2) -> bool:
    sc = s.scene
    front = sc.drawer_face_y - s.drawer_open
    return sc.drawer_x0 <= gripper.x <= sc.drawer_x1 and front - sc.contact_band - 1e-9 <= gripper.y <= front + 1e-9


def drawer_sweep(s: WorldState, y_open: float) -> Rect:
    """Floor area the drawer front sweeps through when pulled by ``y_open``."""
    sc = s.scene
    front = sc.drawer_face_y - s.drawer_open
    hw = sc.rod_width / 2
    return Rect(sc.drawer_x0 - hw, front - y_open - hw, sc.drawer_x1 + hw, front - 1e-9)


# -- skill preconditions ----------------------------------------------------

def skill_precondition(s: WorldState, a: SkillAction) -> bool:
    sc = s.scene
    th = a.theta
    if a.skill is Skill.PICK:
        return s.held is None and in_workspace(sc, th[0], th[1])
    if a.skill is Skill.LIFT_AND_DROP:
        if s.held is None:
            return False
        rod = s.rods[s.held.rod_index]
        return rod.dist(s.gripper) <= sc.rod_length / 2 + 1e-9 and in_workspace(sc, th[0], th[1])
    # OpenDrawer
    y_open = th[0]
    if s.held is not None or y_open <= 0.0 or s.drawer_open >= sc.drawer_limit - 1e-9:
        return False
    contact = drawer_contact_pose(s)
    # the joint stops the pull at its limit, so only the reachable travel must fit the workspace
    travel = min(y_open, sc.drawer_limit - s.drawer_open)
    if not (in_workspace(sc, contact.x, contact.y) and in_workspace(sc, contact.x, contact.y - travel)):
        return False
    sweep = drawer_sweep(s, travel)
    return not any(sweep.contains(r.x, r.y) for r in s.rods)


def _require(s: WorldState, a: SkillAction) -> None:
    if not skill_precondition(s, a):
        raise InvalidActionError(f"{a.skill.value}{a.theta} violates its skill precondition")


# -- shared skill effects ---------------------------------------------------

def _pick(s: WorldState, a: SkillAction) -> WorldState:
    """Kinematic move to the grasp pose; attach the nearest rod within half a rod length."""
    x, y, yaw, _ = a.theta
    sc = s.scene
    grip = Pose2(x, y, yaw)
    best = None
    for i, rod in enumerate(s.rods):
        d = rod.dist(grip)
        if d <= sc.rod_length / 2 and (best is None or d < best[0]):
            best = (d, i)
    if best is None:
        return s.replace(gripper=grip, gripper_open_width=sc.gripper_open_width, held=None)
    i = best[1]
    ux, uy = s.rods[i].axis()
    offset = (x - s.rods[i].x) * ux + (y - s.rods[i].y) * uy
    offset = max(-sc.rod_length / 2, min(sc.rod_length / 2, offset))
    return s.replace(
        gripper=grip,
        gripper_open_width=sc.rod_width - sc.gripper_close_eps,
        held=Grasp(i, offset),
    )


def _released(s: WorldState, a: SkillAction, rod_pose: Pose2) -> WorldState:
    x, y = a.theta
    out = s.replace(
        gripper=Pose2(x, y, s.gripper.yaw),
        gripper_open_width=s.scene.gripper_open_width,
        held=None,
    )
    return out.with_rod(s.held.rod_index, rod_pose)


def _transport_delta(s: WorldState, a: SkillAction) -> tuple[float, float]:
    return (a.theta[0] - s.gripper.x, a.theta[1] - s.gripper.y)


def pivot_landing(s: WorldState, a: SkillAction) -> Pose2:
    """Where a rod held off-center (pivot regime) lands before any wall contact."""
    sc = s.scene
    rod = s.rods[s.held.rod_index]
    off = s.held.offset
    dx, dy = _transport_delta(s, a)
    sign = 1.0 if off >= 0 else -1.0
    ux, uy = rod.axis()
    shift = sc.pivot_slope * (abs(off) - sc.pivot_offset)
    # the hanging rod swings toward the grasp point
    return rod.translated(dx + sign * shift * ux, dy + sign * shift * uy, sign * sc.pivot_angle)


def grasp_regime(s: WorldState) -> str:
    """'rigid', 'pivot' or 'drop' depending on how far off-center the held rod is."""
    off = abs(s.held.offset)
    if off <= s.scene.pivot_offset:
        return "rigid"
    if off <= s.scene.drop_offset:
        return "pivot"
    return "drop"


def in_miscalibration_region(s: WorldState, a: SkillAction) -> bool:
    """Transitions where the fine simulator departs from ground truth."""
    if a.skill is not Skill.LIFT_AND_DROP or s.held is None or grasp_regime(s) != "pivot":
        return False
    return wall_contact(pivot_landing(s, a), s) is not None


def _lift_and_drop(s: WorldState, a: SkillAction, slide_into_walls: bool) -> WorldState:
    rod = s.rods[s.held.rod_index]
    dx, dy = _transport_delta(s, a)
    regime = grasp_regime(s)
    if regime == "rigid":
        pose = rod.translated(dx, dy)
    elif regime == "drop":
        pose = rod.translated(0.5 * dx, 0.5 * dy)
    else:
        pose = pivot_landing(s, a)
        wall = wall_contact(pose, s)
        if wall is not None:
            hw = s.scene.rod_width / 2
            pose = _slide_inside(pose, wall, hw) if slide_into_walls else _rest_outside(pose, wall, hw)
    return _released(s, a, pose)


def _open_drawer(s: WorldState, a: SkillAction, clamp: bool, drag_rods: bool, moves: bool = True) -> WorldState:
    sc = s.scene
    contact = drawer_contact_pose(s)
    if not moves or not in_contact_band(s, contact):
        return s.replace(gripper=contact)
    y_open = a.theta[0]
    delta = min(y_open, sc.drawer_limit - s.drawer_open) if clamp else y_open
    delta = max(delta, 0.0)
    out = s.replace(gripper=contact.translated(0.0, -delta), drawer_open=s.drawer_open + delta)
    if drag_rods:
        inside = sc.drawer_rect(s.drawer_open)
        for i, rod in enumerate(s.rods):
            if inside.contains(rod.x, rod.y):
                out = out.with_rod(i, rod.translated(0.0, -delta))
    return out


# -- dynamics ---------------------------------------------------------------

def ground_truth(s: WorldState, a: SkillAction) -> WorldState:
    """The deterministic stand-in for the real world."""
    _require(s, a)
    if a.skill is Skill.PICK:
        return _pick(s, a)
    if a.skill is Skill.LIFT_AND_DROP:
        return _lift_and_drop(s, a, slide_into_walls=False)
    return _open_drawer(s, a, clamp=True, drag_rods=True)


def fine_simulator(s: WorldState, a: SkillAction) -> WorldState:
    """Matches ground truth except pivoted rods that hit a wall slide into the container."""
    _require(s, a)
    if a.skill is Skill.PICK:
        return _pick(s, a)
    if a.skill is Skill.LIFT_AND_DROP:
        return _lift_and_drop(s, a, slide_into_walls=True)
    return _open_drawer(s, a, clamp=True, drag_rods=True)


def analytical_drawer(s: WorldState, a: SkillAction) -> WorldState:
    """Drawer articulation only: no joint limit, rods never move."""
    _require(s, a)
    if a.skill is Skill.PICK:
        return _pick(s, a)
    if a.skill is Skill.LIFT_AND_DROP:
        return _released(s, a, s.rods[s.held.rod_index])
    return _open_drawer(s, a, clamp=False, drag_rods=False)


def analytical_pick_place(s: WorldState, a: SkillAction) -> WorldState:
    """Held rod is rigidly attached whatever the grasp offset; the drawer never moves."""
    _require(s, a)
    if a.skill is Skill.PICK:
        return _pick(s, a)
    if a.skill is Skill.LIFT_AND_DROP:
        dx, dy = _transport_delta(s, a)
        return _released(s, a, s.rods[s.held.rod_index].translated(dx, dy))
    return _open_drawer(s, a, clamp=False, drag_rods=False, moves=False)


def edge_cost(s: WorldState, a: SkillAction, s_next: WorldState) -> float:
    """End-effector travel distance of a transition."""
    if a.skill is Skill.OPEN_DRAWER:
        contact = drawer_contact_pose(s)
        return s.gripper.dist(contact) + contact.dist(s_next.gripper)
    return s.gripper.dist(s_next.gripper)


@dataclass(frozen=True)
class TransitionModel:
    id: int
    name: str
    eval_cost: float
    forward: ForwardFn = field(compare=False, repr=False)

    def __call__(self, s: WorldState, a: SkillAction) -> WorldState:
        return self.forward(s, a)


MODEL_FUNCTIONS: dict[str, ForwardFn] = {
    "fine_simulator": fine_simulator,
    "analytical_drawer": analytical_drawer,
    "analytical_pick_place": analytical_pick_place,
}
MODEL_NAMES = tuple(MODEL_FUNCTIONS)
DEFAULT_EVAL_COST = {"fine_simulator": 200.0, "analytical_drawer": 1.1, "analytical_pick_place": 1.0}


def build_models(names: Sequence[str], eval_cost: Optional[Mapping[str, float]] = None) -> list[TransitionModel]:
    """Models ordered slowest first; ids are positions in the returned list."""
    costs = dict(DEFAULT_EVAL_COST)
    costs.update(eval_cost or {})
    models = [TransitionModel(i, n, float(costs[n]), MODEL_FUNCTIONS[n]) for i, n in enumerate(names)]
    for slow, fast in zip(models, models[1:]):
        if not slow.eval_cost > fast.eval_cost:
            raise ValueError("models must be ordered by strictly decreasing eval_cost")
    return models


# -- tasks ------------------------------------------------------------------

class TaskName(str, enum.Enum):
    ROD_IN_BOX = "RodInBox"
    ROD_IN_DRAWER = "RodInDrawer"


TASK_MODELS = {
    TaskName.ROD_IN_BOX: ("fine_simulator", "analytical_pick_place"),
    TaskName.ROD_IN_DRAWER: ("fine_simulator", "analytical_drawer", "analytical_pick_place"),
}
TASK_SKILLS = {
    TaskName.ROD_IN_BOX: (Skill.PICK, Skill.LIFT_AND_DROP),
    TaskName.ROD_IN_DRAWER: (Skill.OPEN_DRAWER, Skill.PICK, Skill.LIFT_AND_DROP),
}
TASK_D_MAX = {
    TaskName.ROD_IN_BOX: {Skill.PICK: 3.0, Skill.LIFT_AND_DROP: 8.0},
    TaskName.ROD_IN_DRAWER: {Skill.OPEN_DRAWER: 6.0, Skill.PICK: 3.0, Skill.LIFT_AND_DROP: 5.0},
}
TASK_SAMPLES = {TaskName.ROD_IN_BOX: 5, TaskName.ROD_IN_DRAWER: 3}


@dataclass(frozen=True)
class TaskSpec:
    name: TaskName
    target_rod: int = 0
    scene: SceneConfig = DEFAULT_SCENE
    samples_per_skill: Optional[int] = None
    d_max: Optional[Mapping[Skill, float]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", TaskName(self.name))
        if self.samples_per_skill is None:
            object.__setattr__(self, "samples_per_skill", TASK_SAMPLES[self.name])
        d_max = dict(TASK_D_MAX[self.name])
        d_max.update({Skill(k): float(v) for k, v in (self.d_max or {}).items()})
        if any(v <= 0 for v in d_max.values()):
            raise ValueError("d_max values must be positive")
        object.__setattr__(self, "d_max", d_max)

    @property
    def skills(self) -> tuple[Skill, ...]:
        return TASK_SKILLS[self.name]

    @property
    def model_names(self) -> tuple[str, ...]:
        return TASK_MODELS[self.name]

    def goal_rect(self, s: WorldState) -> Rect:
        sc = self.scene
        if self.name is TaskName.ROD_IN_BOX:
            return sc.box
        return sc.drawer_rect(max(s.drawer_open, sc.drawer_min_open))

    def drop_rect(self, s: WorldState) -> Rect:
        """Where drop targets are sampled: the box, or the drawer as currently opened."""
        if self.name is TaskName.ROD_IN_BOX:
            return self.scene.box
        return self.scene.drawer_rect(s.drawer_open)

    def goal(self, s: WorldState) -> bool:
        rod = s.rods[self.target_rod]
        if self.name is TaskName.ROD_IN_BOX:
            return self.scene.box.contains(rod.x, rod.y)
        return (
            s.drawer_open >= self.scene.drawer_min_open
            and self.scene.drawer_rect(s.drawer_open).contains(rod.x, rod.y)
        )

    def heuristic(self, s: WorldState) -> float:
        return heuristic(s, self)


def heuristic(s: WorldState, task: TaskSpec) -> float:
    """Distance from the target rod to the goal region, plus the missing drawer opening."""
    rod = s.rods[task.target_rod]
    h = task.goal_rect(s).distance(rod.x, rod.y)
    if task.name is TaskName.ROD_IN_DRAWER:
        h += max(0.0, task.scene.drawer_min_open - s.drawer_open)
    return h


def generate_params(s: WorldState, skill: Skill, task: TaskSpec, rng_seed: int) -> list[SkillAction]:
    """Candidate parameterized actions for one skill; not filtered by skill precondition."""
    sc = task.scene
    skill = Skill(skill)
    if skill is Skill.PICK:
        end = sc.rod_length / 2 - sc.grasp_end_margin
        # grasps are sampled around the target rod only
        rod = s.rods[task.target_rod]
        ux, uy = rod.axis()
        return [SkillAction(Skill.PICK, (rod.x + off * ux, rod.y + off * uy, rod.yaw, off)) for off in (-end, 0.0, end)]
    rng = np.random.default_rng(rng_seed)
    n = task.samples_per_skill
    if skill is Skill.LIFT_AND_DROP:
        r = task.drop_rect(s).shrink(sc.drop_margin)
        if r.x0 > r.x1 or r.y0 > r.y1:
            return []  # drawer not open far enough to drop into
        xs = rng.uniform(r.x0, r.x1, size=n)
        ys = rng.uniform(r.y0, r.y1, size=n)
        return [SkillAction(skill, (float(x), float(y))) for x, y in zip(xs, ys)]
    lo, hi = sc.open_range
    return [SkillAction(skill, (float(v),)) for v in rng.uniform(lo, hi, size=n)]


def sample_initial_state(task_name: TaskName, scene: SceneConfig, rng: np.random.Generator) -> WorldState:
    """Rods at uniform non-overlapping poses clear of the box, drawer and drawer sweep."""
    task_name = TaskName(task_name)
    sc = scene
    margin = sc.rod_length / 2 - sc.grasp_end_margin + 0.5
    keep_out = [
        _rect_poly(sc.box).buffer(1.0),
        _rect_poly(Rect(sc.drawer_x0, sc.drawer_face_y - sc.drawer_limit - 3.0, sc.drawer_x1, sc.drawer_face_y)).buffer(1.0),
    ]
    ws = sc.workspace
    rods: list[Pose2] = []
    for _ in range(10_000):
        pose = Pose2(
            float(rng.uniform(ws.x0 + margin, ws.x1 - margin)),
            float(rng.uniform(ws.y0 + margin, ws.y1 - margin)),
            float(rng.uniform(-math.pi, math.pi)),
        )
        foot = rod_footprint(pose, sc)
        if any(foot.intersects(k) for k in keep_out):
            continue
        if rods and foot.buffer(1.0).intersects(rod_footprint(rods[0], sc)):
            continue
        home = Pose2(*sc.gripper_home)
        if pose.dist(home) <= sc.rod_length / 2 + 1.0:
            continue
        rods.append(pose)
        if len(rods) == 2:
            break
    else:
        raise RuntimeError("could not place rods; scene too cramped")
    return WorldState(
        gripper=Pose2(*sc.gripper_home),
        gripper_open_width=sc.gripper_open_width,
        held=None,
        rods=(rods[0], rods[1]),
        drawer_open=0.0,
        scene=sc,
    )


def sample_instance(task_name: TaskName, seed: int, scene: SceneConfig = DEFAULT_SCENE,
                    **task_kwargs) -> tuple[WorldState, TaskSpec]:
    """Seeded start state plus a task whose target rod is drawn at random."""
    rng = np.random.default_rng([int(seed), 7919])
    start = sample_initial_state(task_name, scene, rng)
    task = TaskSpec(TaskName(task_name), target_rod=int(rng.integers(2)), scene=scene, **task_kwargs)
    return start, task
