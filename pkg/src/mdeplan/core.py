"""State, action and transition types shared by every module."""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, NamedTuple, Optional


class InvalidInputError(ValueError):
    pass


class InvalidActionError(ValueError):
    """A skill was applied in a state outside its skill precondition."""


def normalize_yaw(yaw: float) -> float:
    """Map an angle into (-pi, pi]."""
    if not math.isfinite(yaw):
        raise InvalidInputError(f"non-finite yaw {yaw!r}")
    out = math.fmod(yaw, 2.0 * math.pi)
    if out <= -math.pi:
        out += 2.0 * math.pi
    elif out > math.pi:
        out -= 2.0 * math.pi
    # fmod can land a hair outside after the shift
    if out <= -math.pi:
        out = math.pi
    return out


def sig6(x: float) -> float:
    """Round to 6 significant digits (the on-disk float precision)."""
    return float(f"{x:.6g}")


class Rect(NamedTuple):
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def distance(self, x: float, y: float) -> float:
        dx = max(self.x0 - x, 0.0, x - self.x1)
        dy = max(self.y0 - y, 0.0, y - self.y1)
        return math.hypot(dx, dy)

    def shrink(self, margin: float) -> "Rect":
        return Rect(self.x0 + margin, self.y0 + margin, self.x1 - margin, self.y1 - margin)


@dataclass(frozen=True)
class SceneConfig:
    """Scene and dynamics constants (cm / rad). Every field is overridable from config."""

    workspace: Rect = Rect(0.0, 0.0, 60.0, 50.0)
    rod_length: float = 18.5
    rod_width: float = 2.3
    box: Rect = Rect(38.0, 6.0, 56.0, 22.0)
    # drawer slides toward -y out of a chest whose face is at drawer_face_y
    drawer_x0: float = 6.0
    drawer_x1: float = 32.0
    drawer_face_y: float = 50.0
    drawer_limit: float = 17.0
    drawer_min_open: float = 10.0
    contact_band: float = 2.0
    drawer_grip_x_offset: float = 1.0
    gripper_home: tuple[float, float, float] = (30.0, 2.0, 0.0)
    gripper_open_width: float = 8.0
    gripper_close_eps: float = 0.1
    pivot_offset: float = 3.0
    drop_offset: float = 7.0
    pivot_angle: float = 0.6
    pivot_slope: float = 1.5
    grasp_end_margin: float = 2.0
    drop_margin: float = 2.0
    open_range: tuple[float, float] = (14.0, 17.0)

    def __post_init__(self) -> None:
        for name in ("workspace", "box"):
            object.__setattr__(self, name, Rect(*getattr(self, name)))
        object.__setattr__(self, "gripper_home", tuple(float(v) for v in self.gripper_home))
        object.__setattr__(self, "open_range", tuple(float(v) for v in self.open_range))
        if not (0.0 <= self.pivot_offset <= self.drop_offset <= self.rod_length / 2):
            raise InvalidInputError("need 0 <= pivot_offset <= drop_offset <= rod_length/2")
        if self.drawer_limit <= 0 or self.drawer_min_open > self.drawer_limit:
            raise InvalidInputError("need 0 < drawer_min_open <= drawer_limit")

    def drawer_rect(self, opening: float) -> Rect:
        """Exposed drawer interior when pulled out by ``opening``."""
        return Rect(self.drawer_x0, self.drawer_face_y - opening, self.drawer_x1, self.drawer_face_y)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.blake2b(blob, digest_size=8).hexdigest()


DEFAULT_SCENE = SceneConfig()


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInputError(f"non-finite pose {self.x!r}, {self.y!r}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def axis(self) -> tuple[float, float]:
        return (math.cos(self.yaw), math.sin(self.yaw))

    def translated(self, dx: float, dy: float, dyaw: float = 0.0) -> "Pose2":
        return Pose2(self.x + dx, self.y + dy, self.yaw + dyaw)

    def dist(self, other: "Pose2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


class Grasp(NamedTuple):
    rod_index: int
    offset: float  # signed, along the rod axis from its center


@dataclass(frozen=True)
class WorldState:
    gripper: Pose2
    gripper_open_width: float
    held: Optional[Grasp]
    rods: tuple[Pose2, Pose2]
    drawer_open: float
    scene: SceneConfig = field(default=DEFAULT_SCENE, compare=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.rods) != 2:
            raise InvalidInputError("exactly two rods")
        object.__setattr__(self, "rods", tuple(self.rods))
        if not math.isfinite(self.drawer_open) or not math.isfinite(self.gripper_open_width):
            raise InvalidInputError("non-finite drawer/gripper value")
        # the upper joint limit is checked by is_physical(); model predictions may exceed it
        if self.drawer_open < 0.0:
            raise InvalidInputError(f"negative drawer_open {self.drawer_open}")
        if self.held is not None:
            held = Grasp(int(self.held[0]), float(self.held[1]))
            if held.rod_index not in (0, 1):
                raise InvalidInputError("held rod index must be 0 or 1")
            if abs(held.offset) > self.scene.rod_length / 2 + 1e-9:
                raise InvalidInputError("grasp offset beyond rod end")
            object.__setattr__(self, "held", held)

    def is_physical(self) -> bool:
        return self.drawer_open <= self.scene.drawer_limit + 1e-9

    def replace(self, **changes: Any) -> "WorldState":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return WorldState(**kw)

    def with_rod(self, index: int, pose: Pose2) -> "WorldState":
        rods = list(self.rods)
        rods[index] = pose
        return self.replace(rods=tuple(rods))


class Skill(str, enum.Enum):
    PICK = "Pick"
    LIFT_AND_DROP = "LiftAndDrop"
    OPEN_DRAWER = "OpenDrawer"

    @property
    def arity(self) -> int:
        return SKILL_ARITY[self]


SKILL_ARITY = {Skill.PICK: 4, Skill.LIFT_AND_DROP: 2, Skill.OPEN_DRAWER: 1}


@dataclass(frozen=True)
class SkillAction:
    """Pick: [x_d, y_d, yaw_d, grasp_offset]; LiftAndDrop: [x_d, y_d]; OpenDrawer: [y_open]."""

    skill: Skill
    theta: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "skill", Skill(self.skill))
        theta = tuple(float(v) for v in self.theta)
        if len(theta) != self.skill.arity:
            raise InvalidInputError(f"{self.skill.value} takes {self.skill.arity} parameters, got {len(theta)}")
        if not all(math.isfinite(v) for v in theta):
            raise InvalidInputError("non-finite skill parameter")
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class Transition:
    s: WorldState
    a: SkillAction
    s_next: WorldState
    episode_id: int
    step: int


def state_distance(s1: WorldState, s2: WorldState) -> float:
    """Positional deviation in cm: rod center displacement plus drawer displacement."""
    if s1.scene is not s2.scene and s1.scene != s2.scene:
        raise InvalidInputError("states belong to different scenes")
    d = abs(s1.drawer_open - s2.drawer_open)
    for r1, r2 in zip(s1.rods, s2.rods):
        d += math.hypot(r1.x - r2.x, r1.y - r2.y)
    return d


# -- line-record serialization --------------------------------------------

def _pose_rec(p: Pose2) -> dict:
    return {"x": sig6(p.x), "y": sig6(p.y), "yaw": sig6(p.yaw)}


def _pose_from(rec: dict) -> Pose2:
    return Pose2(float(rec["x"]), float(rec["y"]), float(rec["yaw"]))


def state_to_record(s: WorldState) -> dict:
    return {
        "gripper": _pose_rec(s.gripper),
        "gripper_open_width": sig6(s.gripper_open_width),
        "held": None if s.held is None else {"rod_index": s.held.rod_index, "grasp_offset": sig6(s.held.offset)},
        "rods": [_pose_rec(r) for r in s.rods],
        "drawer_open": sig6(s.drawer_open),
        "scene": s.scene.fingerprint(),
    }


def state_from_record(rec: dict, scene: SceneConfig = DEFAULT_SCENE) -> WorldState:
    if rec.get("scene", scene.fingerprint()) != scene.fingerprint():
        raise InvalidInputError("record was written for a different scene")
    held = rec["held"]
    drawer = float(rec["drawer_open"])
    return WorldState(
        gripper=_pose_from(rec["gripper"]),
        gripper_open_width=float(rec["gripper_open_width"]),
        held=None if held is None else Grasp(int(held["rod_index"]), float(held["grasp_offset"])),
        rods=tuple(_pose_from(r) for r in rec["rods"]),
        drawer_open=drawer,
        scene=scene,
    )


def action_to_record(a: SkillAction) -> dict:
    return {"skill": a.skill.value, "theta": [sig6(v) for v in a.theta]}


def action_from_record(rec: dict) -> SkillAction:
    return SkillAction(Skill(rec["skill"]), tuple(float(v) for v in rec["theta"]))


def transition_to_record(t: Transition) -> dict:
    return {
        "s": state_to_record(t.s),
        "a": action_to_record(t.a),
        "s_next": state_to_record(t.s_next),
        "episode_id": t.episode_id,
        "step": t.step,
    }


def transition_from_record(rec: dict, scene: SceneConfig = DEFAULT_SCENE) -> Transition:
    return Transition(
        s=state_from_record(rec["s"], scene),
        a=action_from_record(rec["a"]),
        s_next=state_from_record(rec["s_next"], scene),
        episode_id=int(rec["episode_id"]),
        step=int(rec["step"]),
    )


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def dumps_transition(t: Transition) -> str:
    return dumps_record(transition_to_record(t))


def loads_transition(line: str, scene: SceneConfig = DEFAULT_SCENE) -> Transition:
    return transition_from_record(json.loads(line), scene)
