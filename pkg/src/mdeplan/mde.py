"""Model deviation estimators: features, asymmetric loss, MLP regressor and training."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .core import InvalidInputError, Skill, SkillAction, Transition, WorldState, state_distance
from .world import TransitionModel, drawer_contact_pose, ground_truth

log = logging.getLogger(__name__)

N_STATE_FEATURES = 6
# feature columns holding cm-valued state quantities (held flag excluded from jitter)
STATE_CM_COLUMNS = (0, 1, 2, 3, 4)
# theta entries holding angles rather than cm
ANGLE_THETA = {Skill.PICK: (2,)}


class DeviationEstimator(Protocol):
    def predict(self, s: WorldState, a: SkillAction) -> float: ...


# -- features ---------------------------------------------------------------

def _target_rod(s: WorldState, a: SkillAction) -> int:
    if s.held is not None:
        return s.held.rod_index
    if a.skill is Skill.PICK:
        px, py = a.theta[0], a.theta[1]
    else:
        c = drawer_contact_pose(s)
        px, py = c.x, c.y
    d = [math.hypot(r.x - px, r.y - py) for r in s.rods]
    return 0 if d[0] <= d[1] else 1


def _goal_region_distance(s: WorldState, rod_index: int) -> float:
    sc = s.scene
    rod = s.rods[rod_index]
    drawer = sc.drawer_rect(max(s.drawer_open, sc.drawer_min_open))
    return min(sc.box.distance(rod.x, rod.y), drawer.distance(rod.x, rod.y))


def extract_features(s: WorldState, a: SkillAction) -> np.ndarray:
    """[gripper->rod0, gripper->rod1, grasp_offset, target rod->goal region, drawer_open, held] + theta."""
    g = s.gripper
    out = np.empty(N_STATE_FEATURES + a.skill.arity)
    out[0] = g.dist(s.rods[0])
    out[1] = g.dist(s.rods[1])
    out[2] = 0.0 if s.held is None else s.held.offset
    out[3] = _goal_region_distance(s, _target_rod(s, a))
    out[4] = s.drawer_open
    out[5] = 0.0 if s.held is None else 1.0
    out[N_STATE_FEATURES:] = a.theta
    return out


# -- loss -------------------------------------------------------------------

def asymmetric_loss(d, d_hat, c1: float = 3.0, c2: float = 1.0):
    """c1 * under^2 + c2 * over^2, elementwise; works on scalars and arrays."""
    err = np.asarray(d, dtype=float) - np.asarray(d_hat, dtype=float)
    out = c1 * np.maximum(0.0, err) ** 2 + c2 * np.maximum(0.0, -err) ** 2
    return float(out) if out.ndim == 0 else out


def asymmetric_loss_grad(d, d_hat, c1: float = 3.0, c2: float = 1.0):
    """Derivative of asymmetric_loss with respect to d_hat."""
    err = np.asarray(d, dtype=float) - np.asarray(d_hat, dtype=float)
    out = -2.0 * c1 * np.maximum(0.0, err) + 2.0 * c2 * np.maximum(0.0, -err)
    return float(out) if out.ndim == 0 else out


# -- training data ------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    c1: float = 3.0
    c2: float = 1.0
    learning_rate: float = 5e-3
    l2_weight_decay: float = 5e-3
    state_noise_std: float = 1.0
    param_noise_std: float = 3.0
    test_fraction: float = 0.15
    val_fraction: float = 0.05
    jitter_copies: int = 4
    hidden_units: int = 64
    hidden_layers: int = 2
    batch_size: int = 32
    max_epochs: int = 2000
    patience: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.c1 > self.c2 > 0:
            raise InvalidInputError("need c1 > c2 > 0")


@dataclass
class LabeledSet:
    """Feature rows and deviation labels for one skill."""

    skill: Skill
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def empty(cls, skill: Skill) -> "LabeledSet":
        return cls(skill, np.zeros((0, N_STATE_FEATURES + skill.arity)), np.zeros(0))

    def take(self, idx) -> "LabeledSet":
        return LabeledSet(self.skill, self.X[idx], self.y[idx])


def label_transitions(dataset: Iterable[Transition], model: TransitionModel,
                      skill: Optional[Skill] = None) -> list[tuple[np.ndarray, float]]:
    """One (features, deviation) row per transition: d(s', model(s, a))."""
    rows = []
    for t in dataset:
        if skill is not None and t.a.skill is not skill:
            continue
        try:
            pred = model.forward(t.s, t.a)
        except Exception as exc:  # the model must be total on logged transitions
            raise RuntimeError(f"{model.name} failed on a logged transition: {exc}") from exc
        rows.append((extract_features(t.s, t.a), state_distance(t.s_next, pred)))
    return rows


def to_labeled_set(rows: Sequence[tuple[np.ndarray, float]], skill: Skill) -> LabeledSet:
    if not rows:
        return LabeledSet.empty(skill)
    return LabeledSet(skill, np.stack([r[0] for r in rows]), np.array([r[1] for r in rows], dtype=float))


def swap_rods(X: np.ndarray) -> np.ndarray:
    out = X.copy()
    out[:, [0, 1]] = X[:, [1, 0]]
    return out


def augment(data: LabeledSet, cfg: TrainConfig, seed: int) -> LabeledSet:
    """Originals, rod-swapped copies, then Gaussian-jittered copies of both (labels unchanged)."""
    base_X = np.concatenate([data.X, swap_rods(data.X)])
    base_y = np.concatenate([data.y, data.y])
    rng = np.random.default_rng([int(seed), 104729])
    n_theta = data.skill.arity
    theta_cols = [N_STATE_FEATURES + j for j in range(n_theta) if j not in ANGLE_THETA.get(data.skill, ())]
    Xs, ys = [base_X], [base_y]
    for _ in range(cfg.jitter_copies):
        Xj = base_X.copy()
        Xj[:, STATE_CM_COLUMNS] += rng.normal(0.0, cfg.state_noise_std, size=(len(Xj), len(STATE_CM_COLUMNS)))
        if theta_cols:
            Xj[:, theta_cols] += rng.normal(0.0, cfg.param_noise_std, size=(len(Xj), len(theta_cols)))
        # distances and the drawer opening stay non-negative
        Xj[:, [0, 1, 3, 4]] = np.abs(Xj[:, [0, 1, 3, 4]])
        Xs.append(Xj)
        ys.append(base_y)
    return LabeledSet(data.skill, np.concatenate(Xs), np.concatenate(ys))


# -- the regressor ------------------------------------------------------------

@dataclass
class MdeModel:
    skill: Skill
    model_name: str
    mean: np.ndarray
    std: np.ndarray
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.mean)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def raw(self, X: np.ndarray) -> np.ndarray:
        """Unclamped network output for a batch of raw feature rows."""
        h = (np.atleast_2d(X) - self.mean) / self.std
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        return (h @ self.weights[-1] + self.biases[-1])[:, 0]

    def predict_features(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(self.raw(X), 0.0)

    def predict(self, s: WorldState, a: SkillAction) -> float:
        return predict_deviation(self, s, a)


def predict_deviation(m: MdeModel, s: WorldState, a: SkillAction) -> float:
    if a.skill is not m.skill:
        raise InvalidInputError(f"MDE for {m.skill.value} given a {a.skill.value} action")
    x = extract_features(s, a)
    if len(x) != m.n_features:
        raise InvalidInputError("feature layout does not match the estimator")
    return float(m.predict_features(x)[0])


def in_model_precondition(m: DeviationEstimator, s: WorldState, a: SkillAction, d_max: float) -> bool:
    return m.predict(s, a) < d_max


class ExactDeviation:
    """Perfect estimator: evaluates ground truth and the model and measures the gap."""

    def __init__(self, model: TransitionModel):
        self.model = model

    def predict(self, s: WorldState, a: SkillAction) -> float:
        return state_distance(ground_truth(s, a), self.model.forward(s, a))


def _init_params(sizes: list[int], rng: np.random.Generator):
    Ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        Ws.append(rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_in, n_out)))
        bs.append(np.zeros(n_out))
    return Ws, bs


def _forward_backward(Ws, bs, X, y, c1, c2):
    acts = [X]
    h = X
    for W, b in zip(Ws[:-1], bs[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    out = (h @ Ws[-1] + bs[-1])[:, 0]
    loss = float(np.mean(asymmetric_loss(y, out, c1, c2)))
    delta = (asymmetric_loss_grad(y, out, c1, c2) / len(y))[:, None]
    gW, gb = [None] * len(Ws), [None] * len(bs)
    for k in range(len(Ws) - 1, -1, -1):
        gW[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ Ws[k].T) * (acts[k] > 0)
    return loss, gW, gb


def _batch_loss(Ws, bs, X, y, c1, c2) -> float:
    h = X
    for W, b in zip(Ws[:-1], bs[:-1]):
        h = np.maximum(h @ W + b, 0.0)
    out = (h @ Ws[-1] + bs[-1])[:, 0]
    return float(np.mean(asymmetric_loss(y, out, c1, c2)))


def train_mde(labeled: LabeledSet, cfg: TrainConfig = TrainConfig(), val: Optional[LabeledSet] = None,
              model_name: str = "") -> MdeModel:
    """Fit with Adam (coupled L2 decay) and early stopping; returns the best-validation weights.

    If ``val`` is not given, ``cfg.val_fraction`` of ``labeled`` is held out for it.
    """
    if len(labeled) < 20:
        raise InvalidInputError(f"need at least 20 labeled rows, got {len(labeled)}")
    rng = np.random.default_rng([int(cfg.seed), 7])
    if val is None:
        perm = rng.permutation(len(labeled))
        n_val = max(1, int(round(cfg.val_fraction * len(labeled))))
        val, labeled = labeled.take(np.sort(perm[:n_val])), labeled.take(np.sort(perm[n_val:]))

    mean = labeled.X.mean(axis=0)
    std = labeled.X.std(axis=0)
    std[std < 1e-8] = 1.0
    Xt = (labeled.X - mean) / std
    Xv = (val.X - mean) / std
    yt, yv = labeled.y, val.y

    sizes = [Xt.shape[1]] + [cfg.hidden_units] * cfg.hidden_layers + [1]
    Ws, bs = _init_params(sizes, rng)
    params = Ws + bs
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    best = (_batch_loss(Ws, bs, Xv, yv, cfg.c1, cfg.c2), [p.copy() for p in params], 0)
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(yt))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, gW, gb = _forward_backward(Ws, bs, Xt[idx], yt[idx], cfg.c1, cfg.c2)
            step += 1
            for j, (p, g) in enumerate(zip(params, gW + gb)):
                g = g + cfg.l2_weight_decay * p
                m1[j] = beta1 * m1[j] + (1 - beta1) * g
                m2[j] = beta2 * m2[j] + (1 - beta2) * g * g
                mhat = m1[j] / (1 - beta1 ** step)
                vhat = m2[j] / (1 - beta2 ** step)
                p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
        v_loss = _batch_loss(Ws, bs, Xv, yv, cfg.c1, cfg.c2)
        if v_loss < best[0]:
            best = (v_loss, [p.copy() for p in params], epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    n = len(Ws)
    weights = best[1]
    log.debug("MDE %s/%s: best val loss %.4f at epoch %d", labeled.skill.value, model_name, best[0], best[2])
    return MdeModel(
        skill=labeled.skill,
        model_name=model_name,
        mean=mean,
        std=std,
        weights=weights[:n],
        biases=weights[n:],
        meta={"best_epoch": best[2], "val_loss": best[0]},
    )


def mean_absolute_error(m: MdeModel, data: LabeledSet) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(np.abs(m.predict_features(data.X) - data.y)))


# -- weight files -------------------------------------------------------------

MAGIC = b"MDEW"
FORMAT_VERSION = 1


def dumps_mde(m: MdeModel) -> bytes:
    header = json.dumps(
        {
            "skill": m.skill.value,
            "model": m.model_name,
            "layers": m.layer_sizes,
            "activation": "relu",
            "output": "linear, clamped at 0",
        },
        sort_keys=True,
    ).encode()
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(header)), header]
    arrays = [m.mean, m.std]
    for W, b in zip(m.weights, m.biases):
        arrays += [W, b]
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))
    return b"".join(parts)


def loads_mde(blob: bytes) -> MdeModel:
    if blob[:4] != MAGIC:
        raise InvalidInputError("not an MDE weight file")
    version, hlen = struct.unpack_from("<HI", blob, 4)
    if version != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported MDE file version {version}")
    off = 4 + struct.calcsize("<HI")
    header = json.loads(blob[off:off + hlen])
    off += hlen
    sizes = header["layers"]

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(float)
        off += 8 * n
        return arr

    mean, std = take((sizes[0],)), take((sizes[0],))
    Ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        Ws.append(take((n_in, n_out)))
        bs.append(take((n_out,)))
    if off != len(blob):
        raise InvalidInputError("trailing bytes in MDE weight file")
    return MdeModel(Skill(header["skill"]), header["model"], mean, std, Ws, bs)


def mde_filename(skill: Skill, model_name: str) -> str:
    return f"mde_{Skill(skill).value}_{model_name}.bin"


def save_mde(m: MdeModel, path) -> None:
    Path(path).write_bytes(dumps_mde(m))


def load_mde(path) -> MdeModel:
    return loads_mde(Path(path).read_bytes())


def load_mde_dir(directory) -> dict[tuple[Skill, str], MdeModel]:
    out = {}
    for p in sorted(Path(directory).glob("mde_*.bin")):
        m = load_mde(p)
        out[(m.skill, m.model_name)] = m
    return out
