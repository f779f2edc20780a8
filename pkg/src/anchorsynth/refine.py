"""Interval-routed soft-token refinement.

After discrete generation, the token sequence is relaxed to its embedding
rows (soft tokens) and optimized directly against the anchor objective. Raw
gradient-descent updates are not applied as-is: each update is projected
onto a blockwise piecewise-affine basis over the anchor intervals, with a
per-interval ridge whose strength falls as the interval's endpoint anchor
error grows. Intervals that already satisfy their anchors are softly frozen;
violated intervals receive correction capacity.

The interval basis is built once from the fixed anchor times; activities are
refreshed from the decoded motion at every step; decoder parameters never
change.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
import scipy.linalg

from .motion import Motion, observation_adjoint, observe
from .scaffold import AnchorSet, IntervalPartition, anchor_loss
from .tokenflow import Codebook, TokenSeq


@dataclass(frozen=True)
class SoftTokens:
    """Continuous token embeddings u plus the frozen initial snapshot u0."""

    u: np.ndarray
    u0: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        u0 = np.asarray(self.u0, dtype=np.float64).copy()
        if u.ndim != 2 or u.shape != u0.shape:
            raise ValueError("u and u0 must be matching (L, d_u) arrays")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(u0))):
            raise ValueError("soft tokens must be finite")
        u0.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "u0", u0)

    def moved_to(self, u_new: np.ndarray) -> "SoftTokens":
        return SoftTokens(u_new, self.u0)


class DecoderModel(Protocol):
    """Differentiable map from soft tokens (L, d_u) to a motion (T, J, 3).

    ``vjp`` must be the exact adjoint of ``decode``: given a motion-space
    cotangent it returns the pulled-back (L, d_u) gradient. Implementations
    must be deterministic and safe for concurrent read-only use.
    """

    def decode(self, u: np.ndarray) -> Motion: ...

    def vjp(self, u: np.ndarray, cotangent: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class SolverConfig:
    """Refinement weights and optimizer settings.

    The feasibility hinge is off by default. ``tolerance`` overrides the
    control family's residual tolerance when set. The loss weights, ridge,
    and step size are tuned desk-scale defaults recorded here, not values
    with any outside provenance.
    """

    smooth_weight: float = 0.1
    trust_weight: float = 0.01
    feasibility_weight: float = 0.0
    ridge: float = 0.1
    max_speed: float = 1.0
    step_size: float = 0.01
    steps: int = 200
    optimizer: str = "gd"
    momentum: float = 0.9
    tolerance: float | None = None

    def __post_init__(self):
        for name in ("smooth_weight", "trust_weight", "feasibility_weight"):
            w = getattr(self, name)
            if not (np.isfinite(w) and w >= 0):
                raise ValueError(f"{name} must be finite and nonnegative")
        if not (self.ridge >= 0 and np.isfinite(self.ridge)):
            raise ValueError("ridge must be nonnegative")
        if self.max_speed <= 0:
            raise ValueError("max_speed must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.optimizer not in ("gd", "heavy_ball"):
            raise ValueError("optimizer must be 'gd' or 'heavy_ball'")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.tolerance is not None and not (self.tolerance > 0):
            raise ValueError("tolerance must be positive when set")


@dataclass
class OptState:
    """Momentum buffer for the heavy-ball optimizer."""

    velocity: np.ndarray | None = None


@dataclass(frozen=True)
class BasisMatrix:
    """Blockwise transport/slope basis over the anchor intervals.

    Column block i covers tokens whose center frame falls in interval i;
    within the block, the first column is the constant 1 and the second is
    2s - 1 for normalized position s in [0, 1]. ``token_interval`` records
    the assignment.
    """

    matrix: np.ndarray
    token_interval: np.ndarray

    @property
    def num_intervals(self) -> int:
        return self.matrix.shape[1] // 2


@dataclass(frozen=True)
class ActivityVector:
    """Per-interval correction budgets in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ValueError("activities must be a vector")
        if np.any((vals < 0) | (vals > 1)):
            raise ValueError("activities must lie in [0, 1]")
        object.__setattr__(self, "values", vals)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values.size else 0.0


def soft_init(tokens: TokenSeq, cb: Codebook) -> SoftTokens:
    """Table lookup of the token embeddings; the result is also the snapshot."""
    if np.any(tokens.ids >= cb.size):
        raise ValueError("token id out of range for codebook")
    u = cb.embeddings[tokens.ids].copy()
    return SoftTokens(u, u)


def _objective_terms(
    motion: Motion, soft: SoftTokens, anchors: AnchorSet, cfg: SolverConfig
) -> dict[str, float]:
    frames = motion.frames
    if cfg.smooth_weight > 0 and frames < 3:
        raise ValueError("smoothness term needs at least 3 frames")
    if cfg.feasibility_weight > 0 and frames < 2:
        raise ValueError("feasibility term needs at least 2 frames")

    parts = {"anc": anchor_loss(motion, anchors), "sm": 0.0, "tr": 0.0, "feas": 0.0}

    if cfg.smooth_weight > 0:
        traj = observe(motion, anchors.family)
        second = traj[2:] - 2.0 * traj[1:-1] + traj[:-2]
        parts["sm"] = cfg.smooth_weight * float(np.sum(second * second)) / (frames - 2)

    diff = soft.u - soft.u0
    parts["tr"] = cfg.trust_weight * float(np.sum(diff * diff))

    if cfg.feasibility_weight > 0:
        root = motion.positions[:, 0, :]
        speeds = np.linalg.norm(np.diff(root, axis=0), axis=1)
        excess = np.maximum(speeds - cfg.max_speed, 0.0)
        parts["feas"] = cfg.feasibility_weight * float(np.sum(excess * excess)) / (frames - 1)

    return parts


def _motion_cotangent(motion: Motion, anchors: AnchorSet, cfg: SolverConfig) -> np.ndarray:
    """Gradient of the motion-space objective terms w.r.t. the positions."""
    frames, joints = motion.frames, motion.joints
    family = anchors.family
    obs = observe(motion, family)

    g_obs = np.zeros_like(obs)
    if len(anchors):
        idx = anchors.frames
        g_obs[idx] += 2.0 * (obs[idx] - anchors.targets)

    if cfg.smooth_weight > 0:
        second = obs[2:] - 2.0 * obs[1:-1] + obs[:-2]
        scale = 2.0 * cfg.smooth_weight / (frames - 2)
        g_sm = np.zeros_like(obs)
        g_sm[:-2] += second
        g_sm[1:-1] -= 2.0 * second
        g_sm[2:] += second
        g_obs += scale * g_sm

    cot = observation_adjoint(g_obs, family, joints)

    if cfg.feasibility_weight > 0:
        root = motion.positions[:, 0, :]
        vel = np.diff(root, axis=0)
        speeds = np.linalg.norm(vel, axis=1)
        excess = np.maximum(speeds - cfg.max_speed, 0.0)
        active = excess > 0
        g_vel = np.zeros_like(vel)
        if np.any(active):
            g_vel[active] = (
                2.0
                * cfg.feasibility_weight
                / (frames - 1)
                * (excess[active] / speeds[active])[:, None]
                * vel[active]
            )
        cot[1:, 0, :] += g_vel
        cot[:-1, 0, :] -= g_vel

    return cot


def objective(
    soft: SoftTokens, dec: DecoderModel, anchors: AnchorSet, cfg: SolverConfig
) -> tuple[float, dict[str, float]]:
    """Refinement objective and its additive parts {anc, sm, tr, feas}."""
    motion = dec.decode(soft.u)
    parts = _objective_terms(motion, soft, anchors, cfg)
    return parts["anc"] + parts["sm"] + parts["tr"] + parts["feas"], parts


def grad_objective(
    soft: SoftTokens, dec: DecoderModel, anchors: AnchorSet, cfg: SolverConfig
) -> np.ndarray:
    """Exact gradient of the objective with respect to the soft tokens."""
    motion = dec.decode(soft.u)
    return _grad_from_motion(motion, soft, dec, anchors, cfg)


def _grad_from_motion(
    motion: Motion,
    soft: SoftTokens,
    dec: DecoderModel,
    anchors: AnchorSet,
    cfg: SolverConfig,
) -> np.ndarray:
    if cfg.smooth_weight > 0 and motion.frames < 3:
        raise ValueError("smoothness term needs at least 3 frames")
    if cfg.feasibility_weight > 0 and motion.frames < 2:
        raise ValueError("feasibility term needs at least 2 frames")
    cot = _motion_cotangent(motion, anchors, cfg)
    grad = dec.vjp(soft.u, cot) + 2.0 * cfg.trust_weight * (soft.u - soft.u0)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    return grad


def opt_step(
    soft: SoftTokens, grad: np.ndarray, cfg: SolverConfig, state: OptState
) -> np.ndarray:
    """Raw optimizer update (not applied): -eta*g, or the heavy-ball velocity."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != soft.u.shape:
        raise ValueError("gradient shape must match the soft tokens")
    if cfg.optimizer == "gd":
        return -cfg.step_size * grad
    if state.velocity is None:
        state.velocity = np.zeros_like(grad)
    state.velocity = cfg.momentum * state.velocity - cfg.step_size * grad
    return state.velocity.copy()


def build_basis(intervals: IntervalPartition, length: int, ratio: int) -> BasisMatrix:
    """Assemble the (L, 2|I|) transport/slope basis on the token grid.

    Token n has center frame n*ratio + (ratio-1)/2 and belongs to the
    interval containing its center (intervals are right-open except the
    last; centers past the final endpoint, which exist when the token grid
    is padded, fold into the last interval). Normalized position s is
    clipped to [0, 1].
    """
    if length < 1 or ratio < 1:
        raise ValueError("length and ratio must be positive")
    if intervals.end > length * ratio - 1:
        raise ValueError("token grid does not cover the interval partition")
    spans = intervals.intervals
    centers = np.arange(length) * ratio + (ratio - 1) / 2.0
    starts = np.array([s for s, _ in spans], dtype=np.float64)

    assign = np.clip(np.searchsorted(starts, centers, side="right") - 1, 0, len(spans) - 1)
    matrix = np.zeros((length, 2 * len(spans)))
    for n in range(length):
        i = int(assign[n])
        lo, hi = spans[i]
        width = hi - lo
        s = 0.5 if width == 0 else min(max((centers[n] - lo) / width, 0.0), 1.0)
        matrix[n, 2 * i] = 1.0
        matrix[n, 2 * i + 1] = 2.0 * s - 1.0
    return BasisMatrix(matrix, assign.astype(np.int64))


def activities(
    motion: Motion,
    anchors: AnchorSet,
    intervals: IntervalPartition,
    tolerance: float,
) -> ActivityVector:
    """Per-interval budgets from the larger endpoint anchor error.

    An endpoint that is a sequence boundary rather than an anchor contributes
    zero error. Errors are unsquared Euclidean distances in the control
    space, scaled by the tolerance and clipped to [0, 1].
    """
    if not (tolerance > 0):
        raise ValueError("tolerance must be positive")
    anchors.validate_for(motion)
    obs = observe(motion, anchors.family)
    err_at = {
        int(f): float(np.linalg.norm(obs[f] - y))
        for f, y in zip(anchors.frames, anchors.targets)
    }
    vals = np.array(
        [
            max(err_at.get(lo, 0.0), err_at.get(hi, 0.0))
            for lo, hi in intervals.intervals
        ]
    )
    return ActivityVector(np.clip(vals / tolerance, 0.0, 1.0))


def route(
    delta: np.ndarray, basis: BasisMatrix, activity: ActivityVector, ridge: float
) -> tuple[np.ndarray, np.ndarray]:
    """Project a raw update onto the interval basis with activity-gated ridge.

    Solves (B^T B + ridge * W) alpha = B^T delta, where W repeats (1 - a_i)
    twice per interval, by Cholesky factorization; the routed update is
    B @ alpha. A fully active interval (a_i = 1) with fewer than two tokens
    leaves its block unregularized and flat; the solve then falls back to
    the minimum-norm pseudo-inverse solution, which projects the update onto
    the block's span exactly like the regular path. With ridge = 0 the basis
    must have full column rank. Returns (routed update, coefficients).
    """
    delta = np.asarray(delta, dtype=np.float64)
    b = basis.matrix
    if delta.ndim != 2 or delta.shape[0] != b.shape[0]:
        raise ValueError("update must be (L, d_u) matching the basis rows")
    if activity.values.shape[0] != basis.num_intervals:
        raise ValueError("one activity per interval required")

    gram = b.T @ b
    rhs = b.T @ delta
    weights = np.repeat(1.0 - activity.values, 2)
    system = gram + ridge * np.diag(weights)

    if ridge > 0:
        try:
            factor = scipy.linalg.cho_factor(system)
            alpha = scipy.linalg.cho_solve(factor, rhs)
        except np.linalg.LinAlgError:
            alpha = np.linalg.pinv(system, rcond=1e-12) @ rhs
    else:
        if np.linalg.matrix_rank(b, tol=1e-12) < b.shape[1]:
            raise np.linalg.LinAlgError(
                "routed solve with ridge = 0 requires a full-column-rank basis"
            )
        alpha = np.linalg.pinv(system, rcond=1e-12) @ rhs

    return b @ alpha, alpha


@dataclass(frozen=True)
class RefineStep:
    """One refinement trace row."""

    step: int
    objective: float
    anchor_loss: float
    mean_activity: float
    update_norm: float


def refine(
    soft0: SoftTokens,
    dec: DecoderModel,
    anchors: AnchorSet,
    intervals: IntervalPartition,
    cfg: SolverConfig,
    ratio: int,
) -> tuple[SoftTokens, list[RefineStep]]:
    """Run the routed refinement loop for ``cfg.steps`` iterations.

    Per step: decode, refresh activities from the decoded motion, take the
    objective gradient, form the raw optimizer update, route it through the
    interval basis, and apply. The basis is built once; u0 is never touched.
    """
    tolerance = cfg.tolerance if cfg.tolerance is not None else anchors.family.tolerance
    basis = build_basis(intervals, soft0.u.shape[0], ratio)
    soft = SoftTokens(soft0.u.copy(), soft0.u0)
    state = OptState()
    trace: list[RefineStep] = []

    for k in range(cfg.steps):
        motion = dec.decode(soft.u)
        act = activities(motion, anchors, intervals, tolerance)
        parts = _objective_terms(motion, soft, anchors, cfg)
        grad = _grad_from_motion(motion, soft, dec, anchors, cfg)
        raw = opt_step(soft, grad, cfg, state)
        routed, _ = route(raw, basis, act, cfg.ridge)
        soft = soft.moved_to(soft.u + routed)
        trace.append(
            RefineStep(
                step=k,
                objective=parts["anc"] + parts["sm"] + parts["tr"] + parts["feas"],
                anchor_loss=parts["anc"],
                mean_activity=act.mean,
                update_norm=float(np.linalg.norm(routed)),
            )
        )
    return soft, trace
