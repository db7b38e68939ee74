"""Laplace-uncertainty depth fusion and adaptive aggregation.

A visual and an attribute depth belief are added cell by cell (scales
add in quadrature), every cell's uncertainty becomes a probability
``exp(-u)``, and the patch is reduced to a single instance depth and
confidence by probability weighting over the valid cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidUncertainty, NegativeUncertainty, NoValidCells, OutOfRange

U_MIN = 1e-6
SQRT2 = math.sqrt(2.0)


def clamp_uncertainty(u):
    """Reject non-positive scales and lift tiny ones to :data:`U_MIN`."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise InvalidUncertainty("uncertainty must be strictly positive")
    out = np.maximum(arr, U_MIN)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DepthBelief:
    """Laplace belief ``L(d, u)``; ``u`` is clamped to at least ``U_MIN``."""

    d: float
    u: float

    def __post_init__(self):
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "u", clamp_uncertainty(self.u))


def fuse_cell(vis: DepthBelief, att: DepthBelief) -> DepthBelief:
    return DepthBelief(vis.d + att.d, math.hypot(vis.u, att.u))


def fuse(d_vis, u_vis, d_att, u_att):
    """Array form of :func:`fuse_cell`; returns ``(d_ins, u_ins)``."""
    u_vis = clamp_uncertainty(u_vis)
    u_att = clamp_uncertainty(u_att)
    d = np.asarray(d_vis, dtype=np.float64) + np.asarray(d_att, dtype=np.float64)
    return d, np.sqrt(np.square(u_vis) + np.square(u_att))


def uncertainty_to_prob(u):
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise NegativeUncertainty("uncertainty must be non-negative")
    out = np.exp(-arr)
    return float(out) if out.ndim == 0 else out


@dataclass
class InstancePatch:
    """Per-cell visual and attribute beliefs of one object.

    All arrays share one shape (``m x n`` normally). ``valid`` defaults to
    every cell with finite depths.
    """

    d_vis: np.ndarray
    u_vis: np.ndarray
    d_att: np.ndarray
    u_att: np.ndarray
    valid: Optional[np.ndarray] = None
    d_ins: np.ndarray = field(init=False, repr=False)
    u_ins: np.ndarray = field(init=False, repr=False)
    prob: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.d_vis = np.asarray(self.d_vis, dtype=np.float64)
        self.d_att = np.asarray(self.d_att, dtype=np.float64)
        shape = self.d_vis.shape
        self.u_vis = np.broadcast_to(clamp_uncertainty(self.u_vis), shape).copy()
        self.u_att = np.broadcast_to(clamp_uncertainty(self.u_att), shape).copy()
        if self.valid is None:
            self.valid = np.isfinite(self.d_vis) & np.isfinite(self.d_att)
        self.valid = np.broadcast_to(np.asarray(self.valid, dtype=bool), shape).copy()
        self.d_ins = self.d_vis + self.d_att
        self.u_ins = np.sqrt(np.square(self.u_vis) + np.square(self.u_att))
        self.prob = np.exp(-self.u_ins)

    def to_dict(self) -> dict:
        def enc(a):
            return [[None if not math.isfinite(v) else float(v) for v in row] for row in np.atleast_2d(a)]

        return {
            "d_vis": enc(self.d_vis),
            "u_vis": enc(self.u_vis),
            "d_att": enc(self.d_att),
            "u_att": enc(self.u_att),
            "valid": np.atleast_2d(self.valid).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InstancePatch":
        def dec(a):
            return np.array([[np.nan if v is None else v for v in row] for row in a], dtype=np.float64)

        return cls(dec(data["d_vis"]), dec(data["u_vis"]), dec(data["d_att"]), dec(data["u_att"]),
                   np.array(data["valid"], dtype=bool))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _valid_weights(prob, valid):
    prob = np.asarray(prob, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    p = prob[valid]
    if p.size == 0:
        raise NoValidCells("patch has no valid cell")
    # normalising by the largest weight keeps uniform patches exact
    return p, p / p.max()


def aggregate(d_ins, prob, valid) -> float:
    """Probability-weighted mean of ``d_ins`` over the valid cells."""
    _, w = _valid_weights(prob, valid)
    d = np.asarray(d_ins, dtype=np.float64)[np.asarray(valid, dtype=bool)]
    return float(np.sum(d * w) / np.sum(w))


def confidence(prob, valid) -> float:
    """``sum(P^2) / sum(P)`` over the valid cells."""
    p, w = _valid_weights(prob, valid)
    # ratio first: for equal weights it is exactly 1, so p_ins == P
    return float(p.max() * (np.sum(w * w) / np.sum(w)))


def aggregate_depth(patch: InstancePatch) -> float:
    return aggregate(patch.d_ins, patch.prob, patch.valid)


def instance_confidence(patch: InstancePatch) -> float:
    return confidence(patch.prob, patch.valid)


def final_score(p_2d: float, p_ins: float) -> float:
    """3D detection confidence: 2D score times instance depth confidence."""
    if not 0.0 <= p_2d <= 1.0:
        raise OutOfRange(f"2D score {p_2d} outside [0, 1]")
    if not 0.0 < p_ins <= 1.0:
        raise OutOfRange(f"instance confidence {p_ins} outside (0, 1]")
    return p_2d * p_ins


# Losses ------------------------------------------------------------------------


def laplace_nll(d, u, d_star):
    """``sqrt(2)/u * |d - d*| + ln u``; works element-wise on arrays."""
    u = clamp_uncertainty(u)
    return SQRT2 / u * np.abs(np.subtract(d, d_star)) + np.log(u)


def laplace_nll_grad(d, u, d_star):
    """``(dL/dd, dL/du)``; the sign term is 0 at ``d == d*``."""
    u = clamp_uncertainty(u)
    diff = np.subtract(d, d_star)
    grad_d = SQRT2 / u * np.sign(diff)
    # factored form keeps the stationary point at u = sqrt(2)|diff| exact to rounding
    grad_u = (1.0 - SQRT2 * np.abs(diff) / u) / u
    return grad_d, grad_u


def smooth_l1(x, beta: float = 1.0):
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    ax = np.abs(x)
    return np.where(ax < beta, 0.5 * np.square(x) / beta, ax - 0.5 * beta)


def smooth_l1_grad(x, beta: float = 1.0):
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < beta, x / beta, np.sign(x))


def gradcheck(samples: int = 1000, seed: int = 0, h: float = 1e-6) -> dict:
    """Compare analytic loss gradients with central differences.

    Samples keep ``|d - d*| > 1e-3`` and stay clear of the smooth-L1 knee.
    Returns the largest relative errors plus the stationarity residual of
    ``dL/du`` at ``u = sqrt(2) |d - d*|``.
    """
    rng = np.random.default_rng(seed)
    d_star = rng.uniform(1.0, 60.0, samples)
    gap = rng.uniform(1e-3, 5.0, samples) * rng.choice([-1.0, 1.0], samples)
    gap = np.where(np.abs(gap) < 2e-3, 2e-3 * np.sign(gap), gap)
    d = d_star + gap
    u = rng.uniform(0.05, 5.0, samples)

    gd, gu = laplace_nll_grad(d, u, d_star)
    fd_d = (laplace_nll(d + h, u, d_star) - laplace_nll(d - h, u, d_star)) / (2 * h)
    fd_u = (laplace_nll(d, u + h, d_star) - laplace_nll(d, u - h, d_star)) / (2 * h)

    x = rng.uniform(-4.0, 4.0, samples)
    x = np.where(np.abs(np.abs(x) - 1.0) < 1e-3, x + 0.01, x)
    gs = smooth_l1_grad(x)
    fd_s = (smooth_l1(x + h) - smooth_l1(x - h)) / (2 * h)

    def rel(a, b):
        return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))

    u_star = SQRT2 * np.abs(d - d_star)
    _, gu_star = laplace_nll_grad(d, u_star, d_star)
    return {
        "samples": samples,
        "laplace_dd": rel(gd, fd_d),
        "laplace_du": rel(gu, fd_u),
        "smooth_l1": rel(gs, fd_s),
        "stationary_du": float(np.max(np.abs(gu_star))),
    }
