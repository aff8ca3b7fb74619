"""Linearized flow+depth motion model (8 parameters per object).

The model predicts per-pixel flow from normalized coordinates and
inverse relative depth:

    u = a + b/z - c*x/z - d*y + e*x^2 - f*x*y
    v = g + h/z - c*y/z - d*x + e*x*y + f*y^2

c, d, e, f are shared between the two equations. Fitting is plain
least squares, which minimizes the mean-squared flow residual used
as the motion-affinity statistic. The model targets clustering, not
metric motion recovery: coefficients absorb the unknown depth scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# relative monocular depth can approach zero; cap inverse depth instead
# of letting single pixels dominate the normal equations
INV_DEPTH_CAP = 1e6

# ratio of largest to smallest design singular value above which the fit
# is flagged (constant-depth objects collide columns a/b and g/h)
CONDITION_LIMIT = 1e10


class InsufficientSamples(ValueError):
    """Too few flow samples to pose the least-squares problem."""


@dataclass(frozen=True)
class FlowSample:
    """One pixel's contribution: position, inverse depth, observed flow."""

    x: float
    y: float
    inv_z: float
    u: float
    v: float


@dataclass(frozen=True)
class FlowDepthModel:
    theta: np.ndarray  # (8,) coefficients (a, b, c, d, e, f, g, h)
    ill_conditioned: bool = False


def design_rows(s: FlowSample):
    """Design rows and targets for one sample, theta order (a..h)."""
    x, y, w = s.x, s.y, s.inv_z
    row_u = np.array([1.0, w, -x * w, -y, x * x, -x * y, 0.0, 0.0])
    row_v = np.array([0.0, 0.0, -y * w, -x, x * y, y * y, 1.0, w])
    return row_u, s.u, row_v, s.v


def _design_matrix(samples) -> tuple[np.ndarray, np.ndarray]:
    arr = np.array([[s.x, s.y, s.inv_z, s.u, s.v] for s in samples], dtype=float)
    x, y, w = arr[:, 0], arr[:, 1], np.minimum(arr[:, 2], INV_DEPTH_CAP)
    n = len(samples)
    zeros = np.zeros(n)
    ones = np.ones(n)
    rows_u = np.column_stack([ones, w, -x * w, -y, x * x, -x * y, zeros, zeros])
    rows_v = np.column_stack([zeros, zeros, -y * w, -x, x * y, y * y, ones, w])
    a = np.vstack([rows_u, rows_v])
    b = np.concatenate([arr[:, 3], arr[:, 4]])
    return a, b


def fit_flow_depth_model(samples) -> FlowDepthModel:
    """Least-squares fit of the 8 coefficients over all samples.

    Rank-deficient designs (tiny objects, constant depth) produce the
    minimum-norm solution and set ``ill_conditioned``; the fit is always
    finite so the pipeline stays total.

    Raises:
        InsufficientSamples: fewer than 4 samples (8 equations).
    """
    if len(samples) < 4:
        raise InsufficientSamples(f"need >= 4 flow samples, got {len(samples)}")
    a, b = _design_matrix(samples)
    theta, _, rank, sv = np.linalg.lstsq(a, b, rcond=1e-12)
    ill = rank < 8 or sv[-1] == 0.0 or sv[0] / sv[-1] > CONDITION_LIMIT
    return FlowDepthModel(theta=theta, ill_conditioned=bool(ill))


def flow_model_residual(model: FlowDepthModel, samples) -> float:
    """Mean over samples of (u - u_hat)^2 + (v - v_hat)^2.

    Raises:
        InsufficientSamples: empty sample list.
    """
    if len(samples) == 0:
        raise InsufficientSamples("no samples to evaluate")
    a, b = _design_matrix(samples)
    r = a @ model.theta - b
    n = len(samples)
    # rows are stacked u-block then v-block; per-sample error sums both
    return float((r[:n] ** 2 + r[n:] ** 2).mean())
