"""Regression objectives over score grids, each with its closed-form gradient.

Four families are covered:

* l2_loss          -- squared error against per-cell pseudo labels,
* robust_l2_loss   -- squared error near the annotation, hinged squared
                      score in the background,
* nll_loss         -- negative log of the normalized density at the
                      annotated cell,
* kl_grid_loss     -- divergence between the model density and a label
                      density sampled on the grid,
* kl_mc_loss       -- the same divergence estimated with importance
                      sampling at arbitrary sample points.

Grid losses take a Grid2D of scores; the Monte Carlo loss takes flat sample
vectors.  The value of kl_grid_loss drops the score-independent entropy of
the label density, so it can be negative; differences between score grids
are still exact divergences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .gridmath import Grid2D, log_sum_exp, softmax

__all__ = [
    "LossValueGrad",
    "l2_loss",
    "robust_l2_loss",
    "nll_loss",
    "kl_grid_loss",
    "kl_mc_loss",
]

# Hinge threshold for robust_l2_loss, as a fraction of the peak label value.
DEFAULT_RL2_THRESHOLD_FRACTION = 0.05


@dataclass(frozen=True, eq=False)
class LossValueGrad:
    """Loss value plus its gradient with respect to the scores.

    grad_scores is a Grid2D for grid losses and a flat array for sample
    losses, matching the shape of the score input.
    """

    value: float
    grad_scores: Grid2D | np.ndarray


def _check_same_shape(scores: Grid2D, labels: Grid2D, what: str):
    if (scores.height, scores.width) != (labels.height, labels.width):
        raise DimensionError(
            f"{what} shape {labels.height}x{labels.width} does not match "
            f"scores {scores.height}x{scores.width}"
        )


def l2_loss(scores: Grid2D, pseudo_labels: Grid2D, cell_area: float = 1.0) -> LossValueGrad:
    """value = A * sum_k (s_k - a_k)^2, grad = 2A * (s - a)."""
    _check_same_shape(scores, pseudo_labels, "pseudo labels")
    if cell_area <= 0:
        raise DomainError(f"cell_area must be positive, got {cell_area}")
    r = scores.values - pseudo_labels.values
    return LossValueGrad(cell_area * float((r * r).sum()), Grid2D(2.0 * cell_area * r))


def robust_l2_loss(
    scores: Grid2D,
    pseudo_labels: Grid2D,
    threshold: float,
    cell_area: float = 1.0,
) -> LossValueGrad:
    """Squared error where the label exceeds the threshold, hinged elsewhere.

    Cells with a_k > threshold contribute (s_k - a_k)^2; background cells
    contribute max(0, s_k)^2, so already-negative background scores are
    free.  Both branches are summed with the cell area.
    """
    _check_same_shape(scores, pseudo_labels, "pseudo labels")
    if cell_area <= 0:
        raise DomainError(f"cell_area must be positive, got {cell_area}")
    s, a = scores.values, pseudo_labels.values
    near = a > threshold
    r = np.where(near, s - a, np.maximum(s, 0.0))
    return LossValueGrad(cell_area * float((r * r).sum()), Grid2D(2.0 * cell_area * r))


def nll_loss(scores: Grid2D, label_coordinate, cell_area: float = 1.0) -> LossValueGrad:
    """Negative log density at the annotation: log(A sum exp s) - s(y_i).

    The continuous annotation is snapped to the nearest cell center
    (cell (i, j) sits at (i, j) * sqrt(cell_area)); annotations outside
    the grid are rejected.
    """
    if cell_area <= 0:
        raise DomainError(f"cell_area must be positive, got {cell_area}")
    coord = np.asarray(label_coordinate, dtype=np.float64)
    if coord.shape != (2,):
        raise DimensionError(f"label coordinate must be 2D, got shape {coord.shape}")
    spacing = math.sqrt(cell_area)
    i = int(round(coord[0] / spacing))
    j = int(round(coord[1] / spacing))
    if not (0 <= i < scores.height and 0 <= j < scores.width):
        raise DomainError(f"label coordinate {tuple(coord)} falls outside the score grid")
    value = log_sum_exp(scores, cell_area) - float(scores.values[i, j])
    grad = softmax(scores).values.copy()
    grad[i, j] -= 1.0
    return LossValueGrad(value, Grid2D(grad))


def kl_grid_loss(
    scores: Grid2D,
    label_grid: Grid2D,
    cell_area: float = 1.0,
    renormalize: bool = True,
) -> LossValueGrad:
    """Grid-sampled divergence: log(A sum_k exp s_k) - A sum_k s_k p_k.

    By default the label density is rescaled so its grid mass A * sum p_k
    is exactly 1, which keeps truncated or coarsely sampled Gaussians
    honest; pass renormalize=False to trust the raw values.  The gradient
    is A * (softmax density - p).
    """
    _check_same_shape(scores, label_grid, "label grid")
    if cell_area <= 0:
        raise DomainError(f"cell_area must be positive, got {cell_area}")
    p = label_grid.values
    if (p < 0).any():
        raise DomainError("label density must be nonnegative")
    if renormalize:
        mass = p.sum() * cell_area
        if mass <= 0:
            raise DomainError("label grid has zero mass; cannot renormalize")
        p = p / mass
    value = log_sum_exp(scores, cell_area) - cell_area * float((scores.values * p).sum())
    model_density = softmax(scores).values / cell_area
    grad = cell_area * (model_density - p)
    return LossValueGrad(value, Grid2D(grad))


def kl_mc_loss(sample_scores, label_densities, proposal_densities) -> LossValueGrad:
    """Importance-sampled divergence at K proposal draws.

    value = log( (1/K) sum_k exp(s_k) / q_k ) - (1/K) sum_k s_k p_k / q_k
    with p_k the label density and q_k the proposal density at draw k.
    The first term is evaluated as a shifted log-sum-exp over s_k - log q_k.
    """
    s = np.asarray(sample_scores, dtype=np.float64)
    p = np.asarray(label_densities, dtype=np.float64)
    q = np.asarray(proposal_densities, dtype=np.float64)
    if not (s.ndim == p.ndim == q.ndim == 1) or not (s.size == p.size == q.size):
        raise DimensionError("sample scores and densities must be 1D arrays of equal length")
    if s.size < 1:
        raise DimensionError("at least one sample is required")
    if not (np.isfinite(s).all() and np.isfinite(p).all() and np.isfinite(q).all()):
        raise DomainError("sample inputs must be finite")
    if (q <= 0).any():
        raise DomainError("proposal densities must be strictly positive")
    if (p < 0).any():
        raise DomainError("label densities must be nonnegative")
    k = s.size
    t = s - np.log(q)
    m = t.max()
    e = np.exp(t - m)
    value = m + math.log(e.sum() / k) - float(s @ (p / q)) / k
    grad = e / e.sum() - p / (q * k)
    return LossValueGrad(value, grad)
