"""Label distributions and proposal sampling for density regression.

Annotated states are modelled as isotropic Gaussians around the annotation:
narrow sigma keeps the annotation nearly exact, wider sigma encodes label
noise.  Grid labels are evaluated at cell centers (not integrated over
cells); cell (i, j) of a grid with cell area A sits at coordinate
(i * sqrt(A), j * sqrt(A)).  Box-space sampling uses a Gaussian mixture
proposal so importance ratios against the label stay bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from .errors import DimensionError, DomainError
from .gridmath import Grid2D

if TYPE_CHECKING:  # only for annotations; boxes live in the bbox module
    from .bbox import BoxParam

__all__ = [
    "GaussianLabel",
    "MixtureProposal",
    "label_grid",
    "gaussian_density",
    "proposal_sample",
    "proposal_density",
    "iou_xywh",
    "iou_pseudo_label",
]


@dataclass(frozen=True, eq=False)
class GaussianLabel:
    """Isotropic Gaussian over a 2D grid state or a 4D box parametrization."""

    center: np.ndarray
    sigma: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        if c.ndim != 1 or c.size < 1:
            raise DimensionError(f"label center must be a 1D coordinate, got shape {c.shape}")
        if not np.isfinite(c).all():
            raise DomainError("label center must be finite")
        if not (self.sigma > 0):
            raise DomainError(f"label sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.center.size


@dataclass(frozen=True, eq=False)
class MixtureProposal:
    """Gaussian mixture q(y) = sum_m weight_m N(y; center, sigma_m^2 I).

    All components share the center; weights are positive and sum to 1.
    """

    weights: np.ndarray
    sigmas: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        s = np.asarray(self.sigmas, dtype=np.float64)
        c = np.asarray(self.center, dtype=np.float64)
        if w.ndim != 1 or s.ndim != 1 or w.size != s.size or w.size < 1:
            raise DimensionError("weights and sigmas must be 1D arrays of equal length")
        if c.ndim != 1 or c.size < 1 or not np.isfinite(c).all():
            raise DimensionError("proposal center must be a finite 1D coordinate")
        if (w <= 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("component weights must be positive and sum to 1")
        if (s <= 0).any():
            raise DomainError("component sigmas must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "sigmas", s)
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.center.size

    def recenter(self, center) -> "MixtureProposal":
        return replace(self, center=np.asarray(center, dtype=np.float64))


def _gauss(dist2: np.ndarray, sigma: float, dim: int) -> np.ndarray:
    norm = (2.0 * math.pi * sigma * sigma) ** (-dim / 2.0)
    return norm * np.exp(-dist2 / (2.0 * sigma * sigma))


def gaussian_density(label: GaussianLabel, y) -> float | np.ndarray:
    """Gaussian density at y; y may be one coordinate or a stack (..., dim)."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.shape[-1:] != (label.dim,):
        raise DimensionError(
            f"coordinate dim {arr.shape[-1:]} does not match label dim {label.dim}"
        )
    d2 = ((arr - label.center) ** 2).sum(axis=-1)
    out = _gauss(d2, label.sigma, label.dim)
    return float(out) if out.ndim == 0 else out


def label_grid(label: GaussianLabel, grid_shape: tuple[int, int], cell_area: float = 1.0) -> Grid2D:
    """Evaluate a 2D Gaussian label at the cell centers of a grid.

    The result is a density (per unit area): its grid mass times cell_area
    approximates 1 once the +-4 sigma support fits inside the grid.
    """
    if label.dim != 2:
        raise DimensionError(f"grid labels need a 2D center, got dim {label.dim}")
    if cell_area <= 0:
        raise DomainError(f"cell_area must be positive, got {cell_area}")
    h, w = grid_shape
    if h < 1 or w < 1:
        raise DimensionError(f"grid shape must be positive, got {grid_shape}")
    spacing = math.sqrt(cell_area)
    rows = np.arange(h, dtype=np.float64) * spacing - label.center[0]
    cols = np.arange(w, dtype=np.float64) * spacing - label.center[1]
    d2 = rows[:, None] ** 2 + cols[None, :] ** 2
    return Grid2D(_gauss(d2, label.sigma, 2))


def proposal_sample(q: MixtureProposal, rng: np.random.Generator, size: int | None = None):
    """Draw from the mixture; returns one coordinate or a (size, dim) stack."""
    n = 1 if size is None else int(size)
    if n < 1:
        raise DomainError(f"sample size must be at least 1, got {size}")
    comp = rng.choice(q.weights.size, size=n, p=q.weights)
    draws = q.center + q.sigmas[comp, None] * rng.standard_normal((n, q.dim))
    return draws[0] if size is None else draws


def proposal_density(q: MixtureProposal, y) -> float | np.ndarray:
    """Mixture density at y; y may be one coordinate or a stack (..., dim)."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.shape[-1:] != (q.dim,):
        raise DimensionError(f"coordinate dim {arr.shape[-1:]} does not match proposal dim {q.dim}")
    d2 = ((arr - q.center) ** 2).sum(axis=-1)
    out = np.zeros_like(d2, dtype=np.float64)
    for wm, sm in zip(q.weights, q.sigmas):
        out = out + wm * _gauss(d2, float(sm), q.dim)
    return float(out) if out.ndim == 0 else out


def iou_xywh(a, b) -> float | np.ndarray:
    """Intersection over union of center-format (cx, cy, w, h) boxes.

    Either argument may be a (..., 4) stack; shapes broadcast.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1:] != (4,) or b.shape[-1:] != (4,):
        raise DimensionError("boxes must have 4 components (cx, cy, w, h)")
    if (a[..., 2:] <= 0).any() or (b[..., 2:] <= 0).any():
        raise DomainError("box width and height must be positive")
    lo = np.maximum(a[..., :2] - a[..., 2:] / 2, b[..., :2] - b[..., 2:] / 2)
    hi = np.minimum(a[..., :2] + a[..., 2:] / 2, b[..., :2] + b[..., 2:] / 2)
    inter = np.clip(hi - lo, 0.0, None).prod(axis=-1)
    union = a[..., 2:].prod(axis=-1) + b[..., 2:].prod(axis=-1) - inter
    out = inter / union
    return float(out) if out.ndim == 0 else out


def iou_pseudo_label(y: "BoxParam", y_i: "BoxParam") -> float:
    """Overlap in [0, 1] between two decoded boxes, used as a regression target."""
    return iou_xywh(np.asarray(y.decode()), np.asarray(y_i.decode()))
