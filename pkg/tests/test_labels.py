import math

import numpy as np
import pytest

from prtrack.bbox import BoxParam
from prtrack.errors import DimensionError, DomainError
from prtrack.labels import (
    GaussianLabel,
    MixtureProposal,
    gaussian_density,
    iou_pseudo_label,
    iou_xywh,
    label_grid,
    proposal_density,
    proposal_sample,
)

PAPER_MIXTURE = MixtureProposal([0.5, 0.5], [0.05, 0.5], np.zeros(4))


def test_label_requires_positive_sigma():
    with pytest.raises(DomainError):
        GaussianLabel(np.array([0.0, 0.0]), 0.0)


def test_mixture_weights_must_sum_to_one():
    with pytest.raises(DomainError):
        MixtureProposal([0.3, 0.3], [0.05, 0.5], np.zeros(4))


def test_label_grid_peak_value():
    g = label_grid(GaussianLabel(np.array([2.0, 2.0]), 1.0), (5, 5), 1.0)
    assert g.values[2, 2] == pytest.approx(1.0 / (2.0 * math.pi), abs=1e-12)
    assert g.values[2, 2] == pytest.approx(0.1591549, abs=1e-7)


def test_label_grid_far_center_decays():
    g = label_grid(GaussianLabel(np.array([100.0, 100.0]), 1.0), (4, 4), 1.0)
    assert float(g.values.max()) < 1e-12


def test_label_grid_offset_closed_form():
    # sigma = 2, cell at offset (1,1) from the center.
    g = label_grid(GaussianLabel(np.array([1.0, 1.0]), 2.0), (5, 5), 1.0)
    want = math.exp(-0.25) / (8.0 * math.pi)
    assert g.values[2, 2] == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(0.0309875, abs=1e-7)


def test_label_grid_matches_pointwise_closed_form():
    rng = np.random.Generator(np.random.PCG64(31))
    center = rng.uniform(1.0, 5.0, size=2)
    sigma = 1.3
    g = label_grid(GaussianLabel(center, sigma), (7, 7), 1.0)
    for r in range(7):
        for c in range(7):
            d2 = (r - center[0]) ** 2 + (c - center[1]) ** 2
            want = math.exp(-d2 / (2 * sigma * sigma)) / (2 * math.pi * sigma * sigma)
            assert g.values[r, c] == pytest.approx(want, abs=1e-12)


def test_label_grid_cell_scaling():
    # With cell area A, cell (i, j) sits at (i, j) * sqrt(A).
    a = 0.25
    center = np.array([0.5, 0.5])
    g = label_grid(GaussianLabel(center, 1.0), (4, 4), a)
    side = math.sqrt(a)
    d2 = (2 * side - 0.5) ** 2 + (3 * side - 0.5) ** 2
    want = math.exp(-d2 / 2.0) / (2.0 * math.pi)
    assert g.values[2, 3] == pytest.approx(want, abs=1e-12)


def test_label_grid_mass_near_one_when_supported():
    # Support (+-4 sigma) inside the grid -> discrete mass within 2% of 1.
    for sigma, area in ((1.0, 1.0), (1.5, 1.0), (0.8, 0.25)):
        side = math.sqrt(area)
        n = int(math.ceil(10 * sigma / side)) | 1
        mid = (n // 2) * side
        g = label_grid(GaussianLabel(np.array([mid, mid]), sigma), (n, n), area)
        assert float(g.values.sum()) * area == pytest.approx(1.0, rel=0.02)


def test_gaussian_density_4d_paper_sigma():
    c = np.zeros(4)
    v = gaussian_density(GaussianLabel(c, 0.05), c)
    assert v == pytest.approx((2.0 * math.pi * 0.0025) ** -2, rel=1e-12)
    assert v == pytest.approx(4052.847, abs=1e-3)


def test_gaussian_density_2d_peak():
    c = np.zeros(2)
    assert gaussian_density(GaussianLabel(c, 1.0), c) == pytest.approx(1.0 / (2 * math.pi), abs=1e-12)


def test_gaussian_density_tail_vanishes():
    c = np.zeros(2)
    assert gaussian_density(GaussianLabel(c, 0.7), c + 100.0) == pytest.approx(0.0, abs=1e-300)


def test_gaussian_density_dimension_mismatch():
    with pytest.raises(DimensionError):
        gaussian_density(GaussianLabel(np.zeros(4), 1.0), np.zeros(2))


def test_gaussian_density_decreasing_in_distance():
    label = GaussianLabel(np.zeros(2), 1.1)
    prev = gaussian_density(label, np.zeros(2))
    for r in (0.5, 1.0, 2.0, 4.0):
        cur = gaussian_density(label, np.array([r, 0.0]))
        assert cur < prev
        prev = cur


def test_proposal_sample_mean_law_of_large_numbers():
    center = np.array([1.0, -2.0, 0.5, 3.0])
    q = MixtureProposal([1.0], [0.3], center)
    rng = np.random.Generator(np.random.PCG64(32))
    draws = proposal_sample(q, rng, size=100_000)
    bound = 4 * 0.3 / math.sqrt(100_000)
    assert np.abs(draws.mean(axis=0) - center).max() <= bound


def test_proposal_sample_degenerate_sigma():
    center = np.array([0.2, 0.4, 0.6, 0.8])
    q = MixtureProposal([1.0], [1e-12], center)
    rng = np.random.Generator(np.random.PCG64(33))
    for _ in range(10):
        assert np.abs(proposal_sample(q, rng) - center).max() <= 1e-10


def test_proposal_sample_paper_mixture_variance():
    rng = np.random.Generator(np.random.PCG64(34))
    draws = proposal_sample(PAPER_MIXTURE, rng, size=100_000)
    want = 0.5 * 0.05**2 + 0.5 * 0.5**2
    assert want == pytest.approx(0.12625, abs=1e-12)
    np.testing.assert_allclose(draws.var(axis=0), want, rtol=0.05)


def test_proposal_density_at_center():
    v = proposal_density(PAPER_MIXTURE, np.zeros(4))
    want = 0.5 * (2 * math.pi * 0.05**2) ** -2 + 0.5 * (2 * math.pi * 0.5**2) ** -2
    assert v == pytest.approx(want, rel=1e-12)


def test_proposal_density_mixture_collapse():
    q = MixtureProposal([0.5, 0.5], [0.4, 0.4], np.zeros(4))
    rng = np.random.Generator(np.random.PCG64(35))
    for _ in range(5):
        y = rng.standard_normal(4)
        single = gaussian_density(GaussianLabel(np.zeros(4), 0.4), y)
        assert proposal_density(q, y) == pytest.approx(single, rel=1e-12)


def test_proposal_density_far_tail_wide_component():
    y = np.array([3.0, 0.0, 0.0, 0.0])
    wide = gaussian_density(GaussianLabel(np.zeros(4), 0.5), y)
    ratio = proposal_density(PAPER_MIXTURE, y) / wide
    assert ratio == pytest.approx(0.5, abs=1e-6)


def test_proposal_density_strictly_positive():
    rng = np.random.Generator(np.random.PCG64(36))
    for _ in range(50):
        # Stay inside the float64-representable tail of the wider component.
        y = rng.uniform(-6, 6, size=4)
        assert proposal_density(PAPER_MIXTURE, y) > 0.0


def test_iou_pseudo_label_identity_and_disjoint():
    a = BoxParam(np.array([0.0, 0.0, 0.0, 0.0]), (1.0, 1.0))
    b = BoxParam(np.array([10.0, 10.0, 0.0, 0.0]), (1.0, 1.0))
    assert iou_pseudo_label(a, a) == pytest.approx(1.0, abs=1e-12)
    assert iou_pseudo_label(a, b) == pytest.approx(0.0, abs=1e-12)


def test_iou_pseudo_label_half_offset():
    a = BoxParam(np.array([0.0, 0.0, 0.0, 0.0]), (1.0, 1.0))
    b = BoxParam(np.array([0.5, 0.0, 0.0, 0.0]), (1.0, 1.0))
    assert iou_pseudo_label(a, b) == pytest.approx(0.5 / 1.5, abs=1e-9)


def test_iou_symmetry():
    rng = np.random.Generator(np.random.PCG64(37))
    for _ in range(20):
        a = np.array([*rng.uniform(-2, 2, 2), *rng.uniform(0.5, 3, 2)])
        b = np.array([*rng.uniform(-2, 2, 2), *rng.uniform(0.5, 3, 2)])
        assert iou_xywh(a, b) == pytest.approx(iou_xywh(b, a), abs=1e-14)
        assert 0.0 <= float(iou_xywh(a, b)) <= 1.0
