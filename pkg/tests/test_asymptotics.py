from __future__ import annotations

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import jn_zeros

from hicontrast.assembly import Family, OperatorSpec, assemble_reference
from hicontrast.asymptotics import (concentration, decreasing_family_probe, beltrami_neumann_limit, distinct,
                                    gap_opening, hausdorff, higher_gap_criterion, lambda_sweep,
                                    monotonicity_violation, reference_spectrum, supersymmetry_check)
from hicontrast.bloch import BrillouinGrid, band_structure
from hicontrast.eigensolve import dense_oracle
from hicontrast.geometry import CenteredBox, CenteredDisk, Frame, PeriodCell, ThinWalls, build_medium


@pytest.fixture(scope="module")
def frame16():
    return build_medium(PeriodCell(2, 16), Frame(0.125))


# ---- helpers ----------------------------------------------------------------------


def test_distinct_merges_clusters():
    assert_allclose(distinct([1.0, 2.0, 2.0 + 1e-9, 2.0 - 1e-9, 5.0]), [1.0, 2.0 - 1e-9, 5.0])
    assert len(distinct([])) == 0


def test_hausdorff_cases():
    assert hausdorff(np.array([]), np.array([])) == 0.0
    assert hausdorff(np.array([1.0]), np.array([])) == np.inf
    assert hausdorff(np.array([0.0, 1.0]), np.array([0.0, 3.0])) == 2.0


def test_reference_spectrum_reaches_past_ceiling(frame16):
    vals = reference_spectrum(frame16, "dirichlet", 200.0)
    assert vals[-1] > 200.0
    fib = assemble_reference(frame16, "inclusion", "dirichlet")
    assert_allclose(vals, dense_oracle(fib.stiffness, fib.mass)[:len(vals)], rtol=1e-9)


def test_square_inclusion_reference_matches_discrete_laplacian():
    # inclusion of Frame(0.25) at n=32: interior nodes 9..23, Dirichlet nodes 8 and 24
    n = 32
    med = build_medium(PeriodCell(2, n), Frame(0.25))
    vals = reference_spectrum(med, "dirichlet", 100.0)
    N = 16  # intervals across the square
    h = 1.0 / n
    s = 4 / h**2 * np.sin(np.pi * np.arange(1, N) / (2 * N)) ** 2
    exact = np.sort((s[:, None] + s[None, :]).ravel())
    assert_allclose(vals, exact[:len(vals)], rtol=1e-9)


# ---- sweeps -----------------------------------------------------------------------


def test_zero_contrast_sweep_is_well_formed(frame16):
    spec = OperatorSpec(Family.DIVERGENCE, frame16, 0.0)
    rep = lambda_sweep(spec, [0.0], BrillouinGrid(2, 3), 4, 60.0)
    assert rep.ladder == [0.0]
    assert rep.exclude_zero_fiber
    d = rep.to_dict()
    json.dumps(d)
    assert len(d["points"]) == 1
    assert all(g.lam_star is None for g in gap_opening(rep))


def test_ladder_must_increase(frame16):
    spec = OperatorSpec(Family.DIVERGENCE, frame16, 0.0)
    for bad in ([], [1.0, 1.0], [10.0, 1.0]):
        with pytest.raises(ValueError, match="ladder"):
            lambda_sweep(spec, bad, BrillouinGrid(2, 3), 4, 60.0)


def test_concentration_shrinks_along_ladder(frame16):
    spec = OperatorSpec(Family.DIVERGENCE, frame16, 0.0)
    rep = lambda_sweep(spec, [1e2, 1e3, 1e4], BrillouinGrid(2, 3), 4, 120.0)
    d = rep.distances
    assert d[0] > d[1] > d[2]
    assert d[2] < 0.01 * rep.reference[0]
    op = gap_opening(rep)
    assert op[0].lam_star is not None and op[0].overlapping
    assert abs(op[0].interval[0] - rep.reference[0]) < 0.05 * rep.reference[0]


def test_concentration_without_points_is_zero_distance(frame16):
    b = band_structure(OperatorSpec(Family.DIVERGENCE, frame16, 0.0), BrillouinGrid(2, 3), 2)
    c = concentration(b, np.array([50.0]), -1.0)
    assert c.distance == 0.0


def test_gap_rules(frame16):
    spec = OperatorSpec(Family.DIVERGENCE, frame16, 0.0)
    rep = lambda_sweep(spec, [1e4], BrillouinGrid(2, 3), 4, 120.0)
    with pytest.raises(ValueError, match="rule"):
        gap_opening(rep, rule="widest")
    explicit = gap_opening(rep, rule="lower_endpoint")
    assert [g.to_dict() for g in explicit] == [g.to_dict() for g in gap_opening(rep)]
    assert explicit[0].lam_star == 1e4


def test_thin_walls_sweep_runs():
    med = build_medium(PeriodCell(2, 32), ThinWalls(0.0625))
    spec = OperatorSpec(Family.DIVERGENCE, med, 0.0)
    rep = lambda_sweep(spec, [10.0, 1e3], BrillouinGrid(2, 3), 4, 80.0)
    assert np.all(np.isfinite(rep.distances))
    json.dumps(rep.to_dict())


def test_beltrami_plane_flagged_exploratory(frame16):
    rep = beltrami_neumann_limit(frame16, [2.0, 4.0], BrillouinGrid(2, 3), 4, 80.0)
    assert "exploratory (m=2 special)" in rep.flags
    assert rep.reference_kind == "neumann inclusion"
    assert abs(rep.reference[0]) < 1e-9
    assert all(e.bracketing.encloses(e.bands) for e in rep.entries)


# ---- higher-gap criterion -----------------------------------------------------------


@pytest.mark.parametrize("shape", [Frame(0.25), CenteredBox(0.25), CenteredDisk(0.3)],
                         ids=lambda s: type(s).__name__)
def test_ground_state_has_nonzero_mean(shape):
    v = higher_gap_criterion(build_medium(PeriodCell(2, 32), shape), 1)
    assert v.status == "holds"
    assert v.cluster == [1]


def test_square_ground_state_witness_closed_form():
    v = higher_gap_criterion(build_medium(PeriodCell(2, 32), CenteredBox(0.25)), 1)
    # discrete analogue of 8 / pi^2 on the lattice square
    N = 16
    j = np.arange(1, N)
    s = np.sin(np.pi * j / N)
    exact = s.sum() ** 2 / ((N - 1) * np.sum(s**2))
    assert_allclose(v.witness, exact, rtol=1e-9)
    # boundary nodes carry no mass, which biases the constant by N / (N - 1)
    assert_allclose(v.witness * (N - 1) / N, 8 / np.pi**2, rtol=0.01)


def test_square_second_cluster_has_zero_mean():
    v = higher_gap_criterion(build_medium(PeriodCell(2, 32), CenteredBox(0.25)), 2)
    assert v.status == "fails"
    assert v.cluster == [2, 3]
    assert v.witness < 1e-10


def test_disk_radial_mode_witness():
    med = build_medium(PeriodCell(2, 64), CenteredDisk(0.3))
    v = higher_gap_criterion(med, 1)
    assert_allclose(v.witness, 2 / jn_zeros(0, 1)[0], rtol=0.02)


def test_indeterminate_when_cluster_is_ambiguous():
    v = higher_gap_criterion(build_medium(PeriodCell(2, 32), CenteredBox(0.25)), 2, cluster_rtol=0.0,
                             ambiguity=1e-3)
    assert v.status == "indeterminate"


def test_criterion_rejects_bad_index():
    med = build_medium(PeriodCell(2, 8), CenteredBox(0.125))
    with pytest.raises(ValueError):
        higher_gap_criterion(med, 0)
    with pytest.raises(ValueError, match="interior nodes"):
        higher_gap_criterion(med, 1)


# ---- Pauli pair ---------------------------------------------------------------------


def test_supersymmetry_vanishes_without_field(frame16):
    rep = supersymmetry_check(frame16, 1.0, BrillouinGrid(2, 3), 6, beta=0.0, refine=False)
    assert rep.distance == 0.0
    assert rep.lower_bounds_hold
    assert rep.ratio is None
    json.dumps(rep.to_dict())


def test_supersymmetry_distance_small_with_field(frame16):
    rep = supersymmetry_check(frame16, 1.0, BrillouinGrid(2, 3), 8, beta=1.0, refine=False)
    assert rep.lower_bounds_hold
    assert rep.distance < 0.01 * rep.window


# ---- decreasing family --------------------------------------------------------------


def test_decreasing_probe_monotone(frame16):
    probe = decreasing_family_probe(frame16, [0.0, 10.0, 1e3], BrillouinGrid(2, 3), 4)
    assert probe.monotone
    assert probe.max_increase <= 1e-8
    json.dumps(probe.to_dict())


def test_decreasing_probe_at_zero_matches_divergence(frame16):
    g = BrillouinGrid(2, 3)
    probe = decreasing_family_probe(frame16, [0.0], g, 4)
    plain = band_structure(OperatorSpec(Family.DIVERGENCE, frame16, 0.0), g, 4)
    assert_allclose(probe.bands[0].energies, plain.energies, rtol=1e-10, atol=1e-10)


def test_decreasing_probe_near_zero_counts_match_dense():
    med = build_medium(PeriodCell(2, 8), Frame(0.25))
    from hicontrast.assembly import assemble_fiber
    probe = decreasing_family_probe(med, [1e6], BrillouinGrid(2, 3), 6, zero_tol=1e-2)
    fib = assemble_fiber(OperatorSpec(Family.DIVERGENCE_DECREASING, med, 1e6), np.zeros(2))
    dense = dense_oracle(fib.stiffness, fib.mass)
    assert probe.near_zero[0] == min(6, int(np.sum(dense < 1e-2)))


def test_monotonicity_violation_direction(frame16):
    g = BrillouinGrid(2, 3)
    seq = [band_structure(OperatorSpec(Family.DIVERGENCE, frame16, lam), g, 3) for lam in (0.0, 100.0)]
    assert monotonicity_violation(seq, increasing=True) <= 1e-10
    assert monotonicity_violation(seq, increasing=False) > 0.1
