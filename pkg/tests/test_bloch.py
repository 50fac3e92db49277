from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from hicontrast.assembly import Family, OperatorSpec
from hicontrast.bloch import (BrillouinGrid, band_structure, bracketing, detect_gaps, gap_report, ids,
                              interval_gaps, write_bands_csv, write_ids_csv)
from hicontrast.geometry import Frame, PeriodCell, build_medium


@pytest.fixture(scope="module")
def frame32():
    return build_medium(PeriodCell(2, 32), Frame(0.125))


@pytest.fixture(scope="module")
def free_bands(frame32):
    return band_structure(OperatorSpec(Family.DIVERGENCE, frame32, 0.0), BrillouinGrid(2, 9), 8)


@pytest.fixture(scope="module")
def contrast_bands(frame32):
    return band_structure(OperatorSpec(Family.DIVERGENCE, frame32, 1e4), BrillouinGrid(2, 5), 6)


# ---- grid ---------------------------------------------------------------------


@pytest.mark.parametrize("m, n_theta", [(1, 3), (2, 5), (3, 3)])
def test_grid_contents(m, n_theta):
    g = BrillouinGrid(m, n_theta)
    pts = g.points
    assert pts.shape == (n_theta**m, m)
    assert np.all(pts[g.zero_index] == 0)
    assert np.any(np.all(pts == np.pi, axis=1))
    assert_allclose(g.weights.sum(), 1.0)
    first, inverse = g.fiber_index
    assert len(first) == (n_theta - 1) ** m
    # -theta is on the grid (up to -pi ~ pi) and maps to the mirrored fiber
    key = {tuple(np.round(p, 12)) for p in pts}
    assert all(tuple(np.round(-p, 12)) in key for p in pts)


def test_grid_rejects_even_or_small_counts():
    with pytest.raises(ValueError):
        BrillouinGrid(2, 4)
    with pytest.raises(ValueError):
        BrillouinGrid(2, 1)


def test_duplicate_fibers_share_values(free_bands):
    g = free_bands.grid
    _, inverse = g.fiber_index
    for u in np.unique(inverse):
        cols = free_bands.energies[:, inverse == u]
        assert np.all(cols == cols[:, :1])


# ---- bands ---------------------------------------------------------------------


def test_free_bands_cover_window(free_bands):
    assert detect_gaps(free_bands, 30.0, eta=1e-3 * 30.0) == []
    lo = free_bands.intervals()[0, 0]
    assert abs(lo) < 1e-10


def test_one_dimensional_dispersion():
    n = 64
    med = build_medium(PeriodCell(1, n), Frame(0.25))
    g = BrillouinGrid(1, 17)
    b = band_structure(OperatorSpec(Family.DIVERGENCE, med, 0.0), g, 3)
    theta = g.points[:, 0]
    exact = 4 * n**2 * np.sin(theta / (2 * n)) ** 2
    assert_allclose(b.energies[0], exact, rtol=1e-9, atol=1e-9)
    small = np.abs(theta) < 0.5
    assert_allclose(b.energies[0, small], theta[small] ** 2, rtol=1e-3, atol=1e-10)


def test_high_contrast_first_band_below_inclusion_ground_state(contrast_bands, frame32):
    from hicontrast.asymptotics import reference_spectrum
    delta1 = reference_spectrum(frame32, "dirichlet", 50.0)[0]
    lo, hi = contrast_bands.intervals()[0]
    assert abs(lo) < 1e-9
    assert hi <= delta1 * (1 + 1e-10)
    assert (delta1 - hi) / delta1 < 0.01


def test_first_gap_starts_at_inclusion_ground_state(contrast_bands, frame32):
    from hicontrast.asymptotics import reference_spectrum
    delta1 = reference_spectrum(frame32, "dirichlet", 50.0)[0]
    gaps = detect_gaps(contrast_bands, 80.0)
    assert gaps and abs(gaps[0][0] - delta1) / delta1 < 0.01


def test_reflection_symmetry(frame32):
    g = BrillouinGrid(2, 5)
    pts = g.points
    for fam in (Family.SCHRODINGER, Family.PAULI_PLUS, Family.BELTRAMI):
        b = band_structure(OperatorSpec(fam, frame32, 3.0), g, 4)
        for j, p in enumerate(pts):
            mirror = np.where(np.isclose(-p, -np.pi), np.pi, -p)
            jm = int(np.flatnonzero(np.all(np.isclose(pts, mirror), axis=1))[0])
            assert_allclose(b.energies[:, j], b.energies[:, jm], rtol=1e-9, atol=1e-9)


def test_threads_do_not_change_results(frame32):
    spec = OperatorSpec(Family.DIVERGENCE, frame32, 50.0)
    g = BrillouinGrid(2, 5)
    a = band_structure(spec, g, 4, threads=1)
    b = band_structure(spec, g, 4, threads=3)
    assert np.array_equal(a.energies, b.energies)


def test_band_endpoints_monotone_in_contrast(frame32):
    g = BrillouinGrid(2, 3)
    prev = None
    for lam in (0.0, 10.0, 1e3):
        iv = band_structure(OperatorSpec(Family.DIVERGENCE, frame32, lam), g, 4).intervals()
        if prev is not None:
            assert np.all(iv >= prev - 1e-8 * np.maximum(1.0, np.abs(prev)))
        prev = iv


def test_rejects_bad_arguments(frame32):
    spec = OperatorSpec(Family.DIVERGENCE, frame32, 0.0)
    with pytest.raises(ValueError):
        band_structure(spec, BrillouinGrid(2, 3), 0)
    with pytest.raises(ValueError, match="dimension"):
        band_structure(spec, BrillouinGrid(3, 3), 2)


# ---- gaps ----------------------------------------------------------------------


def test_single_band_example():
    assert interval_gaps([(0.0, 1.0)], 0.0, 2.0) == [(1.0, 2.0)]


def test_merge_tolerance_suppresses_slivers():
    iv = [(0.0, 1.0), (1.0 + 1e-9, 2.0), (3.0, 4.0)]
    assert interval_gaps(iv, 0.0, 5.0, eta=1e-6) == [(2.0, 3.0), (4.0, 5.0)]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 20)), min_size=1, max_size=8),
       st.floats(1, 120))
def test_gaps_and_bands_partition_window(raw, ceiling):
    iv = [(a, a + w) for a, w in raw]
    lower = min(a for a, _ in iv)
    gaps = interval_gaps(iv, lower, ceiling, eta=0.0)
    for a, b in gaps:
        assert a < b
        for lo, hi in iv:
            assert hi <= a or lo >= b  # disjoint from every band
    # every point of the window is in a band or a gap
    probe = np.linspace(lower, ceiling, 97)
    for x in probe:
        in_band = any(lo <= x <= hi for lo, hi in iv)
        in_gap = any(a <= x <= b for a, b in gaps)
        assert in_band or in_gap or x < lower


def test_ceiling_clipped_to_trusted_window(frame32):
    b = band_structure(OperatorSpec(Family.DIVERGENCE, frame32, 1e4), BrillouinGrid(2, 3), 2)
    rep = gap_report(b, 1e4)
    assert rep["ceiling_clipped"]
    assert rep["ceiling"] == pytest.approx(b.trusted_ceiling)
    assert all(g[1] <= b.trusted_ceiling for g in rep["gaps"])
    unclipped = detect_gaps(b, 1e4, clip=False)
    assert unclipped[-1][1] == 1e4


# ---- integrated density of states -------------------------------------------------


def test_ids_basic_properties(contrast_bands):
    E = np.linspace(-5, 150, 400)
    sd = ids(contrast_bands, E)
    assert np.all(sd.values[E < 0] == 0)
    assert np.all(np.diff(sd.values) >= 0)
    assert sd.normalization == "eigenvalues per unit cell"
    assert not sd.reliable[-1] or E[-1] <= contrast_bands.trusted_ceiling


def test_ids_flat_across_gap(contrast_bands):
    a, b = detect_gaps(contrast_bands, 80.0)[0]
    F = ids(contrast_bands, [a + 1e-9 * a, 0.5 * (a + b), b - 1e-9 * b]).values
    assert F[0] == F[1] == F[2]


def test_ids_refinement_stability(frame32):
    spec = OperatorSpec(Family.DIVERGENCE, frame32, 100.0)
    coarse = band_structure(spec, BrillouinGrid(2, 5), 6)
    fine = band_structure(spec, BrillouinGrid(2, 9), 6)
    E = np.linspace(0, min(coarse.trusted_ceiling, fine.trusted_ceiling), 300)
    diff = np.abs(ids(coarse, E).values - ids(fine, E).values)
    assert diff.max() <= 1.0


# ---- bracketing -------------------------------------------------------------------


def test_free_bracketing_closed_forms():
    n = 16
    med = build_medium(PeriodCell(2, n), Frame(0.125))
    br = bracketing(OperatorSpec(Family.DIVERGENCE, med, 0.0), 6)
    j = np.arange(n)
    neu_1d = 4 * n**2 * np.sin(np.pi * j / (2 * n)) ** 2
    dir_1d = neu_1d[1:]
    neu = np.sort((neu_1d[:, None] + neu_1d[None, :]).ravel())[:6]
    dirichlet = np.sort((dir_1d[:, None] + dir_1d[None, :]).ravel())[:6]
    assert_allclose(br.neumann, neu, rtol=1e-9, atol=1e-9)
    assert_allclose(br.dirichlet, dirichlet, rtol=1e-9)
    assert br.neumann[0] == pytest.approx(0.0, abs=1e-9)
    assert_allclose(neu[1], np.pi**2, rtol=0.01)  # continuum pattern pi^2 (i^2 + j^2)


@pytest.mark.parametrize("family, lam", [(Family.DIVERGENCE, 1e3), (Family.SCHRODINGER, 1e3),
                                         (Family.BELTRAMI, 5.0), (Family.DIVERGENCE_DECREASING, 10.0),
                                         (Family.PAULI_MINUS, 1.0)])
def test_bracketing_encloses_bands(frame32, family, lam):
    spec = OperatorSpec(family, frame32, lam)
    b = band_structure(spec, BrillouinGrid(2, 5), 5)
    br = bracketing(spec, 5)
    assert br.encloses(b)
    if family in (Family.DIVERGENCE, Family.BELTRAMI, Family.DIVERGENCE_DECREASING):
        assert abs(br.neumann[0]) < 1e-9


# ---- serialization -----------------------------------------------------------------


def test_bands_csv_layout(tmp_path, free_bands):
    path = tmp_path / "bands.csv"
    write_bands_csv(path, [free_bands])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["lambda", "band_k", "theta_index", "theta_1", "theta_2", "E"]
    assert len(rows) - 1 == 8 * 81
    E = float(rows[1][-1])
    assert E == free_bands.energies[0, 0]  # 17 significant digits round-trip


def test_ids_csv_and_gap_report(tmp_path, contrast_bands):
    path = tmp_path / "ids.csv"
    write_ids_csv(path, [contrast_bands], np.linspace(0, 100, 11))
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 11
    assert [float(r["F"]) for r in rows] == sorted(float(r["F"]) for r in rows)
    rep = json.loads(json.dumps(gap_report(contrast_bands, 80.0)))
    assert set(rep) >= {"lambda", "gaps", "bands"}
    assert len(rep["bands"]) == 6
