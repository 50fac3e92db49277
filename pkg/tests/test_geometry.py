from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from hicontrast.geometry import (CenteredBox, CenteredDisk, Frame, GeometryError, PeriodCell, ThinWalls,
                                 build_medium, check_gap_hypotheses, connected_components, make_shape)

SHAPES = [Frame(0.125), CenteredBox(0.3), CenteredDisk(0.3), ThinWalls(0.0625)]


def test_period_cell_counts():
    cell = PeriodCell(3, 5)
    assert cell.size == 125
    assert cell.nodes.shape == (125, 3)
    assert_allclose(cell.h, 0.2)
    with pytest.raises(GeometryError):
        PeriodCell(2, 1)
    with pytest.raises(GeometryError):
        PeriodCell(4, 8)


def test_neighbor_wraps_only_at_last_index():
    cell = PeriodCell(2, 4)
    q, wraps = cell.neighbor(0)
    flat = np.arange(cell.size).reshape(cell.shape)
    assert q[flat[3, 1]] == flat[0, 1] and wraps[flat[3, 1]]
    assert q[flat[1, 2]] == flat[2, 2] and not wraps[flat[1, 2]]
    assert wraps.sum() == 4


def test_frame_indicator_matches_distance_to_cell_boundary():
    med = build_medium(PeriodCell(2, 8), Frame(0.125))
    x = med.cell.nodes
    dist_to_boundary = np.min(np.minimum(x, 1 - x), axis=1)
    assert np.all(med.node_chi[dist_to_boundary < 0.125] == 1)
    assert np.all(med.node_chi[dist_to_boundary >= 0.125] == 0)  # distance 0 to M counts as M


def test_disk_center():
    med = build_medium(PeriodCell(2, 16), CenteredDisk(0.3))
    i = np.ravel_multi_index((8, 8), med.cell.shape)
    assert med.node_chi[i] == 0
    assert_allclose(med.node_distance[i], -0.3)


@pytest.mark.parametrize("shape, word", [(CenteredDisk(0.6), "radius"), (CenteredBox(0.5), "half-width"),
                                         (Frame(0.0), "half-width"), (ThinWalls(0.7), "half-width")])
def test_inadmissible_shapes_rejected(shape, word):
    with pytest.raises(GeometryError, match=word):
        build_medium(PeriodCell(2, 16), shape)


def test_make_shape_unknown_kind():
    with pytest.raises(GeometryError, match="unknown shape"):
        make_shape("hexagon", 0.2)


def test_indicator_partition_and_edge_sampling():
    med = build_medium(PeriodCell(2, 16), CenteredDisk(0.3))
    assert np.all(med.in_omega ^ med.in_m)
    for axis, chi in enumerate(med.edge_chi):
        mids = med.cell.edge_midpoints(axis)
        assert_allclose(chi, med.chi_omega(mids))


def test_components_examples():
    frame = build_medium(PeriodCell(2, 32), Frame(0.125))
    assert connected_components(frame, "omega_periodic").count == 1
    assert connected_components(frame, "inclusion").count == 1
    walls = build_medium(PeriodCell(2, 32), ThinWalls(0.0625))
    comp = connected_components(walls, "omega")
    assert comp.count == 1
    assert not any(comp.touches_boundary)


def test_gap_hypotheses():
    frame = check_gap_hypotheses(build_medium(PeriodCell(2, 32), Frame(0.125)))
    assert frame.omega_connected and frame.omega_contains_cell_boundary and frame.inclusion_compact
    assert frame.holds
    walls = check_gap_hypotheses(build_medium(PeriodCell(2, 32), ThinWalls(0.0625)))
    assert not walls.omega_connected
    assert not walls.holds


def test_hypotheses_in_three_dimensions():
    ball = check_gap_hypotheses(build_medium(PeriodCell(3, 12), CenteredDisk(0.3)))
    assert ball.holds


@pytest.mark.parametrize("shape", SHAPES, ids=lambda s: type(s).__name__)
def test_rasterization_converges(shape):
    # nearest-node prolongation of the coarse indicator misses only an O(h) band
    scaled = []
    for n in (16, 32, 64):
        coarse = build_medium(PeriodCell(2, n), shape).node_chi.reshape(n, n)
        fine = build_medium(PeriodCell(2, 2 * n), shape).node_chi.reshape(2 * n, 2 * n)
        idx = (np.arange(2 * n) + 1) // 2 % n
        prolonged = coarse[np.ix_(idx, idx)]
        scaled.append(np.mean(prolonged != fine) * n)
    assert max(scaled) < 8.0
    assert scaled[-1] <= 1.5 * scaled[0]


@settings(max_examples=40, deadline=None)
@given(shape=st.sampled_from(SHAPES), m=st.sampled_from([2, 3]),
       pts=st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=20))
def test_signed_distance_is_one_lipschitz(shape, m, pts):
    x = np.array(pts)[:, :m]
    med = build_medium(PeriodCell(m, 8), shape)
    d = med.signed_distance(x)
    diff = x[:, None, :] - x[None, :, :]
    diff -= np.floor(diff + 0.5)  # nearest-image metric
    dist = np.linalg.norm(diff, axis=-1)
    assert np.all(np.abs(d[:, None] - d[None, :]) <= dist + 1e-12)


@settings(max_examples=30, deadline=None)
@given(shape=st.sampled_from(SHAPES), shift=st.tuples(st.integers(-3, 3), st.integers(-3, 3)),
       x=st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_signed_distance_is_periodic(shape, shift, x):
    med = build_medium(PeriodCell(2, 8), shape)
    p = np.array([x])
    assert_allclose(med.signed_distance(p + np.array(shift)), med.signed_distance(p), atol=1e-12)
