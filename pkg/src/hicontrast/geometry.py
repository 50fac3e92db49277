"""Periodic two-phase media on the unit lattice.

The period cell ``Q = (0, 1]^m`` is sampled on a uniform node grid with
spacing ``h = 1/n``; node index ``n`` on every axis is identified with
index ``0``.  A medium splits space into an open periodic set ``Omega``
(the high-contrast phase) and its closed complement ``M``; the per-cell
inclusion is ``M0 = M ∩ Q``.

All shapes are analytic, so the signed distance to ``M`` is exact:
positive inside ``Omega``, zero on the boundary of ``M``, negative in the
interior of ``M``.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from scipy import ndimage


class GeometryError(ValueError):
    """Raised for inadmissible cells or shape parameters."""


@dataclass(frozen=True)
class PeriodCell:
    m: int
    n: int

    def __post_init__(self):
        if self.m not in (1, 2, 3):
            raise GeometryError(f"dimension m must be 1, 2 or 3, got {self.m}")
        if self.n < 2:
            raise GeometryError(f"resolution n must be >= 2, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.m

    @property
    def size(self) -> int:
        return self.n**self.m

    @cached_property
    def node_index(self) -> np.ndarray:
        """Integer grid indices, shape ``(size, m)``, C order."""
        idx = np.indices(self.shape).reshape(self.m, -1).T
        return np.ascontiguousarray(idx)

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.node_index * self.h

    @cached_property
    def on_cell_boundary(self) -> np.ndarray:
        """Nodes lying on ``∂Q`` (some index equal to 0)."""
        return np.any(self.node_index == 0, axis=1)

    def neighbor(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Forward neighbor of every node along ``axis`` and the wrap mask.

        Returns ``(q, wraps)`` where ``q[p]`` is the flat index of the node
        ``p + e_axis`` reduced into the cell and ``wraps[p]`` marks edges
        that cross ``∂Q`` (lattice shift ``+e_axis``).
        """
        idx = self.node_index.copy()
        wraps = idx[:, axis] == self.n - 1
        idx[:, axis] = (idx[:, axis] + 1) % self.n
        q = np.ravel_multi_index(tuple(idx.T), self.shape)
        return q, wraps

    def edge_midpoints(self, axis: int) -> np.ndarray:
        mid = self.nodes.copy()
        mid[:, axis] += 0.5 * self.h
        return mid


def _wrap(x: np.ndarray) -> np.ndarray:
    """Nearest-image reduction into ``[-0.5, 0.5)``."""
    return x - np.floor(x + 0.5)


def _box_sdf(p: np.ndarray, s: float) -> np.ndarray:
    # exact signed distance to the closed box [-s, s]^m
    q = np.abs(p) - s
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


@dataclass(frozen=True)
class Frame:
    """Connected frame ``Omega`` of half-width ``w`` around ``∂Q``; ``M0`` is a centered box."""

    w: float

    def validate(self, m: int) -> None:
        if not 0.0 < self.w < 0.5:
            raise GeometryError(f"frame wall half-width must lie in (0, 0.5), got w={self.w}")

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return _box_sdf(_wrap(x - 0.5), 0.5 - self.w)


@dataclass(frozen=True)
class CenteredBox:
    """Box inclusion ``M0 = [0.5 - s, 0.5 + s]^m``."""

    s: float

    def validate(self, m: int) -> None:
        if not 0.0 < self.s < 0.5:
            raise GeometryError(
                f"box half-width must lie in (0, 0.5) so the inclusion fits inside the cell, got s={self.s}")

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return _box_sdf(_wrap(x - 0.5), self.s)


@dataclass(frozen=True)
class CenteredDisk:
    """Disk (ball for m = 3) inclusion of radius ``r`` at the cell center."""

    r: float

    def validate(self, m: int) -> None:
        if not 0.0 < self.r < 0.5:
            raise GeometryError(
                f"disk radius must lie in (0, 0.5) so the inclusion fits inside the cell, got r={self.r}")

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(_wrap(x - 0.5), axis=-1) - self.r


@dataclass(frozen=True)
class ThinWalls:
    """Connected walls ``M`` of half-width ``w`` along ``∂Q``; ``Omega ∩ Q`` is an open box."""

    w: float

    def validate(self, m: int) -> None:
        if not 0.0 < self.w < 0.5:
            raise GeometryError(f"wall half-width must lie in (0, 0.5), got w={self.w}")

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return -_box_sdf(_wrap(x - 0.5), 0.5 - self.w)


ShapeSpec = Union[Frame, CenteredBox, CenteredDisk, ThinWalls]

SHAPES = {
    "frame": (Frame, "width"),
    "box": (CenteredBox, "half_width"),
    "disk": (CenteredDisk, "radius"),
    "thin_walls": (ThinWalls, "width"),
}


@dataclass(frozen=True)
class PeriodicMedium:
    cell: PeriodCell
    shape: ShapeSpec

    @property
    def m(self) -> int:
        return self.cell.m

    @property
    def n(self) -> int:
        return self.cell.n

    @property
    def h(self) -> float:
        return self.cell.h

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.shape.signed_distance(np.atleast_2d(x)) if x.ndim == 1 else self.shape.signed_distance(x)

    def chi_omega(self, x: np.ndarray) -> np.ndarray:
        # boundary points (distance exactly 0) belong to the closed set M
        return (self.signed_distance(x) > 0.0).astype(float)

    @cached_property
    def node_distance(self) -> np.ndarray:
        return self.shape.signed_distance(self.cell.nodes)

    @cached_property
    def node_chi(self) -> np.ndarray:
        return (self.node_distance > 0.0).astype(float)

    @cached_property
    def edge_chi(self) -> tuple[np.ndarray, ...]:
        """Indicator of ``Omega`` at the forward edge midpoints, one array per axis."""
        return tuple(self.chi_omega(self.cell.edge_midpoints(a)) for a in range(self.m))

    @property
    def in_omega(self) -> np.ndarray:
        return self.node_distance > 0.0

    @property
    def in_m(self) -> np.ndarray:
        return ~self.in_omega

    @property
    def m_interior(self) -> np.ndarray:
        return self.node_distance < 0.0

    def volume_fraction(self) -> float:
        return float(self.node_chi.mean())


def build_medium(cell: PeriodCell, shape: ShapeSpec) -> PeriodicMedium:
    shape.validate(cell.m)
    return PeriodicMedium(cell, shape)


def make_shape(kind: str, value: float) -> ShapeSpec:
    try:
        cls, _ = SHAPES[kind]
    except KeyError:
        raise GeometryError(f"unknown shape {kind!r}; expected one of {sorted(SHAPES)}") from None
    return cls(float(value))


# --------------------------------------------------------------------------
# connectivity

REGIONS = ("omega_periodic", "omega", "inclusion")


@dataclass(frozen=True)
class Components:
    labels: np.ndarray  # flat, -1 outside the region
    count: int
    touches_boundary: tuple[bool, ...]


def _region_mask(medium: PeriodicMedium, region: str) -> np.ndarray:
    if region in ("omega_periodic", "omega"):
        return medium.in_omega
    if region == "inclusion":
        return medium.in_m
    raise GeometryError(f"unknown region {region!r}; expected one of {REGIONS}")


def connected_components(medium: PeriodicMedium, region: str) -> Components:
    """Face-adjacency components of a node region.

    ``"omega_periodic"`` glues opposite faces of the cell; ``"omega"`` and
    ``"inclusion"`` (the set ``M0``) are labelled inside ``Q`` only.
    """
    cell = medium.cell
    mask = _region_mask(medium, region)
    grid = mask.reshape(cell.shape)
    structure = ndimage.generate_binary_structure(cell.m, 1)
    lab, count = ndimage.label(grid, structure=structure)
    lab = lab.ravel() - 1

    if region == "omega_periodic" and count > 0:
        parent = list(range(count))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for axis in range(cell.m):
            q, wraps = cell.neighbor(axis)
            p = np.flatnonzero(wraps)
            both = mask[p] & mask[q[p]]
            for a, b in zip(lab[p[both]], lab[q[p[both]]]):
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        roots = np.array([find(i) for i in range(count)])
        _, relabel = np.unique(roots, return_inverse=True)
        lab = np.where(lab >= 0, relabel[np.maximum(lab, 0)], -1)
        count = int(relabel.max()) + 1

    boundary = cell.on_cell_boundary | np.any(cell.node_index == cell.n - 1, axis=1)
    touches = tuple(bool(np.any(boundary & (lab == c))) for c in range(count))
    return Components(labels=lab, count=count, touches_boundary=touches)


def _generates_full_lattice(vectors: set[tuple[int, ...]], m: int) -> bool:
    if len(vectors) < m:
        return False
    vecs = np.array(sorted(vectors), dtype=np.int64)
    g = 0
    for rows in itertools.combinations(range(len(vecs)), m):
        det = int(round(np.linalg.det(vecs[list(rows)].astype(float))))
        g = math.gcd(g, abs(det))
        if g == 1:
            return True
    return False


def omega_connected(medium: PeriodicMedium) -> bool:
    """Whether ``Omega`` is connected as a subset of ``R^m``.

    Connectivity on the torus is not enough: every torus component must
    also lift to a single component, i.e. its closed loops must wind
    through a set of lattice vectors generating ``Z^m``.
    """
    cell = medium.cell
    comps = connected_components(medium, "omega_periodic")
    if comps.count != 1:
        return False
    mask = medium.in_omega
    nbrs = [cell.neighbor(a) for a in range(cell.m)]
    offset = np.full((cell.size, cell.m), np.iinfo(np.int64).min, dtype=np.int64)
    start = int(np.flatnonzero(mask)[0])
    offset[start] = 0
    back = []
    for a in range(cell.m):
        q, wraps = nbrs[a]
        inv = np.empty_like(q)
        inv[q] = np.arange(cell.size)
        back.append((inv, wraps[inv]))
    loops: set[tuple[int, ...]] = set()
    queue = deque([start])
    unit = np.eye(cell.m, dtype=np.int64)
    while queue:
        p = queue.popleft()
        for a in range(cell.m):
            q, wraps = nbrs[a]
            inv, inv_wraps = back[a]
            for nb, shift in ((q[p], unit[a] if wraps[p] else 0 * unit[a]),
                              (inv[p], -unit[a] if inv_wraps[p] else 0 * unit[a])):
                if not mask[nb]:
                    continue
                target = offset[p] + shift
                if offset[nb, 0] == np.iinfo(np.int64).min:
                    offset[nb] = target
                    queue.append(nb)
                else:
                    loop = target - offset[nb]
                    if np.any(loop):
                        loops.add(tuple(int(v) for v in loop))
    return _generates_full_lattice(loops, cell.m)


@dataclass(frozen=True)
class HypothesisCheck:
    omega_connected: bool
    omega_contains_cell_boundary: bool
    inclusion_compact: bool

    @property
    def holds(self) -> bool:
        return self.omega_connected and self.omega_contains_cell_boundary and self.inclusion_compact


def check_gap_hypotheses(medium: PeriodicMedium) -> HypothesisCheck:
    """Topological preconditions for gap opening in the divergence-form family."""
    cell = medium.cell
    boundary = cell.on_cell_boundary
    inclusion = medium.in_m
    return HypothesisCheck(
        omega_connected=omega_connected(medium),
        omega_contains_cell_boundary=bool(np.all(medium.in_omega[boundary])),
        inclusion_compact=bool(inclusion.any() and not np.any(inclusion & boundary)),
    )
