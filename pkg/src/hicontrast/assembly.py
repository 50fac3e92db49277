"""Finite-volume fiber matrices for the high-contrast operator families.

For a quasimomentum ``theta`` every grid edge ``e = (p, q)`` with midpoint
``x_e`` contributes ``c(x_e) h^(m-2) |u_p - phi_e u_q|^2`` to the quadratic
form.  The Bloch phase ``phi_e = exp(i theta . gamma)`` only appears on edges
that wrap across the cell boundary by the lattice vector ``gamma``; magnetic
families multiply in the Peierls factor ``exp(-i lam ∫_e a.dl)``.  Masses are
lumped on the diagonal.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .geometry import CenteredBox, CenteredDisk, Frame, PeriodicMedium, ThinWalls, _wrap


class AssemblyError(ValueError):
    pass


class Family(str, enum.Enum):
    SCHRODINGER = "schrodinger"
    DIVERGENCE = "divergence"
    DIVERGENCE_DECREASING = "divergence_decreasing"
    BELTRAMI = "beltrami"
    MAGNETIC = "magnetic"
    PAULI_PLUS = "pauli_plus"
    PAULI_MINUS = "pauli_minus"

    @property
    def magnetic(self) -> bool:
        return self in (Family.MAGNETIC, Family.PAULI_PLUS, Family.PAULI_MINUS)

    @property
    def monotone_increasing(self) -> bool:
        return self in (Family.SCHRODINGER, Family.DIVERGENCE)

    @property
    def constant_kernel(self) -> bool:
        """Whether constants are a zero mode of the ``theta = 0`` fiber."""
        return self in (Family.DIVERGENCE, Family.DIVERGENCE_DECREASING, Family.BELTRAMI)


Coefficient = Union[float, tuple]


@dataclass(frozen=True)
class OperatorSpec:
    """One member of an operator family at contrast ``lam``.

    ``coeff_a`` and ``coeff_b`` are the background and high-contrast
    coefficients of the divergence family, either scalars or symmetric
    ``m x m`` matrices (nested tuples); ``b`` is switched off on ``M``.
    ``potential_width`` smooths the indicator of ``Omega`` into the
    Schrödinger barrier; ``beta`` and ``gauge_margin`` shape the magnetic
    stream function.
    """

    family: Family
    medium: PeriodicMedium
    lam: float
    potential_width: float = 0.0
    coeff_a: Coefficient = 1.0
    coeff_b: Coefficient = 1.0
    beta: float = 1.0
    gauge_margin: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        m = self.medium.m
        if not np.isfinite(self.lam) or self.lam < 0:
            raise AssemblyError(f"contrast lam must be finite and >= 0, got {self.lam}")
        if self.family.magnetic and m != 2:
            raise AssemblyError(f"{self.family.value} operators require m = 2, got m={m}")
        if self.family is Family.BELTRAMI:
            if m == 1:
                raise AssemblyError("the Laplace-Beltrami family requires m >= 2")
            if self.lam < 1:
                raise AssemblyError(f"conformal profile is undefined for lam < 1, got {self.lam}")
        if self.potential_width < 0:
            raise AssemblyError("potential_width must be >= 0")
        for name in ("coeff_a", "coeff_b"):
            mat = _coefficient_matrix(getattr(self, name), m)
            if mat.shape != (m, m) or not np.allclose(mat, mat.T):
                raise AssemblyError(f"{name} must be a scalar or a symmetric {m}x{m} matrix")
            if np.linalg.eigvalsh(mat).min() <= 0:
                raise AssemblyError(f"{name} must be positive definite")

    def with_lambda(self, lam: float) -> "OperatorSpec":
        return replace(self, lam=float(lam))


def _coefficient_matrix(c: Coefficient, m: int) -> np.ndarray:
    arr = np.asarray(c, dtype=float)
    return arr * np.eye(m) if arr.ndim == 0 else arr


@dataclass
class AssembledFiber:
    theta: Optional[np.ndarray]
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    nodes: np.ndarray  # flat grid index of each unknown
    lower_bound: float = 0.0  # lower bound of the pencil spectrum

    @property
    def dim(self) -> int:
        return self.stiffness.shape[0]


# --------------------------------------------------------------------------
# coefficient profiles


def conformal_factor(medium: PeriodicMedium, lam: float, x: np.ndarray) -> np.ndarray:
    """Conformal weight: 1 on ``M``, ``1/lam`` once ``dist(x, M) >= lam**-m``.

    The transition is the cubic smoothstep in ``t = dist * lam**m``, which
    matches value and slope at both ends.
    """
    if lam < 1:
        raise AssemblyError(f"conformal profile is undefined for lam < 1, got {lam}")
    d = medium.signed_distance(x)
    t = np.clip(d * lam**medium.m, 0.0, 1.0)
    s = t * t * (3.0 - 2.0 * t)
    return 1.0 + (1.0 / lam - 1.0) * s


def barrier_potential(medium: PeriodicMedium, width: float, x: np.ndarray) -> np.ndarray:
    """Smoothed indicator of ``Omega``; vanishes exactly on ``M``."""
    d = medium.signed_distance(x)
    if width <= 0:
        return (d > 0).astype(float)
    t = np.clip(d / width, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _cell_average(func, medium: PeriodicMedium, q: int = 4) -> np.ndarray:
    # midpoint rule over the control volume [x_p - h/2, x_p + h/2]^m
    h = medium.h
    offs = ((np.arange(q) + 0.5) / q - 0.5) * h
    grids = np.meshgrid(*([offs] * medium.m), indexing="ij")
    shifts = np.stack([g.ravel() for g in grids], axis=1)
    nodes = medium.cell.nodes
    total = np.zeros(len(nodes))
    for s in shifts:
        total += func(nodes + s)
    return total / len(shifts)


# --------------------------------------------------------------------------
# magnetic gauge


def _bump(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``cos^4(pi u / 2)`` on ``|u| < 1`` and its derivative; C^3 at ``|u| = 1``."""
    inside = np.abs(u) < 1.0
    c = np.cos(0.5 * np.pi * u)
    s = np.sin(0.5 * np.pi * u)
    val = np.where(inside, c**4, 0.0)
    der = np.where(inside, -2.0 * np.pi * c**3 * s, 0.0)
    return val, der


@dataclass(frozen=True)
class Gauge:
    """Vector potential as edge line integrals plus the nodal field.

    ``line[a][p]`` is ``∫ a.dl`` along the forward edge from node ``p`` in
    direction ``a``; ``field[p]`` is the circulation around the dual cell
    centered at ``p`` divided by its area.
    """

    line: tuple[np.ndarray, ...]
    field: np.ndarray
    psi: np.ndarray
    margin: float
    support_width: float


def _stream_function(medium: PeriodicMedium, beta: float, margin: Optional[float]):
    shape = medium.shape
    h = medium.h
    if isinstance(shape, (Frame, CenteredBox)):
        inner = 0.5 - shape.w if isinstance(shape, Frame) else shape.s
        avail = 0.5 - inner
        delta = avail / 4 if margin is None else margin
        ell = avail - delta

        def psi(x):
            t = _wrap(x)
            c0, d0 = _bump(t[:, 0] / ell)
            c1, d1 = _bump(t[:, 1] / ell)
            amp = beta * ell**2
            return (amp * (c0 + c1 - c0 * c1),
                    amp * d0 / ell * (1 - c1),
                    amp * d1 / ell * (1 - c0))

    elif isinstance(shape, ThinWalls):
        avail = 0.5 - shape.w
        delta = avail / 4 if margin is None else margin
        ell = avail - delta

        def psi(x):
            p = _wrap(x - 0.5)
            b0, d0 = _bump(p[:, 0] / ell)
            b1, d1 = _bump(p[:, 1] / ell)
            amp = beta * ell**2
            return amp * b0 * b1, amp * d0 / ell * b1, amp * d1 / ell * b0

    elif isinstance(shape, CenteredDisk):
        avail = 0.5 - shape.r
        delta = avail / 4 if margin is None else margin
        ell = avail - 2 * delta

        def psi(x):
            p = _wrap(x - 0.5)
            rho = np.linalg.norm(p, axis=1)
            u = np.minimum((rho - shape.r - delta) / ell, 1.0)
            k, dk = _bump(1.0 - u)
            dk = np.where(u < 1.0, -dk / ell, 0.0)
            amp = beta * ell**2
            safe = np.where(rho > 0, rho, 1.0)
            return amp * k, amp * dk * p[:, 0] / safe, amp * dk * p[:, 1] / safe

    else:  # pragma: no cover - exhaustive over ShapeSpec
        raise AssemblyError(f"no gauge for shape {shape!r}")

    if delta < 0.5 * h or ell < h:
        raise AssemblyError(
            f"gauge support cannot be resolved at n={medium.n}: need margin >= h/2 and "
            f"support width >= h (margin={delta:.4g}, width={ell:.4g}, h={h:.4g})")
    return psi, delta, ell


@lru_cache(maxsize=32)
def build_gauge(medium: PeriodicMedium, beta: float, margin: Optional[float] = None) -> Gauge:
    """Periodic gauge ``a = (-d2 psi, d1 psi)`` vanishing near ``M``.

    ``psi`` is supported where ``dist(x, M) > margin`` with ``margin >= h/2``,
    so every edge midpoint adjacent to a node of ``M`` sees ``a = 0`` and the
    discrete field vanishes on all nodes of ``M``.  The per-cell flux sums to
    zero because the dual-cell circulations telescope.
    """
    if medium.m != 2:
        raise AssemblyError(f"gauge construction requires m = 2, got m={medium.m}")
    cell = medium.cell
    h = medium.h
    psi, delta, ell = _stream_function(medium, float(beta), margin)

    def potential(x):
        _, d0, d1 = psi(x)
        return -d1, d0  # (a_0, a_1)

    mid0 = cell.edge_midpoints(0)
    mid1 = cell.edge_midpoints(1)
    a0_on0, a1_on0 = potential(mid0)
    a0_on1, a1_on1 = potential(mid1)
    line = (h * a0_on0, h * a1_on1)

    shape = cell.shape
    a1_x = a1_on0.reshape(shape)
    a0_y = a0_on1.reshape(shape)
    field = ((a1_x - np.roll(a1_x, 1, axis=0)) - (a0_y - np.roll(a0_y, 1, axis=1))) / h
    return Gauge(line=line, field=field.ravel(), psi=psi(cell.nodes)[0], margin=delta, support_width=ell)


# --------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class _Edges:
    p: np.ndarray
    q: np.ndarray
    wraps: np.ndarray


@lru_cache(maxsize=16)
def _edges(cell) -> tuple[_Edges, ...]:
    out = []
    for a in range(cell.m):
        q, wraps = cell.neighbor(a)
        out.append(_Edges(np.arange(cell.size), q, wraps))
    return tuple(out)


def _edge_weights(spec: OperatorSpec) -> list[np.ndarray]:
    medium = spec.medium
    cell = medium.cell
    m, lam = medium.m, spec.lam
    scale = medium.h ** (m - 2)
    fam = spec.family
    weights = []
    for a in range(m):
        if fam is Family.DIVERGENCE:
            ca = _coefficient_matrix(spec.coeff_a, m)[a, a]
            cb = _coefficient_matrix(spec.coeff_b, m)[a, a]
            w = ca + lam * cb * medium.edge_chi[a]
        elif fam is Family.DIVERGENCE_DECREASING:
            w = 1.0 / (1.0 + lam * (1.0 - medium.edge_chi[a]))
        elif fam is Family.BELTRAMI:
            w = conformal_factor(medium, lam, cell.edge_midpoints(a)) ** (m - 2)
        else:
            w = np.ones(cell.size)
        weights.append(scale * w)
    return weights


def _diagonals(spec: OperatorSpec) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order stiffness term and lumped mass, both per node."""
    medium = spec.medium
    vol = medium.h**medium.m
    fam = spec.family
    mass = np.full(medium.cell.size, vol)
    potential = np.zeros(medium.cell.size)
    if fam is Family.SCHRODINGER and spec.lam > 0:
        vbar = _cell_average(lambda x: barrier_potential(medium, spec.potential_width, x), medium)
        potential = spec.lam * vbar * vol
    elif fam in (Family.PAULI_PLUS, Family.PAULI_MINUS):
        # H_pm = H(lam a) -/+ (field of lam a)
        sign = -1.0 if fam is Family.PAULI_PLUS else 1.0
        gauge = build_gauge(medium, spec.beta, spec.gauge_margin)
        potential = sign * spec.lam * gauge.field * vol
    elif fam is Family.BELTRAMI:
        mass = conformal_factor(medium, spec.lam, medium.cell.nodes) ** medium.m * vol
    return potential, mass


def _normalize_theta(theta, m: int) -> np.ndarray:
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if th.shape != (m,):
        raise AssemblyError(f"quasimomentum must have {m} components, got shape {th.shape}")
    if np.any(th <= -np.pi - 1e-12) or np.any(th > np.pi + 1e-12):
        raise AssemblyError(f"quasimomentum components must lie in (-pi, pi], got {th}")
    return th


def _graph_matrix(cell, weights, phases, potential) -> sp.csr_matrix:
    """Sum of ``w |u_p - phi u_q|^2`` over edges plus a diagonal term."""
    size = cell.size
    rows, cols, vals = [], [], []
    diag = potential.astype(complex)
    for edges, w, phase in zip(_edges(cell), weights, phases):
        np.add.at(diag, edges.p, w)
        np.add.at(diag, edges.q, w)
        rows += [edges.p, edges.q]
        cols += [edges.q, edges.p]
        vals += [-w * phase, -w * np.conj(phase)]
    rows.append(np.arange(size))
    cols.append(np.arange(size))
    vals.append(diag)
    data = np.concatenate(vals)
    if np.all(data.imag == 0):
        data = data.real
    A = sp.coo_matrix((data, (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def _unit_phase(t: float) -> complex:
    # exact -1 at theta = pi keeps those fibers real
    c, s = np.cos(t), np.sin(t)
    return complex(c if abs(c) > 1e-15 else 0.0, s if abs(s) > 1e-15 else 0.0)


def _bloch_phases(cell, theta: np.ndarray) -> list[np.ndarray]:
    return [np.where(e.wraps, _unit_phase(theta[a]), 1.0 + 0j) for a, e in enumerate(_edges(cell))]


def _assemble_full(spec: OperatorSpec, theta: np.ndarray, drop_wraps: bool = False):
    medium = spec.medium
    cell = medium.cell
    weights = _edge_weights(spec)
    if drop_wraps:
        weights = [np.where(e.wraps, 0.0, w) for e, w in zip(_edges(cell), weights)]
    phases = _bloch_phases(cell, theta)
    if spec.family.magnetic:
        gauge = build_gauge(medium, spec.beta, spec.gauge_margin)
        phases = [ph * np.exp(-1j * spec.lam * line) for ph, line in zip(phases, gauge.line)]
    potential, mass = _diagonals(spec)
    A = _graph_matrix(cell, weights, phases, potential)
    B = sp.diags(mass).tocsr()
    lower = min(0.0, float(np.min(potential / mass)))
    return A, B, lower


def assemble_fiber(spec: OperatorSpec, theta) -> AssembledFiber:
    """Stiffness and mass of the ``theta``-periodic fiber problem on ``Q``."""
    th = _normalize_theta(theta, spec.medium.m)
    A, B, lower = _assemble_full(spec, th)
    return AssembledFiber(th, A, B, np.arange(spec.medium.cell.size), lower)


def _restrict(A, B, keep: np.ndarray):
    idx = np.flatnonzero(keep)
    return A[idx][:, idx].tocsr(), B[idx][:, idx].tocsr(), idx


def assemble_bracketing(spec: OperatorSpec, bc: str) -> AssembledFiber:
    """Cell problem with the Bloch conditions replaced by Neumann or Dirichlet ones.

    Neumann drops every edge that wraps across ``∂Q`` (a relaxation of every
    fiber form); Dirichlet pins the nodes on ``∂Q`` to zero (a restriction of
    every fiber form).
    """
    m = spec.medium.m
    zero = np.zeros(m)
    if bc == "neumann":
        A, B, lower = _assemble_full(spec, zero, drop_wraps=True)
        return AssembledFiber(None, A, B, np.arange(spec.medium.cell.size), lower)
    if bc == "dirichlet":
        A, B, lower = _assemble_full(spec, zero)
        A, B, idx = _restrict(A, B, ~spec.medium.cell.on_cell_boundary)
        return AssembledFiber(None, A, B, idx, lower)
    raise AssemblyError(f"unknown boundary condition {bc!r}; expected 'neumann' or 'dirichlet'")


def assemble_reference(medium: PeriodicMedium, region: str, bc: str, theta=None) -> AssembledFiber:
    """Plain Laplacian on ``M0`` (``region="inclusion"``) or ``Omega ∩ Q`` (``"omega"``).

    Dirichlet keeps only nodes strictly inside the region and pins all
    others to zero.  Neumann keeps edges with both endpoints in the region;
    edges across ``∂Q`` are dropped unless ``theta`` is given, in which case
    they are kept with their Bloch phase (periodic identification).
    """
    if region == "inclusion":
        inside, strict = medium.in_m, medium.m_interior
    elif region == "omega":
        inside = strict = medium.in_omega
    else:
        raise AssemblyError(f"unknown region {region!r}; expected 'inclusion' or 'omega'")
    m = medium.m
    th = np.zeros(m) if theta is None else _normalize_theta(theta, m)
    lap = OperatorSpec(Family.DIVERGENCE, medium, 0.0)
    if bc == "dirichlet":
        keep = strict
        if not keep.any():
            raise AssemblyError(f"region {region!r} has no interior nodes at n={medium.n}")
        A, B, _ = _assemble_full(lap, th)
        A, B, idx = _restrict(A, B, keep)
        return AssembledFiber(theta if theta is None else th, A, B, idx)
    if bc == "neumann":
        if not inside.any():
            raise AssemblyError(f"region {region!r} is empty at n={medium.n}")
        A, B = _neumann_region(medium, inside, th, identify=theta is not None)
        A, B, idx = _restrict(A, B, inside)
        return AssembledFiber(theta if theta is None else th, A, B, idx)
    raise AssemblyError(f"unknown boundary condition {bc!r}; expected 'neumann' or 'dirichlet'")


def _neumann_region(medium: PeriodicMedium, inside: np.ndarray, theta: np.ndarray, identify: bool):
    cell = medium.cell
    scale = medium.h ** (medium.m - 2)
    weights = []
    for e in _edges(cell):
        keep = inside[e.p] & inside[e.q]
        if not identify:
            keep &= ~e.wraps
        weights.append(scale * keep)
    A = _graph_matrix(cell, weights, _bloch_phases(cell, theta), np.zeros(cell.size))
    B = sp.diags(np.full(cell.size, medium.h**medium.m)).tocsr()
    return A, B


def dump_coo(matrix, path) -> None:
    """Write ``row col re im`` lines for every stored entry."""
    coo = sp.coo_matrix(matrix)
    data = coo.data.astype(complex)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, data):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
