"""Brillouin-zone sweeps: bands, gaps, integrated density of states, enclosures."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .assembly import OperatorSpec, assemble_bracketing, assemble_fiber
from .eigensolve import ConvergenceError, smallest_eigenpairs


@dataclass(frozen=True)
class BrillouinGrid:
    """Closed tensor grid ``linspace(-pi, pi, n_theta)`` per axis.

    ``n_theta`` is odd so the grid holds both ``0`` and the corner
    ``(pi, ..., pi)``.  Points at ``-pi`` and ``pi`` describe the same fiber;
    they are solved once and carry half trapezoid weight each.
    """

    m: int
    n_theta: int

    def __post_init__(self):
        if self.n_theta < 3 or self.n_theta % 2 == 0:
            raise ValueError(f"n_theta must be odd and >= 3, got {self.n_theta}")

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(-np.pi, np.pi, self.n_theta)

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.m), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    @cached_property
    def weights(self) -> np.ndarray:
        w1 = np.ones(self.n_theta)
        w1[[0, -1]] = 0.5
        w1 /= w1.sum()
        mesh = np.meshgrid(*([w1] * self.m), indexing="ij")
        return np.prod(np.stack([g.ravel() for g in mesh], axis=1), axis=1)

    @cached_property
    def fiber_index(self) -> tuple[np.ndarray, np.ndarray]:
        """``(unique, inverse)``: representative point per distinct fiber and the map back."""
        idx = np.indices((self.n_theta,) * self.m).reshape(self.m, -1).T
        canon = np.where(idx == 0, self.n_theta - 1, idx)  # -pi ~ pi
        keys = np.ravel_multi_index(tuple(canon.T), (self.n_theta,) * self.m)
        _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        return first, inverse

    @cached_property
    def zero_index(self) -> int:
        return int(np.flatnonzero(np.all(self.points == 0.0, axis=1))[0])

    @property
    def size(self) -> int:
        return self.n_theta**self.m


@dataclass
class BandStructure:
    lam: float
    family: str
    grid: BrillouinGrid
    energies: np.ndarray  # (k_max, grid.size)

    @property
    def k_max(self) -> int:
        return self.energies.shape[0]

    @property
    def trusted_ceiling(self) -> float:
        """Below this energy every eigenvalue of every fiber has been computed."""
        return float(self.energies[-1].min())

    def _columns(self, exclude_zero: bool) -> np.ndarray:
        cols = np.ones(self.grid.size, dtype=bool)
        if exclude_zero:
            cols[self.grid.zero_index] = False
        return cols

    def intervals(self, exclude_zero: bool = False) -> np.ndarray:
        """Band intervals ``[min_theta E_k, max_theta E_k]``, shape ``(k_max, 2)``."""
        E = self.energies[:, self._columns(exclude_zero)]
        return np.stack([E.min(axis=1), E.max(axis=1)], axis=1)

    def points(self, exclude_zero: bool = False) -> np.ndarray:
        return self.energies[:, self._columns(exclude_zero)].ravel()


def _solve_fiber(spec: OperatorSpec, theta, k: int, tol: float) -> np.ndarray:
    fiber = assemble_fiber(spec, theta)
    try:
        res = smallest_eigenpairs(fiber.stiffness, fiber.mass, k, tol, sigma=fiber.lower_bound - 1.0)
    except ConvergenceError as exc:
        err = ConvergenceError(f"fiber theta={np.round(theta, 6).tolist()}: {exc}", exc.eigenvalues, exc.residuals)
        err.theta = np.asarray(theta)
        raise err from None
    return res.eigenvalues


def band_structure(spec: OperatorSpec, grid: BrillouinGrid, k_max: int, tol: float = 1e-12,
                   threads: Optional[int] = None) -> BandStructure:
    """Per-fiber sorted eigenvalues over the grid; no tracking across ``theta``."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if grid.m != spec.medium.m:
        raise ValueError(f"grid dimension {grid.m} does not match medium dimension {spec.medium.m}")
    first, inverse = grid.fiber_index
    thetas = grid.points[first]

    def work(th):
        return _solve_fiber(spec, th, k_max, tol)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            unique = list(pool.map(work, thetas))
    else:
        unique = [work(th) for th in thetas]
    E = np.stack(unique, axis=1)[:, inverse]
    return BandStructure(lam=spec.lam, family=spec.family.value, grid=grid, energies=E)


# --------------------------------------------------------------------------
# gaps


def interval_gaps(intervals, lower: float, upper: float, eta: float = 0.0) -> list[tuple[float, float]]:
    """Open intervals of ``[lower, upper]`` not covered by ``intervals``, wider than ``eta``."""
    gaps = []
    cursor = lower
    for lo, hi in sorted((float(a), float(b)) for a, b in intervals):
        if lo > upper:
            break
        if lo - cursor > eta:
            gaps.append((cursor, lo))
        cursor = max(cursor, hi)
    if upper - cursor > eta:
        gaps.append((cursor, upper))
    return gaps


def effective_ceiling(bands: BandStructure, e_ceiling: float) -> tuple[float, bool]:
    trusted = bands.trusted_ceiling
    return (trusted, True) if trusted < e_ceiling else (float(e_ceiling), False)


def detect_gaps(bands: BandStructure, e_ceiling: float, eta: Optional[float] = None, *,
                clip: bool = True, exclude_zero: bool = False) -> list[tuple[float, float]]:
    """Gaps between the bottom of the spectrum and the ceiling.

    With ``clip`` the ceiling is lowered to the trusted ceiling of the band
    computation so no false gap appears above the computed window.  The
    region below the lowest band is not a gap.
    """
    eta = 1e-6 * e_ceiling if eta is None else eta
    ceiling = effective_ceiling(bands, e_ceiling)[0] if clip else e_ceiling
    iv = bands.intervals(exclude_zero)
    return interval_gaps(iv, float(iv[0, 0]), ceiling, eta)


# --------------------------------------------------------------------------
# integrated density of states


@dataclass
class SpectralDensity:
    energies: np.ndarray
    values: np.ndarray
    reliable: np.ndarray
    normalization: str = "eigenvalues per unit cell"


def ids(bands: BandStructure, energies) -> SpectralDensity:
    """Trapezoid-weighted count of fiber eigenvalues ``<= E`` per unit cell."""
    E = np.atleast_1d(np.asarray(energies, dtype=float))
    counts = (bands.energies[:, :, None] <= E[None, None, :]).sum(axis=0)
    values = bands.grid.weights @ counts
    return SpectralDensity(E, values, E <= bands.trusted_ceiling)


# --------------------------------------------------------------------------
# Dirichlet-Neumann bracketing


@dataclass
class Bracketing:
    lam: float
    neumann: np.ndarray
    dirichlet: np.ndarray

    def encloses(self, bands: BandStructure, tol: float = 1e-8) -> bool:
        k = min(bands.k_max, len(self.neumann))
        E = bands.energies[:k]
        slack = tol * np.maximum(1.0, np.abs(E))
        lower = self.neumann[:k, None] <= E + slack
        upper = E <= self.dirichlet[:k, None] + slack
        return bool(np.all(lower & upper))


def bracketing(spec: OperatorSpec, k_max: int, tol: float = 1e-12) -> Bracketing:
    """Cell eigenvalues with natural (Neumann) and pinned (Dirichlet) boundary."""
    out = []
    for bc in ("neumann", "dirichlet"):
        fiber = assemble_bracketing(spec, bc)
        k = min(k_max, fiber.dim - 1)
        res = smallest_eigenpairs(fiber.stiffness, fiber.mass, k, tol, sigma=fiber.lower_bound - 1.0)
        out.append(res.eigenvalues)
    return Bracketing(spec.lam, out[0], out[1])


# --------------------------------------------------------------------------
# serialization


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def band_rows(bands: BandStructure):
    """CSV rows ``lambda, band_k, theta_index, theta_1..theta_m, E`` (band_k is 1-based)."""
    pts = bands.grid.points
    for k in range(bands.k_max):
        for j in range(bands.grid.size):
            yield [fmt(bands.lam), k + 1, j, *map(fmt, pts[j]), fmt(bands.energies[k, j])]


def write_bands_csv(path, structures: Sequence[BandStructure]) -> None:
    m = structures[0].grid.m
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "band_k", "theta_index", *[f"theta_{a + 1}" for a in range(m)], "E"])
        for b in structures:
            w.writerows(band_rows(b))


def gap_report(bands: BandStructure, e_ceiling: float) -> dict:
    ceiling, clipped = effective_ceiling(bands, e_ceiling)
    return {
        "lambda": bands.lam,
        "gaps": [list(g) for g in detect_gaps(bands, e_ceiling)],
        "bands": bands.intervals().tolist(),
        "ceiling": ceiling,
        "ceiling_clipped": clipped,
    }


def write_ids_csv(path, structures: Sequence[BandStructure], energies) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "E", "F", "reliable"])
        for b in structures:
            sd = ids(b, energies)
            for e, f, ok in zip(sd.energies, sd.values, sd.reliable):
                w.writerow([fmt(b.lam), fmt(e), fmt(f), int(ok)])
