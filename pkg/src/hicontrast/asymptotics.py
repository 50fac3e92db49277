"""High-contrast sweeps and the checks built on them.

Reference spectra are computed on the same grid as the bands they are
compared against, so every distance below measures the contrast effect and
not the discretization error of the reference.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assembly import Family, OperatorSpec, assemble_fiber, assemble_reference
from .bloch import (BandStructure, Bracketing, BrillouinGrid, band_structure, bracketing, detect_gaps,
                    effective_ceiling)
from .eigensolve import ConvergenceError, dense_oracle, smallest_eigenpairs
from .geometry import PeriodCell, PeriodicMedium, build_medium

DENSE_LIMIT = 400


def _pencil_eigenvalues(fiber, k: int, tol: float) -> np.ndarray:
    if fiber.dim <= DENSE_LIMIT:
        return dense_oracle(fiber.stiffness, fiber.mass)[:k]
    k = min(k, fiber.dim - 1)
    return smallest_eigenpairs(fiber.stiffness, fiber.mass, k, tol).eigenvalues


def reference_spectrum(medium: PeriodicMedium, bc: str, e_ceiling: float, *, region: str = "inclusion",
                       theta=None, k_min: int = 6, tol: float = 1e-12) -> np.ndarray:
    """Eigenvalues of the plain Laplacian on ``region``, reaching past ``e_ceiling``.

    The list is extended until its last entry exceeds the ceiling (or the
    region is exhausted), so that band points just under the ceiling are
    measured against their true nearest reference value.
    """
    fiber = assemble_reference(medium, region, bc, theta)
    k = k_min
    while True:
        vals = _pencil_eigenvalues(fiber, k, tol)
        if vals[-1] > e_ceiling or len(vals) < k or k >= fiber.dim - 1:
            return vals
        k *= 2


def distinct(values: np.ndarray, rtol: float = 1e-6) -> np.ndarray:
    """Cluster representatives of a sorted list, merging values within ``rtol`` of the scale."""
    values = np.sort(np.asarray(values, dtype=float))
    if len(values) == 0:
        return values
    scale = max(abs(values[-1]), 1.0)
    keep = np.concatenate([[True], np.diff(values) > rtol * scale])
    return values[keep]


# --------------------------------------------------------------------------
# sweeps


@dataclass
class Concentration:
    distance: float  # max over band points below the ceiling of dist(E, reference)
    coverage: list[float]  # per distinct reference value below the ceiling


def concentration(bands: BandStructure, reference: np.ndarray, e_ceiling: float,
                  exclude_zero: bool = False) -> Concentration:
    ceiling = effective_ceiling(bands, e_ceiling)[0]
    pts = bands.points(exclude_zero)
    pts = pts[pts <= ceiling]
    ref = np.asarray(reference)
    dist = float(np.abs(pts[:, None] - ref[None, :]).min(axis=1).max()) if len(pts) else 0.0
    targets = distinct(ref[ref <= ceiling])
    cover = [float(np.abs(pts - t).min()) if len(pts) else float("inf") for t in targets]
    return Concentration(dist, cover)


@dataclass
class SweepEntry:
    bands: BandStructure
    gaps: list[tuple[float, float]]
    ceiling: float
    ceiling_clipped: bool
    metric: Concentration
    bracketing: Optional[Bracketing] = None

    @property
    def lam(self) -> float:
        return self.bands.lam


@dataclass
class SweepReport:
    family: str
    reference_kind: str
    reference: np.ndarray
    e_ceiling: float
    exclude_zero_fiber: bool
    entries: list[SweepEntry]
    flags: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def ladder(self) -> list[float]:
        return [e.lam for e in self.entries]

    @property
    def distances(self) -> list[float]:
        return [e.metric.distance for e in self.entries]

    def to_dict(self) -> dict:
        out = {
            "family": self.family,
            "reference_kind": self.reference_kind,
            "reference": self.reference.tolist(),
            "e_ceiling": self.e_ceiling,
            "exclude_zero_fiber": self.exclude_zero_fiber,
            "flags": list(self.flags),
            "d": self.distances,
            "d_monotone_decreasing": bool(np.all(np.diff(self.distances) <= 0)),
            "points": [],
            "gap_opening": [g.to_dict() for g in gap_opening(self)],
            "config": self.config,
        }
        for e in self.entries:
            item = {
                "lambda": e.lam,
                "d": e.metric.distance,
                "coverage": e.metric.coverage,
                "bands": e.bands.intervals().tolist(),
                "gaps": [list(g) for g in e.gaps],
                "ceiling": e.ceiling,
                "ceiling_clipped": e.ceiling_clipped,
            }
            if e.bracketing is not None:
                item["bracketing"] = {
                    "neumann": e.bracketing.neumann.tolist(),
                    "dirichlet": e.bracketing.dirichlet.tolist(),
                    "encloses": e.bracketing.encloses(e.bands),
                }
            out["points"].append(item)
        return out


def _check_ladder(ladder: Sequence[float]) -> list[float]:
    ladder = [float(x) for x in ladder]
    if not ladder:
        raise ValueError("lambda ladder is empty")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError(f"lambda ladder must be strictly increasing, got {ladder}")
    return ladder


def _bands_at(spec: OperatorSpec, grid: BrillouinGrid, k_max: int, tol: float, threads) -> BandStructure:
    try:
        return band_structure(spec, grid, k_max, tol, threads)
    except ConvergenceError as exc:
        err = ConvergenceError(f"lambda={spec.lam:g}, {exc}", exc.eigenvalues, exc.residuals)
        err.lam = spec.lam
        err.theta = getattr(exc, "theta", None)
        raise err from None


def lambda_sweep(spec: OperatorSpec, ladder: Sequence[float], grid: BrillouinGrid, k_max: int,
                 e_ceiling: float, *, tol: float = 1e-12, threads: Optional[int] = None,
                 reference_bc: str = "dirichlet", with_bracketing: bool = False,
                 config: Optional[dict] = None) -> SweepReport:
    """Band structures along a contrast ladder, measured against an inclusion spectrum.

    For families whose ``theta = 0`` fiber keeps the constants in its kernel,
    that fiber is left out of the concentration metric: it converges to a
    different limit (constants on ``Omega`` survive) and always contributes
    the point ``0``.
    """
    ladder = _check_ladder(ladder)
    reference = reference_spectrum(spec.medium, reference_bc, e_ceiling, tol=tol)
    exclude_zero = reference_bc == "dirichlet" and spec.family.constant_kernel
    entries = []
    for lam in ladder:
        s = spec.with_lambda(lam)
        bands = _bands_at(s, grid, k_max, tol, threads)
        ceiling, clipped = effective_ceiling(bands, e_ceiling)
        entries.append(SweepEntry(
            bands=bands,
            gaps=detect_gaps(bands, e_ceiling),
            ceiling=ceiling,
            ceiling_clipped=clipped,
            metric=concentration(bands, reference, e_ceiling, exclude_zero),
            bracketing=bracketing(s, k_max, tol) if with_bracketing else None,
        ))
    return SweepReport(spec.family.value, f"{reference_bc} inclusion", reference, float(e_ceiling),
                       exclude_zero, entries, config=dict(config or {}))


# --------------------------------------------------------------------------
# gap opening


@dataclass
class GapOpening:
    reference_value: float
    lam_star: Optional[float]  # smallest ladder value from which the gap persists
    interval: Optional[tuple[float, float]]  # gap at the largest ladder value
    overlapping: bool  # consecutive gaps from lam_star on overlap

    def to_dict(self) -> dict:
        return {
            "reference_value": self.reference_value,
            "lambda_star": self.lam_star,
            "interval": list(self.interval) if self.interval else None,
            "overlapping": self.overlapping,
        }


def _nearest(values: np.ndarray, x: float) -> int:
    return int(np.argmin(np.abs(values - x)))


def gap_opening(report: SweepReport, rtol: float = 0.05, rule: Optional[str] = None) -> list[GapOpening]:
    """For each reference value under the ceiling, where a gap following it opens.

    ``rule="lower_endpoint"`` (default for a Dirichlet reference) accepts a
    gap whose lower end lies within ``rtol`` of the reference value; the scale
    for the value ``0`` is the next reference value.  ``rule="separation"``
    (default for a Neumann reference, whose bands approach from above)
    accepts a gap whose lower end is nearest to this reference value and
    whose upper end is nearest to the next one.
    """
    if rule is None:
        rule = "separation" if report.reference_kind.startswith("neumann") else "lower_endpoint"
    if rule not in ("lower_endpoint", "separation"):
        raise ValueError(f"unknown gap rule {rule!r}")
    values = distinct(report.reference)
    out = []
    for i, delta in enumerate(values):
        if delta > report.e_ceiling:
            break
        scale = delta if delta > 0 else (values[i + 1] if i + 1 < len(values) else 1.0)

        def follows(g):
            if rule == "lower_endpoint":
                return abs(g[0] - delta) <= rtol * scale
            return _nearest(values, g[0]) == i and _nearest(values, g[1]) == i + 1

        found = []
        for e in report.entries:
            hits = [g for g in e.gaps if follows(g)]
            found.append(min(hits, key=lambda g: abs(g[0] - delta)) if hits else None)
        start = len(found)
        while start > 0 and found[start - 1] is not None:
            start -= 1
        if start == len(found):
            out.append(GapOpening(float(delta), None, None, False))
            continue
        run = found[start:]
        overlap = all(a[0] < b[1] and b[0] < a[1] for a, b in zip(run, run[1:]))
        out.append(GapOpening(float(delta), report.entries[start].lam, run[-1], overlap))
    return out


# --------------------------------------------------------------------------
# higher-gap criterion


@dataclass
class CriterionVerdict:
    k: int
    status: str  # "holds", "fails" or "indeterminate"
    witness: float  # ||P_k 1|| / ||1|| in the mass inner product
    cluster: list[int]  # 1-based indices of the eigencluster containing k
    values: list[float]

    def to_dict(self) -> dict:
        return dict(k=self.k, status=self.status, witness=self.witness, cluster=self.cluster, values=self.values)


def higher_gap_criterion(medium: PeriodicMedium, k: int, *, threshold: float = 1e-4,
                         cluster_rtol: float = 1e-6, ambiguity: float = 1e-3,
                         tol: float = 1e-12) -> CriterionVerdict:
    """Does the ``k``-th Dirichlet eigenspace of ``M0`` contain a function with nonzero mean?

    The witness is the norm of the projection of the constant onto the whole
    eigencluster around ``delta_k``, which does not depend on the basis chosen
    inside a degenerate cluster.  If the nearest eigenvalue outside the
    cluster lies within ``ambiguity`` (relative) the verdict is indeterminate.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    fiber = assemble_reference(medium, "inclusion", "dirichlet")
    want = k + 4
    while True:
        if want >= fiber.dim:
            raise ValueError(f"inclusion has only {fiber.dim} interior nodes, cannot resolve k={k}")
        res = smallest_eigenpairs(fiber.stiffness, fiber.mass, want, tol)
        vals = res.eigenvalues
        delta = vals[k - 1]
        same = np.abs(vals - delta) <= cluster_rtol * abs(delta)
        if not same[-1]:
            break
        want *= 2
    idx = np.flatnonzero(same)
    U = res.eigenvectors[:, idx]
    ones = np.ones(fiber.dim)
    B1 = fiber.mass @ ones
    coeff = U.conj().T @ B1
    witness = float(np.sqrt(np.sum(np.abs(coeff) ** 2) / np.real(ones @ B1)))

    outside = np.delete(vals, idx)
    gap = np.abs(outside - delta).min() / abs(delta) if len(outside) else np.inf
    if gap <= ambiguity:
        status = "indeterminate"
    else:
        status = "holds" if witness > threshold else "fails"
    return CriterionVerdict(k, status, witness, (idx + 1).tolist(), vals[idx].tolist())


# --------------------------------------------------------------------------
# Laplace-Beltrami family


def beltrami_neumann_limit(medium: PeriodicMedium, ladder: Sequence[float], grid: BrillouinGrid, k_max: int,
                           e_ceiling: float, *, tol: float = 1e-12, threads: Optional[int] = None,
                           config: Optional[dict] = None) -> SweepReport:
    """Conformal-metric sweep against the Neumann spectrum of the inclusion, with enclosures."""
    spec = OperatorSpec(Family.BELTRAMI, medium, max(1.0, float(_check_ladder(ladder)[0])))
    report = lambda_sweep(spec, ladder, grid, k_max, e_ceiling, tol=tol, threads=threads,
                          reference_bc="neumann", with_bracketing=True, config=config)
    if medium.m == 2:
        report.flags.append("exploratory (m=2 special)")
    return report


# --------------------------------------------------------------------------
# Pauli pair


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return float("inf")
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def _paired_distance(plus: BandStructure, minus: BandStructure, kappa_rel: float) -> tuple[float, float]:
    """Largest mismatch between the nonzero fiber spectra, taken theta by theta.

    Only eigenvalues below the lower of the two computed windows are matched;
    each is compared against the full computed list of the partner so that
    a partner just above the window still counts.
    """
    worst = 0.0
    cut_all = np.inf
    for j in range(plus.grid.size):
        a, b = plus.energies[:, j], minus.energies[:, j]
        cut = min(a[-1], b[-1])
        cut_all = min(cut_all, cut)
        kappa = kappa_rel * cut
        aa = a[(np.abs(a) > kappa) & (a <= cut)]
        bb = b[(np.abs(b) > kappa) & (b <= cut)]
        nb = b[np.abs(b) > kappa]
        na = a[np.abs(a) > kappa]
        for x, y in ((aa, nb), (bb, na)):
            if len(x):
                worst = max(worst, float(np.abs(x[:, None] - y[None, :]).min(axis=1).max()))
    return worst, float(cut_all)


@dataclass
class SupersymmetryReport:
    n: int
    distance: float
    distance_refined: Optional[float]
    window: float
    lower_bounds_hold: bool
    config: dict = field(default_factory=dict)

    @property
    def ratio(self) -> Optional[float]:
        if self.distance_refined is None:
            return None
        if self.distance_refined == 0.0:
            return float("inf") if self.distance > 0 else 1.0
        return self.distance / self.distance_refined

    def to_dict(self) -> dict:
        ratio = self.ratio
        return {
            "n": self.n,
            "distance": self.distance,
            "n_refined": 2 * self.n if self.distance_refined is not None else None,
            "distance_refined": self.distance_refined,
            "refinement_ratio": None if ratio is None or not np.isfinite(ratio) else ratio,
            "window": self.window,
            "lower_bounds_hold": self.lower_bounds_hold,
            "config": self.config,
        }


def _pauli_pair(medium: PeriodicMedium, lam: float, grid: BrillouinGrid, k_max: int, beta: float,
                margin: Optional[float], tol: float, threads):
    out = []
    lower_ok = True
    for fam in (Family.PAULI_PLUS, Family.PAULI_MINUS):
        spec = OperatorSpec(fam, medium, lam, beta=beta, gauge_margin=margin)
        bands = _bands_at(spec, grid, k_max, tol, threads)
        lb = assemble_fiber(spec, np.zeros(2)).lower_bound
        scale = max(1.0, np.abs(bands.energies).max())
        lower_ok &= bool(bands.energies.min() >= lb - 1e-10 * scale)
        out.append(bands)
    return out[0], out[1], lower_ok


def supersymmetry_check(medium: PeriodicMedium, lam: float, grid: BrillouinGrid, k_max: int, *,
                        beta: float = 1.0, margin: Optional[float] = None, refine: bool = True,
                        kappa_rel: float = 1e-8, tol: float = 1e-12, threads: Optional[int] = None,
                        config: Optional[dict] = None) -> SupersymmetryReport:
    """Compare the nonzero fiber spectra of the two Pauli operators, optionally at ``n`` and ``2n``."""
    plus, minus, ok = _pauli_pair(medium, lam, grid, k_max, beta, margin, tol, threads)
    dist, window = _paired_distance(plus, minus, kappa_rel)
    refined = None
    if refine:
        fine = build_medium(PeriodCell(medium.m, 2 * medium.n), medium.shape)
        p2, m2, ok2 = _pauli_pair(fine, lam, grid, k_max, beta, margin, tol, threads)
        refined = _paired_distance(p2, m2, kappa_rel)[0]
        ok &= ok2
    return SupersymmetryReport(medium.n, dist, refined, window, ok, config=dict(config or {}))


# --------------------------------------------------------------------------
# decreasing family


@dataclass
class DecreasingProbe:
    ladder: list[float]
    bands: list[BandStructure]
    monotone: bool
    max_increase: float  # largest relative step up between consecutive ladder values
    near_zero: list[int]  # eigenvalues below zero_tol in the theta = 0 fiber, per lambda
    drift: list[float]  # distance of the theta = 0 fiber to {0} + periodic Neumann spectrum of Omega

    def to_dict(self) -> dict:
        return {
            "ladder": self.ladder,
            "monotone_nonincreasing": self.monotone,
            "max_increase": self.max_increase,
            "near_zero": self.near_zero,
            "drift": self.drift,
            "bands": [b.intervals().tolist() for b in self.bands],
        }


def monotonicity_violation(sequence: Sequence[BandStructure], increasing: bool = True) -> float:
    """Largest relative step against the expected direction along a ladder (0 if none)."""
    worst = 0.0
    for a, b in zip(sequence, sequence[1:]):
        step = (b.energies - a.energies) if increasing else (a.energies - b.energies)
        scale = np.maximum(1.0, np.maximum(np.abs(a.energies), np.abs(b.energies)))
        worst = max(worst, float(np.max(-step / scale)))
    return max(worst, 0.0)


def decreasing_family_probe(medium: PeriodicMedium, ladder: Sequence[float], grid: BrillouinGrid, k_max: int,
                            *, zero_tol: float = 1e-2, mono_tol: float = 1e-8, tol: float = 1e-12,
                            threads: Optional[int] = None) -> DecreasingProbe:
    """Spectra of the family that softens ``M`` as the contrast grows.

    The drift toward the limit set is reported for diagnosis only.
    """
    ladder = _check_ladder(ladder)
    spec = OperatorSpec(Family.DIVERGENCE_DECREASING, medium, ladder[0])
    bands = [_bands_at(spec.with_lambda(lam), grid, k_max, tol, threads) for lam in ladder]
    viol = monotonicity_violation(bands, increasing=False)
    zero = grid.zero_index
    ceiling = max(float(b.energies[:, zero].max()) for b in bands)
    limit = np.concatenate([[0.0], reference_spectrum(medium, "neumann", ceiling, region="omega",
                                                      theta=np.zeros(medium.m), tol=tol)])
    near, drift = [], []
    for b in bands:
        col = b.energies[:, zero]
        near.append(int(np.sum(col < zero_tol)))
        drift.append(float(np.abs(col[:, None] - limit[None, :]).min(axis=1).max()))
    return DecreasingProbe(ladder, bands, viol <= mono_tol, viol, near, drift)
