"""Command-line runner: ``hicontrast run <config>`` and ``hicontrast plot-data <dir>``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .asymptotics import (beltrami_neumann_limit, decreasing_family_probe, gap_opening, higher_gap_criterion,
                          lambda_sweep, monotonicity_violation, supersymmetry_check)
from .assembly import AssemblyError, Family, OperatorSpec
from .bloch import (BrillouinGrid, band_structure, bracketing, fmt, gap_report, ids, write_bands_csv,
                    write_ids_csv)
from .config import ConfigError, RunConfig, load_config
from .eigensolve import EigensolverError
from .geometry import GeometryError, PeriodCell, build_medium, make_shape

log = logging.getLogger("hicontrast")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
THREADS_ENV = "HICONTRAST_THREADS"


@dataclass
class Verdict:
    label: str  # descriptive name of the property being checked
    block: str  # config sections the check depends on
    passed: Optional[bool]  # None for purely informational lines
    detail: str
    values: dict

    def line(self) -> str:
        status = {True: "PASS", False: "FAIL", None: "INFO"}[self.passed]
        return f"{status:<5} {self.label} [{self.block}]: {self.detail}"

    def to_dict(self) -> dict:
        return {"label": self.label, "block": self.block, "passed": self.passed,
                "detail": self.detail, "values": self.values}


class Artifacts:
    def __init__(self, out: Path, formats):
        self.out = out
        self.formats = set(formats)
        self.written: list[str] = []

    def path(self, name: str) -> Path:
        self.written.append(name)
        return self.out / name

    def json(self, name: str, obj) -> None:
        if "json" in self.formats:
            self.path(name).write_text(json.dumps(obj, indent=2) + "\n")

    def csv(self, name: str, writer, *args) -> None:
        if "csv" in self.formats:
            writer(self.path(name), *args)


# --------------------------------------------------------------------------
# tasks


def _medium(cfg: RunConfig):
    return build_medium(PeriodCell(cfg.m, cfg.n), make_shape(cfg.shape, cfg.shape_param))


def _spec(cfg: RunConfig, medium, lam: float) -> OperatorSpec:
    return OperatorSpec(cfg.family, medium, lam, potential_width=cfg.potential_width, coeff_a=cfg.coeff_a,
                        coeff_b=cfg.coeff_b, beta=cfg.beta, gauge_margin=cfg.gauge_margin)


def _ids_energies(cfg: RunConfig) -> np.ndarray:
    return np.linspace(0.0, cfg.e_ceiling, cfg.ids_points)


def _band_artifacts(cfg, structures, art: Artifacts) -> list[Verdict]:
    art.csv("bands.csv", write_bands_csv, structures)
    reports = [gap_report(b, cfg.e_ceiling) for b in structures]
    art.json("gaps.json", {"reports": reports})
    art.csv("ids.csv", write_ids_csv, structures, _ids_energies(cfg))
    verdicts = []
    for b, rep in zip(structures, reports):
        gaps = ", ".join(f"({fmt_short(a)}, {fmt_short(c)})" for a, c in rep["gaps"]) or "none"
        clip = " (ceiling clipped to trusted window)" if rep["ceiling_clipped"] else ""
        verdicts.append(Verdict("gap detection", "operator, bloch", None,
                                f"lambda={b.lam:g}: gaps below {fmt_short(rep['ceiling'])}: {gaps}{clip}",
                                {"lambda": b.lam, "gaps": rep["gaps"]}))
        if Family(b.family).constant_kernel:
            bottom = float(b.energies[0, b.grid.zero_index])
            ok = abs(bottom) <= 1e-8 * max(1.0, cfg.e_ceiling)
            verdicts.append(Verdict("constant zero mode at theta=0", "operator", ok,
                                    f"lambda={b.lam:g}: E_1(0) = {bottom:.3e}", {"lambda": b.lam, "E1_0": bottom}))
        F = ids(b, _ids_energies(cfg)).values
        verdicts.append(Verdict("i.d.s. monotone", "bloch", bool(np.all(np.diff(F) >= 0)),
                                f"lambda={b.lam:g}: F nondecreasing on [0, {cfg.e_ceiling:g}]", {"lambda": b.lam}))
    return verdicts


def fmt_short(x: float) -> str:
    return f"{x:.6g}"


def task_bands(cfg, medium, grid, threads, art) -> list[Verdict]:
    structures = []
    for lam in cfg.lambdas:
        log.info("bands at lambda=%g", lam)
        structures.append(band_structure(_spec(cfg, medium, lam), grid, cfg.k_max, cfg.tol, threads))
    verdicts = _band_artifacts(cfg, structures, art)
    if len(structures) > 1 and cfg.family in (Family.SCHRODINGER, Family.DIVERGENCE, Family.DIVERGENCE_DECREASING):
        inc = cfg.family.monotone_increasing
        viol = monotonicity_violation(structures, increasing=inc)
        verdicts.append(Verdict("monotone form sequence", "operator", viol <= 1e-8,
                                f"largest step against the {'increasing' if inc else 'decreasing'} order: {viol:.2e}",
                                {"violation": viol}))
    return verdicts


def task_sweep(cfg, medium, grid, threads, art) -> list[Verdict]:
    if cfg.family is Family.DIVERGENCE_DECREASING:
        probe = decreasing_family_probe(medium, cfg.lambdas, grid, cfg.k_max, tol=cfg.tol, threads=threads)
        verdicts = _band_artifacts(cfg, probe.bands, art)
        art.json("sweep.json", {**probe.to_dict(), "config": cfg.echo})
        verdicts.append(Verdict("decreasing form sequence", "operator", probe.monotone,
                                f"largest relative increase along the ladder {probe.max_increase:.2e}; "
                                f"near-zero counts at theta=0: {probe.near_zero}",
                                {"max_increase": probe.max_increase, "near_zero": probe.near_zero}))
        return verdicts

    if cfg.family is Family.BELTRAMI:
        report = beltrami_neumann_limit(medium, cfg.lambdas, grid, cfg.k_max, cfg.e_ceiling, tol=cfg.tol,
                                        threads=threads, config=cfg.echo)
    else:
        report = lambda_sweep(_spec(cfg, medium, cfg.lambdas[0]), cfg.lambdas, grid, cfg.k_max, cfg.e_ceiling,
                              tol=cfg.tol, threads=threads, config=cfg.echo)
    structures = [e.bands for e in report.entries]
    verdicts = _band_artifacts(cfg, structures, art)
    data = report.to_dict()
    art.json("sweep.json", data)

    d = report.distances
    strict = bool(np.all(np.diff(d) < 0)) if len(d) > 1 else None
    label = "Neumann limit of the conformal metric" if cfg.family is Family.BELTRAMI \
        else "concentration at the inclusion spectrum"
    verdicts.append(Verdict(label, "operator, bloch", strict,
                            "distance to reference per lambda: " + ", ".join(fmt_short(x) for x in d),
                            {"d": d}))
    openings = gap_opening(report)
    if openings:
        first = openings[0]
        name = "gap after the lowest Neumann cluster" if cfg.family is Family.BELTRAMI else "gap after the first band"
        detail = (f"opens by lambda={first.lam_star:g}, interval at largest lambda "
                  f"({fmt_short(first.interval[0])}, {fmt_short(first.interval[1])})"
                  if first.lam_star is not None else "no gap at the reference value in the window")
        verdicts.append(Verdict(name, "operator, bloch", first.lam_star is not None, detail, first.to_dict()))
        if first.lam_star is not None:
            verdicts.append(Verdict("gap persistence", "operator", first.overlapping,
                                    "consecutive gaps overlap along the ladder", first.to_dict()))
    if cfg.family is Family.BELTRAMI:
        enc = [p["bracketing"]["encloses"] for p in data["points"]]
        verdicts.append(Verdict("band enclosure by cell bracketing", "operator, bloch", all(enc),
                                f"per lambda: {enc}", {"encloses": enc}))
        for flag in report.flags:
            verdicts.append(Verdict("scope", "geometry", None, flag, {"flag": flag}))
    else:
        ref1 = float(report.reference[0])
        tops = [float(b.intervals()[0, 1]) for b in structures]
        rel = abs(tops[-1] - ref1) / ref1
        nondecreasing = bool(np.all(np.diff(tops) >= -1e-8 * ref1))
        verdicts.append(Verdict("first-band convergence", "operator, bloch", nondecreasing,
                                f"band-1 top per lambda {', '.join(fmt_short(t) for t in tops)}; "
                                f"inclusion ground state {fmt_short(ref1)}; relative distance {rel:.2e}",
                                {"tops": tops, "reference": ref1, "relative_distance": rel}))
        if cfg.family.monotone_increasing:
            viol = monotonicity_violation(structures, increasing=True)
            verdicts.append(Verdict("monotone form sequence", "operator", viol <= 1e-8,
                                    f"largest relative decrease along the ladder {viol:.2e}", {"violation": viol}))
    return verdicts


def task_bracketing(cfg, medium, grid, threads, art) -> list[Verdict]:
    structures, rows, payload, verdicts = [], [], [], []
    for lam in cfg.lambdas:
        spec = _spec(cfg, medium, lam)
        b = band_structure(spec, grid, cfg.k_max, cfg.tol, threads)
        br = bracketing(spec, cfg.k_max, cfg.tol)
        structures.append(b)
        ok = br.encloses(b)
        payload.append({"lambda": lam, "neumann": br.neumann.tolist(), "dirichlet": br.dirichlet.tolist(),
                        "encloses": ok})
        rows += [[fmt(lam), k + 1, fmt(a), fmt(c)] for k, (a, c) in enumerate(zip(br.neumann, br.dirichlet))]
        verdicts.append(Verdict("band enclosure by cell bracketing", "operator, bloch", ok,
                                f"lambda={lam:g}: Neumann <= E_k(theta) <= Dirichlet for k <= {len(br.neumann)}",
                                payload[-1]))

    def write(path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "k", "neumann", "dirichlet"])
            w.writerows(rows)

    art.csv("bands.csv", write_bands_csv, structures)
    art.csv("bracketing.csv", write)
    art.json("bracketing.json", {"points": payload, "config": cfg.echo})
    return verdicts


def task_susy(cfg, medium, grid, threads, art) -> list[Verdict]:
    lam = cfg.lambdas[0]
    rep = supersymmetry_check(medium, lam, grid, cfg.k_max, beta=cfg.beta, margin=cfg.gauge_margin,
                              refine=cfg.refine, tol=cfg.tol, threads=threads, config=cfg.echo)
    art.json("susy.json", rep.to_dict())
    if rep.distance == 0.0:
        ok, detail = True, "nonzero spectra identical"
    elif rep.distance_refined is not None:
        ok = rep.distance_refined < rep.distance
        detail = f"distance {rep.distance:.3e} at n={rep.n}, {rep.distance_refined:.3e} at n={2 * rep.n}"
    else:
        ok, detail = None, f"distance {rep.distance:.3e} at n={rep.n}"
    return [
        Verdict("supersymmetric pairing of the Pauli operators", "operator, bloch", ok, detail, rep.to_dict()),
        Verdict("Pauli lower bound", "operator", rep.lower_bounds_hold,
                "spectra above the diagonal field bound", {"holds": rep.lower_bounds_hold}),
    ]


def task_criterion(cfg, medium, grid, threads, art) -> list[Verdict]:
    v = higher_gap_criterion(medium, cfg.k, threshold=cfg.threshold, tol=cfg.tol)
    art.json("criterion.json", {**v.to_dict(), "threshold": cfg.threshold, "config": cfg.echo})
    passed = None if v.status == "indeterminate" else v.status == "holds"
    return [Verdict("higher-gap criterion holds (eigenfunction with nonzero mean)", "geometry, task", passed,
                    f"k={v.k}: {v.status}, projection ratio {v.witness:.3e}, cluster {v.cluster}", v.to_dict())]


TASKS = {
    "bands": task_bands,
    "gaps": task_bands,
    "ids": task_bands,
    "sweep": task_sweep,
    "bracketing": task_bracketing,
    "susy": task_susy,
    "criterion": task_criterion,
}


# --------------------------------------------------------------------------
# run


def _threads(flag: Optional[int]) -> int:
    if flag:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, env)
    return 1


def _manifest(cfg_path, cfg, status, threads, started, art, error=None) -> dict:
    return {
        "status": status,
        "error": error,
        "config_path": str(cfg_path),
        "config": {**cfg.echo, "output": {"directory": str(art.out), "formats": ",".join(sorted(art.formats))}}
        if cfg else None,
        "versions": {"hicontrast": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "threads": threads,
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
        "artifacts": sorted(set(art.written)),
    }


def run(config_path, out: Optional[str] = None, threads: Optional[int] = None) -> int:
    started = time.perf_counter()
    try:
        cfg = load_config(config_path)
        out_dir = Path(out or cfg.directory)
        medium = _medium(cfg)
        for lam in cfg.lambdas:
            _spec(cfg, medium, lam)  # validate every ladder value before any work
        grid = BrillouinGrid(cfg.m, cfg.n_theta)
    except (ConfigError, GeometryError, AssemblyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    n_threads = _threads(threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "FAILED").unlink(missing_ok=True)
    art = Artifacts(out_dir, cfg.formats)
    try:
        verdicts = TASKS[cfg.task](cfg, medium, grid, n_threads, art)
    except (EigensolverError, np.linalg.LinAlgError, RuntimeError) as exc:
        msg = f"numerical failure: {exc}"
        print(msg, file=sys.stderr)
        (out_dir / "FAILED").write_text(msg + "\n")
        (out_dir / "manifest.json").write_text(
            json.dumps(_manifest(config_path, cfg, "failed", n_threads, started, art, str(exc)), indent=2) + "\n")
        return EXIT_NUMERICAL
    except ValueError as exc:  # geometry or operator data the task cannot use
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    art.path("summary.txt").write_text(
        f"task {cfg.task}, family {cfg.family.value}, m={cfg.m}, n={cfg.n}, shape {cfg.shape}\n"
        + "".join(v.line() + "\n" for v in verdicts))
    art.path("verdicts.json").write_text(json.dumps([v.to_dict() for v in verdicts], indent=2) + "\n")
    art.written.append("manifest.json")
    (out_dir / "manifest.json").write_text(
        json.dumps(_manifest(config_path, cfg, "ok", n_threads, started, art), indent=2) + "\n")
    for v in verdicts:
        log.info(v.line())
    return EXIT_OK


# --------------------------------------------------------------------------
# plot data


def _symmetry_path(m: int) -> list[np.ndarray]:
    """Corners ``0 -> (pi,0,..) -> (pi,pi,0,..) -> ... -> (pi,..,pi) -> 0``."""
    corners = [np.zeros(m)]
    for a in range(m):
        c = corners[-1].copy()
        c[a] = np.pi
        corners.append(c)
    if m > 1:
        corners.append(np.zeros(m))
    return corners


def _path_indices(points: np.ndarray, m: int):
    """Grid points along the symmetry path, in order, with arc-length coordinate."""
    corners = _symmetry_path(m)
    order, arc, s0 = [], [], 0.0
    for a, b in zip(corners, corners[1:]):
        seg = b - a
        length = float(np.linalg.norm(seg))
        rel = points - a
        t = rel @ seg / length**2
        on = np.linalg.norm(rel - np.outer(t, seg), axis=1) < 1e-9
        on &= (t >= -1e-12) & (t <= 1 + 1e-12)
        idx = np.flatnonzero(on)
        idx = idx[np.argsort(t[idx], kind="stable")]
        if order:
            idx = idx[1:]  # the corner is already the end of the previous segment
        order += idx.tolist()
        arc += (s0 + t[idx] * length).tolist()
        s0 += length
    return order, arc


def _read_bands(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    m = sum(1 for h in header if h.startswith("theta_") and h[6:].isdigit())
    blocks: dict[str, dict] = {}
    for r in body:
        lam = r[0]
        blk = blocks.setdefault(lam, {"E": {}, "theta": {}})
        k, j = int(r[1]), int(r[2])
        blk["theta"][j] = [float(x) for x in r[3:3 + m]]
        blk["E"][(k, j)] = r[3 + m]
    return m, blocks


def emit_plot_data(directory) -> list[Path]:
    """Write gnuplot-ready ``band_path.dat``, ``gap_chart.dat`` and ``ids_staircase.dat``."""
    directory = Path(directory)
    bands_csv = directory / "bands.csv"
    if not bands_csv.exists():
        raise FileNotFoundError(f"missing artifact {bands_csv}")
    m, blocks = _read_bands(bands_csv)
    written = []

    lines = ["# band energies along 0 -> (pi,0) -> (pi,pi) -> 0 (first axes set to pi in turn)",
             "# one data block per lambda; columns: s E_1 E_2 ..."]
    for lam, blk in blocks.items():
        js = sorted(blk["theta"])
        pts = np.array([blk["theta"][j] for j in js])
        order, arc = _path_indices(pts, m)
        k_max = max(k for k, _ in blk["E"])
        lines.append(f"# lambda = {lam}")
        for i, s in zip(order, arc):
            j = js[i]
            lines.append(" ".join([fmt(s)] + [blk["E"][(k, j)] for k in range(1, k_max + 1)]))
        lines += ["", ""]
    written.append(_write(directory / "band_path.dat", lines))

    lines = ["# spectral gaps per contrast", "# columns: lambda gap_lower gap_upper"]
    gaps_json = directory / "gaps.json"
    if gaps_json.exists():
        for rep in json.loads(gaps_json.read_text())["reports"]:
            for a, b in rep["gaps"]:
                lines.append(f"{fmt(rep['lambda'])} {fmt(a)} {fmt(b)}")
    written.append(_write(directory / "gap_chart.dat", lines))

    lines = ["# integrated density of states per unit cell", "# one data block per lambda; columns: E F"]
    ids_csv = directory / "ids.csv"
    if ids_csv.exists():
        with open(ids_csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
        current = None
        for r in rows:
            if r["lambda"] != current:
                if current is not None:
                    lines += ["", ""]
                current = r["lambda"]
                lines.append(f"# lambda = {current}")
            lines.append(f"{r['E']} {r['F']}")
    written.append(_write(directory / "ids_staircase.dat", lines))
    return written


def _write(path: Path, lines: list[str]) -> Path:
    path.write_text("\n".join(lines).rstrip("\n") + "\n")
    return path


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hicontrast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the task described by a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides [output] directory)")
    p_run.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p_run.add_argument("--verbose", action="store_true")
    p_plot = sub.add_parser("plot-data", help="write gnuplot data files from run artifacts")
    p_plot.add_argument("directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "run":
        return run(args.config, args.out, args.threads)
    try:
        for p in emit_plot_data(args.directory):
            print(p)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"plot-data: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
