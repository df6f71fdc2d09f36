"""Command-line driver: ``subsup admissible | solve | sweep``.

Exit codes
  0  success
  1  configuration is not admissible
  2  parse, I/O or usage error
  3  barrier calibration failed
  4  fixed-point iteration did not converge
  5  a verification check failed
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .barriers import BarrierDegeneracy, CalibrationFailure, calibrate_C
from .config import ConfigError, Entry, as_float, as_int, parse_sections
from .domain import Grid, Interval01, RadialBall, build_grid, fmt_float
from .fixedpoint import Initial, iterate, track_apriori
from .plap import NonConvergence
from .systems import ExponentConfig, check_admissibility
from .verify import Verdict, envelope_domination_check, full_suite, verdicts_to_csv

EXIT_OK = 0
EXIT_INADMISSIBLE = 1
EXIT_USAGE = 2
EXIT_CALIBRATION = 3
EXIT_NONCONVERGENCE = 4
EXIT_VERIFICATION = 5

SYSTEM_KEYS = {"kind", "N", "p1", "p2", "alpha1", "beta1", "alpha2", "beta2", "r1", "r2",
               "gamma1", "gamma2", "theta1", "theta2", "eta1", "eta2"}
GRID_KEYS = {"domain", "cells", "grading", "quadrature_order"}
SOLVER_KEYS = {"delta", "c_max", "n_bisect", "max_iter", "tol", "residual_tol", "relaxation",
               "initial", "seed", "samples"}
SECTIONS = {"system": SYSTEM_KEYS, "grid": GRID_KEYS, "solver": SOLVER_KEYS}


@dataclass(frozen=True)
class GridSettings:
    domain: str = "ball"
    cells: int = 256
    grading: float = 1.5
    quadrature_order: int = 3

    def build(self, N: int) -> Grid:
        kind = RadialBall(N) if self.domain == "ball" else Interval01()
        return build_grid(kind, self.cells, self.grading, self.quadrature_order)


@dataclass(frozen=True)
class SolverSettings:
    delta: float = 0.1
    c_max: float = 1e6
    n_bisect: int = 60
    max_iter: int = 200
    tol: float = 1e-8
    residual_tol: float = 1e-6
    relaxation: float = 1.0
    initial: str = "midpoint"
    seed: int = 0
    samples: int = 1000


@dataclass(frozen=True)
class RunConfig:
    system: ExponentConfig
    grid: GridSettings
    solver: SolverSettings

    @classmethod
    def from_sections(cls, sections: dict[str, dict[str, Entry]]) -> RunConfig:
        if "system" not in sections:
            raise ConfigError("missing [system] section")
        system = ExponentConfig.from_entries(sections["system"])
        g = sections.get("grid", {})
        gkw = {}
        if "domain" in g:
            dom = g["domain"].value.lower()
            if dom not in ("ball", "interval"):
                raise ConfigError(f"domain must be 'ball' or 'interval', got {dom!r}", g["domain"].line)
            gkw["domain"] = dom
        for k in ("cells", "quadrature_order"):
            if k in g:
                gkw[k] = as_int(g[k], k)
        if "grading" in g:
            gkw["grading"] = as_float(g["grading"], "grading")
        s = sections.get("solver", {})
        skw = {}
        for k in ("delta", "c_max", "tol", "residual_tol", "relaxation"):
            if k in s:
                skw[k] = as_float(s[k], k)
        for k in ("n_bisect", "max_iter", "seed", "samples"):
            if k in s:
                skw[k] = as_int(s[k], k)
        if "initial" in s:
            val = s["initial"].value.lower()
            if val not in {m.value for m in Initial}:
                raise ConfigError(f"initial must be lower, upper or midpoint, got {val!r}", s["initial"].line)
            skw["initial"] = val
        return cls(system, GridSettings(**gkw), SolverSettings(**skw))

    @classmethod
    def from_text(cls, text: str, overrides: dict[str, str] | None = None) -> RunConfig:
        sections = parse_sections(text, SECTIONS)
        for key, value in (overrides or {}).items():
            sec = next(name for name, keys in SECTIONS.items() if key in keys)
            sections.setdefault(sec, {})[key] = Entry(value, 0)
        return cls.from_sections(sections)


# -- output helpers -----------------------------------------------------------


class Manifest:
    """``manifest.txt``: written before any other output and rewritten on exit."""

    def __init__(self, out: Path, command: str, config_path: str, config_text: str, extra: dict[str, str]):
        self.path = out / "manifest.txt"
        self.items: dict[str, str] = {
            "command": command,
            "config": str(config_path),
            "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
            "output_dir": str(out),
            "started": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            **extra,
        }
        self.write()

    def set(self, **kw) -> None:
        self.items.update({k: str(v) for k, v in kw.items()})

    def write(self) -> None:
        self.path.write_text("".join(f"{k} = {v}\n" for k, v in self.items.items()))

    def finish(self, code: int, status: str, diagnostic: str = "") -> int:
        self.set(exit_code=code, status=status, finished=datetime.now(timezone.utc).isoformat(timespec="seconds"))
        if diagnostic:
            self.set(diagnostic=diagnostic.replace("\n", " | "))
        self.write()
        return code


def _make_out_dir(path: str) -> Path:
    """Create ``path`` atomically (populate-free rename of a sibling temp dir)."""
    out = Path(path)
    if out.is_dir():
        if not os.access(out, os.W_OK):
            raise OSError(f"output directory {out} is not writable")
        return out
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        os.rename(tmp, out)
    except OSError:
        tmp.rmdir()
        if not out.is_dir():
            raise
    return out


def _svg_plot(path: Path, x: np.ndarray, panels: list[tuple[str, list[tuple[str, np.ndarray, str]]]]) -> None:
    """Side-by-side polyline panels with simple axes."""
    W, H, pad = 420, 300, 40
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W * len(panels)}" height="{H}" font-size="11">']
    for k, (title, curves) in enumerate(panels):
        ox = k * W
        ymax = max(float(np.max(c[1])) for c in curves) or 1.0
        x0, x1 = float(x.min()), float(x.max())

        def px(v):
            return ox + pad + (v - x0) / (x1 - x0) * (W - 2 * pad)

        def py(v):
            return H - pad - v / ymax * (H - 2 * pad)

        parts.append(
            f'<line x1="{px(x0):.2f}" y1="{py(0):.2f}" x2="{px(x1):.2f}" y2="{py(0):.2f}" stroke="black"/>'
            f'<line x1="{px(x0):.2f}" y1="{py(0):.2f}" x2="{px(x0):.2f}" y2="{py(ymax):.2f}" stroke="black"/>'
            f'<text x="{ox + W / 2:.0f}" y="20" text-anchor="middle">{title}</text>'
            f'<text x="{px(x0) - 4:.2f}" y="{py(ymax):.2f}" text-anchor="end">{ymax:.3g}</text>'
            f'<text x="{px(x0):.2f}" y="{H - pad + 14}" text-anchor="middle">{x0:g}</text>'
            f'<text x="{px(x1):.2f}" y="{H - pad + 14}" text-anchor="middle">{x1:g}</text>'
        )
        for j, (label, y, color) in enumerate(curves):
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
            parts.append(
                f'<text x="{ox + W - pad}" y="{pad + 14 * j}" text-anchor="end" fill="{color}">{label}</text>'
            )
    parts.append("</svg>\n")
    path.write_text("\n".join(parts))


# -- pipeline -----------------------------------------------------------------


@dataclass
class PipelineResult:
    code: int
    status: str
    diagnostic: str = ""
    admissible_w: bool = False
    admissible_c1: bool = False
    C: float = float("nan")
    converged: bool = False
    localization: float = float("nan")
    lp_grad: tuple[float, float] = (float("nan"), float("nan"))
    sup_grad: tuple[float, float] = (float("nan"), float("nan"))


def run_pipeline(rc: RunConfig, out: Path | None = None) -> PipelineResult:
    """calibrate -> iterate -> verify; writes artifacts into ``out`` if given."""
    adm = check_admissibility(rc.system)
    res = PipelineResult(EXIT_OK, "ok", admissible_w=adm.admissible_w, admissible_c1=adm.admissible_c1)
    if out is not None:
        (out / "admissibility.txt").write_text(adm.table() + "\n")
    if not adm.admissible_w:
        res.code, res.status = EXIT_INADMISSIBLE, "inadmissible"
        res.diagnostic = "; ".join(f"{n}: {a:.6g} vs {b:.6g}" for n, a, b in adm.violated)
        return res
    sv = rc.solver
    grid = rc.grid.build(rc.system.N)
    try:
        barriers = calibrate_C(rc.system, grid, sv.delta, sv.c_max, sv.n_bisect)
    except CalibrationFailure as exc:
        res.code, res.status, res.diagnostic = EXIT_CALIBRATION, "calibration_failure", exc.diagnostic
        return res
    except (BarrierDegeneracy, NonConvergence) as exc:
        res.code, res.status, res.diagnostic = EXIT_CALIBRATION, "calibration_failure", str(exc)
        return res
    res.C = barriers.C
    report = iterate(rc.system, barriers, sv.initial, sv.relaxation, sv.max_iter, sv.tol, sv.residual_tol)
    res.converged = report.converged
    res.localization = report.localization_violation
    res.lp_grad, res.sup_grad = report.apriori_max_lp_grad, report.apriori_max_sup_grad
    u1, u2 = report.fields
    verdicts = full_suite(rc.system, barriers, u1, u2, sv.residual_tol)
    verdicts.append(envelope_domination_check(rc.system, barriers, sv.samples, sv.seed))
    ap = track_apriori(report)
    verdicts.append(Verdict("apriori_bounded", 0.0 if ap.bounded else 1.0, 0.0, "10x median of first 5 iterates"))
    if out is not None:
        grid.to_csv(out / "grid.csv")
        u1.to_csv(out / "u1.csv")
        u2.to_csv(out / "u2.csv")
        barriers.export(out)
        report.to_csv(out / "iterations.csv")
        (out / "summary.txt").write_text("\n".join(report.summary_lines()) + "\n")
        verdicts_to_csv(verdicts, out / "verdicts.csv")
        panels = [
            (
                f"component {i}",
                [
                    ("lower", barriers.lower(i).values, "#1f77b4"),
                    ("u", u.values, "#d62728"),
                    ("upper", barriers.upper(i).values, "#2ca02c"),
                ],
            )
            for i, u in ((1, u1), (2, u2))
        ]
        _svg_plot(out / "solution.svg", grid.nodes, panels)
    if not report.converged:
        res.code, res.status, res.diagnostic = EXIT_NONCONVERGENCE, "nonconvergence", report.message
        return res
    failed = [v for v in verdicts if not v.passed]
    if failed:
        res.code, res.status = EXIT_VERIFICATION, "verification_failure"
        res.diagnostic = "; ".join(f"{v.name}={v.measured:.6g}>{v.threshold:.6g}" for v in failed)
    return res


# -- commands -----------------------------------------------------------------


def _overrides(args) -> dict[str, str]:
    table = {"cells": "cells", "grading": "grading", "delta": "delta", "seed": "seed",
             "max_iter": "max_iter", "tol": "tol"}
    return {key: str(getattr(args, attr)) for attr, key in table.items() if getattr(args, attr, None) is not None}


def _read_config(path: str) -> str:
    return Path(path).read_text()


def cmd_admissible(args) -> int:
    try:
        text = _read_config(args.config)
        sections = parse_sections(text, SECTIONS)
        if "system" not in sections:
            raise ConfigError("missing [system] section")
        config = ExponentConfig.from_entries(sections["system"])
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = check_admissibility(config)
    print(report.table())
    for name, lhs, rhs in report.violated:
        print(f"violated: {name} (lhs {lhs:.6g}, rhs {rhs:.6g})")
    return EXIT_OK if report.admissible_w else EXIT_INADMISSIBLE


def cmd_solve(args) -> int:
    try:
        out = _make_out_dir(args.out)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        text = _read_config(args.config)
    except OSError as exc:
        text = ""
        read_error = exc
    else:
        read_error = None
    manifest = Manifest(out, "solve", args.config, text, {"overrides": repr(_overrides(args))})
    if read_error is not None:
        print(f"error: {read_error}", file=sys.stderr)
        return manifest.finish(EXIT_USAGE, "io_error", str(read_error))
    try:
        rc = RunConfig.from_text(text, _overrides(args))
        grid_desc = f"{rc.grid.domain} cells={rc.grid.cells} grading={rc.grid.grading}"
        manifest.set(grid=grid_desc, seed=rc.solver.seed)
        manifest.write()
        rc.grid.build(rc.system.N)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return manifest.finish(EXIT_USAGE, "config_error", str(exc))
    res = run_pipeline(rc, out)
    manifest.set(C=res.C)
    print(f"status: {res.status}" + (f" ({res.diagnostic})" if res.diagnostic else ""))
    return manifest.finish(res.code, res.status, res.diagnostic)


def parse_sweep(text: str) -> list[tuple[str, list[str]]]:
    """``key = v1, v2, ...`` or ``key = start:stop:count`` per line."""
    axes = []
    allowed = set().union(*SECTIONS.values())
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = values', got {raw.strip()!r}", lineno)
        key, spec = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ConfigError(f"unknown sweep key {key!r}", lineno)
        if any(k == key for k, _ in axes):
            raise ConfigError(f"duplicate sweep key {key!r}", lineno)
        if ":" in spec:
            parts = spec.split(":")
            try:
                a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
            except (ValueError, IndexError):
                raise ConfigError(f"range must be start:stop:count, got {spec!r}", lineno) from None
            if len(parts) != 3 or n < 1:
                raise ConfigError(f"range must be start:stop:count with count >= 1, got {spec!r}", lineno)
            # rounding keeps boundary values such as -0.5 exact
            values = [repr(round(float(v), 12) + 0.0) for v in np.linspace(a, b, n)]
        else:
            values = [v.strip() for v in spec.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"no values for {key!r}", lineno)
        axes.append((key, values))
    if not axes:
        raise ConfigError("sweep spec is empty")
    return axes


ATLAS_HEADER = [
    "status", "exit_code", "admissible_w", "admissible_c1", "C_star", "converged",
    "localization_violation", "max_lp_grad1", "max_lp_grad2", "max_sup_grad1", "max_sup_grad2", "diagnostic",
]


def _sweep_point(job: tuple[str, dict[str, str]]) -> tuple[list[str], float]:
    text, overrides = job
    t0 = time.perf_counter()
    try:
        rc = RunConfig.from_text(text, overrides)
        res = run_pipeline(rc)
    except (ConfigError, ValueError) as exc:
        res = PipelineResult(EXIT_USAGE, "invalid", str(exc))
    except Exception as exc:  # a failing point must never abort the sweep
        res = PipelineResult(EXIT_USAGE, "error", f"{type(exc).__name__}: {exc}")
    row = [
        res.status,
        str(res.code),
        str(res.admissible_w).lower(),
        str(res.admissible_c1).lower(),
        fmt_float(res.C),
        str(res.converged).lower(),
        fmt_float(res.localization),
        *(fmt_float(v) for v in (*res.lp_grad, *res.sup_grad)),
        res.diagnostic,
    ]
    return row, time.perf_counter() - t0


def cmd_sweep(args) -> int:
    try:
        out = _make_out_dir(args.out)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        text = _read_config(args.config)
        spec_text = Path(args.sweep).read_text()
    except OSError as exc:
        Manifest(out, "sweep", args.config, "", {})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = Manifest(
        out, "sweep", args.config, text + spec_text, {"sweep": args.sweep, "parallel": str(args.parallel)}
    )
    try:
        axes = parse_sweep(spec_text)
        RunConfig.from_text(text, _overrides(args))  # fail fast on a broken template
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return manifest.finish(EXIT_USAGE, "config_error", str(exc))
    keys = [k for k, _ in axes]
    base = _overrides(args)
    jobs = [(text, {**base, **dict(zip(keys, combo))}) for combo in itertools.product(*(v for _, v in axes))]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    with open(out / "atlas.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ATLAS_HEADER)
        for (_, ov), (row, _) in zip(jobs, results):
            w.writerow([ov[k] for k in keys] + row)
    with open(out / "atlas_runtime.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "runtime_s"])
        for k, (_, dt) in enumerate(results):
            w.writerow([k, f"{dt:.6f}"])
    n_fail = sum(1 for row, _ in results if row[0] != "ok")
    print(f"{len(results)} points, {n_fail} not ok; atlas written to {out / 'atlas.csv'}")
    return manifest.finish(EXIT_OK, "ok", f"{n_fail} of {len(results)} points not ok" if n_fail else "")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subsup", description="Sub-/supersolution solver for p-Laplacian systems.")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("admissible", help="check exponent conditions")
    a.add_argument("--config", required=True)
    a.set_defaults(func=cmd_admissible)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--cells", type=int)
        p.add_argument("--grading", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--tol", type=float)

    s = sub.add_parser("solve", help="calibrate, iterate and verify one configuration")
    common(s)
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="Cartesian parameter sweep into an atlas CSV")
    common(w)
    w.add_argument("--sweep", required=True, help="file with 'key = v1, v2' or 'key = start:stop:count' lines")
    w.add_argument("--parallel", type=int, default=1)
    w.set_defaults(func=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
