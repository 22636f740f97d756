"""Command-line front end.

Subcommands mirror the verification pipeline: ``torsion`` sweeps the tower
levels of named operators, ``spectrum`` reports pointwise spectral structure
and its regularity, ``algebra`` checks commutativity and module/ring closure,
``blockdiag`` integrates annihilator one-forms, pushes operators through a
chart and verifies the block partition.

Reports are printed as markdown; ``--json OUT`` writes a machine-readable
report that is byte-identical across reruns with the same inputs (timing is
reported on stdout only).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import algebra as alg
from . import charts as ch
from . import fields as fl
from . import spectral as sp
from .errors import TorsionLabError
from .expr import SampleDomain, eval_many, format_expr, sample_points
from .manifest import DEFAULT_SAMPLES, Manifest, load_manifest

SCHEMA_VERSION = 1


@dataclass
class Report:
    """Result of one CLI command: per-check verdicts plus an echo of inputs."""

    command: str
    manifest: str
    seed: int
    options: dict
    checks: list[dict] = field(default_factory=list)
    elapsed_seconds: float = 0.0

    def add(self, name: str, passed: bool, **details) -> None:
        self.checks.append({"name": name, "passed": bool(passed), **details})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_json_dict(self) -> dict:
        # timing deliberately excluded: reruns must be byte-identical
        return {
            "schema": SCHEMA_VERSION,
            "command": self.command,
            "manifest": os.path.basename(self.manifest),
            "seed": self.seed,
            "options": self.options,
            "checks": self.checks,
            "passed": self.passed,
        }

    def to_markdown(self) -> str:
        lines = [f"# torsionlab {self.command}",
                 "",
                 f"- manifest: `{self.manifest}`",
                 f"- seed: {self.seed}",
                 f"- options: `{json.dumps(self.options, sort_keys=True)}`",
                 ""]
        lines.append("| check | verdict | detail |")
        lines.append("|---|---|---|")
        for c in self.checks:
            detail = {k: v for k, v in c.items() if k not in ("name", "passed")}
            cell = json.dumps(detail, sort_keys=True).replace("|", "\\|")
            lines.append(f"| {c['name']} | {'PASS' if c['passed'] else 'FAIL'} | `{cell}` |")
        lines.append("")
        lines.append(f"overall: **{'PASS' if self.passed else 'FAIL'}** "
                     f"({self.elapsed_seconds:.2f}s)")
        return "\n".join(lines)


def _thread_cap() -> int:
    raw = os.environ.get("TORSIONLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_jobs(func, jobs):
    cap = _thread_cap()
    if cap <= 1 or len(jobs) <= 1:
        return [func(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=cap) as pool:
        return list(pool.map(func, jobs))


def _resolve_domain(man: Manifest, args) -> SampleDomain:
    dom = man.domain
    if getattr(args, "seed", None) is not None:
        dom = SampleDomain(box=dom.box, guards=dom.guards,
                           guard_eps=dom.guard_eps, seed=args.seed)
    return dom


def _select_operators(man: Manifest, names: list[str]) -> list[str]:
    if not names:
        return sorted(man.operators)
    for name in names:
        if name not in man.operators:
            raise TorsionLabError(
                f"operator {name!r} not in manifest (have: {', '.join(sorted(man.operators))})")
    return names


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_torsion(args) -> Report:
    man = load_manifest(args.manifest)
    domain = _resolve_domain(man, args)
    level = args.level or man.level
    n_pts = args.samples or DEFAULT_SAMPLES
    tol = args.tol if args.tol is not None else man.tolerances["vanish_rel"]
    names = _select_operators(man, args.operator)
    report = Report("torsion", man.path, domain.seed,
                    {"operators": names, "level": level, "samples": n_pts, "tol": tol})

    def run(name):
        op = man.operators[name]
        return [fl.is_vanishing(op, m, domain, n_pts, tol) for m in range(1, level + 1)]

    for name, reps in zip(names, _map_jobs(run, names)):
        first = next((r.level for r in reps if r.vanishing), None)
        for r in reps:
            report.add(f"{name} tau^({r.level})", True,
                       residual=r.max_residual, vanishing=r.vanishing)
        report.add(f"{name} vanishes by level {level}", first is not None,
                   first_vanishing_level=first)
    return report


def cmd_spectrum(args) -> Report:
    man = load_manifest(args.manifest)
    domain = _resolve_domain(man, args)
    n_pts = args.samples or DEFAULT_SAMPLES
    names = _select_operators(man, args.operator)
    cluster = man.tolerances["cluster"]
    rank_tol = man.tolerances["rank"]
    report = Report("spectrum", man.path, domain.seed,
                    {"operators": names, "samples": n_pts})
    pts = sample_points(domain, n_pts)
    for name in names:
        op = man.operators[name]
        try:
            spec = sp.spectrum_at(op, pts[0], cluster, rank_tol)
            degree = sp.minimal_poly_degree_at(op, pts[0], cluster, rank_tol)
            reg = sp.regularity_check(op, domain, n_pts, cluster, rank_tol)
        except TorsionLabError as exc:
            report.add(f"{name} spectrum", False, error=str(exc))
            continue
        report.add(
            f"{name} spectrum", reg.constant,
            eigenvalues=[round(v, 12) for v in spec.eigenvalues],
            riesz=list(spec.riesz),
            ranks=list(spec.ranks),
            minimal_poly_degree=degree,
            annihilator_dims=[b.shape[0] for b in spec.annihilators],
            regular=reg.constant,
            detail=reg.details,
        )
    return report


def cmd_algebra(args) -> Report:
    man = load_manifest(args.manifest)
    domain = _resolve_domain(man, args)
    level = args.level or man.level
    n_pts = args.samples or DEFAULT_SAMPLES
    tol = args.tol if args.tol is not None else man.tolerances["vanish_rel"]
    names = _select_operators(man, args.operator)
    ops = [man.operators[n] for n in names]
    report = Report("algebra", man.path, domain.seed,
                    {"operators": names, "level": level, "combos": args.combos,
                     "samples": n_pts, "tol": tol})
    try:
        rep = alg.check_algebra(ops, level, domain, n_pts, args.combos, tol)
    except TorsionLabError as exc:
        report.add("algebra closure", False, error=str(exc))
        return report
    report.add("commutativity", rep.commute_ok, worst_residual=rep.commute_worst)
    report.add("module closure", rep.module_closed, worst_residual=rep.module_worst)
    report.add("ring closure", rep.ring_closed, worst_residual=rep.ring_worst)
    pts = sample_points(domain, 1)
    try:
        exps = alg.cyclic_basis(ops[0], pts[0], man.tolerances["cluster"],
                                man.tolerances["rank"])
        report.add(f"{names[0]} cyclic basis", True, exponents=exps)
    except TorsionLabError as exc:
        report.add(f"{names[0]} cyclic basis", False, error=str(exc))
    return report


def cmd_blockdiag(args) -> Report:
    man = load_manifest(args.manifest)
    domain = _resolve_domain(man, args)
    n_pts = args.samples or DEFAULT_SAMPLES
    tol = args.tol if args.tol is not None else man.tolerances["block"]
    names = _select_operators(man, args.operator)
    if args.chart not in man.charts:
        raise TorsionLabError(
            f"chart {args.chart!r} not in manifest (have: {', '.join(sorted(man.charts))})")
    chart = man.charts[args.chart]
    hint = None
    if args.hint:
        hint = ch.BlockPartition(tuple(int(s) for s in args.hint.split(",")))
    report = Report("blockdiag", man.path, domain.seed,
                    {"operators": names, "chart": args.chart, "samples": n_pts,
                     "tol": tol, "hint": args.hint})

    for name, forms in man.annihilators.items():
        for idx, form in enumerate(forms):
            try:
                potential = ch.integrate_exact_one_form(form)
                report.add(f"integrate {name}[{idx}]", True,
                           potential=format_expr(potential, man.chart))
            except TorsionLabError as exc:
                report.add(f"integrate {name}[{idx}]", False, error=str(exc))

    pts = sample_points(domain, n_pts)
    golden = man.pushforward_golden.get(args.chart, {})
    ys = chart.forward_many(pts)

    def run(name):
        return ch.pushforward_many(man.operators[name], chart, pts)

    pushed = dict(zip(names, _map_jobs(run, names)))
    for name in names:
        mats = pushed[name]
        part, residual = ch.detect_blocks(mats, hint, tol)
        ok = residual <= tol if hint is not None else True
        report.add(f"{name} blocks", ok,
                   partition="|".join(str(s) for s in part.sizes),
                   off_block_residual=residual)
        if name in golden:
            expected = np.empty_like(mats)
            for i in range(man.chart.dim):
                for j in range(man.chart.dim):
                    expected[:, i, j] = eval_many(golden[name][i][j], ys)
            scale = 1.0 + np.max(np.abs(expected))
            err = float(np.max(np.abs(mats - expected)) / scale)
            report.add(f"{name} matches printed matrix", err <= tol, residual=err)
    return report


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="torsionlab",
        description="Torsion towers, spectra and block-diagonalization of operator fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", required=True, help="manifest JSON file (or bundled fixture name)")
        p.add_argument("--operator", action="append", default=[],
                       help="operator name (repeatable; default: all)")
        p.add_argument("--samples", type=int, default=None, help="sample point count")
        p.add_argument("--seed", type=int, default=None, help="override the domain seed")
        p.add_argument("--tol", type=float, default=None, help="override the check tolerance")
        p.add_argument("--json", dest="json_out", default=None, help="write JSON report here")

    p = sub.add_parser("torsion", help="first vanishing torsion level per operator")
    common(p)
    p.add_argument("--level", type=int, default=None, help="highest level to test")
    p.set_defaults(func=cmd_torsion)

    p = sub.add_parser("spectrum", help="pointwise spectra and regularity")
    common(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("algebra", help="commutativity and module/ring closure")
    common(p)
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--combos", type=int, default=50, help="random combinations to draw")
    p.set_defaults(func=cmd_algebra)

    p = sub.add_parser("blockdiag", help="pushforward and block structure under a chart")
    common(p)
    p.add_argument("--chart", required=True, help="name of the coordinate change")
    p.add_argument("--hint", default=None, help="comma-separated block sizes to verify")
    p.set_defaults(func=cmd_blockdiag)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        report: Report = args.func(args)
    except TorsionLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report.elapsed_seconds = time.perf_counter() - t0
    print(report.to_markdown())
    if args.json_out:
        payload = json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
        with open(args.json_out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
