"""Command line driver.

    discbundle <verb> --config run.toml [--out DIR] [--resume field.npz]

Exit codes: 0 success, 1 tool error, 2 invalid config, 3 solver did not
converge, 4 certificate (or Hessian check) failed.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harmonic as hm
from .config import ConfigError, load_config
from .mesh import build_polygon, triangulate
from .pipeline import emit_report, run_pipeline
from .store import MeshHashMismatch, VersionMismatch, load_field

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_CERT = 0, 1, 2, 3, 4

VERBS = {
    "solve": "solve",
    "classify": "hopf",
    "certify": "certify",
    "verify-hessian": "certify",
    "report": "certify",
    "resume": "certify",
}

log = logging.getLogger("discbundle")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="discbundle", description="Harmonic sections and Levi-form certificates for disc bundles.")
    ap.add_argument("verb", choices=sorted(VERBS))
    ap.add_argument("--config", required=True, help="TOML run configuration")
    ap.add_argument("--out", help="output directory (default: the config's output key)")
    ap.add_argument("--resume", help="saved field to warm-start the solver from")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _exit_code(verb: str, report) -> int:
    if report.failed_stage is not None:
        cause = report.error.cause
        if isinstance(cause, (hm.NonConvergence, hm.BlowUp)):
            return EXIT_NONCONVERGED
        if isinstance(cause, ValueError) and report.failed_stage == "holonomy":
            return EXIT_CONFIG
        return EXIT_ERROR
    if verb == "certify" and not (report.certificate and report.certificate.passed):
        return EXIT_CERT
    if verb == "verify-hessian" and not (report.hessian and report.hessian.passed):
        return EXIT_CERT
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.verb == "resume" and not args.resume:
        print("resume needs --resume FIELD", file=sys.stderr)
        return EXIT_CONFIG
    init = None
    if args.resume:
        mesh = triangulate(build_polygon(cfg.genus), cfg.resolution)
        try:
            init = load_field(args.resume, mesh)
        except (MeshHashMismatch, VersionMismatch) as exc:
            print(f"cannot resume: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except OSError as exc:
            print(f"cannot read field: {exc}", file=sys.stderr)
            return EXIT_ERROR
    points = cfg.hessian_points if args.verb == "verify-hessian" else 0
    report = run_pipeline(cfg, VERBS[args.verb], init=init, hessian_points=points)
    out = args.out or cfg.output
    try:
        emit_report(report, out)
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for stage in report.completed:
        log.info("%s: %.2fs", stage, report.timings.get(stage, 0.0))
    if report.error is not None:
        print(str(report.error), file=sys.stderr)
    tag = report.classification.tag if report.classification else "-"
    line = f"{args.verb}: case {cfg.case} -> tag {tag}"
    if report.certificate is not None:
        c = report.certificate
        line += f", certificate {'pass' if c.passed else 'fail'} (min bound {c.min_bound:.3e})"
    if report.hessian is not None:
        line += f", Hessian check max rel error {report.hessian.max_rel_error:.2e}"
    print(line)
    print(f"report written to {out}")
    return _exit_code(args.verb, report)


if __name__ == "__main__":
    sys.exit(main())
