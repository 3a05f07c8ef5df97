"""Holonomy -> mesh -> solve -> classify -> Hopf -> certify, with reports on disk."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import harmonic as hm
from . import leviform as lf
from . import moebius as mb
from .config import RunConfig
from .mesh import TriMesh, build_polygon, gradient_stencil, triangulate
from .store import save_field

STAGES = ("holonomy", "mesh", "solve", "classify", "hopf", "certify")
REPORT_NAME = "report.json"
TIMINGS_NAME = "timings.json"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineReport:
    config: RunConfig
    completed: list = field(default_factory=list)
    failed_stage: str | None = None
    error: StageError | None = None
    rep: mb.HolonomyRep | None = None
    mesh: TriMesh | None = None
    map_field: hm.MapField | None = None
    derivs: hm.DerivField | None = None
    classification: hm.BundleCase | None = None
    solver: dict | None = None
    hopf: dict | None = None
    hopf_field: hm.HopfField | None = None
    hopf_dbar: np.ndarray | None = None
    psi: lf.WeightFunction | None = None
    psi_info: dict | None = None
    certificate: lf.CertReport | None = None
    hessian: lf.HessianCheck | None = None
    manifest: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failed_stage is None

    def document(self) -> dict:
        """JSON-ready summary; wall-clock timings are kept out for reproducibility."""
        cls = self.classification
        return {
            "config": self.config.to_dict(),
            "completed_stages": list(self.completed),
            "failed_stage": self.failed_stage,
            "error": None if self.error is None else str(self.error),
            "holonomy": None if self.rep is None else self.rep.to_record(),
            "mesh": None if self.mesh is None else {
                "hash": self.mesh.hash(),
                "nodes": self.mesh.n_nodes,
                "triangles": int(len(self.mesh.triangles)),
                "max_edge": self.mesh.max_edge(),
                "min_angle_deg": self.mesh.min_angle(),
            },
            "classification": None if cls is None else {"tag": cls.tag, "diagnostics": cls.diagnostics},
            "solver": self.solver,
            "hopf": self.hopf,
            "psi": self.psi_info,
            "certificate": None if self.certificate is None else self.certificate.summary(),
            "hessian_check": None if self.hessian is None else {
                "samples": self.hessian.samples,
                "rejected": self.hessian.rejected,
                "max_rel_error": self.hessian.max_rel_error,
                "passed": self.hessian.passed,
            },
            "manifest": dict(sorted(self.manifest.items())),
        }


def _stage_index(name: str) -> int:
    if name not in STAGES:
        raise ValueError(f"unknown stage {name!r}")
    return STAGES.index(name)


def run_pipeline(
    config: RunConfig,
    upto: str = "certify",
    init: hm.MapField | None = None,
    hessian_points: int = 0,
) -> PipelineReport:
    """Run the stages up to `upto`; a failing stage ends the run with a partial report."""
    last = _stage_index(upto)
    rep_ = PipelineReport(config)
    diverged = None

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:  # recorded in the report, not raised
            rep_.failed_stage = name
            rep_.error = StageError(name, exc)
            return False
        finally:
            rep_.timings[name] = time.perf_counter() - t0
        rep_.completed.append(name)
        return True

    def do_holonomy():
        rep_.rep = mb.example_holonomy(config.case, **config.holonomy_params())

    def do_mesh():
        rep_.mesh = triangulate(build_polygon(config.genus), config.resolution)
        gradient_stencil(rep_.mesh)

    def do_solve():
        nonlocal diverged
        scfg = hm.SolverConfig(
            tol=config.tol, max_iters=config.max_iters, continuation_steps=config.continuation_steps
        )
        try:
            f = hm.solve(rep_.rep, rep_.mesh, scfg, init=init)
        except (hm.BlowUp, hm.NonConvergence) as exc:
            if not mb.has_common_boundary_fixed_point(rep_.rep):
                raise
            # no harmonic section exists: the divergence itself is the case IV signature
            diverged = exc
            rep_.solver = {"converged": False, "diverged": f"{type(exc).__name__}: {exc}"}
            return
        rep_.map_field = f
        rep_.derivs = hm.derivatives(rep_.mesh, f)
        rep_.solver = {
            "converged": f.converged,
            "iterations": f.iterations,
            "residual": f.residual,
            "energy": f.energy_history[-1] if f.energy_history else hm.energy(rep_.mesh, f),
            "max_abs_h": float(np.abs(f.values).max()),
            "link_residual": hm.link_residual(rep_.mesh, f),
        }

    def do_classify():
        if diverged is not None:
            rep_.classification = hm.BundleCase("IV", {"reason": "solver diverged with a common boundary fixed point"})
        else:
            rep_.classification = hm.classify(rep_.mesh, rep_.map_field, rep_.derivs, config.theta_small)

    def do_hopf():
        if rep_.map_field is None:
            rep_.hopf = {"available": False}
            return
        hp = hm.hopf(rep_.mesh, rep_.map_field, rep_.derivs)
        rep_.hopf_field = hp
        rep_.hopf_dbar = hm.hopf_dbar(rep_.mesh, hp)
        sup_phi = float(np.abs(hp.phi).max())
        try:
            count = hm.count_hopf_zeros(rep_.mesh, hp)
            zeros = [[z.real, z.imag, k] for z, k in hm.locate_hopf_zeros(rep_.mesh, hp)]
            note = ""
        except ValueError as exc:  # vanishing Hopf differential
            count, zeros, note = None, [], str(exc)
        rep_.hopf = {
            "available": True,
            "sup_phi": sup_phi,
            "sup_dbar_phi": float(np.abs(rep_.hopf_dbar).max()),
            "zero_count": count,
            "zeros": zeros,
            "note": note,
        }

    def do_certify():
        if rep_.map_field is None:
            rep_.psi_info = {"status": "no harmonic section"}
            return
        mesh, f, d = rep_.mesh, rep_.map_field, rep_.derivs
        delta = float(np.abs(f.values).max())
        reason = ""
        try:
            psi = lf.build_psi(
                mesh, d, config.eps_v, config.c_start, delta, config.c_shrink, config.c_budget
            )
            status = "ok"
        except (lf.EmptyV, lf.NoFeasibleC) as exc:
            # certify the trivial weight so the report still carries a bound
            psi = lf.WeightFunction.zero(mesh.n_nodes)
            status = type(exc).__name__
            reason = f"{status}: {exc}"
        rep_.psi = psi
        rep_.psi_info = {
            "status": status,
            "c": psi.c,
            "radius": psi.radius if len(psi.centers) else None,
            "centers": [[z.real, z.imag] for z in psi.centers],
            "V_nodes": int(psi.V.sum()),
        }
        grid = lf.zeta_grid(config.zeta_radii, config.zeta_angles)
        cert = lf.certify_takeuchi(mesh, f, d, psi, grid)
        if reason:
            cert.passed = False
            cert.reason = reason
        rep_.certificate = cert

    actions = [do_holonomy, do_mesh, do_solve, do_classify, do_hopf, do_certify]
    for name, fn in zip(STAGES[: last + 1], actions):
        if not stage(name, fn):
            break
    if hessian_points and rep_.ok and rep_.map_field is not None:
        t0 = time.perf_counter()
        rng = np.random.default_rng(config.seed)
        rep_.hessian = lf.hessian_check(rep_.mesh, rep_.map_field, rep_.derivs, rep_.psi, hessian_points, rng)
        rep_.timings["hessian"] = time.perf_counter() - t0
    return rep_


# --- reports -----------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _num(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_report(report: PipelineReport, directory) -> dict:
    """Write report.json and the CSV grids; returns {file name: sha256}.

    Every file except timings.json is a function of the config alone.
    """
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {d}: {exc}") from exc
    written: list[Path] = []
    mesh = report.mesh
    if mesh is not None:
        written += mesh.export_csv(d)
    if report.map_field is not None:
        written.append(save_field(d / "field.npz", report.map_field, mesh, allow_unconverged=True))
    if report.hopf_field is not None:
        phi, dbar = report.hopf_field.phi, report.hopf_dbar
        p = d / "hopf.csv"
        _write_csv(p, ["node", "re_z", "im_z", "re_phi", "im_phi", "abs_dbar_phi"], (
            [i, _num(z.real), _num(z.imag), _num(v.real), _num(v.imag), _num(abs(b))]
            for i, (z, v, b) in enumerate(zip(mesh.nodes, phi, dbar))
        ))
        written.append(p)
    cert = report.certificate
    if cert is not None:
        p = d / "lower_bound.csv"
        _write_csv(p, ["node", "re_z", "im_z", "bound"], (
            [i, _num(z.real), _num(z.imag), _num(b)] for i, (z, b) in enumerate(zip(mesh.nodes, cert.node_bound))
        ))
        written.append(p)
        p = d / "levi_minima.csv"
        _write_csv(p, ["sample", "re_zeta", "im_zeta", "node", "re_z", "im_z", "lambda_min"], (
            [j, _num(w.real), _num(w.imag), int(k), _num(mesh.nodes[k].real), _num(mesh.nodes[k].imag), _num(v)]
            for j, (w, k, v) in enumerate(zip(cert.zeta, cert.grid_argmin, cert.grid_min))
        ))
        written.append(p)
    report.manifest = {p.name: _sha256(p) for p in written}
    doc_path = d / REPORT_NAME
    doc_path.write_text(json.dumps(report.document(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    timings = {k: round(v, 6) for k, v in report.timings.items()}
    (d / TIMINGS_NAME).write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {**report.manifest, REPORT_NAME: _sha256(doc_path)}


def verify_manifest(directory) -> bool:
    """Re-hash every file listed in report.json."""
    d = Path(directory)
    doc = json.loads((d / REPORT_NAME).read_text(encoding="utf-8"))
    return all((d / name).exists() and _sha256(d / name) == h for name, h in doc["manifest"].items())
