"""Equivariant harmonic sections, their Hopf differential and the case table.

Unknowns are the values of h at orbit representatives; every other boundary
node is slaved to its representative through rho(word), so equivariance holds
exactly at every iterate.

The discrete harmonic section is the root of the stencil tension at the
representatives (collocation), found by damped Newton.  A P1 energy descent,
monotone by construction, globalises the iteration when Newton stalls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import moebius as mb
from .mesh import TriMesh, gradient_stencil
from .moebius import HolonomyRep

TOL = 1e-8
THETA_SMALL = 1e-3


class NonConvergence(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class BlowUp(RuntimeError):
    pass


class ZeroOnContour(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol: float = TOL
    max_iters: int = 60
    continuation_steps: int = 4
    blowup_margin: float = 1e-6
    flow_tol: float = 1e-4
    armijo: float = 1e-4


@dataclass
class MapField:
    values: np.ndarray  # h at every mesh node
    rep: HolonomyRep
    residual: float = float("nan")
    iterations: int = 0
    energy_history: list = field(default_factory=list)
    converged: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if np.any(np.abs(self.values) >= 1.0):
            raise ValueError("map field leaves the open unit disc")


@dataclass
class DerivField:
    hz: np.ndarray
    hzb: np.ndarray
    hzzb: np.ndarray


@dataclass
class HopfField:
    phi: np.ndarray


@dataclass
class BundleCase:
    tag: str
    diagnostics: dict


# --- node values from representative values ---------------------------------


def node_values(mesh: TriMesh, rep: HolonomyRep, rep_values: np.ndarray) -> np.ndarray:
    """Spread values at orbit representatives to all nodes through rho."""
    h = np.asarray(rep_values, dtype=complex)[mesh.rep_of].copy()
    for w, idx in mesh.distinct_words().items():
        if w:
            h[idx] = mb.apply(rep.evaluate(w), h[idx])
    return h


def equivariant_field(mesh: TriMesh, rep: HolonomyRep, f) -> MapField:
    """Sample f at representatives and extend equivariantly."""
    reps = mesh.rep_of
    vals = np.zeros(mesh.n_nodes, dtype=complex)
    dofs = mesh.dofs
    vals[dofs] = f(mesh.nodes[dofs])
    return MapField(node_values(mesh, rep, vals[reps]), rep)


def link_residual(mesh: TriMesh, field_: MapField) -> float:
    res = 0.0
    for r, n, w in mesh.boundary_links:
        res = max(res, abs(field_.values[n] - mb.apply(field_.rep.evaluate(w), field_.values[r])))
    return res


# --- P1 energy ----------------------------------------------------------------


def _element_geometry(mesh: TriMesh):
    if "p1" not in mesh._cache:
        p = mesh.nodes[mesh.triangles]
        area = mesh.areas()
        grad = np.stack([1j * (p[:, 2] - p[:, 1]), 1j * (p[:, 0] - p[:, 2]), 1j * (p[:, 1] - p[:, 0])], 1)
        grad /= 2 * area[:, None]
        K = (grad[:, :, None] * grad[:, None, :].conj()).real
        mesh._cache["p1"] = (area, grad, K)
    return mesh._cache["p1"]


def energy_density_terms(mesh: TriMesh, h: np.ndarray):
    area, _, K = _element_geometry(mesh)
    hv = h[mesh.triangles]
    u, v = hv.real, hv.imag
    Q = np.einsum("ti,tij,tj->t", u, K, u) + np.einsum("ti,tij,tj->t", v, K, v)
    s = np.abs(hv) ** 2
    W = (1.0 / (1.0 - s) ** 2).mean(1)
    return area, Q, W


def energy_values(mesh: TriMesh, h: np.ndarray) -> float:
    if np.any(np.abs(h) >= 1.0):
        raise ValueError("energy: |h| >= 1 at a node")
    area, Q, W = energy_density_terms(mesh, h)
    # 4(|h_z|^2 + |h_zb|^2) = 2|grad h|^2 against the curvature -1 metric
    return float(math.fsum(2.0 * area * Q * W))


def energy(mesh: TriMesh, field_: MapField) -> float:
    """Dirichlet energy of h into the Poincare disc, integrated over the polygon."""
    return energy_values(mesh, field_.values)


def _grad_hess_nodes(mesh: TriMesh, h: np.ndarray):
    """Gradient and Hessian of the energy w.r.t. (Re h_n, Im h_n) at every node."""
    area, _, K = _element_geometry(mesh)
    tri = mesh.triangles
    hv = h[tri]
    u, v = hv.real, hv.imag
    Ku = np.einsum("tij,tj->ti", K, u)
    Kv = np.einsum("tij,tj->ti", K, v)
    Q = (u * Ku).sum(1) + (v * Kv).sum(1)
    s = np.abs(hv) ** 2
    w0 = 1.0 / (1.0 - s) ** 2
    w1 = 2.0 / (1.0 - s) ** 3
    w2 = 6.0 / (1.0 - s) ** 4
    W = w0.mean(1)
    gQ = 2.0 * np.concatenate([Ku, Kv], 1)
    gW = (2.0 / 3.0) * np.concatenate([w1 * u, w1 * v], 1)
    c = 2.0 * area
    g_el = c[:, None] * (W[:, None] * gQ + Q[:, None] * gW)

    T = len(tri)
    HQ = np.zeros((T, 6, 6))
    HQ[:, :3, :3] = 2.0 * K
    HQ[:, 3:, 3:] = 2.0 * K
    HW = np.zeros((T, 6, 6))
    k = np.arange(3)
    HW[:, k, k] = (4.0 * w2 * u * u + 2.0 * w1) / 3.0
    HW[:, k + 3, k + 3] = (4.0 * w2 * v * v + 2.0 * w1) / 3.0
    HW[:, k, k + 3] = 4.0 * w2 * u * v / 3.0
    HW[:, k + 3, k] = HW[:, k, k + 3]
    H_el = c[:, None, None] * (
        W[:, None, None] * HQ
        + Q[:, None, None] * HW
        + gQ[:, :, None] * gW[:, None, :]
        + gW[:, :, None] * gQ[:, None, :]
    )
    idx = np.concatenate([2 * tri, 2 * tri + 1], 1)
    N2 = 2 * mesh.n_nodes
    g = np.zeros(N2)
    np.add.at(g, idx.ravel(), g_el.ravel())
    rows = np.repeat(idx, 6, axis=1).ravel()
    cols = np.tile(idx, (1, 6)).ravel()
    H = sp.csr_matrix((H_el.ravel(), (rows, cols)), shape=(N2, N2))
    return g, H


class _Reduction:
    """Chain rule from node values to representative values."""

    def __init__(self, mesh: TriMesh, rep: HolonomyRep):
        self.mesh = mesh
        self.rep = rep
        self.dofs = mesh.dofs
        self.dof_of = np.full(mesh.n_nodes, -1)
        self.dof_of[self.dofs] = np.arange(len(self.dofs))
        self.col = self.dof_of[mesh.rep_of]
        self.transforms = {w: rep.evaluate(w) for w in mesh.distinct_words()}
        # orbit mass in representative coordinates, for the residual scaling
        M = mesh.lumped_mass()
        scale = np.ones(mesh.n_nodes)
        for w, idx in mesh.distinct_words().items():
            if w:
                d = mb.apply_deriv(mesh.group.evaluate(w), mesh.nodes[mesh.rep_of[idx]])
                scale[idx] = 1.0 / np.abs(d) ** 2
        self.dof_mass = np.bincount(self.col, weights=M * scale, minlength=len(self.dofs))

    def derivs(self, u_rep_nodes: np.ndarray):
        """First and second complex derivatives of each node's slaving map."""
        d1 = np.ones(self.mesh.n_nodes, dtype=complex)
        d2 = np.zeros(self.mesh.n_nodes, dtype=complex)
        for w, idx in self.mesh.distinct_words().items():
            if w:
                m = self.transforms[w]
                d1[idx] = mb.apply_deriv(m, u_rep_nodes[idx])
                d2[idx] = mb.apply_deriv2(m, u_rep_nodes[idx])
        return d1, d2

    def reduce(self, u: np.ndarray, g: np.ndarray, H: sp.csr_matrix):
        N = self.mesh.n_nodes
        D = len(self.dofs)
        urn = u[self.col]
        d1, d2 = self.derivs(urn)
        p, q = d1.real, d1.imag
        n = np.arange(N)
        rows = np.concatenate([2 * n, 2 * n, 2 * n + 1, 2 * n + 1])
        cols = np.concatenate([2 * self.col, 2 * self.col + 1, 2 * self.col, 2 * self.col + 1])
        vals = np.concatenate([p, -q, q, p])
        P = sp.csr_matrix((vals, (rows, cols)), shape=(2 * N, 2 * D))
        gD = P.T @ g
        HD = (P.T @ H @ P).tocsr()
        gu, gv = g[0::2], g[1::2]
        r2, s2 = d2.real, d2.imag
        a = gu * r2 + gv * s2
        b = -gu * s2 + gv * r2
        c = np.concatenate([2 * self.col, 2 * self.col, 2 * self.col + 1, 2 * self.col + 1])
        d = np.concatenate([2 * self.col, 2 * self.col + 1, 2 * self.col, 2 * self.col + 1])
        S = sp.csr_matrix((np.concatenate([a, b, b, -a]), (c, d)), shape=(2 * D, 2 * D))
        return gD, (HD + S).tocsr()

    def residual(self, u: np.ndarray, gD: np.ndarray) -> np.ndarray:
        """Discrete tension at representatives, normalised to match h_zzb + ..."""
        gc = gD[0::2] + 1j * gD[1::2]
        return -gc * (1.0 - np.abs(u) ** 2) ** 2 / (16.0 * self.dof_mass)


def fe_tension(mesh: TriMesh, field_: MapField) -> np.ndarray:
    """Variational (finite element) tension at orbit representatives."""
    red = _Reduction(mesh, field_.rep)
    u = field_.values[red.dofs]
    g, H = _grad_hess_nodes(mesh, field_.values)
    gD, _ = red.reduce(u, g, H)
    return red.residual(u, gD)


def _check_compatible(mesh: TriMesh, rep: HolonomyRep):
    if rep.genus != mesh.group.genus or len(rep.generators) != len(mesh.group.generators):
        raise ValueError("holonomy does not match the mesh's surface group")


def default_init(mesh: TriMesh, rep: HolonomyRep) -> MapField:
    if rep.case_label in ("I", "II", None):
        return equivariant_field(mesh, rep, lambda z: z)
    return equivariant_field(mesh, rep, lambda z: np.zeros_like(z))


def energy_flow(
    mesh: TriMesh,
    rep: HolonomyRep,
    init: MapField,
    config: SolverConfig = SolverConfig(),
    tol: float | None = None,
) -> MapField:
    """Damped Newton descent of the P1 energy; every accepted step lowers the energy."""
    _check_compatible(mesh, rep)
    tol = config.tol if tol is None else tol
    red = _Reduction(mesh, rep)
    u = init.values[red.dofs].copy()
    h = node_values(mesh, rep, u[red.col])
    E = energy_values(mesh, h)
    history = [E]
    mu = 0.0
    res = np.inf
    for it in range(config.max_iters + 1):
        g, H = _grad_hess_nodes(mesh, h)
        gD, HD = red.reduce(u, g, H)
        res = float(np.abs(red.residual(u, gD)).max()) if len(u) else 0.0
        if res < tol:
            return MapField(h, rep, res, it, history, True)
        if it == config.max_iters:
            break
        diag_scale = float(np.abs(HD.diagonal()).mean())
        step = None
        mu = mu / 4.0
        for _ in range(40):
            A = HD if mu == 0 else HD + mu * diag_scale * sp.identity(HD.shape[0], format="csr")
            try:
                d = spla.splu(A.tocsc()).solve(-gD)
            except RuntimeError:
                d = None
            if d is not None and np.all(np.isfinite(d)) and gD @ d < 0:
                step = d
                break
            mu = max(4.0 * mu, 1e-6)
        if step is None:
            raise NonConvergence(it, res)
        dc = step[0::2] + 1j * step[1::2]
        slope = float(gD @ step)
        alpha = 1.0
        accepted = False
        while alpha > 1e-12:
            u_new = u + alpha * dc
            if np.all(np.abs(u_new) < 1.0):
                h_new = node_values(mesh, rep, u_new[red.col])
                if np.all(np.abs(h_new) < 1.0):
                    E_new = energy_values(mesh, h_new)
                    # predicted decrease below round-off: take the step as is
                    noise = 64 * np.finfo(float).eps * abs(E)
                    if E_new <= E + config.armijo * alpha * slope or (
                        -alpha * slope < noise and E_new <= E + noise
                    ):
                        accepted = True
                        break
            alpha *= 0.5
        if not accepted:
            raise NonConvergence(it, res)
        u, h, E = u_new, h_new, E_new
        history.append(E)
        if np.abs(h).max() > 1.0 - config.blowup_margin:
            raise BlowUp(f"|h| reached {np.abs(h).max():.8f} at iteration {it + 1}")
    raise NonConvergence(config.max_iters, res)


class _Collocation:
    """Stencil tension at orbit representatives as a function of their values."""

    def __init__(self, mesh: TriMesh, rep: HolonomyRep):
        self.mesh = mesh
        self.rep = rep
        self.st = gradient_stencil(mesh)
        self.dofs = mesh.dofs
        dof_of = np.full(mesh.n_nodes, -1)
        dof_of[self.dofs] = np.arange(len(self.dofs))
        self.node_col = dof_of[mesh.rep_of]
        ext_words = list(mesh.words) + [
            mb.reduce_word(w + mesh.words[j]) for j, w in zip(self.st.ghost_node, self.st.ghost_word)
        ]
        self.ext_col = np.concatenate([self.node_col, self.node_col[self.st.ghost_node]])
        groups: dict = {}
        for k, w in enumerate(ext_words):
            groups.setdefault(w, []).append(k)
        self.groups = [(rep.evaluate(w), np.array(ix)) for w, ix in groups.items() if w]
        n_ext = len(ext_words)
        self.R = sp.csr_matrix(
            (np.ones(n_ext), (np.arange(n_ext), self.ext_col)), shape=(n_ext, len(self.dofs))
        )
        Lsel = self.st.dzzb[self.dofs]
        self.Dz = self.st.dz[self.dofs]
        self.Dzb = self.st.dzb[self.dofs]
        self.L = Lsel

    def ext(self, u: np.ndarray):
        e = u[self.ext_col].astype(complex)
        d1 = np.ones(len(e), dtype=complex)
        for m, ix in self.groups:
            base = e[ix]
            e[ix] = mb.apply(m, base)
            d1[ix] = mb.apply_deriv(m, base)
        return e, d1

    def residual(self, u: np.ndarray) -> np.ndarray:
        e, _ = self.ext(u)
        P, Q = self.Dz @ e, self.Dzb @ e
        return self.L @ e + 2.0 * u.conj() * P * Q / (1.0 - np.abs(u) ** 2)

    def jacobian(self, u: np.ndarray):
        e, d1 = self.ext(u)
        P, Q = self.Dz @ e, self.Dzb @ e
        s = 1.0 - np.abs(u) ** 2
        f = u.conj() / s
        A = self.L + sp.diags(2.0 * f * Q) @ self.Dz + sp.diags(2.0 * f * P) @ self.Dzb
        C = (A @ sp.diags(d1) @ self.R).tocsr()
        C = C + sp.diags(2.0 * P * Q * u.conj() ** 2 / s**2)
        Bd = 2.0 * P * Q / s**2
        Cr, Ci = C.real, C.imag
        Br, Bi = sp.diags(Bd.real), sp.diags(Bd.imag)
        J = sp.bmat([[Cr + Br, -Ci + Bi], [Ci + Bi, Cr - Br]], format="csc")
        return J


class _NewtonLinearSolver:
    """ILU-preconditioned GMRES; the factorisation is reused while it stays effective."""

    def __init__(self, rtol: float = 1e-10, max_inner: int = 60):
        self.rtol = rtol
        self.max_inner = max_inner
        self.ilu = None

    def _factor(self, J):
        try:
            self.ilu = spla.spilu(J, drop_tol=1e-4, fill_factor=10, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError:
            self.ilu = None

    def _gmres(self, J, b):
        M = spla.LinearOperator(J.shape, self.ilu.solve)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.gmres(
            J, b, M=M, rtol=self.rtol, restart=self.max_inner, maxiter=1,
            callback=cb, callback_type="pr_norm",
        )
        ok = info == 0 and np.all(np.isfinite(x))
        return (x if ok else None), count[0]

    def solve(self, J, b):
        if not np.any(b):
            return np.zeros_like(b)
        if self.ilu is not None:
            x, n = self._gmres(J, b)
            if x is not None and n < self.max_inner // 3:
                return x
        self._factor(J)
        if self.ilu is not None:
            x, _ = self._gmres(J, b)
            if x is not None:
                return x
        try:
            return spla.splu(J, permc_spec="MMD_AT_PLUS_A").solve(b)
        except RuntimeError:
            return None


def collocation_newton(
    mesh: TriMesh, rep: HolonomyRep, init: MapField, config: SolverConfig = SolverConfig()
) -> MapField:
    """Newton on the stencil tension equations with a residual-norm line search."""
    _check_compatible(mesh, rep)
    col = _Collocation(mesh, rep)
    solver = _NewtonLinearSolver()
    u = init.values[col.dofs].copy()
    D = len(u)
    history = []
    res = np.inf
    for it in range(config.max_iters + 1):
        tau = col.residual(u)
        res = float(np.abs(tau).max()) if D else 0.0
        h = node_values(mesh, rep, u[col.node_col])
        history.append(energy_values(mesh, h))
        if res < config.tol:
            return MapField(h, rep, res, it, history, True)
        if it == config.max_iters:
            break
        J = col.jacobian(u)
        d = solver.solve(J, -np.concatenate([tau.real, tau.imag]))
        if d is None:
            raise NonConvergence(it, res)
        dc = d[:D] + 1j * d[D:]
        merit = float(np.sum(np.abs(tau) ** 2))
        alpha = 1.0
        while alpha > 1e-8:
            u_new = u + alpha * dc
            if np.all(np.abs(u_new) < 1.0):
                m_new = float(np.sum(np.abs(col.residual(u_new)) ** 2))
                if m_new <= (1.0 - 1e-4 * alpha) * merit:
                    break
            alpha *= 0.5
        else:
            raise NonConvergence(it, res)
        u = u_new
        if np.abs(u).max() > 1.0 - config.blowup_margin:
            raise BlowUp(f"|h| reached {np.abs(u).max():.8f} at iteration {it + 1}")
    raise NonConvergence(config.max_iters, res)


def _solve_one(mesh, rep, init, config):
    try:
        return collocation_newton(mesh, rep, init, config)
    except NonConvergence:
        # globalise with the monotone energy descent, then polish
        flowed = energy_flow(mesh, rep, init, config, tol=config.flow_tol)
        out = collocation_newton(mesh, rep, flowed, config)
        out.iterations += flowed.iterations
        out.energy_history = flowed.energy_history + out.energy_history
        return out


def solve(
    rep: HolonomyRep,
    mesh: TriMesh,
    config: SolverConfig = SolverConfig(),
    init: MapField | None = None,
) -> MapField:
    """Equivariant harmonic section for holonomy `rep` on the mesh's surface.

    Case I holonomy without an explicit init is reached by continuation in the
    twist from the Fuchsian group, where h(z) = z is the starting point.
    """
    _check_compatible(mesh, rep)
    if init is not None:
        return _solve_one(mesh, rep, MapField(init.values, rep), config)
    if rep.case_label == "I" and rep.twist != 0 and config.continuation_steps > 1:
        base = mesh.group
        field_ = equivariant_field(mesh, base, lambda z: z)
        dofs = mesh.dofs
        prev = None
        total_iters = 0
        history: list = []
        for k in range(1, config.continuation_steps + 1):
            t = rep.twist * k / config.continuation_steps
            rk = rep if k == config.continuation_steps else mb.fn_twist(base, t)
            guess = field_.values.copy()
            if prev is not None:
                # secant predictor on the representative values
                pred = 2.0 * field_.values[dofs] - prev[dofs]
                if np.abs(pred).max() < 1.0 - config.blowup_margin:
                    guess[dofs] = pred
            start = MapField(node_values(mesh, rk, guess[mesh.rep_of]), rk)
            prev = field_.values
            field_ = _solve_one(mesh, rk, start, config)
            total_iters += field_.iterations
            history.extend(field_.energy_history)
        field_.iterations = total_iters
        field_.energy_history = history
        return field_
    return _solve_one(mesh, rep, default_init(mesh, rep), config)


# --- derived fields -----------------------------------------------------------


def derivatives(mesh: TriMesh, field_: MapField) -> DerivField:
    st = gradient_stencil(mesh)
    ext = st.extend(field_.values, "map", field_.rep)
    return DerivField(st.dz @ ext, st.dzb @ ext, st.dzzb @ ext)


def tension(mesh: TriMesh, field_: MapField, derivs: DerivField) -> np.ndarray:
    """Pointwise tension h_zzb + 2 conj(h) h_z h_zb / (1 - |h|^2) from the stencil."""
    h = field_.values
    return derivs.hzzb + 2.0 * h.conj() * derivs.hz * derivs.hzb / (1.0 - np.abs(h) ** 2)


def hopf(mesh: TriMesh, field_: MapField, derivs: DerivField) -> HopfField:
    h = field_.values
    return HopfField(derivs.hz * derivs.hzb.conj() / (1.0 - np.abs(h) ** 2) ** 2)


def hopf_dbar(mesh: TriMesh, hopf_field: HopfField) -> np.ndarray:
    """d/dzb of the Hopf coefficient; vanishes for a harmonic map."""
    st = gradient_stencil(mesh)
    return st.dzb @ st.extend(hopf_field.phi, "quadratic")


def _shifted_phi(mesh: TriMesh, phi: np.ndarray, offset: complex) -> np.ndarray:
    """Hopf coefficient at nodes moved by `offset` (transported to every copy)."""
    st = gradient_stencil(mesh)
    ext = st.extend(phi, "quadratic")
    pz, pzb = st.dz @ ext, st.dzb @ ext
    d = np.full(mesh.n_nodes, offset, dtype=complex)
    for w, idx in mesh.distinct_words().items():
        if w:
            d[idx] = offset * mb.apply_deriv(mesh.group.evaluate(w), mesh.nodes[mesh.rep_of[idx]])
    return phi + pz * d + pzb * d.conjugate()


def triangle_windings(mesh: TriMesh, phi: np.ndarray) -> np.ndarray:
    pv = phi[mesh.triangles]
    turn = (
        np.angle(pv[:, 1] / pv[:, 0]) + np.angle(pv[:, 2] / pv[:, 1]) + np.angle(pv[:, 0] / pv[:, 2])
    )
    return np.rint(turn / (2 * np.pi)).astype(int)


def count_hopf_zeros(
    mesh: TriMesh,
    hopf_field: HopfField,
    floor: float = 1e-10,
    retries: int = 4,
    offset: complex | None = None,
) -> int:
    """Zeros of the Hopf differential on the closed surface, with multiplicity.

    Sums the winding of phi around every triangle; the triangles tile the
    identified surface, so interior edges cancel and paired sides combine.
    """
    phi = hopf_field.phi
    if np.abs(phi).max() <= 10 * floor:
        raise ValueError("Hopf differential vanishes within the noise floor")
    h = mesh.max_edge()
    for attempt in range(retries + 1):
        if offset is not None or attempt > 0:
            off = offset if offset is not None and attempt == 0 else 0.05 * h * np.exp(2.3j * attempt)
            vals = _shifted_phi(mesh, phi, off)
        else:
            vals = phi
        if np.abs(vals).min() > floor:
            return int(triangle_windings(mesh, vals).sum())
    raise ZeroOnContour("Hopf differential vanishes on every perturbed contour")


def locate_hopf_zeros(mesh: TriMesh, hopf_field: HopfField) -> list[tuple[complex, int]]:
    """Approximate zero positions (linear interpolation inside winding triangles)."""
    phi = hopf_field.phi
    wind = triangle_windings(mesh, phi)
    out = []
    for t in np.flatnonzero(wind):
        tri = mesh.triangles[t]
        pv, pz = phi[tri], mesh.nodes[tri]
        A = np.array([pv.real, pv.imag, np.ones(3)])
        try:
            lam = np.linalg.solve(A, [0.0, 0.0, 1.0])
        except np.linalg.LinAlgError:
            lam = np.full(3, 1 / 3)
        lam = np.clip(lam, 0, None)
        lam /= lam.sum()
        out.append((complex(lam @ pz), int(wind[t])))
    return out


# --- classification -----------------------------------------------------------


def diagnostics(mesh: TriMesh, derivs: DerivField, theta: float = THETA_SMALL) -> dict:
    az, azb = np.abs(derivs.hz), np.abs(derivs.hzb)
    gap = az - azb
    rank = np.where(az + azb < theta, 0, np.where(np.abs(gap) < theta, 1, 2))
    rank2 = (azb > theta) & (gap > theta)
    open_set = bool(rank2[mesh.triangles].all(1).any())
    return {
        "sup_dh": float((az + azb).max()),
        "sup_hzb": float(azb.max()),
        "sup_gap": float(np.abs(gap).max()),
        "rank_counts": [int((rank == r).sum()) for r in range(3)],
        "rank2_fraction": float(rank2.mean()),
        "rank2_open": open_set,
    }


def classify(
    mesh: TriMesh,
    field_: MapField,
    derivs: DerivField,
    theta: float = THETA_SMALL,
) -> BundleCase:
    diag = diagnostics(mesh, derivs, theta)
    if mb.has_common_boundary_fixed_point(field_.rep):
        return BundleCase("IV", diag)
    if diag["sup_dh"] < theta:
        return BundleCase("V", diag)
    if diag["sup_hzb"] < theta:
        return BundleCase("II", diag)
    if diag["sup_gap"] < theta:
        return BundleCase("III", diag)
    if diag["rank2_open"]:
        return BundleCase("I", diag)
    return BundleCase("Undetermined", diag)
