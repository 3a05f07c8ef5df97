"""Levi form of -log(-r) for r = r0 exp(-psi) on a disc bundle, and its certificate.

All pointwise functions accept scalars or equally shaped numpy arrays.
Notation: at a base point z the section has value h and derivatives hz, hzb;
zeta is the fiber coordinate of the same trivialisation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import moebius as mb
from .mesh import TriMesh

ZETA_MARGIN = 1e-3
EPS_V = 1e-2
FD_STEP = 1e-3
RICHARDSON_RTOL = 1e-3
DISCRIMINANT_FLOOR = -1e-14


class EmptyV(ValueError):
    """No node where both |h_zb| and |h_z| - |h_zb| exceed eps_V."""


class NoFeasibleC(ValueError):
    pass


class PreconditionViolated(ValueError):
    pass


class ZeroFiber(ValueError):
    pass


@dataclass(frozen=True)
class FiberPoint:
    z: complex
    zeta: complex

    def __post_init__(self):
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.zeta))):
            raise ValueError("non-finite fiber point")
        if np.any(np.abs(self.zeta) > 1.0 + 1e-15):
            raise ValueError("fiber coordinate lies outside the closed disc")


@dataclass(frozen=True)
class ExteriorPoint:
    """Point of the exterior bundle, |zeta| >= 1."""

    z: complex
    zeta: complex


@dataclass(frozen=True)
class SectionJet:
    h: complex | np.ndarray
    hz: complex | np.ndarray
    hzb: complex | np.ndarray
    psi: float | np.ndarray = 0.0
    psi_zzb: float | np.ndarray = 0.0

    def __post_init__(self):
        if np.any(np.abs(self.h) >= 1.0):
            raise ValueError("section value must lie in the open disc")
        if not np.all(np.isfinite(self.psi)) or not np.all(np.isfinite(self.psi_zzb)):
            raise ValueError("psi must be finite")

    @property
    def hzzb(self):
        """h_zzb forced by harmonicity."""
        return -2.0 * np.conj(self.h) * self.hz * self.hzb / (1.0 - np.abs(self.h) ** 2)

    def model(self, psi_z: complex = 0.0, hzz: complex = 0.0, hzbzb: complex = 0.0):
        """Local second-order model (h(z0+d), psi(z0+d)) of a harmonic section.

        The free coefficients do not enter the complex Hessian; they only make
        the model generic.
        """
        h0, a, b, c = self.h, self.hz, self.hzb, self.hzzb

        def h_of(d):
            db = np.conj(d)
            return h0 + a * d + b * db + 0.5 * hzz * d * d + c * d * db + 0.5 * hzbzb * db * db

        def psi_of(d):
            return self.psi + 2.0 * np.real(psi_z * d) + self.psi_zzb * np.abs(d) ** 2

        return h_of, psi_of


@dataclass(frozen=True)
class LeviMatrix:
    """Hermitian [[A, B], [conj(B), C]] in the coordinates (z, zeta)."""

    A: float | np.ndarray
    B: complex | np.ndarray
    C: float | np.ndarray
    det_value: float | np.ndarray | None = field(default=None, compare=False, repr=False)

    def array(self) -> np.ndarray:
        return np.array([[self.A, self.B], [np.conj(self.B), self.C]])


# --- defining functions ---------------------------------------------------------


def _moebius_to_zero(zeta, h):
    return (zeta - h) / (1.0 - np.conj(h) * zeta)


def r0(p: FiberPoint, h):
    """|(zeta - h)/(1 - conj(h) zeta)|^2 - 1."""
    return np.abs(_moebius_to_zero(p.zeta, h)) ** 2 - 1.0


def r_weighted(p: FiberPoint, jet: SectionJet):
    return r0(p, jet.h) * np.exp(-jet.psi)


def minus_log_minus_r(z, zeta, h_of, psi_of):
    """-log(-r0 exp(-psi)) written without the cancellation in 1 - |m|^2."""
    h = h_of(z)
    return (
        psi_of(z)
        - np.log1p(-np.abs(zeta) ** 2)
        - np.log1p(-np.abs(h) ** 2)
        + 2.0 * np.log(np.abs(1.0 - np.conj(h) * zeta))
    )


# --- the closed form ------------------------------------------------------------


def levi_closed_form(p: FiberPoint, jet: SectionJet) -> LeviMatrix:
    """Complex Hessian of -log(-r) at (z, zeta) for a harmonic section."""
    zeta, h, hz, hzb = np.asarray(p.zeta), jet.h, jet.hz, jet.hzb
    if np.any(np.abs(zeta) >= 1.0):
        raise ValueError("levi_closed_form needs |zeta| < 1")
    one_h = 1.0 - np.abs(h) ** 2
    one_z = 1.0 - np.abs(zeta) ** 2
    q = 1.0 - np.conj(h) * zeta
    m = _moebius_to_zero(zeta, h)
    S = np.abs(hz) ** 2 + np.abs(hzb) ** 2
    # |zeta-h|^2 |h_z - e^{2i theta} conj(h_zb)|^2 with e^{i theta} = m/|m|,
    # rewritten as |q|^2 |conj(m) h_z - m conj(h_zb)|^2 so zeta = h gives 0 exactly
    twist = np.abs(q) ** 2 * np.abs(np.conj(m) * hz - m * np.conj(hzb)) ** 2
    A = jet.psi_zzb + (one_z * S + twist / one_h) / (np.abs(q) ** 2 * one_h)
    B = -hz / np.conj(q) ** 2
    C = 1.0 / one_z**2
    # AC - |B|^2 without cancellation, using 1 - |m|^2 = (1-|h|^2)(1-|zeta|^2)/|q|^2;
    # every term is >= 0, so the zero on {zeta = h, h_zb = 0} is exact
    mu = one_h * one_z / np.abs(q) ** 2
    x2 = np.abs(np.conj(m) * hz - m * np.conj(hzb)) ** 2
    D = jet.psi_zzb * C + (mu * (np.abs(hzb) ** 2 + np.abs(m) ** 2 * np.abs(hz) ** 2) + x2) / (one_h * one_z) ** 2
    return LeviMatrix(A, B, C, D)


def trace(m: LeviMatrix):
    return m.A + m.C


def det(m: LeviMatrix):
    if m.det_value is not None:
        return m.det_value
    return m.A * m.C - np.abs(m.B) ** 2


def lambda_min(m: LeviMatrix):
    """Smaller eigenvalue of the 2x2 Hermitian matrix."""
    if np.any(np.imag(m.A) != 0) or np.any(np.imag(m.C) != 0):
        raise ValueError("diagonal entries must be real")
    t = trace(m)
    # (t/2)^2 - det = ((A-C)/2)^2 + |B|^2, evaluated in the stable form
    disc = 0.25 * (m.A - m.C) ** 2 + np.abs(m.B) ** 2
    naive = (0.5 * t) ** 2 - det(m)
    if np.any(naive < DISCRIMINANT_FLOOR * np.maximum(1.0, t * t)):
        raise ValueError("negative discriminant: matrix is not Hermitian")
    root = np.sqrt(disc)
    # cancellation-free: lambda_min = det / lambda_max when t/2 and root are close
    lam_max = 0.5 * t + root
    with np.errstate(divide="ignore", invalid="ignore"):
        alt = det(m) / lam_max
    return np.where((t > 0) & (lam_max > 0), alt, 0.5 * t - root)


def det_lower_bounds(p: FiberPoint, jet: SectionJet, delta: float) -> list:
    """The chain of successively weaker lower bounds for det, strongest first."""
    zeta, h, hz, hzb = np.asarray(p.zeta), jet.h, jet.hz, jet.hzb
    one_z = 1.0 - np.abs(zeta) ** 2
    d2 = np.abs(zeta - h) ** 2
    q = np.abs(1.0 - np.conj(h) * zeta) ** 2
    m = _moebius_to_zero(zeta, h)
    twist = q * np.abs(np.conj(m) * hz - m * np.conj(hzb)) ** 2  # = d2 |h_z - e^{2it} conj h_zb|^2
    a, b = np.abs(hz), np.abs(hzb)
    mins = np.minimum(b**2, (a - b) ** 2)
    lead = jet.psi_zzb / one_z**2
    return [
        lead + twist / (4 * one_z**2) + b**2 / (4 * one_z) + d2 * a**2 / (16 * one_z),
        lead + (d2 * (a - b) ** 2 + one_z * b**2) / (4 * one_z**2),
        lead + (d2 + one_z) * mins / (4 * one_z**2),
        lead + (1 - delta) ** 2 * mins / (4 * one_z**2),
    ]


def trace_positivity(psi_zzb, delta: float):
    """psi_zzb (1-delta)^-4 > -1, which keeps the trace positive."""
    return np.asarray(psi_zzb) * (1.0 - delta) ** -4 > -1.0


def min_factor(hz, hzb):
    a, b = np.abs(hz), np.abs(hzb)
    return np.minimum(b**2, (a - b) ** 2)


def lambda_lower_bound(jet: SectionJet, delta: float, C_const: float):
    """zeta-independent lower bound for lambda_min at the base point of `jet`."""
    ok = trace_positivity(jet.psi_zzb, delta)
    if not np.all(ok):
        raise PreconditionViolated(
            f"trace positivity fails at {int(np.size(ok) - np.count_nonzero(ok))} point(s)"
        )
    num = jet.psi_zzb + 0.25 * (1.0 - delta) ** 2 * min_factor(jet.hz, jet.hzb)
    return num / (1.0 + C_const)


def compute_C(derivs, psi: "WeightFunction | None", delta: float) -> float:
    """Constant C with trace <= (1-|zeta|^2)^-2 + C on every fiber over the nodes.

    psi_zzb enters the trace undivided, so a negative psi_zzb is bounded by
    itself rather than by psi_zzb (1-delta)^-4.
    """
    S = np.abs(derivs.hz) ** 2 + np.abs(derivs.hzb) ** 2
    p = np.zeros_like(S) if psi is None else psi.psi_zzb
    k = (1.0 - delta) ** -4
    vals = np.maximum(p, p * k) + 8.0 * S * k
    return max(0.0, float(vals.max())) if vals.size else 0.0


# --- finite-difference oracle ---------------------------------------------------


def _fd_hessian(F, w: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Real 4x4 Hessian of F in (x1, y1, x2, y2) from centred differences."""
    x = np.array([w[0].real, w[0].imag, w[1].real, w[1].imag])

    def f(v):
        val = F(complex(v[0], v[1]), complex(v[2], v[3]))
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite F sample at {v}")
        return float(val)

    f0 = f(x)
    H = np.empty((4, 4))
    for i in range(4):
        ei = np.zeros(4)
        ei[i] = steps[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / steps[i] ** 2
        for j in range(i):
            ej = np.zeros(4)
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
    return H


def _wirtinger(H: np.ndarray) -> np.ndarray:
    out = np.empty((2, 2), dtype=complex)
    for j in range(2):
        for k in range(2):
            xj, yj, xk, yk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
            out[j, k] = 0.25 * (H[xj, xk] + H[yj, yk]) + 0.25j * (H[xj, yk] - H[yj, xk])
    return out


def fd_hessian_oracle(F, p: FiberPoint, step: float = FD_STEP) -> LeviMatrix:
    """Complex Hessian d^2F/dw_j dconj(w_k) in (z, zeta) by finite differences.

    Centred differences at step and step/2 are combined by Richardson
    extrapolation; the two raw estimates must agree to RICHARDSON_RTOL
    relative to the real Hessian.
    """
    w = np.array([p.z, p.zeta], dtype=complex)
    coords = np.array([w[0].real, w[0].imag, w[1].real, w[1].imag])
    steps = step * np.maximum(1.0, np.abs(coords))
    if np.any(steps < 1e-12) or np.any(coords + steps == coords):
        raise FloatingPointError("finite-difference step underflows")
    H1 = _fd_hessian(F, w, steps)
    H2 = _fd_hessian(F, w, steps / 2)
    W1, W2 = _wirtinger(H1), _wirtinger(H2)
    # relative to the real Hessian: pluriharmonic parts cancel in W but not in rounding
    scale = max(np.abs(H2).max(), 1e-300)
    if np.abs(W1 - W2).max() > RICHARDSON_RTOL * scale:
        raise FloatingPointError("Richardson check failed; F is not resolved at this step")
    W = (4.0 * W2 - W1) / 3.0
    return LeviMatrix(float(W[0, 0].real), complex(W[0, 1]), float(W[1, 1].real))


def oracle_for_jet(p: FiberPoint, jet: SectionJet, rng: np.random.Generator | None = None,
                   step: float = FD_STEP) -> LeviMatrix:
    """FD Hessian of -log(-r) for the local harmonic model of `jet` at p.z."""
    extra = {}
    if rng is not None:
        extra = {k: complex(*rng.normal(size=2)) for k in ("psi_z", "hzz", "hzbzb")}
    h_of, psi_of = jet.model(**extra)
    z0 = p.z

    def F(z, zeta):
        return minus_log_minus_r(z - z0, zeta, h_of, psi_of)

    return fd_hessian_oracle(F, p, step)


# --- conjugation and the jet-order threshold --------------------------------------


def conjugate_point(p: FiberPoint | ExteriorPoint) -> FiberPoint | ExteriorPoint:
    """(z, zeta) -> (z, 1/conj(zeta)), swapping the disc bundle and its exterior."""
    if p.zeta == 0:
        raise ZeroFiber("the conjugation is undefined on the zero section")
    w = 1.0 / np.conj(complex(p.zeta))
    return ExteriorPoint(p.z, w) if abs(w) >= 1.0 and isinstance(p, FiberPoint) else FiberPoint(p.z, w)


def kappa_threshold(n: int, N0: int) -> int:
    """ceil(n + 1 + N0/2), exact in integers."""
    if n < 2 or N0 < 0:
        raise ValueError("need n >= 2 and N0 >= 0")
    return n + 1 + (N0 + 1) // 2


# --- the weight psi ----------------------------------------------------------------


def _bump(z, centers: np.ndarray, radius: float):
    """Sum of -(1-s)^4 bumps and its z-zb derivative; s = (pseudo-hyperbolic distance/radius)^2."""
    z = np.asarray(z, dtype=complex)[..., None]
    w = centers
    den = 1.0 - np.conj(w) * z
    q = (z - w) / den
    s = np.abs(q) ** 2 / radius**2
    qz2 = (1.0 - np.abs(w) ** 2) ** 2 / np.abs(den) ** 4
    inside = s < 1.0
    one_s = np.where(inside, 1.0 - s, 0.0)
    val = -(one_s**4)
    lap = qz2 / radius**2 * 4.0 * one_s**2 * (1.0 - 4.0 * s)
    lap = np.where(inside, lap, 0.0)
    return val.sum(-1), lap.sum(-1)


@dataclass
class WeightFunction:
    """psi = c psi1, psi1 a sum of bumps at the degenerate points and their group images."""

    psi: np.ndarray
    psi_zzb: np.ndarray
    c: float
    V: np.ndarray
    W: np.ndarray = None
    centers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    radius: float = 1.0

    def evaluate(self, z):
        """(psi, psi_zzb) at arbitrary points of the disc."""
        if self.c == 0 or len(self.centers) == 0:
            zero = np.zeros(np.shape(z))
            return zero, zero
        v, lap = _bump(z, self.centers, self.radius)
        return self.c * v, self.c * lap

    @classmethod
    def zero(cls, n_nodes: int, V: np.ndarray | None = None) -> "WeightFunction":
        V = np.zeros(n_nodes, dtype=bool) if V is None else V
        return cls(np.zeros(n_nodes), np.zeros(n_nodes), 0.0, V, np.ones(n_nodes, dtype=bool))


def _group_images(group: mb.HolonomyRep, points: np.ndarray, keep, max_len: int = 4) -> np.ndarray:
    """Images of points under reduced words up to max_len that satisfy keep(z)."""
    gens = list(range(1, len(group.generators) + 1))
    letters = gens + [-g for g in gens]
    out = [points]
    queue = deque([((), mb.IDENTITY)])
    while queue:
        word, m = queue.popleft()
        if len(word) == max_len:
            continue
        for a in letters:
            if word and word[-1] == -a:
                continue
            m2 = (m @ group.evaluate((a,))).normalized()
            imgs = mb.apply(m2, points)
            sel = keep(imgs)
            if np.any(sel):
                out.append(imgs[sel])
            queue.append((word + (a,), m2))
    allpts = np.concatenate(out)
    # drop duplicates produced by the relation
    key = np.round(allpts.real * 1e9) + 1j * np.round(allpts.imag * 1e9)
    _, first = np.unique(key, return_index=True)
    return allpts[np.sort(first)]


def _pseudo_dist(a, b):
    return np.abs((a - b) / (1.0 - np.conj(b) * a))


def degenerate_components(mesh: TriMesh, derivs, eps_V: float):
    """V mask and connected components of its complement on the closed surface."""
    m = np.minimum(np.abs(derivs.hzb), np.abs(derivs.hz) - np.abs(derivs.hzb))
    V = m > eps_V
    bad = np.flatnonzero(~V)
    if len(bad) == 0:
        return V, m, []
    e = mesh.edges()
    keep = (~V[e[:, 0]]) & (~V[e[:, 1]])
    e = e[keep]
    links = np.array([(n, mesh.rep_of[n]) for n in bad if mesh.rep_of[n] != n], dtype=np.int64).reshape(-1, 2)
    pairs = np.concatenate([e, links])
    G = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(mesh.n_nodes,) * 2)
    _, label = connected_components(G, directed=False)
    comps = {}
    for n in bad:
        comps.setdefault(int(label[n]), []).append(int(n))
    return V, m, [np.array(c) for c in sorted(comps.values(), key=min)]


def build_psi(
    mesh: TriMesh,
    derivs,
    eps_V: float = EPS_V,
    c: float | None = 1.0,
    delta: float | None = None,
    c_shrink: float = 0.5,
    budget: int = 60,
) -> WeightFunction:
    """Weight psi = c psi1 for the certificate.

    psi1 is a sum of bumps centred on the components of the degenerate set
    (complement of V), sized so each component sits where psi1 is strictly
    subharmonic; psi1 vanishes away from the bumps.  c starts at the given
    value and is halved until both positivity conditions hold at every node.
    """
    V, m_lin, comps = degenerate_components(mesh, derivs, eps_V)
    if not np.any(V):
        raise EmptyV(f"no node has min(|h_zb|, |h_z|-|h_zb|) > {eps_V}")
    n = mesh.n_nodes
    if c == 0 or not comps:
        return WeightFunction.zero(n, V)
    if delta is None:
        raise ValueError("delta is required for a nonzero weight")
    pos = mesh.nodes
    seeds = np.array([pos[comp[np.argmin(m_lin[comp])]] for comp in comps])
    R = float(np.abs(pos).max())
    all_seed_images = _group_images(mesh.group, seeds, lambda w: np.abs(w) < R + 0.5 * (1 - R))
    # component extent in pseudo-hyperbolic distance to the nearest seed image
    extent = 0.0
    for comp in comps:
        d = _pseudo_dist(pos[comp][:, None], all_seed_images[None, :]).min(1)
        extent = max(extent, float(d.max()))
    h_mesh = mesh.max_edge()
    radius = 2.5 * max(extent, h_mesh)  # s < 1/4 (strictly subharmonic) covers each component
    if radius >= 0.5:
        raise NoFeasibleC(f"degenerate set too large for the bump class (radius {radius:.3f})")
    # images whose support can reach the polygon
    def near(w):
        return (np.abs(w) - R) / (1.0 - np.abs(w) * R + 1e-300) < 1.2 * radius

    centers = _group_images(mesh.group, seeds, near)
    v1, lap1 = _bump(pos, centers, radius)
    mfac = min_factor(derivs.hz, derivs.hzb)
    W = v1 == 0.0
    if np.any(W & ~V):
        raise NoFeasibleC("psi1 vanishes at a degenerate node")
    ck = float(c)
    for _ in range(budget):
        lap = ck * lap1
        trace_ok = np.all(trace_positivity(lap, delta))
        num = lap + 0.25 * (1.0 - delta) ** 2 * mfac
        if trace_ok and np.all(num > 0):
            return WeightFunction(ck * v1, lap, ck, V, W, centers, radius)
        ck *= c_shrink
    raise NoFeasibleC(f"no feasible c after {budget} halvings")


# --- certification -----------------------------------------------------------------


def zeta_grid(n_radii: int = 12, n_angles: int = 16, margin: float = ZETA_MARGIN) -> np.ndarray:
    """Polar grid with radii clustered geometrically toward |zeta| = 1 - margin."""
    if n_radii < 2 or n_angles < 1:
        raise ValueError("need at least two radii and one angle")
    gaps = margin ** (np.arange(n_radii) / (n_radii - 1))
    radii = 1.0 - gaps
    ang = 2 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
    return (radii[:, None] * np.exp(1j * ang)[None, :]).ravel()


@dataclass
class CertReport:
    delta: float
    C_const: float
    min_bound: float
    witness_node: int
    min_lambda: float
    witness_zeta: complex
    passed: bool
    trace_positive: bool
    sandwich_ok: bool
    trace_bound_ok: bool
    det_chain_ok: bool
    node_bound: np.ndarray
    grid_min: np.ndarray  # per zeta sample: min over nodes of lambda_min
    grid_argmin: np.ndarray  # node attaining it
    zeta: np.ndarray
    reason: str = ""

    def summary(self) -> dict:
        return {
            "delta": self.delta,
            "C": self.C_const,
            "min_bound": self.min_bound,
            "witness_node": self.witness_node,
            "min_lambda": self.min_lambda,
            "witness_zeta": [self.witness_zeta.real, self.witness_zeta.imag],
            "passed": self.passed,
            "trace_positive": self.trace_positive,
            "sandwich_ok": self.sandwich_ok,
            "trace_bound_ok": self.trace_bound_ok,
            "det_chain_ok": self.det_chain_ok,
            "reason": self.reason,
            "zeta_margin": ZETA_MARGIN,
        }


def certify_takeuchi(
    mesh: TriMesh,
    field_,
    derivs,
    psi: WeightFunction,
    zeta: np.ndarray | None = None,
    chunk: int = 512,
) -> CertReport:
    """Sampled certificate that the Levi form of -log(-r) is positive definite.

    Passes iff the zeta-free lower bound is positive at every node, the
    sampled lambda_min is positive everywhere and the trace stays positive.
    """
    zeta = zeta_grid() if zeta is None else np.asarray(zeta, dtype=complex)
    h = field_.values
    if len(h) != mesh.n_nodes or len(derivs.hz) != mesh.n_nodes or len(psi.psi_zzb) != mesh.n_nodes:
        raise ValueError("field, derivatives and weight must live on the same mesh")
    if np.any(np.abs(zeta) > 1.0 - ZETA_MARGIN + 1e-12):
        raise ValueError("zeta grid must stay within the margin")
    delta = float(np.abs(h).max())
    C = compute_C(derivs, psi, delta)
    trace_pos = bool(np.all(trace_positivity(psi.psi_zzb, delta)))
    num = psi.psi_zzb + 0.25 * (1.0 - delta) ** 2 * min_factor(derivs.hz, derivs.hzb)
    node_bound = num / (1.0 + C)

    grid_min = np.full(len(zeta), np.inf)
    grid_arg = np.zeros(len(zeta), dtype=np.int64)
    sandwich = trace_bound = det_chain = trace_sample = True
    for start in range(0, mesh.n_nodes, chunk):
        sl = slice(start, min(start + chunk, mesh.n_nodes))
        jet = SectionJet(*(np.asarray(a)[sl, None] for a in (h, derivs.hz, derivs.hzb, psi.psi, psi.psi_zzb)))
        P = FiberPoint(mesh.nodes[sl, None], zeta[None, :])
        L = levi_closed_form(P, jet)
        lam = lambda_min(L)
        t = trace(L)
        scale = np.maximum(1.0, np.abs(t))
        trace_sample &= bool(np.all(t > 0))
        nb = node_bound[sl, None]
        sandwich &= bool(np.all(lam >= nb - 1e-12 * scale))
        trace_bound &= bool(np.all(t <= 1.0 / (1.0 - np.abs(zeta[None, :]) ** 2) ** 2 + C + 1e-12 * scale))
        dt = det(L)
        for lb in det_lower_bounds(P, jet, delta):
            det_chain &= bool(np.all(dt >= lb - 1e-12 * np.maximum(1.0, np.abs(dt))))
        k = lam.argmin(0)
        v = lam[k, np.arange(len(zeta))]
        better = v < grid_min
        grid_min[better] = v[better]
        grid_arg[better] = k[better] + start
    j = int(np.argmin(grid_min))
    w = int(np.argmin(node_bound))
    min_bound = float(node_bound[w])
    trace_ok = trace_pos and trace_sample
    passed = bool(min_bound > 0 and grid_min[j] > 0 and trace_ok)
    reason = "" if passed else (
        "trace positivity violated" if not trace_ok else
        "lower bound not positive" if min_bound <= 0 else "sampled eigenvalue not positive"
    )
    return CertReport(
        delta, C, min_bound, w, float(grid_min[j]), complex(zeta[j]), passed, trace_ok,
        sandwich, trace_bound, det_chain, node_bound, grid_min, grid_arg, zeta, reason,
    )


# --- oracle comparison over a field -------------------------------------------------


@dataclass
class HessianCheck:
    samples: int
    rejected: int
    max_rel_error: float
    worst: tuple = ()

    @property
    def passed(self) -> bool:
        return self.samples > 0 and self.max_rel_error < 1e-6


def relative_error(a: LeviMatrix, b: LeviMatrix) -> float:
    x, y = a.array(), b.array()
    return float(np.abs(x - y).max() / max(np.abs(x).max(), 1e-300))


def random_zeta(rng: np.random.Generator, rmax: float = 0.95) -> complex:
    return complex(rmax * np.sqrt(rng.random()) * np.exp(2j * np.pi * rng.random()))


def hessian_check(
    mesh: TriMesh,
    field_,
    derivs,
    psi: WeightFunction | None,
    n_points: int = 100,
    rng: np.random.Generator | None = None,
) -> HessianCheck:
    """Closed form against the FD oracle at random (node, zeta) pairs of a solved field."""
    rng = np.random.default_rng(0) if rng is None else rng
    psi = WeightFunction.zero(mesh.n_nodes) if psi is None else psi
    worst, where, done, rejected = 0.0, (), 0, 0
    while done < n_points:
        if rejected > 10 * n_points:
            raise FloatingPointError("too many oracle samples rejected")
        k = int(rng.integers(mesh.n_nodes))
        p = FiberPoint(complex(mesh.nodes[k]), random_zeta(rng))
        jet = SectionJet(field_.values[k], derivs.hz[k], derivs.hzb[k], psi.psi[k], psi.psi_zzb[k])
        try:
            oracle = oracle_for_jet(p, jet, rng)
        except FloatingPointError:
            rejected += 1
            continue
        err = relative_error(levi_closed_form(p, jet), oracle)
        if err > worst:
            worst, where = err, (k, p.zeta)
        done += 1
    return HessianCheck(done, rejected, worst, where)
