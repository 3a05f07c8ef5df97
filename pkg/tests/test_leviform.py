import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discbundle import harmonic as hm
from discbundle import leviform as lf
from discbundle import moebius as mb
from discbundle.leviform import FiberPoint, LeviMatrix, SectionJet


def random_point(rng, rmax=0.95):
    r = rmax * math.sqrt(rng.random())
    return complex(r * np.exp(2j * np.pi * rng.random()))


def random_jet(rng, psi_zzb=0.0):
    return SectionJet(
        random_point(rng, 0.9), complex(*rng.normal(size=2)), complex(*rng.normal(size=2)),
        float(rng.normal()), psi_zzb,
    )


# --- defining functions ----------------------------------------------------------


def test_r0_examples(rng):
    h = 0.3 - 0.4j
    assert lf.r0(FiberPoint(0.1, h), h) == pytest.approx(-1.0, abs=1e-15)
    zeta = 0.2 + 0.5j
    assert lf.r0(FiberPoint(0.1, zeta), 0.0) == pytest.approx(abs(zeta) ** 2 - 1, abs=1e-15)
    for _ in range(100):
        v = lf.r0(FiberPoint(0j, random_point(rng, 0.999)), random_point(rng))
        assert -1.0 <= v < 0.0


def test_r0_equivariant_along_links(case_I_24, mesh24, rng):
    f, _ = case_I_24
    worst = 0.0
    for r, n, w in mesh24.boundary_links:
        rho = f.rep.evaluate(w)
        zeta = random_point(rng)
        a = lf.r0(FiberPoint(mesh24.nodes[r], zeta), f.values[r])
        b = lf.r0(FiberPoint(mesh24.nodes[n], mb.apply(rho, zeta)), f.values[n])
        worst = max(worst, abs(a - b))
    assert worst < 1e-10


def test_r_weighted_examples(rng):
    p = FiberPoint(0j, 0.25)
    assert lf.r_weighted(p, SectionJet(0.25, 0, 0, 0.0)) == lf.r0(p, 0.25) == -1.0
    assert lf.r_weighted(p, SectionJet(0.25, 0, 0, math.log(2))) == pytest.approx(-0.5, abs=1e-15)
    for _ in range(50):
        p, jet = FiberPoint(0j, random_point(rng)), random_jet(rng)
        assert np.sign(lf.r_weighted(p, jet)) == np.sign(lf.r0(p, jet.h))


def test_fiber_point_validation():
    with pytest.raises(ValueError):
        FiberPoint(0j, 1.5)
    with pytest.raises(ValueError):
        SectionJet(1.0, 0, 0)
    with pytest.raises(ValueError):
        SectionJet(0.1, 0, 0, float("nan"))


# --- closed form and the FD oracle -------------------------------------------------


def test_oracle_on_model_functions():
    p = FiberPoint(0.2 - 0.1j, 0.3 + 0.4j)
    L = lf.fd_hessian_oracle(lambda z, w: abs(z) ** 2 + abs(w) ** 2, p)
    assert np.abs(L.array() - np.eye(2)).max() < 1e-9
    L = lf.fd_hessian_oracle(lambda z, w: (z * z).real, p)
    assert np.abs(L.array()).max() < 1e-8


def test_oracle_errors():
    p = FiberPoint(0.2, 0.3)
    with pytest.raises(FloatingPointError):
        lf.fd_hessian_oracle(lambda z, w: abs(z) ** 2, p, step=1e-20)
    with pytest.raises(FloatingPointError):
        lf.fd_hessian_oracle(lambda z, w: float("nan"), p)


def test_closed_form_case_V():
    p = FiberPoint(0.1, 0.6j)
    L = lf.levi_closed_form(p, SectionJet(0.0, 0.0, 0.0))
    assert L.A == 0.0 and L.B == 0.0
    assert L.C == pytest.approx((1 - 0.36) ** -2)


def _exact_F(h_of, psi_of=lambda z: 0.0):
    def F(z, zeta):
        return lf.minus_log_minus_r(z, zeta, h_of, psi_of)

    return F


def test_closed_form_matches_oracle_rank_one_section(rng):
    # h = tanh(Re(alpha z)/2) maps into the real geodesic and is harmonic
    worst = 0.0
    for _ in range(100):
        alpha = complex(*rng.normal(size=2))
        z, zeta = random_point(rng, 0.5), random_point(rng)
        h = math.tanh((alpha * z).real / 2)
        g = (1 - h * h) / 4
        jet = SectionJet(h, g * alpha, g * alpha.conjugate())
        F = _exact_F(lambda w: np.tanh((alpha * w).real / 2))
        ref = lf.fd_hessian_oracle(F, FiberPoint(z, zeta))
        worst = max(worst, lf.relative_error(lf.levi_closed_form(FiberPoint(z, zeta), jet), ref))
    assert worst < 1e-6


def test_closed_form_matches_oracle_with_weight(rng):
    worst = 0.0
    for _ in range(50):
        jet = random_jet(rng, psi_zzb=float(rng.normal()))
        p = FiberPoint(0.1j, random_point(rng))
        ref = lf.oracle_for_jet(p, jet, rng)
        worst = max(worst, lf.relative_error(lf.levi_closed_form(p, jet), ref))
    assert worst < 1e-6


def test_theta_singularity_resolved():
    jet = SectionJet(0.3 + 0.1j, 0.7, 0.2 - 0.4j)
    L = lf.levi_closed_form(FiberPoint(0j, 0.3 + 0.1j), jet)
    assert np.isfinite(L.A)


def test_sharpness_locus(rng):
    for _ in range(100):
        h = random_point(rng, 0.9)
        jet = SectionJet(h, complex(*rng.normal(size=2)), 0.0)
        assert abs(lf.det(lf.levi_closed_form(FiberPoint(0j, h), jet))) < 1e-12


# --- eigenvalue algebra ------------------------------------------------------------


def test_trace_det_lambda_examples():
    m = LeviMatrix(2.0, 0.0, 1.0)
    assert (lf.trace(m), lf.det(m), lf.lambda_min(m)) == (3.0, 2.0, 1.0)
    m = LeviMatrix(1.0, 1.0, 1.0)
    assert lf.det(m) == 0.0 and abs(lf.lambda_min(m)) < 1e-15
    with pytest.raises(ValueError):
        lf.lambda_min(LeviMatrix(1.0 + 1e-3j, 0.0, 1.0))


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=200, deadline=None)
def test_lambda_min_matches_eigvalsh(a, c, br, bi):
    m = LeviMatrix(a, complex(br, bi), c)
    ref = np.linalg.eigvalsh(m.array())[0]
    assert abs(lf.lambda_min(m) - ref) <= 1e-12 * max(1.0, abs(a) + abs(c) + abs(complex(br, bi)))
    assert lf.lambda_min(m) <= lf.trace(m) / 2 + 1e-15


def test_det_chain_is_monotone(rng):
    for _ in range(200):
        jet = random_jet(rng)
        delta = min(0.999, abs(jet.h) + 0.05 * rng.random())
        p = FiberPoint(0j, random_point(rng, 0.999))
        d = lf.det(lf.levi_closed_form(p, jet))
        chain = lf.det_lower_bounds(p, jet, delta)
        vals = [d, *chain]
        for x, y in zip(vals, vals[1:]):
            assert x >= y - 1e-9 * max(1.0, abs(x))


def test_lambda_lower_bound_examples():
    assert lf.lambda_lower_bound(SectionJet(0.2, 1.0, 0.0), 0.3, 1.0) == 0.0
    assert lf.lambda_lower_bound(SectionJet(0.2, 0.6, 0.6j), 0.3, 1.0) == pytest.approx(0.0, abs=1e-16)
    with pytest.raises(lf.PreconditionViolated):
        lf.lambda_lower_bound(SectionJet(0.2, 1.0, 0.5, 0.0, -1.0), 0.3, 1.0)


def test_lambda_lower_bound_sandwich(rng):
    for _ in range(200):
        jet = random_jet(rng)
        delta = abs(jet.h)
        derivs = hm.DerivField(np.array([jet.hz]), np.array([jet.hzb]), np.zeros(1))
        C = lf.compute_C(derivs, None, delta)
        bound = lf.lambda_lower_bound(jet, delta, C)
        for _ in range(5):
            p = FiberPoint(0j, random_point(rng, 0.999))
            L = lf.levi_closed_form(p, jet)
            assert lf.trace(L) <= (1 - abs(p.zeta) ** 2) ** -2 + C + 1e-9
            assert lf.lambda_min(L) >= bound - 1e-12


def test_compute_C_examples():
    n = 5
    zero = hm.DerivField(np.zeros(n), np.zeros(n), np.zeros(n))
    assert lf.compute_C(zero, None, 0.0) == 0.0
    d1 = hm.DerivField(np.linspace(0, 1, n) + 0j, 0.3j * np.ones(n), np.zeros(n))
    d2 = hm.DerivField(2 * d1.hz, 2 * d1.hzb, np.zeros(n))
    assert lf.compute_C(d2, None, 0.4) == pytest.approx(4 * lf.compute_C(d1, None, 0.4), rel=1e-14)


# --- conjugation and kappa ----------------------------------------------------------


def test_conjugate_point():
    q = lf.conjugate_point(FiberPoint(0.1, 0.5))
    assert isinstance(q, lf.ExteriorPoint) and q.zeta == 2.0
    b = lf.conjugate_point(FiberPoint(0.1, np.exp(0.3j)))
    assert abs(abs(b.zeta) - 1) < 1e-15
    p = FiberPoint(0.2j, 0.3 - 0.4j)
    back = lf.conjugate_point(lf.conjugate_point(p))
    assert isinstance(back, FiberPoint) and abs(back.zeta - p.zeta) < 1e-15
    with pytest.raises(lf.ZeroFiber):
        lf.conjugate_point(FiberPoint(0.1, 0.0))


def test_kappa_threshold():
    assert lf.kappa_threshold(2, 0) == 3
    assert lf.kappa_threshold(2, 3) == 5
    assert lf.kappa_threshold(3, 4) == 6
    for n in range(2, 6):
        for N0 in range(2, 12):
            k = lf.kappa_threshold(n, N0)
            assert k == math.ceil(n + 1 + N0 / 2) and k >= 4
    with pytest.raises(ValueError):
        lf.kappa_threshold(1, 0)


# --- weight and certificate -----------------------------------------------------------


def test_zeta_grid():
    g = lf.zeta_grid(12, 16)
    assert g.shape == (192,)
    r = np.unique(np.round(np.abs(g), 14))
    assert r.max() == pytest.approx(1 - lf.ZETA_MARGIN)
    assert np.all(np.diff(np.diff(r)) < 0)  # clustered toward the rim
    with pytest.raises(ValueError):
        lf.zeta_grid(1, 16)


def test_build_psi_zero_scale(case_I_24, mesh24):
    f, d = case_I_24
    psi = lf.build_psi(mesh24, d, lf.EPS_V, c=0.0)
    assert psi.c == 0 and np.all(psi.psi == 0) and np.all(psi.psi_zzb == 0)


@pytest.fixture(scope="module")
def psi_I_24(case_I_24, mesh24):
    f, d = case_I_24
    return lf.build_psi(mesh24, d, lf.EPS_V, 1.0, float(np.abs(f.values).max()))


def test_build_psi_case_I(case_I_24, mesh24, psi_I_24):
    f, d = case_I_24
    psi = psi_I_24
    delta = float(np.abs(f.values).max())
    assert 0 < psi.c <= 1.0
    assert np.all(lf.trace_positivity(psi.psi_zzb, delta))
    assert np.all(psi.psi[psi.W] == 0)
    assert not np.any(psi.W & ~psi.V)
    # psi1 is invariant under the surface group at paired nodes
    diff = max(abs(psi.psi[n] - psi.psi[r]) for r, n, _ in mesh24.boundary_links)
    assert diff <= 1e-12 * max(np.abs(psi.psi).max(), 1e-300)


def test_bump_laplacian_matches_fd(psi_I_24, rng):
    psi = psi_I_24
    e = 1e-4
    for c in psi.centers[:3]:
        for _ in range(10):
            z = c + 0.5 * psi.radius * random_point(rng, 1.0) * (1 - abs(c))
            if abs(z) >= 0.99:
                continue
            v = [psi.evaluate(z + s)[0] for s in (e, -e, 1j * e, -1j * e)]
            lap = (sum(v) - 4 * psi.evaluate(z)[0]) / e**2 / 4
            ref = psi.evaluate(z)[1]
            assert abs(lap - ref) <= 1e-5 * max(abs(ref), psi.c / psi.radius**2)


def test_build_psi_empty_V(mesh16, fuchsian):
    f = hm.solve(fuchsian, mesh16)
    d = hm.derivatives(mesh16, f)
    with pytest.raises(lf.EmptyV):
        lf.build_psi(mesh16, d, lf.EPS_V, 1.0, float(np.abs(f.values).max()))


def test_certify_case_I(case_I_24, mesh24, psi_I_24):
    f, d = case_I_24
    cert = lf.certify_takeuchi(mesh24, f, d, psi_I_24)
    assert cert.passed and cert.min_bound > 0 and cert.min_lambda > 0
    assert cert.sandwich_ok and cert.trace_bound_ok and cert.det_chain_ok and cert.trace_positive
    assert cert.C_const > 0 and np.isfinite(cert.C_const)
    # the per-node bound does not depend on the zeta samples
    other = lf.certify_takeuchi(mesh24, f, d, psi_I_24, lf.zeta_grid(3, 5))
    assert np.array_equal(cert.node_bound, other.node_bound)
    jet = SectionJet(f.values, d.hz, d.hzb, psi_I_24.psi, psi_I_24.psi_zzb)
    assert np.array_equal(lf.lambda_lower_bound(jet, cert.delta, cert.C_const), cert.node_bound)


def test_certify_case_V_fails(mesh16):
    rep = mb.example_holonomy("V")
    f = hm.solve(rep, mesh16)
    d = hm.derivatives(mesh16, f)
    cert = lf.certify_takeuchi(mesh16, f, d, lf.WeightFunction.zero(mesh16.n_nodes))
    assert not cert.passed and cert.min_bound <= 0


def test_certify_rejects_bad_grid(case_I_24, mesh24, psi_I_24):
    f, d = case_I_24
    with pytest.raises(ValueError):
        lf.certify_takeuchi(mesh24, f, d, psi_I_24, np.array([0.9999]))


def test_hessian_check_case_I(case_I_24, mesh24, psi_I_24):
    f, d = case_I_24
    chk = lf.hessian_check(mesh24, f, d, psi_I_24, 50, np.random.default_rng(3))
    assert chk.samples == 50 and chk.passed
