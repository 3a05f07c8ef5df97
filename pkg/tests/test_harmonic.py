import math

import numpy as np
import pytest

from discbundle import harmonic as hm
from discbundle import moebius as mb
from discbundle.harmonic import DerivField, HopfField, MapField, SolverConfig
from discbundle.moebius import HolonomyRep, MoebiusTransform


def conjugate_rep(rep):
    """rho(g) = conj o g o conj, for which z -> conj(z) is equivariant."""
    gens = tuple(MoebiusTransform(g.a.conjugate(), g.b.conjugate()) for g in rep.generators)
    return HolonomyRep(gens, rep.genus)


# --- energy --------------------------------------------------------------------------


def test_energy_of_constants(mesh8):
    rot = mb.example_holonomy("V")
    trivial = HolonomyRep((mb.IDENTITY,) * 4, 2)
    assert hm.energy(mesh8, MapField(np.zeros(mesh8.n_nodes), rot)) == 0.0
    assert hm.energy(mesh8, MapField(np.full(mesh8.n_nodes, 0.3 - 0.2j), trivial)) == pytest.approx(0.0, abs=1e-14)


def test_energy_of_identity_map_close_to_area(mesh48, fuchsian):
    f = hm.equivariant_field(mesh48, fuchsian, lambda z: z)
    assert abs(hm.energy(mesh48, f) - 4 * math.pi) / (4 * math.pi) < 0.02


def test_map_field_rejects_boundary_values(fuchsian):
    with pytest.raises(ValueError):
        MapField(np.array([0.0, 1.0]), fuchsian)


# --- tension -------------------------------------------------------------------------


def test_tension_vanishes_on_zero_holomorphic_antiholomorphic(mesh16, fuchsian):
    zero = MapField(np.zeros(mesh16.n_nodes), mb.example_holonomy("V"))
    assert np.abs(hm.tension(mesh16, zero, hm.derivatives(mesh16, zero))).max() == 0.0
    ident = hm.equivariant_field(mesh16, fuchsian, lambda z: z)
    assert np.abs(hm.tension(mesh16, ident, hm.derivatives(mesh16, ident))).max() < 1e-9
    crep = conjugate_rep(fuchsian)
    anti = hm.equivariant_field(mesh16, crep, np.conj)
    assert hm.link_residual(mesh16, anti) < 1e-12
    assert np.abs(hm.tension(mesh16, anti, hm.derivatives(mesh16, anti))).max() < 1e-9


# --- solve ---------------------------------------------------------------------------


def test_solve_case_V_stays_at_zero(mesh16):
    rep = mb.example_holonomy("V")
    f = hm.solve(rep, mesh16)
    assert f.converged and f.iterations == 0 and f.residual == 0.0
    assert np.all(f.values == 0)


def test_solve_case_II_identity_is_fixed_point(mesh16, fuchsian):
    f = hm.solve(fuchsian, mesh16)
    assert f.converged and f.iterations == 0 and f.residual < 1e-8


def test_solve_case_II_perturbed_reconverges(mesh16, fuchsian):
    init = hm.equivariant_field(mesh16, fuchsian, lambda z: z + 0.01 * np.conj(z))
    f = hm.solve(fuchsian, mesh16, init=init)
    d = hm.derivatives(mesh16, f)
    assert f.converged
    assert np.abs(d.hzb).max() < 1e-3


def test_solve_case_I(case_I_24, mesh24):
    f, d = case_I_24
    assert f.converged and f.residual < 1e-8
    assert np.abs(f.values).max() < 1
    assert hm.link_residual(mesh24, f) < 1e-12
    assert np.abs(d.hzb).max() > 1e-2
    gap = np.abs(d.hz) - np.abs(d.hzb)
    assert np.mean(np.abs(gap) > 0) > 0.9
    assert np.abs(hm.tension(mesh24, f, d)[mesh24.dofs]).max() < 1e-8


def test_solve_is_deterministic(mesh16):
    rep = mb.example_holonomy("I", twist=0.5)
    a, b = hm.solve(rep, mesh16), hm.solve(rep, mesh16)
    assert np.array_equal(a.values, b.values)


def test_energy_flow_is_monotone(mesh16):
    rep = mb.example_holonomy("I", twist=0.5)
    init = hm.default_init(mesh16, rep)
    f = hm.energy_flow(mesh16, rep, init, SolverConfig(max_iters=100), tol=1e-6)
    E = np.array(f.energy_history)
    assert f.converged and len(E) > 2
    assert np.all(np.diff(E) <= 64 * np.finfo(float).eps * E[0])
    # equivariance is exact along the iteration
    assert hm.link_residual(mesh16, f) <= max(10 * hm.link_residual(mesh16, init), 1e-12)


def test_collocation_jacobian_matches_fd(mesh8, rng):
    rep = mb.example_holonomy("I", twist=0.5)
    col = hm._Collocation(mesh8, rep)
    u = hm.default_init(mesh8, rep).values[col.dofs] * 0.9
    D = len(u)
    J = col.jacobian(u).toarray()
    e = 1e-7
    worst = 0.0
    for k in rng.choice(2 * D, 12, replace=False):
        du = np.zeros(D, dtype=complex)
        du[k % D] = e if k < D else 1j * e
        t = (col.residual(u + du) - col.residual(u - du)) / (2 * e)
        fd = np.concatenate([t.real, t.imag])
        worst = max(worst, np.abs(fd - J[:, k]).max() / max(np.abs(J[:, k]).max(), 1.0))
    assert worst < 1e-5


def test_nonconvergence_is_reported(mesh8):
    rep = mb.example_holonomy("I", twist=0.5)
    with pytest.raises(hm.NonConvergence) as info:
        hm.energy_flow(mesh8, rep, hm.default_init(mesh8, rep), SolverConfig(max_iters=1))
    assert info.value.iterations == 1


@pytest.mark.parametrize("kind", ["hyperbolic", "parabolic"])
def test_case_IV_does_not_converge(mesh16, kind):
    # very coarse meshes (resolution 8) can carry a spurious discrete root
    rep = mb.example_holonomy("IV", kind=kind)
    with pytest.raises((hm.NonConvergence, hm.BlowUp)):
        hm.solve(rep, mesh16, SolverConfig(max_iters=15))


def test_solver_rejects_incompatible_rep(mesh8):
    with pytest.raises(ValueError):
        hm.solve(HolonomyRep((mb.IDENTITY,) * 2, 1), mesh8)


# --- Hopf differential ----------------------------------------------------------------


def test_hopf_vanishes_for_holomorphic_and_constant(mesh16, fuchsian):
    for f in (
        hm.equivariant_field(mesh16, fuchsian, lambda z: z),
        MapField(np.zeros(mesh16.n_nodes), mb.example_holonomy("V")),
    ):
        hp = hm.hopf(mesh16, f, hm.derivatives(mesh16, f))
        assert np.abs(hp.phi).max() < 1e-9
        with pytest.raises(ValueError):
            hm.count_hopf_zeros(mesh16, hp)


def test_hopf_dbar_converges(case_I_24, mesh24, pipeline_I_48):
    f, d = case_I_24
    e24 = np.abs(hm.hopf_dbar(mesh24, hm.hopf(mesh24, f, d))).max()
    p = pipeline_I_48
    e48 = np.abs(p.hopf_dbar).max()
    order = math.log(e24 / e48) / math.log(mesh24.max_edge() / p.mesh.max_edge())
    assert order >= 1.0


@pytest.mark.parametrize("power", [1, 2])
def test_winding_counts_simple_zeros(mesh16, power):
    c = 0.013 - 0.021j
    phi = (mesh16.nodes - c) ** power
    assert hm.count_hopf_zeros(mesh16, HopfField(phi)) == power


def test_zero_count_case_I_and_contour_invariance(case_I_24, mesh24):
    f, d = case_I_24
    hp = hm.hopf(mesh24, f, d)
    assert hm.count_hopf_zeros(mesh24, hp) == 4
    h = mesh24.max_edge()
    for k in range(4):
        off = 0.1 * h * np.exp(1j * (0.4 + 1.7 * k))
        assert hm.count_hopf_zeros(mesh24, hp, offset=off) == 4
    zeros = hm.locate_hopf_zeros(mesh24, hp)
    assert sum(k for _, k in zeros) == 4


# --- classification --------------------------------------------------------------------


def _derivs(hz, hzb):
    return DerivField(np.asarray(hz, complex), np.asarray(hzb, complex), np.zeros(len(hz), complex))


def test_classify_decision_table(mesh8, fuchsian):
    n = mesh8.n_nodes
    f = MapField(np.zeros(n), fuchsian)
    ones, zeros = np.ones(n), np.zeros(n)
    assert hm.classify(mesh8, f, _derivs(zeros, zeros)).tag == "V"
    assert hm.classify(mesh8, f, _derivs(ones, zeros)).tag == "II"
    assert hm.classify(mesh8, f, _derivs(0.5 * ones, 0.5j * ones)).tag == "III"
    assert hm.classify(mesh8, f, _derivs(ones, 0.3 * ones)).tag == "I"
    # rank 2 only at isolated nodes: no open set, so undetermined
    hz = np.where(np.arange(n) == 5, 1.0, 0.5)
    assert hm.classify(mesh8, f, _derivs(hz, 0.5 * ones)).tag == "Undetermined"
    iv = MapField(np.zeros(n), mb.example_holonomy("IV"))
    assert hm.classify(mesh8, iv, _derivs(ones, 0.3 * ones)).tag == "IV"


def test_classify_case_III(mesh16):
    rep = mb.example_holonomy("III")
    f = hm.solve(rep, mesh16)
    d = hm.derivatives(mesh16, f)
    case = hm.classify(mesh16, f, d)
    assert case.tag == "III"
    assert case.diagnostics["rank_counts"][2] == 0


def test_classify_case_I(case_I_24, mesh24):
    f, d = case_I_24
    case = hm.classify(mesh24, f, d)
    assert case.tag == "I"
    assert case.diagnostics["rank2_open"] and case.diagnostics["rank2_fraction"] > 0.5
