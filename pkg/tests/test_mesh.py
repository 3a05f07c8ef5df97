import csv
import math

import numpy as np
import pytest

from discbundle import moebius as mb
from discbundle.mesh import (
    MIN_ANGLE_DEG,
    PairingMismatch,
    RelationViolated,
    build_polygon,
    gradient_stencil,
    node_count,
    triangulate,
)
from discbundle.moebius import HolonomyRep, MoebiusTransform

from conftest import get_mesh


def test_octagon_geometry():
    poly = build_polygon(2)
    R = mb.regular_polygon_radius(8, math.pi / 4)
    assert R == pytest.approx(0.8408964152537, abs=1e-12)
    assert len(poly.vertices) == 8
    assert np.allclose(np.abs(poly.vertices), R, atol=1e-12)
    ang = poly.vertex_angles()
    assert np.allclose(ang, math.pi / 4, atol=1e-10)
    assert abs(ang.sum() - 2 * math.pi) < 1e-10
    assert poly.pairing_residual() < 1e-10
    assert len(poly.pairings) == 4


def test_twisted_polygon_pairings():
    rep = mb.example_holonomy("I", twist=0.5)
    poly = build_polygon(2, rep)
    assert poly.pairing_residual() < 1e-10
    assert abs(poly.vertex_angles().sum() - 2 * math.pi) < 1e-10


def test_build_polygon_errors(fuchsian):
    g = list(fuchsian.generators)
    bad = MoebiusTransform(g[0].a, g[0].b + 1e-3).normalized()
    with pytest.raises(RelationViolated):
        build_polygon(2, HolonomyRep((bad, *g[1:]), 2))
    with pytest.raises(PairingMismatch):
        build_polygon(2, HolonomyRep(tuple(g[:2]), 1))


def test_node_count_closed_form():
    m = triangulate(build_polygon(2), 2)
    assert m.n_nodes == node_count(2, 2) == 1 + 2 * 2 * 2 * 3
    with pytest.raises(ValueError):
        triangulate(build_polygon(2), 1)


@pytest.mark.parametrize("res", [4, 16])
def test_mesh_invariants(res):
    m = get_mesh(res)
    assert np.all(m.areas() > 0)
    assert m.min_angle() >= MIN_ANGLE_DEG
    assert m.link_residual() < m.max_edge() / 10
    assert m.euler_characteristic() == -2
    # conforming: every edge lies in at most two triangles
    t = m.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert counts.max() <= 2
    # every non-representative boundary node has exactly one link
    linked = [n for _, n, _ in m.boundary_links]
    assert len(linked) == len(set(linked))
    assert set(linked) == set(np.flatnonzero(m.rep_of != np.arange(m.n_nodes)))
    assert not m.interior[linked].any()


def test_corners_form_one_orbit():
    m = get_mesh(4)
    corners = [int(np.argmin(np.abs(m.nodes - v))) for v in m.polygon.vertices]
    assert len({int(m.rep_of[c]) for c in corners}) == 1


def test_refinement_halves_edges():
    r = get_mesh(8).max_edge() / get_mesh(16).max_edge()
    assert 2 / 1.2 <= r <= 2 * 1.2


def test_hash_is_stable():
    a = triangulate(build_polygon(2), 6)
    b = triangulate(build_polygon(2), 6)
    assert a.hash() == b.hash()
    assert a.hash() != get_mesh(8).hash()


def test_export_csv(tmp_path):
    m = get_mesh(4)
    paths = m.export_csv(tmp_path)
    rows = [list(csv.reader(open(p))) for p in paths]
    assert rows[0][0] == ["index", "re_z", "im_z", "interior"]
    assert len(rows[0]) - 1 == m.n_nodes
    assert len(rows[1]) - 1 == len(m.triangles)
    assert len(rows[2]) - 1 == len(m.boundary_links)


# --- stencil -----------------------------------------------------------------------


def _apply(st, f):
    return st.dz @ f(st.ext_pos), st.dzb @ f(st.ext_pos)


def test_stencil_exact_on_polynomials():
    m = get_mesh(8)
    st = gradient_stencil(m)
    z = m.nodes
    cases = [
        (lambda w: w, 1.0, 0.0),
        (lambda w: w * w, 2 * z, 0.0),
        (lambda w: w * w.conj(), z.conj(), z),
        (lambda w: w.conj() ** 2, 0.0, 2 * z.conj()),
        (lambda w: w**3, 3 * z * z, 0.0),
        (lambda w: w * w * w.conj(), 2 * z * z.conj(), z * z),
    ]
    for f, fz, fzb in cases:
        dz, dzb = _apply(st, f)
        assert np.abs(dz - fz).max() < 1e-9
        assert np.abs(dzb - fzb).max() < 1e-9
    zzb = st.dzzb @ (st.ext_pos * st.ext_pos.conj())
    assert np.abs(zzb - 1).max() < 1e-9


def test_stencil_exp_converges_second_order():
    errs, hs = [], []
    for res in (8, 16):
        m = get_mesh(res)
        st = gradient_stencil(m)
        dz, dzb = _apply(st, np.exp)
        errs.append(max(np.abs(dz - np.exp(m.nodes)).max(), np.abs(dzb).max()))
        hs.append(m.max_edge())
    order = math.log(errs[0] / errs[1]) / math.log(hs[0] / hs[1])
    assert order >= 1.8


def test_stencil_equivariance_transport(case_I_24, mesh24, pipeline_I_48):
    # h(gz) = rho(g) h(z) gives h_z(gz) g'(z) = rho(g)'(h(z)) h_z(z) at paired nodes
    def worst(mesh, f, d):
        err = 0.0
        for r, n, w in mesh.boundary_links:
            g, rho = mesh.group.evaluate(w), f.rep.evaluate(w)
            lhs = d.hz[n] * mb.apply_deriv(g, mesh.nodes[r])
            rhs = mb.apply_deriv(rho, f.values[r]) * d.hz[r]
            err = max(err, abs(lhs - rhs))
        return err

    f24, d24 = case_I_24
    e24 = worst(mesh24, f24, d24)
    p = pipeline_I_48
    e48 = worst(p.mesh, p.map_field, p.derivs)
    assert e48 < e24 / 3.5
