"""Fundamental polygon, its triangulation and derivative recovery.

The surface is modelled by one fundamental 4g-gon in the disc.  Triangles are
flat in the disc coordinate z; boundary nodes sit on the geodesic sides, placed
at equal hyperbolic arclength so that each side-pairing sends the nodes of a
side exactly onto the nodes of its partner.

Every node carries an orbit representative and a word W in the generators with
pos[node] = Gamma(W)(pos[rep]).  Interior nodes are their own representative.
"""

from __future__ import annotations

import csv
import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import moebius as mb
from .moebius import HolonomyRep, MoebiusTransform, Word

DEFAULT_RESOLUTION = 48
MIN_ANGLE_DEG = 10.0


class RelationViolated(ValueError):
    pass


class PairingMismatch(ValueError):
    pass


class DegenerateTriangle(ValueError):
    pass


class RankDeficientStencil(ValueError):
    pass


@dataclass(frozen=True)
class Pairing:
    side: int
    partner: int
    generator: int  # 1-based generator index
    transform: MoebiusTransform


@dataclass(frozen=True)
class FundamentalPolygon:
    vertices: np.ndarray
    pairings: tuple[Pairing, ...]
    group: HolonomyRep
    corner_words: tuple[Word, ...]

    @property
    def genus(self) -> int:
        return self.group.genus

    @property
    def n_sides(self) -> int:
        return len(self.vertices)

    def side_point(self, side: int, t):
        """Point at hyperbolic-arclength fraction t along side `side`."""
        n = self.n_sides
        v0, v1 = self.vertices[side], self.vertices[(side + 1) % n]
        T = mb.translation_to_origin(v0)
        w = mb.apply(T, v1)
        d = 2.0 * math.atanh(abs(w))
        p = np.tanh(0.5 * d * np.asarray(t, dtype=float)) * (w / abs(w))
        return mb.apply(T.inverse(), p)

    def vertex_angles(self) -> np.ndarray:
        v = self.vertices
        n = len(v)
        return np.array([mb.vertex_angle(v[k], v[(k + 1) % n], v[k - 1]) for k in range(n)])

    def pairing_residual(self) -> float:
        n = self.n_sides
        res = 0.0
        for p in self.pairings:
            a, b = self.vertices[p.side], self.vertices[(p.side + 1) % n]
            c, d = self.vertices[p.partner], self.vertices[(p.partner + 1) % n]
            res = max(res, abs(mb.apply(p.transform, a) - d), abs(mb.apply(p.transform, b) - c))
        return res


def _corner_words(genus: int) -> list[Word]:
    """Words g_k with v_k = g_k(v_0), found by walking the vertex cycle."""
    n = 4 * genus
    moves: dict[int, list[tuple[int, int]]] = {k: [] for k in range(n)}
    for j, (src, tgt) in enumerate(mb.generator_sides(genus), start=1):
        # generator j: v_src -> v_{tgt+1}, v_{src+1} -> v_tgt
        for a, b in ((src, (tgt + 1) % n), ((src + 1) % n, tgt)):
            moves[a].append((b, j))
            moves[b].append((a, -j))
    words: dict[int, Word] = {0: ()}
    queue = deque([0])
    while queue:
        k = queue.popleft()
        for k2, letter in moves[k]:
            if k2 not in words:
                words[k2] = mb.reduce_word((letter,) + words[k])
                queue.append(k2)
    if len(words) != n:
        raise PairingMismatch("vertices do not form a single cycle")
    return [words[k] for k in range(n)]


def build_polygon(genus: int = 2, rep: HolonomyRep | None = None) -> FundamentalPolygon:
    """Fundamental 4g-gon whose sides are paired by the generators of `rep`.

    Without `rep` the Fuchsian group of the regular polygon (all vertex angles
    2*pi/4g) is used.  For a deformed group the vertices are the images of the
    base vertex under the corner words, and the pairings are re-verified.
    """
    verts0, gens0 = mb.fuchsian_generators(genus)
    if rep is None:
        rep = HolonomyRep(tuple(gens0), genus, "II")
    if len(rep.generators) != 2 * genus:
        raise PairingMismatch(f"need {2 * genus} generators, got {len(rep.generators)}")
    if mb.relation_residual(rep) > 1e-9:
        raise RelationViolated(f"relation residual {mb.relation_residual(rep):.3e}")
    words = _corner_words(genus)
    verts = np.array([mb.apply(rep.evaluate(w), verts0[0]) for w in words])
    pairings = tuple(
        Pairing(tgt, src, j, rep.generators[j - 1].inverse())
        for j, (src, tgt) in enumerate(mb.generator_sides(genus), start=1)
    )
    poly = FundamentalPolygon(verts, pairings, rep, tuple(words))
    if poly.pairing_residual() > 1e-10:
        raise PairingMismatch(f"pairing residual {poly.pairing_residual():.3e}")
    return poly


@dataclass
class TriMesh:
    nodes: np.ndarray  # complex positions
    triangles: np.ndarray  # (T, 3) int, counter-clockwise
    rep_of: np.ndarray  # orbit representative per node
    words: list  # word per node: pos = Gamma(word)(pos[rep])
    interior: np.ndarray  # bool
    polygon: FundamentalPolygon
    resolution: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def group(self) -> HolonomyRep:
        return self.polygon.group

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def dofs(self) -> np.ndarray:
        return np.flatnonzero(self.rep_of == np.arange(self.n_nodes))

    @property
    def boundary_links(self) -> list[tuple[int, int, Word]]:
        """(representative, node, word) for every boundary node that is not its own rep."""
        out = []
        for n in np.flatnonzero(self.rep_of != np.arange(self.n_nodes)):
            out.append((int(self.rep_of[n]), int(n), self.words[n]))
        return out

    def edges(self) -> np.ndarray:
        if "edges" not in self._cache:
            t = self.triangles
            e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            e.sort(axis=1)
            self._cache["edges"] = np.unique(e, axis=0)
        return self._cache["edges"]

    def max_edge(self) -> float:
        e = self.edges()
        return float(np.abs(self.nodes[e[:, 0]] - self.nodes[e[:, 1]]).max())

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1.real * d2.imag - d1.imag * d2.real)

    def min_angle(self) -> float:
        p = self.nodes[self.triangles]
        out = np.inf
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            ang = np.abs(np.angle(v / u))
            out = min(out, float(ang.min()))
        return math.degrees(out)

    def lumped_mass(self) -> np.ndarray:
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.triangles.ravel(), np.repeat(self.areas() / 3.0, 3))
        return m

    def word_transform(self, word: Word, rep: HolonomyRep | None = None) -> MoebiusTransform:
        return (rep or self.group).evaluate(word)

    def distinct_words(self) -> dict[Word, np.ndarray]:
        """Nodes grouped by their orbit word."""
        if "word_groups" not in self._cache:
            groups: dict[Word, list[int]] = {}
            for n, w in enumerate(self.words):
                groups.setdefault(w, []).append(n)
            self._cache["word_groups"] = {w: np.array(v) for w, v in groups.items()}
        return self._cache["word_groups"]

    def link_residual(self) -> float:
        res = 0.0
        for r, n, w in self.boundary_links:
            res = max(res, abs(self.nodes[n] - mb.apply(self.group.evaluate(w), self.nodes[r])))
        return res

    def euler_characteristic(self) -> int:
        """V - E + F of the identified (closed) surface mesh."""
        V = len(self.dofs)
        # paired boundary edges collapse to one; rep pairs alone are ambiguous at
        # corners, so key each edge by its reps and the transported group element
        bnd = ~self.interior[self.edges()].any(axis=1)
        interior_edges = int((~bnd).sum())
        e_b = self.edges()[bnd]
        keyset = set()
        for a, b in e_b:
            ka = (int(self.rep_of[a]), self.words[a])
            kb = (int(self.rep_of[b]), self.words[b])
            # canonical: transport so that the first endpoint sits at its rep
            inv = mb.invert_word(self.words[a])
            wb = mb.reduce_word(inv + self.words[b])
            key1 = (ka[0], kb[0], self._canon(wb))
            inv2 = mb.invert_word(self.words[b])
            wa = mb.reduce_word(inv2 + self.words[a])
            key2 = (kb[0], ka[0], self._canon(wa))
            keyset.add(min(key1, key2))
        E = interior_edges + len(keyset)
        return V - E + len(self.triangles)

    def _canon(self, w: Word) -> tuple:
        m = self.group.evaluate(w)
        s = 1.0 if m.a.real >= 0 else -1.0
        return tuple(np.round(np.array(m.to_record()) * s, 8))

    def hash(self) -> str:
        if "hash" not in self._cache:
            h = hashlib.sha256()
            h.update(np.ascontiguousarray(self.nodes).tobytes())
            h.update(np.ascontiguousarray(self.triangles.astype(np.int64)).tobytes())
            h.update(np.ascontiguousarray(self.rep_of.astype(np.int64)).tobytes())
            self._cache["hash"] = h.hexdigest()
        return self._cache["hash"]

    def export_csv(self, directory: str | Path) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / "mesh_nodes.csv", d / "mesh_triangles.csv", d / "mesh_links.csv"]
        with open(paths[0], "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "re_z", "im_z", "interior"])
            for i, z in enumerate(self.nodes):
                w.writerow([i, repr(float(z.real)), repr(float(z.imag)), int(self.interior[i])])
        with open(paths[1], "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "n0", "n1", "n2"])
            for i, t in enumerate(self.triangles):
                w.writerow([i, *map(int, t)])
        with open(paths[2], "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["node", "partner", "generator_word"])
            for r, n, word in self.boundary_links:
                w.writerow([r, n, mb.word_str(word)])
        return paths


def node_count(genus: int, resolution: int) -> int:
    """Closed form for the fan triangulation: centre plus 4g*i nodes on ring i."""
    return 1 + 2 * genus * resolution * (resolution + 1)


def triangulate(poly: FundamentalPolygon, resolution: int = DEFAULT_RESOLUTION) -> TriMesh:
    """Fan triangulation: 4g sectors from the centre, each split into resolution^2 triangles."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    n = resolution
    ns = poly.n_sides

    def gidx(k, i, j):
        if i == 0:
            return 0
        return 1 + ns * i * (i - 1) // 2 + (k * i + j) % (ns * i)

    N = node_count(poly.genus, n)
    nodes = np.zeros(N, dtype=complex)
    for k in range(ns):
        for i in range(1, n + 1):
            t = np.arange(i) / i
            # side point at fraction t, scaled towards the centre
            pts = (i / n) * poly.side_point(k, t)
            for j in range(i):
                nodes[gidx(k, i, j)] = pts[j]
    tris = []
    for k in range(ns):
        for i in range(1, n + 1):
            for j in range(i):
                tris.append((gidx(k, i - 1, j), gidx(k, i, j), gidx(k, i, j + 1)))
            for j in range(1, i):
                tris.append((gidx(k, i - 1, j - 1), gidx(k, i, j), gidx(k, i - 1, j)))
    tris = np.array(tris, dtype=np.int64)
    p = nodes[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = 0.5 * (d1.real * d2.imag - d1.imag * d2.real)
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    if np.any(np.abs(area) < 1e-14):
        raise DegenerateTriangle("zero-area triangle in fan triangulation")

    rep_of = np.arange(N)
    words: list[Word] = [()] * N
    interior = np.ones(N, dtype=bool)
    corner = [gidx(k, n, 0) for k in range(ns)]
    for k in range(ns):
        for j in range(n):
            interior[gidx(k, n, j)] = False
    for k in range(1, ns):
        rep_of[corner[k]] = corner[0]
        words[corner[k]] = poly.corner_words[k]
    for pr in poly.pairings:
        # generator maps side pr.partner (source) onto side pr.side (target):
        # fraction t on the source lands at fraction 1-t on the target
        for j in range(1, n):
            src = gidx(pr.partner, n, j)
            tgt = gidx(pr.side, n, n - j)
            rep_of[tgt] = src
            words[tgt] = (pr.generator,)
    mesh = TriMesh(nodes, tris, rep_of, words, interior, poly, n)
    if mesh.min_angle() < MIN_ANGLE_DEG:
        raise DegenerateTriangle(f"minimum angle {mesh.min_angle():.2f} deg below floor")
    return mesh


# --- unfolded neighbourhoods and derivative stencils --------------------------


@dataclass
class Stencil:
    """Linear derivative functionals acting on extended node values.

    The extended vector is the node values followed by ghost values: ghost g is
    node ghost_node[g] seen through ghost_word[g], located at ghost_pos[g].
    """

    mesh: TriMesh
    ghost_node: np.ndarray
    ghost_word: list
    ghost_pos: np.ndarray
    dz: sp.csr_matrix
    dzb: sp.csr_matrix
    dzzb: sp.csr_matrix
    dzz: sp.csr_matrix
    dzbzb: sp.csr_matrix

    @property
    def ext_pos(self) -> np.ndarray:
        return np.concatenate([self.mesh.nodes, self.ghost_pos])

    def _word_groups(self):
        groups: dict[Word, list[int]] = {}
        for g, w in enumerate(self.ghost_word):
            groups.setdefault(w, []).append(g)
        return {w: np.array(v) for w, v in groups.items()}

    def extend(self, values: np.ndarray, kind: str = "scalar", rep: HolonomyRep | None = None):
        """Append ghost values for a field of the given transformation type.

        kind: 'scalar'    invariant function, f(gz) = f(z)
              'map'       equivariant section, h(gz) = rho(g) h(z); needs rep
              'quadratic' quadratic differential, phi(gz) g'(z)^2 = phi(z)
        """
        values = np.asarray(values)
        ghost = np.empty(len(self.ghost_node), dtype=complex)
        if len(ghost):
            src = values[self.ghost_node]
            for w, idx in self._word_groups().items():
                if kind == "scalar":
                    ghost[idx] = src[idx]
                elif kind == "map":
                    ghost[idx] = mb.apply(rep.evaluate(w), src[idx])
                elif kind == "quadratic":
                    d = mb.apply_deriv(self.mesh.group.evaluate(w), self.mesh.nodes[self.ghost_node[idx]])
                    ghost[idx] = src[idx] / d**2
                else:
                    raise ValueError(f"unknown field kind {kind!r}")
        out = np.concatenate([values.astype(complex), ghost])
        return out.real if kind == "scalar" and np.isrealobj(values) else out

    def derivatives(self, ext_values: np.ndarray) -> dict[str, np.ndarray]:
        return {
            "z": self.dz @ ext_values,
            "zb": self.dzb @ ext_values,
            "zzb": self.dzzb @ ext_values,
            "zz": self.dzz @ ext_values,
            "zbzb": self.dzbzb @ ext_values,
        }


def _unfolded_neighbourhoods(mesh: TriMesh, rings: int = 2):
    """For each node, the nodes within `rings` edges on the universal cover.

    Returns per node a list of (node, word) states with word=() for plain
    polygon nodes.
    """
    N = mesh.n_nodes
    adj: list[set] = [set() for _ in range(N)]
    for a, b in mesh.edges():
        adj[a].add(int(b))
        adj[b].add(int(a))
    orbit: dict[int, list[int]] = {}
    for n in range(N):
        orbit.setdefault(int(mesh.rep_of[n]), []).append(n)
    interior = mesh.interior
    near_bnd = ~interior.copy()
    for _ in range(rings):
        grow = near_bnd.copy()
        for a, b in mesh.edges():
            if near_bnd[a] or near_bnd[b]:
                grow[a] = grow[b] = True
        near_bnd = grow

    group = mesh.group
    tcache: dict[Word, MoebiusTransform] = {}

    def transform(w):
        if w not in tcache:
            tcache[w] = group.evaluate(w)
        return tcache[w]

    def copies(n):
        # (m, c) with pos[m] = c(pos[n])
        if interior[n]:
            return [(n, ())]
        wn_inv = mb.invert_word(mesh.words[n])
        return [(m, mb.reduce_word(mesh.words[m] + wn_inv)) for m in orbit[int(mesh.rep_of[n])]]

    def pos(state):
        k, w = state
        return mesh.nodes[k] if not w else mb.apply(transform(w), mesh.nodes[k])

    out = []
    for n in range(N):
        if not near_bnd[n]:
            ring = {n}
            frontier = {n}
            for _ in range(rings):
                nxt = set()
                for a in frontier:
                    nxt |= adj[a]
                nxt -= ring
                ring |= nxt
                frontier = nxt
            ring.discard(n)
            out.append([(k, ()) for k in sorted(ring)])
            continue
        seen = {_key(mesh.nodes[n]): (n, ())}
        frontier = [(n, ())]
        for _ in range(rings):
            nxt = []
            for k, g in frontier:
                for m, c in copies(k):
                    gc = mb.reduce_word(g + mb.invert_word(c))
                    for q in adj[m]:
                        st = (q, gc)
                        key = _key(pos(st))
                        if key not in seen:
                            seen[key] = st
                            nxt.append(st)
            frontier = nxt
        del seen[_key(mesh.nodes[n])]
        out.append(sorted(seen.values(), key=lambda s: (len(s[1]), s[0], s[1])))
    return out, transform


def _key(z: complex) -> tuple[int, int]:
    return (int(round(z.real * 1e9)), int(round(z.imag * 1e9)))


def gradient_stencil(mesh: TriMesh, rings: int = 2) -> Stencil:
    """Two-ring weighted least-squares derivative recovery, exact on cubics."""
    if "stencil" in mesh._cache:
        return mesh._cache["stencil"]
    hoods, transform = _unfolded_neighbourhoods(mesh, rings)
    N = mesh.n_nodes
    pos_index = {_key(z): i for i, z in enumerate(mesh.nodes)}
    ghost_index: dict[tuple, int] = {}
    ghost_node, ghost_word, ghost_pos = [], [], []
    cols_per_node = []
    for n, hood in enumerate(hoods):
        cols = []
        for k, w in hood:
            if not w:
                cols.append(k)
                continue
            z = mb.apply(transform(w), mesh.nodes[k])
            key = _key(z)
            if key in pos_index:
                cols.append(pos_index[key])
                continue
            if key not in ghost_index:
                ghost_index[key] = len(ghost_node)
                ghost_node.append(k)
                ghost_word.append(w)
                ghost_pos.append(z)
            cols.append(N + ghost_index[key])
        cols_per_node.append(cols)
    ghost_pos = np.array(ghost_pos, dtype=complex)
    ext = np.concatenate([mesh.nodes, ghost_pos])

    kmax = max(len(c) for c in cols_per_node)
    if min(len(c) for c in cols_per_node) < 9:
        raise RankDeficientStencil("a node has fewer than 9 neighbours within two rings")
    colmat = np.zeros((N, kmax), dtype=np.int64)
    mask = np.zeros((N, kmax), dtype=bool)
    for n, c in enumerate(cols_per_node):
        colmat[n, : len(c)] = c
        mask[n, : len(c)] = True
    d = ext[colmat] - mesh.nodes[:, None]
    scale = np.sqrt((np.abs(d) ** 2 * mask).sum(1) / mask.sum(1))
    ds = d / scale[:, None]
    x, y = ds.real, ds.imag
    # cubic fit so that second derivatives are second-order accurate
    A = np.stack(
        [x, y, x * x, x * y, y * y, x**3, x * x * y, x * y * y, y**3], axis=-1
    ) * mask[..., None]
    wts = np.where(mask, 1.0 / np.maximum(np.abs(ds) ** 2, 1e-30), 0.0)
    AtW = np.swapaxes(A, 1, 2) * wts[:, None, :]
    G = AtW @ A
    cond = np.linalg.cond(G)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
        raise RankDeficientStencil(f"ill-conditioned stencil (cond {np.nanmax(cond):.2e})")
    coef = np.linalg.solve(G, AtW)  # (N, 9, kmax): fit coefficients per neighbour
    s1 = scale[:, None]
    cx, cy = coef[:, 0] / s1, coef[:, 1] / s1
    s2 = scale[:, None] ** 2
    cxx, cxy, cyy = 2 * coef[:, 2] / s2, coef[:, 3] / s2, 2 * coef[:, 4] / s2

    def assemble(wnb):
        wnb = np.where(mask, wnb, 0)
        rows = np.repeat(np.arange(N), kmax)
        M = sp.csr_matrix((wnb.ravel(), (rows, colmat.ravel())), shape=(N, len(ext)))
        diag = sp.csr_matrix((-wnb.sum(1), (np.arange(N), np.arange(N))), shape=(N, len(ext)))
        return (M + diag).tocsr()

    st = Stencil(
        mesh,
        np.array(ghost_node, dtype=np.int64),
        ghost_word,
        ghost_pos,
        dz=assemble(0.5 * (cx - 1j * cy)),
        dzb=assemble(0.5 * (cx + 1j * cy)),
        dzzb=assemble(0.25 * (cxx + cyy)),
        dzz=assemble(0.25 * (cxx - cyy - 2j * cxy)),
        dzbzb=assemble(0.25 * (cxx - cyy + 2j * cxy)),
    )
    mesh._cache["stencil"] = st
    return st
