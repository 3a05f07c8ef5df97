"""Hyperbolic geometry of the unit disc.

Disc automorphisms are stored in the normal form

    z -> (a z + b) / (conj(b) z + conj(a)),   |a|^2 - |b|^2 = 1,

which is the SU(1,1) model of Aut(D).  Every composition is renormalized so the
pseudo-determinant does not drift over long words.
"""

from __future__ import annotations

import cmath
import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CLASSIFY_EPS = 1e-9


class NonHyperbolicElement(ValueError):
    pass


class CommutatorNotHyperbolic(ValueError):
    pass


class Kind(enum.Enum):
    ELLIPTIC = "Elliptic"
    PARABOLIC = "Parabolic"
    HYPERBOLIC = "Hyperbolic"
    IDENTITY = "Identity"


@dataclass(frozen=True)
class ElementClass:
    tag: Kind
    trace: float


@dataclass(frozen=True)
class MoebiusTransform:
    a: complex
    b: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "a", complex(self.a))
        object.__setattr__(self, "b", complex(self.b))

    @property
    def matrix(self) -> np.ndarray:
        a, b = self.a, self.b
        return np.array([[a, b], [b.conjugate(), a.conjugate()]])

    @property
    def pseudo_det(self) -> float:
        return abs(self.a) ** 2 - abs(self.b) ** 2

    @property
    def trace(self) -> float:
        return 2.0 * self.a.real

    def normalized(self) -> "MoebiusTransform":
        d = self.pseudo_det
        if d > 0:
            s = math.sqrt(d)
            return MoebiusTransform(self.a / s, self.b / s)
        # huge entries: |a|^2 - |b|^2 lost to rounding, project onto |a|^2 = 1 + |b|^2
        if self.a == 0:
            raise ValueError("degenerate transform: a = 0")
        return MoebiusTransform(self.a / abs(self.a) * math.hypot(1.0, abs(self.b)), self.b)

    def inverse(self) -> "MoebiusTransform":
        return MoebiusTransform(self.a.conjugate(), -self.b)

    def __matmul__(self, other: "MoebiusTransform") -> "MoebiusTransform":
        return compose(self, other)

    def __call__(self, z):
        return apply(self, z)

    def to_record(self) -> list[float]:
        return [self.a.real, self.a.imag, self.b.real, self.b.imag]

    @classmethod
    def from_record(cls, rec: Sequence[float]) -> "MoebiusTransform":
        return cls(complex(rec[0], rec[1]), complex(rec[2], rec[3]))


IDENTITY = MoebiusTransform(1.0, 0.0)


def compose(m1: MoebiusTransform, m2: MoebiusTransform) -> MoebiusTransform:
    """Matrix product m1 * m2 (apply m2 first), renormalized."""
    a = m1.a * m2.a + m1.b * m2.b.conjugate()
    b = m1.a * m2.b + m1.b * m2.a.conjugate()
    return MoebiusTransform(a, b).normalized()


def compose_all(ms: Iterable[MoebiusTransform]) -> MoebiusTransform:
    out = IDENTITY
    for m in ms:
        out = compose(out, m)
    return out


def apply(m: MoebiusTransform, z):
    """Evaluate m at z (scalar or ndarray).

    Raises ValueError for points outside the closed unit disc, where the
    denominator may vanish.
    """
    zz = np.asarray(z)
    if np.any(np.abs(zz) > 1.0 + 1e-12):
        raise ValueError("apply: argument outside the closed unit disc")
    den = m.b.conjugate() * zz + m.a.conjugate()
    out = (m.a * zz + m.b) / den
    return complex(out) if np.ndim(out) == 0 else out


def apply_deriv(m: MoebiusTransform, z):
    zz = np.asarray(z)
    if np.any(np.abs(zz) > 1.0 + 1e-12):
        raise ValueError("apply_deriv: argument outside the closed unit disc")
    out = 1.0 / (m.b.conjugate() * zz + m.a.conjugate()) ** 2
    return complex(out) if np.ndim(out) == 0 else out


def apply_deriv2(m: MoebiusTransform, z):
    """Second complex derivative of m at z."""
    zz = np.asarray(z)
    out = -2.0 * m.b.conjugate() / (m.b.conjugate() * zz + m.a.conjugate()) ** 3
    return complex(out) if np.ndim(out) == 0 else out


def from_sl2(M: np.ndarray) -> MoebiusTransform:
    """Project a 2x2 complex matrix that preserves the disc onto normal form."""
    M = np.asarray(M, dtype=complex)
    M = M / cmath.sqrt(np.linalg.det(M))
    a = 0.5 * (M[0, 0] + M[1, 1].conjugate())
    b = 0.5 * (M[0, 1] + M[1, 0].conjugate())
    return MoebiusTransform(a, b).normalized()


def rotation(theta: float) -> MoebiusTransform:
    return MoebiusTransform(cmath.exp(0.5j * theta), 0.0)


def translation_to_origin(w: complex) -> MoebiusTransform:
    """The automorphism z -> (z - w)/(1 - conj(w) z)."""
    return MoebiusTransform(1.0, -w).normalized()


def distance_to_identity(m: MoebiusTransform) -> float:
    """Operator-norm distance to +-Identity (the smaller of the two)."""
    M = m.matrix
    eye = np.eye(2)
    return min(np.linalg.norm(M - eye, 2), np.linalg.norm(M + eye, 2))


def classify_element(m: MoebiusTransform, eps: float = CLASSIFY_EPS) -> ElementClass:
    tr = m.trace
    if distance_to_identity(m) < eps:
        return ElementClass(Kind.IDENTITY, tr)
    if abs(abs(tr) - 2.0) <= eps:
        return ElementClass(Kind.PARABOLIC, tr)
    if abs(tr) < 2.0:
        return ElementClass(Kind.ELLIPTIC, tr)
    return ElementClass(Kind.HYPERBOLIC, tr)


def translation_length(m: MoebiusTransform) -> float:
    return 2.0 * math.acosh(max(abs(m.trace) / 2.0, 1.0))


def hyperbolic_distance(z: complex, w: complex) -> float:
    q = abs((z - w) / (1 - w.conjugate() * z))
    return 2.0 * math.atanh(q)


@dataclass(frozen=True)
class Geodesic:
    endpoint_plus: complex
    endpoint_minus: complex

    def __post_init__(self):
        p, q = complex(self.endpoint_plus), complex(self.endpoint_minus)
        if abs(abs(p) - 1) > 1e-12 or abs(abs(q) - 1) > 1e-12:
            raise ValueError("geodesic endpoints must lie on the unit circle")
        if abs(p - q) < 1e-12:
            raise ValueError("degenerate geodesic: endpoints coincide")
        object.__setattr__(self, "endpoint_plus", p)
        object.__setattr__(self, "endpoint_minus", q)


def fixed_points(m: MoebiusTransform) -> tuple[complex, complex]:
    """Both solutions of m(z) = z on the Riemann sphere."""
    a, b = m.a, m.b
    if abs(b) < 1e-300:
        return 0j, complex("inf")
    disc = cmath.sqrt(a.real**2 - 1.0)
    bc = b.conjugate()
    return (1j * a.imag + disc) / bc, (1j * a.imag - disc) / bc


def axis_of(m: MoebiusTransform) -> Geodesic:
    """Axis of a hyperbolic element, oriented from repelling to attracting."""
    if classify_element(m).tag is not Kind.HYPERBOLIC:
        raise NonHyperbolicElement(f"trace {m.trace:.12g} is not hyperbolic")
    p, q = fixed_points(m)
    # attracting fixed point has |m'(p)| < 1
    if abs(apply_deriv(m, p / abs(p))) > 1.0:
        p, q = q, p
    return Geodesic(p / abs(p), q / abs(q))


def hyperbolic_along(g: Geodesic, length: float) -> MoebiusTransform:
    """Translation by `length` along g, towards g.endpoint_plus."""
    if not length > 0:
        raise ValueError("translation length must be positive")
    p, q = g.endpoint_plus, g.endpoint_minus
    S = np.array([[p, q], [1.0, 1.0]], dtype=complex)
    D = np.diag([math.exp(0.5 * length), math.exp(-0.5 * length)])
    return from_sl2(S @ D @ np.linalg.inv(S))


def parabolic_fixing(p: complex, shift: float) -> MoebiusTransform:
    """Parabolic element fixing p on the unit circle (conjugate of w -> w + shift on H)."""
    cayley = np.array([[1.0, -1j], [1.0, 1j]], dtype=complex)
    T = np.array([[1.0, shift], [0.0, 1.0]], dtype=complex)
    m = from_sl2(cayley @ T @ np.linalg.inv(cayley))  # fixes +1
    rot = rotation(cmath.phase(p))
    return compose(compose(rot, m), rot.inverse())


# --- words in the generators ------------------------------------------------

Word = tuple[int, ...]


def reduce_word(w: Iterable[int]) -> Word:
    out: list[int] = []
    for x in w:
        if out and out[-1] == -x:
            out.pop()
        else:
            out.append(x)
    return tuple(out)


def invert_word(w: Word) -> Word:
    return tuple(-x for x in reversed(w))


def word_str(w: Word) -> str:
    return ".".join(str(x) for x in w) if w else "e"


def parse_word(s: str) -> Word:
    return () if s in ("", "e") else tuple(int(x) for x in s.split("."))


# --- holonomy representations ----------------------------------------------

CASES = ("I", "II", "III", "IV", "V")


@dataclass(frozen=True)
class HolonomyRep:
    generators: tuple[MoebiusTransform, ...]
    genus: int
    case_label: str | None = None
    twist: float = 0.0
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        if self.genus < 0:
            raise ValueError("genus must be non-negative")
        if self.case_label is not None and self.case_label not in CASES:
            raise ValueError(f"unknown case label {self.case_label!r}")

    def evaluate(self, word: Word) -> MoebiusTransform:
        out = IDENTITY
        for x in word:
            g = self.generators[abs(x) - 1]
            out = compose(out, g if x > 0 else g.inverse())
        return out

    def to_record(self) -> dict:
        return {
            "case_label": self.case_label,
            "genus": self.genus,
            "generators": [g.to_record() for g in self.generators],
            "twist": self.twist,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "HolonomyRep":
        return cls(
            tuple(MoebiusTransform.from_record(r) for r in rec["generators"]),
            int(rec["genus"]),
            rec.get("case_label"),
            float(rec.get("twist", 0.0)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_record(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "HolonomyRep":
        return cls.from_record(json.loads(text))


def commutator(x: MoebiusTransform, y: MoebiusTransform) -> MoebiusTransform:
    return compose_all([x, y, x.inverse(), y.inverse()])


def relation_product(rep: HolonomyRep) -> MoebiusTransform:
    gens = rep.generators
    return compose_all(commutator(gens[2 * i], gens[2 * i + 1]) for i in range(rep.genus))


def relation_residual(rep: HolonomyRep) -> float:
    if rep.genus < 1 or len(rep.generators) != 2 * rep.genus:
        raise ValueError(
            f"expected {2 * rep.genus} generators for genus {rep.genus}, "
            f"got {len(rep.generators)}"
        )
    return distance_to_identity(relation_product(rep))


# --- the regular octagon ----------------------------------------------------


def vertex_angle(v: complex, w1: complex, w2: complex) -> float:
    """Angle at v between the geodesics v->w1 and v->w2."""
    T = translation_to_origin(v)
    return abs(cmath.phase(apply(T, w1) / apply(T, w2)))


def regular_polygon_vertices(n: int, radius: float) -> np.ndarray:
    # side 0 is bisected by the positive real axis
    k = np.arange(n)
    return radius * np.exp(1j * (2 * np.pi * k / n - np.pi / n))


def regular_polygon_radius(n: int, angle: float, tol: float = 1e-14) -> float:
    """Euclidean circumradius of the regular hyperbolic n-gon with interior `angle`."""

    def f(r):
        v = regular_polygon_vertices(n, r)
        return vertex_angle(v[0], v[1], v[-1]) - angle

    lo, hi = 1e-9, 1.0 - 1e-15
    if f(lo) < 0:
        raise ValueError("angle exceeds the Euclidean limit")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def isometry_mapping(p1: complex, p2: complex, q1: complex, q2: complex) -> MoebiusTransform:
    """Orientation-preserving isometry with p1 -> q1, p2 -> q2 (requires d(p1,p2) = d(q1,q2))."""
    T1 = translation_to_origin(p1)
    T2 = translation_to_origin(q1)
    w1 = apply(T1, p2)
    w2 = apply(T2, q2)
    R = rotation(cmath.phase(w2) - cmath.phase(w1))
    return compose_all([T2.inverse(), R, T1])


def side_pairing_map(vertices: np.ndarray, s: int, t: int) -> MoebiusTransform:
    """Isometry sending side s onto side t with reversed orientation."""
    n = len(vertices)
    return isometry_mapping(vertices[s], vertices[(s + 1) % n], vertices[(t + 1) % n], vertices[t])


def generator_sides(genus: int) -> list[tuple[int, int]]:
    """(source side, target side) carried by each generator a1, b1, ..., ag, bg."""
    out = []
    for i in range(genus):
        out.append((4 * i + 2, 4 * i))
        out.append((4 * i + 1, 4 * i + 3))
    return out


def fuchsian_generators(genus: int) -> tuple[np.ndarray, list[MoebiusTransform]]:
    n = 4 * genus
    R = regular_polygon_radius(n, 2 * np.pi / n)
    verts = regular_polygon_vertices(n, R)
    gens = [side_pairing_map(verts, s, t) for s, t in generator_sides(genus)]
    return verts, gens


def genus2_generators() -> HolonomyRep:
    """Fuchsian genus-2 group pairing the sides of the regular pi/4 octagon."""
    _, gens = fuchsian_generators(2)
    return HolonomyRep(tuple(gens), 2, "II")


def fn_twist(rep: HolonomyRep, t: float) -> HolonomyRep:
    """Fenchel-Nielsen twist of the second handle along the axis of [a1, b1]."""
    if t == 0:
        return HolonomyRep(rep.generators, rep.genus, rep.case_label, rep.twist)
    a1, b1, a2, b2 = rep.generators
    c = commutator(a1, b1)
    try:
        axis = axis_of(c)
    except NonHyperbolicElement as exc:
        raise CommutatorNotHyperbolic(str(exc)) from None
    if t < 0:
        axis = Geodesic(axis.endpoint_minus, axis.endpoint_plus)
    g = hyperbolic_along(axis, abs(t))
    gi = g.inverse()
    new = (a1, b1, compose_all([g, a2, gi]), compose_all([g, b2, gi]))
    return HolonomyRep(new, rep.genus, "I", rep.twist + t)


def dihedral_generators(length: float) -> tuple[MoebiusTransform, MoebiusTransform]:
    """H translating along the real axis and the half-turn about 0 that reverses it."""
    H = hyperbolic_along(Geodesic(1.0, -1.0), length)
    E = rotation(math.pi)
    return H, E


def example_holonomy(case: str, **params) -> HolonomyRep:
    """Holonomy of a genus-2 disc bundle of the requested type.

    I    twist=t (nonzero): Fenchel-Nielsen twist of the Fuchsian group.
    II   the Fuchsian group itself.
    III  length=l, assignment=("H","E","E","H"): images in <H, E>, E of order two.
    IV   lengths=(4 floats), kind="hyperbolic"|"parabolic": common boundary fixed point(s).
    V    angles=(4 floats): rotations about 0.
    """
    if case == "I":
        t = float(params.get("twist", 0.5))
        if t == 0:
            raise ValueError("case I requires nonzero twist")
        out = fn_twist(genus2_generators(), t)
        return HolonomyRep(out.generators, 2, "I", t)
    if case == "II":
        return genus2_generators()
    if case == "III":
        length = float(params.get("length", 1.0))
        if not length > 0:
            raise ValueError("case III requires a positive translation length")
        assignment = tuple(params.get("assignment", ("H", "E", "E", "H")))
        if len(assignment) != 4:
            raise ValueError("case III assignment needs four words")
        H, E = dihedral_generators(length)
        letters = {"H": H, "h": H.inverse(), "E": E, "e": E}
        gens = tuple(compose_all(letters[c] for c in w) for w in assignment)
        rep = HolonomyRep(gens, 2, "III", params={"length": length, "assignment": assignment})
        if relation_residual(rep) > 1e-10:
            raise ValueError("case III assignment violates the surface relation")
        return rep
    if case == "IV":
        lengths = tuple(float(x) for x in params.get("lengths", (0.3, 0.5, 0.7, 1.1)))
        kind = params.get("kind", "hyperbolic")
        if len(lengths) != 4:
            raise ValueError("case IV needs four lengths")
        if kind == "hyperbolic":
            if any(x == 0 for x in lengths):
                raise ValueError("case IV hyperbolic lengths must be nonzero")
            axis = Geodesic(1.0, -1.0)
            back = Geodesic(-1.0, 1.0)
            gens = tuple(hyperbolic_along(axis if x > 0 else back, abs(x)) for x in lengths)
        elif kind == "parabolic":
            gens = tuple(parabolic_fixing(1.0, x) for x in lengths)
        else:
            raise ValueError(f"unknown case IV kind {kind!r}")
        return HolonomyRep(gens, 2, "IV", params={"lengths": lengths, "kind": kind})
    if case == "V":
        angles = tuple(float(x) for x in params.get("angles", (0.4, 1.1, -0.7, 2.0)))
        if len(angles) != 4:
            raise ValueError("case V needs four rotation angles")
        return HolonomyRep(tuple(rotation(x) for x in angles), 2, "V", params={"angles": angles})
    raise ValueError(f"unknown holonomy case {case!r}")


def has_common_boundary_fixed_point(rep: HolonomyRep, tol: float = 1e-9) -> bool:
    """True for elementary non-elliptic holonomy: a shared fixed point on the circle."""
    gens = [g for g in rep.generators if classify_element(g).tag is not Kind.IDENTITY]
    if not gens:
        return False
    if any(classify_element(g).tag is Kind.ELLIPTIC for g in gens):
        return False
    candidates = []
    for z in fixed_points(gens[0]):
        if np.isfinite(z) and abs(abs(z) - 1) < 1e-6:
            candidates.append(z / abs(z))
    for p in candidates:
        if all(abs(apply(g, p) - p) < tol for g in gens):
            return True
    return False


def trace_spectrum(rep: HolonomyRep, max_len: int = 2) -> np.ndarray:
    """Traces of the positive words of length <= max_len, a cheap conjugacy witness."""
    n = len(rep.generators)
    out = []
    for k in range(1, max_len + 1):
        for w in itertools.product(range(1, n + 1), repeat=k):
            out.append(rep.evaluate(w).trace)
    return np.array(out)
