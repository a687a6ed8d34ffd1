"""Affine-in-scheduling matrix functions, scheduling polytopes and LPV state-space models.

Every LPV object in the toolkit is built from :class:`AffineMatrixFunction`
values ``M(rho) = M_0 + sum_i rho_i M_i`` over a vertex-described
:class:`SchedulingPolytope`. Objects are immutable; the arrays they hold are
marked read-only on construction.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linprog, nnls
from scipy.spatial import ConvexHull, QhullError

from .errors import AffineClosureError, DimensionError, RegionError

logger = logging.getLogger(__name__)

Channels = Tuple[Tuple[str, int], ...]
MatrixLike = Union["AffineMatrixFunction", np.ndarray]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


def _as_matrix(value) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    if array.ndim != 2:
        raise DimensionError(f"expected a matrix, got an array with shape {array.shape}")
    return array


def as_point(rho, n_rho: int) -> np.ndarray:
    """Return ``rho`` as a flat float vector of length ``n_rho``."""
    point = np.atleast_1d(np.asarray(rho, dtype=float)).ravel()
    if point.shape[0] != n_rho:
        raise DimensionError(
            f"scheduling point has dimension {point.shape[0]}, expected {n_rho}"
        )
    return point


def _in_hull_of_others(vertices: np.ndarray, index: int) -> bool:
    others = np.delete(vertices, index, axis=0)
    if others.shape[0] == 0:
        return False
    a_eq = np.vstack([others.T, np.ones((1, others.shape[0]))])
    b_eq = np.concatenate([vertices[index], [1.0]])
    res = linprog(
        np.zeros(others.shape[0]),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=[(0, None)] * others.shape[0],
        method="highs",
    )
    return res.status == 0


# ---------- Scheduling polytope ----------
@dataclass(frozen=True, eq=False)
class SchedulingPolytope:
    """Convex hull of an explicit list of extreme points.

    ``vertices`` has shape ``(n_vertices, n_rho)``. Use :meth:`interval` for
    scalar scheduling, since a flat list is read as a single vertex.
    """

    vertices: np.ndarray

    def __post_init__(self) -> None:
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim == 1:
            verts = verts.reshape(1, -1)
        if verts.ndim != 2 or verts.shape[0] == 0:
            raise DimensionError("a scheduling polytope needs at least one vertex")
        if verts.shape[1] == 0:
            raise DimensionError("the scheduling dimension must be positive")
        if not np.all(np.isfinite(verts)):
            raise DimensionError("polytope vertices must be finite")
        for index in range(verts.shape[0]):
            if _in_hull_of_others(verts, index):
                raise DimensionError(
                    f"vertex {index} {verts[index].tolist()} is not an extreme point"
                )
        object.__setattr__(self, "vertices", _frozen(verts))

    @classmethod
    def interval(cls, lower: float, upper: float) -> "SchedulingPolytope":
        if lower == upper:
            return cls(np.array([[float(lower)]]))
        if lower > upper:
            raise DimensionError(f"empty interval [{lower}, {upper}]")
        return cls(np.array([[float(lower)], [float(upper)]]))

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "SchedulingPolytope":
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.shape != upper.shape or np.any(lower >= upper):
            raise DimensionError("box bounds must satisfy lower < upper componentwise")
        corners = [
            [upper[i] if bit else lower[i] for i, bit in enumerate(bits)]
            for bits in itertools.product((0, 1), repeat=lower.shape[0])
        ]
        return cls(np.array(corners))

    @classmethod
    def point(cls, n_rho: int = 1, value: Optional[Sequence[float]] = None) -> "SchedulingPolytope":
        """Single-vertex polytope, used for constant (LTI) models."""
        vertex = np.zeros(n_rho) if value is None else np.asarray(value, dtype=float)
        return cls(vertex.reshape(1, n_rho))

    @property
    def dimension(self) -> int:
        return int(self.vertices.shape[1])

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def lower(self) -> np.ndarray:
        return self.vertices.min(axis=0)

    @property
    def upper(self) -> np.ndarray:
        return self.vertices.max(axis=0)

    @property
    def midpoint(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @cached_property
    def is_box(self) -> bool:
        if self.n_vertices != 2 ** self.dimension or np.any(self.lower == self.upper):
            return False
        lower, upper = self.lower, self.upper
        corners = np.array(
            [
                [upper[i] if bit else lower[i] for i, bit in enumerate(bits)]
                for bits in itertools.product((0, 1), repeat=self.dimension)
            ]
        )
        key = lambda rows: sorted(map(tuple, np.round(rows, 14)))
        return key(corners) == key(self.vertices)

    def same_as(self, other: "SchedulingPolytope") -> bool:
        return self.vertices.shape == other.vertices.shape and bool(
            np.array_equal(self.vertices, other.vertices)
        )

    def membership_margin(self, rho) -> float:
        """Signed distance to the boundary; nonnegative inside the polytope."""
        point = as_point(rho, self.dimension)
        if self.n_vertices == 1:
            return -float(np.linalg.norm(point - self.vertices[0]))
        if self.is_box:
            return float(np.min(np.minimum(point - self.lower, self.upper - point)))
        try:
            hull = ConvexHull(self.vertices)
        except QhullError:
            # lower-dimensional polytope: no interior, report the distance only
            return -float(np.linalg.norm(point - self.project(point)))
        distances = hull.equations[:, :-1] @ point + hull.equations[:, -1]
        return float(-np.max(distances))

    def contains(self, rho, tol: float = 1e-12) -> bool:
        return self.membership_margin(rho) >= -tol

    def barycentric(self, rho) -> np.ndarray:
        """Convex weights ``lam`` with ``vertices.T @ lam == rho``."""
        point = as_point(rho, self.dimension)
        verts = self.vertices
        a_eq = np.vstack([verts.T, np.ones((1, self.n_vertices))])
        b_eq = np.concatenate([point, [1.0]])
        res = linprog(
            np.zeros(self.n_vertices),
            A_eq=a_eq,
            b_eq=b_eq,
            bounds=[(0, None)] * self.n_vertices,
            method="highs",
        )
        if res.status != 0:
            raise RegionError(f"point {point.tolist()} lies outside the polytope")
        return np.asarray(res.x)

    def project(self, rho) -> np.ndarray:
        """Closest polytope point to ``rho`` (exact for boxes)."""
        point = as_point(rho, self.dimension)
        if self.n_vertices == 1:
            return self.vertices[0].copy()
        if self.is_box:
            return np.clip(point, self.lower, self.upper)
        weight = 1e3
        lhs = np.vstack([self.vertices.T, weight * np.ones((1, self.n_vertices))])
        rhs = np.concatenate([point, [weight]])
        lam, _ = nnls(lhs, rhs)
        lam = lam / lam.sum()
        return self.vertices.T @ lam

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` random points, each a Dirichlet-weighted convex combination of vertices."""
        weights = rng.dirichlet(np.ones(self.n_vertices), size=n)
        return weights @ self.vertices


# ---------- Affine matrix functions ----------
@dataclass(frozen=True, eq=False)
class AffineMatrixFunction:
    """Matrix function ``M_0 + sum_i rho_i M_i`` with real coefficient matrices."""

    constant: np.ndarray
    coefficients: Tuple[np.ndarray, ...] = ()

    # ndarray (op) AffineMatrixFunction must dispatch to the reflected method
    __array_ufunc__ = None

    def __post_init__(self) -> None:
        m0 = _as_matrix(self.constant)
        coeffs = tuple(_as_matrix(c) for c in self.coefficients)
        for index, coeff in enumerate(coeffs, start=1):
            if coeff.shape != m0.shape:
                raise DimensionError(
                    f"coefficient {index} has shape {coeff.shape}, expected {m0.shape}"
                )
        object.__setattr__(self, "constant", _frozen(m0))
        object.__setattr__(self, "coefficients", tuple(_frozen(c) for c in coeffs))

    @classmethod
    def constant_of(cls, matrix, n_rho: int = 1) -> "AffineMatrixFunction":
        m0 = _as_matrix(matrix)
        return cls(m0, tuple(np.zeros_like(m0) for _ in range(n_rho)))

    @classmethod
    def zeros(cls, rows: int, cols: int, n_rho: int = 1) -> "AffineMatrixFunction":
        return cls.constant_of(np.zeros((rows, cols)), n_rho)

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.constant.shape)  # type: ignore[return-value]

    @property
    def n_rho(self) -> int:
        return len(self.coefficients)

    @property
    def is_constant(self) -> bool:
        return all(not np.any(c) for c in self.coefficients)

    def term(self, index: int) -> np.ndarray:
        """Term ``index`` of the expansion: 0 is the constant, ``i`` multiplies ``rho_i``."""
        return self.constant if index == 0 else self.coefficients[index - 1]

    def terms(self) -> Tuple[np.ndarray, ...]:
        return (self.constant, *self.coefficients)

    def evaluate(self, rho) -> np.ndarray:
        point = as_point(rho, self.n_rho)
        out = np.array(self.constant, copy=True)
        for value, coeff in zip(point, self.coefficients):
            out += value * coeff
        return out

    def with_n_rho(self, n_rho: int) -> "AffineMatrixFunction":
        if n_rho == self.n_rho:
            return self
        if not self.is_constant:
            raise DimensionError(
                f"cannot change the scheduling dimension of a varying function "
                f"({self.n_rho} -> {n_rho})"
            )
        return AffineMatrixFunction.constant_of(self.constant, n_rho)

    def map_terms(self, fn) -> "AffineMatrixFunction":
        return AffineMatrixFunction(fn(self.constant), tuple(fn(c) for c in self.coefficients))

    def __getitem__(self, key) -> "AffineMatrixFunction":
        if not isinstance(key, tuple) or len(key) != 2:
            raise TypeError("index an AffineMatrixFunction with a (rows, cols) pair")
        return self.map_terms(lambda m: np.atleast_2d(m[key]))

    @property
    def T(self) -> "AffineMatrixFunction":  # noqa: N802 - numpy convention
        return self.map_terms(lambda m: m.T)

    def _coerce(self, other) -> "AffineMatrixFunction":
        if isinstance(other, AffineMatrixFunction):
            if other.n_rho != self.n_rho:
                return _lift(other, self.n_rho) if other.is_constant else other
            return other
        return AffineMatrixFunction.constant_of(other, self.n_rho)

    def __add__(self, other) -> "AffineMatrixFunction":
        other = self._coerce(other)
        if other.n_rho != self.n_rho:
            raise DimensionError("scheduling dimensions differ")
        if other.shape != self.shape:
            raise DimensionError(f"cannot add shapes {self.shape} and {other.shape}")
        return AffineMatrixFunction(
            self.constant + other.constant,
            tuple(a + b for a, b in zip(self.coefficients, other.coefficients)),
        )

    __radd__ = __add__

    def __neg__(self) -> "AffineMatrixFunction":
        return self.map_terms(lambda m: -m)

    def __sub__(self, other) -> "AffineMatrixFunction":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "AffineMatrixFunction":
        return self._coerce(other) - self

    def scale(self, factor: float) -> "AffineMatrixFunction":
        return self.map_terms(lambda m: factor * m)

    def left(self, matrix) -> "AffineMatrixFunction":
        """Constant ``matrix @ self``."""
        matrix = _as_matrix(matrix)
        return self.map_terms(lambda m: matrix @ m)

    def right(self, matrix) -> "AffineMatrixFunction":
        """``self @ matrix`` for a constant ``matrix``."""
        matrix = _as_matrix(matrix)
        return self.map_terms(lambda m: m @ matrix)

    def max_abs_difference(self, other: "AffineMatrixFunction") -> float:
        other = self._coerce(other)
        return max(
            float(np.max(np.abs(a - b), initial=0.0))
            for a, b in zip(self.terms(), other.terms())
        )


def _lift(value, n_rho: int) -> AffineMatrixFunction:
    if isinstance(value, AffineMatrixFunction):
        return value.with_n_rho(n_rho)
    return AffineMatrixFunction.constant_of(value, n_rho)


def evaluate(f: AffineMatrixFunction, rho) -> np.ndarray:
    """Evaluate ``f`` at the scheduling point ``rho``."""
    return f.evaluate(rho)


def vertex_images(f: AffineMatrixFunction, polytope: SchedulingPolytope) -> List[np.ndarray]:
    """Evaluate ``f`` at every polytope vertex, in vertex order."""
    if f.n_rho != polytope.dimension:
        raise DimensionError(
            f"function has {f.n_rho} scheduling coefficients, polytope dimension is "
            f"{polytope.dimension}"
        )
    return [f.evaluate(v) for v in polytope.vertices]


def affine_product(left: MatrixLike, right: MatrixLike) -> AffineMatrixFunction:
    """Product of two affine functions, defined when at most one factor varies."""
    n_rho = max(
        (x.n_rho for x in (left, right) if isinstance(x, AffineMatrixFunction)), default=1
    )
    lhs = _lift(left, n_rho) if not isinstance(left, AffineMatrixFunction) or left.is_constant else left
    rhs = _lift(right, n_rho) if not isinstance(right, AffineMatrixFunction) or right.is_constant else right
    if lhs.n_rho != rhs.n_rho:
        raise DimensionError("scheduling dimensions differ")
    if lhs.shape[1] != rhs.shape[0]:
        raise DimensionError(f"cannot multiply shapes {lhs.shape} and {rhs.shape}")
    if not lhs.is_constant and not rhs.is_constant:
        raise AffineClosureError(
            "product of two scheduling-dependent factors is not affine in the scheduling"
        )
    if lhs.is_constant:
        return rhs.left(lhs.constant)
    return lhs.right(rhs.constant)


def affine_block(rows: Sequence[Sequence[MatrixLike]], n_rho: Optional[int] = None) -> AffineMatrixFunction:
    """Assemble a block matrix of affine functions and constant arrays."""
    functions = [e for row in rows for e in row if isinstance(e, AffineMatrixFunction)]
    if n_rho is None:
        varying = {f.n_rho for f in functions if not f.is_constant}
        if len(varying) > 1:
            raise DimensionError("blocks have different scheduling dimensions")
        n_rho = varying.pop() if varying else max((f.n_rho for f in functions), default=1)
    lifted = [[_lift(e, n_rho) for e in row] for row in rows]
    terms = [
        np.block([[e.term(index) for e in row] for row in lifted]) for index in range(n_rho + 1)
    ]
    return AffineMatrixFunction(terms[0], tuple(terms[1:]))


# ---------- LPV state-space ----------
def _channels(value, total: int, default: str) -> Channels:
    if value is None:
        return ((default, total),)
    items = value.items() if isinstance(value, Mapping) else value
    channels = tuple((str(name), int(size)) for name, size in items)
    names = [name for name, _ in channels]
    if len(set(names)) != len(names):
        raise DimensionError(f"duplicate channel names {names}")
    if any(size < 0 for _, size in channels):
        raise DimensionError("channel sizes must be nonnegative")
    if sum(size for _, size in channels) != total:
        raise DimensionError(
            f"channel partition {dict(channels)} does not tile {total} signals"
        )
    return channels


def _channel_slice(channels: Channels, name: str) -> slice:
    start = 0
    for channel, size in channels:
        if channel == name:
            return slice(start, start + size)
        start += size
    raise KeyError(f"unknown channel '{name}' (have {[c for c, _ in channels]})")


@dataclass(frozen=True, eq=False)
class AffineLpvStateSpace:
    """``x+ = A(rho)x + B(rho)v``, ``out = C(rho)x + D(rho)v`` over a scheduling polytope."""

    A: AffineMatrixFunction
    B: AffineMatrixFunction
    C: AffineMatrixFunction
    D: AffineMatrixFunction
    polytope: SchedulingPolytope
    inputs: Optional[Channels] = None
    outputs: Optional[Channels] = None

    def __post_init__(self) -> None:
        n_rho = self.polytope.dimension
        for name in ("A", "B", "C", "D"):
            fn = getattr(self, name)
            if not isinstance(fn, AffineMatrixFunction):
                fn = AffineMatrixFunction.constant_of(fn, n_rho)
            if fn.n_rho != n_rho:
                fn = fn.with_n_rho(n_rho)
            object.__setattr__(self, name, fn)
        n_x = self.A.shape[0]
        if self.A.shape != (n_x, n_x):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        n_in, n_out = self.B.shape[1], self.C.shape[0]
        expected = {"B": (n_x, n_in), "C": (n_out, n_x), "D": (n_out, n_in)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )
        object.__setattr__(self, "inputs", _channels(self.inputs, n_in, "in"))
        object.__setattr__(self, "outputs", _channels(self.outputs, n_out, "out"))

    @classmethod
    def from_lti(
        cls,
        A,
        B,
        C,
        D,
        inputs=None,
        outputs=None,
        polytope: Optional[SchedulingPolytope] = None,
    ) -> "AffineLpvStateSpace":
        polytope = polytope or SchedulingPolytope.point()
        lift = lambda m: AffineMatrixFunction.constant_of(m, polytope.dimension)
        return cls(lift(A), lift(B), lift(C), lift(D), polytope, inputs, outputs)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_in(self) -> int:
        return self.B.shape[1]

    @property
    def n_out(self) -> int:
        return self.C.shape[0]

    @property
    def n_rho(self) -> int:
        return self.polytope.dimension

    @property
    def is_constant(self) -> bool:
        return all(fn.is_constant for fn in (self.A, self.B, self.C, self.D))

    def input_slice(self, name: str) -> slice:
        return _channel_slice(self.inputs, name)

    def output_slice(self, name: str) -> slice:
        return _channel_slice(self.outputs, name)

    def channel_size(self, name: str) -> int:
        for channel, size in (*self.inputs, *self.outputs):
            if channel == name:
                return size
        raise KeyError(name)

    def block(self, matrix: str, output: Optional[str] = None, input: Optional[str] = None) -> AffineMatrixFunction:  # noqa: A002
        """Sub-block of ``matrix`` restricted to the named output/input channels."""
        fn = getattr(self, matrix)
        rows = self.output_slice(output) if output is not None else slice(None)
        cols = self.input_slice(input) if input is not None else slice(None)
        if matrix == "A":
            return fn
        if matrix == "B":
            return fn[:, cols]
        if matrix == "C":
            return fn[rows, :]
        return fn[rows, cols]

    def at(self, rho) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.A.evaluate(rho), self.B.evaluate(rho), self.C.evaluate(rho), self.D.evaluate(rho)

    def with_polytope(self, polytope: SchedulingPolytope) -> "AffineLpvStateSpace":
        return AffineLpvStateSpace(
            self.A, self.B, self.C, self.D, polytope, self.inputs, self.outputs
        )


def common_polytope(*systems: AffineLpvStateSpace) -> SchedulingPolytope:
    """Polytope shared by the scheduling-dependent systems among ``systems``."""
    varying = [s for s in systems if not s.is_constant]
    if not varying:
        return systems[0].polytope
    reference = varying[0].polytope
    for other in varying[1:]:
        if not other.polytope.same_as(reference):
            raise DimensionError("scheduling-dependent systems use different polytopes")
    return reference


def series_interconnect(sys1: AffineLpvStateSpace, sys2: AffineLpvStateSpace) -> AffineLpvStateSpace:
    """Cascade ``sys1`` into ``sys2`` (output of ``sys1`` drives ``sys2``).

    The state is ``col(x1, x2)``. Raises :class:`AffineClosureError` when a
    composed product would multiply two scheduling-dependent blocks.
    """

    if sys1.n_out != sys2.n_in:
        raise DimensionError(
            f"sys1 has {sys1.n_out} outputs but sys2 expects {sys2.n_in} inputs"
        )
    polytope = common_polytope(sys1, sys2)
    n_rho = polytope.dimension
    s1 = sys1.with_polytope(polytope) if sys1.is_constant else sys1
    s2 = sys2.with_polytope(polytope) if sys2.is_constant else sys2

    A = affine_block(
        [[s1.A, np.zeros((s1.n_x, s2.n_x))], [affine_product(s2.B, s1.C), s2.A]], n_rho
    )
    B = affine_block([[s1.B], [affine_product(s2.B, s1.D)]], n_rho)
    C = affine_block([[affine_product(s2.D, s1.C), s2.C]], n_rho)
    D = affine_product(s2.D, s1.D)
    logger.debug("series interconnection with %d + %d states", s1.n_x, s2.n_x)
    return AffineLpvStateSpace(A, B, C, D, polytope, s1.inputs, s2.outputs)


__all__ = [
    "AffineLpvStateSpace",
    "AffineMatrixFunction",
    "Channels",
    "SchedulingPolytope",
    "affine_block",
    "affine_product",
    "as_point",
    "common_polytope",
    "evaluate",
    "series_interconnect",
    "vertex_images",
]
