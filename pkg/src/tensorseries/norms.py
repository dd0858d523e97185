"""Exactly computable norms on the tensor model and its factor spaces.

Seven matrix norms are supported. For euclidean factor spaces the spectral
norm is the injective crossnorm and the nuclear norm the projective one; for
l1 factor spaces the entrywise l1 norm is projective and ``injective_l1l1``
(sign-vector enumeration) injective. ``grid_sup`` treats columns as samples
of a vector-valued function on a grid and takes the largest column norm.

A general projective-norm evaluator is deliberately absent: it is not exactly
computable in general and nothing here needs it, since every construction in
this package works for any norm.

Evaluators are stateless and pure; batch variants accept stacks of matrices
and return one value per slice, which keeps certificate sweeps and stress
scans vectorized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import CoefficientTensor, DimensionMismatchError, SpaceSpec

NORM_KINDS = (
    "frobenius",
    "entrywise_l1",
    "entrywise_max",
    "spectral",
    "nuclear",
    "injective_l1l1",
    "grid_sup",
)

#: Sign-vector enumeration is 2^(dim Y - 1) evaluations; refuse beyond this.
INJECTIVE_ENUM_CAP = 20

_SIGNS_CACHE: dict[int, np.ndarray] = {}


def vector_norm(spec: SpaceSpec, v) -> float:
    """Norm of a vector of the given space (euclidean, l1, or linf).

    Sums of squares / absolute values go through ``math.fsum`` so results are
    correctly rounded; in particular scaling the input by a power of two
    scales the result exactly.
    """
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != spec.dim:
        raise DimensionMismatchError(
            f"vector of shape {arr.shape} does not fit space of dim {spec.dim}"
        )
    kind = spec.vector_norm_kind
    if kind == "euclidean":
        return math.sqrt(math.fsum((arr * arr).tolist()))
    if kind == "l1":
        return math.fsum(np.abs(arr).tolist())
    if kind == "linf":
        return float(np.max(np.abs(arr)))
    raise ValueError(f"unknown vector norm kind {kind!r}")


def _sign_matrix(m: int) -> np.ndarray:
    """All sign vectors of length m with first coordinate +1, as a matrix."""
    cached = _SIGNS_CACHE.get(m)
    if cached is None:
        if m == 1:
            cached = np.ones((1, 1))
        else:
            count = 1 << (m - 1)
            bits = (np.arange(count)[:, None] >> np.arange(m - 1)) & 1
            cached = np.hstack([np.ones((count, 1)), 1.0 - 2.0 * bits])
        cached.setflags(write=False)
        _SIGNS_CACHE[m] = cached
    return cached


def _batch_singular_values(stack: np.ndarray) -> np.ndarray:
    return np.linalg.svd(stack, compute_uv=False)


@dataclass(frozen=True)
class NormEvaluator:
    """Evaluates one norm kind on tensors over a fixed pair of spaces.

    Parameters
    ----------
    kind : str
        One of ``NORM_KINDS``.
    space_x, space_y : SpaceSpec
        Factor spaces; their dims fix the expected matrix shape, and for
        ``grid_sup`` the X space's vector norm is the per-column norm.
    """

    kind: str
    space_x: SpaceSpec
    space_y: SpaceSpec

    def __post_init__(self) -> None:
        if self.kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}; expected one of {NORM_KINDS}")
        if self.kind == "injective_l1l1" and self.space_y.dim > INJECTIVE_ENUM_CAP:
            raise ValueError(
                f"injective_l1l1 enumerates 2^(dim Y - 1) sign vectors; "
                f"dim Y = {self.space_y.dim} exceeds the cap {INJECTIVE_ENUM_CAP}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.space_x.dim, self.space_y.dim)

    def _coerce(self, u) -> np.ndarray:
        if isinstance(u, CoefficientTensor):
            if u.shape != self.shape:
                raise DimensionMismatchError(
                    f"tensor shape {u.shape} does not match evaluator shape {self.shape}"
                )
            return u.coeffs
        arr = np.asarray(u, dtype=float)
        if arr.shape != self.shape:
            raise DimensionMismatchError(
                f"matrix shape {arr.shape} does not match evaluator shape {self.shape}"
            )
        return arr

    def __call__(self, u) -> float:
        return float(self.eval_many(self._coerce(u)[None, :, :])[0])

    def eval_many(self, stack: np.ndarray) -> np.ndarray:
        """Norms of a stack of matrices, shape (B, dim X, dim Y) -> (B,)."""
        stack = np.asarray(stack, dtype=float)
        if stack.ndim != 3 or stack.shape[1:] != self.shape:
            raise DimensionMismatchError(
                f"stack shape {stack.shape} does not match evaluator shape {self.shape}"
            )
        if stack.shape[0] == 0:
            return np.zeros(0)
        kind = self.kind
        if kind == "frobenius":
            return np.sqrt(np.einsum("bij,bij->b", stack, stack))
        if kind == "entrywise_l1":
            return np.abs(stack).sum(axis=(1, 2))
        if kind == "entrywise_max":
            return np.abs(stack).max(axis=(1, 2))
        if kind == "spectral":
            return _batch_singular_values(stack)[:, 0]
        if kind == "nuclear":
            return _batch_singular_values(stack).sum(axis=1)
        if kind == "injective_l1l1":
            signs = _sign_matrix(self.space_y.dim)
            # max over sign vectors psi of ||U psi||_1; the X-side optimum is
            # sign(U psi), so only the Y side needs enumeration.
            vals = np.abs(stack @ signs.T).sum(axis=1)
            return vals.max(axis=1)
        if kind == "grid_sup":
            inner = self.space_x.vector_norm_kind
            if inner == "euclidean":
                per_col = np.sqrt(np.einsum("bij,bij->bj", stack, stack))
            elif inner == "l1":
                per_col = np.abs(stack).sum(axis=1)
            else:  # linf
                per_col = np.abs(stack).max(axis=1)
            return per_col.max(axis=1)
        raise AssertionError(f"unhandled norm kind {kind!r}")

    def describe(self) -> str:
        return (
            f"{self.kind} on {self.space_x.dim}x{self.space_y.dim} "
            f"({self.space_x.vector_norm_kind} x {self.space_y.vector_norm_kind})"
        )


def eval_norm(ev: NormEvaluator, u) -> float:
    """Evaluate a norm on a tensor (function-call form of ``ev(u)``)."""
    return ev(u)


def default_spaces(kind: str, rows: int, cols: int) -> tuple[SpaceSpec, SpaceSpec]:
    """Factor spaces whose vector norms make ``kind`` a crossnorm when possible."""
    cap = max(64, rows, cols)
    if kind in ("frobenius", "spectral", "nuclear"):
        kx = ky = "euclidean"
    elif kind in ("entrywise_l1", "injective_l1l1"):
        kx = ky = "l1"
    elif kind == "entrywise_max":
        kx = ky = "linf"
    elif kind == "grid_sup":
        kx, ky = "euclidean", "linf"
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    return SpaceSpec(rows, kx, dim_cap=cap), SpaceSpec(cols, ky, dim_cap=cap)


def evaluator_for(kind: str, rows: int, cols: int) -> NormEvaluator:
    sx, sy = default_spaces(kind, rows, cols)
    return NormEvaluator(kind, sx, sy)


_CROSSNORM_KINDS = ("spectral", "nuclear", "entrywise_l1", "injective_l1l1")


@dataclass(frozen=True)
class CrossnormReport:
    """How far a norm strays from ||x|| * ||y|| on one elementary tensor."""

    kind: str
    value: float
    product: float
    defect: float


def crossnorm_check(ev: NormEvaluator, x, y) -> CrossnormReport:
    """Measure |alpha(x (x) y) - ||x||*||y||| with the spaces' vector norms.

    Only meaningful for the four crossnorm kinds; the evaluator's space norms
    are used as-is, so a mismatched pairing shows up as a nonzero defect.
    """
    if ev.kind not in _CROSSNORM_KINDS:
        raise ValueError(f"crossnorm check applies to {_CROSSNORM_KINDS}, got {ev.kind!r}")
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    value = ev(np.outer(xv, yv))
    product = vector_norm(ev.space_x, xv) * vector_norm(ev.space_y, yv)
    return CrossnormReport(ev.kind, value, product, abs(value - product))


def cumulative_norms(ev, xs: np.ndarray, ys: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Norms of all running prefix sums of the outer products of (xs, ys).

    xs has one x factor per row, ys one y factor per row; the result's p-th
    entry is the norm of the sum of the first p+1 outer products. Work is
    chunked so the stack of prefix matrices never exceeds ``chunk`` slices.
    """
    n = xs.shape[0]
    if ys.shape[0] != n:
        raise DimensionMismatchError("xs and ys must have one row per term")
    out = np.empty(n)
    carry = np.zeros((xs.shape[1], ys.shape[1]))
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        outers = np.einsum("ki,kj->kij", xs[s:e], ys[s:e])
        prefixes = np.cumsum(outers, axis=0)
        prefixes += carry
        out[s:e] = ev.eval_many(prefixes)
        carry = prefixes[-1].copy()
    return out


class SeminormFamily:
    """Increasing sequence of (semi)norm evaluators, indexed from 1.

    Members only need to be callables on matrices/vectors of the model; they
    may be degenerate (vanish on a nonzero element). ``at(j)`` clamps to the
    last member, so a finite family stands in for an eventually constant one.
    """

    def __init__(self, members: Sequence[Callable[..., float]]):
        members = tuple(members)
        if not members:
            raise ValueError("a seminorm family needs at least one member")
        self.members = members

    def __len__(self) -> int:
        return len(self.members)

    def at(self, j: int):
        if j < 1:
            raise ValueError("family indices start at 1")
        return self.members[min(j, len(self.members)) - 1]

    def check_monotone(self, samples: np.ndarray) -> float:
        """Largest violation of alpha_j <= alpha_{j+1} over sample elements.

        Returns max over samples and consecutive pairs of alpha_j - alpha_{j+1}
        (so any positive return is a violation).
        """
        worst = -math.inf
        for u in samples:
            vals = [float(member(u)) for member in self.members]
            for a, b in zip(vals, vals[1:]):
                worst = max(worst, a - b)
        return worst


@dataclass(frozen=True)
class MaskedColumnSup:
    """Seminorm on matrices: largest inner-norm over a subset of columns.

    Degenerate whenever the mask misses columns; with the full mask and
    ``linf`` columns absent this is exactly ``grid_sup``.
    """

    indices: tuple[int, ...]
    inner: str = "euclidean"

    def __call__(self, u) -> float:
        arr = u.coeffs if isinstance(u, CoefficientTensor) else np.asarray(u, dtype=float)
        return float(self.eval_many(arr[None, :, :])[0])

    def eval_many(self, stack: np.ndarray) -> np.ndarray:
        stack = np.asarray(stack, dtype=float)
        if stack.shape[0] == 0:
            return np.zeros(0)
        sel = stack[:, :, list(self.indices)]
        if self.inner == "euclidean":
            per_col = np.sqrt(np.einsum("bij,bij->bj", sel, sel))
        elif self.inner == "l1":
            per_col = np.abs(sel).sum(axis=1)
        elif self.inner == "linf":
            per_col = np.abs(sel).max(axis=1)
        else:
            raise ValueError(f"unknown inner norm {self.inner!r}")
        return per_col.max(axis=1)


@dataclass(frozen=True)
class MaskedAbsSup:
    """Seminorm on vectors: largest absolute entry over an index subset."""

    indices: tuple[int, ...]

    def __call__(self, v) -> float:
        arr = np.asarray(v, dtype=float)
        return float(self.eval_many(arr[None, :])[0])

    def eval_many(self, stack: np.ndarray) -> np.ndarray:
        stack = np.asarray(stack, dtype=float)
        if stack.shape[0] == 0:
            return np.zeros(0)
        return np.abs(stack[:, list(self.indices)]).max(axis=1)


def dyadic_index_levels(n_points: int) -> list[np.ndarray]:
    """Nested dyadic index subsets of range(n_points); needs n_points = 2^J + 1.

    Level j (1-based) selects every 2^(J-j)-th index: 3 points, 5, 9, ...
    up to all of them.
    """
    J = int(round(math.log2(n_points - 1))) if n_points > 1 else 0
    if n_points < 3 or (1 << J) + 1 != n_points:
        raise ValueError(f"dyadic levels need 2^J + 1 points, got {n_points}")
    return [np.arange(0, n_points, 1 << (J - j)) for j in range(1, J + 1)]


def nested_column_sup_family(n_cols: int, inner: str = "euclidean") -> SeminormFamily:
    """Family of column-sup seminorms over nested dyadic column subsets."""
    return SeminormFamily(
        [MaskedColumnSup(tuple(int(i) for i in idx), inner) for idx in dyadic_index_levels(n_cols)]
    )


def nested_sup_family(dim: int) -> SeminormFamily:
    """Family of entrywise-sup seminorms on vectors over nested dyadic subsets."""
    return SeminormFamily(
        [MaskedAbsSup(tuple(int(i) for i in idx)) for idx in dyadic_index_levels(dim)]
    )
