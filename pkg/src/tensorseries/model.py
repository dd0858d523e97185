"""Fixed-basis model of the tensor product of two finite-dimensional real spaces.

Everything here is desk scale: a tensor is a dense real coefficient matrix
over the standard bases, an elementary tensor is a pair of vectors whose
coefficient matrix is their outer product, and a representation is an ordered
term list together with the matrix it reconstructs. The matrix is the ground
truth for equality; term lists are never compared directly, because
representations are far from unique.

All values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

#: Cap on space dimensions unless a spec is built with a larger ``dim_cap``.
DEFAULT_DIM_CAP = 64

#: Relative Frobenius tolerance for "this term list reconstructs its target".
RECONSTRUCTION_RTOL = 1e-9

VECTOR_NORM_KINDS = ("euclidean", "l1", "linf")


class DimensionMismatchError(ValueError):
    """A vector, matrix, or term does not fit the declared spaces."""


class ReconstructionError(ValueError):
    """A term list does not sum back to the target it claims to represent."""


def _require_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} must be finite (no NaN or Inf entries)")


def _frozen_vector(v, what: str) -> np.ndarray:
    arr = np.array(v, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{what} must be one-dimensional, got shape {arr.shape}")
    _require_finite(arr, what)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpaceSpec:
    """One factor space: its dimension and the vector norm it carries."""

    dim: int
    vector_norm_kind: str = "euclidean"
    dim_cap: int = field(default=DEFAULT_DIM_CAP, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ValueError(f"space dimension must be a positive integer, got {self.dim!r}")
        if self.dim > self.dim_cap:
            raise ValueError(
                f"space dimension {self.dim} exceeds the cap {self.dim_cap}; "
                "construct the spec with a larger dim_cap for bigger models"
            )
        if self.vector_norm_kind not in VECTOR_NORM_KINDS:
            raise ValueError(
                f"unknown vector norm kind {self.vector_norm_kind!r}; "
                f"expected one of {VECTOR_NORM_KINDS}"
            )
        object.__setattr__(self, "dim", int(self.dim))


@dataclass(frozen=True, eq=False)
class CoefficientTensor:
    """Element of the tensor product as a dense (dim X) x (dim Y) matrix."""

    space_x: SpaceSpec
    space_y: SpaceSpec
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        coeffs = np.array(self.coeffs, dtype=float)
        expected = (self.space_x.dim, self.space_y.dim)
        if coeffs.shape != expected:
            raise DimensionMismatchError(
                f"coefficient matrix has shape {coeffs.shape}, expected {expected}"
            )
        _require_finite(coeffs, "tensor coefficients")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, space_x: SpaceSpec, space_y: SpaceSpec) -> "CoefficientTensor":
        return cls(space_x, space_y, np.zeros((space_x.dim, space_y.dim)))

    @classmethod
    def from_array(
        cls,
        a,
        kind_x: str = "euclidean",
        kind_y: str = "euclidean",
    ) -> "CoefficientTensor":
        """Wrap a raw matrix, sizing the spaces (and their cap) from its shape."""
        arr = np.asarray(a, dtype=float)
        if arr.ndim != 2:
            raise DimensionMismatchError(f"expected a matrix, got shape {arr.shape}")
        rows, cols = arr.shape
        cap = max(DEFAULT_DIM_CAP, rows, cols)
        return cls(
            SpaceSpec(rows, kind_x, dim_cap=cap),
            SpaceSpec(cols, kind_y, dim_cap=cap),
            arr,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.space_x.dim, self.space_y.dim)

    def with_coeffs(self, coeffs: np.ndarray) -> "CoefficientTensor":
        return CoefficientTensor(self.space_x, self.space_y, coeffs)

    def __add__(self, other: "CoefficientTensor") -> "CoefficientTensor":
        self._check_compatible(other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "CoefficientTensor") -> "CoefficientTensor":
        self._check_compatible(other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __neg__(self) -> "CoefficientTensor":
        return self.with_coeffs(-self.coeffs)

    def scaled(self, s: float) -> "CoefficientTensor":
        return self.with_coeffs(self.coeffs * float(s))

    def allclose(self, other: "CoefficientTensor", rtol: float = RECONSTRUCTION_RTOL) -> bool:
        self._check_compatible(other)
        diff = float(np.linalg.norm(self.coeffs - other.coeffs))
        scale = 1.0 + float(np.linalg.norm(other.coeffs))
        return diff <= rtol * scale

    def _check_compatible(self, other: "CoefficientTensor") -> None:
        if self.shape != other.shape:
            raise DimensionMismatchError(f"shape mismatch: {self.shape} vs {other.shape}")


@dataclass(frozen=True, eq=False)
class ElementaryTensor:
    """Rank-one term x (x) y, stored as the two factor vectors."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", _frozen_vector(self.x, "elementary tensor x factor"))
        object.__setattr__(self, "y", _frozen_vector(self.y, "elementary tensor y factor"))

    def to_matrix(self) -> np.ndarray:
        return np.outer(self.x, self.y)

    def scaled_x(self, s: float) -> "ElementaryTensor":
        return ElementaryTensor(self.x * float(s), self.y)

    def negated(self) -> "ElementaryTensor":
        return ElementaryTensor(-self.x, self.y)


@dataclass(frozen=True, eq=False)
class Representation:
    """Ordered finite list of elementary tensors that sums to ``target``.

    Construction validates that every term fits the target's spaces and that
    the term outer products actually reconstruct the target matrix within
    ``RECONSTRUCTION_RTOL`` (relative, Frobenius). An empty term list is a
    valid representation of the zero tensor.
    """

    terms: tuple[ElementaryTensor, ...]
    target: CoefficientTensor

    def __post_init__(self) -> None:
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        dx, dy = self.target.shape
        for i, t in enumerate(terms):
            if t.x.shape[0] != dx or t.y.shape[0] != dy:
                raise DimensionMismatchError(
                    f"term {i} has factor sizes ({t.x.shape[0]}, {t.y.shape[0]}), "
                    f"expected ({dx}, {dy})"
                )
        self._validate_reconstruction()

    def _validate_reconstruction(self) -> None:
        if self.terms:
            total = self.xs.T @ self.ys
        else:
            total = np.zeros(self.target.shape)
        defect = float(np.linalg.norm(total - self.target.coeffs))
        scale = 1.0 + float(np.linalg.norm(self.target.coeffs))
        if defect > RECONSTRUCTION_RTOL * scale:
            raise ReconstructionError(
                f"terms sum {defect:.3e} away from target (allowed "
                f"{RECONSTRUCTION_RTOL * scale:.3e})"
            )

    @cached_property
    def xs(self) -> np.ndarray:
        """Stacked x factors, one row per term (empty -> shape (0, dim X))."""
        if not self.terms:
            return np.zeros((0, self.target.space_x.dim))
        return np.vstack([t.x for t in self.terms])

    @cached_property
    def ys(self) -> np.ndarray:
        if not self.terms:
            return np.zeros((0, self.target.space_y.dim))
        return np.vstack([t.y for t in self.terms])

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self) -> Iterator[ElementaryTensor]:
        return iter(self.terms)


def outer_sum(rep: Representation) -> CoefficientTensor:
    """Sum of all term outer products, as a tensor. Equals ``prefix(rep, N)``."""
    return prefix(rep, rep.n_terms)


def prefix(rep: Representation, p: int) -> CoefficientTensor:
    """Sum of the first ``p`` terms, accumulated sequentially.

    Sequential accumulation keeps the prefix family additive: the difference
    between consecutive prefixes is bitwise the outer product of the new term.
    """
    if not isinstance(p, (int, np.integer)) or p < 0 or p > rep.n_terms:
        raise ValueError(f"prefix length {p!r} out of range [0, {rep.n_terms}]")
    acc = np.zeros(rep.target.shape)
    for t in rep.terms[:p]:
        acc = acc + t.to_matrix()
    return CoefficientTensor(rep.target.space_x, rep.target.space_y, acc)


@dataclass(frozen=True)
class ReplicationPlan:
    """How many copies of an m-term representation keep all prefixes bounded."""

    m: int
    n: int
    N: int
    c: float

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ValueError("replication plan needs m >= 1 and n >= 1")
        if self.N != self.n * self.m:
            raise ValueError(f"plan total {self.N} != n*m = {self.n * self.m}")
        if not (self.c > 1.0) or not math.isfinite(self.c):
            raise ValueError(f"bound constant must satisfy c > 1, got {self.c!r}")


@dataclass(frozen=True)
class SeriesBlock:
    """One block of a series: terms [start, stop) coming from a single stage."""

    index: int
    start: int
    stop: int
    block_norm: float

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("block index starts at 1")
        if not (0 <= self.start <= self.stop):
            raise ValueError(f"bad term range [{self.start}, {self.stop})")
        if not (self.block_norm >= 0.0):
            raise ValueError("block norm must be nonnegative")

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class BlockRecord:
    """Bound certificate recorded when a block was produced.

    ``prefix_bound`` caps the norm of every partial sum inside the block:
    c * block_norm for the bounded-prefix construction, or the epsilon of the
    degenerate-seminorm fallback. ``stage_bound`` is the approximation bound
    certified by the producing stage at the block boundary.
    """

    index: int
    k: int
    block_norm: float
    stage_bound: float
    prefix_bound: float
    worst_prefix_ratio: float | None = None
    fallback_eps: float | None = None
    seminorm_index: int | None = None


@dataclass(frozen=True, eq=False)
class SeriesStream:
    """Materialized series of elementary tensors with per-block certificates.

    Blocks tile the term list contiguously. Certified error bounds at and
    between block boundaries are reconstructed from the records: the boundary
    error after block n is at most ``boundary_error_bound(n)``, and any
    partial sum inside block n stays within ``interior_bound(n)`` of the
    limit.
    """

    space_x: SpaceSpec
    space_y: SpaceSpec
    c: float
    norm_kind: str
    blocks: tuple[SeriesBlock, ...]
    terms: tuple[ElementaryTensor, ...]
    certificates: tuple[BlockRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "certificates", tuple(self.certificates))
        if len(self.blocks) != len(self.certificates):
            raise ValueError("one certificate per block required")
        pos = 0
        for i, b in enumerate(self.blocks, start=1):
            if b.index != i or b.start != pos:
                raise ValueError("blocks must be contiguous and 1-indexed in order")
            pos = b.stop
        if pos != len(self.terms):
            raise ValueError(f"blocks cover {pos} terms, stream has {len(self.terms)}")

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def block_of(self, m: int) -> int:
        """1-based index of the block containing term number m (1-based)."""
        if not (1 <= m <= self.n_terms):
            raise ValueError(f"term index {m} out of range [1, {self.n_terms}]")
        for b in self.blocks:
            if b.start < m <= b.stop:
                return b.index
        raise ValueError(f"term index {m} falls in an empty gap (corrupt stream)")

    def boundary_error_bound(self, n: int) -> float:
        """Certified bound on the error of the partial sum at block boundary n.

        n = 0 is the empty partial sum; its distance to the limit is bounded
        by the first stage bound plus the first block norm.
        """
        if n < 0 or n > self.n_blocks:
            raise ValueError(f"block boundary {n} out of range [0, {self.n_blocks}]")
        if n == 0:
            if not self.certificates:
                return 0.0
            first = self.certificates[0]
            return first.stage_bound + first.block_norm
        return self.certificates[n - 1].stage_bound

    def interior_bound(self, n: int) -> float:
        """Certified error bound holding for every partial sum inside block n."""
        if not (1 <= n <= self.n_blocks):
            raise ValueError(f"block index {n} out of range [1, {self.n_blocks}]")
        return self.boundary_error_bound(n - 1) + self.certificates[n - 1].prefix_bound

    @property
    def final_certified_error(self) -> float:
        if not self.certificates:
            return 0.0
        return self.certificates[-1].stage_bound
