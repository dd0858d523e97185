"""Builders that turn finite representations and certified approximation
stages into series of elementary tensors whose every partial sum is bounded.

The central device is replication: write u as n copies of (1/n)u and expand
each copy by the same m-term representation, row after row. A prefix that
stops inside row q+1 after r leftover terms equals (q/n)u plus those r terms,
so its norm is at most alpha(u) + (m/n) * max_k alpha(e_k (x) f_k). Taking n
large enough pins every prefix under c * alpha(u), for any chosen c > 1.

Replication counts are rounded up to the next power of two: dividing by a
power of two is exact in binary floating point, so row scaling introduces no
rounding and flattening preserves the absolute sum of factor norms exactly.

``telescope`` chains that device across a certified approximation scheme
u_1, u_2, ... -> u: the differences v_j = u_j - u_{j-1} form the blocks of a
single series whose partial sums converge to u, with an explicit error bound
at every term index. ``dense_span_series`` is the same machinery for scalar
multiples of dictionary atoms in a plain vector space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import (
    BlockRecord,
    CoefficientTensor,
    ElementaryTensor,
    ReplicationPlan,
    Representation,
    SeriesBlock,
    SeriesStream,
)
from .norms import NormEvaluator, SeminormFamily, cumulative_norms, vector_norm

#: Below this (relative to term size) a norm value is treated as exactly zero.
ZERO_REL = 1e-12

#: Absolute slack allowed when checking measured ratios against their bounds.
RATIO_TOL = 1e-9


class CertificateViolationError(RuntimeError):
    """A construction measured itself violating the bound it must certify."""


class SchemeContractError(RuntimeError):
    """An approximation scheme broke its certified error-bound contract."""


class DictionaryBudgetError(RuntimeError):
    """A dictionary stage could not reach its required residual."""

    def __init__(self, stage: int, residual: float, bound: float, budget: int):
        super().__init__(
            f"stage {stage}: residual {residual:.6e} > required {bound:.6e} "
            f"after exhausting all {budget} atoms"
        )
        self.stage = stage
        self.residual = residual
        self.bound = bound
        self.budget = budget


@dataclass(frozen=True)
class BoundCertificate:
    """Measured outcome of a bounded-prefix flattening.

    ``worst_prefix_ratio`` is max over prefixes p of alpha(prefix_p)/alpha(u),
    recomputed from the emitted terms at production time; it never exceeds
    ``c`` beyond floating-point slack. ``n_used`` is the replication count
    actually used (0 for the empty representation of a zero target).
    """

    c: float
    worst_prefix_ratio: float
    n_used: int
    zero_target: bool = False


@dataclass(frozen=True)
class DictionaryAtom:
    """One candidate building block a (finite, nonzero vector) with an id."""

    atom: np.ndarray
    id: int

    def __post_init__(self) -> None:
        arr = np.array(self.atom, dtype=float)
        if arr.ndim != 1:
            raise ValueError(f"atom must be a vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("atom must be finite")
        if not np.any(arr):
            raise ValueError("atom must be nonzero")
        arr.setflags(write=False)
        object.__setattr__(self, "atom", arr)


@dataclass(frozen=True)
class ScalarSeriesTerm:
    """One term lambda * a of a scalar series over dictionary atoms."""

    lam: float
    atom_id: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.lam):
            raise ValueError("term coefficient must be finite")


def next_pow2(k: int) -> int:
    """Smallest power of two >= k (k >= 1)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return 1 << (k - 1).bit_length()


def plan_replication(m: int, alpha_u: float, max_term_norm: float, c: float = 2.0) -> ReplicationPlan:
    """Smallest replication count n with (m/n) * max_term_norm <= (c-1) * alpha_u.

    That is the n making every prefix of the replicated representation obey
    alpha(prefix) <= c * alpha(u). Zero-norm targets have no such n and must
    go through the empty-representation / seminorm path instead.
    """
    if m < 1:
        raise ValueError(f"term count m must be >= 1, got {m}")
    if not (c > 1.0) or not math.isfinite(c):
        raise ValueError(f"bound constant must satisfy c > 1, got {c!r}")
    if not math.isfinite(alpha_u) or alpha_u <= 0.0:
        raise ValueError(
            f"plan_replication needs alpha(u) > 0, got {alpha_u!r}; "
            "zero-norm targets take the empty/seminorm path"
        )
    if not math.isfinite(max_term_norm) or max_term_norm < 0.0:
        raise ValueError(f"max term norm must be finite and >= 0, got {max_term_norm!r}")
    slack = (c - 1.0) * alpha_u
    n = max(1, math.ceil(m * max_term_norm / slack))
    # ceil on floats can overshoot by one when the quotient is borderline.
    while n > 1 and (m / (n - 1)) * max_term_norm <= slack:
        n -= 1
    return ReplicationPlan(m=m, n=n, N=n * m, c=c)


def _term_norms(ev, rep: Representation) -> np.ndarray:
    outers = np.einsum("ki,kj->kij", rep.xs, rep.ys)
    return np.asarray(ev.eval_many(outers), dtype=float)


def _replicated_rows(rep: Representation, n: int) -> tuple[np.ndarray, np.ndarray]:
    inv = 1.0 / n  # n is a power of two, so this scaling is exact
    xs = np.tile(rep.xs * inv, (n, 1))
    ys = np.tile(rep.ys, (n, 1))
    return xs, ys


def _empty_like(rep: Representation) -> Representation:
    return Representation((), rep.target)


def flatten_bounded(
    rep: Representation, ev, c: float = 2.0
) -> tuple[Representation, BoundCertificate]:
    """Re-represent a tensor so every prefix stays under c times its norm.

    Returns the row-major replication (1/n scaled copies of the input terms)
    together with a certificate recording the measured worst prefix ratio.
    A target with alpha(u) = 0 is the zero tensor and comes back as the empty
    representation.
    """
    if not (c > 1.0) or not math.isfinite(c):
        raise ValueError(f"bound constant must satisfy c > 1, got {c!r}")
    alpha_u = float(ev(rep.target))
    if not math.isfinite(alpha_u):
        raise ValueError("norm of the target is not finite")
    if rep.n_terms == 0:
        return _empty_like(rep), BoundCertificate(c, 0.0, 0, zero_target=True)
    term_norms = _term_norms(ev, rep)
    if not np.all(np.isfinite(term_norms)):
        raise ValueError("a term norm is not finite")
    max_term = float(term_norms.max())
    if alpha_u <= ZERO_REL * (1.0 + max_term):
        return _empty_like(rep), BoundCertificate(c, 0.0, 0, zero_target=True)
    plan = plan_replication(rep.n_terms, alpha_u, max_term, c)
    n = next_pow2(plan.n)
    xs, ys = _replicated_rows(rep, n)
    flat = Representation(
        tuple(ElementaryTensor(x, y) for x, y in zip(xs, ys)), rep.target
    )
    prefix_vals = cumulative_norms(ev, xs, ys)
    worst = float(prefix_vals.max()) / alpha_u
    if worst > c + RATIO_TOL:
        raise CertificateViolationError(
            f"measured worst prefix ratio {worst:.12f} exceeds c = {c}"
        )
    return flat, BoundCertificate(c, worst, n)


def flatten_seminorm(rep: Representation, seminorm, eps: float) -> Representation:
    """Replicate a seminorm-null target so every prefix has seminorm <= eps.

    The target must be degenerate for the given seminorm (seminorm zero while
    possibly nonzero as a tensor); nonzero targets belong to
    ``flatten_bounded``. Terms already in the null space are returned
    unchanged.
    """
    if not (eps > 0.0) or not math.isfinite(eps):
        raise ValueError(f"eps must be positive and finite, got {eps!r}")
    if rep.n_terms == 0:
        return rep
    term_sems = _term_norms(seminorm, rep)
    max_term = float(term_sems.max())
    target_sem = float(seminorm(rep.target))
    if target_sem > ZERO_REL * (1.0 + max_term):
        raise ValueError(
            f"target seminorm {target_sem:.3e} is not zero; use flatten_bounded"
        )
    if max_term <= ZERO_REL:
        return rep
    n = next_pow2(max(1, math.ceil(rep.n_terms * max_term / eps)))
    xs, ys = _replicated_rows(rep, n)
    flat = Representation(
        tuple(ElementaryTensor(x, y) for x, y in zip(xs, ys)), rep.target
    )
    prefix_vals = cumulative_norms(seminorm, xs, ys)
    worst = float(prefix_vals.max())
    if worst > eps * (1.0 + RATIO_TOL) + ZERO_REL:
        raise CertificateViolationError(
            f"measured worst prefix seminorm {worst:.3e} exceeds eps = {eps:.3e}"
        )
    return flat


def expand(u: CoefficientTensor, method: str = "auto") -> Representation:
    """Initial finite representation of a tensor: SVD terms or basis entries.

    ``auto`` picks the SVD expansion when both spaces are euclidean (fewest
    terms, smallest term norms) and the standard-basis expansion otherwise.
    """
    if method == "auto":
        euclidean = (
            u.space_x.vector_norm_kind == "euclidean"
            and u.space_y.vector_norm_kind == "euclidean"
        )
        method = "svd" if euclidean else "basis"
    if method == "svd":
        terms = _svd_terms(u.coeffs)
    elif method == "basis":
        terms = _basis_terms(u.coeffs)
    else:
        raise ValueError(f"unknown expansion method {method!r}")
    return Representation(terms, u)


def _canonical_svd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD with each left vector's largest-magnitude entry made positive."""
    U, s, Vt = np.linalg.svd(a)
    for i in range(s.shape[0]):
        col = U[:, i]
        j = int(np.argmax(np.abs(col)))
        if col[j] < 0.0:
            U[:, i] = -col
            Vt[i, :] = -Vt[i, :]
    return U, s, Vt


def _svd_dust_cut(s: np.ndarray) -> float:
    return float(s[0]) * 1e-15 if s.size else 0.0


def _svd_terms(a: np.ndarray) -> tuple[ElementaryTensor, ...]:
    U, s, Vt = _canonical_svd(a)
    cut = _svd_dust_cut(s)
    return tuple(
        ElementaryTensor(s[i] * U[:, i], Vt[i, :])
        for i in range(s.shape[0])
        if s[i] > cut
    )


def _basis_terms(a: np.ndarray) -> tuple[ElementaryTensor, ...]:
    rows, cols = a.shape
    terms = []
    eye_x = np.eye(rows)
    eye_y = np.eye(cols)
    for i in range(rows):
        for j in range(cols):
            if a[i, j] != 0.0:
                terms.append(ElementaryTensor(eye_x[i], a[i, j] * eye_y[j]))
    return tuple(terms)


@dataclass(frozen=True)
class AbsoluteSumCertificate:
    """Sum of ||x_i|| * ||y_i|| over a representation vs the projective norm."""

    absolute_sum: float
    projective_norm: float
    ratio: float


def absolute_sum(rep: Representation) -> float:
    """fsum of ||x_i|| * ||y_i|| with the target spaces' vector norms."""
    sx, sy = rep.target.space_x, rep.target.space_y
    return math.fsum(
        vector_norm(sx, t.x) * vector_norm(sy, t.y) for t in rep.terms
    )


def projective_absolute(
    u: CoefficientTensor, delta: float = 0.0
) -> tuple[Representation, AbsoluteSumCertificate]:
    """Absolutely convergent representation for euclidean spaces via the SVD.

    Splitting each singular triple as x_i = sqrt(s_i) u_i, y_i = sqrt(s_i) v_i
    gives sum ||x_i|| ||y_i|| = nuclear(u), the projective norm here, so the
    absolute sum certificate is as tight as it can be. Singular values at or
    below ``delta`` are dropped (the zero tensor yields the empty
    representation).
    """
    if delta < 0.0 or not math.isfinite(delta):
        raise ValueError(f"delta must be >= 0, got {delta!r}")
    if (
        u.space_x.vector_norm_kind != "euclidean"
        or u.space_y.vector_norm_kind != "euclidean"
    ):
        raise ValueError("projective_absolute needs euclidean factor spaces")
    U, s, Vt = _canonical_svd(u.coeffs)
    cut = max(delta, _svd_dust_cut(s))
    terms = []
    for i in range(s.shape[0]):
        if s[i] > cut:
            root = math.sqrt(s[i])
            terms.append(ElementaryTensor(root * U[:, i], root * Vt[i, :]))
    rep = Representation(tuple(terms), u)
    abs_sum = absolute_sum(rep)
    nuclear = math.fsum(s.tolist())
    ratio = abs_sum / nuclear if nuclear > 0.0 else 0.0
    return rep, AbsoluteSumCertificate(abs_sum, nuclear, ratio)


@dataclass(frozen=True)
class StopRule:
    """When to stop emitting blocks: whichever active criterion fires first."""

    certified_error: float | None = 1e-6
    max_terms: int | None = None
    max_blocks: int | None = None

    def __post_init__(self) -> None:
        if self.certified_error is None and self.max_terms is None and self.max_blocks is None:
            raise ValueError("a stop rule needs at least one active criterion")
        if self.certified_error is not None and not (self.certified_error > 0.0):
            raise ValueError("certified_error tolerance must be positive")

    def fires(self, stage_bound: float, total_terms: int, blocks: int) -> bool:
        if self.certified_error is not None and stage_bound <= self.certified_error:
            return True
        if self.max_terms is not None and total_terms >= self.max_terms:
            return True
        if self.max_blocks is not None and blocks >= self.max_blocks:
            return True
        return False


def _difference_terms(scheme, j: int, v: CoefficientTensor):
    getter = getattr(scheme, "difference_terms", None)
    if getter is not None:
        terms = getter(j)
        if terms is not None:
            return tuple(terms)
    return expand(v).terms


def telescope(
    scheme,
    ev,
    c: float = 2.0,
    stop: StopRule | None = None,
    envelope_scale: float | None = None,
    envelope_ratio: float = 0.5,
    reference: CoefficientTensor | None = None,
    max_stages: int = 1000,
) -> SeriesStream:
    """Emit a series of elementary tensors converging to the scheme's limit.

    Stage differences v_j = u_j - u_{j-1} (v_1 = u_1) become blocks, each
    flattened so its internal prefixes stay under c * alpha_j(v_j); a stage
    whose difference is seminorm-degenerate falls back to the eps = 1/j^2
    replication. For any term index m inside block n+1 the partial sum s_m
    then satisfies alpha(s_m - u) <= eps_n + c * alpha(v_{n+1}), where eps_n
    is the scheme's certified bound at stage n.

    Stage bounds must fit a geometric envelope eps_j <= E * ratio^j (defaults:
    E = alpha(u_1) + 1, ratio = 1/2) and be non-increasing; violations raise
    ``SchemeContractError``. When ``reference`` is given, each stage's actual
    error is measured against it and checked against the claimed bound.
    """
    if not (c > 1.0) or not math.isfinite(c):
        raise ValueError(f"bound constant must satisfy c > 1, got {c!r}")
    if not (0.0 < envelope_ratio < 1.0):
        raise ValueError(f"envelope ratio must lie in (0, 1), got {envelope_ratio!r}")
    stop = stop or StopRule()
    family = isinstance(ev, SeminormFamily)

    first = scheme.stage(1)
    alpha_1 = ev.at(1) if family else ev
    E = envelope_scale if envelope_scale is not None else float(alpha_1(first.tensor)) + 1.0

    blocks: list[SeriesBlock] = []
    terms: list[ElementaryTensor] = []
    records: list[BlockRecord] = []
    prev_tensor: CoefficientTensor | None = None
    prev_bound: float | None = None

    for j in range(1, max_stages + 1):
        stage = scheme.stage(j)
        bound = float(stage.bound)
        if not math.isfinite(bound) or bound < 0.0:
            raise SchemeContractError(f"stage {j} bound {bound!r} is not a valid error bound")
        if bound > E * envelope_ratio**j * (1.0 + 1e-12):
            raise SchemeContractError(
                f"stage {j} bound {bound:.6e} breaks the geometric envelope "
                f"{E:.6e} * {envelope_ratio}^{j} (non-summable schedule)"
            )
        if prev_bound is not None and bound > prev_bound * (1.0 + 1e-12):
            raise SchemeContractError(
                f"stage bounds must be non-increasing; stage {j} went "
                f"{prev_bound:.6e} -> {bound:.6e}"
            )
        alpha_j = ev.at(j) if family else ev
        if reference is not None:
            measured = float(alpha_j(stage.tensor - reference))
            if measured > bound + RATIO_TOL * (1.0 + measured):
                raise SchemeContractError(
                    f"stage {j} measured error {measured:.6e} exceeds its "
                    f"certified bound {bound:.6e}"
                )

        v = stage.tensor if prev_tensor is None else stage.tensor - prev_tensor
        diff_terms = _difference_terms(scheme, j, v)
        rep_v = Representation(diff_terms, v)
        alpha_v = float(alpha_j(v))

        fallback_eps = None
        worst = None
        if rep_v.n_terms == 0:
            flat = rep_v
            prefix_bound = 0.0
        else:
            sems = _term_norms(alpha_j, rep_v)
            max_term = float(sems.max()) if sems.size else 0.0
            if alpha_v > ZERO_REL * (1.0 + max_term):
                flat, cert = flatten_bounded(rep_v, alpha_j, c)
                worst = cert.worst_prefix_ratio
                prefix_bound = c * alpha_v
            elif family:
                fallback_eps = 1.0 / (j * j)
                flat = flatten_seminorm(rep_v, alpha_j, fallback_eps)
                prefix_bound = fallback_eps
            else:
                # A genuine norm: alpha(v) = 0 means v = 0, so the block is empty.
                flat = Representation((), v)
                prefix_bound = 0.0

        start = len(terms)
        terms.extend(flat.terms)
        blocks.append(SeriesBlock(index=j, start=start, stop=len(terms), block_norm=alpha_v))
        records.append(
            BlockRecord(
                index=j,
                k=len(flat.terms),
                block_norm=alpha_v,
                stage_bound=bound,
                prefix_bound=prefix_bound,
                worst_prefix_ratio=worst,
                fallback_eps=fallback_eps,
                seminorm_index=min(j, len(ev)) if family else None,
            )
        )
        prev_tensor = stage.tensor
        prev_bound = bound
        if stop.fires(bound, len(terms), len(blocks)):
            break
    else:
        raise SchemeContractError(
            f"stop rule did not fire within {max_stages} stages"
        )

    target = first.tensor
    norm_kind = getattr(ev, "kind", None) or (
        f"seminorm family ({len(ev)} members)" if family else type(ev).__name__
    )
    return SeriesStream(
        space_x=target.space_x,
        space_y=target.space_y,
        c=c,
        norm_kind=str(norm_kind),
        blocks=tuple(blocks),
        terms=tuple(terms),
        certificates=tuple(records),
    )


@dataclass(frozen=True)
class ScalarStageRecord:
    """Per-stage record of a dictionary series: fit size, residual, bounds."""

    index: int
    atoms_used: int
    residual: float
    bound: float
    worst_prefix_ratio: float | None = None
    fallback_eps: float | None = None


@dataclass(frozen=True, eq=False)
class ScalarSeriesStream:
    """Series of scalar-weighted dictionary atoms converging to a vector."""

    terms: tuple[ScalarSeriesTerm, ...]
    blocks: tuple[SeriesBlock, ...]
    stages: tuple[ScalarStageRecord, ...]
    atoms: dict[int, np.ndarray]
    dim: int
    c: float

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def partial_sum(self, p: int) -> np.ndarray:
        if not (0 <= p <= self.n_terms):
            raise ValueError(f"prefix length {p} out of range [0, {self.n_terms}]")
        acc = np.zeros(self.dim)
        for t in self.terms[:p]:
            acc = acc + t.lam * self.atoms[t.atom_id]
        return acc

    @property
    def final_certified_error(self) -> float:
        return self.stages[-1].bound if self.stages else 0.0


def dense_span_series(
    target,
    dictionary: Sequence[DictionaryAtom],
    family: SeminormFamily,
    c: float = 2.0,
    tol: float = 1e-6,
    max_stages: int = 60,
    atom_budget: int | None = None,
) -> ScalarSeriesStream:
    """Series sum lambda_n * a_n converging to ``target`` in every family member.

    Stage j least-squares fits the target over a growing front of the
    dictionary until the residual drops below 2^-j in the j-th seminorm; the
    coefficient increments between stages are emitted through the same
    bounded-prefix replication as tensor blocks (degenerate stages through
    the eps = 1/j^2 fallback). Stops once 2^-j <= tol.

    Raises ``DictionaryBudgetError``, naming the stage and achieved residual,
    if the dictionary cannot reach a stage's required residual.
    """
    from .schemes import DictionaryStages  # shared stage solver

    if not (c > 1.0) or not math.isfinite(c):
        raise ValueError(f"bound constant must satisfy c > 1, got {c!r}")
    if not (tol > 0.0):
        raise ValueError("tol must be positive")
    stages = DictionaryStages(target, dictionary, family, atom_budget=atom_budget)

    atom_vectors = {a.id: a.atom for a in stages.atoms}
    atom_order = [a.id for a in stages.atoms]
    dim = stages.target.shape[0]

    terms: list[ScalarSeriesTerm] = []
    blocks: list[SeriesBlock] = []
    stage_records: list[ScalarStageRecord] = []
    prev_coef = np.zeros(0)

    for j in range(1, max_stages + 1):
        sol = stages.stage_solution(j)
        alpha_j = family.at(j)
        coef = sol.coef
        width = max(coef.shape[0], prev_coef.shape[0])
        delta = np.zeros(width)
        delta[: coef.shape[0]] += coef
        delta[: prev_coef.shape[0]] -= prev_coef

        live = [(float(delta[i]), atom_order[i]) for i in range(width) if delta[i] != 0.0]
        v_vec = sol.approx - stages.partial_for(prev_coef)
        alpha_v = float(alpha_j(v_vec))

        worst = None
        fallback_eps = None
        start = len(terms)
        if live:
            term_sems = np.array(
                [abs(lam) * float(alpha_j(atom_vectors[aid])) for lam, aid in live]
            )
            max_term = float(term_sems.max())
            m = len(live)
            if alpha_v > ZERO_REL * (1.0 + max_term):
                plan = plan_replication(m, alpha_v, max_term, c)
                n = next_pow2(plan.n)
                limit = c * alpha_v
            elif max_term <= ZERO_REL:
                n = 1
                limit = None
            else:
                fallback_eps = 1.0 / (j * j)
                n = next_pow2(max(1, math.ceil(m * max_term / fallback_eps)))
                limit = fallback_eps
            inv = 1.0 / n
            running = np.zeros(dim)
            worst_val = 0.0
            for _ in range(n):
                for lam, aid in live:
                    lam_n = lam * inv
                    terms.append(ScalarSeriesTerm(lam_n, aid))
                    running = running + lam_n * atom_vectors[aid]
                    worst_val = max(worst_val, float(alpha_j(running)))
            if limit is not None and worst_val > limit * (1.0 + RATIO_TOL) + ZERO_REL:
                raise CertificateViolationError(
                    f"stage {j}: measured prefix seminorm {worst_val:.6e} exceeds {limit:.6e}"
                )
            if alpha_v > 0.0 and fallback_eps is None and limit is not None:
                worst = worst_val / alpha_v
        blocks.append(SeriesBlock(index=j, start=start, stop=len(terms), block_norm=alpha_v))
        stage_records.append(
            ScalarStageRecord(
                index=j,
                atoms_used=sol.atoms_used,
                residual=sol.residual_value,
                bound=sol.bound,
                worst_prefix_ratio=worst,
                fallback_eps=fallback_eps,
            )
        )
        prev_coef = coef
        if sol.bound <= tol:
            break
    else:
        raise ValueError(f"tolerance {tol} not reached within {max_stages} stages")

    return ScalarSeriesStream(
        terms=tuple(terms),
        blocks=tuple(blocks),
        stages=tuple(stage_records),
        atoms=atom_vectors,
        dim=dim,
        c=c,
    )
