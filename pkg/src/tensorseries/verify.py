"""Independent re-verification of certificates and empirical series probes.

Everything here recomputes from scratch: prefix norms are re-accumulated from
the raw terms (with compensated summation once term counts get long enough
for rounding to matter), trace errors are measured against the exact target,
and stress probes re-sum under permuted orders and subsets.

The permutation and subset probes are exploratory measurements only; whether
every representation admits uniformly bounded subsets (which would give
unconditional convergence) is an open question, and these reports make no
pass/fail judgment about it.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .construct import RATIO_TOL, ZERO_REL
from .model import CoefficientTensor, ElementaryTensor, Representation, SeriesStream

#: Beyond this many terms, prefix re-verification uses compensated summation.
COMPENSATED_THRESHOLD = 10_000

EXPLORATORY_NOTE = (
    "exploratory probe: measured worst-case ratios only; no uniform bound is "
    "claimed or implied"
)


def _outer_stack(terms: Sequence[ElementaryTensor]) -> np.ndarray:
    if not terms:
        return np.zeros((0, 0, 0))
    xs = np.vstack([t.x for t in terms])
    ys = np.vstack([t.y for t in terms])
    return np.einsum("ki,kj->kij", xs, ys)


def _prefix_norms(outers: np.ndarray, ev, offset: np.ndarray | None = None) -> np.ndarray:
    """Norms of running prefix sums (optionally started from ``offset``).

    Plain chunked accumulation for short runs; elementwise Neumaier
    compensation for long ones, so 1e-9 certificate tolerances stay honest.
    """
    n = outers.shape[0]
    out = np.empty(n)
    if n == 0:
        return out
    shape = outers.shape[1:]
    if n <= COMPENSATED_THRESHOLD:
        carry = np.zeros(shape) if offset is None else offset.copy()
        chunk = 256
        for s in range(0, n, chunk):
            e = min(s + chunk, n)
            prefixes = np.cumsum(outers[s:e], axis=0)
            prefixes += carry
            out[s:e] = ev.eval_many(prefixes)
            carry = prefixes[-1].copy()
        return out
    acc = np.zeros(shape) if offset is None else offset.copy()
    comp = np.zeros(shape)
    buf = np.empty((256,) + shape)
    filled = 0
    pos = 0
    for k in range(n):
        x = outers[k]
        t = acc + x
        big = np.abs(acc) >= np.abs(x)
        comp += np.where(big, (acc - t) + x, (x - t) + acc)
        acc = t
        buf[filled] = acc + comp
        filled += 1
        if filled == buf.shape[0] or k == n - 1:
            out[pos : pos + filled] = ev.eval_many(buf[:filled])
            pos += filled
            filled = 0
    return out


@dataclass(frozen=True)
class PrefixBoundReport:
    """Re-measured prefix bound for a representation.

    ``worst_prefix_ratio`` is None for a zero-norm target (ratio undefined);
    such inputs are flagged rather than judged.
    """

    c: float
    alpha_target: float
    worst_prefix_ratio: float | None
    zero_target: bool
    violation: bool


def prefix_bound_report(rep: Representation, ev, c: float) -> PrefixBoundReport:
    """Recompute every prefix norm from scratch and compare against c * alpha(u)."""
    alpha_t = float(ev(rep.target))
    if rep.n_terms == 0:
        return PrefixBoundReport(c, alpha_t, None, True, False)
    outers = _outer_stack(rep.terms)
    term_norms = np.asarray(ev.eval_many(outers), dtype=float)
    max_term = float(term_norms.max())
    if alpha_t <= ZERO_REL * (1.0 + max_term):
        return PrefixBoundReport(c, alpha_t, None, True, False)
    vals = _prefix_norms(outers, ev)
    worst = float(vals.max()) / alpha_t
    return PrefixBoundReport(c, alpha_t, worst, False, worst > c + RATIO_TOL)


@dataclass(frozen=True)
class TraceRow:
    m: int
    error: float
    certified_bound: float
    block: int


@dataclass(frozen=True, eq=False)
class ConvergenceTrace:
    """Per-term errors of the running partial sum against certified bounds."""

    rows: tuple[TraceRow, ...]
    truncated: bool

    def worst_excess(self) -> float:
        """Max of error - certified_bound over all rows (<= 0 means all good)."""
        if not self.rows:
            return -math.inf
        return max(r.error - r.certified_bound for r in self.rows)

    def boundary_rows(self, stream: SeriesStream) -> list[TraceRow]:
        ends = {b.stop for b in stream.blocks if b.size > 0}
        return [r for r in self.rows if r.m in ends]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["m", "error", "certified_bound", "block"])
            for r in self.rows:
                writer.writerow([r.m, repr(r.error), repr(r.certified_bound), r.block])


def convergence_trace(
    stream: SeriesStream,
    target: CoefficientTensor,
    ev,
    max_terms: int | None = None,
) -> ConvergenceTrace:
    """Trace alpha(s_m - u) for every emitted index m, with certified bounds.

    Errors are recomputed against the exact target; bounds come from the
    stream's block records: inside block n the bound is the previous boundary
    certificate plus the block's own prefix bound.
    """
    n = stream.n_terms
    requested = n if max_terms is None else min(max_terms, n)
    truncated = max_terms is not None and max_terms > n
    outers = _outer_stack(stream.terms[:requested])
    if requested == 0:
        return ConvergenceTrace((), truncated)
    errors = _prefix_norms(outers, ev, offset=-target.coeffs)
    rows = []
    for m in range(1, requested + 1):
        block = stream.block_of(m)
        rows.append(
            TraceRow(
                m=m,
                error=float(errors[m - 1]),
                certified_bound=stream.interior_bound(block),
                block=block,
            )
        )
    return ConvergenceTrace(tuple(rows), truncated)


@dataclass(frozen=True)
class StressReport:
    """Worst-case ratio measurements over permutations or subsets."""

    kind: str
    trials: int
    n_terms: int
    seed: int
    exhaustive: bool
    worst_prefix_ratio_over_permutations: float | None
    worst_subset_ratio: float | None
    ratio_quantiles: dict[str, float]
    zero_target: bool
    note: str = EXPLORATORY_NOTE

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "trials": self.trials,
            "n_terms": self.n_terms,
            "seed": self.seed,
            "exhaustive": self.exhaustive,
            "worst_prefix_ratio_over_permutations": self.worst_prefix_ratio_over_permutations,
            "worst_subset_ratio": self.worst_subset_ratio,
            "ratio_quantiles": self.ratio_quantiles,
            "zero_target": self.zero_target,
            "note": self.note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"


def _quantiles(vals: np.ndarray) -> dict[str, float]:
    if vals.size == 0:
        return {}
    qs = np.percentile(vals, [0, 25, 50, 75, 100])
    return {k: float(v) for k, v in zip(("p0", "p25", "p50", "p75", "p100"), qs)}


def _stress_setup(terms, target, ev):
    rep = Representation(tuple(terms), target)  # validates reconstruction
    outers = _outer_stack(rep.terms)
    alpha_t = float(ev(target))
    if rep.n_terms:
        max_term = float(np.max(ev.eval_many(outers)))
    else:
        max_term = 0.0
    zero = alpha_t <= ZERO_REL * (1.0 + max_term)
    return rep, outers, alpha_t, zero


def permutation_stress(
    terms: Sequence[ElementaryTensor],
    target: CoefficientTensor,
    ev,
    trials: int = 1000,
    seed: int = 0,
) -> StressReport:
    """Worst prefix-norm ratio along randomly permuted term orders.

    Exhausts all orderings when there are at most ``trials`` of them (so small
    representations are measured exactly); otherwise draws ``trials`` seeded
    permutations, one derived generator per trial.
    """
    rep, outers, alpha_t, zero = _stress_setup(terms, target, ev)
    n = rep.n_terms
    if zero or n == 0:
        return StressReport(
            "permutation", 0, n, seed, n == 0, None, None, {}, zero_target=True
        )
    total_orders = math.factorial(n)
    exhaustive = total_orders <= trials
    if exhaustive:
        import itertools

        perms = itertools.permutations(range(n))
        used = total_orders
    else:
        perms = (
            np.random.default_rng(seed + t).permutation(n) for t in range(trials)
        )
        used = trials
    worsts = np.empty(used)
    for i, perm in enumerate(perms):
        vals = _prefix_norms(outers[list(perm)], ev)
        worsts[i] = vals.max() / alpha_t
    return StressReport(
        kind="permutation",
        trials=used,
        n_terms=n,
        seed=seed,
        exhaustive=exhaustive,
        worst_prefix_ratio_over_permutations=float(worsts.max()),
        worst_subset_ratio=None,
        ratio_quantiles=_quantiles(worsts),
        zero_target=False,
    )


#: Subsets are enumerated exhaustively up to this many terms (2^16 subsets).
SUBSET_EXHAUSTIVE_MAX = 16


def subset_bound_scan(
    terms: Sequence[ElementaryTensor],
    target: CoefficientTensor,
    ev,
    trials: int = 1000,
    seed: int = 0,
) -> StressReport:
    """Worst ratio alpha(sum over J) / alpha(u) over subsets J of the terms.

    Exhaustive for up to 16 terms, sampled (with the full set always
    included) beyond that. A uniform bound on this ratio over all
    representations would settle unconditional convergence; this scan only
    gathers evidence.
    """
    rep, outers, alpha_t, zero = _stress_setup(terms, target, ev)
    n = rep.n_terms
    if zero or n == 0:
        return StressReport(
            "subset", 0, n, seed, n == 0, None, None, {}, zero_target=True
        )
    flat = outers.reshape(n, -1)
    exhaustive = n <= SUBSET_EXHAUSTIVE_MAX
    if exhaustive:
        count = 1 << n
        masks = ((np.arange(count)[:, None] >> np.arange(n)) & 1).astype(float)
    else:
        count = trials
        rng_masks = [
            np.random.default_rng(seed + t).integers(0, 2, size=n) for t in range(trials)
        ]
        rng_masks.append(np.ones(n, dtype=int))  # the full sum is always a subset
        masks = np.array(rng_masks, dtype=float)
    shape = outers.shape[1:]
    vals = np.empty(masks.shape[0])
    chunk = max(1, (1 << 22) // max(1, flat.shape[1]))
    for s in range(0, masks.shape[0], chunk):
        e = min(s + chunk, masks.shape[0])
        sums = (masks[s:e] @ flat).reshape((e - s,) + shape)
        vals[s:e] = ev.eval_many(sums)
    ratios = vals / alpha_t
    return StressReport(
        kind="subset",
        trials=count,
        n_terms=n,
        seed=seed,
        exhaustive=exhaustive,
        worst_prefix_ratio_over_permutations=None,
        worst_subset_ratio=float(ratios.max()),
        ratio_quantiles=_quantiles(ratios),
        zero_target=False,
    )
