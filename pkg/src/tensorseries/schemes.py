"""Certified approximation schemes: stage-indexed producers u_j -> u.

Each stage carries the approximant and a certified error bound eps_j that the
telescoping builder consumes. Schemes also expose term lists for their stage
differences where a structured choice exists (rank-one SVD increments,
hierarchical hat-function corrections, dictionary coefficient updates); the
builder falls back to a generic expansion otherwise.

Schemes are pure given their inputs; stages are memoized and idempotent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    CoefficientTensor,
    DimensionMismatchError,
    ElementaryTensor,
    Representation,
    SpaceSpec,
)
from .norms import NormEvaluator, SeminormFamily


@dataclass(frozen=True)
class Stage:
    """One approximation stage: the approximant, its certified bound, terms."""

    index: int
    tensor: CoefficientTensor
    bound: float
    terms: tuple[ElementaryTensor, ...] | None = None


class ApproximationScheme:
    """Base class; subclasses implement ``stage`` and may refine differences."""

    kind = "abstract"

    def stage(self, j: int) -> Stage:
        raise NotImplementedError

    def difference_terms(self, j: int) -> tuple[ElementaryTensor, ...] | None:
        """Term list for u_j - u_{j-1}; None defers to a generic expansion."""
        cur = self.stage(j).terms
        if cur is None:
            return None
        if j == 1:
            return cur
        prev = self.stage(j - 1).terms
        if prev is None:
            return None
        return cur + tuple(t.negated() for t in prev)


class SvdTruncationScheme(ApproximationScheme):
    """Rank-j truncations of a tensor over euclidean spaces.

    Stage bounds are sigma_{j+1} for the spectral norm or the singular-value
    tail sum for the nuclear norm; both are exact for the truncation error,
    and the stage differences are single rank-one terms.
    """

    kind = "svd"

    def __init__(self, u: CoefficientTensor, error_norm: str = "spectral"):
        if (
            u.space_x.vector_norm_kind != "euclidean"
            or u.space_y.vector_norm_kind != "euclidean"
        ):
            raise ValueError("SVD truncation needs euclidean factor spaces")
        if error_norm not in ("spectral", "nuclear"):
            raise ValueError(
                f"error_norm must be 'spectral' or 'nuclear', got {error_norm!r}"
            )
        from .construct import _canonical_svd, _svd_dust_cut

        self.target = u
        self.error_norm = error_norm
        U, s, Vt = _canonical_svd(u.coeffs)
        cut = _svd_dust_cut(s)
        keep = int(np.sum(s > cut))
        self.singular_values = s
        self.rank = keep
        self._components = [
            ElementaryTensor(s[i] * U[:, i], Vt[i, :]) for i in range(keep)
        ]
        self._stages: dict[int, Stage] = {}

    def _bound(self, j: int) -> float:
        s = self.singular_values
        if j >= self.rank:
            return 0.0
        if self.error_norm == "spectral":
            return float(s[j])
        return float(np.sum(s[j : self.rank]))

    def stage(self, j: int) -> Stage:
        if j < 1:
            raise ValueError("stages are 1-indexed")
        got = self._stages.get(j)
        if got is None:
            r = min(j, self.rank)
            terms = tuple(self._components[:r])
            acc = np.zeros(self.target.shape)
            for t in terms:
                acc = acc + t.to_matrix()
            tensor = CoefficientTensor(self.target.space_x, self.target.space_y, acc)
            got = Stage(index=j, tensor=tensor, bound=self._bound(j), terms=terms)
            self._stages[j] = got
        return got

    def difference_terms(self, j: int) -> tuple[ElementaryTensor, ...]:
        if j == 1:
            return tuple(self._components[:1]) if self.rank >= 1 else ()
        if j <= self.rank:
            return (self._components[j - 1],)
        return ()


def svd_truncation_scheme(
    u: CoefficientTensor, error_norm: str = "spectral"
) -> SvdTruncationScheme:
    return SvdTruncationScheme(u, error_norm)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of a vector-valued function on a sorted grid in [0, 1].

    ``values`` holds one column per grid point (shape d x G). The grid must be
    strictly increasing and include both endpoints 0 and 1.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=float)
        values = np.array(self.values, dtype=float)
        if grid.ndim != 1:
            raise ValueError("grid must be one-dimensional")
        if values.ndim != 2 or values.shape[1] != grid.shape[0]:
            raise DimensionMismatchError(
                f"values shape {values.shape} does not match grid of {grid.shape[0]} points"
            )
        if not np.all(np.isfinite(grid)) or not np.all(np.isfinite(values)):
            raise ValueError("grid function must be finite")
        if grid.shape[0] < 2 or np.any(np.diff(grid) <= 0.0):
            raise ValueError("grid must be strictly increasing with at least two points")
        if grid[0] != 0.0 or grid[-1] != 1.0:
            raise ValueError("grid must include the endpoints 0 and 1")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def n_points(self) -> int:
        return self.grid.shape[0]

    @property
    def value_dim(self) -> int:
        return self.values.shape[0]

    def dyadic_level(self) -> int:
        """J such that the grid is the uniform 2^J + 1 point grid, else raise."""
        G = self.n_points
        J = int(round(math.log2(G - 1)))
        if (1 << J) + 1 != G:
            raise ValueError(f"grid has {G} points; a dyadic grid has 2^J + 1")
        expected = np.linspace(0.0, 1.0, G)
        if not np.allclose(self.grid, expected, rtol=0.0, atol=1e-12):
            raise ValueError("grid points are not uniform dyadic")
        return J

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        """Read ``t,y1,...,yd`` rows (header required, strictly increasing t)."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0].strip() != "t" or len(header) < 2:
                raise ValueError("grid CSV needs a header 't,y1,...,yd'")
            rows = [[float(cell) for cell in row] for row in reader if row]
        if not rows:
            raise ValueError("grid CSV has no sample rows")
        data = np.array(rows)
        return cls(grid=data[:, 0], values=data[:, 1:].T)


class GridInterpolationScheme(ApproximationScheme):
    """Piecewise-linear interpolants of a grid function on dyadic subgrids.

    Stage j interpolates on the 2^j + 1 point subgrid and is materialized as
    a (value dim) x (grid size) tensor: rows are value coordinates, columns
    grid points, so the column-sup ``grid_sup`` norm is the uniform norm on
    the grid. Stage terms pair sampled hat functions with node values; the
    stage differences are the hierarchical corrections at the new nodes,
    whose term norms match the local interpolation error.

    Bounds are the measured sup errors against the full grid, exact for this
    finite model.
    """

    kind = "interp"

    def __init__(self, f: GridFunction, inner_norm_kind: str = "euclidean"):
        self.f = f
        self.levels = f.dyadic_level()
        d, G = f.value_dim, f.n_points
        cap = max(64, G, d)
        self.space_x = SpaceSpec(d, inner_norm_kind, dim_cap=cap)
        self.space_y = SpaceSpec(G, "linf", dim_cap=cap)
        self._stages: dict[int, Stage] = {}

    def norm_evaluator(self) -> NormEvaluator:
        return NormEvaluator("grid_sup", self.space_x, self.space_y)

    def _subgrid(self, j: int) -> np.ndarray:
        step = 1 << (self.levels - j)
        return np.arange(0, self.f.n_points, step)

    def _interpolant(self, j: int) -> np.ndarray:
        idx = self._subgrid(j)
        nodes = self.f.grid[idx]
        out = np.empty_like(self.f.values)
        for i in range(self.f.value_dim):
            out[i] = np.interp(self.f.grid, nodes, self.f.values[i, idx])
        return out

    def _hat(self, nodes: np.ndarray, k: int) -> np.ndarray:
        unit = np.zeros(nodes.shape[0])
        unit[k] = 1.0
        return np.interp(self.f.grid, nodes, unit)

    def _sup_error(self, approx: np.ndarray) -> float:
        diff = self.f.values - approx
        if self.space_x.vector_norm_kind == "euclidean":
            per_col = np.sqrt((diff * diff).sum(axis=0))
        elif self.space_x.vector_norm_kind == "l1":
            per_col = np.abs(diff).sum(axis=0)
        else:
            per_col = np.abs(diff).max(axis=0)
        return float(per_col.max())

    def stage(self, j: int) -> Stage:
        if j < 1:
            raise ValueError("stages are 1-indexed")
        j_eff = min(j, self.levels)
        got = self._stages.get(j_eff)
        if got is None:
            idx = self._subgrid(j_eff)
            nodes = self.f.grid[idx]
            approx = self._interpolant(j_eff)
            terms = tuple(
                ElementaryTensor(self.f.values[:, idx[k]], self._hat(nodes, k))
                for k in range(idx.shape[0])
            )
            tensor = CoefficientTensor(self.space_x, self.space_y, approx)
            got = Stage(index=j_eff, tensor=tensor, bound=self._sup_error(approx), terms=terms)
            self._stages[j_eff] = got
        if j != j_eff:
            return Stage(index=j, tensor=got.tensor, bound=got.bound, terms=got.terms)
        return got

    def difference_terms(self, j: int) -> tuple[ElementaryTensor, ...]:
        if j == 1:
            return self.stage(1).terms
        if j > self.levels:
            return ()
        idx = self._subgrid(j)
        nodes = self.f.grid[idx]
        coarse = self._interpolant(j - 1)
        terms = []
        for k in range(1, idx.shape[0], 2):  # nodes new at level j
            delta = self.f.values[:, idx[k]] - coarse[:, idx[k]]
            terms.append(ElementaryTensor(delta, self._hat(nodes, k)))
        return tuple(terms)


def grid_interpolation_scheme(
    f: GridFunction, inner_norm_kind: str = "euclidean"
) -> GridInterpolationScheme:
    return GridInterpolationScheme(f, inner_norm_kind)


@dataclass(frozen=True)
class StageSolution:
    """Least-squares fit for one dictionary stage."""

    index: int
    atoms_used: int
    coef: np.ndarray
    approx: np.ndarray
    residual: np.ndarray
    residual_value: float
    bound: float


class DictionaryStages:
    """Grows a least-squares fit over a dictionary until stage residuals pass.

    Stage j requires the j-th family seminorm of the residual to drop below
    2^-j; the admitted-atom front only ever grows, so stage approximants are
    nested. Raises ``DictionaryBudgetError`` when the dictionary runs out.
    """

    def __init__(
        self,
        target,
        dictionary,
        family: SeminormFamily,
        atom_budget: int | None = None,
    ):
        from .construct import DictionaryAtom, DictionaryBudgetError

        self._budget_error = DictionaryBudgetError
        self.target = np.asarray(target, dtype=float)
        if self.target.ndim != 1:
            raise ValueError("target must be a vector")
        atoms = []
        for a in dictionary:
            if not isinstance(a, DictionaryAtom):
                raise TypeError("dictionary entries must be DictionaryAtom instances")
            if a.atom.shape != self.target.shape:
                raise DimensionMismatchError(
                    f"atom {a.id} has length {a.atom.shape[0]}, target has "
                    f"{self.target.shape[0]}"
                )
            atoms.append(a)
        self.atoms = tuple(atoms)
        self.family = family
        self.budget = len(atoms) if atom_budget is None else min(atom_budget, len(atoms))
        self._matrix = (
            np.column_stack([a.atom for a in atoms])
            if atoms
            else np.zeros((self.target.shape[0], 0))
        )
        self._fits: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._solutions: dict[int, StageSolution] = {}
        self._front = 0

    def _fit(self, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        got = self._fits.get(d)
        if got is None:
            if d == 0:
                coef = np.zeros(0)
                approx = np.zeros_like(self.target)
            else:
                coef, *_ = np.linalg.lstsq(self._matrix[:, :d], self.target, rcond=None)
                approx = self._matrix[:, :d] @ coef
            got = (coef, approx, self.target - approx)
            self._fits[d] = got
        return got

    def partial_for(self, coef: np.ndarray) -> np.ndarray:
        if coef.shape[0] == 0:
            return np.zeros_like(self.target)
        return self._matrix[:, : coef.shape[0]] @ coef

    def stage_solution(self, j: int) -> StageSolution:
        if j < 1:
            raise ValueError("stages are 1-indexed")
        got = self._solutions.get(j)
        if got is not None:
            return got
        if j > 1:
            self.stage_solution(j - 1)  # keep the front monotone
        bound = 2.0 ** (-j)
        alpha = self.family.at(j)
        d = self._front
        while True:
            coef, approx, residual = self._fit(d)
            r = float(alpha(residual))
            if r <= bound:
                sol = StageSolution(
                    index=j,
                    atoms_used=d,
                    coef=coef,
                    approx=approx,
                    residual=residual,
                    residual_value=r,
                    bound=bound,
                )
                self._front = d
                self._solutions[j] = sol
                return sol
            if d >= self.budget:
                raise self._budget_error(j, r, bound, self.budget)
            d += 1


class DictionaryProjectionScheme(ApproximationScheme):
    """Dictionary least-squares stages viewed as tensors with a 1-dim Y side."""

    kind = "dict"

    def __init__(self, target, dictionary, family: SeminormFamily, atom_budget=None):
        self.stages_impl = DictionaryStages(target, dictionary, family, atom_budget)
        dim = self.stages_impl.target.shape[0]
        cap = max(64, dim)
        self.space_x = SpaceSpec(dim, "euclidean", dim_cap=cap)
        self.space_y = SpaceSpec(1, "linf", dim_cap=cap)

    def _as_tensor(self, vec: np.ndarray) -> CoefficientTensor:
        return CoefficientTensor(self.space_x, self.space_y, vec[:, None])

    def _terms_for(self, coef: np.ndarray) -> tuple[ElementaryTensor, ...]:
        one = np.ones(1)
        atoms = self.stages_impl.atoms
        return tuple(
            ElementaryTensor(float(coef[i]) * atoms[i].atom, one)
            for i in range(coef.shape[0])
            if coef[i] != 0.0
        )

    def stage(self, j: int) -> Stage:
        sol = self.stages_impl.stage_solution(j)
        return Stage(
            index=j,
            tensor=self._as_tensor(sol.approx),
            bound=sol.bound,
            terms=self._terms_for(sol.coef),
        )

    def difference_terms(self, j: int) -> tuple[ElementaryTensor, ...]:
        sol = self.stages_impl.stage_solution(j)
        prev = (
            self.stages_impl.stage_solution(j - 1).coef if j > 1 else np.zeros(0)
        )
        width = max(sol.coef.shape[0], prev.shape[0])
        delta = np.zeros(width)
        delta[: sol.coef.shape[0]] += sol.coef
        delta[: prev.shape[0]] -= prev
        return self._terms_for(delta)


def dictionary_projection_scheme(
    target, dictionary, family: SeminormFamily, atom_budget: int | None = None
) -> DictionaryProjectionScheme:
    return DictionaryProjectionScheme(target, dictionary, family, atom_budget)


class CauchyAdapter(ApproximationScheme):
    """Wraps an externally supplied stage list, validating bounds lazily.

    Each entry is ``(tensor, bound)`` or ``(tensor, bound, terms)``. Bounds
    must be non-increasing and fit a geometric envelope E * ratio^j (default
    E = bound_1 / ratio, so the first stage always fits); a violation raises
    when the offending stage is first requested. Requests past the end repeat
    the final stage if its bound is zero (an exact tail) and fail otherwise.
    """

    kind = "cauchy"

    def __init__(self, stages: Sequence, envelope_scale=None, envelope_ratio: float = 0.5):
        if not stages:
            raise ValueError("at least one stage is required")
        if not (0.0 < envelope_ratio < 1.0):
            raise ValueError("envelope ratio must lie in (0, 1)")
        parsed = []
        for entry in stages:
            tensor, bound = entry[0], float(entry[1])
            terms = tuple(entry[2]) if len(entry) > 2 and entry[2] is not None else None
            parsed.append(Stage(index=len(parsed) + 1, tensor=tensor, bound=bound, terms=terms))
        self._stages = parsed
        self.ratio = envelope_ratio
        self.scale = (
            float(envelope_scale)
            if envelope_scale is not None
            else parsed[0].bound / envelope_ratio if parsed[0].bound > 0.0 else 1.0
        )

    def stage(self, j: int) -> Stage:
        from .construct import SchemeContractError

        if j < 1:
            raise ValueError("stages are 1-indexed")
        if j > len(self._stages):
            last = self._stages[-1]
            if last.bound == 0.0:
                return Stage(index=j, tensor=last.tensor, bound=0.0, terms=last.terms)
            raise SchemeContractError(
                f"stage {j} requested but only {len(self._stages)} stages were supplied"
            )
        st = self._stages[j - 1]
        if not math.isfinite(st.bound) or st.bound < 0.0:
            raise SchemeContractError(f"stage {j} bound {st.bound!r} is invalid")
        if j > 1 and st.bound > self._stages[j - 2].bound * (1.0 + 1e-12):
            raise SchemeContractError(
                f"bounds must be non-increasing; stage {j} went "
                f"{self._stages[j - 2].bound:.6e} -> {st.bound:.6e}"
            )
        if st.bound > self.scale * self.ratio**j * (1.0 + 1e-12):
            raise SchemeContractError(
                f"stage {j} bound {st.bound:.6e} breaks the geometric envelope "
                f"{self.scale:.6e} * {self.ratio}^{j} (non-summable schedule)"
            )
        return st

    def difference_terms(self, j: int):
        if j > len(self._stages) and self._stages[-1].bound == 0.0:
            return ()
        return super().difference_terms(j)


def cauchy_adapter(
    stages: Sequence, envelope_scale=None, envelope_ratio: float = 0.5
) -> CauchyAdapter:
    return CauchyAdapter(stages, envelope_scale, envelope_ratio)
