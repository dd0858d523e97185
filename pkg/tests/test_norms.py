import math

import numpy as np
import pytest

from tensorseries import (
    CoefficientTensor,
    DimensionMismatchError,
    MaskedAbsSup,
    MaskedColumnSup,
    NormEvaluator,
    SeminormFamily,
    SpaceSpec,
    crossnorm_check,
    default_spaces,
    eval_norm,
    evaluator_for,
    nested_column_sup_family,
    nested_sup_family,
    vector_norm,
)
from tensorseries.norms import NORM_KINDS, cumulative_norms
from oracles import (
    exhaustive_injective_l1l1,
    jacobi_singular_values,
    prefix_norm_loop,
    sampled_injective_lower_bound,
)


class TestVectorNorm:
    def test_euclidean(self):
        assert vector_norm(SpaceSpec(2, "euclidean"), [3.0, 4.0]) == 5.0

    def test_l1(self):
        assert vector_norm(SpaceSpec(3, "l1"), [1.0, -2.0, 3.0]) == 6.0

    def test_linf(self):
        assert vector_norm(SpaceSpec(3, "linf"), [1.0, -2.0, 3.0]) == 3.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            vector_norm(SpaceSpec(3), [1.0, 2.0])

    def test_power_of_two_scaling_is_exact(self, rng):
        for kind in ("euclidean", "l1", "linf"):
            spec = SpaceSpec(7, kind)
            v = rng.normal(size=7)
            for n in (2, 8, 64):
                assert vector_norm(spec, v / n) == vector_norm(spec, v) / n


class TestEvalNormExamples:
    def test_frobenius(self):
        assert eval_norm(evaluator_for("frobenius", 2, 2), [[3.0, 4.0], [0.0, 0.0]]) == 5.0

    def test_spectral_nuclear_diagonal(self):
        d = np.diag([3.0, 4.0])
        assert evaluator_for("spectral", 2, 2)(d) == pytest.approx(4.0, abs=1e-12)
        assert evaluator_for("nuclear", 2, 2)(d) == pytest.approx(7.0, abs=1e-12)

    def test_entrywise(self):
        u = [[1.0, -2.0], [0.5, 0.0]]
        assert evaluator_for("entrywise_l1", 2, 2)(u) == 3.5
        assert evaluator_for("entrywise_max", 2, 2)(u) == 2.0

    def test_injective_l1l1_example(self):
        # frozen from the exhaustive two-sided enumeration oracle
        u = np.array([[1.0, 1.0], [1.0, -1.0]])
        assert exhaustive_injective_l1l1(u) == 2.0
        assert evaluator_for("injective_l1l1", 2, 2)(u) == 2.0

    def test_grid_sup_is_max_column_norm(self):
        u = np.array([[3.0, 0.0, 1.0], [4.0, 2.0, 1.0]])
        assert evaluator_for("grid_sup", 2, 3)(u) == 5.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            evaluator_for("frobenius", 2, 2)(np.zeros((3, 2)))

    def test_injective_dim_cap(self):
        with pytest.raises(ValueError, match="cap"):
            evaluator_for("injective_l1l1", 2, 21)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown norm kind"):
            NormEvaluator("l2", SpaceSpec(2), SpaceSpec(2))


def _sample_kinds(dx, dy):
    for kind in NORM_KINDS:
        if kind == "injective_l1l1" and dy > 6:
            continue
        yield evaluator_for(kind, dx, dy)


class TestNormAxioms:
    def test_homogeneity_and_triangle(self, rng):
        for ev in _sample_kinds(5, 6):
            for _ in range(200):
                u = rng.normal(size=(5, 6))
                v = rng.normal(size=(5, 6))
                lam = rng.normal()
                scale = ev(u) + ev(v) + 1.0
                assert abs(ev(lam * u) - abs(lam) * ev(u)) <= 1e-10 * scale
                assert ev(u + v) <= ev(u) + ev(v) + 1e-10 * scale

    def test_definiteness(self, rng):
        for ev in _sample_kinds(4, 4):
            assert ev(np.zeros((4, 4))) == 0.0
            assert ev(rng.normal(size=(4, 4))) > 0.0

    def test_spectral_frobenius_nuclear_ordering(self, rng):
        spectral = evaluator_for("spectral", 6, 5)
        frob = evaluator_for("frobenius", 6, 5)
        nuclear = evaluator_for("nuclear", 6, 5)
        for _ in range(200):
            u = rng.normal(size=(6, 5))
            s, f, n = spectral(u), frob(u), nuclear(u)
            assert s <= f * (1 + 1e-12) and f <= n * (1 + 1e-12)


class TestSvdNormsAgainstJacobiOracle:
    def test_spectral_nuclear_match_oracle(self, rng):
        for _ in range(60):
            r = int(rng.integers(1, 17))
            c = int(rng.integers(1, 17))
            u = rng.normal(size=(r, c))
            svals = jacobi_singular_values(u)
            scale = 1.0 + svals[0]
            assert abs(evaluator_for("spectral", r, c)(u) - svals[0]) <= 1e-10 * scale
            assert abs(evaluator_for("nuclear", r, c)(u) - svals.sum()) <= 1e-10 * scale


class TestInjectiveEnumeration:
    def test_matches_exhaustive_two_sided(self, rng):
        for _ in range(40):
            r = int(rng.integers(1, 5))
            c = int(rng.integers(1, 5))
            u = rng.normal(size=(r, c))
            mine = evaluator_for("injective_l1l1", r, c)(u)
            assert mine == pytest.approx(exhaustive_injective_l1l1(u), rel=1e-12)

    def test_dominates_random_sampling(self, rng):
        for i in range(10):
            u = rng.normal(size=(6, 6))
            mine = evaluator_for("injective_l1l1", 6, 6)(u)
            lower = sampled_injective_lower_bound(u, samples=2000, seed=i)
            assert mine >= lower - 1e-12


class TestCrossnorm:
    def test_spectral_unit_pair(self):
        rep = crossnorm_check(evaluator_for("spectral", 2, 2), [1.0, 0.0], [0.0, 1.0])
        assert rep.defect == 0.0

    def test_entrywise_l1_signs(self):
        rep = crossnorm_check(evaluator_for("entrywise_l1", 2, 2), [1.0, 1.0], [1.0, -1.0])
        assert rep.value == 4.0 and rep.product == 4.0 and rep.defect == 0.0

    def test_nuclear_random_unit(self, rng):
        ev = evaluator_for("nuclear", 5, 4)
        for _ in range(50):
            x = rng.normal(size=5)
            y = rng.normal(size=4)
            x /= np.linalg.norm(x)
            y /= np.linalg.norm(y)
            assert crossnorm_check(ev, x, y).defect <= 1e-10

    def test_all_crossnorm_kinds_sampled(self, rng):
        for kind in ("spectral", "nuclear", "entrywise_l1", "injective_l1l1"):
            ev = evaluator_for(kind, 4, 4)
            for _ in range(50):
                x = rng.normal(size=4)
                y = rng.normal(size=4)
                rep = crossnorm_check(ev, x, y)
                assert rep.defect <= 1e-10 * (1.0 + rep.product)

    def test_rejects_non_crossnorm_kind(self):
        with pytest.raises(ValueError, match="crossnorm"):
            crossnorm_check(evaluator_for("frobenius", 2, 2), [1.0, 0.0], [1.0, 0.0])


class TestBatchEval:
    def test_eval_many_matches_single(self, rng):
        stack = rng.normal(size=(7, 4, 5))
        for ev in _sample_kinds(4, 5):
            batch = ev.eval_many(stack)
            singles = [ev(stack[i]) for i in range(7)]
            assert np.allclose(batch, singles, rtol=0, atol=1e-13)

    def test_cumulative_matches_loop(self, rng):
        from tensorseries import ElementaryTensor

        xs = rng.normal(size=(20, 3))
        ys = rng.normal(size=(20, 4))
        terms = [ElementaryTensor(x, y) for x, y in zip(xs, ys)]
        for ev in _sample_kinds(3, 4):
            fast = cumulative_norms(ev, xs, ys, chunk=7)
            slow = prefix_norm_loop(terms, ev)
            assert np.allclose(fast, slow, rtol=0, atol=1e-11)


class TestSeminorms:
    def test_masked_column_sup_degenerate(self):
        sem = MaskedColumnSup((0, 1), "euclidean")
        u = np.zeros((2, 4))
        u[:, 3] = 7.0
        assert sem(u) == 0.0
        u[0, 1] = 3.0
        u[1, 1] = 4.0
        assert sem(u) == 5.0

    def test_masked_abs_sup(self):
        sem = MaskedAbsSup((0, 2))
        assert sem(np.array([1.0, 9.0, -3.0])) == 3.0

    def test_nested_families_monotone(self, rng):
        fam = nested_sup_family(17)
        samples = rng.normal(size=(50, 17))
        assert fam.check_monotone(samples) <= 0.0
        fam2 = nested_column_sup_family(9)
        samples2 = rng.normal(size=(50, 3, 9))
        assert fam2.check_monotone(samples2) <= 0.0

    def test_at_clamps(self):
        fam = nested_sup_family(5)
        assert fam.at(1) is fam.members[0]
        assert fam.at(99) is fam.members[-1]
        with pytest.raises(ValueError):
            fam.at(0)

    def test_dyadic_levels_reject_bad_sizes(self):
        with pytest.raises(ValueError):
            nested_sup_family(6)

    def test_empty_family_rejected(self):
        with pytest.raises(ValueError):
            SeminormFamily([])


class TestDefaultSpaces:
    def test_pairings(self):
        sx, sy = default_spaces("entrywise_l1", 2, 3)
        assert (sx.vector_norm_kind, sy.vector_norm_kind) == ("l1", "l1")
        sx, sy = default_spaces("grid_sup", 2, 257)
        assert (sx.vector_norm_kind, sy.vector_norm_kind) == ("euclidean", "linf")
        assert sy.dim == 257  # cap widened to fit

    def test_crossnorm_under_default_pairing(self, rng):
        # entrywise_max with linf spaces is also multiplicative on outer products
        ev = evaluator_for("entrywise_max", 3, 3)
        x = rng.normal(size=3)
        y = rng.normal(size=3)
        prod = vector_norm(ev.space_x, x) * vector_norm(ev.space_y, y)
        assert ev(np.outer(x, y)) == pytest.approx(prod, rel=1e-12)
