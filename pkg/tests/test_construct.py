import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tensorseries import (
    CertificateViolationError,
    CoefficientTensor,
    DictionaryAtom,
    DictionaryBudgetError,
    ElementaryTensor,
    MaskedColumnSup,
    Representation,
    SeminormFamily,
    SpaceSpec,
    StopRule,
    absolute_sum,
    cauchy_adapter,
    dense_span_series,
    evaluator_for,
    expand,
    flatten_bounded,
    flatten_seminorm,
    nested_sup_family,
    next_pow2,
    plan_replication,
    prefix,
    projective_absolute,
    svd_truncation_scheme,
    telescope,
)
from tensorseries.construct import SchemeContractError
from conftest import make_representation
from oracles import prefix_norm_loop


def identity_rep():
    e = np.eye(2)
    target = CoefficientTensor.from_array(np.eye(2))
    return Representation((ElementaryTensor(e[0], e[0]), ElementaryTensor(e[1], e[1])), target)


class TestPlanReplication:
    def test_single_term_needs_no_copies(self):
        assert plan_replication(1, 1.0, 1.0, 2.0).n == 1

    def test_identity_example(self):
        # ceil(2 / sqrt(2)) = 2; all four prefixes are checked in TestFlattenBounded
        plan = plan_replication(2, math.sqrt(2.0), 1.0, 2.0)
        assert (plan.n, plan.N) == (2, 4)

    def test_small_norm_large_plan(self):
        plan = plan_replication(3, 0.01, 10.0, 2.0)
        assert plan.n == 3000
        assert (plan.m / plan.n) * 10.0 <= (2.0 - 1.0) * 0.01 + 1e-15

    def test_rejects_zero_norm(self):
        with pytest.raises(ValueError, match="alpha"):
            plan_replication(2, 0.0, 1.0, 2.0)

    def test_rejects_bad_c(self):
        with pytest.raises(ValueError, match="c > 1"):
            plan_replication(2, 1.0, 1.0, 1.0)

    @settings(deadline=None, derandomize=True, max_examples=100)
    @given(
        m=st.integers(1, 50),
        alpha=st.floats(1e-6, 1e3),
        mx=st.floats(0.0, 1e3),
        c=st.floats(1.01, 10.0),
    )
    def test_returned_n_is_smallest_satisfying(self, m, alpha, mx, c):
        plan = plan_replication(m, alpha, mx, c)
        slack = (c - 1.0) * alpha
        assert (m / plan.n) * mx <= slack
        if plan.n > 1:
            assert (m / (plan.n - 1)) * mx > slack

    def test_next_pow2(self):
        assert [next_pow2(k) for k in (1, 2, 3, 4, 5, 3000)] == [1, 2, 4, 4, 8, 4096]


class TestFlattenBounded:
    def test_identity_worked_example(self):
        rep = identity_rep()
        ev = evaluator_for("frobenius", 2, 2)
        flat, cert = flatten_bounded(rep, ev, 2.0)
        assert flat.n_terms == 4 and cert.n_used == 2
        # rows are (e1 x e1)/2, (e2 x e2)/2 twice over
        assert np.array_equal(prefix(flat, 1).coeffs, [[0.5, 0.0], [0.0, 0.0]])
        # frozen prefix norms computed directly from the four partial sums
        expected = [0.5, math.sqrt(0.5), math.sqrt(1.25), math.sqrt(2.0)]
        measured = prefix_norm_loop(flat.terms, ev)
        assert np.allclose(measured, expected, rtol=0, atol=1e-12)
        assert max(measured) <= 2.0 * ev(rep.target)
        assert cert.worst_prefix_ratio == pytest.approx(1.0, abs=1e-12)

    def test_zero_target_cancelling_rep(self):
        e = np.eye(2)
        target = CoefficientTensor.from_array(np.zeros((2, 2)))
        rep = Representation(
            (ElementaryTensor(e[0], e[0]), ElementaryTensor(-e[0], e[0])), target
        )
        ev = evaluator_for("frobenius", 2, 2)
        flat, cert = flatten_bounded(rep, ev, 2.0)
        assert flat.n_terms == 0 and cert.zero_target

    def test_single_term_unchanged_scale(self, rng):
        rep = make_representation(rng, 3, 3, 1)
        for kind in ("frobenius", "spectral", "nuclear", "entrywise_l1", "entrywise_max"):
            flat, cert = flatten_bounded(rep, evaluator_for(kind, 3, 3), 2.0)
            assert flat.n_terms == 1 and cert.n_used == 1
            assert cert.worst_prefix_ratio == pytest.approx(1.0, abs=1e-12)
            assert np.array_equal(flat.terms[0].x, rep.terms[0].x)

    def test_bound_holds_across_kinds(self, rng):
        for i in range(20):
            dx, dy = rng.integers(2, 7, size=2)
            m = int(rng.integers(1, 6))
            rep = make_representation(rng, int(dx), int(dy), m)
            for kind in ("frobenius", "entrywise_l1", "entrywise_max", "spectral", "nuclear"):
                ev = evaluator_for(kind, int(dx), int(dy))
                alpha = ev(rep.target)
                if alpha < 1e-6:
                    continue
                flat, cert = flatten_bounded(rep, ev, 2.0)
                measured = max(prefix_norm_loop(flat.terms, ev))
                assert measured <= 2.0 * alpha * (1 + 1e-9)
                assert cert.worst_prefix_ratio <= 2.0 + 1e-9

    def test_absolute_sum_preserved_exactly(self, rng):
        for _ in range(10):
            rep = make_representation(rng, 4, 5, 3)
            ev = evaluator_for("frobenius", 4, 5)
            flat, _ = flatten_bounded(rep, ev, 1.5)
            assert absolute_sum(flat) == absolute_sum(rep)

    def test_rejects_bad_c(self, rng):
        rep = make_representation(rng, 2, 2, 2)
        with pytest.raises(ValueError, match="c > 1"):
            flatten_bounded(rep, evaluator_for("frobenius", 2, 2), 1.0)

    def test_parametric_c_shrinks_and_grows(self, rng):
        rep = make_representation(rng, 4, 4, 4)
        ev = evaluator_for("frobenius", 4, 4)
        sizes = {}
        for c in (1.1, 1.5, 2.0, 3.0):
            flat, cert = flatten_bounded(rep, ev, c)
            assert max(prefix_norm_loop(flat.terms, ev)) <= c * ev(rep.target) * (1 + 1e-9)
            sizes[c] = cert.n_used
        assert sizes[1.1] >= sizes[1.5] >= sizes[2.0] >= sizes[3.0]


class TestFlattenSeminorm:
    def degenerate(self):
        # seminorm ignores the second column
        return MaskedColumnSup((0,), "euclidean")

    def test_null_space_terms_unchanged(self):
        e = np.eye(2)
        target = CoefficientTensor.from_array(np.outer(e[0], e[1]))
        rep = Representation((ElementaryTensor(e[0], e[1]),), target)
        out = flatten_seminorm(rep, self.degenerate(), eps=0.5)
        assert out is rep

    def test_cancelling_pair_replicated(self):
        e = np.eye(2)
        target = CoefficientTensor.from_array(np.zeros((2, 2)))
        rep = Representation(
            (ElementaryTensor(e[0], e[0]), ElementaryTensor(-e[0], e[0])), target
        )
        sem = self.degenerate()
        out = flatten_seminorm(rep, sem, eps=0.5)
        # term seminorm 1, m = 2, eps = 1/2 -> n = 4, eight terms
        assert out.n_terms == 8
        vals = prefix_norm_loop(out.terms, sem)
        assert max(vals) <= 0.5 + 1e-12
        assert vals[0] == pytest.approx(0.25)

    def test_inverse_square_schedule(self):
        e = np.eye(2)
        target = CoefficientTensor.from_array(np.zeros((2, 2)))
        rep = Representation(
            (ElementaryTensor(e[0], e[0]), ElementaryTensor(-e[0], e[0])), target
        )
        sem = self.degenerate()
        for j in (1, 2, 3, 5):
            eps = 1.0 / (j * j)
            out = flatten_seminorm(rep, sem, eps)
            assert max(prefix_norm_loop(out.terms, sem)) <= eps + 1e-12

    def test_rejects_nonzero_target(self, rng):
        rep = make_representation(rng, 2, 2, 2)
        with pytest.raises(ValueError, match="flatten_bounded"):
            flatten_seminorm(rep, evaluator_for("frobenius", 2, 2), eps=0.5)


class TestProjectiveAbsolute:
    def test_diagonal(self):
        u = CoefficientTensor.from_array(np.diag([3.0, 4.0]))
        rep, cert = projective_absolute(u)
        products = sorted(
            float(np.linalg.norm(t.x)) * float(np.linalg.norm(t.y)) for t in rep.terms
        )
        assert products == pytest.approx([3.0, 4.0], abs=1e-12)
        assert cert.absolute_sum == pytest.approx(7.0, abs=1e-12)
        assert cert.projective_norm == pytest.approx(7.0, abs=1e-12)

    def test_zero(self):
        u = CoefficientTensor.from_array(np.zeros((3, 4)))
        rep, cert = projective_absolute(u)
        assert rep.n_terms == 0 and cert.absolute_sum == 0.0

    def test_random_absolute_sum_vs_nuclear(self, rng):
        nuclear = evaluator_for("nuclear", 5, 5)
        for _ in range(30):
            u = CoefficientTensor.from_array(rng.normal(size=(5, 5)))
            rep, cert = projective_absolute(u)
            assert cert.absolute_sum <= (1 + 1e-9) * nuclear(u)
            assert absolute_sum(rep) == cert.absolute_sum

    def test_rejects_non_euclidean(self):
        u = CoefficientTensor(SpaceSpec(2, "l1"), SpaceSpec(2, "l1"), np.eye(2))
        with pytest.raises(ValueError, match="euclidean"):
            projective_absolute(u)

    def test_delta_truncates(self):
        u = CoefficientTensor.from_array(np.diag([3.0, 1e-12]))
        rep, _ = projective_absolute(u, delta=1e-6)
        assert rep.n_terms == 1


class TestExpand:
    def test_svd_expansion_rank(self, rng):
        u = CoefficientTensor.from_array(np.outer(rng.normal(size=4), rng.normal(size=4)))
        assert expand(u, "svd").n_terms == 1

    def test_basis_expansion_counts_nonzeros(self):
        u = CoefficientTensor.from_array(np.array([[1.0, 0.0], [0.0, 2.0]]))
        rep = expand(u, "basis")
        assert rep.n_terms == 2

    def test_auto_picks_by_space_kind(self, rng):
        a = rng.normal(size=(3, 3))
        eu = CoefficientTensor.from_array(a)
        l1 = CoefficientTensor(SpaceSpec(3, "l1"), SpaceSpec(3, "l1"), a)
        assert expand(eu).n_terms == 3  # svd of a full-rank 3x3
        assert expand(l1).n_terms == 9  # standard basis


class TestTelescope:
    def test_constant_scheme_single_block(self):
        u = CoefficientTensor.from_array(np.diag([1.0, 0.5, 0.25]))
        ev = evaluator_for("spectral", 3, 3)
        stream = telescope(cauchy_adapter([(u, 0.0)]), ev, c=2.0)
        assert stream.n_blocks == 1
        assert stream.final_certified_error == 0.0
        total = np.zeros((3, 3))
        for t in stream.terms:
            total += t.to_matrix()
        assert np.allclose(total, u.coeffs, atol=1e-12)

    def test_svd_truncation_blocks(self):
        u = CoefficientTensor.from_array(np.diag([1.0, 0.5, 0.25]))
        ev = evaluator_for("spectral", 3, 3)
        stream = telescope(svd_truncation_scheme(u, "spectral"), ev, c=2.0)
        assert stream.n_blocks == 3
        assert [b.size for b in stream.blocks] == [1, 1, 1]
        assert [r.stage_bound for r in stream.certificates] == [0.5, 0.25, 0.0]
        assert [b.block_norm for b in stream.blocks] == pytest.approx([1.0, 0.5, 0.25])

    def test_certified_inequality_random(self, rng):
        from tensorseries import convergence_trace

        u = CoefficientTensor.from_array(rng.normal(size=(6, 6)))
        ev = evaluator_for("frobenius", 6, 6)
        stages = []
        for j in range(1, 25):
            bound = 2.0**-j
            noise = rng.normal(size=(6, 6))
            noise *= 0.9 * bound / np.linalg.norm(noise)
            stages.append((u + CoefficientTensor.from_array(noise), bound))
        scheme = cauchy_adapter(stages)
        stream = telescope(scheme, ev, c=2.0, stop=StopRule(certified_error=1e-6), reference=u)
        trace = convergence_trace(stream, u, ev)
        assert trace.worst_excess() <= 1e-9
        assert stream.final_certified_error <= 1e-6

    def test_scheme_lying_about_bounds_caught(self, rng):
        u = CoefficientTensor.from_array(rng.normal(size=(4, 4)))
        far = CoefficientTensor.from_array(rng.normal(size=(4, 4)) + 10.0)
        ev = evaluator_for("frobenius", 4, 4)
        scheme = cauchy_adapter([(far, 0.25), (u, 0.125)], envelope_scale=10.0)
        with pytest.raises(SchemeContractError, match="exceeds its"):
            telescope(scheme, ev, reference=u, envelope_scale=10.0)

    def test_non_summable_schedule_rejected(self, rng):
        u = CoefficientTensor.from_array(rng.normal(size=(3, 3)))
        stages = [(u, 1.0 / j) for j in range(1, 30)]
        ev = evaluator_for("frobenius", 3, 3)
        with pytest.raises(SchemeContractError, match="envelope"):
            telescope(cauchy_adapter(stages), ev, stop=StopRule(certified_error=1e-3))

    def test_stop_by_blocks_and_terms(self, rng):
        u = CoefficientTensor.from_array(rng.normal(size=(5, 5)))
        ev = evaluator_for("frobenius", 5, 5)
        scheme = svd_truncation_scheme(u, "nuclear")
        # nuclear tail sums start above the default envelope; widen it
        s1 = telescope(scheme, ev, envelope_scale=20.0,
                       stop=StopRule(certified_error=None, max_blocks=2))
        assert s1.n_blocks == 2
        s2 = telescope(scheme, ev, envelope_scale=20.0,
                       stop=StopRule(certified_error=None, max_terms=1))
        assert s2.n_terms >= 1

    def test_seminorm_family_fallback_uses_inverse_squares(self):
        # stages agree on the masked columns but wobble elsewhere, so every
        # difference is seminorm-null yet carries cancelling terms
        sem = MaskedColumnSup((0, 1), "euclidean")
        family = SeminormFamily([sem] * 6)
        base = np.zeros((2, 4))
        base[:, 0] = [1.0, 2.0]
        e = np.eye(2)
        f3 = np.array([0.0, 0.0, 0.0, 1.0])
        target = CoefficientTensor.from_array(base)

        stages = []
        for j in range(1, 6):
            junk = ElementaryTensor(e[0], (1.0 / j) * f3)
            stage_terms = (
                ElementaryTensor(np.array([1.0, 2.0]), np.array([1.0, 0.0, 0.0, 0.0])),
                junk,
                junk.negated(),
            )
            stages.append((target, 2.0**-j, stage_terms))
        stream = telescope(
            cauchy_adapter(stages), family, c=2.0, stop=StopRule(certified_error=None, max_blocks=5)
        )
        for rec, block in zip(stream.certificates, stream.blocks):
            if rec.index == 1:
                continue
            assert rec.fallback_eps == pytest.approx(1.0 / rec.index**2)
            block_terms = stream.terms[block.start : block.stop]
            if block_terms:
                vals = prefix_norm_loop(block_terms, sem)
                assert max(vals) <= rec.fallback_eps + 1e-12


class TestDenseSpanSeries:
    def test_target_in_dictionary(self):
        e = np.eye(10)
        atoms = [DictionaryAtom(e[i], i) for i in range(10)]
        family = SeminormFamily([lambda v: float(np.max(np.abs(v)))])
        stream = dense_span_series(e[5], atoms, family, c=2.0, tol=1e-6)
        assert [(t.lam, t.atom_id) for t in stream.terms] == [(1.0, 5)]

    def test_zero_target(self):
        e = np.eye(4)
        atoms = [DictionaryAtom(e[i], i) for i in range(4)]
        family = SeminormFamily([lambda v: float(np.max(np.abs(v)))])
        stream = dense_span_series(np.zeros(4), atoms, family, tol=1e-6)
        assert stream.n_terms == 0

    def test_exp_over_monomials(self):
        t = np.linspace(0.0, 1.0, 33)
        atoms = [DictionaryAtom(t**k, k) for k in range(13)]
        family = nested_sup_family(33)
        stream = dense_span_series(np.exp(t), atoms, family, c=2.0, tol=1e-4)
        finest = family.at(len(family))
        resid = finest(stream.partial_sum(stream.n_terms) - np.exp(t))
        assert resid <= 1e-4
        # stage residual certificates honor their 2^-j bounds
        for s in stream.stages:
            assert s.residual <= s.bound + 1e-15

    def test_budget_failure_names_stage_and_residual(self):
        t = np.linspace(0.0, 1.0, 9)
        atoms = [DictionaryAtom(t**k, k) for k in range(2)]  # too poor for exp
        family = nested_sup_family(9)
        with pytest.raises(DictionaryBudgetError) as err:
            dense_span_series(np.exp(t), atoms, family, tol=1e-8)
        assert err.value.stage >= 1
        assert err.value.residual > 0.0
        assert "residual" in str(err.value)

    def test_partial_sums_certified_at_boundaries(self):
        t = np.linspace(0.0, 1.0, 17)
        atoms = [DictionaryAtom(t**k, k) for k in range(8)]
        family = nested_sup_family(17)
        target = np.sin(2 * t)
        stream = dense_span_series(target, atoms, family, c=2.0, tol=1e-5)
        boundary = 0
        for block, stage in zip(stream.blocks, stream.stages):
            boundary = block.stop
            alpha = family.at(stage.index)
            err = float(alpha(stream.partial_sum(boundary) - target))
            assert err <= stage.bound + 1e-12

    def test_determinism(self):
        t = np.linspace(0.0, 1.0, 17)
        atoms = [DictionaryAtom(t**k, k) for k in range(8)]
        family = nested_sup_family(17)
        s1 = dense_span_series(np.exp(t), atoms, family, tol=1e-4)
        s2 = dense_span_series(np.exp(t), atoms, family, tol=1e-4)
        assert [(a.lam, a.atom_id) for a in s1.terms] == [(a.lam, a.atom_id) for a in s2.terms]
