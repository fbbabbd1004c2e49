import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_table
from mrchain.errors import ConvergenceError, DataError
from mrchain.mlogit import (
    build_link,
    conditional_contrast,
    eta_from_p,
    invert_link,
    lemma2_betas,
    link_jacobian,
    p_from_eta,
)
from mrchain.tables import CellLattice, ProbabilityTable, marginalize, subsets
from oracles import conditional_contrast_by_formula, eta_by_formula


def lattice(*levels):
    return CellLattice(tuple(range(1, len(levels) + 1)), levels)


def ptable(values, shape):
    return ProbabilityTable(lattice(*shape), values)


class TestBuildLink:
    def test_2x3_dimension(self):
        link = build_link(lattice(2, 3))
        assert link.dim == 5
        assert link.margins == ((1,), (2,), (1, 2))
        assert link.M.shape == (2 + 3 + 6, 6)

    def test_single_binary_variable(self):
        link = build_link(lattice(2))
        np.testing.assert_array_equal(link.C, [[-1, 1]])
        np.testing.assert_array_equal(link.M, np.eye(2))

    def test_2x2x2_margins(self):
        link = build_link(lattice(2, 2, 2))
        assert link.dim == 7
        assert link.margins == ((1,), (2,), (3,), (1, 2), (1, 3), (2, 3), (1, 2, 3))

    @pytest.mark.parametrize("shape", [(2,), (3,), (2, 2), (2, 3), (3, 3), (2, 2, 3), (2, 3, 2, 2)])
    def test_dimension_formula(self, shape):
        link = build_link(lattice(*shape))
        assert link.dim == int(np.prod(shape)) - 1
        assert sum(s.stop - s.start for s in link.slices.values()) == link.dim
        assert len(link.row_labels) == link.dim


class TestForward:
    def test_uniform_gives_zero(self):
        link = build_link(lattice(2, 3, 2))
        np.testing.assert_allclose(eta_from_p(link, np.full(12, 1 / 12)), 0.0, atol=1e-14)

    def test_2x3_formulas(self, rng):
        values = random_table(rng, (2, 3))
        eta = build_link(lattice(2, 3)).blocks(eta_from_p(build_link(lattice(2, 3)), ptable(values, (2, 3))))
        rows, cols = values.sum(axis=1), values.sum(axis=0)
        assert eta[(1,)][0] == pytest.approx(math.log(rows[1] / rows[0]))
        np.testing.assert_allclose(eta[(2,)], np.log(cols[1:] / cols[0]))
        p = values
        np.testing.assert_allclose(
            eta[(1, 2)], [math.log(p[0, 0] * p[1, j] / (p[1, 0] * p[0, j])) for j in (1, 2)]
        )

    def test_log_six(self):
        link = build_link(lattice(2, 2))
        eta = eta_from_p(link, [0.4, 0.1, 0.2, 0.3])
        assert eta[2] == pytest.approx(math.log(6), abs=1e-14)

    @pytest.mark.parametrize("shape", [(2, 2), (3, 2), (2, 2, 2), (2, 3, 3)])
    def test_matches_explicit_formula(self, rng, shape):
        link = build_link(lattice(*shape))
        for _ in range(10):
            values = random_table(rng, shape)
            np.testing.assert_allclose(eta_from_p(link, values.ravel()), eta_by_formula(values), atol=1e-12)

    def test_batch_input(self, rng):
        link = build_link(lattice(2, 3))
        batch = np.stack([random_table(rng, (2, 3)).ravel() for _ in range(4)])
        out = eta_from_p(link, batch)
        assert out.shape == (4, 5)
        np.testing.assert_allclose(out[2], eta_from_p(link, batch[2]))

    def test_upward_compatibility(self, rng):
        shape = (2, 3, 2)
        full = build_link(lattice(*shape))
        for _ in range(10):
            p = ptable(random_table(rng, shape), shape)
            eta_full = full.blocks(eta_from_p(full, p))
            for a in subsets((1, 2, 3), min_size=1):
                sub = build_link(p.lattice.sub(a))
                eta_sub = sub.blocks(eta_from_p(sub, marginalize(p, a)))
                np.testing.assert_allclose(eta_sub[a], eta_full[a], rtol=0, atol=1e-14)

    def test_rejects_zero_margin(self):
        with pytest.raises(DataError):
            eta_from_p(build_link(lattice(2, 2)), [0.5, 0.5, 0.0, 0.0])

    def test_jacobian_matches_finite_differences(self, rng):
        for shape in [(2, 2), (2, 3), (2, 2, 2)]:
            link = build_link(lattice(*shape))
            for p in [np.full(int(np.prod(shape)), 1 / np.prod(shape)), random_table(rng, shape).ravel()]:
                jac = link_jacobian(link, p)
                h = 1e-6
                fd = np.column_stack(
                    [(eta_from_p(link, p + h * e) - eta_from_p(link, p - h * e)) / (2 * h) for e in np.eye(p.size)]
                )
                assert np.abs(jac - fd).max() / np.abs(jac).max() < 1e-6
            # restricted to the simplex the map is locally invertible
            centred = jac @ (np.eye(p.size) - 1.0 / p.size)
            assert np.linalg.matrix_rank(centred) == link.dim


class TestInverse:
    def test_zero_gives_uniform(self):
        p = p_from_eta(build_link(lattice(2, 3)), np.zeros(5))
        np.testing.assert_allclose(p.values, 1 / 6, atol=1e-12)

    def test_single_row_logit(self):
        link = build_link(lattice(2, 3))
        eta = np.zeros(5)
        eta[0] = math.log(2)
        p = p_from_eta(link, eta)
        np.testing.assert_allclose(p.values, [[1 / 9] * 3, [2 / 9] * 3], atol=1e-12)
        np.testing.assert_allclose(eta_from_p(link, p), eta, atol=1e-12)

    @pytest.mark.parametrize("shape", [(2, 2), (2, 3), (2, 2, 2), (2, 2, 3)])
    def test_round_trip_from_tables(self, rng, shape):
        link = build_link(lattice(*shape))
        for _ in range(100):
            values = rng.dirichlet(np.ones(int(np.prod(shape))))
            back, _ = invert_link(link, eta_from_p(link, values))
            np.testing.assert_allclose(back, values, rtol=0, atol=1e-9)

    def test_round_trip_from_eta_2x2(self, rng):
        # for 2x2 tables any eta is attainable
        link = build_link(lattice(2, 2))
        for _ in range(200):
            eta = rng.uniform(-3, 3, 3)
            p, _ = invert_link(link, eta)
            np.testing.assert_allclose(eta_from_p(link, p), eta, atol=1e-9)

    def test_extreme_eta_rejected(self):
        with pytest.raises(ConvergenceError, match="exceeds"):
            invert_link(build_link(lattice(2, 2)), np.array([31.0, 0, 0]))

    def test_bad_shape(self):
        with pytest.raises(DataError):
            invert_link(build_link(lattice(2, 2)), np.zeros(4))
        with pytest.raises(DataError):
            invert_link(build_link(lattice(2, 2)), np.array([np.nan, 0, 0]))

    def test_infeasible_eta_reports_non_convergence(self):
        # no 2x2x2 table attains this eta: a multi-start least-squares search over the
        # simplex leaves a max-norm residual of about 0.2
        link = build_link(lattice(2, 2, 2))
        eta = np.array([-0.5, 1.4, 1.3, 2.6, -2.3, 1.4, 2.6])
        with pytest.raises(ConvergenceError) as info:
            invert_link(link, eta)
        assert info.value.module == "mlogit"


@settings(max_examples=60, deadline=None)
@given(
    shape=st.sampled_from([(2,), (3,), (2, 2), (2, 3), (3, 2), (2, 2, 2)]),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip_property(shape, seed):
    rng = np.random.default_rng(seed)
    link = build_link(lattice(*shape))
    values = random_table(rng, shape, floor=1e-3).ravel()
    eta = eta_from_p(link, values)
    back, _ = invert_link(link, eta)
    np.testing.assert_allclose(back, values, atol=1e-9)
    np.testing.assert_allclose(eta_from_p(link, back), eta, atol=1e-9)


class TestConditionalDecomposition:
    def _check(self, p, a, b):
        betas = lemma2_betas(p, a, b)
        cond = conditional_contrast(p, a, b)
        levels = p.lattice.levels_of(b)
        for i_b in np.ndindex(*levels):
            total = np.zeros(cond.shape[len(b):])
            for bs, beta in betas.items():
                pos = [b.index(v) for v in bs]
                if any(i_b[k] == 0 for k in pos):
                    continue
                index = (slice(None),) * len(a) + tuple(i_b[k] - 1 for k in pos)
                total = total + beta[index]
            assert np.abs(total - cond[i_b]).max() < 1e-10

    def test_empty_conditioning(self, rng):
        p = ptable(random_table(rng, (2, 3)), (2, 3))
        betas = lemma2_betas(p, (1, 2), ())
        link = build_link(p.lattice)
        np.testing.assert_allclose(betas[()].ravel(), eta_from_p(link, p)[link.slices[(1, 2)]], atol=1e-13)

    def test_product_table_kills_covariate_terms(self, rng):
        values = np.multiply.outer(random_table(rng, (2, 2)), random_table(rng, (3,)))
        p = ptable(values, (2, 2, 3))
        for bs, beta in lemma2_betas(p, (1, 2), (3,)).items():
            if bs:
                np.testing.assert_allclose(beta, 0.0, atol=1e-13)

    def test_2x2x2_against_direct_conditionals(self, rng):
        values = random_table(rng, (2, 2, 2))
        p = ptable(values, (2, 2, 2))
        cond = conditional_contrast(p, (1,), (2, 3))
        for i_b in np.ndindex(2, 2):
            expected = conditional_contrast_by_formula(values, (0,), (1, 2), i_b, (1,))
            assert cond[i_b][0] == pytest.approx(expected, abs=1e-12)
        self._check(p, (1,), (2, 3))

    def test_random_tables(self, rng):
        shapes = [(2, 2, 2), (2, 2, 3, 2), (3, 2, 2), (2, 3, 2)]
        for k in range(200):
            shape = shapes[k % len(shapes)]
            p = ptable(random_table(rng, shape), shape)
            variables = p.lattice.variables
            a = variables[: 1 + k % 2]
            self._check(p, a, variables[len(a):])

    def test_overlap_is_an_error(self, rng):
        p = ptable(random_table(rng, (2, 2)), (2, 2))
        with pytest.raises(DataError):
            lemma2_betas(p, (1,), (1, 2))
