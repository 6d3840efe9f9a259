import numpy as np
from django.test import SimpleTestCase, override_settings

from .problem import GE, LE, EQ, LinearProgram, LPBuilder, LPStatus, solve_lp
from .simplex import dense_simplex

BACKENDS = ('highs', 'simplex')


class SolveLPTests(SimpleTestCase):
    """Small programs solved on both backends."""

    def test_bounded_maximum(self):
        for backend in BACKENDS:
            with self.subTest(backend=backend):
                lp = LinearProgram(objective=[1.0], sense='max', matrix=[[1.0]], relations=[LE], rhs=[3.0])
                result = solve_lp(lp, backend=backend)
                self.assertEqual(result.status, LPStatus.OPTIMAL)
                self.assertAlmostEqual(result.x[0], 3.0, places=9)
                self.assertAlmostEqual(result.objective, 3.0, places=9)

    def test_infeasible(self):
        for backend in BACKENDS:
            with self.subTest(backend=backend):
                lp = LinearProgram(
                    objective=[1.0], sense='max', matrix=[[1.0], [1.0]],
                    relations=[GE, LE], rhs=[1.0, 0.0], lower=[-np.inf],
                )
                self.assertEqual(solve_lp(lp, backend=backend).status, LPStatus.INFEASIBLE)

    def test_degenerate_optimum(self):
        for backend in BACKENDS:
            with self.subTest(backend=backend):
                builder = LPBuilder()
                x = builder.add_variables(2, cost=1.0)
                builder.add_row(x, [1.0, 1.0], LE, 1.0)
                result = solve_lp(builder.build(sense='max'), backend=backend)
                self.assertTrue(result.optimal)
                self.assertAlmostEqual(result.objective, 1.0, places=9)
                self.assertAlmostEqual(result.x.sum(), 1.0, places=9)

    def test_unbounded(self):
        for backend in BACKENDS:
            with self.subTest(backend=backend):
                lp = LinearProgram(objective=[1.0, 0.0], sense='max', matrix=[[0.0, 1.0]], relations=[LE], rhs=[1.0])
                self.assertEqual(solve_lp(lp, backend=backend).status, LPStatus.UNBOUNDED)

    def test_free_and_bounded_variables(self):
        # min x - y  s.t. x + y == 2, x free, -1 <= y <= 4
        for backend in BACKENDS:
            with self.subTest(backend=backend):
                lp = LinearProgram(
                    objective=[1.0, -1.0], matrix=[[1.0, 1.0]], relations=[EQ], rhs=[2.0],
                    lower=[-np.inf, -1.0], upper=[np.inf, 4.0],
                )
                result = solve_lp(lp, backend=backend)
                self.assertTrue(result.optimal)
                self.assertAlmostEqual(result.x[0], -2.0, places=8)
                self.assertAlmostEqual(result.x[1], 4.0, places=8)
                self.assertAlmostEqual(result.objective, -6.0, places=8)

    def test_resolve_is_deterministic(self):
        builder = LPBuilder()
        x = builder.add_variables(3, upper=[2.0, 3.0, 1.0], cost=[2.0, 1.0, 3.0])
        builder.add_row(x, [1.0, 1.0, 1.0], LE, 4.0)
        builder.add_row(x[:2], [1.0, -1.0], GE, -1.0)
        lp = builder.build(sense='max')
        first = solve_lp(lp, backend='simplex')
        second = solve_lp(lp, backend='simplex')
        self.assertAlmostEqual(first.objective, second.objective, places=9)
        self.assertAlmostEqual(first.objective, solve_lp(lp, backend='highs').objective, places=7)

    @override_settings(BATTOPF_LP_BACKEND='simplex')
    def test_backend_from_settings(self):
        lp = LinearProgram(objective=[1.0], sense='max', matrix=[[2.0]], relations=[LE], rhs=[3.0])
        self.assertEqual(solve_lp(lp).message, 'dense simplex optimal')

    def test_unknown_backend(self):
        lp = LinearProgram(objective=[1.0], matrix=[[1.0]], relations=[LE], rhs=[1.0])
        with self.assertRaises(ValueError):
            solve_lp(lp, backend='cplex')


class LinearProgramValidationTests(SimpleTestCase):

    def test_rejects_nonfinite_coefficients(self):
        with self.assertRaises(ValueError):
            LinearProgram(objective=[np.nan], matrix=[[1.0]], relations=[LE], rhs=[1.0])

    def test_rejects_mismatched_rows(self):
        with self.assertRaises(ValueError):
            LinearProgram(objective=[1.0], matrix=[[1.0]], relations=[LE, LE], rhs=[1.0])

    def test_residual_reports_worst_row(self):
        lp = LinearProgram(objective=[1.0], matrix=[[1.0]], relations=[LE], rhs=[1.0])
        self.assertAlmostEqual(lp.residual(np.array([1.5])), 0.5)
        self.assertEqual(lp.residual(np.array([0.5])), 0.0)


class DenseSimplexTests(SimpleTestCase):

    def test_crossed_bounds_are_infeasible(self):
        status, x = dense_simplex(np.ones(1), None, None, None, None, np.array([2.0]), np.array([1.0]))
        self.assertEqual(status, LPStatus.INFEASIBLE)
        self.assertIsNone(x)

    def test_redundant_equalities(self):
        a_eq = np.array([[1.0, 1.0], [2.0, 2.0]])
        status, x = dense_simplex(np.array([1.0, 2.0]), None, None, a_eq, np.array([1.0, 2.0]),
                                  np.zeros(2), np.full(2, np.inf))
        self.assertEqual(status, LPStatus.OPTIMAL)
        np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-9)
