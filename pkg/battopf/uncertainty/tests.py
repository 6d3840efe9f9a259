import numpy as np
from django.test import SimpleTestCase

from battopf.exceptions import DimensionError, UncertaintyModelError
from .concentration import ConcentrationModel, from_budgets, membership
from .sampling import _interior_start, sample_deviation


def case9_model():
    """w4 <= 0, w8 <= 0, |w4| <= 50, |w8| <= 100, 2|w4| + |w8| <= 100."""
    return ConcentrationModel(
        k_plus=[[1, 0], [0, 1], [0, 0], [0, 0], [0, 0]],
        k_minus=[[0, 0], [0, 0], [1, 0], [0, 1], [2, 1]],
        b=[0, 0, 50, 100, 100],
        renewables=2,
        periods=1,
    )


def random_model(rng, renewables=2, periods=2, rows=5):
    dim = renewables * periods
    k_plus = rng.uniform(0.0, 1.0, (rows, dim)) * (rng.uniform(size=(rows, dim)) < 0.6)
    k_minus = rng.uniform(0.0, 1.0, (rows, dim)) * (rng.uniform(size=(rows, dim)) < 0.6)
    box = np.eye(dim)
    return ConcentrationModel(
        np.vstack([k_plus, box, np.zeros((dim, dim))]),
        np.vstack([k_minus, np.zeros((dim, dim)), box]),
        np.concatenate([rng.uniform(5.0, 20.0, rows), np.full(2 * dim, 10.0)]),
        renewables,
        periods,
    )


class MembershipTests(SimpleTestCase):

    def test_origin_is_inside(self):
        self.assertTrue(membership(case9_model(), [0.0, 0.0]).inside)

    def test_case9_points(self):
        model = case9_model()
        self.assertTrue(membership(model, [0.0, -100.0]).inside)
        result = membership(model, [-50.0, -100.0])
        self.assertFalse(result.inside)
        self.assertAlmostEqual(result.slack[-1], -100.0)
        self.assertFalse(membership(model, [1.0, 0.0]).inside)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            membership(case9_model(), [0.0, 0.0, 0.0])

    def test_rejects_negative_entries(self):
        with self.assertRaisesMessage(UncertaintyModelError, 'concentration model requires nonnegative matrices'):
            ConcentrationModel([[1.0]], [[-1.0]], [1.0], 1, 1)

    def test_rejects_negative_rhs(self):
        with self.assertRaises(UncertaintyModelError):
            ConcentrationModel([[1.0]], [[1.0]], [-1.0], 1, 1)

    def test_magnitude_down_closure(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            model = random_model(rng)
            for _ in range(50):
                w = rng.uniform(-10.0, 10.0, model.dimension)
                if not model.membership(w).inside:
                    continue
                shrunk = w * rng.uniform(0.0, 1.0, model.dimension)
                self.assertTrue(model.membership(shrunk).inside)

    def test_orthant_polytope_agrees_with_membership(self):
        rng = np.random.default_rng(9)
        model = random_model(rng)
        for _ in range(200):
            signs = rng.choice([-1.0, 1.0], model.dimension)
            magnitudes = rng.uniform(0.0, 10.0, model.dimension)
            w = signs * magnitudes
            polytope = bool(np.all(model.orthant_matrix(signs) @ magnitudes <= model.b + 1e-9))
            self.assertEqual(polytope, model.membership(w).inside)

    def test_coordinate_bounds(self):
        upper, lower = case9_model().coordinate_bounds()
        np.testing.assert_allclose(upper, [0.0, 0.0])
        np.testing.assert_allclose(lower, [50.0, 100.0])

    def test_dict_round_trip(self):
        model = case9_model()
        self.assertEqual(ConcentrationModel.from_dict(model.to_dict(), 2, 1), model)


class BudgetTests(SimpleTestCase):

    def test_single_coordinate(self):
        model = from_budgets([[10.0]], [1.0])
        self.assertTrue(model.membership([10.0]).inside)
        self.assertTrue(model.membership([-10.0]).inside)
        self.assertFalse(model.membership([10.5]).inside)
        self.assertFalse(model.membership([-10.5]).inside)

    def test_budget_binds(self):
        model = from_budgets([[10.0], [10.0]], [1.0])
        self.assertFalse(model.membership([10.0, 10.0]).inside)
        self.assertTrue(model.membership([5.0, 5.0]).inside)
        self.assertTrue(model.membership([5.0, -5.0]).inside)

    def test_rejects_nonpositive_parameters(self):
        with self.assertRaises(UncertaintyModelError):
            from_budgets([[0.0]], [1.0])
        with self.assertRaises(UncertaintyModelError):
            from_budgets([[1.0]], [0.0])

    def test_matches_direct_evaluation(self):
        rng = np.random.default_rng(21)
        gamma = rng.uniform(5.0, 15.0, (3, 2))
        big_gamma = np.array([1.5, 2.0])
        model = from_budgets(gamma, big_gamma)
        points = rng.uniform(-15.0, 15.0, (100000, 3, 2))
        for w in points[:2000]:
            direct = bool(np.all(np.abs(w) <= gamma + 1e-9)
                          and np.all((np.abs(w) / gamma).sum(axis=0) <= big_gamma + 1e-9))
            self.assertEqual(model.membership(w).inside, direct)
        # vectorized check over the full set
        flat = points.reshape(len(points), -1)
        slack = (model.b[None, :] - np.maximum(flat, 0) @ model.k_plus.T - np.maximum(-flat, 0) @ model.k_minus.T)
        inside = np.all(slack >= -1e-9, axis=1)
        direct = np.all(np.abs(points) <= gamma + 1e-9, axis=(1, 2)) & np.all(
            (np.abs(points) / gamma).sum(axis=1) <= big_gamma + 1e-9, axis=1)
        np.testing.assert_array_equal(inside, direct)

    def test_column_order_is_renewable_major(self):
        model = from_budgets([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0])
        self.assertEqual(model.index(1, 0), 2)
        # the period-1 budget row touches renewable 0 and 1 in period 1
        np.testing.assert_allclose(model.k_plus[-1], [0.0, 0.5, 0.0, 0.25])


class SamplingTests(SimpleTestCase):

    def test_empty(self):
        self.assertEqual(sample_deviation(case9_model(), 42, 0), [])

    def test_case9_samples_stay_in_orthant(self):
        samples = sample_deviation(case9_model(), 42, 300)
        self.assertEqual(len(samples), 300)
        for w in samples:
            self.assertEqual(w.shape, (2, 1))
            self.assertTrue(np.all(w <= 0.0))
            self.assertLessEqual(2 * abs(w[0, 0]) + abs(w[1, 0]), 100.0 + 1e-9)

    def test_deterministic(self):
        first = sample_deviation(case9_model(), 7, 50)
        second = sample_deviation(case9_model(), 7, 50)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_budget_samples_respect_gamma(self):
        gamma = np.array([[10.0, 5.0], [20.0, 8.0]])
        model = from_budgets(gamma, [1.5, 1.5])
        samples = np.array(sample_deviation(model, 1, 10000))
        self.assertTrue(np.all(np.abs(samples).max(axis=0) <= gamma + 1e-9))
        for w in samples[:500]:
            self.assertTrue(model.membership(w).inside)

    def test_zero_model(self):
        samples = sample_deviation(ConcentrationModel.zero(2, 2), 3, 5)
        for w in samples:
            np.testing.assert_array_equal(w, np.zeros((2, 2)))

    def test_full_dimensional_check(self):
        self.assertTrue(case9_model().check_full_dimensional())
        with self.assertLogs('battopf.uncertainty.concentration', level='WARNING'):
            self.assertFalse(ConcentrationModel.zero(1, 1).check_full_dimensional())

    def test_chains_start_strictly_inside(self):
        model = from_budgets([[30.0], [20.0]], [1.5])
        matrix = model.orthant_matrix(np.ones(2))
        upper, _ = model.coordinate_bounds()
        start = _interior_start(matrix, model.b, upper)
        # budget row activity at the bounds is 2, so the scale is 1.5 / 4
        np.testing.assert_allclose(start, [11.25, 7.5])
        self.assertTrue(np.all(start > 0.0))
        self.assertTrue(np.all(matrix @ start <= model.b / 2.0 + 1e-12))
