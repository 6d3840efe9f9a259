"""
Hit-and-run sampling of deviation vectors from a concentration model.

Each draw picks a sign pattern uniformly at random; W restricted to that
orthant is the polytope {m >= 0 : K^sigma m <= b} over magnitudes m, which
is sampled by hit-and-run. Draws sharing a sign pattern share one chain.
Uniformity is not needed for validation, only coverage.
"""
import logging

import numpy as np

from battopf.exceptions import UncertaintyModelError

logger = logging.getLogger(__name__)

BURN_IN = 100
THINNING = 50


def _interior_start(matrix, b, upper):
    """A strictly positive point of {m >= 0 : matrix m <= b} halfway inside."""
    load = matrix @ upper
    scale = 0.5
    positive = load > 0
    if np.any(positive):
        scale = min(scale, float(np.min(b[positive] / (2.0 * load[positive]))))
    return scale * upper


def _chain(matrix, b, start, rng, outputs):
    """Run hit-and-run on {m >= 0 : matrix m <= b} and return `outputs` points."""
    dim = start.size
    constraints = np.vstack([matrix, -np.eye(dim)])
    rhs = np.concatenate([b, np.zeros(dim)])
    point = start.copy()
    samples = []
    steps_needed = BURN_IN + THINNING * outputs
    for step in range(1, steps_needed + 1):
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        rate = constraints @ direction
        room = np.maximum(rhs - constraints @ point, 0.0)
        ahead = rate > 1e-14
        behind = rate < -1e-14
        if not np.any(ahead) or not np.any(behind):
            raise UncertaintyModelError("uncertainty set is unbounded along a sampling direction")
        t_max = float(np.min(room[ahead] / rate[ahead]))
        t_min = float(np.max(room[behind] / rate[behind]))
        point = np.maximum(point + rng.uniform(t_min, t_max) * direction, 0.0)
        if step > BURN_IN and (step - BURN_IN) % THINNING == 0:
            samples.append(point.copy())
    return samples


def _pull_inside(model, w):
    """Shrink a sample toward 0 until round-off no longer pushes it out of W."""
    for _ in range(60):
        if model.membership(w).inside:
            return w
        w = w * (1.0 - 1e-6)
    raise UncertaintyModelError("sampled point could not be brought inside the uncertainty set")


def sample_deviation(model, rng_seed, count):
    """Draw deviation vectors from W.

    Args:
        model: ConcentrationModel
        rng_seed: seed for numpy's default_rng; equal seeds give equal samples
        count: number of samples

    Returns:
        list of (n, T) arrays, each verified to lie in W
    """
    if count <= 0 or model.dimension == 0:
        return [np.zeros((model.renewables, model.periods)) for _ in range(max(count, 0))]

    rng = np.random.default_rng(rng_seed)
    patterns = rng.choice([-1.0, 1.0], size=(count, model.dimension))
    groups = {}
    for position, signs in enumerate(patterns):
        groups.setdefault(tuple(signs), []).append(position)

    results = [None] * count
    for signs, positions in groups.items():
        signs = np.asarray(signs)
        upper = model.orthant_bounds(signs)
        active = upper > 0
        if not np.any(active):
            for position in positions:
                results[position] = np.zeros(model.dimension)
            continue
        if np.any(np.isinf(upper[active])):
            raise UncertaintyModelError("uncertainty set is unbounded; every coordinate needs a limiting row")
        matrix = model.orthant_matrix(signs)[:, active]
        start = _interior_start(matrix, model.b, upper[active])
        magnitudes = _chain(matrix, model.b, start, rng, len(positions))
        for position, m in zip(positions, magnitudes):
            w = np.zeros(model.dimension)
            w[active] = signs[active] * m
            results[position] = w

    samples = []
    for w in results:
        w = _pull_inside(model, w)
        samples.append(w.reshape(model.renewables, model.periods))
    logger.debug(f"drew {count} deviation samples over {len(groups)} orthants")
    return samples
