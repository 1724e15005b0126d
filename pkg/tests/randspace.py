"""Random finite spaces and operators shared by the tests."""

import numpy as np

from wcelab.measure import MeasurableFunction, MeasureSpace, NonAtomicRegion
from wcelab.wce import WCEOperator


def random_partition(rng, max_points=64, max_blocks=16, singletons=False):
    n_blocks = int(rng.integers(1, max_blocks + 1))
    if singletons:
        sizes = np.ones(n_blocks, dtype=int)
    else:
        budget = int(rng.integers(n_blocks, max_points + 1))
        cuts = np.sort(rng.choice(np.arange(1, budget), n_blocks - 1, replace=False)) \
            if n_blocks > 1 else np.empty(0, int)
        sizes = np.diff(np.concatenate([[0], cuts, [budget]])).astype(int)
    total = int(sizes.sum())
    labels = rng.permutation(total).astype(float) + 1.0
    weights = rng.uniform(0.1, 10.0, total)
    return labels, weights, sizes


def random_operator(rng, p=2.0, max_points=64, max_blocks=16, region_level=None,
                    singletons=False, zero_region=False):
    labels, weights, sizes = random_partition(rng, max_points, max_blocks, singletons)
    region = None
    ureg = wreg = None
    if region_level is not None:
        region = NonAtomicRegion(float(rng.uniform(0.5, 2.0)), region_level)
        side = 1 << region_level
        ureg = rng.uniform(-5, 5, (side, side))
        wreg = np.zeros((side, side)) if zero_region else rng.uniform(-5, 5, (side, side))
    space = MeasureSpace.from_partition(labels, weights, sizes, region)
    u = MeasurableFunction(table=dict(zip(labels, rng.uniform(-5, 5, len(labels)))), region=ureg)
    w = MeasurableFunction(table=dict(zip(labels, rng.uniform(-5, 5, len(labels)))), region=wreg)
    return WCEOperator(u, w, space, p)
