from __future__ import annotations

import numpy as np
import pytest

from wbc.measures import DiscreteMeasure, GaussianMeasure


def random_gaussian(rng: np.random.Generator, d: int,
                    mean_box=(-1.0, 1.0), eig_range=(0.5, 2.0)) -> GaussianMeasure:
    mean = rng.uniform(*mean_box, d)
    eigs = rng.uniform(*eig_range, d)
    Q = np.linalg.qr(rng.standard_normal((d, d)))[0]
    return GaussianMeasure(mean, (Q * eigs) @ Q.T)


def random_discrete(rng: np.random.Generator, m: int, d: int,
                    box=(0.0, 1.0), uniform=False) -> DiscreteMeasure:
    atoms = rng.uniform(*box, (m, d))
    weights = np.full(m, 1.0 / m) if uniform else rng.dirichlet(np.ones(m))
    return DiscreteMeasure(atoms, weights)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
