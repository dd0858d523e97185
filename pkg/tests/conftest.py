import numpy as np
import pytest

from tensorseries import (
    CoefficientTensor,
    ElementaryTensor,
    Representation,
    SpaceSpec,
)


def make_representation(rng, dx, dy, m, kind_x="euclidean", kind_y="euclidean",
                        scale=1.0) -> Representation:
    """Random m-term representation with its target computed from the terms."""
    xs = rng.normal(size=(m, dx)) * scale
    ys = rng.normal(size=(m, dy)) * scale
    target = CoefficientTensor(
        SpaceSpec(dx, kind_x), SpaceSpec(dy, kind_y), xs.T @ ys if m else np.zeros((dx, dy))
    )
    terms = tuple(ElementaryTensor(x, y) for x, y in zip(xs, ys))
    return Representation(terms, target)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
