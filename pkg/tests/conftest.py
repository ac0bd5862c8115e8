"""
conftest.py

Puts the project root and src/ on sys.path the same way main.py does, and
provides seeded fixtures shared across the suite.
"""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, ROOT)
sys.path.insert(0, os.path.join(ROOT, "src"))

from tensors import EmbeddingVector, FeatureMap  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def random_map(rng):
    def _make(height: int = 7, width: int = 7, channels: int = 16) -> FeatureMap:
        return FeatureMap(rng.normal(size=(height, width, channels)))

    return _make


@pytest.fixture
def random_vector(rng):
    def _make(dim: int = 16) -> EmbeddingVector:
        return EmbeddingVector(rng.normal(size=dim))

    return _make
