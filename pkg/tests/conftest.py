"""Shared test helpers: simplex generators and small stream builders."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make `reference` importable

from streamfuse.core import AttentionSchedule, PosteriorStream, StreamSet


def random_simplex(rng: np.random.Generator, T: int, C: int, alpha: float = 1.0):
    """(T, C) rows drawn from a symmetric Dirichlet."""
    return rng.dirichlet(np.full(C, alpha), size=T)


def random_stream(rng, T, C, stream_id=0, frame_offset=0, alpha=1.0):
    return PosteriorStream(
        probs=random_simplex(rng, T, C, alpha),
        stream_id=stream_id,
        frame_offset=frame_offset,
    )


def random_stream_set(rng, M, T, C, alpha=1.0):
    return StreamSet([random_stream(rng, T, C, stream_id=m, alpha=alpha) for m in range(M)])


def random_schedule(rng, T, M):
    return AttentionSchedule(random_simplex(rng, T, M))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
