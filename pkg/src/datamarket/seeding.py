"""Deterministic stream splitting for every random draw in the package.

Each consumer derives its generator from a tag (root_seed, stream, *indices)
fed to numpy's SeedSequence, so any path, seller or experiment cell can be
reproduced in isolation and streams never collide: the common-noise stream of
path p depends only on (root_seed, STREAM_COMMON, p), the idiosyncratic stream
of seller i on that path only on (root_seed, STREAM_SELLER, p, i), and so on.
Population size is deliberately absent from the tags so experiments that vary
it share noise (common random numbers).
"""

from __future__ import annotations

import numpy as np

STREAM_COMMON = 0          # one Brownian motion shared by all sellers on a path
STREAM_SELLER = 1          # per-seller idiosyncratic Brownian motions
STREAM_REPRESENTATIVE = 2  # representative-seller draws in stationarity checks
STREAM_PERTURBATION = 3    # random perturbation directions


def seed_tag(root_seed: int, stream: int, *indices: int) -> tuple:
    """Canonical tag identifying one random stream."""
    return (int(root_seed), int(stream), *(int(i) for i in indices))


def generator(root_seed: int, stream: int, *indices: int) -> np.random.Generator:
    """Fresh generator for the stream identified by the tag."""
    return np.random.default_rng(np.random.SeedSequence(
        list(seed_tag(root_seed, stream, *indices))))
