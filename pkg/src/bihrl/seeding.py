"""Named random substreams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np

SIMULATION = "simulation"
MCMC = "mcmc"
DISTRACTOR = "distractor"
SUPPORT = "support"
SPLIT = "split"


def substream_seed(root: int, name: str, *keys: int) -> int:
    """A 32-bit seed for stream ``name`` (and optional integer ``keys``) under ``root``."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode()), *[int(k) for k in keys]])
    return int(ss.generate_state(1)[0])


def substream(root: int, name: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root, name, *keys))
