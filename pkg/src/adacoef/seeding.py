"""Deterministic RNG streams.

All randomness flows from explicit 64-bit seeds through the counter-based
Philox generator. Substreams are derived with integer spawn keys so that
independent components (dataset sampling, model init, training noise,
evaluation) never share a stream.
"""

from __future__ import annotations

import numpy as np

# spawn-key tags for derived streams
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_EVAL = 3


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for `seed`, optionally narrowed to a substream."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(stream))
    return np.random.Generator(np.random.Philox(seq))
