"""Named RNG sub-streams derived from one user-facing seed.

Each consumer (parameter init, imputation noise, prediction noise, batch
shuffling, dataset splitting, ...) gets its own PCG64 stream so any one of
them can be reproduced in isolation. Stream indices are fixed forever; adding
a stream means appending, never renumbering.
"""

from __future__ import annotations

import numpy as np

_STREAMS = {
    "init": 0,
    "xi": 1,
    "eta": 2,
    "shuffle": 3,
    "split": 4,
    "synth": 5,
    "ffn": 6,
}


def named_rng(seed: int, name: str) -> np.random.Generator:
    if name not in _STREAMS:
        raise KeyError(f"unknown rng stream {name!r}; known: {sorted(_STREAMS)}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAMS[name],))
    return np.random.default_rng(ss)


def substream(seed: int, name: str, index: int) -> np.random.Generator:
    """An indexed child of a named stream (e.g. one per ensemble member)."""
    if name not in _STREAMS:
        raise KeyError(f"unknown rng stream {name!r}; known: {sorted(_STREAMS)}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAMS[name], int(index)))
    return np.random.default_rng(ss)
