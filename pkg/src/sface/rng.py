"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(master_seed, *path)``, so the
draw sequence of, say, bootstrap replicate 17 does not depend on how many
replicates ran before it or on which worker ran it.
"""
from __future__ import annotations

import zlib

import numpy as np

_TAGS = {}


def _tag(label):
    if isinstance(label, str):
        if label not in _TAGS:
            _TAGS[label] = zlib.crc32(label.encode())
        return _TAGS[label]
    return int(label)


def stream(seed, *path) -> np.random.Generator:
    """Independent generator for the node ``path`` under ``seed``.

    >>> a = stream(1, "boot", 3).random()
    >>> a == stream(1, "boot", 3).random()
    True
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(_tag, path)])
    return np.random.Generator(np.random.Philox(ss))
