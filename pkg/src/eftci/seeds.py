"""Named, reproducible seed substreams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("state", "tci", "global-pivot", "layout")


def substream(root: int, name: str, *keys: int) -> int:
    """A 63-bit seed that depends only on ``(root, name, *keys)``."""
    entropy = [int(root), zlib.crc32(name.encode())] + [int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)
