"""Named random sub-streams fanned out from one top-level seed."""
import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name`` (e.g. "train", "eval") under ``seed``."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, extra)])
