"""Named random streams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for component ``name`` under root ``seed``."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
