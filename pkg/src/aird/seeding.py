"""Named deterministic random substreams.

Every stochastic choice in the package draws from a generator derived from
(root seed, stream name), so changing one component (e.g. batch order) never
shifts the randomness of another (e.g. weight init).
"""

import hashlib

import numpy as np


def substream(seed: int, tag: str) -> np.random.Generator:
    digest = hashlib.sha256(tag.encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *words])))
