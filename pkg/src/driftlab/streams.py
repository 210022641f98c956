# Counter-based random streams: every consumer derives its generator from
# (root_seed, *key) so results are independent of execution order and worker count.
import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator keyed by (seed, *key). Same key -> same stream, always."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def substreams(seed: int, n: int, *key: int):
    """n generators stream(seed, *key, i) for i in range(n)."""
    return [stream(seed, *key, i) for i in range(n)]
