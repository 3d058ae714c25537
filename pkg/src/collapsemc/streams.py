"""Counter-based random number streams.

Every stochastic object in the package draws from a Philox generator keyed
by (master_seed, stream_index). Streams for distinct indices are independent
by construction, so ensembles can be generated in any batch/thread layout
and still produce bit-identical per-trajectory noise.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(master_seed: int, index: int = 0) -> np.random.Generator:
    """Return the generator for sub-stream `index` of `master_seed`."""
    if master_seed < 0 or index < 0:
        raise ValueError("master_seed and index must be non-negative")
    key = (int(master_seed) & _MASK64) | ((int(index) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))
