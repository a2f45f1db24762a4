"""Counter-based random streams derived from a single 64-bit seed.

Every consumer of randomness (parameter init, batch selection, per-step
corruption, eval corruption, sampler init, each reverse step, ...) gets its
own Philox stream addressed by a short integer path.  The path occupies the
high words of the Philox counter while draws advance the low word, so
distinct paths can never collide no matter how many values each stream
consumes, and any stream can be rebuilt from (seed, path) alone.  That makes
training resumable bit-for-bit and lets a reverse-diffusion loop be replayed
from any intermediate state.
"""

from __future__ import annotations

import numpy as np

# Stream tags. Each tag is always used with the same path arity.
INIT_PARAMS = 1    # (tag,)            model parameter init
TRAIN_BATCH = 2    # (tag, step)       which windows go in the minibatch
TRAIN_T = 3        # (tag, step)       diffusion step drawn per sequence
TRAIN_NOISE = 4    # (tag, step)       corruption of the minibatch
EVAL_NOISE = 5     # (tag, t)          corruption of the held-out set at step t
SAMPLE_INIT = 6    # (tag,)            initial fully-noised sequence
SAMPLE_STEP = 7    # (tag, t)          categorical draws at reverse step t
NOISE_SIM = 8      # (tag, t)          Monte Carlo rows of the noise simulator

_MASK64 = (1 << 64) - 1


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent, reproducible generator for (seed, path).

    At most 3 path components; components must be non-negative.
    """
    if len(path) > 3:
        raise ValueError(f"stream path too long: {path!r}")
    counter = np.zeros(4, dtype=np.uint64)
    for i, p in enumerate(path):
        p = int(p)
        if p < 0:
            raise ValueError(f"negative stream path component: {path!r}")
        counter[i + 1] = np.uint64(p & _MASK64)
    key = np.uint64(int(seed) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
