"""Counter-based random streams keyed by integer tuples.

Every stochastic site in a run draws from a Philox generator keyed by
(run seed, epoch, batch, episode, site tag), so results do not depend on
scheduling or evaluation order.
"""

from __future__ import annotations

import numpy as np

INIT_TAG = 0xA111
DATA_TAG = 0xDA7A
SHUFFLE_TAG = 0x5FFE
SAMPLE_TAG = 0x5A3C
EVAL_TAG = 0xE7A1


def stream_rng(*key: int) -> np.random.Generator:
    """An independent Philox stream for the given integer key tuple."""
    seq = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])
    return np.random.Generator(np.random.Philox(seed=seq))
