"""Counter-based random streams.

Every random draw in the package comes from a Philox generator. Streams are
derived hierarchically so results never depend on scheduling::

    experiment seed -> chain key (Philox key, one per replicate)
                    -> sweep stream (counter block selected by sweep index)
                    -> draws within a sweep, consumed in a fixed order

Within a sweep, per-particle draws at a fixed time are taken as one
vectorised block in slot order, so slot ``i`` at time ``t`` always receives
the same position of the sweep stream regardless of how the block is
evaluated.
"""

from __future__ import annotations

import numpy as np

# reserved spawn keys for non-chain streams
DATA_STREAM = 2**31 - 1
INIT_STREAM = 2**31 - 2


def chain_key(seed: int, *path: int) -> np.ndarray:
    """Return a 128-bit Philox key for the stream ``(seed, *path)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return ss.generate_state(2, dtype=np.uint64)


def sweep_generator(key: np.ndarray, sweep: int) -> np.random.Generator:
    """Generator for one sweep: the sweep index occupies the top counter word."""
    counter = np.array([0, 0, 0, int(sweep)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def make_generator(seed: int, *path: int) -> np.random.Generator:
    """Convenience: the sweep-0 stream of ``chain_key(seed, *path)``."""
    return sweep_generator(chain_key(seed, *path), 0)
