"""Counter-based random streams.

Every draw is addressed by ``(seed, stream, trajectory, half_cycle)`` through
the Philox key and counter, so a trajectory's numbers do not depend on which
worker runs it or in what order.
"""
import numpy as np

from .errors import DomainError

U64 = 1 << 64

# stream identifiers (second key word)
SCHEDULE = 0x5C4ED
TRIGGER_LAYER = 0xB3A7
SOLVER = 0x501F


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < U64:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed, trajectory: int = 0, half_cycle: int = 0, kind: int = SCHEDULE):
    """Generator for one ``(trajectory, half_cycle)`` cell.

    The low counter word stays free for the draws themselves.
    """
    seed = check_seed(seed)
    if trajectory < 0 or half_cycle < 0:
        raise DomainError("trajectory and half-cycle indices must be >= 0")
    key = np.array([seed, kind], dtype=np.uint64)
    counter = np.array([0, half_cycle, trajectory, 0], dtype=np.uint64)
    bits = np.random.Philox(key=key, counter=counter)
    return np.random.Generator(bits)
