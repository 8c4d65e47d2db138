"""Order-independent randomness: every draw is keyed by a stable string.

Draws hash (seed, key, purpose) instead of pulling from one shared stream,
so results do not depend on how records are split across workers.
"""

import hashlib
import random


def stable_hash(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def unit_draw(*parts) -> float:
    """A uniform value in [0, 1) determined entirely by ``parts``."""
    return int(stable_hash(*parts)[:13], 16) / float(1 << 52)


def keyed_rng(*parts) -> random.Random:
    return random.Random(int(stable_hash(*parts)[:16], 16))
