"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, *keys)``, so the value an
entity receives never depends on which worker processed it or in what order.
Keys are typically entity ids plus the simulation clock.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / float(1 << 53)

# stream identifiers; values are arbitrary but must stay stable
TRIP = 1
CATEGORY = 2
DESTINATION = 3
LOCAL = 4
DWELL_BUCKET = 5
DWELL_MINUTES = 6
DEPART_OFFSET = 7
EXPOSURE = 8
SURFACE = 9
ACTION = 10
ACTION_EFFECT = 11
GROUP_INFECTION = 12
STATE = 13
TASK = 14
EVENT = 15
WORK_GROUP = 16
SEATS = 17
SEEDING = 18
EXTERNAL = 19
SELECTION = 20
SHUFFLE = 21


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps modulo 2**64
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def hash64(seed: int, stream: int, *keys) -> np.ndarray:
    """Hash ``(seed, stream, *keys)`` into uint64 values (keys broadcast)."""
    base = np.asarray([(seed * 0x100000001B3 + stream * 0x2545F4914F6CDD1D) & 0xFFFFFFFFFFFFFFFF],
                      dtype=np.uint64)
    h = _mix(base + _GOLDEN)
    with np.errstate(over="ignore"):
        for k in keys:
            k = np.asarray(k).astype(np.uint64)
            h = _mix(h ^ (k * _GOLDEN + np.uint64(0x632BE59BD9B4E019)))
    return h


def uniforms(seed: int, stream: int, *keys) -> np.ndarray:
    """Uniform doubles in [0, 1) keyed by ``(seed, stream, *keys)``."""
    h = hash64(seed, stream, *keys)
    return (h >> np.uint64(11)).astype(np.float64) * _INV53


def uniform(seed: int, stream: int, *keys) -> float:
    return float(uniforms(seed, stream, *keys).reshape(-1)[0])


def generator(seed: int, stream: int, *keys) -> np.random.Generator:
    """A numpy Generator for serial steps that need permutations/choices."""
    h = hash64(seed, stream, *keys).reshape(-1)
    return np.random.Generator(np.random.Philox(key=int(h[0])))
