"""Counter-based random streams keyed by (seed, node, lane).

Every draw is a pure function of its key, so a tree realization does not depend
on how replicates are batched or scheduled across threads.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_LANE = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z):
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def as_u64(seed):
    return np.uint64(int(seed) & _MASK)


def replicate_seed(base_seed, replicate):
    """Seed of replicate ``r``: the base seed xor a hash of the replicate index."""
    r = np.asarray(replicate, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return as_u64(base_seed) ^ mix64(r * _GOLDEN + _LANE)


def _bits(seeds, nodes, lane):
    nodes = np.asarray(nodes, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = mix64(np.asarray(seeds, dtype=np.uint64) + _GOLDEN)
        if key.ndim:
            key = key[..., None]
        z = mix64(nodes * _GOLDEN + np.uint64(lane) * _LANE + key)
        return mix64(z ^ key)


def uniforms(seeds, nodes, lane=0):
    """Uniform draws on the open interval (0, 1).

    ``seeds`` of shape ``(R,)`` and ``nodes`` of shape ``(k,)`` give ``(R, k)``;
    a scalar seed gives ``(k,)``.
    """
    b = _bits(seeds, nodes, lane)
    return ((b >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seeds, nodes, lane=0):
    """Standard normal draws by inversion of :func:`uniforms`."""
    return ndtri(uniforms(seeds, nodes, lane))
