"""Counter-based randomness.

Everything random in the package is a pure function of 64-bit keys.  Tree
vertices get their key by folding child indices into the tree seed, and a
walk draws its t-th uniform from ``mix(walk_seed + (t + 1) * GOLDEN)``
(splitmix64 read as a counter generator).  No generator carries state, so
any vertex or step can be regenerated in isolation.
"""
from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)

K_ROOT = np.uint64(0x5851F42D4C957F2D)
K_CHILD = np.uint64(0x14057B7EF767814F)
K_RECORD = np.uint64(0xD6E8FEB86659FD93)
K_TRAP = np.uint64(0xA0761D6478BD642F)

_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def to_unit(z):
    """Top 53 bits of ``z`` as a float in [0, 1)."""
    return np.float64(z >> _S11) * _INV53


@njit(cache=True, inline="always")
def root_key(seed):
    return mix64(seed ^ K_ROOT)


@njit(cache=True, inline="always")
def trap_root_key(seed):
    return mix64(seed ^ K_TRAP)


@njit(cache=True, inline="always")
def child_key(parent, index):
    return mix64((parent ^ K_CHILD) + np.uint64(index + 1) * GOLDEN)


@njit(cache=True, inline="always")
def record_uniform(key):
    return to_unit(mix64(key + K_RECORD))


@njit(cache=True, inline="always")
def stream_uniform(seed, t):
    return to_unit(mix64(seed + np.uint64(t + 1) * GOLDEN))


def u64(x) -> np.uint64:
    return np.uint64(int(x) & MASK64)


# numba hands uint64 results back as Python ints; these keep them typed


def key_root(seed) -> np.uint64:
    return np.uint64(root_key(u64(seed)))


def key_trap_root(seed) -> np.uint64:
    return np.uint64(trap_root_key(u64(seed)))


def key_child(key, index: int) -> np.uint64:
    return np.uint64(child_key(np.uint64(key), index))


def fold_path(seed, path) -> np.uint64:
    """Key of the vertex reached from the root by the child indices in ``path``."""
    key = key_root(seed)
    for i in path:
        key = key_child(key, i)
    return key


def _mix_py(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, label: str, index: int) -> int:
    """Child seed for replicate ``index`` of the stream named ``label``.

    Label bytes are absorbed eight at a time, so distinct labels give
    unrelated streams even for equal indices.
    """
    h = _mix_py(master ^ 0x6A09E667F3BCC908)
    data = label.encode("utf-8")
    data += b"\x00" * (-len(data) % 8)
    for off in range(0, len(data), 8):
        h = _mix_py(h ^ int.from_bytes(data[off:off + 8], "little"))
    h = _mix_py(h ^ len(label))
    return _mix_py(h + (index + 1) * 0x9E3779B97F4A7C15)


def uniforms(seed, n: int) -> np.ndarray:
    """The first ``n`` draws of the counter stream ``seed``."""
    return _uniforms(u64(seed), n)


@njit(cache=True)
def _uniforms(seed, n):
    out = np.empty(n)
    for t in range(n):
        out[t] = stream_uniform(seed, t)
    return out


class Stream:
    """Sequential reader over a counter stream; handy outside numba code."""

    def __init__(self, seed):
        self.seed = u64(seed)
        self.t = 0

    def random(self) -> float:
        u = stream_uniform(self.seed, self.t)
        self.t += 1
        return float(u)
