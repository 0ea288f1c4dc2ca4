"""Numerical primitives shared by every other module.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The random
number generator is implemented here rather than borrowed from numpy so that
weight initialisation and synthetic data replay identically across numpy
versions and platforms.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

__all__ = [
    "ShapeError",
    "SeededRng",
    "as_matrix",
    "matmul",
    "sigmoid",
    "tanh_act",
    "uniform_init",
]

_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Raised when array dimensions do not conform."""


def as_matrix(a) -> np.ndarray:
    """Return ``a`` as a 2-D float64 array, rejecting non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x, out=None) -> np.ndarray:
    """Logistic function.

    ``scipy.special.expit`` evaluates ``1/(1+e^-x)`` or ``e^x/(1+e^x)``
    depending on the sign of ``x``, so large magnitudes never overflow.
    """
    return expit(np.asarray(x, dtype=np.float64), out=out)


def tanh_act(x) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class SeededRng:
    """xoshiro256** generator seeded through splitmix64.

    The 256-bit state is filled by four successive splitmix64 outputs of the
    64-bit seed. ``next_u64`` is the reference xoshiro256** step, ``uniform``
    keeps the top 53 bits (``(x >> 11) * 2**-53``), and ``normal`` uses the
    Box-Muller transform on two uniforms, returning both variates in turn.

    Integer and uniform streams are bit-identical on every platform. Normal
    draws go through ``math.log``/``math.cos`` and are therefore only as
    portable as the platform libm.

    Not safe for concurrent use.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed) & _MASK64
        sm = self.seed
        state = []
        for _ in range(4):
            sm, z = _splitmix64(sm)
            state.append(z)
        self._s = state
        self._spare: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """A double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform_array(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        for k in range(n):
            out[k] = self.uniform()
        return low + (high - low) * out

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1], safe for log
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare = r * math.sin(theta)
        return r * math.cos(theta)

    def normal_array(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)

    def spawn(self, stream: int) -> "SeededRng":
        """Derive an independent generator keyed by ``stream``."""
        _, z = _splitmix64((self.seed ^ ((stream * 0xD1B54A32D192ED03) & _MASK64)) & _MASK64)
        return SeededRng(z)


def uniform_init(rng: SeededRng, rows: int, cols: int, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot-uniform matrix: entries drawn from [-s, s], s = sqrt(6 / (fan_in + fan_out)).

    Entries are filled in row-major order.
    """
    if rows < 1 or cols < 1:
        raise ShapeError("rows and cols must be >= 1")
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform_array(rows * cols, -s, s).reshape(rows, cols)
