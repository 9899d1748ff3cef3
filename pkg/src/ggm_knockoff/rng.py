"""Seedable, splittable random streams.

A stream is identified by ``(seed, stream_id)`` plus an optional path of child
indices. Each identity is hashed through :class:`numpy.random.SeedSequence`
into the key of a counter-based Philox generator, so replicate ``r`` of a
Monte Carlo run draws the same numbers whether it runs first, last, or on
another thread.
"""

import numpy as np

from .errors import InvalidDof, UserInputError
from .linalg import cholesky

_U64 = 2**64


def _check_u64(name, value):
    value = int(value)
    if not 0 <= value < _U64:
        raise UserInputError(f"{name} must be an unsigned 64-bit integer, got {value}")
    return value


class RngStream:
    """Single-owner random stream. Never share one instance between threads."""

    def __init__(self, seed=0, stream_id=0, path=()):
        self.seed = _check_u64("seed", seed)
        self.stream_id = _check_u64("stream_id", stream_id)
        self.path = tuple(int(i) for i in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, *self.path))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"

    def child(self, index):
        """Independent sub-stream; depends only on this stream's identity."""
        return RngStream(self.seed, self.stream_id, self.path + (index,))

    def uniform(self, size=None):
        return self._gen.random(size)

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def gamma(self, shape, size=None):
        # Marsaglia-Tsang squeeze for shape >= 1, boosted below 1.
        return self._gen.standard_gamma(shape, size)

    def chi_square(self, dof, size=None):
        return 2.0 * self.gamma(0.5 * dof, size)

    def permutation(self, n):
        return self._gen.permutation(n)


def standard_normal(rng, size=None):
    return rng.standard_normal(size)


def student_t(rng, dof, size=None):
    """Student-t draws built as ``N / sqrt(ChiSq(dof) / dof)``.

    All normals are drawn before the chi-squared variates.
    """
    if int(dof) != dof or dof < 1:
        raise InvalidDof(f"degrees of freedom must be a positive integer, got {dof}")
    z = rng.standard_normal(size)
    chi = rng.chi_square(dof, size)
    return z / np.sqrt(chi / dof)


def sample_mvn(rng, sigma, n, factor=None):
    """Draw ``n`` rows from N(0, sigma) as ``z @ L.T`` with ``L = cholesky(sigma)``.

    ``factor`` may carry a precomputed Cholesky factor of ``sigma``.
    """
    L = cholesky(sigma) if factor is None else factor
    p = L.shape[0]
    n = int(n)
    if n == 0:
        return np.empty((0, p))
    z = rng.standard_normal((n, p))
    return z @ L.T
