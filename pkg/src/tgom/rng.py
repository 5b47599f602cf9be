"""Counter-based random streams.

Every random number used by the sampler is a pure function of
``(seed, block, iteration, position)``.  Philox is keyed by
``(seed, block)`` and its 256-bit counter carries the iteration in the third
word and the position in the first, so a stream can be opened at any
individual's offset without generating the numbers before it.  Individuals
own fixed-width, 4-aligned slots; a slice of individuals can therefore be
drawn on any worker and the numbers are the same as in a serial run.

Uniforms are shifted by half an ulp step into the open interval (0, 1) so
inverse-CDF transforms never see 0.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaincinv, ndtri

_HALF_STEP = 2.0**-54

# block ids
INIT_BETA = 1
INIT_G = 2
INIT_Z = 3
Z = 10
BETA = 11
G = 12
ALPHA = 13
FOLDS = 20
PREDICT = 21
GENERATE = 30


def _width(per_individual: int) -> int:
    return max(4, -(-per_individual // 4) * 4)


def _generator(seed: int, block: int, iteration: int, word0: int) -> np.random.Generator:
    mask = (1 << 64) - 1
    bitgen = np.random.Philox(counter=[word0 & mask, 0, iteration & mask, 0],
                              key=[seed & mask, block & mask])
    return np.random.Generator(bitgen)


class CounterStreams:
    """Uniform draws addressed by (block, iteration, individual)."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def individual_uniforms(self, block: int, iteration: int, start: int, count: int,
                            per_individual: int) -> np.ndarray:
        """Uniforms for individuals ``start..start+count-1``: shape (count, per_individual)."""
        w = _width(per_individual)
        gen = _generator(self.seed, block, iteration, start * (w // 4))
        u = gen.random((count, w))[:, :per_individual]
        return u + _HALF_STEP

    def uniforms(self, block: int, iteration: int, shape) -> np.ndarray:
        return _generator(self.seed, block, iteration, 0).random(shape) + _HALF_STEP

    def generator(self, block: int, iteration: int = 0) -> np.random.Generator:
        """A plain Generator for single-threaded, variable-consumption uses."""
        return _generator(self.seed, block, iteration, 0)

    def chunk_generator(self, block: int, iteration: int, chunk: int) -> np.random.Generator:
        """Generator owned by one fixed-size chunk of individuals.

        Chunks start 2**32 counter steps apart, far more than any chunk
        consumes, so their streams never overlap.
        """
        return _generator(self.seed, block, iteration, int(chunk) << 32)


def normals(u):
    return ndtri(u)


def log_gamma_variates(shape, u1, u2):
    """log of Gamma(shape, 1) variates from two uniforms each.

    Draws Gamma(shape + 1) by inverting its CDF and multiplies by
    ``u2 ** (1/shape)``; working in logs keeps very small shapes from
    underflowing to zero.
    """
    shape = np.asarray(shape, dtype=float)
    x = gammaincinv(shape + 1.0, u1)
    return np.log(x) + np.log(u2) / shape


def dirichlet_from_uniforms(alpha, u):
    """Dirichlet draws; ``u`` has a trailing axis of length 2 per component.

    Returns ``(g, log_g)``; ``log_g`` is exact even where ``g`` underflows.
    """
    from .model import klogsumexp

    lx = log_gamma_variates(alpha, u[..., 0], u[..., 1])
    log_g = lx - klogsumexp(lx)[..., None]
    return np.exp(log_g), log_g
