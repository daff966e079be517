"""Seeded random streams.

All randomness comes from PCG64 generators keyed by ``(seed, stream name)``,
so independent consumers (data noise, each chain, optimizer restarts) never
share a stream and every output is a pure function of the seed.
"""

import zlib

import numpy as np

GENERATOR_NAME = "PCG64"


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), key])))


def polar_normals(gen: np.random.Generator, n: int) -> np.ndarray:
    """Standard normals by the Marsaglia polar method.

    Pairs of uniforms are consumed strictly in order and rejected pairs are
    skipped, so any implementation of the same generator reproduces the
    stream exactly.
    """
    out = np.empty(0)
    while out.size < n:
        need = n - out.size
        u = 2.0 * gen.random(2 * (need // 2 + 8)) - 1.0
        u1, u2 = u[0::2], u[1::2]
        s = u1 * u1 + u2 * u2
        ok = (s > 0.0) & (s < 1.0)
        f = np.sqrt(-2.0 * np.log(s[ok]) / s[ok])
        pairs = np.column_stack([u1[ok] * f, u2[ok] * f]).ravel()
        out = np.concatenate([out, pairs])
    return out[:n]
