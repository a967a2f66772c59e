"""Counter-based random number streams.

Every stream in the lab is keyed by (master_seed, purpose, path_index,
phase, chunk) through a splitmix64-style mixing chain, and the key feeds a
Philox counter generator.  The increments a path sees are therefore a pure
function of the master seed and the path's index: results do not depend on
execution order, retirement order of other paths, or worker count.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# purpose codes: disjoint key namespaces for the different draw families
MAIN = 0          # driving Brownian increments
INNER = 1         # nested Monte Carlo futures
TAIL = 2          # exact tail-completion uniforms
SELECT = 3        # state selection for spot checks
CONTROL = 4       # negative-control fixtures


def mix64(x: int) -> int:
    """splitmix64 finalizer (64-bit avalanche)."""
    x &= _MASK
    x ^= x >> 30
    x = (x * _M1) & _MASK
    x ^= x >> 27
    x = (x * _M2) & _MASK
    x ^= x >> 31
    return x


def stream_key(master_seed: int, purpose: int, path_index: int,
               phase: int = 0, chunk: int = 0) -> int:
    """64-bit Philox key for one (path, phase, chunk) substream."""
    k = mix64(master_seed & _MASK)
    k = mix64(k ^ ((purpose * _GAMMA) & _MASK))
    k = mix64(k ^ ((path_index * _GAMMA) & _MASK))
    k = mix64(k ^ ((phase * _GAMMA) & _MASK))
    k = mix64(k ^ ((chunk * _GAMMA) & _MASK))
    return k


def chunk_normals(out: np.ndarray, master_seed: int, purpose: int,
                  path_indices: np.ndarray, phase: int, chunk: int) -> None:
    """Fill out[j, :] with the standard normals of path_indices[j].

    out must be C-contiguous (n_paths, n_steps) float64.  Row j is the
    chunk'th block of path path_indices[j]'s increment stream in the given
    phase, independent of which other rows are being generated.
    """
    for j, p in enumerate(path_indices):
        key = stream_key(master_seed, purpose, int(p), phase, chunk)
        Generator(Philox(key=key)).standard_normal(out=out[j])


def path_normals(master_seed: int, purpose: int, path_index: int,
                 phase: int, n: int, chunk_size: int) -> np.ndarray:
    """First n standard normals of one path's stream (reference access).

    Concatenates whole chunks so the values agree bit for bit with what
    chunk_normals produces for any chunk partition of the same stream.
    """
    n_chunks = (n + chunk_size - 1) // chunk_size
    buf = np.empty((n_chunks, chunk_size))
    for c in range(n_chunks):
        key = stream_key(master_seed, purpose, path_index, phase, c)
        Generator(Philox(key=key)).standard_normal(out=buf[c])
    return buf.ravel()[:n]


def indexed_uniforms(master_seed: int, purpose: int, round_index: int,
                     n_paths: int) -> np.ndarray:
    """Uniforms u[p], one per path index, for a numbered draw round.

    Used by the tail-completion samplers: round r, path p always receives
    the same uniform regardless of which paths needed completion.
    """
    key = stream_key(master_seed, purpose, 0, round_index, 0)
    return Generator(Philox(key=key)).random(n_paths)


def indexed_exponentials(master_seed: int, purpose: int, round_index: int,
                         n_paths: int) -> np.ndarray:
    """Exp(1) variates indexed by path, one fixed draw round."""
    u = indexed_uniforms(master_seed, purpose, round_index, n_paths)
    # 1 - u is in (0, 1]; log is finite
    return -np.log1p(-u)
