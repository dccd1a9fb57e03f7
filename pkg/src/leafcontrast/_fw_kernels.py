"""Numba kernels for the cache-blocked Floyd-Warshall closure.

Three phases per pivot block: the pivot diagonal block, the blocks sharing
its row or column, then every remaining block. Within a phase each block
only reads blocks finalised in an earlier phase, so the result is the same
for any thread count or schedule.
"""
import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the TBB shipped with some distributions is too old for numba
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(cache=True, nogil=True)
def _relax_block(d, i0, i1, j0, j1, k0, k1):
    for k in range(k0, k1):
        for i in range(i0, i1):
            dik = d[i, k]
            if dik == np.inf:
                continue
            for j in range(j0, j1):
                s = dik + d[k, j]
                if s < d[i, j]:
                    d[i, j] = s


@njit(cache=True, parallel=True)
def blocked_closure(d, block):
    n = d.shape[0]
    nb = (n + block - 1) // block
    for kb in range(nb):
        k0 = kb * block
        k1 = min(k0 + block, n)
        _relax_block(d, k0, k1, k0, k1, k0, k1)
        # pivot row blocks and pivot column blocks
        for t in prange(2 * nb):
            b = t // 2
            if b == kb:
                continue
            b0 = b * block
            b1 = min(b0 + block, n)
            if t % 2 == 0:
                _relax_block(d, k0, k1, b0, b1, k0, k1)
            else:
                _relax_block(d, b0, b1, k0, k1, k0, k1)
        for t in prange(nb * nb):
            ib = t // nb
            jb = t % nb
            if ib == kb or jb == kb:
                continue
            i0 = ib * block
            j0 = jb * block
            _relax_block(d, i0, min(i0 + block, n), j0, min(j0 + block, n), k0, k1)
    return d


def max_threads():
    return numba.config.NUMBA_NUM_THREADS
