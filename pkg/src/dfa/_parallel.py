"""Chunked data-parallel map over the leading axis of arrays.

The worker count comes from the ``DFA_THREADS`` environment variable
(default 1). Results are concatenated in input order, so output never
depends on scheduling.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def n_threads():
    try:
        return max(1, int(os.environ.get("DFA_THREADS", "1")))
    except ValueError:
        return 1


def chunked_map(fn, *arrays, chunk=4096):
    """Apply ``fn`` to aligned row chunks of ``arrays`` and concatenate outputs.

    ``fn`` may return one array or a tuple of arrays; each output is joined
    along axis 0.
    """
    n = len(arrays[0])
    bounds = [(i, min(i + chunk, n)) for i in range(0, n, chunk)] or [(0, 0)]
    pieces = [tuple(a[lo:hi] for a in arrays) for lo, hi in bounds]
    workers = n_threads()
    if workers == 1 or len(pieces) == 1:
        outs = [fn(*p) for p in pieces]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(lambda p: fn(*p), pieces))
    if isinstance(outs[0], tuple):
        return tuple(np.concatenate(parts, axis=0) for parts in zip(*outs))
    return np.concatenate(outs, axis=0)
