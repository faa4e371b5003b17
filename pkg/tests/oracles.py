"""Brute-force reference implementations shared by unit and acceptance tests."""
import itertools

import numpy as np


def brute_matrix(q, d, n_max):
    """Click-pattern probabilities by enumerating every routing and dark outcome."""
    c = len(q)
    out = np.zeros((1 << c, n_max + 1))
    probs = list(q) + [1.0 - sum(q)]
    for n in range(n_max + 1):
        for route in itertools.product(range(c + 1), repeat=n):
            pr = np.prod([probs[k] for k in route]) if n else 1.0
            lit = 0
            for k in route:
                if k < c:
                    lit |= 1 << k
            for darks in itertools.product((0, 1), repeat=c):
                pd = np.prod([d[i] if darks[i] else 1 - d[i] for i in range(c)])
                mask = lit | sum(1 << i for i in range(c) if darks[i])
                out[mask, n] += pr * pd
    return out


def brute_pair_counts(stream, i, j, binning):
    """Delay histogram from the full outer difference of two channels."""
    a = stream.channel_times(i).astype(np.int64)
    c = stream.channel_times(j).astype(np.int64)
    d = (c[None, :] - a[:, None]).ravel()
    d = d[np.abs(d) <= binning.max_delay_ticks]
    return np.bincount(binning.bin_of(d) + binning.n_side, minlength=2 * binning.n_side + 1)
