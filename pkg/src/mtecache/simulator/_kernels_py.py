"""Pure-Python replay loops, used when the compiled module is unavailable."""

from collections import OrderedDict

import numpy as np


def lru_hits(seq, capacity, n_ids=None):
    hits = np.zeros(len(seq), dtype=np.uint8)
    if capacity <= 0:
        return hits
    cache = OrderedDict()
    for i, c in enumerate(seq.tolist()):
        if c in cache:
            hits[i] = 1
            cache.move_to_end(c)
            continue
        if len(cache) >= capacity:
            cache.popitem(last=False)
        cache[c] = None
    return hits


def lfu_hits(seq, capacity, n_ids=None):
    hits = np.zeros(len(seq), dtype=np.uint8)
    if capacity <= 0:
        return hits
    count, last, cache = {}, {}, set()
    for i, c in enumerate(seq.tolist()):
        count[c] = count.get(c, 0) + 1
        last[c] = i
        if c in cache:
            hits[i] = 1
            continue
        if len(cache) >= capacity:
            cache.remove(min(cache, key=lambda k: (count[k], last[k])))
        cache.add(c)
    return hits
