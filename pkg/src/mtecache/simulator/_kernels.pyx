# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled replay loops for the reactive baselines."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def lru_hits(const cnp.int64_t[::1] seq, Py_ssize_t capacity, Py_ssize_t n_ids):
    """Hit flag per request for an LRU cache of ``capacity`` items.

    Recency is a doubly linked list threaded through arrays indexed by id.
    """
    cdef Py_ssize_t n = seq.shape[0], i, size = 0
    cdef cnp.int64_t c, head = -1, tail = -1, victim, p, q
    out = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] hits = out
    if capacity <= 0 or n == 0:
        return out
    prev_a = np.full(n_ids, -1, dtype=np.int64)
    next_a = np.full(n_ids, -1, dtype=np.int64)
    cached_a = np.zeros(n_ids, dtype=np.uint8)
    cdef cnp.int64_t[::1] prev = prev_a
    cdef cnp.int64_t[::1] nxt = next_a
    cdef cnp.uint8_t[::1] cached = cached_a

    for i in range(n):
        c = seq[i]
        if cached[c]:
            hits[i] = 1
            if head == c:
                continue
            # unlink c
            p = prev[c]
            q = nxt[c]
            nxt[p] = q
            if q >= 0:
                prev[q] = p
            else:
                tail = p
        else:
            if size == capacity:
                victim = tail
                tail = prev[victim]
                if tail >= 0:
                    nxt[tail] = -1
                else:
                    head = -1
                cached[victim] = 0
                size -= 1
            cached[c] = 1
            size += 1
        # push c at the head
        prev[c] = -1
        nxt[c] = head
        if head >= 0:
            prev[head] = c
        head = c
        if tail < 0:
            tail = c
    return out


def lfu_hits(const cnp.int64_t[::1] seq, Py_ssize_t capacity, Py_ssize_t n_ids):
    """Hit flag per request for an LFU cache of ``capacity`` items.

    Counts persist across evictions. Every miss is inserted; the victim has
    the lowest count, ties going to the least recently used.
    """
    cdef Py_ssize_t n = seq.shape[0], i, j, size = 0, best
    cdef cnp.int64_t c, s
    out = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] hits = out
    if capacity <= 0 or n == 0:
        return out
    count_a = np.zeros(n_ids, dtype=np.int64)
    last_a = np.zeros(n_ids, dtype=np.int64)
    slot_a = np.full(n_ids, -1, dtype=np.int64)
    slots_a = np.zeros(capacity, dtype=np.int64)
    cdef cnp.int64_t[::1] count = count_a
    cdef cnp.int64_t[::1] last = last_a
    cdef cnp.int64_t[::1] slot_of = slot_a
    cdef cnp.int64_t[::1] slots = slots_a

    for i in range(n):
        c = seq[i]
        count[c] += 1
        last[c] = i
        if slot_of[c] >= 0:
            hits[i] = 1
            continue
        if size < capacity:
            slots[size] = c
            slot_of[c] = size
            size += 1
            continue
        best = 0
        for j in range(1, capacity):
            s = slots[j]
            if count[s] < count[slots[best]] or (
                count[s] == count[slots[best]] and last[s] < last[slots[best]]
            ):
                best = j
        slot_of[slots[best]] = -1
        slots[best] = c
        slot_of[c] = best
    return out
