import numpy as np
from numba import njit

from ._common import (
    BYZ, BYZ_FALSE, BYZ_TRUTH, HONEST, VERIFY_COLLUDE, VERIFY_OBSTRUCT,
    CELL_FALSE_RIGHT, CELL_FALSE_WRONG, CELL_TRUE_CLEAN, CELL_TRUE_GARBLED,
    EV_A1, EV_A2, EV_A3, EV_B1, EV_B2, EV_TOTAL,
)

_opts = dict(cache=True, nogil=True)


@njit(**_opts)
def _draw_role(u, beta, half_split):
    if half_split:
        if u < 0.5:
            return BYZ_FALSE
        if u < beta:
            return BYZ_TRUTH
        return HONEST
    if u < beta:
        return BYZ
    return HONEST


@njit(**_opts)
def _wrong(u, eps, size, sent):
    # u < eps, rescaled to a uniform index among the size-1 other symbols
    w = np.int64(u / eps * (size - 1))
    if w > size - 2:
        w = size - 2
    if w >= sent:
        w += 1
    return w


@njit(**_opts)
def session_ideal(rng, chunks, false_chunks, lie_levels, half_split, space, j, k,
                  eps1, eps2, beta, offset, verify_mode, max_attempts, counts):
    v = chunks.shape[0]
    i = 0
    attempts = 0
    error = 0
    need_new = True
    role = HONEST
    rv = np.empty(k)
    nv = np.empty(k)
    while i < v:
        if attempts >= max_attempts:
            return 1, attempts, 1
        attempts += 1
        c = chunks[i]
        if need_new:
            role = _draw_role(rng.random(), beta, half_split)
            need_new = False
        if role == BYZ_FALSE:
            s = false_chunks[i]
        elif role == BYZ and lie_levels[i] != 0:
            s = (c + offset) % space
        else:
            s = c
        u = rng.random()
        chat = _wrong(u, eps1, space, s) if u < eps1 else s
        bc = np.int64(rng.random() * j)
        bh = bc
        if chat != c:
            bh = np.int64(rng.random() * j)
        bf = bc
        if half_split:
            cf = false_chunks[i]
            if cf == chat:
                bf = bh
            elif cf != c:
                bf = np.int64(rng.random() * j)
        for t in range(k):
            rv[t] = rng.random()
        for t in range(k):
            nv[t] = rng.random()
        matches = 0
        true_votes = 0
        for t in range(k):
            vr = _draw_role(rv[t], beta, half_split)
            if vr == BYZ_FALSE:
                sent = bf
            elif vr == BYZ and chat != c and verify_mode != 0:
                sent = bh
            elif vr == BYZ and verify_mode == VERIFY_OBSTRUCT and role == HONEST:
                sent = (bc + 1) % j
            else:
                sent = bc
            if nv[t] < eps2 and j > 1:
                dec = _wrong(nv[t], eps2, j, sent)
            else:
                dec = sent
            if dec == bh:
                matches += 1
            if dec == bc:
                true_votes += 1
        accept = 2 * matches > k
        truthful = s == c
        garbled = chat != s
        if truthful:
            cell = CELL_TRUE_GARBLED if garbled else CELL_TRUE_CLEAN
        else:
            cell = CELL_FALSE_WRONG if chat != c else CELL_FALSE_RIGHT
        counts[cell, EV_TOTAL] += 1
        if 2 * true_votes <= k:
            counts[cell, EV_A2] += 1
        if chat != c and bh == bc:
            counts[cell, EV_A3] += 1
        if garbled:
            counts[cell, EV_A1] += 1
        if accept:
            if chat != c:
                counts[cell, EV_B2] += 1
                error = 1
            i += 1
        else:
            counts[cell, EV_B1] += 1
            need_new = True
    return error, attempts, 0


@njit(**_opts)
def mdp_walks(rng, honest_cuts, lie_cuts, length_mode, policy, v, start, beta, n_walks, max_rounds):
    """Lock-step forward simulation of the MDP; one draw per active walk per round.

    ``honest_cuts`` = (c0, c1, c2) and ``lie_cuts`` = (d0, d1) partition [0, 1)
    into the outcomes listed in the dispatcher.
    """
    level = np.zeros(n_walks, dtype=np.int64)
    byz = np.zeros(n_walks, dtype=np.int8)
    steps = np.zeros(n_walks, dtype=np.int64)
    err = np.zeros(n_walks, dtype=np.int8)
    if start == 1:
        byz[:] = 1
    elif start == 2:
        for w in range(n_walks):
            byz[w] = 1 if rng.random() < beta else 0
    active = np.arange(n_walks)
    n_active = n_walks
    rounds = 0
    while n_active > 0 and rounds < max_rounds:
        rounds += 1
        keep = 0
        for a in range(n_active):
            w = active[a]
            u = rng.random()
            steps[w] += 1
            done = False
            if byz[w] == 1 and policy[level[w]] != 0:
                if u < lie_cuts[0]:
                    if length_mode:
                        level[w] += 1
                    else:
                        err[w] = 1
                        done = True
                elif u >= lie_cuts[1]:
                    byz[w] = 0
            else:
                if u < honest_cuts[0]:
                    if length_mode:
                        level[w] += 1
                    else:
                        err[w] = 1
                        done = True
                elif u < honest_cuts[1]:
                    byz[w] = 1
                elif u < honest_cuts[2]:
                    byz[w] = 0
                elif not length_mode:
                    level[w] += 1
            if level[w] >= v:
                done = True
            if not done:
                active[keep] = w
                keep += 1
        n_active = keep
    return err, steps, n_active
