import numpy as np

from ._common import (
    BYZ, BYZ_FALSE, BYZ_TRUTH, HONEST, VERIFY_OBSTRUCT,
    CELL_FALSE_RIGHT, CELL_FALSE_WRONG, CELL_TRUE_CLEAN, CELL_TRUE_GARBLED,
    EV_A1, EV_A2, EV_A3, EV_B1, EV_B2, EV_TOTAL,
)


def _draw_roles(u, beta, half_split):
    if half_split:
        return np.where(u < 0.5, BYZ_FALSE, np.where(u < beta, BYZ_TRUTH, HONEST))
    return np.where(u < beta, BYZ, HONEST)


def _wrong(u, eps, size, sent):
    w = np.minimum((u / eps * (size - 1)).astype(np.int64), size - 2)
    return np.where(w >= sent, w + 1, w)


def _wrong_scalar(u, eps, size, sent):
    w = min(int(u / eps * (size - 1)), size - 2)
    return w + 1 if w >= sent else w


def session_ideal(rng, chunks, false_chunks, lie_levels, half_split, space, j, k,
                  eps1, eps2, beta, offset, verify_mode, max_attempts, counts):
    v = chunks.shape[0]
    i = attempts = error = 0
    need_new = True
    role = HONEST
    while i < v:
        if attempts >= max_attempts:
            return 1, attempts, 1
        attempts += 1
        c = int(chunks[i])
        if need_new:
            role = int(_draw_roles(np.float64(rng.random()), beta, half_split))
            need_new = False
        if role == BYZ_FALSE:
            s = int(false_chunks[i])
        elif role == BYZ and lie_levels[i] != 0:
            s = (c + offset) % space
        else:
            s = c
        u = rng.random()
        chat = _wrong_scalar(u, eps1, space, s) if u < eps1 else s
        bc = int(rng.random() * j)
        bh = bc if chat == c else int(rng.random() * j)
        bf = bc
        if half_split:
            cf = int(false_chunks[i])
            if cf == chat:
                bf = bh
            elif cf != c:
                bf = int(rng.random() * j)

        rv = rng.random(k)
        nv = rng.random(k)
        vr = _draw_roles(rv, beta, half_split)
        sent = np.full(k, bc, dtype=np.int64)
        sent[vr == BYZ_FALSE] = bf
        if chat != c and verify_mode != 0:
            sent[vr == BYZ] = bh
        elif verify_mode == VERIFY_OBSTRUCT and role == HONEST:
            sent[vr == BYZ] = (bc + 1) % j
        if j > 1 and eps2 > 0:
            noisy = nv < eps2
            dec = np.where(noisy, _wrong(nv, eps2, j, sent), sent)
        else:
            dec = sent
        matches = int(np.count_nonzero(dec == bh))
        true_votes = int(np.count_nonzero(dec == bc))

        accept = 2 * matches > k
        garbled = chat != s
        if s == c:
            cell = CELL_TRUE_GARBLED if garbled else CELL_TRUE_CLEAN
        else:
            cell = CELL_FALSE_WRONG if chat != c else CELL_FALSE_RIGHT
        row = counts[cell]
        row[EV_TOTAL] += 1
        row[EV_A2] += 2 * true_votes <= k
        row[EV_A3] += chat != c and bh == bc
        row[EV_A1] += garbled
        if accept:
            if chat != c:
                row[EV_B2] += 1
                error = 1
            i += 1
        else:
            row[EV_B1] += 1
            need_new = True
    return error, attempts, 0


def mdp_walks(rng, honest_cuts, lie_cuts, length_mode, policy, v, start, beta, n_walks, max_rounds):
    level = np.zeros(n_walks, dtype=np.int64)
    byz = np.zeros(n_walks, dtype=np.int8)
    steps = np.zeros(n_walks, dtype=np.int64)
    err = np.zeros(n_walks, dtype=np.int8)
    if start == 1:
        byz[:] = 1
    elif start == 2:
        byz[:] = rng.random(n_walks) < beta
    policy = np.asarray(policy)
    active = np.arange(n_walks)
    rounds = 0
    while active.size and rounds < max_rounds:
        rounds += 1
        u = rng.random(active.size)
        lv = level[active]
        b = byz[active]
        steps[active] += 1
        lying = (b == 1) & (policy[np.minimum(lv, v - 1)] != 0)
        honest = ~lying
        hit = np.where(lying, u < lie_cuts[0], u < honest_cuts[0])
        to_byz = np.where(lying, (u >= lie_cuts[0]) & (u < lie_cuts[1]),
                          (u >= honest_cuts[0]) & (u < honest_cuts[1]))
        to_honest = np.where(lying, u >= lie_cuts[1],
                             (u >= honest_cuts[1]) & (u < honest_cuts[2]))
        advance_rest = honest & (u >= honest_cuts[2])
        if length_mode:
            lv = lv + hit
            done = lv >= v
        else:
            err[active] = hit
            lv = lv + advance_rest
            done = hit | (lv >= v)
        b = np.where(to_byz, 1, np.where(to_honest, 0, b)).astype(np.int8)
        level[active] = lv
        byz[active] = b
        active = active[~done]
    return err, steps, active.size
