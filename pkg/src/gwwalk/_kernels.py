"""Compiled inner loops: lazy tree expansion, walks, trap returns, regenerations.

Tree and walk randomness live in separate counter streams (see ``rng``), so
the same tree seed with different walk seeds gives quenched replicates.
"""
import numpy as np
from numba import njit

from .rng import child_key, mix64, record_uniform, root_key, stream_uniform, trap_root_key, GOLDEN


@njit(cache=True, inline="always")
def draw_index(cdf, u):
    i = 0
    n = cdf.shape[0] - 1
    while i < n and u >= cdf[i]:
        i += 1
    return i


@njit(cache=True)
def vertex_record(key, backbone, jk, jj, jcdf, tsup, tcdf):
    """(total children, backbone children) of the vertex with this key."""
    u = record_uniform(key)
    if backbone:
        i = draw_index(jcdf, u)
        return jk[i], jj[i]
    i = draw_index(tcdf, u)
    return tsup[i], 0


@njit(cache=True, inline="always")
def choose_move(u, c, beta, at_root):
    """-1 for the parent, otherwise the child index."""
    if at_root:
        idx = np.int64(u * c)
        return idx if idx < c else c - 1
    pp = 1.0 / (1.0 + beta * c)
    if u < pp:
        return -1
    idx = np.int64((u - pp) / (1.0 - pp) * c)
    return idx if idx < c else c - 1


@njit(cache=True, nogil=True)
def walk_on_tree(tree_seed, walk_seed, beta, n, jk, jj, jcdf, tsup, tcdf,
                 levels, flags, moves, degree):
    """beta-biased walk from the root of the lazily generated conditioned tree.

    Fills levels[0..n], flags[0..n] (1 on backbone), moves[0..n-1] (-1 =
    parent, else child index) and degree[0..n] (children of X_t).
    """
    cap = n + 2
    keys = np.empty(cap, dtype=np.uint64)
    tot = np.empty(cap, dtype=np.int64)
    bb = np.empty(cap, dtype=np.int64)
    isbb = np.empty(cap, dtype=np.uint8)
    keys[0] = root_key(tree_seed)
    isbb[0] = 1
    tot[0], bb[0] = vertex_record(keys[0], True, jk, jj, jcdf, tsup, tcdf)
    d = 0
    levels[0] = 0
    flags[0] = 1
    degree[0] = tot[0]
    for t in range(n):
        u = stream_uniform(walk_seed, t)
        m = choose_move(u, tot[d], beta, d == 0)
        if m < 0:
            d -= 1
        else:
            k = child_key(keys[d], m)
            onbb = isbb[d] == 1 and m < bb[d]
            d += 1
            keys[d] = k
            isbb[d] = 1 if onbb else 0
            tot[d], bb[d] = vertex_record(k, onbb, jk, jj, jcdf, tsup, tcdf)
        moves[t] = m
        levels[t + 1] = d
        flags[t + 1] = isbb[d]
        degree[t + 1] = tot[d]


@njit(cache=True, nogil=True)
def final_levels(tree_seed, walk_seeds, beta, n, checkpoints, jk, jj, jcdf, tsup, tcdf, out):
    """|X_t| at each checkpoint for one walk per seed on a single tree.

    ``out`` has shape (len(walk_seeds), len(checkpoints)); checkpoints sorted
    ascending, all <= n.
    """
    cap = n + 2
    keys = np.empty(cap, dtype=np.uint64)
    tot = np.empty(cap, dtype=np.int64)
    bb = np.empty(cap, dtype=np.int64)
    isbb = np.empty(cap, dtype=np.uint8)
    rk = root_key(tree_seed)
    r_tot, r_bb = vertex_record(rk, True, jk, jj, jcdf, tsup, tcdf)
    ncp = checkpoints.shape[0]
    for w in range(walk_seeds.shape[0]):
        ws = walk_seeds[w]
        keys[0] = rk
        isbb[0] = 1
        tot[0] = r_tot
        bb[0] = r_bb
        d = 0
        c = 0
        while c < ncp and checkpoints[c] == 0:
            out[w, c] = 0
            c += 1
        for t in range(n):
            u = stream_uniform(ws, t)
            m = choose_move(u, tot[d], beta, d == 0)
            if m < 0:
                d -= 1
            else:
                k = child_key(keys[d], m)
                onbb = isbb[d] == 1 and m < bb[d]
                d += 1
                keys[d] = k
                isbb[d] = 1 if onbb else 0
                tot[d], bb[d] = vertex_record(k, onbb, jk, jj, jcdf, tsup, tcdf)
            while c < ncp and checkpoints[c] == t + 1:
                out[w, c] = d
                c += 1


@njit(cache=True, nogil=True)
def trap_return_times(seeds, walk_seeds, beta, time_cap, tsup, tcdf, tau, censored):
    """First return to the added parent of the lazily grown h-tree, per seed.

    Depth 0 is the added vertex (its only neighbour is the trap root).
    """
    cap = 64
    keys = np.empty(cap, dtype=np.uint64)
    tot = np.empty(cap, dtype=np.int64)
    for s in range(seeds.shape[0]):
        keys[1] = trap_root_key(seeds[s])
        tot[1] = tsup[draw_index(tcdf, record_uniform(keys[1]))]
        ws = walk_seeds[s]
        d = 1
        t = 1
        cens = False
        while d > 0:
            if t >= time_cap:
                cens = True
                break
            u = stream_uniform(ws, t - 1)
            m = choose_move(u, tot[d], beta, False)
            if m < 0:
                d -= 1
            else:
                if d + 1 >= cap:
                    cap *= 2
                    nk = np.empty(cap, dtype=np.uint64)
                    nt = np.empty(cap, dtype=np.int64)
                    nk[:d + 1] = keys[:d + 1]
                    nt[:d + 1] = tot[:d + 1]
                    keys = nk
                    tot = nt
                k = child_key(keys[d], m)
                d += 1
                keys[d] = k
                tot[d] = tsup[draw_index(tcdf, record_uniform(k))]
            t += 1
        tau[s] = t
        censored[s] = cens


@njit(cache=True)
def seed_sequence(base, n):
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = mix64(base + np.uint64(i + 1) * GOLDEN)
    return out


@njit(cache=True)
def regeneration_scan(levels):
    """Indices k >= 1 with |Y_j| < |Y_k| <= |Y_l| for all j < k <= l < len.

    One pass: a strict record is pushed, and any later level below a stacked
    candidate pops it.  Stack levels increase, so pops come off the top.
    """
    n = levels.shape[0]
    stack = np.empty(n, dtype=np.int64)
    top = 0
    best = levels[0]
    for k in range(1, n):
        lv = levels[k]
        while top > 0 and levels[stack[top - 1]] > lv:
            top -= 1
        if lv > best:
            best = lv
            stack[top] = k
            top += 1
    return stack[:top].copy()
