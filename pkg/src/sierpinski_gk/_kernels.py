"""numba event loop for the boundary-driven exclusion process with flips.

All state lives in flat arrays so that one call can simulate a whole
ensemble without returning to the interpreter.  Replica ``r`` is seeded with
``base_seed + r``; the numba RNG is reseeded per replica, which makes every
replica reproducible on its own.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# event classes
K_SWAP = 0
G_ACCEPT = 1
G_REJECT = 2
B_FLIP = 3


@njit(cache=True)
def _code(eta, ball, ball_len, x):
    c = 0
    for k in range(ball_len[x]):
        c |= np.int64(eta[ball[x, k]]) << k
    return c


@njit(cache=True)
def _gval(eta, ball, ball_len, rate_off, rates, x):
    c = rates[rate_off[x] + _code(eta, ball, ball_len, x)]
    return c * (1 - 2 * np.int64(eta[x]))


@njit(cache=True)
def _horner(coef, v):
    out = 0.0
    for k in range(coef.size - 1, -1, -1):
        out = out * v + coef[k]
    return out


@njit(cache=True)
def _toggle_edge(e, dlist, dpos, nd):
    p = dpos[e]
    if p >= 0:
        last = dlist[nd - 1]
        dlist[p] = last
        dpos[last] = p
        dpos[e] = -1
        return nd - 1
    dlist[nd] = e
    dpos[e] = nd
    return nd + 1


@njit(cache=True)
def _block_w(k, c, bS, bG, bcnt, phi_coef):
    n = bcnt[k, c]
    return abs(bG[k, c] / n - _horner(phi_coef, bS[k, c] / n))


@njit(cache=True)
def _flush_cell(r, k, c, t, bS, bG, bcnt, blast, wint, phi_coef, cell_pairs, pair_a, pair_b, plast, pint):
    if blast[k, c] == t:
        return  # already integrated up to t; its pairs were flushed together with it
    wint[r, k, c] += _block_w(k, c, bS, bG, bcnt, phi_coef) * (t - blast[k, c])
    blast[k, c] = t
    for q in range(cell_pairs.shape[2]):
        p = cell_pairs[k, c, q]
        if p < 0:
            continue
        a = pair_a[k, p]
        b = pair_b[k, p]
        diff = abs(bS[k, a] / bcnt[k, a] - bS[k, b] / bcnt[k, b])
        pint[r, k, p] += diff * (t - plast[k, p])
        plast[k, p] = t


@njit(cache=True)
def run_ensemble(
    n_rep, base_seed,
    # graph
    site_edges, edges, n_edges,
    # glauber
    ball, ball_len, rate_off, rates, cmax, glauber_on, rev_ptr, rev_idx,
    # kawasaki / reservoirs
    kaw_rate, bnd_rate, lam_p, lam_m, reservoirs_on,
    # initial law
    rho0, init_state, use_init,
    # horizon and sampling
    T, sample_times,
    # outputs: snapshots and linear observables
    snap_on, snap, obs_F, obs,
    # martingale (F affine in time: F0 + t F1)
    mart_on, F0, F1, LF0, LF1, dF0, dF1, three_N, mart,
    # block diagnostics
    blocks_on, cell_of, one_block, bcnt, phi_coef, pair_a, pair_b, cell_pairs, wint, pint, bmean,
    # bookkeeping
    check_every, counts,
):
    n = rho0.size
    nV = float(n)
    n_samp = sample_times.size
    track_g = glauber_on and (mart_on or blocks_on)
    n_lev = cell_of.shape[0]
    n_cell_max = bcnt.shape[1]
    n_pair_max = pair_a.shape[1]

    eta = np.zeros(n, np.uint8)
    g = np.zeros(n)
    dlist = np.zeros(n_edges, np.int64)
    dpos = np.full(n_edges, -1, np.int64)
    bS = np.zeros((n_lev, n_cell_max))
    bG = np.zeros((n_lev, n_cell_max))
    blast = np.zeros((n_lev, n_cell_max))
    plast = np.zeros((n_lev, n_pair_max))
    n_int = n - 3

    for r in range(n_rep):
        np.random.seed(base_seed + r)
        # ---- initial configuration
        if use_init == 1:
            for x in range(n):
                eta[x] = init_state[x]
        elif use_init == 2:
            # systematic sampling along a random order: exact marginals,
            # particle count within one of the expected count
            perm = np.random.permutation(n)
            acc = np.random.random()
            for x in perm:
                nxt = acc + rho0[x]
                eta[x] = 1 if np.floor(nxt) > np.floor(acc) else 0
                acc = nxt
        else:
            for x in range(n):
                eta[x] = 1 if np.random.random() < rho0[x] else 0
        nd = 0
        for e in range(n_edges):
            dpos[e] = -1
        for e in range(n_edges):
            if eta[edges[e, 0]] != eta[edges[e, 1]]:
                dlist[nd] = e
                dpos[e] = nd
                nd += 1
        if track_g:
            for x in range(3, n):
                g[x] = _gval(eta, ball, ball_len, rate_off, rates, x)
        # martingale sums
        S0 = 0.0
        S1 = 0.0
        A0 = 0.0
        A1 = 0.0
        G0 = 0.0
        G1 = 0.0
        if mart_on:
            for x in range(n):
                if eta[x]:
                    S0 += F0[x]
                    S1 += F1[x]
                    A0 += LF0[x]
                    A1 += LF1[x]
            if track_g:
                for x in range(3, n):
                    G0 += g[x] * F0[x]
                    G1 += g[x] * F1[x]
        m_init = S0 / nV
        integral = 0.0
        integral_c = 0.0
        # blocks
        if blocks_on:
            for k in range(n_lev):
                for c in range(n_cell_max):
                    bS[k, c] = 0.0
                    bG[k, c] = 0.0
                    blast[k, c] = 0.0
                    wint[r, k, c] = 0.0
                for p in range(n_pair_max):
                    plast[k, p] = 0.0
                    pint[r, k, p] = 0.0
                for x in range(n):
                    c = cell_of[k, x]
                    if c >= 0:
                        bS[k, c] += eta[x]
                        if one_block[k, x] and track_g:
                            bG[k, c] += g[x]
            for k in range(n_lev):
                for c in range(n_cell_max):
                    if bcnt[k, c] > 0:
                        bmean[r, k, c] = 0.0

        t = 0.0
        t_c = 0.0
        s_idx = 0
        ev = 0
        glauber_total = cmax * n_int if glauber_on else 0.0

        while True:
            # boundary class rate
            btot = 0.0
            if reservoirs_on:
                for a in range(3):
                    btot += bnd_rate * (lam_m[a] if eta[a] else lam_p[a])
            ktot = kaw_rate * nd
            total = ktot + glauber_total + btot
            if total > 0.0:
                dt = np.random.exponential(1.0 / total)
            else:
                dt = np.inf
            t_next = t + dt

            # martingale integrand on [t, t_next): alpha + beta * s
            alpha = 0.0
            beta = 0.0
            if mart_on:
                pb0 = 0.0
                pb1 = 0.0
                for a in range(3):
                    pb0 += eta[a] * dF0[a]
                    pb1 += eta[a] * dF1[a]
                alpha = S1 + A0 - three_N * pb0
                beta = A1 - three_N * pb1
                if glauber_on:
                    alpha += G0
                    beta += G1
                if reservoirs_on:
                    for a in range(3):
                        ba = bnd_rate * (lam_m[a] * -1.0 if eta[a] else lam_p[a])
                        alpha += ba * F0[a]
                        beta += ba * F1[a]
                alpha /= nV
                beta /= nV

            # samples falling in [t, t_next)
            while s_idx < n_samp and sample_times[s_idx] < t_next:
                ts = sample_times[s_idx]
                if snap_on:
                    for x in range(n):
                        snap[r, s_idx, x] = eta[x]
                for f in range(obs_F.shape[0]):
                    acc = 0.0
                    for x in range(n):
                        if eta[x]:
                            acc += obs_F[f, x]
                    obs[r, s_idx, f] = acc / nV
                if mart_on:
                    part = alpha * (ts - t) + 0.5 * beta * (ts * ts - t * t)
                    mart[r, s_idx] = (S0 + ts * S1) / nV - m_init - (integral + part)
                s_idx += 1

            if t_next >= T:
                if blocks_on:
                    for k in range(n_lev):
                        for c in range(n_cell_max):
                            if bcnt[k, c] > 0:
                                _flush_cell(r, k, c, T, bS, bG, bcnt, blast, wint, phi_coef,
                                            cell_pairs, pair_a, pair_b, plast, pint)
                                bmean[r, k, c] = bS[k, c] / bcnt[k, c]
                break

            if mart_on:
                inc = alpha * (t_next - t) + 0.5 * beta * (t_next * t_next - t * t)
                y = inc - integral_c
                tmp = integral + y
                integral_c = (tmp - integral) - y
                integral = tmp
            # Kahan-compensated clock
            y = dt - t_c
            tmp = t + y
            t_c = (tmp - t) - y
            t = tmp
            ev += 1

            # ---- choose the event
            u = np.random.random() * total
            n_flip = 0
            z0 = -1
            z1 = -1
            if u < ktot:
                e = dlist[np.random.randint(nd)]
                z0 = edges[e, 0]
                z1 = edges[e, 1]
                n_flip = 2
                counts[r, K_SWAP] += 1
            elif u < ktot + glauber_total:
                x = 3 + np.random.randint(n_int)
                c = rates[rate_off[x] + _code(eta, ball, ball_len, x)]
                if np.random.random() * cmax < c:
                    z0 = x
                    n_flip = 1
                    counts[r, G_ACCEPT] += 1
                else:
                    counts[r, G_REJECT] += 1
            else:
                u2 = u - ktot - glauber_total
                for a in range(3):
                    ra = bnd_rate * (lam_m[a] if eta[a] else lam_p[a])
                    if u2 < ra or a == 2:
                        z0 = a
                        break
                    u2 -= ra
                n_flip = 1
                counts[r, B_FLIP] += 1

            if blocks_on:
                # integrate every touched cell up to t before the state changes;
                # kept inline since helper calls with many array arguments are
                # dominated by reference counting
                for q in range(n_flip):
                    z = z0 if q == 0 else z1
                    hi = rev_ptr[z + 1] if track_g else rev_ptr[z]
                    for p in range(rev_ptr[z] - 1, hi):
                        y_ = z if p < rev_ptr[z] else rev_idx[p]
                        for k in range(n_lev):
                            c = cell_of[k, y_]
                            if c < 0 or blast[k, c] == t:
                                continue
                            nc = bcnt[k, c]
                            w = abs(bG[k, c] / nc - _horner(phi_coef, bS[k, c] / nc))
                            wint[r, k, c] += w * (t - blast[k, c])
                            blast[k, c] = t
                            for qq in range(cell_pairs.shape[2]):
                                pp = cell_pairs[k, c, qq]
                                if pp < 0:
                                    continue
                                ca = pair_a[k, pp]
                                cb = pair_b[k, pp]
                                diff = abs(bS[k, ca] / bcnt[k, ca] - bS[k, cb] / bcnt[k, cb])
                                pint[r, k, pp] += diff * (t - plast[k, pp])
                                plast[k, pp] = t

            for q in range(n_flip):
                z = z0 if q == 0 else z1
                if track_g:
                    for p in range(rev_ptr[z], rev_ptr[z + 1]):
                        y_ = rev_idx[p]
                        if mart_on:
                            G0 -= g[y_] * F0[y_]
                            G1 -= g[y_] * F1[y_]
                        if blocks_on:
                            for k in range(n_lev):
                                c = cell_of[k, y_]
                                if c >= 0 and one_block[k, y_]:
                                    bG[k, c] -= g[y_]
                # flip
                sgn = -1.0 if eta[z] else 1.0
                eta[z] ^= 1
                for j in range(site_edges.shape[1]):
                    e = site_edges[z, j]
                    if e >= 0:
                        nd = _toggle_edge(e, dlist, dpos, nd)
                if mart_on:
                    S0 += sgn * F0[z]
                    S1 += sgn * F1[z]
                    A0 += sgn * LF0[z]
                    A1 += sgn * LF1[z]
                if blocks_on:
                    for k in range(n_lev):
                        c = cell_of[k, z]
                        if c >= 0:
                            bS[k, c] += sgn
                if track_g:
                    for p in range(rev_ptr[z], rev_ptr[z + 1]):
                        y_ = rev_idx[p]
                        g[y_] = _gval(eta, ball, ball_len, rate_off, rates, y_)
                        if mart_on:
                            G0 += g[y_] * F0[y_]
                            G1 += g[y_] * F1[y_]
                        if blocks_on:
                            for k in range(n_lev):
                                c = cell_of[k, y_]
                                if c >= 0 and one_block[k, y_]:
                                    bG[k, c] += g[y_]

            if check_every > 0 and ev % check_every == 0:
                cnt = 0
                for e in range(n_edges):
                    disc = eta[edges[e, 0]] != eta[edges[e, 1]]
                    if disc:
                        cnt += 1
                    if disc != (dpos[e] >= 0):
                        raise RuntimeError("discordant-edge cache out of sync")
                if cnt != nd:
                    raise RuntimeError("discordant-edge count out of sync")

        counts[r, 4] = ev
    return 0
