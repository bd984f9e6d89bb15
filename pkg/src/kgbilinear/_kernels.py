"""Compiled per-triple score/gradient kernels and the SGD epoch loop.

All models are handled in a packed layout: an entity matrix ``E`` of shape
(N, de) and a relation matrix ``W`` of shape (K, dw).

=========  ====  =====  ============================================
kind       de    dw     packing
=========  ====  =====  ============================================
RESCAL     r     r*r    W[k] = R_k row-major
DISTMULT   r     r      W[k] = r_k
HolE       r     r      W[k] = r_k
ComplEx    2r    2r     E[i] = (Re a_i, Im a_i), W[k] = (Re r_k, Im r_k)
TransE     r     r      W[k] = r_k
=========  ====  =====  ============================================
"""

import numba
import numpy as np

RESCAL, DISTMULT, HOLE, COMPLEX, TRANSE = 0, 1, 2, 3, 4

# status codes returned by train_epochs
OK = 0
NEGATIVE_SAMPLING_FAILED = 1

MAX_NEGATIVE_ATTEMPTS = 100


@numba.njit(cache=True)
def score(kind, r, ei, w, ej):
    s = 0.0
    if kind == RESCAL:
        for a in range(r):
            acc = 0.0
            for b in range(r):
                acc += w[a * r + b] * ej[b]
            s += ei[a] * acc
    elif kind == DISTMULT:
        for t in range(r):
            s += w[t] * ei[t] * ej[t]
    elif kind == HOLE:
        for t in range(r):
            acc = 0.0
            for u in range(r):
                acc += ei[u] * ej[(t + u) % r]
            s += w[t] * acc
    elif kind == COMPLEX:
        for t in range(r):
            xi, yi = ei[t], ei[r + t]
            xj, yj = ej[t], ej[r + t]
            p, q = w[t], w[r + t]
            s += p * (xi * xj - yi * yj) - q * (xi * yj + yi * xj)
    else:
        for t in range(r):
            d = ei[t] + w[t] - ej[t]
            s -= d * d
    return s


@numba.njit(cache=True)
def grad_add(kind, r, ei, w, ej, coef, gi, gw, gj):
    """Add ``coef`` times the score gradient into ``gi``, ``gw``, ``gj``."""
    if kind == RESCAL:
        for a in range(r):
            acc = 0.0
            for b in range(r):
                acc += w[a * r + b] * ej[b]
                gw[a * r + b] += coef * ei[a] * ej[b]
            gi[a] += coef * acc
        for b in range(r):
            acc = 0.0
            for a in range(r):
                acc += ei[a] * w[a * r + b]
            gj[b] += coef * acc
    elif kind == DISTMULT:
        for t in range(r):
            gi[t] += coef * w[t] * ej[t]
            gj[t] += coef * w[t] * ei[t]
            gw[t] += coef * ei[t] * ej[t]
    elif kind == HOLE:
        for t in range(r):
            acc = 0.0
            for u in range(r):
                acc += ei[u] * ej[(t + u) % r]
            gw[t] += coef * acc
        for u in range(r):
            acc = 0.0
            for t in range(r):
                acc += w[t] * ej[(t + u) % r]
            gi[u] += coef * acc
        for v in range(r):
            acc = 0.0
            for t in range(r):
                acc += w[t] * ei[(v - t) % r]
            gj[v] += coef * acc
    elif kind == COMPLEX:
        for t in range(r):
            xi, yi = ei[t], ei[r + t]
            xj, yj = ej[t], ej[r + t]
            p, q = w[t], w[r + t]
            gi[t] += coef * (p * xj - q * yj)
            gi[r + t] += coef * (-p * yj - q * xj)
            gj[t] += coef * (p * xi - q * yi)
            gj[r + t] += coef * (-p * yi - q * xi)
            gw[t] += coef * (xi * xj - yi * yj)
            gw[r + t] -= coef * (xi * yj + yi * xj)
    else:
        for t in range(r):
            d = ei[t] + w[t] - ej[t]
            gi[t] -= coef * 2.0 * d
            gw[t] -= coef * 2.0 * d
            gj[t] += coef * 2.0 * d


@numba.njit(cache=True)
def _f_and_slope(s, use_sigmoid):
    if use_sigmoid:
        f = 1.0 / (1.0 + np.exp(-s))
        return f, f * (1.0 - f)
    return s, 1.0


@numba.njit(cache=True)
def sgd_step(kind, r, E, W, accE, accW, i, k, j, ni, nj,
             gamma, eta, lam_e, lam_r, use_sigmoid, eps):
    """One hinge/L2/Adagrad update for a positive and its negative.

    Returns the hinge loss before the update.
    """
    de = E.shape[1]
    f_pos, d_pos = _f_and_slope(score(kind, r, E[i], W[k], E[j]), use_sigmoid)
    f_neg, d_neg = _f_and_slope(score(kind, r, E[ni], W[k], E[nj]), use_sigmoid)
    loss = f_neg + gamma - f_pos
    if loss < 0.0:
        loss = 0.0

    rows = np.array([i, j, ni, nj])
    gE = np.zeros((4, de))
    gW = np.zeros(W.shape[1])
    if loss > 0.0:
        grad_add(kind, r, E[i], W[k], E[j], -d_pos, gE[0], gW, gE[1])
        grad_add(kind, r, E[ni], W[k], E[nj], d_neg, gE[2], gW, gE[3])

    # merge duplicate entity rows into their first slot
    owner = np.arange(4)
    for s in range(1, 4):
        for t in range(s):
            if owner[t] == t and rows[t] == rows[s]:
                owner[s] = t
                for c in range(de):
                    gE[t, c] += gE[s, c]
                break

    for s in range(4):
        if owner[s] != s:
            continue
        e = rows[s]
        for c in range(de):
            g = gE[s, c] + lam_e * E[e, c]
            if g != 0.0:
                accE[e, c] += g * g
                E[e, c] -= eta * g / (np.sqrt(accE[e, c]) + eps)
    for c in range(W.shape[1]):
        g = gW[c] + lam_r * W[k, c]
        if g != 0.0:
            accW[k, c] += g * g
            W[k, c] -= eta * g / (np.sqrt(accW[k, c]) + eps)
    return loss


@numba.njit(cache=True)
def _is_known(keys, key):
    pos = np.searchsorted(keys, key)
    return pos < keys.shape[0] and keys[pos] == key


@numba.njit(cache=True, nogil=True)
def train_epochs(kind, r, E, W, accE, accW, triples, train_keys, n_entities, n_relations,
                 gamma, eta, lam_e, lam_r, epochs, seed, use_sigmoid, eps, losses):
    """Run ``epochs`` passes of shuffled single-triple SGD in place.

    Fills ``losses`` with the mean hinge loss per epoch. Returns
    ``(status, failing_row)``.
    """
    np.random.seed(seed)
    n = triples.shape[0]
    for epoch in range(epochs):
        order = np.random.permutation(n)
        total = 0.0
        for idx in range(n):
            row = order[idx]
            i, k, j = triples[row, 0], triples[row, 1], triples[row, 2]
            found = False
            ni, nj = i, j
            for _ in range(MAX_NEGATIVE_ATTEMPTS):
                replace_subject = np.random.random() < 0.5
                e = np.random.randint(0, n_entities)
                if replace_subject:
                    ni, nj = e, j
                else:
                    ni, nj = i, e
                key = (ni * n_relations + k) * n_entities + nj
                if not _is_known(train_keys, key):
                    found = True
                    break
            if not found:
                return NEGATIVE_SAMPLING_FAILED, row
            total += sgd_step(kind, r, E, W, accE, accW, i, k, j, ni, nj,
                              gamma, eta, lam_e, lam_r, use_sigmoid, eps)
        losses[epoch] = total / n if n > 0 else 0.0
    return OK, -1
