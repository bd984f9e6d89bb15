"""Dense ranks, rounding and consistency of scoring matrices.

Rank 1 always belongs to the highest score. Equal scores (compared exactly,
without tolerance) share a rank and ranks have no gaps.
"""

import numpy as np


def _as_scores(S):
    S = np.asarray(S, dtype=np.float64)
    if np.isnan(S).any():
        raise ValueError("score matrix contains NaN")
    if not np.isfinite(S).all():
        raise ValueError("score matrix contains non-finite entries")
    return S


def dense_rank(S):
    """Return the ranking matrix of a scoring matrix.

    Parameters
    ----------
    S : array_like, shape (N, N)
        Real scores.

    Returns
    -------
    numpy.ndarray of int64, same shape as ``S``
        ``s_ij <= s_i'j'`` iff ``P_ij >= P_i'j'``; the maximum gets 1.
    """
    S = _as_scores(S)
    values, inverse = np.unique(S, return_inverse=True)
    return (len(values) - inverse.reshape(S.shape)).astype(np.int64)


def dense_rank_tensor(T):
    """Slice-wise :func:`dense_rank` of a (K, N, N) score tensor."""
    T = _as_scores(T)
    if T.ndim != 3:
        raise ValueError(f"expected a (K, N, N) tensor, got shape {T.shape}")
    return np.stack([dense_rank(T[k]) for k in range(T.shape[0])])


def is_ranking_matrix(P):
    """Check the range and density invariants of a ranking matrix."""
    P = np.asarray(P)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.size == 0:
        return False
    if not np.issubdtype(P.dtype, np.integer):
        if not np.all(np.equal(np.mod(P, 1), 0)):
            return False
    n_cells = P.size
    if P.min() < 1 or P.max() > n_cells:
        return False
    present = np.unique(P)
    # dense: every value 1..max occurs
    return len(present) == int(present[-1])


def is_ranking_tensor(P):
    P = np.asarray(P)
    return P.ndim == 3 and all(is_ranking_matrix(P[k]) for k in range(P.shape[0]))


def round_tau(x, tau=0.5):
    """1 where ``x >= tau`` else 0; works on scalars and arrays."""
    out = (np.asarray(x) >= tau).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def is_consistent(S, B):
    """Whether every 1-cell of ``B`` is ranked strictly above every 0-cell.

    Only comparisons within one matrix are made. Boolean matrices without
    both cell classes are trivially consistent.
    """
    S = _as_scores(S)
    B = np.asarray(B).astype(bool)
    if S.shape != B.shape:
        raise ValueError(f"shape mismatch: scores {S.shape} vs boolean {B.shape}")
    if B.all() or not B.any():
        return True
    return bool(S[B].min() > S[~B].max())


def is_consistent_tensor(T, B):
    """Slice-wise consistency for (K, N, N) tensors."""
    T = np.asarray(T)
    B = np.asarray(B)
    return all(is_consistent(T[k], B[k]) for k in range(T.shape[0]))
