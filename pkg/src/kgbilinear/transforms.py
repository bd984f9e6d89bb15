"""Constructive model transformations and their numerical verification.

Each transformation maps parameters of one model family to another such
that per-relation rankings (and in most cases the scores themselves) are
preserved. ``verify_*`` functions run seeded random trials and return a
:class:`TransformReport`.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .models import (PARAM_TYPES, ComplexParams, ModelKind, RescalParams, init_params,
                     score_matrix, score_tensor)
from .ranking import (dense_rank, dense_rank_tensor, is_consistent, is_ranking_tensor,
                      round_tau)


class TransformError(ValueError):
    pass


@dataclass
class TransformReport:
    theorem: str
    source: str
    source_size: str
    target: str
    target_size: str
    trials: int = 0
    max_rank_mismatch: int = 0
    max_score_residual: float = 0.0
    failures: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return not self.failures

    def key_values(self):
        lines = [f"theorem={self.theorem}", f"source={self.source}",
                 f"source_size={self.source_size}", f"target={self.target}",
                 f"target_size={self.target_size}", f"trials={self.trials}",
                 f"max_rank_mismatch={self.max_rank_mismatch}",
                 f"max_score_residual={self.max_score_residual:.3e}"]
        lines += [f"{k}={v}" for k, v in self.extra.items()]
        lines.append(f"status={'pass' if self.passed else 'fail'}")
        return lines

    def text(self):
        out = [f"{self.theorem}: {self.source} (size {self.source_size}) -> "
               f"{self.target} (size {self.target_size})",
               f"  trials: {self.trials}",
               f"  max rank mismatch: {self.max_rank_mismatch}",
               f"  max score residual: {self.max_score_residual:.3e}"]
        out += [f"  note: {n}" for n in self.notes]
        out += [f"  FAIL seed={f['seed']}: {f['reason']}" for f in self.failures]
        out.append(f"  result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(out)


# ---------------------------------------------------------------------------
# subsumption constructions

def transe_to_rescal(p):
    """Lift a size-r TransE model to a size-(2r+1) RESCAL model.

    Entity rows become ``(1_r, a_i, a_i.a_i)`` and the RESCAL score equals the
    TransE score plus the per-relation constant ``r_k . r_k``.
    """
    N, r, K = p.n_entities, p.dim, p.n_relations
    A = p.A
    A2 = np.hstack([np.ones((N, r)), A, np.sum(A * A, axis=1, keepdims=True)])
    R2 = np.zeros((K, 2 * r + 1, 2 * r + 1))
    ones, emb, last = slice(0, r), slice(r, 2 * r), 2 * r
    for k in range(K):
        inner = np.zeros((2 * r + 1, 2 * r + 1))
        inner[ones, emb] = -2.0 * np.diag(p.R[k])
        inner[0, last] = 1.0
        inner[emb, ones] = 2.0 * np.diag(p.R[k])
        inner[emb, emb] = -2.0 * np.eye(r)
        inner[last, 0] = 1.0
        R2[k] = -inner
    return RescalParams(A2, R2)


def transe_offsets(p):
    """Per-relation constants ``c_k`` with ``s_rescal = s_transe + c_k``."""
    return np.sum(p.R * p.R, axis=1)


def hole_to_rescal(p):
    """Circulant relation matrices: row t is ``r_k`` cyclically shifted right by t."""
    r = p.dim
    idx = (np.arange(r)[None, :] - np.arange(r)[:, None]) % r
    return RescalParams(p.A.copy(), p.R[:, idx])


def distmult_to_rescal(p):
    K, r = p.R.shape
    R = np.zeros((K, r, r))
    R[:, np.arange(r), np.arange(r)] = p.R
    return RescalParams(p.A.copy(), R)


def complex_to_rescal(p):
    """Real block form of size 2r reproducing the (unconjugated) ComplEx score."""
    K, r = p.R_re.shape
    A = np.hstack([p.A_re, p.A_im])
    R = np.zeros((K, 2 * r, 2 * r))
    d = np.arange(r)
    R[:, d, d] = p.R_re
    R[:, d, r + d] = -p.R_im
    R[:, r + d, d] = -p.R_im
    R[:, r + d, r + d] = -p.R_re
    return RescalParams(A, R)


# ---------------------------------------------------------------------------
# universality and consistency

def rescal_universal(P):
    """Size-N RESCAL model whose ranking tensor is exactly ``P`` (K, N, N)."""
    P = np.asarray(P)
    if not is_ranking_tensor(P):
        raise TransformError("input is not a valid ranking tensor")
    K, N, _ = P.shape
    return RescalParams(np.eye(N), -P.astype(np.float64))


def trivial_factorization(B):
    """``L = I``, ``Q = B^T`` so that ``L Q^T = B`` (rank N)."""
    B = np.asarray(B, dtype=np.float64)
    return np.eye(B.shape[0]), B.T.copy()


def rescal_consistent(B, factorizations=None, tau=0.5):
    """RESCAL model with ``round(A R_k A^T) = B_k`` on every slice.

    ``factorizations`` is a list of ``(L_k, Q_k)`` pairs with
    ``round(L_k Q_k^T) = B_k``; missing entries use the trivial factorization.
    The model size is ``2 * sum_k rank_k``.
    """
    B = np.asarray(B).astype(np.int8)
    if B.ndim != 3:
        raise TransformError(f"expected a (K, N, N) boolean tensor, got shape {B.shape}")
    K, N, _ = B.shape
    factorizations = list(factorizations) if factorizations is not None else [None] * K
    if len(factorizations) != K:
        raise TransformError(f"need {K} factorizations, got {len(factorizations)}")
    blocks = []
    for k, fac in enumerate(factorizations):
        L, Q = trivial_factorization(B[k]) if fac is None else (np.asarray(fac[0], float),
                                                                 np.asarray(fac[1], float))
        if L.shape[0] != N or Q.shape[0] != N or L.shape[1] != Q.shape[1]:
            raise TransformError(f"slice {k}: factor shapes {L.shape}, {Q.shape} do not fit N={N}")
        if not np.array_equal(round_tau(L @ Q.T, tau), B[k]):
            raise TransformError(f"slice {k}: round(L Q^T) != B_k")
        blocks.append((L, Q))
    sizes = [L.shape[1] for L, _ in blocks]
    r = 2 * sum(sizes)
    A = np.hstack([np.hstack([L, Q]) for L, Q in blocks]) if r else np.zeros((N, 0))
    R = np.zeros((K, r, r))
    offset = 0
    for k, rk in enumerate(sizes):
        R[k, offset:offset + rk, offset + rk:offset + 2 * rk] = np.eye(rk)
        offset += 2 * rk
    if r == 0:
        # all factors empty: degenerate zero model of size 1
        return RescalParams(np.zeros((N, 1)), np.zeros((K, 1, 1)))
    return RescalParams(A, R)


def _mgs(V):
    """Modified Gram-Schmidt on the columns of a complex matrix."""
    Q = np.array(V, dtype=np.complex128)
    n = Q.shape[1]
    for a in range(n):
        for b in range(a):
            Q[:, a] -= (np.vdot(Q[:, b], Q[:, a])) * Q[:, b]
        Q[:, a] /= np.linalg.norm(Q[:, a])
    return Q


def unitary_diagonalize(Z, tol=1e-9):
    """``Z = U diag(d) U^*`` for a normal matrix ``Z``.

    Uses the eigenvectors orthonormalised by modified Gram-Schmidt; falls
    back to the complex Schur form if the result is not accurate to ``tol``.
    """
    Z = np.asarray(Z, dtype=np.complex128)
    try:
        vals, vecs = np.linalg.eig(Z)
    except np.linalg.LinAlgError as exc:
        raise TransformError(f"eigendecomposition failed: {exc}") from exc
    order = np.lexsort((vals.imag, vals.real))
    U = _mgs(vecs[:, order])
    d = np.einsum("ij,ik,kj->j", U.conj(), Z, U)
    scale = max(1.0, np.abs(Z).max())
    if np.abs(U @ np.diag(d) @ U.conj().T - Z).max() <= tol * scale:
        return U, d
    T, U = scipy.linalg.schur(Z, output="complex")
    return U, np.diag(T).copy()


def complex_consistent(B, S=None, tol=1e-6):
    """ComplEx model of size K*N reproducing a consistent score tensor.

    Each slice uses ``S_k`` (default ``B_k``) and the normal matrix
    ``Z_k = S_k + i S_k^T``. The returned parameters reproduce ``S_k`` under
    the conjugated score ``Re(a_i^T diag(r_k) conj(a_j))``; use
    ``score_matrix(p, k, conjugate=True)``. Returns ``(params, diagnostics)``.
    """
    B = np.asarray(B).astype(np.int8)
    K, N, _ = B.shape
    S = B.astype(np.float64) if S is None else np.asarray(S, dtype=np.float64)
    A = np.zeros((N, K * N), dtype=np.complex128)
    R = np.zeros((K, K * N), dtype=np.complex128)
    normality, reconstruction = 0.0, 0.0
    for k in range(K):
        Z = S[k] + 1j * S[k].T
        normality = max(normality, np.abs(Z @ Z.conj().T - Z.conj().T @ Z).max())
        U, d = unitary_diagonalize(Z)
        A[:, k * N:(k + 1) * N] = U
        R[k, k * N:(k + 1) * N] = d
    p = ComplexParams.from_complex(A, R)
    consistent = True
    for k in range(K):
        Sk = score_matrix(p, k, conjugate=True)
        reconstruction = max(reconstruction, np.abs(Sk - S[k]).max())
        consistent &= is_consistent(Sk, B[k])
    if reconstruction > tol:
        raise TransformError(f"reconstruction residual {reconstruction:.3e} exceeds {tol}")
    return p, {"normality_residual": normality, "reconstruction_residual": reconstruction,
               "consistent": consistent}


# ---------------------------------------------------------------------------
# obstructions

def diagonal_ranks_constant(p):
    """True iff, for every relation, all diagonal cells share one dense rank."""
    for k in range(p.n_relations):
        diag = np.diag(dense_rank(score_matrix(p, k)))
        if not np.all(diag == diag[0]):
            return False
    return True


def check_transe_obstruction(p):
    """TransE property: diagonal ranks are constant per relation (always true)."""
    return diagonal_ranks_constant(p)


def transe_obstruction_witness(r=2, n_entities=2, n_relations=1):
    """RESCAL model with ``s_1(1,1) = 1`` and ``s_1(2,2) = 0``; no TransE model matches it."""
    if r < 2 or n_entities < 2:
        raise ValueError("witness needs r >= 2 and at least 2 entities")
    A = np.zeros((n_entities, r))
    A[0, 0] = 1.0
    A[1, 1] = 1.0
    R = np.zeros((n_relations, r, r))
    R[0, :2, :2] = [[1.0, 1.0], [1.0, 0.0]]
    return RescalParams(A, R)


def check_distmult_obstruction(B):
    """True iff ``B`` is asymmetric, so no DISTMULT model is consistent with it."""
    B = np.asarray(B).astype(bool)
    return bool(np.any(B != B.T))


# ---------------------------------------------------------------------------
# randomized verification

def _rank_mismatch(S1, S2):
    return int(np.count_nonzero(dense_rank_tensor(S1) != dense_rank_tensor(S2)))


def _random_sizes(rng, max_n, max_r, max_k=3):
    return int(rng.integers(2, max_n + 1)), int(rng.integers(1, max_r + 1)), int(rng.integers(1, max_k + 1))


def dyadic(rng, shape, denom=8, bound=2):
    """Random multiples of ``1/denom`` in ``[-bound, bound]``.

    Small dyadic rationals make every score in the verifiers exactly
    representable, so rank ties survive floating-point evaluation.
    """
    return rng.integers(-bound * denom, bound * denom + 1, size=shape) / denom


def _fail(report, seed, reason, **counterexample):
    report.failures.append({"seed": seed, "reason": reason,
                            "counterexample": {k: np.asarray(v).tolist()
                                               for k, v in counterexample.items()}})


_SOURCES = {
    "transe-to-rescal": (ModelKind.TRANSE, transe_to_rescal, 1e-9, "2r+1", []),
    "hole-to-rescal": (ModelKind.HOLE, hole_to_rescal, 1e-9, "r", []),
    "distmult-to-rescal": (ModelKind.DISTMULT, distmult_to_rescal, 1e-9, "r", []),
    "complex-to-rescal": (ModelKind.COMPLEX, complex_to_rescal, 1e-12, "2r",
                          ["direct real block form of size 2r; the bound via HolE is 2r+1"]),
}


def _make_params(kind, N, r, K, draw):
    cls = PARAM_TYPES[kind]
    arrays = [draw((N, r)) for _ in cls.entity_fields]
    arrays += [draw((K, r)) for _ in cls.relation_fields]
    return cls(*arrays)


def verify_subsumption(theorem, trials=100, max_n=8, max_r=4, seed=0):
    """Lift random models to RESCAL and compare scores and rankings.

    Every trial checks two instances of the same size: one with dyadic
    parameters, where scores are exact and rankings (including ties) must
    agree cell for cell, and one with Gaussian parameters, where the score
    residual must stay within the tolerance. For TransE the lifted score is
    compared after removing the per-relation offset ``r_k . r_k``.
    """
    kind, convert, tol, target_size, notes = _SOURCES[theorem]
    rep = TransformReport(theorem, kind.label, "r", "RESCAL", target_size, notes=list(notes))
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        N, r, K = _random_sizes(rng, max_n, max_r)
        exact = _make_params(kind, N, r, K, lambda s: dyadic(rng, s))
        noisy = _make_params(kind, N, r, K, lambda s: rng.normal(size=s))
        rep.trials += 1
        for label, p in (("dyadic", exact), ("gaussian", noisy)):
            q = convert(p)
            Ss, Sr = score_tensor(p), score_tensor(q)
            if kind == ModelKind.TRANSE:
                Sr = Sr - transe_offsets(p)[:, None, None]
            resid = float(np.abs(Ss - Sr).max())
            rep.max_score_residual = max(rep.max_score_residual, resid)
            if resid > tol:
                _fail(rep, t, f"{label} instance: score residual {resid:.3e} > {tol}",
                      **{f: getattr(p, f) for f in p.fields})
            if label == "dyadic":
                mism = _rank_mismatch(Ss, score_tensor(q))
                rep.max_rank_mismatch = max(rep.max_rank_mismatch, mism)
                if mism:
                    _fail(rep, t, f"dyadic instance: {mism} rank mismatches",
                          **{f: getattr(p, f) for f in p.fields})
    return rep


def verify_transe_to_rescal(trials=100, max_n=8, max_r=4, seed=0):
    return verify_subsumption("transe-to-rescal", trials, max_n, max_r, seed)


def verify_hole_to_rescal(trials=100, max_n=8, max_r=4, seed=0):
    return verify_subsumption("hole-to-rescal", trials, max_n, max_r, seed)


def verify_distmult_to_rescal(trials=100, max_n=8, max_r=4, seed=0):
    return verify_subsumption("distmult-to-rescal", trials, max_n, max_r, seed)


def verify_complex_to_rescal(trials=100, max_n=8, max_r=4, seed=0):
    return verify_subsumption("complex-to-rescal", trials, max_n, max_r, seed)


def random_ranking_tensor(rng, N, K, levels=None):
    """Dense ranking of a random score tensor with deliberate ties."""
    levels = levels or max(2, N)
    T = rng.integers(0, levels, size=(K, N, N)).astype(np.float64)
    return dense_rank_tensor(T)


def verify_universal(trials=50, max_n=6, max_k=3, seed=0):
    rep = TransformReport("universal", "ranking tensor", "N x N x K", "RESCAL", "N")
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        N, K = int(rng.integers(2, max_n + 1)), int(rng.integers(1, max_k + 1))
        P = random_ranking_tensor(rng, N, K, levels=int(rng.integers(1, N * N + 1)))
        q = rescal_universal(P)
        got = dense_rank_tensor(score_tensor(q))
        mism = int(np.count_nonzero(got != P))
        rep.trials += 1
        rep.max_rank_mismatch = max(rep.max_rank_mismatch, mism)
        if mism:
            _fail(rep, t, f"{mism} rank mismatches", P=P)
    return rep


def verify_consistent(trials=50, max_n=10, max_k=3, seed=0):
    rep = TransformReport("consistent", "boolean tensor", "N x N x K", "RESCAL", "2*sum(rank)")
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        N, K = int(rng.integers(2, max_n + 1)), int(rng.integers(1, max_k + 1))
        B = (rng.random((K, N, N)) < rng.uniform(0.1, 0.9)).astype(np.int8)
        q = rescal_consistent(B)
        bad = 0
        for k in range(K):
            S = score_matrix(q, k)
            if not np.array_equal(round_tau(S), B[k]) or not is_consistent(S, B[k]):
                bad += 1
        rep.trials += 1
        rep.max_rank_mismatch = max(rep.max_rank_mismatch, bad)
        if bad:
            _fail(rep, t, f"{bad} slice(s) not reproduced", B=B)
    return rep


def verify_complex_consistent(trials=50, n=6, max_k=3, seed=0):
    rep = TransformReport("complex-consistent", "boolean tensor", "N x N x K", "ComplEx", "KN",
                          notes=["scores use the conjugated form Re(a_i^T diag(r_k) conj(a_j))"])
    worst_norm = 0.0
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        K = int(rng.integers(1, max_k + 1))
        B = (rng.random((K, n, n)) < 0.5).astype(np.int8)
        S = rng.normal(size=(K, n, n)) if t % 2 else None
        try:
            _, diag = complex_consistent(B, S)
        except TransformError as exc:
            _fail(rep, t, str(exc), B=B)
            rep.trials += 1
            continue
        rep.trials += 1
        worst_norm = max(worst_norm, diag["normality_residual"])
        rep.max_score_residual = max(rep.max_score_residual, diag["reconstruction_residual"])
        if diag["normality_residual"] > 1e-9:
            _fail(rep, t, f"normality residual {diag['normality_residual']:.3e}", B=B)
        if S is None and not diag["consistent"]:
            _fail(rep, t, "reconstructed scores are not consistent with B", B=B)
    rep.extra["max_normality_residual"] = f"{worst_norm:.3e}"
    return rep


def verify_obstructions(trials=100, max_n=8, max_r=4, seed=0):
    rep = TransformReport("obstructions", "TransE/DISTMULT", "r", "-", "-")
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        N, r, K = _random_sizes(rng, max_n, max_r)
        pt = init_params(ModelKind.TRANSE, N, K, r, int(rng.integers(2**31)))
        pd = init_params(ModelKind.DISTMULT, N, K, r, int(rng.integers(2**31)))
        rep.trials += 1
        if not check_transe_obstruction(pt):
            _fail(rep, t, "TransE diagonal ranks not constant", A=pt.A, R=pt.R)
        St = score_tensor(pd)
        if not np.array_equal(St, np.transpose(St, (0, 2, 1))):
            _fail(rep, t, "DISTMULT scores not symmetric", A=pd.A, R=pd.R)
    w = transe_obstruction_witness()
    S = score_matrix(w, 0)
    P = dense_rank(S)
    rep.extra.update({"witness_s11": f"{S[0, 0]:g}", "witness_s22": f"{S[1, 1]:g}",
                      "witness_pi11": int(P[0, 0]), "witness_pi22": int(P[1, 1]),
                      "witness_A": np.asarray(w.A).tolist(), "witness_R1": w.R[0].tolist()})
    if P[0, 0] == P[1, 1]:
        _fail(rep, -1, "witness diagonal ranks coincide")
    rep.notes.append("witness RESCAL model (r=2): a_1=e1, a_2=e2, R_1=[[1,1],[1,0]]; "
                     "its diagonal ranks differ, which no TransE model can reproduce")
    return rep


VERIFIERS = {
    "transe-to-rescal": verify_transe_to_rescal,
    "hole-to-rescal": verify_hole_to_rescal,
    "distmult-to-rescal": verify_distmult_to_rescal,
    "complex-to-rescal": verify_complex_to_rescal,
    "universal": verify_universal,
    "consistent": verify_consistent,
    "complex-consistent": verify_complex_consistent,
    "obstructions": verify_obstructions,
}


def verify(theorem, trials, max_n=None, max_r=None, seed=0):
    """Run one verifier with optional size caps; returns a TransformReport."""
    if theorem not in VERIFIERS:
        raise KeyError(f"unknown theorem {theorem!r}; choose from {sorted(VERIFIERS)}")
    fn = VERIFIERS[theorem]
    kwargs = {"trials": trials, "seed": seed}
    if theorem in ("universal", "consistent"):
        if max_n is not None:
            kwargs["max_n"] = max_n
    elif theorem == "complex-consistent":
        if max_n is not None:
            kwargs["n"] = max_n
    else:
        if max_n is not None:
            kwargs["max_n"] = max_n
        if max_r is not None:
            kwargs["max_r"] = max_r
    return fn(**kwargs)
