"""Parameter containers, scores and gradients for the five model families.

Scores follow the convention that larger means more plausible (TransE is
negated). Relation parameters are indexed by relation; entity parameters by
entity.
"""

import enum
import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels

FFT_MIN_DIM = 32


class ModelKind(enum.IntEnum):
    RESCAL = 0
    DISTMULT = 1
    HOLE = 2
    COMPLEX = 3
    TRANSE = 4

    @property
    def letter(self):
        return "RDHCT"[self.value]

    @property
    def label(self):
        return ("RESCAL", "DISTMULT", "HolE", "ComplEx", "TransE")[self.value]

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        aliases = {"rescal": cls.RESCAL, "distmult": cls.DISTMULT, "hole": cls.HOLE,
                   "complex": cls.COMPLEX, "transe": cls.TRANSE}
        if key not in aliases:
            raise ValueError(f"unknown model kind {name!r}; choose from {sorted(aliases)}")
        return aliases[key]


class _Params:
    kind: ModelKind
    entity_fields: tuple
    relation_fields: tuple

    @property
    def fields(self):
        return self.entity_fields + self.relation_fields

    def arrays(self):
        return [getattr(self, f) for f in self.fields]

    @property
    def n_entities(self):
        return getattr(self, self.entity_fields[0]).shape[0]

    @property
    def n_relations(self):
        return getattr(self, self.relation_fields[0]).shape[0]

    @property
    def dim(self):
        return getattr(self, self.entity_fields[0]).shape[1]

    def _check(self):
        for f in self.fields:
            arr = np.ascontiguousarray(getattr(self, f), dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValueError(f"{type(self).__name__}.{f} has non-finite entries")
            object.__setattr__(self, f, arr)
        N, r, K = self.n_entities, self.dim, self.n_relations
        for f in self.entity_fields:
            if getattr(self, f).shape != (N, r):
                raise ValueError(f"{f} must have shape ({N}, {r})")
        rel_shape = (K, r, r) if self.kind == ModelKind.RESCAL else (K, r)
        for f in self.relation_fields:
            if getattr(self, f).shape != rel_shape:
                raise ValueError(f"{f} must have shape {rel_shape}")

    def copy(self):
        return type(self)(*(a.copy() for a in self.arrays()))

    def pack(self):
        """Return contiguous ``(E, W)`` arrays in the compiled-kernel layout."""
        E = np.concatenate([getattr(self, f) for f in self.entity_fields], axis=1)
        W = np.concatenate([getattr(self, f).reshape(self.n_relations, -1)
                            for f in self.relation_fields], axis=1)
        return np.ascontiguousarray(E), np.ascontiguousarray(W)

    # Generic scoring, dispatched to the module-level functions.
    def score(self, i, k, j):
        return _SCORERS[self.kind](self, i, k, j)

    def score_triples(self, triples):
        t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return score_batch(self, t[:, 0], t[:, 1], t[:, 2])

    def candidate_scores(self, k, entity, side):
        return candidate_scores(self, k, entity, side)


@dataclass(eq=False)
class RescalParams(_Params):
    A: np.ndarray
    R: np.ndarray
    kind = ModelKind.RESCAL
    entity_fields = ("A",)
    relation_fields = ("R",)

    def __post_init__(self):
        self._check()


@dataclass(eq=False)
class DistmultParams(_Params):
    A: np.ndarray
    R: np.ndarray
    kind = ModelKind.DISTMULT
    entity_fields = ("A",)
    relation_fields = ("R",)

    def __post_init__(self):
        self._check()


@dataclass(eq=False)
class HolEParams(_Params):
    A: np.ndarray
    R: np.ndarray
    kind = ModelKind.HOLE
    entity_fields = ("A",)
    relation_fields = ("R",)

    def __post_init__(self):
        self._check()


@dataclass(eq=False)
class ComplexParams(_Params):
    """Complex embeddings stored as separate real and imaginary parts."""

    A_re: np.ndarray
    A_im: np.ndarray
    R_re: np.ndarray
    R_im: np.ndarray
    kind = ModelKind.COMPLEX
    entity_fields = ("A_re", "A_im")
    relation_fields = ("R_re", "R_im")

    def __post_init__(self):
        self._check()

    @classmethod
    def from_complex(cls, A, R):
        A = np.asarray(A, dtype=np.complex128)
        R = np.asarray(R, dtype=np.complex128)
        return cls(A.real.copy(), A.imag.copy(), R.real.copy(), R.imag.copy())

    @property
    def A(self):
        return self.A_re + 1j * self.A_im

    @property
    def R(self):
        return self.R_re + 1j * self.R_im


@dataclass(eq=False)
class TransEParams(_Params):
    A: np.ndarray
    R: np.ndarray
    kind = ModelKind.TRANSE
    entity_fields = ("A",)
    relation_fields = ("R",)

    def __post_init__(self):
        self._check()


PARAM_TYPES = {
    ModelKind.RESCAL: RescalParams,
    ModelKind.DISTMULT: DistmultParams,
    ModelKind.HOLE: HolEParams,
    ModelKind.COMPLEX: ComplexParams,
    ModelKind.TRANSE: TransEParams,
}


def unpack(kind, E, W, r):
    """Inverse of :meth:`_Params.pack`."""
    kind = ModelKind(kind)
    K = W.shape[0]
    if kind == ModelKind.COMPLEX:
        return ComplexParams(E[:, :r].copy(), E[:, r:].copy(), W[:, :r].copy(), W[:, r:].copy())
    if kind == ModelKind.RESCAL:
        return RescalParams(E.copy(), W.reshape(K, r, r).copy())
    return PARAM_TYPES[kind](E.copy(), W.copy())


# ---------------------------------------------------------------------------
# circular correlation

def circular_correlation_naive(a, b):
    """``c_t = sum_u a_u * b_{(t+u) mod r}`` by direct double sum."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    r = a.shape[-1]
    out = np.zeros_like(a)
    for t in range(r):
        for u in range(r):
            out[..., t] += a[..., u] * b[..., (t + u) % r]
    return out


def circular_correlation_fft(a, b):
    """Same as the naive sum, via ``ifft(conj(fft(a)) * fft(b))``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    r = a.shape[-1]
    return np.fft.irfft(np.conj(np.fft.rfft(a, axis=-1)) * np.fft.rfft(b, axis=-1), n=r, axis=-1)


def circular_correlation(a, b, method="auto"):
    """Circular correlation along the last axis.

    ``method`` is ``"naive"``, ``"fft"`` or ``"auto"`` (FFT for length >= 32).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if method == "auto":
        method = "fft" if a.shape[-1] >= FFT_MIN_DIM else "naive"
    if method == "fft":
        return circular_correlation_fft(a, b)
    if method == "naive":
        return circular_correlation_naive(a, b)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# scores

def score_rescal(p, i, k, j):
    return float(p.A[i] @ p.R[k] @ p.A[j])


def score_distmult(p, i, k, j):
    # a_i * a_j first, so that s(i, j) == s(j, i) bit for bit
    return float(np.sum(p.R[k] * (p.A[i] * p.A[j])))


def score_hole(p, i, k, j, method="auto"):
    return float(p.R[k] @ circular_correlation(p.A[i], p.A[j], method))


def score_complex(p, i, k, j, conjugate=False):
    """Real part of ``sum_t a_it r_kt a_jt``.

    With ``conjugate=True`` the object embedding is conjugated, giving the
    Hermitian form ``Re(a_i^T diag(r_k) conj(a_j))``.
    """
    aj = np.conj(p.A[j]) if conjugate else p.A[j]
    return float(np.real(np.sum(p.A[i] * p.R[k] * aj)))


def score_transe(p, i, k, j):
    # (a_i - a_j) first, so the diagonal residual is exactly r_k
    d = (p.A[i] - p.A[j]) + p.R[k]
    return float(-np.sum(d * d))


_SCORERS = {
    ModelKind.RESCAL: score_rescal,
    ModelKind.DISTMULT: score_distmult,
    ModelKind.HOLE: score_hole,
    ModelKind.COMPLEX: score_complex,
    ModelKind.TRANSE: score_transe,
}


def score(p, i, k, j):
    return _SCORERS[p.kind](p, i, k, j)


def score_batch(p, i, k, j):
    """Vectorised scores for index arrays ``i``, ``k``, ``j`` (broadcastable)."""
    i, k, j = np.broadcast_arrays(np.asarray(i), np.asarray(k), np.asarray(j))
    kind = p.kind
    if kind == ModelKind.RESCAL:
        return np.einsum("nr,nrs,ns->n", p.A[i], p.R[k], p.A[j])
    if kind == ModelKind.DISTMULT:
        return np.sum(p.R[k] * (p.A[i] * p.A[j]), axis=-1)
    if kind == ModelKind.HOLE:
        return np.sum(p.R[k] * circular_correlation(p.A[i], p.A[j]), axis=-1)
    if kind == ModelKind.COMPLEX:
        xi, yi, xj, yj = p.A_re[i], p.A_im[i], p.A_re[j], p.A_im[j]
        pr, qr = p.R_re[k], p.R_im[k]
        return np.sum(pr * (xi * xj - yi * yj) - qr * (xi * yj + yi * xj), axis=-1)
    d = (p.A[i] - p.A[j]) + p.R[k]
    return -np.sum(d * d, axis=-1)


def candidate_scores(p, k, entity, side):
    """Scores of all N replacements for one side of a query.

    ``side="object"`` scores ``(entity, k, c)`` for every entity ``c``;
    ``side="subject"`` scores ``(c, k, entity)``.
    """
    cand = np.arange(p.n_entities)
    if side == "object":
        return score_batch(p, entity, k, cand)
    if side == "subject":
        return score_batch(p, cand, k, entity)
    raise ValueError(f"side must be 'subject' or 'object', got {side!r}")


def score_matrix(p, k, conjugate=False):
    """Full N x N scoring matrix of relation ``k``."""
    kind = p.kind
    if kind == ModelKind.RESCAL:
        return p.A @ p.R[k] @ p.A.T
    if kind == ModelKind.COMPLEX:
        A = p.A
        right = np.conj(A) if conjugate else A
        return np.real((A * p.R[k]) @ right.T)
    N = p.n_entities
    ii, jj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    return score_batch(p, ii.ravel(), k, jj.ravel()).reshape(N, N)


def score_tensor(p, **kwargs):
    """(K, N, N) scoring tensor; frontal slice k is :func:`score_matrix`."""
    return np.stack([score_matrix(p, k, **kwargs) for k in range(p.n_relations)])


# ---------------------------------------------------------------------------
# gradients

def grad(p, i, k, j):
    """Gradient of the score of ``(i, k, j)`` w.r.t. the touched parameters.

    Returns ``{field: {row: array}}`` with arrays shaped like one row of the
    corresponding field; rows that are not listed have zero gradient. When
    ``i == j`` both contributions are summed into a single row.
    """
    E, W = p.pack()
    r = p.dim
    gi = np.zeros(E.shape[1])
    gj = np.zeros(E.shape[1])
    gw = np.zeros(W.shape[1])
    _kernels.grad_add(int(p.kind), r, E[i], W[k], E[j], 1.0, gi, gw, gj)

    def split_entity(g):
        if p.kind == ModelKind.COMPLEX:
            return {"A_re": g[:r], "A_im": g[r:]}
        return {"A": g}

    out = {f: {} for f in p.fields}
    for row, g in ((i, gi), (j, gj)):
        for f, part in split_entity(g).items():
            if row in out[f]:
                out[f][row] = out[f][row] + part
            else:
                out[f][row] = part.copy()
    if p.kind == ModelKind.COMPLEX:
        out["R_re"][k] = gw[:r].copy()
        out["R_im"][k] = gw[r:].copy()
    elif p.kind == ModelKind.RESCAL:
        out["R"][k] = gw.reshape(r, r).copy()
    else:
        out["R"][k] = gw.copy()
    return out


def dense_grad(p, sparse):
    """Expand a sparse gradient from :func:`grad` to full arrays per field."""
    dense = {f: np.zeros_like(getattr(p, f)) for f in p.fields}
    for f, rows in sparse.items():
        for row, g in rows.items():
            dense[f][row] += g
    return dense


# ---------------------------------------------------------------------------
# initialisation and counting

def init_params(kind, n_entities, n_relations, r, seed):
    """Uniform ``[-1/sqrt(r), 1/sqrt(r)]`` entries from a seeded generator."""
    kind = ModelKind.parse(kind)
    if r < 1:
        raise ValueError(f"dimension must be >= 1, got {r}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(r)
    cls = PARAM_TYPES[kind]
    shapes = []
    for _ in cls.entity_fields:
        shapes.append((n_entities, r))
    for _ in cls.relation_fields:
        shapes.append((n_relations, r, r) if kind == ModelKind.RESCAL else (n_relations, r))
    return cls(*(rng.uniform(-bound, bound, size=s) for s in shapes))


def n_parameters(kind, n_entities, n_relations, r):
    """Parameter count as in the model summary: e.g. ``Nr + Kr^2`` for RESCAL."""
    kind = ModelKind.parse(kind)
    if kind == ModelKind.RESCAL:
        return n_entities * r + n_relations * r * r
    if kind == ModelKind.COMPLEX:
        return 2 * n_entities * r + 2 * n_relations * r
    return n_entities * r + n_relations * r


# ---------------------------------------------------------------------------
# serialization

MAGIC = b"KGBM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIBIII")


class ModelFormatError(ValueError):
    pass


def to_bytes(p):
    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, FORMAT_VERSION, int(p.kind), p.n_entities, p.n_relations, p.dim))
    for arr in p.arrays():
        out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return out.getvalue()


def from_bytes(data):
    if len(data) < _HEADER.size:
        raise ModelFormatError("truncated header")
    magic, version, kind, N, K, r = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    try:
        kind = ModelKind(kind)
    except ValueError:
        raise ModelFormatError(f"unknown model kind {kind}") from None
    cls = PARAM_TYPES[kind]
    shapes = [(N, r)] * len(cls.entity_fields)
    rel = (K, r, r) if kind == ModelKind.RESCAL else (K, r)
    shapes += [rel] * len(cls.relation_fields)
    offset = _HEADER.size
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        if offset + 8 * n > len(data):
            raise ModelFormatError("truncated payload")
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=offset)
                      .reshape(shape).astype(np.float64))
        offset += 8 * n
    if offset != len(data):
        raise ModelFormatError(f"{len(data) - offset} trailing bytes")
    return cls(*arrays)


def _atomic_write(path, data, mode="wb"):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_model(p, path, meta=None):
    """Write the binary model file and a ``<path>.meta`` sidecar.

    ``meta`` holds hyperparameters and the dataset checksum as flat
    ``key = value`` lines.
    """
    _atomic_write(path, to_bytes(p))
    lines = [f"kind = {p.kind.label}", f"entities = {p.n_entities}",
             f"relations = {p.n_relations}", f"dim = {p.dim}"]
    for key, value in (meta or {}).items():
        lines.append(f"{key} = {value}")
    _atomic_write(path + ".meta", "\n".join(lines) + "\n", mode="w")


def load_model(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def read_meta(path):
    """Parse the ``.meta`` sidecar of a model file (empty if missing)."""
    meta = {}
    try:
        with open(path + ".meta", encoding="utf-8") as fh:
            for line in fh:
                if "=" in line:
                    key, value = line.split("=", 1)
                    meta[key.strip()] = value.strip()
    except FileNotFoundError:
        pass
    return meta
