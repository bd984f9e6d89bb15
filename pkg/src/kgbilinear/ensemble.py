"""Relation-level stacking of base-model scores.

For every relation a logistic regression is fitted on the base models'
scores of its training positives and an equal number of perturbed
negatives. Each score feature is rescaled linearly into [0, 1] using bounds
computed per (relation, model) on that meta dataset; at prediction time the
rescaled features are clamped to [0, 1].
"""

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .kb import true_triple_index
from .models import load_model
from .training import NegativeSamplingError, sample_negative

log = logging.getLogger(__name__)

ENSEMBLE_HEADER = "KGB-ENSEMBLE 1"
DEFAULT_REG = 1.0


@dataclass
class RescaleBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if np.any(self.lower > self.upper):
            raise ValueError("rescale bounds need lower <= upper")

    def apply(self, X):
        """Rescale features to [0, 1] and clamp; constant features map to 0."""
        X = np.asarray(X, dtype=np.float64)
        span = self.upper - self.lower
        safe = np.where(span > 0, span, 1.0)
        Z = np.where(span > 0, (X - self.lower) / safe, 0.0)
        return np.clip(Z, 0.0, 1.0)


@dataclass(frozen=True)
class MetaExample:
    triple: tuple
    label: int
    features: np.ndarray


@dataclass
class MetaDataset:
    relation: int
    examples: list
    bounds: RescaleBounds

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, idx):
        return self.examples[idx]


@dataclass
class RelationEnsemble:
    weights: np.ndarray
    bias: float
    bounds: RescaleBounds

    def decision(self, raw_scores):
        """``w . phi + b`` for raw base scores of shape (n, n_models)."""
        return self.bounds.apply(raw_scores) @ self.weights + self.bias


def _base_scores(base_models, triples):
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return np.stack([np.asarray(m.score_triples(triples), dtype=np.float64)
                     for m in base_models], axis=1)


def build_meta_dataset(kb, base_models, k, seed, index=None):
    """Balanced meta examples for relation ``k`` with rescaled features.

    Returns None (and logs a warning) when no negative can be sampled.
    """
    rows = kb.train[kb.train[:, 1] == k]
    if len(rows) == 0:
        raise ValueError(f"relation {k} has no training triples")
    index = index or true_triple_index(kb)
    rng = np.random.default_rng([seed, k])
    triples, labels = [], []
    try:
        for t in rows.tolist():
            triples.append(tuple(t))
            labels.append(1)
            triples.append(tuple(sample_negative(kb, t, rng, index)))
            labels.append(0)
    except NegativeSamplingError as exc:
        log.warning("relation %d skipped: %s", k, exc)
        return None
    raw = _base_scores(base_models, triples)
    bounds = RescaleBounds(raw.min(axis=0), raw.max(axis=0))
    feats = bounds.apply(raw)
    examples = [MetaExample(t, y, f) for t, y, f in zip(triples, labels, feats)]
    return MetaDataset(int(k), examples, bounds)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _objective(theta, X1, y, reg):
    z = X1 @ theta
    # sum of log(1 + exp(z)) - y z, computed stably
    nll = np.sum(np.logaddexp(0.0, z) - y * z)
    w = theta[:-1]
    return nll + 0.5 * reg * (w @ w)


def fit_logreg(examples, reg=DEFAULT_REG, tol=1e-6, max_iter=10_000, trace=None):
    """L2-regularised logistic regression ``(w, b)`` on meta examples.

    Minimises ``sum NLL + reg/2 |w|^2`` (bias unpenalised) with Newton
    directions and Armijo backtracking, falling back to the negative gradient
    when the Newton direction is not a descent direction. Stops when the
    gradient infinity-norm is below ``tol``. Objective values per iteration
    are appended to ``trace`` if given.
    """
    X = np.array([e.features for e in examples], dtype=np.float64)
    y = np.array([e.label for e in examples], dtype=np.float64)
    if len(X) < 2 or y.min() == y.max():
        raise ValueError("logistic regression needs both classes present")
    n, m = X.shape
    X1 = np.hstack([X, np.ones((n, 1))])
    penalty = np.full(m + 1, reg)
    penalty[-1] = 0.0
    theta = np.zeros(m + 1)
    f = _objective(theta, X1, y, reg)
    if trace is not None:
        trace.append(f)
    for _ in range(max_iter):
        p = _sigmoid(X1 @ theta)
        g = X1.T @ (p - y) + penalty * theta
        if np.max(np.abs(g)) <= tol:
            break
        H = (X1 * (p * (1 - p))[:, None]).T @ X1 + np.diag(penalty)
        try:
            d = -np.linalg.solve(H + 1e-12 * np.eye(m + 1), g)
        except np.linalg.LinAlgError:
            d = -g
        if g @ d >= 0:
            d = -g
        step = 1.0
        while True:
            cand = theta + step * d
            fc = _objective(cand, X1, y, reg)
            if fc <= f + 1e-4 * step * (g @ d) or step < 1e-20:
                break
            step *= 0.5
        if fc > f:
            break
        theta, f = cand, fc
        if trace is not None:
            trace.append(f)
    return theta[:-1].copy(), float(theta[-1])


def ensemble_label(base_models):
    """Short name such as ``R+H+T`` in canonical model order."""
    order = "RHCDT"
    letters = sorted((m.kind.letter for m in base_models), key=order.index)
    return "+".join(letters)


@dataclass
class EnsembleModel:
    """Per-relation stacked scorer over a fixed list of base models."""

    base_models: list
    relations: dict = field(default_factory=dict)
    fallback: int = 0
    model_ids: list = None

    def __post_init__(self):
        if len(self.base_models) < 2:
            raise ValueError("an ensemble needs at least two base models")
        if self.model_ids is None:
            self.model_ids = [f"{m.kind.label.lower()}{n}" for n, m in enumerate(self.base_models)]

    @property
    def label(self):
        return ensemble_label(self.base_models)

    @property
    def n_entities(self):
        return self.base_models[0].n_entities

    def _combine(self, k, raw):
        rel = self.relations.get(int(k))
        if rel is None:
            return raw[:, self.fallback]
        return rel.decision(raw)

    def candidate_scores(self, k, entity, side):
        raw = np.stack([np.asarray(m.candidate_scores(k, entity, side), dtype=np.float64)
                        for m in self.base_models], axis=1)
        return self._combine(k, raw)

    def score_triples(self, triples):
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        raw = _base_scores(self.base_models, triples)
        out = np.empty(len(triples))
        for k in np.unique(triples[:, 1]):
            sel = triples[:, 1] == k
            out[sel] = self._combine(k, raw[sel])
        return out

    def score(self, i, k, j):
        return float(self.score_triples([(i, k, j)])[0])


def ensemble_score(ens, base_models, i, k, j):
    """Stacked score of one triple: ``w . phi + b`` with clamped features."""
    raw = _base_scores(base_models, [(i, k, j)])
    rel = ens.relations.get(int(k)) if isinstance(ens, EnsembleModel) else ens
    if rel is None:
        return float(raw[0, ens.fallback])
    return float(rel.decision(raw)[0])


def best_single_model(kb, base_models, split="valid"):
    """Index of the base model with the highest filtered HITS@10 on ``split``."""
    from .evaluation import evaluate_ranking

    if len(kb.split(split)) == 0:
        return 0
    hits = [evaluate_ranking(m, kb, split).hits_at_k[10] for m in base_models]
    return int(np.argmax(hits))


def train_ensemble(kb, base_models, seed, reg=DEFAULT_REG, fallback=None, model_ids=None):
    """Fit one stacked logistic model per relation.

    Relations without training triples or without sampleable negatives use
    the fallback model's raw scores (by default the base model with the best
    validation HITS@10).
    """
    if len(base_models) < 2:
        raise ValueError("an ensemble needs at least two base models")
    index = true_triple_index(kb)
    relations = {}
    skipped = []
    for k in range(kb.n_relations):
        if not np.any(kb.train[:, 1] == k):
            skipped.append(k)
            continue
        data = build_meta_dataset(kb, base_models, k, seed, index)
        if data is None:
            skipped.append(k)
            continue
        w, b = fit_logreg(data.examples, reg)
        relations[k] = RelationEnsemble(w, b, data.bounds)
    if fallback is None:
        fallback = best_single_model(kb, base_models) if skipped else 0
    return EnsembleModel(list(base_models), relations, fallback, model_ids)


# ---------------------------------------------------------------------------
# persistence

def save_ensemble(ens, path):
    """Text format: header, model ids, fallback, then one line per relation."""
    lines = [ENSEMBLE_HEADER, "models\t" + "\t".join(ens.model_ids),
             f"fallback\t{ens.fallback}"]
    for k in sorted(ens.relations):
        rel = ens.relations[k]
        fields = [str(k)]
        fields += [f"{v:.17g}" for v in rel.bounds.lower]
        fields += [f"{v:.17g}" for v in rel.bounds.upper]
        fields += [f"{v:.17g}" for v in rel.weights]
        fields.append(f"{rel.bias:.17g}")
        lines.append("relation\t" + "\t".join(fields))
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_ensemble(path, base_models=None):
    """Read an ensemble file.

    Model ids are paths relative to the ensemble file; they are loaded unless
    ``base_models`` is supplied.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != ENSEMBLE_HEADER:
        raise ValueError(f"{path}: not an ensemble file (expected header {ENSEMBLE_HEADER!r})")
    model_ids, fallback, relations = None, 0, {}
    for line in lines[1:]:
        parts = line.split("\t")
        if parts[0] == "models":
            model_ids = parts[1:]
        elif parts[0] == "fallback":
            fallback = int(parts[1])
        elif parts[0] == "relation":
            m = len(model_ids)
            vals = [float(v) for v in parts[2:]]
            if len(vals) != 3 * m + 1:
                raise ValueError(f"{path}: relation line has {len(vals)} values, expected {3 * m + 1}")
            relations[int(parts[1])] = RelationEnsemble(
                np.array(vals[2 * m:3 * m]), vals[3 * m],
                RescaleBounds(vals[:m], vals[m:2 * m]))
    if model_ids is None:
        raise ValueError(f"{path}: missing models line")
    if base_models is None:
        base = os.path.dirname(os.path.abspath(path))
        base_models = [load_model(os.path.join(base, mid)) for mid in model_ids]
    return EnsembleModel(list(base_models), relations, fallback, model_ids)

