"""Filtered entity ranking and triple classification.

A "model" here is anything with ``candidate_scores(k, entity, side)`` and
``score_triples(triples)``: trained parameter containers and
:class:`kgbilinear.ensemble.EnsembleModel` both qualify.
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kb import RelationCategory, Triple, relation_categories, true_triple_index
from .training import NegativeSamplingError, sample_negative

SIDES = ("subject", "object")
HITS_KS = (1, 3, 10)


@dataclass(frozen=True)
class RankResult:
    triple: Triple
    side: str
    filtered_rank: int
    raw_rank: int


@dataclass
class MetricsSummary:
    mrr: float
    hits_at_k: dict
    mr: float
    n_queries: int
    per_category: dict = field(default_factory=dict)

    def key_values(self):
        """Machine-readable ``key=value`` lines (percentages, one decimal for rates)."""
        lines = [f"queries={self.n_queries}", f"mrr={100 * self.mrr:.1f}"]
        for k in sorted(self.hits_at_k):
            lines.append(f"hits{k}={100 * self.hits_at_k[k]:.1f}")
        lines.append(f"mr={self.mr:.1f}")
        for side in SIDES:
            for cat in RelationCategory:
                v = self.per_category.get((cat, side))
                if v is not None:
                    lines.append(f"cat.{side}.{cat.slug}.hits10={100 * v:.1f}")
        return lines

    def table(self, label="model"):
        """Aligned text tables: overall metrics, then HITS@10 per category."""
        w = max(len(label), len("Relations"))
        out = [f"{'Model':<{w}}  {'HITS@10 (%)':>11}  {'MRR (%)':>7}  {'MR':>8}",
               f"{label:<{w}}  {100 * self.hits_at_k.get(10, float('nan')):>11.1f}  "
               f"{100 * self.mrr:>7.1f}  {self.mr:>8.1f}"]
        if self.per_category:
            cats = list(RelationCategory)
            out.append("")
            out.append(f"{'Task':<{w}}  " + f"{'Predict subject':^27}  " + f"{'Predict object':^27}")
            out.append(f"{'Relations':<{w}}  "
                       + "  ".join(f"{c.value:>5}" for c in cats) + "    "
                       + "  ".join(f"{c.value:>5}" for c in cats))
            cells = []
            for side in SIDES:
                for c in cats:
                    v = self.per_category.get((c, side))
                    cells.append("    -" if v is None else f"{100 * v:>5.1f}")
            out.append(f"{label:<{w}}  " + "  ".join(cells[:4]) + "    " + "  ".join(cells[4:]))
        return "\n".join(out)


@dataclass
class ThresholdTable:
    sigma: dict
    global_sigma: float

    def get(self, k):
        return self.sigma.get(int(k), self.global_sigma)


def _filter_mask(index, triple, side, n_entities):
    i, k, j = triple
    mask = np.zeros(n_entities, dtype=bool)
    if side == "object":
        known, true = index.known_objects(i, k), j
    else:
        known, true = index.known_subjects(k, j), i
    mask[known] = True
    mask[true] = False
    return mask, true


def rank_query(model, kb, triple, side, index=None):
    """Raw and filtered rank of the true entity for one query side.

    Rank is one plus the number of candidates with a strictly higher score.
    The filtered rank ignores candidates (other than the true entity) that
    form a known triple in any split.
    """
    index = index or true_triple_index(kb)
    triple = Triple(*map(int, triple))
    i, k, j = triple
    fixed = i if side == "object" else j
    scores = np.asarray(model.candidate_scores(k, fixed, side), dtype=np.float64)
    mask, true = _filter_mask(index, triple, side, kb.n_entities)
    higher = scores > scores[true]
    raw = 1 + int(higher.sum())
    filtered = 1 + int((higher & ~mask).sum())
    return RankResult(triple, side, filtered, raw)


def rank_queries(model, kb, split="test", index=None, threads=1):
    """Rank both sides of every triple in ``split``; returns RankResults."""
    index = index or true_triple_index(kb)
    rows = kb.split(split) if isinstance(split, str) else np.asarray(split).reshape(-1, 3)
    queries = [(tuple(t), side) for t in rows.tolist() for side in SIDES]

    def run(q):
        return rank_query(model, kb, q[0], q[1], index)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(run, queries))
    return [run(q) for q in queries]


def summarize(results, categories=None):
    """Aggregate RankResults into a :class:`MetricsSummary`."""
    if not results:
        raise ValueError("no queries to summarize")
    ranks = np.array([r.filtered_rank for r in results], dtype=np.float64)
    n = len(ranks)
    # fsum is exactly rounded, so the result does not depend on query order
    hits = {k: int(np.count_nonzero(ranks <= k)) / n for k in HITS_KS}
    per_cat = {}
    if categories is not None:
        groups = {}
        for res in results:
            cat = categories.get(res.triple.relation)
            if cat is not None:
                groups.setdefault((cat, res.side), []).append(res.filtered_rank)
        per_cat = {key: int(np.count_nonzero(np.array(v) <= 10)) / len(v)
                   for key, v in groups.items()}
    return MetricsSummary(math.fsum(1.0 / ranks) / n, hits, math.fsum(ranks) / n, n, per_cat)


def evaluate_ranking(model, kb, split="test", index=None, threads=1):
    """Filtered MRR, HITS@{1,3,10}, MR and per-category HITS@10 over a split."""
    if len(kb.split(split)) == 0:
        raise ValueError(f"split {split!r} is empty")
    results = rank_queries(model, kb, split, index, threads)
    return summarize(results, relation_categories(kb))


def per_relation_hits(results, k=10):
    """HITS@k grouped by relation id."""
    groups = {}
    for res in results:
        groups.setdefault(res.triple.relation, []).append(res.filtered_rank <= k)
    return {rel: float(np.mean(v)) for rel, v in groups.items()}


# ---------------------------------------------------------------------------
# triple classification

def build_classification_set(kb, split, seed):
    """Positives of ``split`` plus one perturbed negative each.

    Negatives are resampled until they are absent from every split. Returns
    an (n, 4) int64 array of ``subject, relation, object, label``.
    """
    index = true_triple_index(kb)
    rng = np.random.default_rng(seed)
    rows = []
    for t in kb.split(split).tolist():
        rows.append((*t, 1))
        for _ in range(100):
            neg = sample_negative(kb, t, rng, index)
            if not index.contains(*neg):
                rows.append((*neg, 0))
                break
        else:
            raise NegativeSamplingError(f"no unseen negative for {tuple(t)}")
    return np.array(rows, dtype=np.int64).reshape(-1, 4)


def write_classification_set(kb, rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["subject", "relation", "object", "label"])
        for i, k, j, y in rows.tolist():
            w.writerow([kb.entity_names[i], kb.relation_names[k], kb.entity_names[j], y])


def read_classification_set(kb, path):
    ent = {n: i for i, n in enumerate(kb.entity_names)}
    rel = {n: i for i, n in enumerate(kb.relation_names)}
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        for rec in reader:
            rows.append((ent[rec["subject"]], rel[rec["relation"]], ent[rec["object"]],
                         int(rec["label"])))
    return np.array(rows, dtype=np.int64).reshape(-1, 4)


def threshold_candidates(scores):
    """Midpoints of adjacent distinct scores plus both infinities."""
    s = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (s[:-1] + s[1:]) / 2.0
    return np.concatenate([[-np.inf], mids, [np.inf]])


def accuracy_at(scores, labels, sigma):
    pred = np.asarray(scores) > sigma
    return float(np.mean(pred == np.asarray(labels).astype(bool)))


def best_threshold(scores, labels):
    """Accuracy-maximising threshold; ties go to the smallest threshold.

    Accuracy only changes when the threshold crosses a score value, so the
    candidate set covers every achievable accuracy.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    order = np.argsort(scores, kind="stable")
    s, y = scores[order], labels[order]
    distinct, first = np.unique(s, return_index=True)
    # negatives at or below each distinct value / positives strictly above it
    neg_le = np.cumsum(~y)[np.r_[first[1:] - 1, len(s) - 1]]
    pos_gt = y.sum() - np.cumsum(y)[np.r_[first[1:] - 1, len(s) - 1]]
    correct = np.concatenate([[y.sum()], neg_le + pos_gt])
    cands = threshold_candidates(s)
    # candidate m>0 sits just above distinct[m-1]
    best = int(np.argmax(correct))
    return float(cands[best]), float(correct[best] / len(s))


def select_thresholds(model, rows):
    """Per-relation thresholds maximising accuracy on a labelled set."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    if len(rows) == 0:
        raise ValueError("empty classification set")
    scores = np.asarray(model.score_triples(rows[:, :3]), dtype=np.float64)
    labels = rows[:, 3]
    global_sigma, _ = best_threshold(scores, labels)
    sigma = {}
    for k in np.unique(rows[:, 1]):
        sel = rows[:, 1] == k
        sigma[int(k)], _ = best_threshold(scores[sel], labels[sel])
    return ThresholdTable(sigma, global_sigma)


def classify_triples(model, thresholds, rows):
    """Accuracy of ``score > sigma_k`` decisions on a labelled set."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    if len(rows) == 0:
        raise ValueError("empty classification set")
    scores = np.asarray(model.score_triples(rows[:, :3]), dtype=np.float64)
    sig = np.array([thresholds.get(k) for k in rows[:, 1]])
    return float(np.mean((scores > sig) == rows[:, 3].astype(bool)))
