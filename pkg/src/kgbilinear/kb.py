"""Entity/relation dictionaries, triple splits and relation categories."""

import enum
import hashlib
import logging
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class KBParseError(ValueError):
    """Malformed triple file."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class Triple(NamedTuple):
    subject: int
    relation: int
    object: int


class RelationCategory(enum.Enum):
    ONE_TO_ONE = "1:1"
    ONE_TO_MANY = "1:N"
    MANY_TO_ONE = "N:1"
    MANY_TO_MANY = "N:N"

    @property
    def slug(self):
        return {"1:1": "1to1", "1:N": "1toN", "N:1": "Nto1", "N:N": "NtoN"}[self.value]


CATEGORY_THRESHOLD = 1.5


def _as_triple_array(triples):
    arr = np.asarray(list(triples) if not isinstance(triples, np.ndarray) else triples,
                     dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"triples must have shape (n, 3), got {arr.shape}")
    return arr


def _dedupe(arr, name):
    if len(arr) == 0:
        return arr
    _, first = np.unique(arr, axis=0, return_index=True)
    if len(first) < len(arr):
        log.warning("%s split: dropped %d duplicate triple(s)", name, len(arr) - len(first))
        arr = arr[np.sort(first)]
    return arr


@dataclass(frozen=True, eq=False)
class KnowledgeBase:
    """Integer-indexed triples over ``N`` entities and ``K`` relations.

    Splits are stored as ``(n, 3)`` int64 arrays of ``(subject, relation,
    object)`` rows in file order.
    """

    entity_names: tuple
    relation_names: tuple
    train: np.ndarray
    valid: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    test: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))

    def __post_init__(self):
        object.__setattr__(self, "entity_names", tuple(self.entity_names))
        object.__setattr__(self, "relation_names", tuple(self.relation_names))
        for name in SPLITS:
            arr = _dedupe(_as_triple_array(getattr(self, name)), name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()

    def _validate(self):
        N, K = self.n_entities, self.n_relations
        if N < 2:
            raise ValueError(f"need at least 2 entities, got {N}")
        if K < 1:
            raise ValueError(f"need at least 1 relation, got {K}")
        keys = []
        for name in SPLITS:
            arr = getattr(self, name)
            if len(arr) == 0:
                keys.append(set())
                continue
            ents = arr[:, [0, 2]]
            if ents.min() < 0 or ents.max() >= N:
                raise ValueError(f"{name} split has entity index out of range [0, {N})")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= K:
                raise ValueError(f"{name} split has relation index out of range [0, {K})")
            keys.append(set(self.encode(arr).tolist()))
        for a in range(3):
            for b in range(a + 1, 3):
                common = keys[a] & keys[b]
                if common:
                    raise ValueError(
                        f"{SPLITS[a]} and {SPLITS[b]} splits share {len(common)} triple(s)")

    @property
    def n_entities(self):
        return len(self.entity_names)

    @property
    def n_relations(self):
        return len(self.relation_names)

    def split(self, name):
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def triples(self, name):
        return [Triple(*map(int, row)) for row in self.split(name)]

    def encode(self, triples):
        """Pack ``(i, k, j)`` rows into unique int64 keys."""
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return (arr[:, 0] * self.n_relations + arr[:, 1]) * self.n_entities + arr[:, 2]

    def checksum(self):
        h = hashlib.sha256()
        for name in (self.entity_names, self.relation_names):
            h.update("\n".join(name).encode("utf-8"))
            h.update(b"\0")
        for s in SPLITS:
            h.update(np.ascontiguousarray(self.split(s)).tobytes())
        return h.hexdigest()


def _read_tsv(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise KBParseError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            rows.append(parts)
    return rows


def load_kb(train_path, valid_path, test_path):
    """Read three TSV split files into a :class:`KnowledgeBase`.

    Dictionaries are built over the union of all splits, in order of first
    appearance (train first, then valid, then test; subject before object).
    """
    raw = {name: _read_tsv(p) for name, p in zip(SPLITS, (train_path, valid_path, test_path))}
    entities, relations = {}, {}
    arrays = {}
    for name in SPLITS:
        out = np.empty((len(raw[name]), 3), dtype=np.int64)
        for n, (s, r, o) in enumerate(raw[name]):
            out[n, 0] = entities.setdefault(s, len(entities))
            out[n, 1] = relations.setdefault(r, len(relations))
            out[n, 2] = entities.setdefault(o, len(entities))
        arrays[name] = out
    return KnowledgeBase(list(entities), list(relations), **arrays)


def load_kb_dir(directory):
    """Load ``train.txt``, ``valid.txt`` and ``test.txt`` from a directory."""
    return load_kb(*(os.path.join(directory, f"{s}.txt") for s in SPLITS))


def write_kb(kb, directory):
    """Write the splits back as TSV files; reloading reproduces the indices."""
    os.makedirs(directory, exist_ok=True)
    ent, rel = kb.entity_names, kb.relation_names
    for name in SPLITS:
        with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8", newline="\n") as fh:
            for i, k, j in kb.split(name):
                fh.write(f"{ent[i]}\t{rel[k]}\t{ent[j]}\n")


def write_dicts(kb, directory):
    """Dump ``entities.dict`` and ``relations.dict`` as ``index<TAB>name``."""
    os.makedirs(directory, exist_ok=True)
    for fname, names in (("entities.dict", kb.entity_names), ("relations.dict", kb.relation_names)):
        with open(os.path.join(directory, fname), "w", encoding="utf-8", newline="\n") as fh:
            for idx, name in enumerate(names):
                fh.write(f"{idx}\t{name}\n")


def dataset_checksum(directory):
    """SHA-256 over the raw bytes of the three split files."""
    h = hashlib.sha256()
    for s in SPLITS:
        with open(os.path.join(directory, f"{s}.txt"), "rb") as fh:
            h.update(fh.read())
        h.update(b"\0")
    return h.hexdigest()


def categorize_relation(kb, k):
    """Cardinality category of relation ``k`` from its training triples."""
    if not 0 <= k < kb.n_relations:
        raise IndexError(f"relation index {k} out of range")
    rows = kb.train[kb.train[:, 1] == k]
    if len(rows) == 0:
        raise ValueError(f"relation {k} ({kb.relation_names[k]}) has no training triples")
    n = len(rows)
    objects_per_subject = n / len(np.unique(rows[:, 0]))
    subjects_per_object = n / len(np.unique(rows[:, 2]))
    many_obj = objects_per_subject >= CATEGORY_THRESHOLD
    many_subj = subjects_per_object >= CATEGORY_THRESHOLD
    if many_obj and many_subj:
        return RelationCategory.MANY_TO_MANY
    if many_obj:
        return RelationCategory.ONE_TO_MANY
    if many_subj:
        return RelationCategory.MANY_TO_ONE
    return RelationCategory.ONE_TO_ONE


def relation_categories(kb):
    """Category per relation; relations without training triples map to None."""
    cats = {}
    for k in range(kb.n_relations):
        try:
            cats[k] = categorize_relation(kb, k)
        except ValueError:
            cats[k] = None
    return cats


class TripleIndex:
    """Membership oracle over known triples.

    ``contains(i, k, j)`` checks train, valid and test; pass ``scope="train"``
    to check the training split only. Also keeps per-query lists of known
    subjects/objects used for filtered ranking.
    """

    def __init__(self, kb):
        self.n_entities = kb.n_entities
        self.n_relations = kb.n_relations
        self._train = frozenset(kb.encode(kb.train).tolist())
        all_rows = np.concatenate([kb.split(s) for s in SPLITS])
        self._all = frozenset(kb.encode(all_rows).tolist())
        self.train_keys = np.sort(np.fromiter(self._train, dtype=np.int64, count=len(self._train)))
        objs, subjs = {}, {}
        for i, k, j in all_rows.tolist():
            objs.setdefault((i, k), []).append(j)
            subjs.setdefault((k, j), []).append(i)
        self._objects = {key: np.array(v, dtype=np.int64) for key, v in objs.items()}
        self._subjects = {key: np.array(v, dtype=np.int64) for key, v in subjs.items()}

    def _key(self, i, k, j):
        return (i * self.n_relations + k) * self.n_entities + j

    def contains(self, i, k, j, scope="all"):
        key = self._key(int(i), int(k), int(j))
        if scope == "all":
            return key in self._all
        if scope == "train":
            return key in self._train
        raise ValueError(f"unknown scope {scope!r}")

    def known_objects(self, i, k):
        return self._objects.get((int(i), int(k)), np.zeros(0, np.int64))

    def known_subjects(self, k, j):
        return self._subjects.get((int(k), int(j)), np.zeros(0, np.int64))


def true_triple_index(kb):
    return TripleIndex(kb)
