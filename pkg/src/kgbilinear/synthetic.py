"""Seeded synthetic knowledge bases with known relation structure."""

import numpy as np

from .kb import KnowledgeBase


def clustered_kb(n_entities=200, n_clusters=20, n_train=3000, n_valid=300, n_test=300, seed=0):
    """Three relations over entities grouped into equal-size clusters.

    * ``similar_to`` (symmetric): all ordered pairs of distinct entities in the
      same cluster.
    * ``precedes`` (antisymmetric): entities of cluster c point to entities of
      cluster c+1 (no wrap-around).
    * ``member_of`` (many-to-one): every non-hub entity points to the hub (first
      entity) of its cluster.

    Triples are sampled without replacement from the union of the three
    relations (``member_of`` is always included in full) and shuffled into
    train/valid/test.
    """
    rng = np.random.default_rng(seed)
    size = n_entities // n_clusters
    if size * n_clusters != n_entities:
        raise ValueError("n_entities must be a multiple of n_clusters")
    perm = rng.permutation(n_entities)
    clusters = perm.reshape(n_clusters, size)

    sym, prec, memb = [], [], []
    for c in range(n_clusters):
        members = clusters[c]
        for a in members:
            for b in members:
                if a != b:
                    sym.append((a, 0, b))
        if c + 1 < n_clusters:
            for a in members:
                for b in clusters[c + 1]:
                    prec.append((a, 1, b))
        hub = members[0]
        for a in members[1:]:
            memb.append((a, 2, hub))

    total = n_train + n_valid + n_test
    pool = np.array(sym + prec, dtype=np.int64)
    need = total - len(memb)
    if need > len(pool) or need < 0:
        raise ValueError(f"cannot draw {total} triples from {len(pool) + len(memb)} candidates")
    chosen = pool[rng.choice(len(pool), size=need, replace=False)]
    triples = np.concatenate([chosen, np.array(memb, dtype=np.int64)])
    triples = triples[rng.permutation(len(triples))]
    train = triples[:n_train]
    valid = triples[n_train:n_train + n_valid]
    test = triples[n_train + n_valid:]
    entity_names = [f"e{i:03d}" for i in range(n_entities)]
    return KnowledgeBase(entity_names, ["similar_to", "precedes", "member_of"], train, valid, test)
