"""Margin-based ranking training with Adagrad.

Each epoch visits every training triple once in a seeded random order. For
every positive one negative is drawn by replacing the subject or the object
with a uniform entity (rejecting triples that occur in the training split),
and a single hinge + L2 + Adagrad update is applied. There is no
mini-batching.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import _kernels
from .kb import Triple, true_triple_index
from .models import ModelKind, init_params, score, unpack

log = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-8
GRID_EPOCHS = 50
FINAL_EPOCHS = 2000


class NegativeSamplingError(RuntimeError):
    """No admissible negative found within the attempt cap."""


class TrainingDiverged(FloatingPointError):
    """Parameters became non-finite during training."""


@dataclass
class TrainConfig:
    model: ModelKind = ModelKind.RESCAL
    dim: int = 100
    margin: float = 1.0
    lr: float = 0.1
    lambda_e: float = 0.0
    lambda_r: float = 0.0
    epochs: int = FINAL_EPOCHS
    seed: int = 0
    negatives_per_positive: int = 1

    def __post_init__(self):
        self.model = ModelKind.parse(self.model)
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.lambda_e < 0 or self.lambda_r < 0:
            raise ValueError("regularization weights must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.negatives_per_positive != 1:
            raise ValueError("only one negative per positive is supported")

    def as_dict(self):
        d = asdict(self)
        d["model"] = self.model.label.lower()
        return d

    @classmethod
    def from_mapping(cls, values):
        """Build from string-valued ``key = value`` settings."""
        casts = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip()
            if key not in casts:
                raise ValueError(f"unknown config key {key!r}")
            if key == "model":
                kwargs[key] = ModelKind.parse(raw)
            elif casts[key] in (int, "int"):
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs)


def read_config(path):
    """Parse a flat ``key = value`` file (``#`` starts a comment)."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


@dataclass
class AdagradState:
    accumulators: dict
    epsilon: float = ADAGRAD_EPS

    @classmethod
    def zeros_like(cls, params, epsilon=ADAGRAD_EPS):
        return cls({f: np.zeros_like(getattr(params, f)) for f in params.fields}, epsilon)


@dataclass
class TrainResult:
    params: object
    losses: list = field(default_factory=list)
    config: TrainConfig = None


def sample_negative(kb, positive, rng, index=None):
    """Perturb the subject or the object of a training triple.

    The replacement entity is uniform; candidates present in the training
    split are rejected and redrawn, up to 100 attempts.
    """
    index = index or true_triple_index(kb)
    i, k, j = positive
    for _ in range(_kernels.MAX_NEGATIVE_ATTEMPTS):
        replace_subject = rng.random() < 0.5
        e = int(rng.integers(kb.n_entities))
        cand = Triple(e, k, j) if replace_subject else Triple(i, k, e)
        if not index.contains(*cand, scope="train"):
            return cand
    raise NegativeSamplingError(
        f"no negative found for {tuple(positive)} after {_kernels.MAX_NEGATIVE_ATTEMPTS} attempts")


def margin_loss(f_pos, f_neg, gamma):
    return max(0.0, f_neg + gamma - f_pos)


def model_f(params, i, k, j):
    """Training score: logistic of the score for HolE, the raw score otherwise."""
    s = score(params, i, k, j)
    if params.kind == ModelKind.HOLE:
        return 1.0 / (1.0 + math.exp(-s))
    return s


def adagrad_step(params, grads, state, eta):
    """Sparse Adagrad update in place; returns ``(params, state)``.

    ``grads`` is ``{field: {row: array}}``. Coordinates with zero gradient
    keep both their value and their accumulator.
    """
    eps = state.epsilon
    for f, rows in grads.items():
        theta = getattr(params, f)
        acc = state.accumulators[f]
        for row, g in rows.items():
            g = np.asarray(g, dtype=np.float64)
            acc[row] += g * g
            step = np.zeros_like(g)
            nz = g != 0
            step[nz] = eta * g[nz] / (np.sqrt(acc[row][nz]) + eps)
            theta[row] -= step
    return params, state


def train(kb, config, init=None):
    """Train one model on ``kb.train``; returns a :class:`TrainResult`.

    Deterministic for a given ``config.seed``.
    """
    p0 = init if init is not None else init_params(
        config.model, kb.n_entities, kb.n_relations, config.dim, config.seed)
    E, W = p0.pack()
    accE, accW = np.zeros_like(E), np.zeros_like(W)
    losses = np.zeros(config.epochs)
    if config.epochs > 0 and len(kb.train):
        index = true_triple_index(kb)
        status, row = _kernels.train_epochs(
            int(config.model), config.dim, E, W, accE, accW,
            np.ascontiguousarray(kb.train), index.train_keys, kb.n_entities, kb.n_relations,
            float(config.margin), float(config.lr), float(config.lambda_e), float(config.lambda_r),
            int(config.epochs), int(config.seed) % (2**32), config.model == ModelKind.HOLE,
            ADAGRAD_EPS, losses)
        if status == _kernels.NEGATIVE_SAMPLING_FAILED:
            raise NegativeSamplingError(
                f"no negative found for training triple {tuple(kb.train[row])} after "
                f"{_kernels.MAX_NEGATIVE_ATTEMPTS} attempts")
    if not (np.isfinite(E).all() and np.isfinite(W).all()):
        raise TrainingDiverged(f"non-finite parameters after training with {config}")
    params = unpack(config.model, E, W, config.dim)
    return TrainResult(params, losses.tolist(), config)


def default_grid(model, dims=(100, 200), lrs=(0.01, 0.1, 1.0), lambdas=(0.0, 0.1, 0.01), seed=0,
               epochs=None):
    """Exhaustive hyperparameter grid over dimension, lr, both L2 weights and margin."""
    model = ModelKind.parse(model)
    margins = {
        ModelKind.RESCAL: (1.0, 2.0, 4.0, 8.0),
        ModelKind.HOLE: (0.2, 0.5, 0.7),
        ModelKind.TRANSE: (0.2, 0.5, 0.7, 1.0, 1.5),
    }.get(model, (0.2, 0.5, 1.0))
    if epochs is None:
        epochs = FINAL_EPOCHS if model == ModelKind.TRANSE else GRID_EPOCHS
    return [TrainConfig(model, r, g, lr, le, lr_, epochs, seed)
            for r, lr, le, lr_, g in itertools.product(dims, lrs, lambdas, lambdas, margins)]


def grid_search(kb, grid, budget_epochs=GRID_EPOCHS, metric=None, workers=1):
    """Train every config for ``budget_epochs`` and return the best one.

    ``metric(params)`` defaults to filtered HITS@10 on the validation split;
    ties go to the earliest config. Returns ``(best_config, scores)``.
    """
    if not grid:
        raise ValueError("empty grid")
    if metric is None:
        from .evaluation import evaluate_ranking

        def metric(params):
            return evaluate_ranking(params, kb, "valid").hits_at_k[10]

    def run(cfg):
        try:
            result = train(kb, replace(cfg, epochs=budget_epochs))
        except TrainingDiverged:
            log.info("grid %s diverged", cfg)
            return -np.inf
        value = metric(result.params)
        if not np.isfinite(value):
            value = -np.inf
        log.info("grid %s -> %.4f", cfg, value)
        return value

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            scores = list(pool.map(run, grid))
    else:
        scores = [run(cfg) for cfg in grid]
    best = int(np.argmax(scores))
    return grid[best], scores
