"""BPR training with RMSProp and validation-based early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .evaluate import EvalSplit, evaluate
from .graph import GraphBundle
from .model import ParameterSet, SceneRec, Variant, loss_and_gradients

logger = logging.getLogger(__name__)

LR_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
LAMBDA_GRID = (0.0, 1e-6, 1e-4, 1e-2)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    d: int = 64
    lr: float = 1e-3
    lam: float = 1e-6
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    variant: Variant = Variant.FULL
    k: int = 10

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.d < 1 or self.batch_size < 1 or self.epochs < 0 or self.patience < 0:
            raise ValueError("d, batch_size must be >= 1; epochs, patience >= 0")
        if not self.lr >= 0:
            raise ValueError("lr must be nonnegative")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if not 0 < self.rms_decay < 1:
            raise ValueError("rms_decay must lie in (0, 1)")
        if not self.rms_eps > 0:
            raise ValueError("rms_eps must be positive")


def rmsprop_step(params: ParameterSet, grads: ParameterSet, state: ParameterSet, lr: float,
                 rms_decay: float = 0.9, rms_eps: float = 1e-8) -> tuple[ParameterSet, ParameterSet]:
    """In-place RMSProp update; returns ``(params, state)`` for convenience."""
    for name, theta in params.items():
        g = getattr(grads, name)
        acc = getattr(state, name)
        acc *= rms_decay
        acc += (1.0 - rms_decay) * g * g
        theta -= lr * g / (np.sqrt(acc) + rms_eps)
    return params, state


class TripleSampler:
    """Uniform positives over training edges, uniform unobserved negatives."""

    def __init__(self, train: tuple[np.ndarray, ...], full: tuple[np.ndarray, ...], n_items: int):
        self.n_items = n_items
        keep_users = []
        for u, pos in enumerate(full):
            if len(pos) >= n_items:
                logger.warning("user %d interacted with every item; no negatives possible, skipped", u)
            else:
                keep_users.append(u)
        keep = np.zeros(len(train), dtype=bool)
        keep[keep_users] = True
        users = np.repeat(np.arange(len(train)), [len(t) for t in train])
        items = np.concatenate([np.asarray(t, dtype=np.int64) for t in train] or [np.zeros(0, np.int64)])
        mask = keep[users]
        self.users, self.items = users[mask], items[mask]
        self._seen = np.unique(np.concatenate(
            [u * n_items + np.asarray(p, dtype=np.int64) for u, p in enumerate(full)]))

    @property
    def n_edges(self) -> int:
        return len(self.users)

    def _observed(self, users, items) -> np.ndarray:
        keys = users * self.n_items + items
        pos = np.searchsorted(self._seen, keys)
        pos = np.minimum(pos, len(self._seen) - 1)
        return self._seen[pos] == keys

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.n_edges == 0:
            raise TrainingError("no training edges to sample from")
        e = rng.integers(self.n_edges, size=n)
        users, pos = self.users[e], self.items[e]
        neg = rng.integers(self.n_items, size=n)
        bad = self._observed(users, neg)
        while bad.any():
            neg[bad] = rng.integers(self.n_items, size=int(bad.sum()))
            bad[bad] = self._observed(users[bad], neg[bad])
        return users, pos, neg


def sample_triples(train, full, n: int, rng: np.random.Generator, n_items: int | None = None):
    """``n`` (user, positive, negative) triples; see :class:`TripleSampler`."""
    if n_items is None:
        n_items = 1 + max((int(np.max(p)) for p in full if len(p)), default=-1)
    return TripleSampler(tuple(train), tuple(full), n_items).sample(n, rng)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_ndcg: float
    val_hr: float


@dataclass
class TrainResult:
    params: ParameterSet
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_ndcg(self) -> float:
        return max((h.val_ndcg for h in self.history), default=float("nan"))

    def write_history(self, path: Path | str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for h in self.history:
                fh.write(f"{h.epoch}\t{h.train_loss!r}\t{h.val_ndcg!r}\t{h.val_hr!r}\n")


def train(graph: GraphBundle, split: EvalSplit, cfg: TrainConfig,
          init: ParameterSet | None = None) -> TrainResult:
    """Fit on the split's training interactions, keeping the best-validation parameters.

    ``graph`` carries the full interaction set; the model sees only the
    training edges, negatives avoid every observed interaction.
    """
    m = graph.maps
    train_graph = graph.with_bipartite(split.train_graph())
    model = SceneRec(train_graph, cfg.variant)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    params = init.copy() if init is not None else ParameterSet.init(
        m.n_users, m.n_items, m.n_categories, m.n_scenes, cfg.d, np.random.default_rng(seeds[0]))
    model.check_params(params)
    rng = np.random.default_rng(seeds[1])
    state = params.zeros_like()
    full = tuple(np.asarray(graph.bipartite.ui[u]) for u in range(m.n_users))
    sampler = TripleSampler(split.train, full, m.n_items)
    n_batches = max(1, math.ceil(sampler.n_edges / cfg.batch_size))

    result = TrainResult(params.copy())
    best, stale = -math.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for b in range(n_batches):
            users, pos, neg = sampler.sample(cfg.batch_size, rng)
            loss, grads = loss_and_gradients(model, params, users, pos, neg, cfg.lam)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b + 1}")
            rmsprop_step(params, grads, state, cfg.lr, cfg.rms_decay, cfg.rms_eps)
            total += loss
        rep = evaluate(params, train_graph, split, cfg.k, "val", cfg.variant)
        rec = EpochRecord(epoch, total / (n_batches * cfg.batch_size), rep.ndcg, rep.hr)
        result.history.append(rec)
        logger.info("epoch %d loss %.5f val NDCG@%d %.4f HR@%d %.4f",
                    epoch, rec.train_loss, cfg.k, rec.val_ndcg, cfg.k, rec.val_hr)
        if rec.val_ndcg > best:
            best, stale = rec.val_ndcg, 0
            result.params, result.best_epoch = params.copy(), epoch
        else:
            stale += 1
            if stale > cfg.patience:
                break
    return result


def grid_search(graph: GraphBundle, split: EvalSplit, cfg: TrainConfig,
                lrs=LR_GRID, lams=LAMBDA_GRID) -> tuple[TrainConfig, TrainResult, list]:
    """Train every (lr, lambda) pair; pick the best validation NDCG@K."""
    rows, best = [], None
    for lr in lrs:
        for lam in lams:
            c = replace(cfg, lr=lr, lam=lam)
            try:
                res = train(graph, split, c)
                score = res.best_val_ndcg
            except TrainingError as exc:
                logger.warning("grid point lr=%g lambda=%g failed: %s", lr, lam, exc)
                res, score = None, float("nan")
            rows.append((lr, lam, score))
            if res is not None and (best is None or score > best[1].best_val_ndcg):
                best = (c, res)
    if best is None:
        raise TrainingError("every grid point failed")
    return best[0], best[1], rows
