"""Leave-one-out evaluation: splitting, ranking, HR@K / NDCG@K and explanations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import BipartiteGraph, GraphBundle
from .model import ParameterSet, SceneRec, Variant, item_attention_score, score

DEFAULT_N_NEG = 100
DEFAULT_K = 10
MIN_POSITIVES = 3


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class HeldOut:
    positive: int
    negatives: np.ndarray

    @property
    def candidates(self) -> np.ndarray:
        return np.concatenate([[self.positive], self.negatives]).astype(np.int64)


@dataclass(frozen=True)
class EvalSplit:
    train: tuple[np.ndarray, ...]  # per user, sorted training positives
    val: dict[int, HeldOut]
    test: dict[int, HeldOut]
    n_items: int
    n_neg: int
    seed: int

    def train_graph(self) -> BipartiteGraph:
        return BipartiteGraph.from_edges(
            len(self.train), self.n_items,
            ((u, int(i)) for u, items in enumerate(self.train) for i in items))

    def partition(self, which: str) -> dict[int, HeldOut]:
        if which not in ("val", "test"):
            raise ValueError(f"unknown split partition {which!r}")
        return self.val if which == "val" else self.test


def leave_one_out_split(bg: BipartiteGraph, n_neg: int = DEFAULT_N_NEG, seed: int = 0) -> EvalSplit:
    """Hold out one validation and one test positive per user (users with >= 3 positives)."""
    rng = np.random.default_rng([seed, 0x5E1])
    train, val, test = [], {}, {}
    all_items = np.arange(bg.n_items)
    for u in range(bg.n_users):
        pos = np.asarray(bg.ui[u])
        if len(pos) < MIN_POSITIVES:
            train.append(pos.copy())
            continue
        v, t = rng.choice(len(pos), size=2, replace=False)
        unseen = np.setdiff1d(all_items, pos, assume_unique=True)
        if len(unseen) < n_neg:
            raise SplitError(f"user {u} has only {len(unseen)} unobserved items; {n_neg} negatives needed")
        val[u] = HeldOut(int(pos[v]), np.sort(rng.choice(unseen, n_neg, replace=False)))
        test[u] = HeldOut(int(pos[t]), np.sort(rng.choice(unseen, n_neg, replace=False)))
        train.append(np.delete(pos, [v, t]))
    return EvalSplit(tuple(train), val, test, bg.n_items, n_neg, seed)


def hr_at_k(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def rank_of_first(scores, candidates) -> int:
    """1-based rank of ``candidates[0]``; ties go to the smaller item index."""
    scores = np.asarray(scores, dtype=float)
    candidates = np.asarray(candidates)
    s0, c0 = scores[0], candidates[0]
    above = np.sum(scores > s0)
    tied = np.sum((scores == s0) & (candidates < c0))
    return int(1 + above + tied)


def rank_candidates(u: int, candidates, params: ParameterSet, graph: GraphBundle,
                    variant: Variant = Variant.FULL) -> int:
    candidates = np.asarray(candidates, dtype=np.int64)
    scores, _ = SceneRec(graph, variant).forward_batch(
        params, np.full(len(candidates), u), candidates)
    return rank_of_first(scores, candidates)


@dataclass(frozen=True)
class EvalReport:
    users: np.ndarray
    ranks: np.ndarray
    k: int

    @property
    def hits(self) -> np.ndarray:
        return (self.ranks <= self.k).astype(float)

    @property
    def gains(self) -> np.ndarray:
        return np.array([ndcg_at_k(int(r), self.k) for r in self.ranks])

    @property
    def hr(self) -> float:
        return float(math.fsum(self.hits) / len(self.ranks))

    @property
    def ndcg(self) -> float:
        return float(math.fsum(self.gains) / len(self.ranks))

    def write(self, out_dir: Path | str, user_ids=None, detail: bool = True) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"users\t{len(self.ranks)}\n")
            fh.write(f"HR@{self.k}\t{self.hr!r}\n")
            fh.write(f"NDCG@{self.k}\t{self.ndcg!r}\n")
        if detail:
            with open(out / "ranks.tsv", "w", encoding="utf-8", newline="\n") as fh:
                for u, r, h, g in zip(self.users, self.ranks, self.hits, self.gains):
                    name = user_ids[u] if user_ids is not None else str(u)
                    fh.write(f"{name}\t{int(r)}\t{int(h)}\t{float(g)!r}\n")


def evaluate(params: ParameterSet, graph: GraphBundle, split: EvalSplit, k: int = DEFAULT_K,
             which: str = "test", variant: Variant = Variant.FULL) -> EvalReport:
    """Rank every held-out positive among its sampled negatives.

    ``graph`` should carry the training interactions only.
    """
    part = split.partition(which)
    if not part:
        raise SplitError(f"the {which} partition is empty")
    model = SceneRec(graph, variant)
    m_u, m_i = model.embed_all(params)
    users = np.array(sorted(part), dtype=np.int64)
    cands = np.stack([part[u].candidates for u in users])
    scores = SceneRec.score_from_embeddings(
        params, np.broadcast_to(m_u[users][:, None, :], cands.shape + (m_u.shape[1],)), m_i[cands])
    ranks = np.array([rank_of_first(s, c) for s, c in zip(scores, cands)], dtype=np.int64)
    return EvalReport(users, ranks, k)


@dataclass(frozen=True)
class Explanation:
    user: int
    item: int
    average_attention: float
    per_item: list[tuple[int, float]]
    score: float


def explain(u: int, item: int, params: ParameterSet, graph: GraphBundle,
            variant: Variant = Variant.FULL) -> Explanation:
    """Average pre-softmax scene attention between a candidate and the user's items."""
    history = graph.bipartite.ui[u]
    if len(history) == 0:
        raise ValueError(f"user {u} has no interactions to explain against")
    pairs = [(int(x), item_attention_score(item, int(x), params, graph)) for x in history]
    avg = math.fsum(b for _, b in pairs) / len(pairs)
    return Explanation(u, item, avg, pairs, score(u, item, params, graph, variant))
