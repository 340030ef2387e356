"""Item-item and category-category layers from view sessions.

Two nodes are linked when they are co-viewed in one session; the weight is
the number of sessions in which both appear.  Each node then keeps its
``k`` heaviest links and the kept links are unioned into an undirected graph.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

from .graph import EntityMaps, GraphLoadError, read_tsv

DEFAULT_ITEM_TOPK = 300
DEFAULT_CAT_TOPK = 100


@dataclass(frozen=True)
class SessionLog:
    sessions: tuple[tuple[int, tuple[int, ...]], ...]

    def __post_init__(self):
        for u, items in self.sessions:
            if not items:
                raise ValueError(f"empty session for user {u}")

    @classmethod
    def of(cls, sessions) -> "SessionLog":
        return cls(tuple((int(u), tuple(int(i) for i in items)) for u, items in sessions))


# node -> {neighbour: count}; symmetric, no self entries
WeightedAdjacency = dict[int, dict[int, int]]


def _pair_counts(groups) -> Counter:
    counts: Counter = Counter()
    for nodes in groups:
        for pair in combinations(sorted(set(nodes)), 2):
            counts[pair] += 1
    return counts


def _to_adjacency(counts: Mapping[tuple[int, int], int]) -> WeightedAdjacency:
    adj: dict[int, dict[int, int]] = defaultdict(dict)
    for (p, q), w in counts.items():
        adj[p][q] = w
        adj[q][p] = w
    return {p: dict(sorted(nb.items())) for p, nb in sorted(adj.items())}


def coview_edges(log: SessionLog) -> WeightedAdjacency:
    """Session co-occurrence counts between distinct items."""
    return _to_adjacency(_pair_counts(items for _, items in log.sessions))


def merge_counts(parts: Sequence[WeightedAdjacency]) -> WeightedAdjacency:
    """Sum partial count maps (e.g. from disjoint session shards)."""
    total: Counter = Counter()
    for adj in parts:
        for p, nb in adj.items():
            for q, w in nb.items():
                if p < q:
                    total[(p, q)] += w
    return _to_adjacency(total)


def topk_select(adj: WeightedAdjacency, k: int) -> dict[int, list[int]]:
    """Each node's ``k`` heaviest neighbours; ties go to the smaller index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return {p: sorted(q for q, _ in sorted(nb.items(), key=lambda kv: (-kv[1], kv[0]))[:k])
            for p, nb in adj.items()}


def topk_prune(adj: WeightedAdjacency, k: int) -> dict[int, list[int]]:
    """Union of per-node top-k selections, as a symmetric unweighted adjacency."""
    out: dict[int, set[int]] = defaultdict(set)
    for p, chosen in topk_select(adj, k).items():
        for q in chosen:
            out[p].add(q)
            out[q].add(p)
    return {p: sorted(nb) for p, nb in sorted(out.items())}


def category_counts(log: SessionLog, item_cat: Sequence[int]) -> WeightedAdjacency:
    return _to_adjacency(_pair_counts([int(item_cat[i]) for i in items] for _, items in log.sessions))


def category_coview(log: SessionLog, item_cat: Sequence[int], k: int) -> dict[int, list[int]]:
    return topk_prune(category_counts(log, item_cat), k)


def undirected_pairs(adj: Mapping[int, Sequence[int]]) -> list[tuple[int, int]]:
    return [(p, q) for p, nb in sorted(adj.items()) for q in nb if p < q]


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def load_sessions(path: Path | str, maps: EntityMaps) -> SessionLog:
    """sessions.tsv: ``user_id<TAB>item,item,...`` in view order."""
    path = Path(path)
    sessions = []
    for lineno, (u, items) in read_tsv(path, 2):
        uid = maps.get("user", u)
        if uid is None:
            raise GraphLoadError(f"{path.name}: unknown user id {u!r} at line {lineno}")
        idx = []
        for ext in items.split(","):
            i = maps.get("item", ext)
            if i is None:
                raise GraphLoadError(f"{path.name}: unknown item id {ext!r} at line {lineno}")
            idx.append(i)
        sessions.append((uid, tuple(idx)))
    return SessionLog(tuple(sessions))


def write_item_item(path: Path | str, counts: WeightedAdjacency, pruned: Mapping[int, Sequence[int]],
                    maps: EntityMaps) -> int:
    rows = undirected_pairs(pruned)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p, q in rows:
            fh.write(f"{maps.item_ids[p]}\t{maps.item_ids[q]}\t{float(counts[p][q])!r}\n")
    return len(rows)


def write_category_category(path: Path | str, pruned: Mapping[int, Sequence[int]],
                            maps: EntityMaps) -> int:
    rows = undirected_pairs(pruned)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p, q in rows:
            fh.write(f"{maps.category_ids[p]}\t{maps.category_ids[q]}\n")
    return len(rows)


def build_layers(log: SessionLog, item_cat: Sequence[int], item_topk: int = DEFAULT_ITEM_TOPK,
                 cat_topk: int = DEFAULT_CAT_TOPK):
    """Co-view counts and pruned item/category adjacencies for one log."""
    item_w = coview_edges(log)
    return item_w, topk_prune(item_w, item_topk), category_coview(log, item_cat, cat_topk)
