"""In-memory user-item and scene graphs.

Everything is indexed densely (0..n-1 per entity class).  Adjacency is kept
in CSR form (``indptr``/``indices``) with each row sorted ascending, which is
what the model consumes directly and what makes iteration order stable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

INTERACTIONS = "interactions.tsv"
ITEMS = "items.tsv"
ITEM_ITEM = "item_item.tsv"
CATEGORY_CATEGORY = "category_category.tsv"
SCENE_CATEGORY = "scene_category.tsv"
SESSIONS = "sessions.tsv"


class GraphLoadError(ValueError):
    """Raised when a TSV file cannot be parsed or references unknown ids."""


class GraphValidationError(ValueError):
    """Raised when a loaded graph violates a structural invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.flags.writeable = False
    return a


class Adjacency:
    """Read-only CSR adjacency: row ``p`` is ``indices[indptr[p]:indptr[p+1]]``."""

    __slots__ = ("indptr", "indices")

    def __init__(self, indptr: np.ndarray, indices: np.ndarray):
        self.indptr = _frozen(indptr)
        self.indices = _frozen(indices)

    @classmethod
    def from_lists(cls, rows: Sequence[Iterable[int]]) -> "Adjacency":
        """Build from per-row neighbour collections (deduplicated and sorted)."""
        cleaned = [sorted(set(int(q) for q in r)) for r in rows]
        indptr = np.zeros(len(cleaned) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in cleaned])
        flat = [q for r in cleaned for q in r]
        return cls(indptr, np.asarray(flat, dtype=np.int64))

    @classmethod
    def from_raw(cls, rows: Sequence[Sequence[int]]) -> "Adjacency":
        """Build exactly as given, without sorting or dedup (for tests of validate)."""
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        flat = [int(q) for r in rows for q in r]
        return cls(indptr, np.asarray(flat, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.indptr) - 1

    def __getitem__(self, p: int) -> np.ndarray:
        return self.indices[self.indptr[p]:self.indptr[p + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def owners(self) -> np.ndarray:
        """Row index of every entry in ``indices``."""
        return np.repeat(np.arange(len(self), dtype=np.int64), self.degrees())

    @property
    def n_edges(self) -> int:
        return int(self.indptr[-1])

    def to_lists(self) -> list[list[int]]:
        return [self[p].tolist() for p in range(len(self))]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Adjacency):
            return NotImplemented
        return (np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __repr__(self) -> str:
        return f"Adjacency(rows={len(self)}, edges={self.n_edges})"


@dataclass(frozen=True)
class EntityMaps:
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    category_ids: tuple[str, ...]
    scene_ids: tuple[str, ...]
    _lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lookup = {}
        for kind, ids in (("user", self.user_ids), ("item", self.item_ids),
                          ("category", self.category_ids), ("scene", self.scene_ids)):
            index = {}
            for k, ext in enumerate(ids):
                if ext in index:
                    raise GraphValidationError(f"duplicate {kind} id {ext!r}")
                index[ext] = k
            lookup[kind] = index
        object.__setattr__(self, "_lookup", lookup)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_categories(self) -> int:
        return len(self.category_ids)

    @property
    def n_scenes(self) -> int:
        return len(self.scene_ids)

    def index(self, kind: str, ext_id: str) -> int:
        """Dense index of an external id; ``KeyError`` if unknown."""
        return self._lookup[kind][ext_id]

    def get(self, kind: str, ext_id: str) -> int | None:
        return self._lookup[kind].get(ext_id)


@dataclass(frozen=True)
class BipartiteGraph:
    ui: Adjacency  # user -> items
    iu: Adjacency  # item -> users

    @classmethod
    def from_edges(cls, n_users: int, n_items: int,
                   edges: Iterable[tuple[int, int]]) -> "BipartiteGraph":
        ui: list[set[int]] = [set() for _ in range(n_users)]
        iu: list[set[int]] = [set() for _ in range(n_items)]
        for u, i in edges:
            ui[u].add(i)
            iu[i].add(u)
        return cls(Adjacency.from_lists(ui), Adjacency.from_lists(iu))

    @property
    def n_users(self) -> int:
        return len(self.ui)

    @property
    def n_items(self) -> int:
        return len(self.iu)

    @property
    def n_edges(self) -> int:
        return self.ui.n_edges

    def edges(self) -> np.ndarray:
        """All (user, item) pairs as an ``(n, 2)`` array in user-major order."""
        return np.stack([self.ui.owners(), self.ui.indices], axis=1)


@dataclass(frozen=True)
class SceneGraph:
    ii: Adjacency          # item -> items
    item_cat: np.ndarray   # item -> its category
    cc: Adjacency          # category -> categories
    cat_scenes: Adjacency  # category -> scenes
    scene_cats: Adjacency  # scene -> categories

    def __post_init__(self):
        object.__setattr__(self, "item_cat", _frozen(self.item_cat))

    @property
    def n_items(self) -> int:
        return len(self.ii)

    @property
    def n_categories(self) -> int:
        return len(self.cc)

    @property
    def n_scenes(self) -> int:
        return len(self.scene_cats)

    def item_scenes(self, i: int) -> np.ndarray:
        return self.cat_scenes[int(self.item_cat[i])]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return (self.ii == other.ii and np.array_equal(self.item_cat, other.item_cat)
                and self.cc == other.cc and self.cat_scenes == other.cat_scenes
                and self.scene_cats == other.scene_cats)


NEIGHBOR_KINDS = ("UI", "IU", "II", "CC", "CS", "IS")


@dataclass(frozen=True)
class GraphBundle:
    """Maps plus both graphs; the unit the model and trainer operate on."""

    maps: EntityMaps
    bipartite: BipartiteGraph
    scene: SceneGraph

    def neighbors(self, kind: str, index: int) -> list[int]:
        """Sorted neighbour list for one of UI, IU, II, CC, CS, IS."""
        if kind == "UI":
            adj, n = self.bipartite.ui, self.maps.n_users
        elif kind == "IU":
            adj, n = self.bipartite.iu, self.maps.n_items
        elif kind == "II":
            adj, n = self.scene.ii, self.maps.n_items
        elif kind == "CC":
            adj, n = self.scene.cc, self.maps.n_categories
        elif kind == "CS":
            adj, n = self.scene.cat_scenes, self.maps.n_categories
        elif kind == "IS":
            adj, n = self.scene.cat_scenes, self.maps.n_items
        else:
            raise ValueError(f"unknown neighbour kind {kind!r}; expected one of {NEIGHBOR_KINDS}")
        if not 0 <= index < n:
            raise IndexError(f"{kind} index {index} out of range [0, {n})")
        if kind == "IS":
            index = int(self.scene.item_cat[index])
        return adj[index].tolist()

    def with_bipartite(self, bipartite: BipartiteGraph) -> "GraphBundle":
        return GraphBundle(self.maps, bipartite, self.scene)


# --------------------------------------------------------------------------
# TSV loading
# --------------------------------------------------------------------------

def read_tsv(path: Path | str, n_fields: int | tuple[int, ...]) -> list[tuple[int, list[str]]]:
    """Return ``(line_number, fields)`` for every non-blank line."""
    path = Path(path)
    allowed = (n_fields,) if isinstance(n_fields, int) else n_fields
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in allowed or any(p == "" for p in parts):
                raise GraphLoadError(
                    f"{path.name}: malformed line {lineno}: expected {allowed} tab-separated fields")
            rows.append((lineno, parts))
    return rows


def _first_seen(values: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(values))


def build_maps(data_dir: Path | str) -> EntityMaps:
    """Derive entity maps from a dataset directory.

    Users come from interactions, items from items.tsv, categories from
    items.tsv then scene_category.tsv then category_category.tsv, scenes from
    scene_category.tsv.  Dense order is order of first appearance.
    """
    d = Path(data_dir)
    users = _first_seen(f[0] for _, f in read_tsv(d / INTERACTIONS, 2))
    item_rows = read_tsv(d / ITEMS, 2)
    items = _first_seen(f[0] for _, f in item_rows)
    sc_rows = read_tsv(d / SCENE_CATEGORY, 2)
    cc_rows = read_tsv(d / CATEGORY_CATEGORY, 2)
    cats = _first_seen([f[1] for _, f in item_rows] + [f[1] for _, f in sc_rows]
                       + [c for _, f in cc_rows for c in f])
    scenes = _first_seen(f[0] for _, f in sc_rows)
    return EntityMaps(users, items, cats, scenes)


def _resolve(maps: EntityMaps, kind: str, ext: str, path: Path, lineno: int) -> int:
    idx = maps.get(kind, ext)
    if idx is None:
        raise GraphLoadError(f"{path.name}: unknown {kind} id {ext!r} at line {lineno}")
    return idx


def load_bipartite(interactions_path: Path | str, maps: EntityMaps) -> BipartiteGraph:
    path = Path(interactions_path)
    edges = []
    for lineno, (u, i) in read_tsv(path, 2):
        edges.append((_resolve(maps, "user", u, path, lineno),
                      _resolve(maps, "item", i, path, lineno)))
    return BipartiteGraph.from_edges(maps.n_users, maps.n_items, edges)


def load_scene_graph(items_path, item_item_path, category_category_path,
                     scene_category_path, maps: EntityMaps) -> SceneGraph:
    items_path, item_item_path = Path(items_path), Path(item_item_path)
    category_category_path, scene_category_path = Path(category_category_path), Path(scene_category_path)

    item_cat = np.full(maps.n_items, -1, dtype=np.int64)
    for lineno, (i, c) in read_tsv(items_path, 2):
        ii = _resolve(maps, "item", i, items_path, lineno)
        cc = _resolve(maps, "category", c, items_path, lineno)
        if item_cat[ii] >= 0:
            raise GraphValidationError(
                f"{items_path.name}: item {i!r} listed with more than one category (line {lineno})")
        item_cat[ii] = cc
    missing = np.flatnonzero(item_cat < 0)
    if len(missing):
        raise GraphValidationError(f"item {maps.item_ids[missing[0]]!r} has no category")

    ii_rows: list[set[int]] = [set() for _ in range(maps.n_items)]
    for lineno, fields in read_tsv(item_item_path, (2, 3)):
        p = _resolve(maps, "item", fields[0], item_item_path, lineno)
        q = _resolve(maps, "item", fields[1], item_item_path, lineno)
        if len(fields) == 3:
            try:
                float(fields[2])
            except ValueError:
                raise GraphLoadError(
                    f"{item_item_path.name}: bad weight at line {lineno}") from None
        if p == q:
            logger.warning("dropping item self-loop %s at %s:%d", fields[0], item_item_path.name, lineno)
            continue
        ii_rows[p].add(q)
        ii_rows[q].add(p)

    cc_rows: list[set[int]] = [set() for _ in range(maps.n_categories)]
    for lineno, (a, b) in read_tsv(category_category_path, 2):
        p = _resolve(maps, "category", a, category_category_path, lineno)
        q = _resolve(maps, "category", b, category_category_path, lineno)
        if p == q:
            logger.warning("dropping category self-loop %s at %s:%d", a, category_category_path.name, lineno)
            continue
        cc_rows[p].add(q)
        cc_rows[q].add(p)

    cs_rows: list[set[int]] = [set() for _ in range(maps.n_categories)]
    sc_rows: list[set[int]] = [set() for _ in range(maps.n_scenes)]
    for lineno, (s, c) in read_tsv(scene_category_path, 2):
        si = _resolve(maps, "scene", s, scene_category_path, lineno)
        ci = _resolve(maps, "category", c, scene_category_path, lineno)
        sc_rows[si].add(ci)
        cs_rows[ci].add(si)

    sg = SceneGraph(Adjacency.from_lists(ii_rows), item_cat, Adjacency.from_lists(cc_rows),
                    Adjacency.from_lists(cs_rows), Adjacency.from_lists(sc_rows))
    empty = [maps.scene_ids[s] for s in range(maps.n_scenes) if len(sg.scene_cats[s]) == 0]
    if empty:
        raise GraphValidationError(f"scene {empty[0]!r} has no categories")
    return sg


def load_dataset(data_dir: Path | str, maps: EntityMaps | None = None) -> GraphBundle:
    d = Path(data_dir)
    for name in (INTERACTIONS, ITEMS, ITEM_ITEM, CATEGORY_CATEGORY, SCENE_CATEGORY):
        if not (d / name).is_file():
            raise FileNotFoundError(f"missing dataset file: {d / name}")
    maps = maps or build_maps(d)
    bg = load_bipartite(d / INTERACTIONS, maps)
    sg = load_scene_graph(d / ITEMS, d / ITEM_ITEM, d / CATEGORY_CATEGORY, d / SCENE_CATEGORY, maps)
    return GraphBundle(maps, bg, sg)


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

def _row_problems(name: str, adj: Adjacency, labels: Sequence[str], target_labels: Sequence[str],
                  n_target: int) -> list[str]:
    out = []
    for p in range(len(adj)):
        row = adj[p]
        if len(row) and (row.min() < 0 or row.max() >= n_target):
            out.append(f"{name}: row {labels[p]} has out-of-range neighbour")
            continue
        if len(np.unique(row)) != len(row):
            out.append(f"{name}: row {labels[p]} has duplicate neighbours")
        if np.any(np.diff(row) < 0):
            out.append(f"{name}: row {labels[p]} is not sorted")
    return out


def _mirror_problems(name: str, fwd: Adjacency, back: Adjacency,
                     fwd_labels: Sequence[str], back_labels: Sequence[str]) -> list[str]:
    out = []
    back_sets = [set(back[q].tolist()) for q in range(len(back))]
    fwd_sets = [set(fwd[p].tolist()) for p in range(len(fwd))]
    for p, row in enumerate(fwd_sets):
        for q in sorted(row):
            if 0 <= q < len(back_sets) and p not in back_sets[q]:
                out.append(f"{name}: edge ({fwd_labels[p]}, {back_labels[q]}) has no mirror")
    for q, row in enumerate(back_sets):
        for p in sorted(row):
            if 0 <= p < len(fwd_sets) and q not in fwd_sets[p]:
                out.append(f"{name}: edge ({back_labels[q]}, {fwd_labels[p]}) has no mirror")
    return out


def validate(bg: BipartiteGraph, sg: SceneGraph, maps: EntityMaps | None = None) -> list[str]:
    """Every violated invariant as a human-readable line; empty when all hold."""
    def labels(n, ids, prefix):
        return list(ids) if ids is not None and len(ids) == n else [f"{prefix}#{k}" for k in range(n)]

    U = labels(bg.n_users, maps.user_ids if maps else None, "user")
    I = labels(max(bg.n_items, sg.n_items), maps.item_ids if maps else None, "item")
    C = labels(sg.n_categories, maps.category_ids if maps else None, "category")
    S = labels(sg.n_scenes, maps.scene_ids if maps else None, "scene")

    report: list[str] = []
    if bg.n_items != sg.n_items:
        report.append(f"item count mismatch: bipartite {bg.n_items} vs scene graph {sg.n_items}")
    report += _row_problems("UI", bg.ui, U, I, bg.n_items)
    report += _row_problems("IU", bg.iu, I, U, bg.n_users)
    report += _mirror_problems("UI/IU", bg.ui, bg.iu, U, I)

    for name, adj, lab in (("II", sg.ii, I), ("CC", sg.cc, C)):
        report += _row_problems(name, adj, lab, lab, len(adj))
        for p in range(len(adj)):
            if p in set(adj[p].tolist()):
                report.append(f"{name}: self-loop at {lab[p]}")
        report += _mirror_problems(name, adj, adj, lab, lab)

    if len(sg.item_cat) != sg.n_items:
        report.append("item_cat length differs from item count")
    for i, c in enumerate(sg.item_cat.tolist()):
        if not 0 <= c < sg.n_categories:
            report.append(f"item {I[i]} has no valid category")

    report += _row_problems("CS", sg.cat_scenes, C, S, sg.n_scenes)
    report += _row_problems("SC", sg.scene_cats, S, C, sg.n_categories)
    report += _mirror_problems("CS/SC", sg.cat_scenes, sg.scene_cats, C, S)
    for s in range(sg.n_scenes):
        if len(sg.scene_cats[s]) == 0:
            report.append(f"scene {S[s]} violates |s| >= 1 (no categories)")
    return report
