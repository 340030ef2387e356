"""Synthetic datasets with planted scene structure.

Users like one or two scenes; most of their interactions fall on items whose
category belongs to one of those scenes, the rest are uniform noise.  The
co-view layers are then derived from the generated sessions exactly as they
would be from real logs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import build
from .graph import (CATEGORY_CATEGORY, INTERACTIONS, ITEM_ITEM, ITEMS, SCENE_CATEGORY, SESSIONS,
                    EntityMaps, read_tsv)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"
SESSION_LENGTH = 5


@dataclass(frozen=True)
class SynthConfig:
    n_scenes: int = 8
    n_categories: int = 20
    n_items: int = 1000
    n_users: int = 200
    cats_per_scene: int = 2
    interactions_per_user: int = 50
    noise_rate: float = 0.2
    seed: int = 0
    popularity_exponent: float = 0.0
    item_topk: int = build.DEFAULT_ITEM_TOPK
    cat_topk: int = build.DEFAULT_CAT_TOPK

    def __post_init__(self):
        for name in ("n_scenes", "n_categories", "n_items", "n_users", "cats_per_scene",
                     "interactions_per_user", "item_topk", "cat_topk"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cats_per_scene > self.n_categories:
            raise ValueError("cats_per_scene cannot exceed n_categories")
        if self.interactions_per_user > self.n_items:
            raise ValueError("interactions_per_user cannot exceed n_items")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must lie in [0, 1]")
        if not self.popularity_exponent >= 0:
            raise ValueError("popularity_exponent must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class SynthTruth:
    """Planted structure, returned alongside the files for tests."""

    item_cat: np.ndarray
    scene_cats: list[list[int]]
    user_scenes: list[list[int]]
    interactions: list[list[int]]

    def preferred_items(self, u: int) -> np.ndarray:
        cats = sorted({c for s in self.user_scenes[u] for c in self.scene_cats[s]})
        return np.flatnonzero(np.isin(self.item_cat, cats))


def sample_truth(cfg: SynthConfig) -> SynthTruth:
    rng = np.random.default_rng(cfg.seed)
    item_cat = np.arange(cfg.n_items) % cfg.n_categories
    scene_cats = [sorted(rng.choice(cfg.n_categories, cfg.cats_per_scene, replace=False).tolist())
                  for _ in range(cfg.n_scenes)]
    # Zipf-like weight over a random item order; only in-scene draws use it
    popularity = 1.0 / (1.0 + rng.permutation(cfg.n_items)) ** cfg.popularity_exponent
    user_scenes, interactions = [], []
    for _ in range(cfg.n_users):
        k = min(int(rng.integers(1, 3)), cfg.n_scenes)
        scenes = sorted(rng.choice(cfg.n_scenes, k, replace=False).tolist())
        cats = sorted({c for s in scenes for c in scene_cats[s]})
        pool = np.flatnonzero(np.isin(item_cat, cats))
        taken = np.zeros(cfg.n_items, dtype=bool)
        items, warned = [], False
        for _ in range(cfg.interactions_per_user):
            in_scene = rng.random() >= cfg.noise_rate
            free_pool = pool[~taken[pool]]
            if in_scene and len(free_pool):
                w = popularity[free_pool]
                i = int(rng.choice(free_pool, p=w / w.sum()))
            else:
                if in_scene and not warned:
                    logger.warning("user %d: preferred pool exhausted; drawing from the full catalog",
                                   len(user_scenes))
                    warned = True
                free = np.flatnonzero(~taken)
                i = int(free[rng.integers(len(free))])
            taken[i] = True
            items.append(i)
        user_scenes.append(scenes)
        interactions.append(items)
    return SynthTruth(item_cat, scene_cats, user_scenes, interactions)


def _write_lines(path: Path, lines) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
            n += 1
    return n


def generate(cfg: SynthConfig, out_dir: Path | str) -> SynthTruth:
    """Write a complete dataset directory; identical config gives identical bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = sample_truth(cfg)

    maps = EntityMaps(tuple(f"u{k}" for k in range(cfg.n_users)),
                      tuple(f"i{k}" for k in range(cfg.n_items)),
                      tuple(f"c{k}" for k in range(cfg.n_categories)),
                      tuple(f"s{k}" for k in range(cfg.n_scenes)))
    U, I, C, S = maps.user_ids, maps.item_ids, maps.category_ids, maps.scene_ids

    sessions = [(u, tuple(items[k:k + SESSION_LENGTH]))
                for u, items in enumerate(truth.interactions)
                for k in range(0, len(items), SESSION_LENGTH)]
    log = build.SessionLog(tuple(sessions))
    counts, item_adj, cat_adj = build.build_layers(log, truth.item_cat, cfg.item_topk, cfg.cat_topk)

    rows = {
        INTERACTIONS: _write_lines(out / INTERACTIONS, (f"{U[u]}\t{I[i]}" for u, items in
                                                        enumerate(truth.interactions) for i in items)),
        ITEMS: _write_lines(out / ITEMS, (f"{I[i]}\t{C[c]}" for i, c in enumerate(truth.item_cat))),
        SCENE_CATEGORY: _write_lines(out / SCENE_CATEGORY, (f"{S[s]}\t{C[c]}" for s, cats in
                                                            enumerate(truth.scene_cats) for c in cats)),
        SESSIONS: _write_lines(out / SESSIONS, (f"{U[u]}\t{','.join(I[i] for i in items)}"
                                                for u, items in sessions)),
        ITEM_ITEM: build.write_item_item(out / ITEM_ITEM, counts, item_adj, maps),
        CATEGORY_CATEGORY: build.write_category_category(out / CATEGORY_CATEGORY, cat_adj, maps),
    }
    manifest = [f"{k}\t{v}" for k, v in asdict(cfg).items()]
    manifest += [f"rows:{name}\t{n}" for name, n in rows.items()]
    _write_lines(out / MANIFEST, manifest)
    return truth


def read_manifest(data_dir: Path | str) -> dict[str, str]:
    return {f[0]: f[1] for _, f in read_tsv(Path(data_dir) / MANIFEST, 2)}


def describe(data_dir: Path | str) -> list[tuple[str, int, int, int]]:
    """Relation summary: ``(relation, #A, #B, #A-B)`` rows counted from the files."""
    d = Path(data_dir)
    for name in (INTERACTIONS, ITEMS, ITEM_ITEM, CATEGORY_CATEGORY, SCENE_CATEGORY):
        if not (d / name).is_file():
            raise FileNotFoundError(f"missing dataset file: {name}")
    ui = read_tsv(d / INTERACTIONS, 2)
    items = read_tsv(d / ITEMS, 2)
    ii = read_tsv(d / ITEM_ITEM, (2, 3))
    cc = read_tsv(d / CATEGORY_CATEGORY, 2)
    sc = read_tsv(d / SCENE_CATEGORY, 2)

    n_items = len({f[0] for _, f in items})
    cats = {f[1] for _, f in items} | {f[1] for _, f in sc} | {c for _, f in cc for c in f}

    def undirected(rows):
        return len({tuple(sorted(f[:2])) for _, f in rows if f[0] != f[1]})

    return [
        ("User-Item", len({f[0] for _, f in ui}), n_items, len({tuple(f) for _, f in ui})),
        ("Item-Item", n_items, n_items, undirected(ii)),
        ("Item-Category", n_items, len(cats), len({tuple(f) for _, f in items})),
        ("Category-Category", len(cats), len(cats), undirected(cc)),
        ("Scene-Category", len({f[0] for _, f in sc}), len(cats), len({tuple(f) for _, f in sc})),
    ]


def format_description(rows) -> str:
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{name:<{width}}  {a:,}-{b:,} ({ab:,})" for name, a, b, ab in rows)
