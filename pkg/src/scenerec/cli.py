"""Command-line entry points.

Every command accepts ``--config FILE`` (``key=value`` lines, ``#`` comments);
explicit flags override file values, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import build, checkpoint, synth
from .checkpoint import CheckpointError
from .evaluate import DEFAULT_K, DEFAULT_N_NEG, evaluate, explain, leave_one_out_split
from .graph import (CATEGORY_CATEGORY, INTERACTIONS, ITEM_ITEM, ITEMS, SCENE_CATEGORY, SESSIONS,
                    EntityMaps, GraphLoadError, GraphValidationError, load_dataset, read_tsv)
from .model import Variant
from .training import LAMBDA_GRID, LR_GRID, TrainConfig, TrainingError, grid_search, train

logger = logging.getLogger("scenerec")

CHECKPOINT_NAME = "checkpoint.scnr"
HISTORY_NAME = "history.tsv"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_synth_defaults = synth.SynthConfig()
_train_defaults = TrainConfig()

# key -> (type, default)
KEYS: dict[str, tuple[type | object, object]] = {
    "data": (str, None),
    "out": (str, None),
    "checkpoint": (str, None),
    "seed": (int, 0),
    "variant": (str, Variant.FULL.value),
    "d": (int, _train_defaults.d),
    "lr": (float, _train_defaults.lr),
    "lambda": (float, _train_defaults.lam),
    "rms_decay": (float, _train_defaults.rms_decay),
    "rms_eps": (float, _train_defaults.rms_eps),
    "epochs": (int, _train_defaults.epochs),
    "patience": (int, _train_defaults.patience),
    "batch_size": (int, _train_defaults.batch_size),
    "grid": (_bool, False),
    "k": (int, DEFAULT_K),
    "n_neg": (int, DEFAULT_N_NEG),
    "item_topk": (int, build.DEFAULT_ITEM_TOPK),
    "cat_topk": (int, build.DEFAULT_CAT_TOPK),
    "n_scenes": (int, _synth_defaults.n_scenes),
    "n_categories": (int, _synth_defaults.n_categories),
    "n_items": (int, _synth_defaults.n_items),
    "n_users": (int, _synth_defaults.n_users),
    "cats_per_scene": (int, _synth_defaults.cats_per_scene),
    "interactions_per_user": (int, _synth_defaults.interactions_per_user),
    "noise_rate": (float, _synth_defaults.noise_rate),
    "popularity_exponent": (float, _synth_defaults.popularity_exponent),
}


def _coerce(key: str, raw, source: str):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r} ({source})")
    kind = KEYS[key][0]
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {raw!r} for key {key!r} ({source})") from None


def read_config_file(path: Path | str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path.name}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _coerce(key, value, f"{path.name}:{lineno}")
    return out


def merge_config(flags: dict, file_values: dict | None = None) -> dict:
    """Defaults, then file values, then flags that were actually given."""
    cfg = {k: default for k, (_, default) in KEYS.items()}
    for source, values in (("config file", file_values or {}), ("flag", flags)):
        for k, v in values.items():
            if v is not None:
                cfg[k] = _coerce(k, v, source)
    if cfg["variant"] not in {v.value for v in Variant}:
        raise ConfigError(f"unknown variant {cfg['variant']!r}")
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def synth_config(cfg: dict) -> synth.SynthConfig:
    names = {f.name for f in fields(synth.SynthConfig)}
    return synth.SynthConfig(**{k: cfg[k] for k in names})


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(d=cfg["d"], lr=cfg["lr"], lam=cfg["lambda"], rms_decay=cfg["rms_decay"],
                       rms_eps=cfg["rms_eps"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                       patience=cfg["patience"], seed=cfg["seed"], variant=Variant(cfg["variant"]),
                       k=cfg["k"])


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gen(cfg: dict) -> int:
    _require(cfg, "out")
    scfg = synth_config(cfg)
    synth.generate(scfg, cfg["out"])
    print(synth.format_description(synth.describe(cfg["out"])))
    return 0


def cmd_describe(cfg: dict) -> int:
    _require(cfg, "data")
    print(synth.format_description(synth.describe(cfg["data"])))
    return 0


def _build_maps(data: Path) -> EntityMaps:
    users: dict[str, None] = {}
    for name in (INTERACTIONS, SESSIONS):
        if (data / name).is_file():
            users.update(dict.fromkeys(f[0] for _, f in read_tsv(data / name, 2)))
    item_rows = read_tsv(data / ITEMS, 2)
    sc_rows = read_tsv(data / SCENE_CATEGORY, 2)
    cats = dict.fromkeys([f[1] for _, f in item_rows] + [f[1] for _, f in sc_rows])
    return EntityMaps(tuple(users), tuple(dict.fromkeys(f[0] for _, f in item_rows)),
                      tuple(cats), tuple(dict.fromkeys(f[0] for _, f in sc_rows)))


def cmd_build_graph(cfg: dict) -> int:
    _require(cfg, "data")
    data = Path(cfg["data"])
    out = Path(cfg["out"] or data)
    for name in (SESSIONS, ITEMS, SCENE_CATEGORY):
        if not (data / name).is_file():
            raise FileNotFoundError(f"missing input file: {data / name}")
    maps = _build_maps(data)
    log = build.load_sessions(data / SESSIONS, maps)
    item_cat = [0] * maps.n_items
    for lineno, (i, c) in read_tsv(data / ITEMS, 2):
        item_cat[maps.index("item", i)] = maps.index("category", c)
    counts, item_adj, cat_adj = build.build_layers(log, item_cat, cfg["item_topk"], cfg["cat_topk"])
    out.mkdir(parents=True, exist_ok=True)
    n_ii = build.write_item_item(out / ITEM_ITEM, counts, item_adj, maps)
    n_cc = build.write_category_category(out / CATEGORY_CATEGORY, cat_adj, maps)
    print(f"item-item edges\t{n_ii}\ncategory-category edges\t{n_cc}")
    return 0


def _load(cfg: dict):
    _require(cfg, "data")
    graph = load_dataset(cfg["data"])
    split = leave_one_out_split(graph.bipartite, cfg["n_neg"], cfg["seed"])
    return graph, split


def cmd_train(cfg: dict) -> int:
    _require(cfg, "data", "out")
    graph, split = _load(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    tcfg = train_config(cfg)
    if cfg["grid"]:
        tcfg, result, rows = grid_search(graph, split, tcfg, LR_GRID, LAMBDA_GRID)
        with open(out / "grid.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for lr, lam, score in rows:
                fh.write(f"{float(lr)!r}\t{float(lam)!r}\t{float(score)!r}\n")
        print(f"best lr={tcfg.lr:g} lambda={tcfg.lam:g}")
    else:
        result = train(graph, split, tcfg)
    checkpoint.save(out / CHECKPOINT_NAME, result.params, tcfg.variant)
    result.write_history(out / HISTORY_NAME)
    best = result.history[result.best_epoch - 1] if result.best_epoch else None
    if best is not None:
        print(f"best epoch {best.epoch}: val NDCG@{tcfg.k} {best.val_ndcg:.4f} HR@{tcfg.k} {best.val_hr:.4f}")
    return 0


def _checkpoint_for(cfg: dict, graph):
    path = Path(cfg["checkpoint"] or Path(cfg["out"] or ".") / CHECKPOINT_NAME)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    params, variant = checkpoint.load(path)
    m = graph.maps
    want = (m.n_users, m.n_items, m.n_categories, m.n_scenes)
    if params.counts != want:
        raise CheckpointError(f"dimension mismatch: checkpoint has (users, items, categories, scenes)="
                              f"{params.counts}, dataset has {want}")
    return params, variant


def cmd_eval(cfg: dict) -> int:
    _require(cfg, "data", "out")
    graph, split = _load(cfg)
    params, variant = _checkpoint_for(cfg, graph)
    train_graph = graph.with_bipartite(split.train_graph())
    report = evaluate(params, train_graph, split, cfg["k"], "test", variant)
    report.write(cfg["out"], graph.maps.user_ids)
    print(f"test users {len(report.ranks)}  HR@{report.k} {report.hr:.4f}  NDCG@{report.k} {report.ndcg:.4f}")
    return 0


def cmd_explain(cfg: dict, user_id: str, item_id: str) -> int:
    graph, split = _load(cfg)
    params, variant = _checkpoint_for(cfg, graph)
    m = graph.maps
    u, i = m.get("user", user_id), m.get("item", item_id)
    if u is None:
        raise ConfigError(f"unknown user id {user_id!r}")
    if i is None:
        raise ConfigError(f"unknown item id {item_id!r}")
    ex = explain(u, i, params, graph.with_bipartite(split.train_graph()), variant)
    print(f"user\t{user_id}\nitem\t{item_id}\nscore\t{float(ex.score)!r}")
    print(f"average_attention\t{float(ex.average_attention)!r}")
    for x, b in ex.per_item:
        print(f"{m.item_ids[x]}\t{float(b)!r}")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _flag(parser: argparse.ArgumentParser, key: str, help: str) -> None:
    kind = KEYS[key][0]
    name = "--" + key.replace("_", "-")
    if kind is _bool:
        parser.add_argument(name, dest=key, action="store_const", const=True, default=None, help=help)
    else:
        parser.add_argument(name, dest=key, type=str, default=None, metavar=key.upper(), help=help)


_COMMON = {"seed": "random seed (unsigned 64-bit)", "data": "dataset directory",
           "out": "output directory"}
_TRAIN = {"variant": "full, noitem, nosce or noatt", "d": "embedding dimension",
          "lr": "RMSProp learning rate", "lambda": "L2 coefficient", "epochs": "maximum epochs",
          "patience": "early-stop patience (epochs)", "batch_size": "triples per batch",
          "rms_decay": "RMSProp decay", "rms_eps": "RMSProp epsilon"}
_EVAL = {"k": "cut-off K for HR/NDCG", "n_neg": "sampled negatives per held-out item"}
_SYNTH = {"n_scenes": "scenes", "n_categories": "categories", "n_items": "items", "n_users": "users",
          "cats_per_scene": "categories per scene", "interactions_per_user": "interactions per user",
          "noise_rate": "fraction of off-scene interactions",
          "popularity_exponent": "skew of in-scene item popularity (0 = uniform)"}
_CAPS = {"item_topk": "neighbours kept per item", "cat_topk": "neighbours kept per category"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenerec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help, *groups):
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", metavar="PATH", help="key=value config file")
        for group in groups:
            for key, text in group.items():
                _flag(p, key, text)
        return p

    command("gen", "generate a synthetic dataset", _COMMON, _SYNTH, _CAPS)
    command("describe", "summarise a dataset directory", {"data": _COMMON["data"]})
    command("build-graph", "build item-item and category-category files from sessions",
            _COMMON, _CAPS)
    p = command("train", "train a model", _COMMON, _TRAIN, _EVAL)
    _flag(p, "grid", "search the learning-rate x lambda grid")
    p = command("eval", "evaluate a checkpoint on the test split", _COMMON, _EVAL)
    _flag(p, "checkpoint", "checkpoint file (default OUT/checkpoint.scnr)")
    p = command("explain", "average scene attention between a candidate and a user's items",
                _COMMON, {"n_neg": _EVAL["n_neg"]})
    _flag(p, "checkpoint", "checkpoint file (default OUT/checkpoint.scnr)")
    p.add_argument("user_id")
    p.add_argument("item_id")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k in KEYS}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = merge_config(flags, file_values)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "describe":
            return cmd_describe(cfg)
        if args.command == "build-graph":
            return cmd_build_graph(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        return cmd_explain(cfg, args.user_id, args.item_id)
    except (ConfigError, CheckpointError, GraphLoadError, GraphValidationError, TrainingError,
            FileNotFoundError, ValueError, OSError) as exc:
        print(f"scenerec {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
