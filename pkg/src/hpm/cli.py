"""Command-line entry point: ``hpm <verb> [options]``.

Exit codes: 0 success, 1 internal error, 2 input error, 3 missing prerequisite.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data.build import ingest_files
from .data.ingest import IngestionError
from .data.relations import DEFAULT_PRICE_TOLERANCE
from .data.store import Dataset, SchemaError, load_dataset, save_dataset
from .data.synth import SynthConfig, SynthConfigError, synth_generate
from .model import VARIANTS
from .numeric import ConfigError
from .rng import substream
from .serialization import CheckpointError

log = logging.getLogger("hpm")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_PREREQ = 0, 1, 2, 3
EMBEDDINGS_FILE = "embeddings.bin"
MODEL_FILE = "model.bin"
TRAIN_LOG_FILE = "train_log.jsonl"


class InputError(Exception):
    """Bad user input: exit code 2."""


class PrerequisiteError(Exception):
    """An artifact a command depends on does not exist: exit code 3."""


@dataclass
class RunConfig:
    # training hyperparameters (see TrainConfig)
    epochs: int = 200
    patience: int = 10
    batch_size: int = 64
    lr: float = 1e-6
    pretrain_lr: float = 1e-5
    pretrain_epochs: int = 100
    lam: float = 1.0
    d: int = 64
    heads: int = 4
    layers: int = 1
    dropout: float = 0.2
    max_len: int = 20
    seed: int = 0
    variant: str = "full"
    sigma_init: float = 7.0
    mu_init: float = 30.0
    # data
    dataset: str = "amazon-format"
    reviews: str | None = None
    metadata: str | None = None
    price_tolerance: float = DEFAULT_PRICE_TOLERANCE
    core: int = 5
    max_users: int | None = None
    synth: dict = field(default_factory=dict)
    # paths
    data_dir: str | None = None
    checkpoint_dir: str | None = None
    pretrained: str | None = None
    report_path: str | None = None
    random_init: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        bad = sorted(set(d) - known)
        if bad:
            raise InputError(f"unknown config keys: {bad}")
        cfg = cls(**d)
        if cfg.dataset not in ("amazon-format", "synthetic"):
            raise InputError(f"dataset must be 'amazon-format' or 'synthetic', got {cfg.dataset!r}")
        if cfg.variant not in VARIANTS:
            raise InputError(f"variant must be one of {list(VARIANTS)}, got {cfg.variant!r}")
        return cfg

    def train_config(self):
        from .train import TrainConfig

        keys = {f.name for f in fields(TrainConfig)} - {"log_initial_loss"}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in keys})


def load_config(args) -> RunConfig:
    raw: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise InputError(f"{path}: invalid JSON ({err})") from err
        if not isinstance(raw, dict):
            raise InputError(f"{path}: config must be a JSON object")
    overrides = {
        "seed": getattr(args, "seed", None),
        "variant": getattr(args, "variant", None),
        "lr": getattr(args, "lr", None),
        "epochs": getattr(args, "epochs", None),
        "reviews": getattr(args, "reviews", None),
        "metadata": getattr(args, "metadata", None),
        "max_users": getattr(args, "max_users", None),
        "data_dir": getattr(args, "data", None),
        "pretrained": getattr(args, "pretrained", None),
    }
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "random_init", False):
        raw["random_init"] = True
    return RunConfig.from_dict(raw)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _need_dir(path: str | None, what: str) -> Path:
    if path is None:
        raise InputError(f"{what} not given")
    p = Path(path)
    if not p.exists():
        raise PrerequisiteError(f"{what} not found: {p}")
    return p


def _load_data(cfg: RunConfig) -> Dataset:
    p = _need_dir(cfg.data_dir, "data directory (--data)")
    try:
        return load_dataset(p)
    except FileNotFoundError as err:
        raise PrerequisiteError(f"incomplete data directory: missing {err}") from err


def _print_summary(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True, indent=2))


# -- verbs -------------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = load_config(args)
    for name in ("reviews", "metadata"):
        path = getattr(cfg, name)
        if path is None:
            raise InputError(f"--{name} is required")
        if not Path(path).is_file():
            raise InputError(f"{name} file not found: {path}")
    try:
        ds, stats = ingest_files(cfg.reviews, cfg.metadata, price_tolerance=cfg.price_tolerance,
                                 max_len=cfg.max_len, core=cfg.core, max_users=cfg.max_users)
    except IngestionError as err:
        raise InputError(str(err)) from err
    if not ds.sequences:
        raise InputError("no interactions survive filtering")
    out = save_dataset(ds, args.out, {"ingest": stats, "source": "amazon-format"})
    _print_summary(ds.summary())
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = load_config(args)
    try:
        sc = SynthConfig.from_dict(cfg.synth)
        sd = synth_generate(sc, substream(cfg.seed, "synth"))
    except (SynthConfigError, TypeError) as err:
        raise InputError(f"synth config: {err}") from err
    ds = Dataset(sd.catalog, sd.sequences, sd.graph, sd.user_ids, max_len=sc.max_len)
    out = save_dataset(ds, args.out, {"source": "synthetic", "seed": cfg.seed, "synth": sc.to_dict()})
    _write_json(Path(out) / "ground_truth.json", sd.trace)
    _print_summary(ds.summary())
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .kge import EmbeddingTables, PretrainConfig, graph_triples, pretrain

    cfg = load_config(args)
    ds = _load_data(cfg)
    cat = ds.catalog
    tables = EmbeddingTables.random(cat.n_items, cat.n_categories, len(ds.graph.relations), cfg.d, ds.max_len,
                                    substream(cfg.seed, "kge-init"))
    pc = PretrainConfig(epochs=cfg.pretrain_epochs, lr=cfg.pretrain_lr)
    res = pretrain(graph_triples(ds.graph), tables, pc, substream(cfg.seed, "kge"))
    out = Path(args.out)
    res.tables.save(out / EMBEDDINGS_FILE, {"seed": cfg.seed, "epochs": pc.epochs, "lr": pc.lr})
    _write_json(out / "pretrain_log.json", {"epoch_loss": res.epoch_loss, "fixed_sample_loss": res.fixed_sample_loss})
    final = res.epoch_loss[-1] if res.epoch_loss else None
    print(json.dumps({"embeddings": str(out / EMBEDDINGS_FILE), "final_loss": final}, sort_keys=True))
    return EXIT_OK


def _tables_for_training(cfg: RunConfig, ds: Dataset):
    from .kge import EmbeddingTables

    if cfg.random_init:
        return None
    if cfg.pretrained is None:
        raise PrerequisiteError("training needs --pretrained EMBEDDINGS (from 'hpm pretrain') or --random-init")
    path = Path(cfg.pretrained)
    if path.is_dir():
        path = path / EMBEDDINGS_FILE
    if not path.is_file():
        raise PrerequisiteError(f"pretrained embeddings not found: {path}")
    tables, meta = EmbeddingTables.load(path)
    expect = (ds.catalog.n_items + 1, cfg.d)
    if tables.item.shape != expect or tables.category.shape[0] != ds.catalog.n_categories + 1:
        raise InputError(f"embeddings {path} do not match the dataset/width (item table {tables.item.shape}, "
                         f"expected {expect})")
    return tables


def cmd_train(args) -> int:
    from .train import save_model, train

    cfg = load_config(args)
    ds = _load_data(cfg)
    tables = _tables_for_training(cfg, ds)
    try:
        tc = cfg.train_config()
    except ConfigError as err:
        raise InputError(str(err)) from err
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(tc, ds, tables=tables, log_path=out / TRAIN_LOG_FILE)
    save_model(out / MODEL_FILE, res.params, res.model_config,
               {"best_epoch": res.best_epoch, "best_value": res.best_value, "train_config": tc.to_dict()})
    print(json.dumps({"model": str(out / MODEL_FILE), "best_epoch": res.best_epoch, "best_val_HR@5": res.best_value,
                      "epochs_run": res.epochs_run}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import evaluate_split
    from .train import load_model

    cfg = load_config(args)
    ds = _load_data(cfg)
    mpath = Path(_need_dir(args.model, "model checkpoint (--model)"))
    if mpath.is_dir():
        mpath = mpath / MODEL_FILE
        if not mpath.is_file():
            raise PrerequisiteError(f"model checkpoint not found: {mpath}")
    params, mcfg, _ = load_model(mpath)
    if mcfg.n_items != ds.catalog.n_items or mcfg.n_categories != ds.catalog.n_categories:
        raise InputError("checkpoint does not match the dataset vocabulary")
    res = evaluate_split(params, mcfg, ds, role=args.role, seed=cfg.seed)
    report = res.report()
    report["seed"] = cfg.seed
    report["variant"] = mcfg.variant
    out = Path(args.out)
    _write_json(out, report)
    print(render_table({out.stem: report["metrics"]}) if args.text else json.dumps(report["metrics"], sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import gradcheck

    cfg = load_config(args)
    rep = gradcheck(seed=cfg.seed, variant=cfg.variant)
    d = rep.to_dict()
    if args.out:
        _write_json(Path(args.out), d)
    for g in rep.groups:
        print(f"{g.name:24s} {g.checked:6d} {g.max_rel_err:10.3e} {'ok' if g.passed else 'FAIL'}")
    print(f"gradcheck {'passed' if rep.passed else 'FAILED'} in {rep.seconds:.1f}s")
    return EXIT_OK if rep.passed else EXIT_INTERNAL


def render_table(rows: dict[str, dict[str, float]]) -> str:
    metrics = sorted({m for r in rows.values() for m in r}, key=lambda m: (m.split("@")[0], int(m.split("@")[1])))
    width = max([len(n) for n in rows] + [8])
    lines = [" ".join([f"{'run':{width}s}"] + [f"{m:>8s}" for m in metrics])]
    for name, r in rows.items():
        lines.append(" ".join([f"{name:{width}s}"] + [f"{r.get(m, float('nan')):8.4f}" for m in metrics]))
    return "\n".join(lines)


def cmd_report(args) -> int:
    rows = {}
    for p in args.reports:
        path = Path(p)
        if not path.is_file():
            raise PrerequisiteError(f"report not found: {path}")
        try:
            obj = json.loads(path.read_text())
            rows[path.stem] = obj["metrics"]
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise InputError(f"{path}: not a metrics report") from err
    if args.format == "json":
        print(json.dumps(rows, sort_keys=True, indent=2))
    else:
        print(render_table(rows))
    if args.out:
        _write_json(Path(args.out), rows)
    return EXIT_OK


def cmd_ablation(args) -> int:
    from .ablation import run_ablation

    cfg = load_config(args)
    try:
        sc = SynthConfig.from_dict(cfg.synth)
        tc = cfg.train_config()
    except (SynthConfigError, ConfigError, TypeError) as err:
        raise InputError(str(err)) from err
    seeds = [int(s) for s in args.seeds.split(",")]
    res = run_ablation(tc, seeds=seeds, synth=sc, use_pretrain=not cfg.random_init)
    _write_json(Path(args.out), res.to_dict())
    print(render_table({v: {m: res.mean(v, m) for m in ("HR@5", "HR@10", "NDCG@5", "NDCG@10")}
                        for v in res.table()}))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hpm", description="Hierarchical preference sequential recommender")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required, help="output directory or file")

    sp = sub.add_parser("ingest", help="Amazon-format reviews + metadata -> dataset directory")
    common(sp)
    sp.add_argument("--reviews")
    sp.add_argument("--metadata")
    sp.add_argument("--max-users", type=int, help="keep only the first N users after k-core filtering")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="generate a synthetic dataset with planted relations")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("pretrain", help="TransE pretraining of the embedding tables")
    common(sp)
    sp.add_argument("--data")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train", help="train the recommender")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--pretrained", help="embeddings file or pretrain output directory")
    sp.add_argument("--random-init", action="store_true", help="skip pretrained embeddings")
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="rank held-out targets against sampled negatives")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--model", help="checkpoint file or train output directory")
    sp.add_argument("--role", default="test", choices=("validation", "test"))
    sp.add_argument("--text", action="store_true", help="print a plain-text table")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the loss gradient")
    common(sp, out_required=False)
    sp.add_argument("--variant", choices=VARIANTS)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("report", help="tabulate one or more metrics reports")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("ablation", help="train all variants on synthetic data over several seeds")
    common(sp)
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--random-init", action="store_true")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_ablation)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except PrerequisiteError as err:
        print(f"missing prerequisite: {err}", file=sys.stderr)
        return EXIT_PREREQ
    except (SchemaError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as err:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
