"""Command-line entry point: ``transcf {split,train,evaluate,analyze,export}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import statistics
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    UnsupportedDatasetError,
    UnsupportedVariantError,
    export_labeled_translations,
    rating_group_check,
    read_labels,
    translation_check,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import DatasetError, SplitDataset, leave_one_out_split, load_interactions, load_split, write_split
from .embed import EmbeddingTable, HyperParams, ModelState, Variant, write_table
from .evaluation import EvalConfig, evaluate
from .trainer import TrainConfig, TrainingDiverged, train

_logger = logging.getLogger("transcf")

ENV_PREFIX = "TRANSCF_"

EXIT_ERROR = 1
EXIT_MISSING = 2
EXIT_DIVERGED = 3
EXIT_MISMATCH = 4

# name -> (type, default)
SETTINGS = {
    "variant": (str, "transcf"),
    "dim": (int, 32),
    "lr": (float, 0.01),
    "margin": (float, 0.5),
    "lambda_nbr": (float, 0.01),
    "lambda_dist": (float, 0.01),
    "epochs": (int, 200),
    "batch_size": (int, 1000),
    "negatives_per_user": (int, 100),
    "seed": (int, 0),
    "eval_seed": (int, 0),
    "analysis_seed": (int, 0),
    "patience": (int, 10),
    "projection": (str, "per_epoch"),
    "strict_paper_projection": (bool, False),
    "stop_gradient_neighborhoods": (bool, False),
    "skip_empty_neighborhoods": (bool, False),
    "candidate_negatives": (int, 99),
    "cutoffs": (str, "10,20"),
    "threads": (int, 1),
}


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_ERROR):
        super().__init__(msg)
        self.code = code


def package_version() -> str:
    return __version__


def _coerce(name: str, raw):
    typ = SETTINGS[name][0]
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        s = str(raw).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off", ""):
            return False
        raise CliError(f"bad boolean for {name}: {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise CliError(f"bad value for {name}: {raw!r}") from None


def _norm_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def read_config_file(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment.  A JSON run manifest is also accepted."""
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}", EXIT_MISSING)
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return dict(json.loads(text)["config"])
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[_norm_key(k)] = v.strip()
    return out


def resolve_settings(args, base: dict | None = None) -> dict:
    """defaults < config file < TRANSCF_* environment < command-line flags."""
    cfg = {k: d for k, (_, d) in SETTINGS.items()}
    layers = [base or {}]
    if getattr(args, "config", None):
        layers.append(read_config_file(args.config))
    layers.append({_norm_key(k[len(ENV_PREFIX):]): v for k, v in os.environ.items()
                   if k.startswith(ENV_PREFIX) and _norm_key(k[len(ENV_PREFIX):]) in SETTINGS})
    layers.append({k: getattr(args, k) for k in SETTINGS if getattr(args, k, None) is not None})
    for layer in layers:
        for k, v in layer.items():
            k = _norm_key(k)
            if k not in SETTINGS:
                raise CliError(f"unknown setting {k!r}")
            cfg[k] = _coerce(k, v)
    cfg["variant"] = Variant.parse(cfg["variant"]).value
    return cfg


def _cutoffs(s) -> tuple[int, ...]:
    return tuple(int(x) for x in str(s).split(",") if x.strip())


def eval_config(s: dict, full_catalog: bool = False) -> EvalConfig:
    return EvalConfig(s["candidate_negatives"], _cutoffs(s["cutoffs"]), s["eval_seed"], full_catalog, s["threads"])


def train_config(s: dict, seed: int | None = None) -> TrainConfig:
    hyper = HyperParams(
        dim=s["dim"], learning_rate=s["lr"], margin=s["margin"], lambda_nbr=s["lambda_nbr"],
        lambda_dist=s["lambda_dist"], epochs=s["epochs"], negatives_per_user=s["negatives_per_user"],
        batch_size=s["batch_size"], seed=s["seed"] if seed is None else seed,
    )
    return TrainConfig(
        hyper=hyper, variant=s["variant"], projection_cadence=s["projection"],
        stop_gradient_neighborhoods=s["stop_gradient_neighborhoods"],
        skip_empty_neighborhoods=s["skip_empty_neighborhoods"],
        strict_paper_projection=s["strict_paper_projection"], early_stop_patience=s["patience"],
        eval=eval_config(s), threads=s["threads"],
    )


def split_fingerprint(splitdir) -> dict:
    splitdir = Path(splitdir)
    h = hashlib.sha256()
    counts = {}
    for name in ("train", "validation", "test"):
        data = (splitdir / f"{name}.tsv").read_bytes()
        h.update(name.encode() + b"\0" + data)
        counts[name] = data.count(b"\n")
    return {"counts": counts, "sha256": h.hexdigest()}


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_split(path) -> SplitDataset:
    path = Path(path)
    if not path.is_dir():
        raise CliError(f"split directory not found: {path}", EXIT_MISSING)
    try:
        return load_split(path)
    except FileNotFoundError as e:
        raise CliError(f"missing split file: {e}", EXIT_MISSING) from None


def _load_aligned(ckpt, split: SplitDataset) -> ModelState:
    """Load a checkpoint and reorder its rows to the split's id space."""
    if not Path(ckpt).exists():
        raise CliError(f"checkpoint not found: {ckpt}", EXIT_MISSING)
    try:
        model, utoks, itoks, _ = load_checkpoint(ckpt)
    except CheckpointError as e:
        raise CliError(str(e)) from None
    tr = split.train
    if len(utoks) != tr.n_users or len(itoks) != tr.n_items:
        raise CliError(f"checkpoint has {len(utoks)} users x {len(itoks)} items, "
                       f"split has {tr.n_users} x {tr.n_items}", EXIT_MISMATCH)
    uix = {t: k for k, t in enumerate(utoks)}
    iix = {t: k for k, t in enumerate(itoks)}
    try:
        urows = [uix[t] for t in tr.users]
        irows = [iix[t] for t in tr.items]
    except KeyError as e:
        raise CliError(f"checkpoint does not cover entity {e.args[0]!r}", EXIT_MISMATCH) from None
    return ModelState(EmbeddingTable(model.alpha[urows]), EmbeddingTable(model.beta[irows]),
                      model.variant, model.hyper)


def cmd_split(args) -> None:
    src = Path(args.input)
    if not src.exists():
        raise CliError(f"input file not found: {src}", EXIT_MISSING)
    ds = load_interactions(src, args.min_count)
    split = leave_one_out_split(ds)
    out = Path(args.outdir)
    write_split(split, out)
    manifest = {
        "command": "split",
        "version": package_version(),
        "input": str(src),
        "input_sha256": hashlib.sha256(src.read_bytes()).hexdigest(),
        "min_count": args.min_count,
        "n_users": ds.n_users,
        "n_items": ds.n_items,
        "n_interactions": ds.n_interactions,
        "dataset": split_fingerprint(out),
    }
    _write_json(out / "manifest.json", manifest)
    print(f"{ds.n_users} users, {ds.n_items} items, {ds.n_interactions} interactions -> {out}")


def _train_one(split, s, seed, out: Path, fingerprint) -> dict:
    cfg = train_config(s, seed)
    out.mkdir(parents=True, exist_ok=True)
    model, log = train(split, cfg)
    extra = {"train_seed": seed, "eval_seed": s["eval_seed"], "best_epoch": log.best_epoch}
    save_checkpoint(out / "checkpoint.txt", model, split.train.users, split.train.items, extra)
    log.write_csv(out / "train_log.csv", out / "timings.csv")
    report = evaluate(model, split, "test", eval_config(s))
    (out / "test_report.json").write_text(report.to_json(), encoding="utf-8")
    _write_json(out / "manifest.json", {
        "command": "train", "version": package_version(),
        "config": {**s, "seed": seed}, "dataset": fingerprint,
    })
    return {"seed": seed, "best_epoch": log.best_epoch, "val_hr10": log.best_hr10,
            "HR": report.hr, "NDCG": report.ndcg}


def cmd_train(args) -> None:
    base = read_config_file(args.manifest) if args.manifest else None
    s = resolve_settings(args, base)
    split = _load_split(args.splitdir)
    fp = split_fingerprint(args.splitdir)
    out = Path(args.outdir)
    n = args.seeds
    runs = []
    for k in range(n):
        seed = s["seed"] + k
        target = out if n == 1 else out / f"seed_{seed}"
        _logger.info("training %s seed %d -> %s", s["variant"], seed, target)
        runs.append(_train_one(split, s, seed, target, fp))
    summary = {"variant": s["variant"], "runs": runs, "mean": {}, "std": {}}
    for metric in ("HR", "NDCG"):
        for cut in runs[0][metric]:
            vals = [r[metric][cut] for r in runs]
            key = f"{metric}@{cut}"
            summary["mean"][key] = statistics.fmean(vals)
            summary["std"][key] = statistics.pstdev(vals)
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary["mean"], sort_keys=True))


def cmd_evaluate(args) -> None:
    s = resolve_settings(args)
    split = _load_split(args.splitdir)
    model = _load_aligned(args.checkpoint, split)
    report = evaluate(model, split, args.which, eval_config(s, args.full_catalog))
    text = report.to_json()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.per_user:
        report.write_users_csv(args.per_user, split)


def cmd_analyze(args) -> None:
    s = resolve_settings(args)
    split = _load_split(args.splitdir)
    model = _load_aligned(args.checkpoint, split)
    diag = translation_check(model, split, seed=s["analysis_seed"])
    if args.ratings:
        diag.rating_groups = rating_group_check(model, split)
    text = diag.to_json()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.labels:
        if not args.export:
            raise CliError("--labels needs --export PATH")
        skipped = export_labeled_translations(model, split.train, read_labels(args.labels), args.export, args.kind)
        if skipped:
            _logger.warning("%d labels did not match an observed pair", skipped)


def cmd_export(args) -> None:
    if not Path(args.checkpoint).exists():
        raise CliError(f"checkpoint not found: {args.checkpoint}", EXIT_MISSING)
    model, utoks, itoks, _ = load_checkpoint(args.checkpoint)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "users.tsv", utoks, model.user_table)
    write_table(out / "items.tsv", itoks, model.item_table)
    if args.binary:
        np.savez(out / "embeddings.npz", users=model.alpha, items=model.beta,
                 user_tokens=np.array(utoks), item_tokens=np.array(itoks))


def _add_settings(p: argparse.ArgumentParser, train_flags: bool) -> None:
    g = p.add_argument_group("settings (flags override env TRANSCF_<NAME>, which overrides --config)")
    g.add_argument("--config", help="flat key=value config file")
    g.add_argument("--eval-seed", dest="eval_seed", type=int)
    g.add_argument("--candidate-negatives", dest="candidate_negatives", type=int)
    g.add_argument("--cutoffs", help="comma-separated list, e.g. 10,20")
    g.add_argument("--threads", type=int)
    g.add_argument("--analysis-seed", dest="analysis_seed", type=int)
    if not train_flags:
        return
    g.add_argument("--variant", choices=[v.value for v in Variant])
    g.add_argument("--dim", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--margin", type=float)
    g.add_argument("--lambda-nbr", dest="lambda_nbr", type=float)
    g.add_argument("--lambda-dist", dest="lambda_dist", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--negatives-per-user", dest="negatives_per_user", type=int)
    g.add_argument("--seed", type=int, help="training seed (initialisation and sampling)")
    g.add_argument("--patience", type=int, help="early-stop patience in epochs")
    g.add_argument("--projection", choices=["per_epoch", "per_batch"])
    flags = {
        "strict-paper-projection": "shrink rows outside the ball by their squared norm instead of their norm",
        "stop-gradient-neighborhoods": "treat neighbourhood means as constants when differentiating",
        "skip-empty-neighborhoods": "leave entities without neighbours out of the neighbourhood penalty",
    }
    for flag, text in flags.items():
        g.add_argument(f"--{flag}", dest=flag.replace("-", "_"), action="store_const", const=True, help=text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="transcf",
        description="Translational collaborative metric learning for implicit feedback.",
        epilog=f"Any setting can also be given as an environment variable {ENV_PREFIX}<NAME>, "
               f"e.g. {ENV_PREFIX}LR=0.05 or {ENV_PREFIX}LAMBDA_NBR=0.01.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("split", help="filter an interaction log and write a leave-one-out split")
    sp.add_argument("input")
    sp.add_argument("outdir")
    sp.add_argument("--min-count", type=int, default=5)
    sp.set_defaults(func=cmd_split)

    tp = sub.add_parser("train", help="train on a split directory")
    tp.add_argument("splitdir")
    tp.add_argument("outdir")
    tp.add_argument("--manifest", help="rerun from a previous run manifest (flags still override)")
    tp.add_argument("--seeds", type=int, default=1, help="repeat with this many consecutive seeds")
    _add_settings(tp, True)
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("evaluate", help="HR/NDCG of a checkpoint on the held-out items")
    ep.add_argument("checkpoint")
    ep.add_argument("splitdir")
    ep.add_argument("--which", choices=["test", "validation"], default="test")
    ep.add_argument("--seed", dest="eval_seed_alias", type=int, help="alias for --eval-seed")
    ep.add_argument("--output", "-o")
    ep.add_argument("--per-user", help="write per-user ranks to this CSV")
    ep.add_argument("--full-catalog", action="store_true", help="rank against every non-interacted item")
    _add_settings(ep, False)
    ep.set_defaults(func=cmd_evaluate)

    ap = sub.add_parser("analyze", help="translation-vector diagnostics and labelled export")
    ap.add_argument("checkpoint")
    ap.add_argument("splitdir")
    ap.add_argument("--seed", dest="analysis_seed_alias", type=int, help="alias for --analysis-seed")
    ap.add_argument("--ratings", action="store_true", help="add the per-rating breakdown")
    ap.add_argument("--labels", help="user<TAB>item<TAB>label file")
    ap.add_argument("--export", help="where to write labelled vectors")
    ap.add_argument("--kind", choices=["translation", "difference"], default="translation")
    ap.add_argument("--output", "-o")
    _add_settings(ap, False)
    ap.set_defaults(func=cmd_analyze)

    xp = sub.add_parser("export", help="write embedding tables as TSV")
    xp.add_argument("checkpoint")
    xp.add_argument("outdir")
    xp.add_argument("--binary", action="store_true", help="also write embeddings.npz")
    xp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for alias, name in (("eval_seed_alias", "eval_seed"), ("analysis_seed_alias", "analysis_seed")):
        if getattr(args, alias, None) is not None and getattr(args, name, None) is None:
            setattr(args, name, getattr(args, alias))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as e:
        print(f"transcf: {e}", file=sys.stderr)
        return e.code
    except TrainingDiverged as e:
        print(f"transcf: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DatasetError, UnsupportedVariantError, UnsupportedDatasetError, ValueError) as e:
        print(f"transcf: {e}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
