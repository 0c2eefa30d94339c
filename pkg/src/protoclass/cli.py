"""Single `protoclass` executable exposing the pipeline.

Subcommands: synth, split, build, train, eval, predict. Every command
echoes its effective configuration (defaults + config file + flags, flags
winning) and exits 0 on success, 2 on validation errors, 3 on data errors,
4 on numeric divergence, with a machine-readable JSON error on stderr.

`--threads` is honored by exporting the BLAS thread-count environment
variables before numpy is first imported, which is why all numeric imports
here live inside the command handlers.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import warnings

from .errors import DataError, TrainingDivergedError, ValidationError

SEED_ENV_VAR = "PROTOCLASS_SEED"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

DEFAULT_CONFIG: dict = {
    "seed": None,
    "threads": None,
    "paths": {
        "data": None,
        "prompts": None,
        "bank": None,
        "out": None,
        "query": None,
    },
    "kmeans": {"k": 16, "max_iters": 100, "tol": 1e-4, "init": "plus_plus"},
    "scoring": {
        "temperature": 0.01,
        "clamp_cosine": False,
        "ensemble": {"visual": 0.3, "text_max": 0.5, "text_avg": 0.5},
    },
    "train": {
        "epochs": 30,
        "batch_size": 64,
        "base_lr": 0.003,
        "schedule": "cosine",
        "optimizer": "adamw",
        "weight_decay": 0.01,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "text_max_weight": 0.1,
        "text_avg_weight": 0.1,
    },
    "split": {"ratios": [0.7, 0.1, 0.2]},
    "mode": {"kind": "fully_supervised", "shots": None, "knn_n": None},
    "synth": {"classes": 10, "modes": 3, "dim": 32, "per_class": 120, "sigma": 0.15},
}


class _CliArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # emit JSON instead of usage text
        raise _CliArgError(message)


def _parse_ratios(text: str) -> list[float]:
    parts = text.split(",")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"invalid ratio string {text!r}: expected three comma-separated numbers"
        ) from None
    if len(values) != 3 or any(v <= 0 for v in values) or abs(sum(values) - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError(
            f"invalid ratio string {text!r}: need three positive fractions summing to 1"
        )
    return values


def _merge_config(base: dict, override: dict, path: str = "") -> None:
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ValidationError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {where!r} must be an object")
            _merge_config(base[key], value, where)
        else:
            base[key] = value


def _set_path(cfg: dict, dotted: str, value) -> None:
    node = cfg
    keys = dotted.split(".")
    for key in keys[:-1]:
        node = node[key]
    node[keys[-1]] = value


def _effective_config(args: argparse.Namespace, flag_map: dict[str, str]) -> dict:
    """Defaults, then config file, then explicitly given flags."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    config_path = getattr(args, "config", None)
    if config_path:
        if not os.path.isfile(config_path):
            raise ValidationError(f"config file not found: {config_path}")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {config_path}: invalid JSON ({exc})")
        if not isinstance(loaded, dict):
            raise ValidationError(f"config file {config_path}: top level must be an object")
        _merge_config(cfg, loaded)

    for attr, dotted in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set_path(cfg, dotted, value)

    if cfg["seed"] is None:
        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None:
            try:
                cfg["seed"] = int(env_seed)
            except ValueError:
                raise ValidationError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}")
        else:
            cfg["seed"] = 0
    cfg["seed"] = int(cfg["seed"])
    if cfg["mode"]["kind"] == "few_shot" and cfg["mode"]["shots"] is None:
        cfg["mode"]["shots"] = 16  # the standard few-shot recipe
    return cfg


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        return
    if threads < 1:
        raise ValidationError(f"--threads must be >= 1, got {threads}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(threads)


def _kmeans_config(cfg: dict):
    from .clustering import KMeansConfig

    section = cfg["kmeans"]
    return KMeansConfig(
        k=int(section["k"]),
        max_iters=int(section["max_iters"]),
        tol=float(section["tol"]),
        init=section["init"],
        seed=cfg["seed"],
    )


def _scoring_config(cfg: dict):
    from .scoring import EnsembleWeights, ScoringConfig

    section = cfg["scoring"]
    weights = section["ensemble"]
    return ScoringConfig(
        temperature=float(section["temperature"]),
        ensemble=EnsembleWeights(
            visual=float(weights["visual"]),
            text_max=float(weights["text_max"]),
            text_avg=float(weights["text_avg"]),
        ),
        clamp_cosine=bool(section["clamp_cosine"]),
    )


def _train_config(cfg: dict):
    from .training import TrainConfig

    section = cfg["train"]
    return TrainConfig(
        epochs=int(section["epochs"]),
        batch_size=int(section["batch_size"]),
        base_lr=float(section["base_lr"]),
        schedule=section["schedule"],
        optimizer=section["optimizer"],
        weight_decay=float(section["weight_decay"]),
        beta1=float(section["beta1"]),
        beta2=float(section["beta2"]),
        eps=float(section["eps"]),
        text_max_weight=float(section["text_max_weight"]),
        text_avg_weight=float(section["text_avg_weight"]),
        temperature=float(cfg["scoring"]["temperature"]),
        seed=cfg["seed"],
    )


def _maybe_few_shot(dataset, cfg: dict):
    from .store import sample_few_shot

    shots = cfg["mode"]["shots"]
    if shots is None:
        if cfg["mode"]["kind"] == "few_shot":
            raise ValidationError("few_shot mode needs --shots")
        return dataset
    return sample_few_shot(dataset, int(shots), cfg["seed"])


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args: argparse.Namespace, cfg: dict) -> dict:
    from .evaluation import synth_generate
    from .store import save_embedding_set, save_prompt_embeddings

    section = cfg["synth"]
    dataset, prompts = synth_generate(
        class_count=int(section["classes"]),
        modes_per_class=int(section["modes"]),
        dim=int(section["dim"]),
        n_per_class=int(section["per_class"]),
        noise_sigma=float(section["sigma"]),
        seed=cfg["seed"],
    )
    out = cfg["paths"]["out"]
    save_embedding_set(dataset, out)
    prompt_dir = os.path.join(out, "prompts")
    save_prompt_embeddings(prompts, prompt_dir)
    return {
        "embedding_dir": out,
        "prompt_dir": prompt_dir,
        "rows": dataset.n,
        "dim": dataset.dim,
        "classes": dataset.class_count,
    }


def cmd_split(args: argparse.Namespace, cfg: dict) -> dict:
    from . import binio
    from .store import Split, load_embedding_set, split_dataset

    dataset = load_embedding_set(cfg["paths"]["data"])
    tagged = split_dataset(dataset, tuple(cfg["split"]["ratios"]), cfg["seed"])
    out = cfg["paths"]["out"] or os.path.join(cfg["paths"]["data"], "splits.bin")
    binio.write_splits(out, tagged.splits)
    return {
        "splits_file": out,
        "counts": {
            "train": int(tagged.rows(Split.TRAIN).size),
            "val": int(tagged.rows(Split.VAL).size),
            "test": int(tagged.rows(Split.TEST).size),
        },
    }


def cmd_build(args: argparse.Namespace, cfg: dict) -> dict:
    from .prototypes import build_bank, save_bank
    from .store import load_embedding_set, load_prompt_embeddings

    dataset = load_embedding_set(cfg["paths"]["data"])
    dataset = _maybe_few_shot(dataset, cfg)
    prompts = load_prompt_embeddings(cfg["paths"]["prompts"])
    if prompts.class_names != dataset.class_names:
        raise DataError("prompt classes do not match the embedding manifest classes")
    bank = build_bank(dataset, prompts, _kmeans_config(cfg))
    save_bank(bank, cfg["paths"]["out"])
    return {
        "bank_dir": cfg["paths"]["out"],
        "classes": bank.class_count,
        "visual_per_class": bank.visual_per_class,
        "textual_per_class": bank.textual_per_class,
        "dim": bank.dim,
        "bank_hash": bank.content_hash(),
    }


def cmd_train(args: argparse.Namespace, cfg: dict) -> dict:
    from .prototypes import load_bank, save_bank
    from .store import load_embedding_set
    from .training import train

    dataset = load_embedding_set(cfg["paths"]["data"])
    dataset = _maybe_few_shot(dataset, cfg)
    bank = load_bank(cfg["paths"]["bank"])
    trained, report = train(bank, dataset, dataset, _train_config(cfg), _scoring_config(cfg))
    out = cfg["paths"]["out"]
    save_bank(trained, out)
    report_path = os.path.join(out, "train_report.jsonl")
    report.write_jsonl(report_path)
    last = report.epochs[-1]
    return {
        "bank_dir": out,
        "report_file": report_path,
        "epochs": len(report.epochs),
        "final_loss": last["loss"],
        "final_val_accuracy": last.get("val_accuracy"),
        "final_bank_hash": report.final_bank_hash,
    }


def cmd_eval(args: argparse.Namespace, cfg: dict) -> dict:
    from .evaluation import ModeSpec, evaluate
    from .prototypes import load_bank
    from .store import Split, load_embedding_set

    mode = ModeSpec(
        kind=cfg["mode"]["kind"],
        shots=cfg["mode"]["shots"],
        knn_n=cfg["mode"]["knn_n"],
    )
    dataset = load_embedding_set(cfg["paths"]["data"])
    bank = None
    if mode.kind != "knn":
        if not cfg["paths"]["bank"]:
            raise ValidationError(f"--bank is required for mode {mode.kind}")
        bank = load_bank(cfg["paths"]["bank"])
    split = Split[args.split.upper()]
    report = evaluate(
        dataset,
        mode,
        bank=bank,
        train_set=dataset if mode.kind == "knn" else None,
        config=_scoring_config(cfg),
        eval_split=split,
    )
    outputs = {}
    if cfg["paths"]["out"]:
        report.write_json(cfg["paths"]["out"])
        outputs["report_file"] = cfg["paths"]["out"]
    if args.per_class_csv:
        with open(args.per_class_csv, "w", encoding="utf-8") as f:
            f.write(report.per_class_csv())
        outputs["per_class_csv"] = args.per_class_csv
    if args.confusion_csv:
        with open(args.confusion_csv, "w", encoding="utf-8") as f:
            f.write(report.confusion_csv())
        outputs["confusion_csv"] = args.confusion_csv
    return {
        **outputs,
        "mode": report.mode,
        "accuracy": report.accuracy,
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1,
        "flags": report.flags,
    }


def cmd_predict(args: argparse.Namespace, cfg: dict) -> dict:
    from . import binio
    from .prototypes import load_bank
    from .scoring import score_arrays

    bank = load_bank(cfg["paths"]["bank"])
    queries = binio.read_features(cfg["paths"]["query"])
    _, _, _, fused, _ = score_arrays(queries, bank, _scoring_config(cfg))
    topk = max(1, int(args.topk))
    topk = min(topk, bank.class_count)
    # stable sort of the negated scores keeps ties in class-index order
    order = (-fused).argsort(axis=1, kind="stable")[:, :topk]

    lines = []
    for i in range(queries.shape[0]):
        for rank in range(topk):
            cls = int(order[i, rank])
            record = {
                "index": i,
                "class": bank.class_names[cls],
                "p_fused": float(fused[i, cls]),
            }
            if topk > 1:
                record["rank"] = rank
            lines.append(json.dumps(record, sort_keys=True))
    text = "\n".join(lines) + "\n"

    if cfg["paths"]["out"] and cfg["paths"]["out"] != "-":
        with open(cfg["paths"]["out"], "w", encoding="utf-8") as f:
            f.write(text)
        return {"predictions_file": cfg["paths"]["out"], "queries": queries.shape[0]}
    # predictions own stdout; the config echo goes to stderr for this command
    sys.stdout.write(text)
    return {"queries": int(queries.shape[0]), "_stdout_is_jsonl": True}


# ---------------------------------------------------------------------------
# parser wiring

_COMMON_FLAG_MAP = {
    "seed": "seed",
    "threads": "threads",
}


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON run configuration; flags override it")
    sub.add_argument("--seed", type=int, help=f"global seed (fallback: ${SEED_ENV_VAR}, then 0)")
    sub.add_argument("--threads", type=int, help="BLAS thread cap (default: all cores)")


def build_parser() -> _Parser:
    parser = _Parser(prog="protoclass", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic embedding directory")
    _add_common(p)
    p.add_argument("--m", dest="synth_classes", type=int, help="number of classes")
    p.add_argument("--modes", dest="synth_modes", type=int, help="modes per class")
    p.add_argument("--d", dest="synth_dim", type=int, help="feature dimension")
    p.add_argument("--n", dest="synth_per_class", type=int, help="samples per class")
    p.add_argument("--sigma", dest="synth_sigma", type=float, help="noise sigma")
    p.add_argument("--out", required=True, help="output embedding directory")
    p.set_defaults(
        func=cmd_synth,
        flag_map={
            **_COMMON_FLAG_MAP,
            "synth_classes": "synth.classes",
            "synth_modes": "synth.modes",
            "synth_dim": "synth.dim",
            "synth_per_class": "synth.per_class",
            "synth_sigma": "synth.sigma",
            "out": "paths.out",
        },
    )

    p = subs.add_parser("split", help="assign stratified train/val/test tags")
    _add_common(p)
    p.add_argument("--data", required=True, help="embedding directory")
    p.add_argument("--ratios", type=_parse_ratios, help="train,val,test fractions (default 0.7,0.1,0.2)")
    p.add_argument("--out", help="output splits file (default: DATA/splits.bin)")
    p.set_defaults(
        func=cmd_split,
        flag_map={
            **_COMMON_FLAG_MAP,
            "data": "paths.data",
            "ratios": "split.ratios",
            "out": "paths.out",
        },
    )

    p = subs.add_parser("build", help="construct visual + textual prototype bank")
    _add_common(p)
    p.add_argument("--data", required=True, help="embedding directory")
    p.add_argument("--prompts", required=True, help="prompt embedding directory")
    p.add_argument("--k", type=int, help="visual prototypes per class (default 16)")
    p.add_argument("--shots", type=int, help="few-shot: train rows kept per class")
    p.add_argument("--out", required=True, help="output bank directory")
    p.set_defaults(
        func=cmd_build,
        flag_map={
            **_COMMON_FLAG_MAP,
            "data": "paths.data",
            "prompts": "paths.prompts",
            "k": "kmeans.k",
            "shots": "mode.shots",
            "out": "paths.out",
        },
    )

    p = subs.add_parser("train", help="optimize the prototype bank")
    _add_common(p)
    p.add_argument("--data", required=True, help="embedding directory")
    p.add_argument("--bank", required=True, help="bank directory to start from")
    p.add_argument("--out", required=True, help="output directory (bank + report)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="base_lr", type=float)
    p.add_argument("--shots", type=int, help="few-shot: train rows kept per class")
    p.add_argument("--temperature", type=float)
    p.set_defaults(
        func=cmd_train,
        flag_map={
            **_COMMON_FLAG_MAP,
            "data": "paths.data",
            "bank": "paths.bank",
            "out": "paths.out",
            "epochs": "train.epochs",
            "batch_size": "train.batch_size",
            "base_lr": "train.base_lr",
            "shots": "mode.shots",
            "temperature": "scoring.temperature",
        },
    )

    p = subs.add_parser("eval", help="evaluate a setting and write a report")
    _add_common(p)
    p.add_argument("--data", required=True, help="embedding directory")
    p.add_argument("--bank", help="bank directory (not needed for knn)")
    p.add_argument(
        "--mode",
        choices=["fully_supervised", "few_shot", "training_free_visual", "zero_shot_text", "knn"],
        help="evaluation setting (default fully_supervised)",
    )
    p.add_argument("--shots", type=int, help="few-shot shot count (metadata)")
    p.add_argument("--knn-n", dest="knn_n", type=int, help="neighbors for knn mode")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--temperature", type=float)
    p.add_argument("--weight-visual", dest="weight_visual", type=float)
    p.add_argument("--weight-text-max", dest="weight_text_max", type=float)
    p.add_argument("--weight-text-avg", dest="weight_text_avg", type=float)
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--per-class-csv", dest="per_class_csv", help="per-class metrics CSV path")
    p.add_argument("--confusion-csv", dest="confusion_csv", help="confusion matrix CSV path")
    p.set_defaults(
        func=cmd_eval,
        flag_map={
            **_COMMON_FLAG_MAP,
            "data": "paths.data",
            "bank": "paths.bank",
            "mode": "mode.kind",
            "shots": "mode.shots",
            "knn_n": "mode.knn_n",
            "out": "paths.out",
            "temperature": "scoring.temperature",
            "weight_visual": "scoring.ensemble.visual",
            "weight_text_max": "scoring.ensemble.text_max",
            "weight_text_avg": "scoring.ensemble.text_avg",
        },
    )

    p = subs.add_parser("predict", help="score query features against a bank")
    _add_common(p)
    p.add_argument("--bank", required=True, help="bank directory")
    p.add_argument("--query", required=True, help="feature payload (features.bin layout)")
    p.add_argument("--topk", type=int, default=1)
    p.add_argument("--out", help="predictions file; default stdout JSON lines")
    p.add_argument("--temperature", type=float)
    p.set_defaults(
        func=cmd_predict,
        flag_map={
            **_COMMON_FLAG_MAP,
            "bank": "paths.bank",
            "query": "paths.query",
            "out": "paths.out",
            "temperature": "scoring.temperature",
        },
    )
    return parser


def _emit_error(kind: str, message: str, code: int) -> None:
    sys.stderr.write(
        json.dumps({"error": {"type": kind, "message": message, "exit_code": code}}) + "\n"
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _CliArgError as exc:
        _emit_error("ValidationError", str(exc), EXIT_VALIDATION)
        return EXIT_VALIDATION

    try:
        _apply_threads(getattr(args, "threads", None))
        cfg = _effective_config(args, args.flag_map)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = args.func(args, cfg)
        result["warnings"] = [str(w.message) for w in caught]
    except ValidationError as exc:
        _emit_error("ValidationError", str(exc), EXIT_VALIDATION)
        return EXIT_VALIDATION
    except DataError as exc:
        _emit_error("DataError", str(exc), EXIT_DATA)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        _emit_error("TrainingDivergedError", str(exc), EXIT_DIVERGENCE)
        return EXIT_DIVERGENCE

    payload = {
        "command": args.command,
        "effective_config": cfg,
        "result": {k: v for k, v in result.items() if not k.startswith("_")},
    }
    out = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if result.get("_stdout_is_jsonl"):
        sys.stderr.write(out)
    else:
        sys.stdout.write(out)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
