"""Command-line entry point.

Subcommands: synth | train | eval | retrieve | gradcheck | spectrum | ablate.
Common flags: --config, --seed, --out-dir, --workers. A config file is plain
key=value text (hash comments allowed); CLI flags override file values, which
override defaults. Unknown keys and unknown flags are usage errors.

Exit codes: 0 ok, 1 usage/config error, 2 data or contract error, 3 numeric
failure.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields, replace

import numpy as np

from . import data as data_mod
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateInputError,
    NumericError,
    RetrievalError,
)
from .gradcheck import run_all
from .kernel import dft_magnitude_raw
from .model import load_checkpoint, save_checkpoint
from .retrieval import KnowledgeBase, retrieve
from .training import (
    FoldResult,
    TrainConfig,
    make_folds,
    evaluate_arrays,
    run_ablation_suite,
    metrics_csv_text,
    summarize,
    train_fold,
    VARIANT_ORDER,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_PATH_KEYS = ("dataset", "kb", "out_dir", "workers")
_CONFIG_KEYS = {f.name: f.type for f in fields(TrainConfig)}


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_bool(text: str, key: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("on", "true", "1", "yes"):
        return True
    if lowered in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected on/off, got {text!r}")


def read_config_file(path: str) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS and key not in _PATH_KEYS:
            raise ConfigError(f"{path} line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value: str):
    kind = _CONFIG_KEYS[key]
    text = str(kind)
    if "bool" in text:
        return _parse_bool(value, key)
    if "int" in text:
        return int(value)
    if "float" in text:
        return float(value)
    return value


def build_train_config(file_values: dict[str, str], cli_values: dict) -> TrainConfig:
    kwargs = {}
    for key, value in file_values.items():
        if key in _CONFIG_KEYS:
            kwargs[key] = _coerce(key, value)
    for key, value in cli_values.items():
        if key in _CONFIG_KEYS and value is not None:
            kwargs[key] = value
    config = TrainConfig(**kwargs)
    config.validate()
    return config


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--workers", type=int, default=None)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    parser.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    parser.add_argument("--lr-decay", dest="lr_decay", type=float, default=None)
    parser.add_argument("--lr-decay-every", dest="lr_decay_every", type=int, default=None)
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument("--folds", type=int, default=None)
    parser.add_argument("--clip-norm", dest="clip_norm", type=float, default=None)
    parser.add_argument("--dropout", type=float, default=None)
    parser.add_argument("--hidden1", type=int, default=None)
    parser.add_argument("--hidden2", type=int, default=None)
    parser.add_argument("--k-filters", dest="k_filters", type=int, default=None)
    parser.add_argument("--retrieval-k", dest="retrieval_k", type=int, default=None)
    parser.add_argument("--retrieval-tau", dest="retrieval_tau", type=float, default=None)
    parser.add_argument("--aug-sigma", dest="aug_sigma", type=float, default=None)
    for flag in ("frequency", "retrieval", "contrastive", "co-selection", "tie-filters"):
        parser.add_argument(f"--{flag}", dest=flag.replace("-", "_"), choices=["on", "off"],
                            default=None)
    parser.add_argument("--similarity", choices=["fidelity", "cosine"], default=None)
    parser.add_argument("--fusion-mode", dest="fusion_mode",
                        choices=["freq_only", "freq_plus_knowledge"], default=None)
    parser.add_argument("--contrastive-space", dest="contrastive_space",
                        choices=["spatial", "enhanced"], default=None)
    parser.add_argument("--fold", action="append", type=int, default=None,
                        help="train only these folds (repeatable); default all")


def build_parser() -> _Parser:
    parser = _Parser(prog="freqfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset and knowledge base")
    _add_common(p_synth)
    p_synth.add_argument("--classes", type=int, default=4)
    p_synth.add_argument("--per-class", dest="per_class", type=int, default=100)
    p_synth.add_argument("--d-model", dest="d_model", type=int, default=64)
    p_synth.add_argument("--sigma", type=float, default=0.3)
    p_synth.add_argument("--amplitude", type=float, default=data_mod.SYNTH_AMPLITUDE)
    p_synth.add_argument("--samples-per-image", dest="samples_per_image", type=int, default=1)

    p_train = sub.add_parser("train", help="cross-validated training")
    _add_common(p_train)
    p_train.add_argument("--dataset", default=None)
    p_train.add_argument("--kb", default=None)
    _add_train_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p_eval)
    p_eval.add_argument("--dataset", default=None)
    p_eval.add_argument("--kb", default=None)
    p_eval.add_argument("--checkpoint", required=True)

    p_ret = sub.add_parser("retrieve", help="probe the knowledge base with query vectors")
    _add_common(p_ret)
    p_ret.add_argument("--kb", default=None)
    p_ret.add_argument("--queries", required=True, help="JSONL file, one vector per line")
    p_ret.add_argument("--k", type=int, default=3)
    p_ret.add_argument("--tau", type=float, default=0.1)
    p_ret.add_argument("--similarity", choices=["fidelity", "cosine"], default="fidelity")

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of every op")
    _add_common(p_grad)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)

    p_spec = sub.add_parser("spectrum", help="dump input-feature magnitude spectra as CSV")
    _add_common(p_spec)
    p_spec.add_argument("--dataset", default=None)
    p_spec.add_argument("--limit", type=int, default=0, help="0 means all samples")

    p_abl = sub.add_parser("ablate", help="run the component ablation suite")
    _add_common(p_abl)
    p_abl.add_argument("--dataset", default=None)
    p_abl.add_argument("--kb", default=None)
    _add_train_flags(p_abl)

    return parser


def _resolve(args, file_values: dict[str, str], key: str, default=None):
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    if key in file_values:
        return file_values[key]
    return default


def _train_config_from(args, file_values: dict[str, str]) -> TrainConfig:
    cli_values = {}
    for name in _CONFIG_KEYS:
        value = getattr(args, name, None)
        if value is None:
            continue
        if name in ("frequency", "retrieval", "contrastive", "co_selection", "tie_filters"):
            value = _parse_bool(value, name) if isinstance(value, str) else value
        cli_values[name] = value
    return build_train_config(file_values, cli_values)


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"missing required {flag}")
    return value


def _load_kb(path: str | None) -> KnowledgeBase | None:
    if path is None:
        return None
    return KnowledgeBase(data_mod.load_knowledge_base(path))


def _train_one_fold_job(payload):
    dataset_path, kb_path, config, fold = payload
    manifest, samples = data_mod.load_dataset(dataset_path)
    kb = _load_kb(kb_path)
    fold_ids = make_folds(samples, k=config.folds, seed=config.seed)
    return fold, train_fold(manifest, samples, kb, config, fold_ids, fold)


def _ablate_one_job(payload):
    dataset_path, kb_path, config, variant, fold = payload
    from .training import variant_configs

    manifest, samples = data_mod.load_dataset(dataset_path)
    kb = _load_kb(kb_path)
    fold_ids = make_folds(samples, k=config.folds, seed=config.seed)
    variant_config = variant_configs(config)[variant]
    return variant, fold, train_fold(manifest, samples, kb, variant_config, fold_ids, fold)


def _fold_payload(result: FoldResult) -> dict:
    return {
        "fold": result.fold,
        "best_epoch": result.best_epoch,
        "metrics": result.metrics.as_dict(),
        "history": [
            {
                "epoch": h.epoch,
                "lr": h.lr,
                "train_loss": h.train_loss,
                "ce": h.ce,
                "contrastive": h.contrastive,
                "val_accuracy": h.val_accuracy,
            }
            for h in result.history
        ],
    }


def cmd_synth(args, file_values) -> int:
    out_dir = _require(_resolve(args, file_values, "out_dir"), "--out-dir")
    seed = int(_resolve(args, file_values, "seed", 0))
    manifest, samples, kb = data_mod.generate_synthetic(
        n_classes=args.classes,
        n_per_class=args.per_class,
        d_model=args.d_model,
        sigma=args.sigma,
        seed=seed,
        samples_per_image=args.samples_per_image,
        amplitude=args.amplitude,
    )
    os.makedirs(out_dir, exist_ok=True)
    dataset_path = os.path.join(out_dir, "dataset.jsonl")
    kb_path = os.path.join(out_dir, "kb.jsonl")
    data_mod.save_dataset(dataset_path, manifest, samples)
    data_mod.save_knowledge_base(kb_path, kb)
    print(dataset_path)
    print(kb_path)
    return EXIT_OK


def _run_fold_jobs(jobs, worker_fn, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker_fn, jobs))
    return [worker_fn(job) for job in jobs]


def cmd_train(args, file_values) -> int:
    dataset_path = _require(_resolve(args, file_values, "dataset"), "--dataset")
    kb_path = _resolve(args, file_values, "kb")
    out_dir = _require(_resolve(args, file_values, "out_dir"), "--out-dir")
    workers = int(_resolve(args, file_values, "workers", 1))
    config = _train_config_from(args, file_values)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    elif "seed" in file_values:
        config = replace(config, seed=int(file_values["seed"]))

    manifest, samples = data_mod.load_dataset(dataset_path)
    folds = args.fold if args.fold else list(range(config.folds))
    for fold in folds:
        if not 0 <= fold < config.folds:
            raise ConfigError(f"fold {fold} outside [0, {config.folds})")
    jobs = [(dataset_path, kb_path, config, fold) for fold in folds]
    results = dict(_run_fold_jobs(jobs, _train_one_fold_job, workers))

    os.makedirs(out_dir, exist_ok=True)
    rows = [("train", fold, results[fold].metrics) for fold in folds]
    from .training import write_metrics_csv

    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), rows)
    summary = {
        "config": asdict(config),
        "folds": [_fold_payload(results[fold]) for fold in folds],
        "summary": summarize([results[fold].metrics for fold in folds]),
    }
    data_mod.atomic_write_text(
        os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2) + "\n"
    )
    for fold in folds:
        save_checkpoint(
            os.path.join(out_dir, f"fold{fold}.ckpt.json"),
            results[fold].params,
            extra_meta={"train_config": asdict(config), "fold": fold},
        )
    print(os.path.join(out_dir, "metrics.csv"))
    return EXIT_OK


def cmd_eval(args, file_values) -> int:
    dataset_path = _require(_resolve(args, file_values, "dataset"), "--dataset")
    kb_path = _resolve(args, file_values, "kb")
    manifest, samples = data_mod.load_dataset(dataset_path)
    if not samples:
        raise DataError(f"{dataset_path}: dataset has no samples to evaluate")
    params = load_checkpoint(args.checkpoint)
    with open(args.checkpoint, encoding="utf-8") as fh:
        meta = json.load(fh)["meta"]
    stored = meta.get("train_config", {})
    config = TrainConfig(**{k: v for k, v in stored.items() if k in _CONFIG_KEYS})
    kb = _load_kb(kb_path)
    report = evaluate_arrays(
        params,
        data_mod.question_matrix(samples),
        data_mod.image_matrix(samples),
        data_mod.labels_array(samples),
        kb,
        config,
    )
    payload = json.dumps({"metrics": report.as_dict()}, indent=2) + "\n"
    out_dir = _resolve(args, file_values, "out_dir")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        data_mod.atomic_write_text(os.path.join(out_dir, "metrics.json"), payload)
        print(os.path.join(out_dir, "metrics.json"))
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def cmd_retrieve(args, file_values) -> int:
    kb_path = _require(_resolve(args, file_values, "kb"), "--kb")
    kb = _load_kb(kb_path)
    try:
        with open(args.queries, encoding="utf-8") as fh:
            lines = [line for line in fh.read().splitlines() if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read queries {args.queries}: {exc}") from exc
    outputs = []
    for lineno, line in enumerate(lines, start=1):
        try:
            vec = np.asarray(json.loads(line), dtype=np.float64)
        except (json.JSONDecodeError, ValueError, TypeError) as exc:
            raise DataError(f"{args.queries} line {lineno}: not a JSON number array") from exc
        if vec.ndim != 1:
            raise DataError(f"{args.queries} line {lineno}: expected a flat vector")
        result = retrieve(vec, kb, k=args.k, tau=args.tau, similarity=args.similarity)
        outputs.append(
            json.dumps(
                {
                    "ids": [e.entry_id for e in result.entries],
                    "similarities": [float(s) for s in result.similarities],
                    "weights": [float(w) for w in result.weights],
                }
            )
        )
    text = "\n".join(outputs) + "\n"
    out_dir = _resolve(args, file_values, "out_dir")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        data_mod.atomic_write_text(os.path.join(out_dir, "retrieval.jsonl"), text)
        print(os.path.join(out_dir, "retrieval.jsonl"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args, file_values) -> int:
    seed = int(_resolve(args, file_values, "seed", 0))
    results = run_all(seed=seed, tolerance=args.tolerance)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:18s} {status}  rel_err={r.error:.3e}")
        all_ok = all_ok and r.passed
    return EXIT_OK if all_ok else EXIT_NUMERIC


def cmd_spectrum(args, file_values) -> int:
    dataset_path = _require(_resolve(args, file_values, "dataset"), "--dataset")
    out_dir = _require(_resolve(args, file_values, "out_dir"), "--out-dir")
    manifest, samples = data_mod.load_dataset(dataset_path)
    if args.limit > 0:
        samples = samples[: args.limit]
    lines = ["id,modality,bin,magnitude"]
    for sample in samples:
        question = (
            sample.question_features
            if sample.question_features is not None
            else data_mod.embed_text_stub(sample.question_tokens)
        )
        for modality, vec in (("text", question), ("image", sample.image_features)):
            mags, _ = dft_magnitude_raw(vec)
            for b, m in enumerate(mags):
                lines.append(f"{sample.sample_id},{modality},{b},{float(m)!r}")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "spectra.csv")
    data_mod.atomic_write_text(path, "\n".join(lines) + "\n")
    print(path)
    return EXIT_OK


def cmd_ablate(args, file_values) -> int:
    dataset_path = _require(_resolve(args, file_values, "dataset"), "--dataset")
    kb_path = _resolve(args, file_values, "kb")
    out_dir = _require(_resolve(args, file_values, "out_dir"), "--out-dir")
    workers = int(_resolve(args, file_values, "workers", 1))
    config = _train_config_from(args, file_values)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    elif "seed" in file_values:
        config = replace(config, seed=int(file_values["seed"]))

    manifest, samples = data_mod.load_dataset(dataset_path)
    folds = args.fold if args.fold else list(range(config.folds))
    jobs = [
        (dataset_path, kb_path, config, variant, fold)
        for variant in VARIANT_ORDER
        for fold in folds
    ]
    raw = _run_fold_jobs(jobs, _ablate_one_job, workers)
    by_variant: dict[str, dict[int, FoldResult]] = {}
    for variant, fold, result in raw:
        by_variant.setdefault(variant, {})[fold] = result

    os.makedirs(out_dir, exist_ok=True)
    rows = []
    summary = {}
    for variant in VARIANT_ORDER:
        per_fold = [by_variant[variant][fold] for fold in folds]
        rows.extend((variant, fold, r.metrics) for fold, r in zip(folds, per_fold))
        summary[variant] = summarize([r.metrics for r in per_fold])
    from .training import write_metrics_csv

    write_metrics_csv(os.path.join(out_dir, "ablation.csv"), rows)
    data_mod.atomic_write_text(
        os.path.join(out_dir, "ablation_summary.json"),
        json.dumps({"config": asdict(config), "summary": summary}, indent=2) + "\n",
    )
    print(os.path.join(out_dir, "ablation.csv"))
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "gradcheck": cmd_gradcheck,
    "spectrum": cmd_spectrum,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        file_values = read_config_file(args.config) if args.config else {}
        return _COMMANDS[args.command](args, file_values)
    except ConfigError as exc:
        print(f"freqfuse: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ContractError, RetrievalError, DegenerateInputError) as exc:
        print(f"freqfuse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"freqfuse: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
