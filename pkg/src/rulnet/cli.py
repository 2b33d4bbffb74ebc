"""Command-line entry point: ``rulnet {generate,preprocess,train,evaluate,explain}``.

Configuration precedence for ``train`` is flags > ``--config`` file > defaults.
The config file is flat ``key = value`` text; ``#`` starts a comment and keys
are the field names of ``TrainConfig`` and ``ModelConfig`` plus ``loss``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .cmapss_io import (
    parse_rul_truth,
    parse_trajectories,
    write_rul_truth,
    write_table,
    write_trajectories,
)
from .errors import RulnetError, ValidationError
from .interpret import (
    ResidualReport,
    attention_export,
    correlation_matrix,
    raw_feature_matrix,
    residual_report,
    rul_profile_export,
    write_attention_table,
)
from .losses import LossConfig, metrics_report
from .nn.model import ModelConfig, init_params, load_checkpoint, predict, save_checkpoint
from .pipeline import load_preprocessed, preprocess, save_preprocessed
from .synth import SynthConfig, generate
from .trainer import TrainConfig, TrainHistory, fit, split_train_val

log = logging.getLogger("rulnet")

MANIFEST = "manifest.json"
CHECKPOINT = "checkpoint.bin"


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)     # path -> sha256
    outputs: list = field(default_factory=list)
    version: str = __version__
    started: str = ""
    finished: str = ""

    def write(self, out_dir: Path) -> None:
        self.finished = _now()
        (out_dir / MANIFEST).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input not found: {path}")
    return path


def _unit_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


# --- generate -----------------------------------------------------------------

def cmd_generate(args) -> list[Path]:
    config = SynthConfig(
        n_engines=args.engines, min_life=args.min_life, max_life=args.max_life,
        n_constant_sensors=args.constant_sensors, noise_std=args.noise,
        degradation_exponent=args.exponent, seed=args.seed,
    )
    manifest = RunManifest("generate", asdict(config), config.seed, started=_now())
    corpus = generate(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"train_{args.tag}.txt", out / f"test_{args.tag}.txt", out / f"RUL_{args.tag}.txt"]
    write_trajectories(paths[0], corpus.train)
    write_trajectories(paths[1], corpus.test)
    write_rul_truth(paths[2], corpus.truth)
    # validate by reading everything back
    parse_trajectories(paths[0])
    if len(parse_trajectories(paths[1])) != len(parse_rul_truth(paths[2])):
        raise ValidationError("generated test files are inconsistent")
    manifest.outputs = [p.name for p in paths]
    manifest.write(out)
    return paths


# --- preprocess ---------------------------------------------------------------

def cmd_preprocess(args) -> list[Path]:
    train_path = _require(args.train)
    test_given = [a is not None for a in (args.test, args.truth)]
    if any(test_given) and not all(test_given):
        raise ValidationError("--test and --truth must be given together")
    inputs = [train_path] + ([_require(args.test), _require(args.truth)] if all(test_given) else [])
    config = {
        "window": args.window, "stride": args.stride, "max_rul": args.max_rul,
        "variance_threshold": args.variance_threshold, "drop": args.drop,
    }
    manifest = RunManifest("preprocess", config, None, started=_now(),
                           inputs={str(p): sha256_of(p) for p in inputs})
    train = parse_trajectories(train_path)
    test = truth = None
    if all(test_given):
        test = parse_trajectories(args.test)
        truth = parse_rul_truth(args.truth)
    result = preprocess(train, test, truth, window=args.window, stride=args.stride,
                        max_rul=args.max_rul, variance_threshold=args.variance_threshold,
                        drop_override=args.drop)
    out = Path(args.out)
    save_preprocessed(result, out)
    log.info("train windows %s, test windows %s, features %s",
             result.train.tensor.shape, None if result.test is None else result.test.tensor.shape,
             list(result.selection.retained_feature_names))
    manifest.outputs = sorted(p.name for p in out.iterdir() if p.name != MANIFEST)
    manifest.write(out)
    return [out / name for name in manifest.outputs]


# --- train --------------------------------------------------------------------

MODEL_FLAGS = ("filters1", "filters2", "hidden", "attention_units", "fc1_units", "fc2_units",
               "dropout_cnn", "dropout_lstm", "dropout_fc")


def read_config_file(path) -> dict[str, str]:
    values = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{line_no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def _coerce(value, kind):
    if kind is bool:
        return str(value).lower() in ("1", "true", "yes")
    return kind(value)


def resolve_train_settings(args):
    """Merge flags, config file and defaults into (TrainConfig, ModelConfig overrides, loss kind)."""
    file_values = read_config_file(args.config) if args.config else {}
    train_types = {f.name: type(f.default) for f in fields(TrainConfig)}
    model_types = {f.name: type(f.default) for f in fields(ModelConfig)}
    known = set(train_types) | set(MODEL_FLAGS) | {"loss"}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ValidationError(f"unknown config keys {unknown}")

    def pick(name, kind):
        flag = getattr(args, name, None)
        if flag is not None:
            return _coerce(flag, kind)
        if name in file_values:
            return _coerce(file_values[name], kind)
        return None

    train_kwargs = {k: v for k in train_types if (v := pick(k, train_types[k])) is not None}
    model_kwargs = {k: v for k in MODEL_FLAGS if (v := pick(k, model_types[k])) is not None}
    loss = pick("loss", str) or "asymmetric"
    return TrainConfig(**train_kwargs), model_kwargs, loss


def cmd_train(args) -> list[Path]:
    data_dir = _require(args.data)
    train_config, model_kwargs, loss_kind = resolve_train_settings(args)
    data = load_preprocessed(data_dir)
    model_config = ModelConfig(n_features=data.selection.n_features, window=data.window,
                               l2=train_config.l2_lambda, **model_kwargs)
    loss_config = LossConfig(kind=loss_kind)
    resolved = {"train": train_config.to_dict(), "model": model_config.to_dict(),
                "loss": asdict(loss_config)}
    inputs = {str(p): sha256_of(p) for p in sorted(data_dir.iterdir()) if p.name != MANIFEST}
    manifest = RunManifest("train", resolved, train_config.seed, inputs=inputs, started=_now())

    train_set, val_set = split_train_val(data.train, train_config)
    log.info("training on %d windows, validating on %d", len(train_set), len(val_set))
    params = init_params(model_config, train_config.seed)
    best, history = fit(train_set, val_set, params, train_config, loss_config, verbose=True)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "seed": train_config.seed,
        "feature_names": list(data.selection.retained_feature_names),
        "window": data.window, "stride": data.stride, "max_rul": data.max_rul,
        "best_epoch": history.best_epoch, "epochs_run": len(history),
        "train_config": train_config.to_dict(), "loss": asdict(loss_config),
        "trainable_parameters": best.trainable_count(),
    }
    save_checkpoint(out / CHECKPOINT, best, meta)
    write_table(out / "history.csv", TrainHistory.HEADER, history.rows())
    load_checkpoint(out / CHECKPOINT)
    manifest.outputs = [CHECKPOINT, "history.csv"]
    manifest.write(out)
    return [out / CHECKPOINT, out / "history.csv"]


# --- evaluate -----------------------------------------------------------------

def _input_digests(checkpoint, data_dir, *extra) -> dict:
    paths = [Path(checkpoint), *sorted(p for p in Path(data_dir).iterdir() if p.name != MANIFEST),
             *map(Path, extra)]
    return {str(p): sha256_of(p) for p in paths}


def _load_model_and_test(args):
    params, meta = load_checkpoint(_require(args.checkpoint))
    data = load_preprocessed(_require(args.data))
    if data.test is None:
        raise ValidationError(f"{args.data} has no test windows; rerun preprocess with --test/--truth")
    names = list(data.selection.retained_feature_names)
    if meta.get("feature_names") != names:
        raise ValidationError(
            f"feature order mismatch: checkpoint {meta.get('feature_names')} vs data {names}"
        )
    if data.window != meta.get("window", data.window):
        raise ValidationError("window length differs between checkpoint and data")
    return params, meta, data


def cmd_evaluate(args) -> list[Path]:
    params, meta, data = _load_model_and_test(args)
    loss_config = LossConfig()
    test = data.test
    yhat = predict(test.tensor, params)
    report = metrics_report(yhat, test.labels, loss_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    (out / "metrics.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    lines = [f"{k}: {v}" for k, v in d.items()]
    (out / "metrics.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_table(out / "predictions.csv", ["unit", "true", "predicted", "error"],
                ([int(u), float(y), float(p), float(p - y)]
                 for u, y, p in zip(test.unit_ids, test.labels, yhat)))
    manifest = RunManifest("evaluate", {"checkpoint": str(args.checkpoint), "data": str(args.data)},
                           meta.get("seed"), started=_now(),
                           inputs=_input_digests(args.checkpoint, args.data))
    manifest.outputs = ["metrics.json", "metrics.txt", "predictions.csv"]
    manifest.write(out)
    for line in lines:
        print(line)
    return [out / n for n in manifest.outputs]


# --- explain ------------------------------------------------------------------

def _write_residuals(path, report: ResidualReport) -> None:
    write_table(path, ResidualReport.HEADER, report.rows())


def cmd_explain(args) -> list[Path]:
    params, meta, data = _load_model_and_test(args)
    train = parse_trajectories(_require(args.train))
    test_units = [int(u) for u in data.test.unit_ids]
    train_units = [t.unit_id for t in train]
    if args.units is not None:
        bad_test = [u for u in args.units if u not in test_units]
        bad_train = [u for u in args.units if u not in train_units]
        if bad_test or bad_train:
            raise ValidationError(
                f"unknown unit ids {sorted(set(bad_test) | set(bad_train))}; valid test ids: "
                f"{test_units}; valid train ids: {train_units}"
            )
        heat_units, profile_units = args.units, args.units
    else:
        heat_units, profile_units = test_units[:5], train_units[:6]

    records = attention_export(data.test, params, meta.get("feature_names"), heat_units)
    yhat = predict(data.test.tensor, params)
    residuals = residual_report(yhat, data.test.labels, data.test.unit_ids)
    corr, _ = correlation_matrix(raw_feature_matrix(train, data.selection))
    profiles, scatter = rul_profile_export(train, profile_units, data.max_rul)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_attention_table(out / "attention.csv", records)
    _write_residuals(out / "residuals.csv", residuals)
    (out / "residual_summary.json").write_text(json.dumps({
        "negative_fraction": residuals.negative_fraction,
        "overestimated": residuals.overestimated,
        "band": residuals.band, "band_fraction": residuals.band_fraction,
        "mean_error": residuals.mean_error, "std_error": residuals.std_error,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_table(out / "correlation.csv", list(data.selection.retained_feature_names), corr.tolist())
    write_table(out / "profiles.csv", ["unit", "cycle", "rul"],
                ([u, int(c), float(r)] for u, prof in profiles.items() for c, r in prof))
    write_table(out / "rul_scatter.csv", ["unit", "cycle", "rul"],
                ([int(u), int(c), float(r)] for u, c, r in scatter))
    outputs = ["attention.csv", "residuals.csv", "residual_summary.json", "correlation.csv",
               "profiles.csv", "rul_scatter.csv"]
    manifest = RunManifest("explain", {"units": args.units}, meta.get("seed"), started=_now(),
                           inputs=_input_digests(args.checkpoint, args.data, args.train))
    manifest.outputs = outputs
    manifest.write(out)
    return [out / n for n in outputs]


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rulnet", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic fleet in C-MAPSS format")
    g.add_argument("--out", required=True)
    g.add_argument("--engines", type=_positive_int, default=20)
    g.add_argument("--min-life", type=_positive_int, default=128)
    g.add_argument("--max-life", type=_positive_int, default=362)
    g.add_argument("--constant-sensors", type=int, default=7)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--exponent", type=float, default=2.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tag", default="SYN")
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="select sensors, scale and window a dataset")
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--truth")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=_positive_int, default=30)
    p.add_argument("--stride", type=_positive_int, default=3)
    p.add_argument("--max-rul", type=float, default=130.0)
    p.add_argument("--variance-threshold", type=float, default=1e-8)
    p.add_argument("--drop", type=_unit_list, default=None,
                   help="explicit comma-separated sensor indices to drop, e.g. 1,5,6")
    p.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="fit the model on preprocessed windows")
    t.add_argument("--data", required=True, help="directory written by preprocess")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="flat key = value file")
    for f in fields(TrainConfig):
        kind = type(f.default)
        t.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                       type=kind if kind is not bool else str,
                       choices=("engine", "window") if f.name == "split_mode" else None)
    for name in MODEL_FLAGS:
        kind = type(next(f.default for f in fields(ModelConfig) if f.name == name))
        t.add_argument("--" + name.replace("_", "-"), dest=name, default=None, type=kind)
    t.add_argument("--loss", choices=("asymmetric", "squared"), default=None)
    t.set_defaults(func=cmd_train)

    for name, func, text in (("evaluate", cmd_evaluate, "score a checkpoint on test windows"),
                             ("explain", cmd_explain, "export interpretability tables")):
        e = sub.add_parser(name, help=text)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--data", required=True)
        e.add_argument("--out", required=True)
        if name == "explain":
            e.add_argument("--train", required=True, help="raw training file (C-MAPSS format)")
            e.add_argument("--units", type=_unit_list, default=None)
        e.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RulnetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
