"""Batch command-line front end.

Commands: extract-lbp, split, train, evaluate, compare, synth. Settings
come from a flat ``key = value`` config file plus overrides; precedence is
defaults < config file < --set key=value < dedicated flags (--seed, --out,
--scenario, --model). Every command writes under ``<out>/<run_name>/``
with fixed file names and no timestamps, so reruns with the same config,
seed, and inputs are byte-identical.

Config keys and defaults are the fields of :class:`RunConfig`; the
``meta.txt`` each run writes is itself a valid config file that reproduces
the run.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

from . import data as data_mod
from . import evaluation
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .lbp import LBPConfig, lbp_histogram, lbp_map, to_grayscale
from .models import ModelConfig, SGDConfig, build_model, train
from .data import ManifestError

CHECKPOINT_NAME = "checkpoint.futi"
HISTORY_NAME = "history.csv"
REPORT_NAME = "report.txt"
CONFUSION_NAME = "confusion.csv"
META_NAME = "meta.txt"


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs"
    run_name: str = "run"
    # data source
    dataset: str = "synth"              # synth | manifest
    dataset_root: str = "."
    manifest: str = "manifest.csv"
    permissive: bool = False
    image_size: int = 64
    num_classes: int = 4
    # LBP
    lbp_p: int = 8
    lbp_r: float = 1.0
    lbp_interpolation: str = "nearest"
    lbp_normalize: bool = True
    images: str = ""                    # extract-lbp input directory
    write_maps: bool = False
    # model
    model: str = "fusionnet"
    dnn_hidden: tuple[int, ...] = (512, 256)
    cnn_filters: tuple[int, ...] = (16, 32)
    cnn_hidden: int = 128
    fusion_texture_hidden: tuple[int, ...] = (128, 64)
    fusion_head_hidden: int = 64
    dropout_rate: float = 0.5
    pooling: str = "max"
    # training
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 50
    # split
    scenario: str = "multi_speaker"
    speaker: str = ""
    held_out: tuple[str, ...] = ()
    train_fraction: float = 0.8
    eval_split: str = "test"            # test | train
    # synthetic data
    synth_per_class: int = 50
    synth_signal: str = "both"
    synth_speakers: int = 9


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES.get(key)
    if kind is None:
        raise CliError(f"unknown config key {key!r}")
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise CliError(f"bad boolean for {key!r}: {raw!r}")
    if kind == "tuple[int, ...]":
        return tuple(int(v) for v in raw.split(",")) if raw else ()
    if kind == "tuple[str, ...]":
        return tuple(v.strip() for v in raw.split(",") if v.strip()) if raw else ()
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; blank lines and # comments ignored."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        for key, raw in parse_config_file(args.config).items():
            setattr(cfg, key, _parse_value(key, raw))
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        setattr(cfg, key, _parse_value(key, raw))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "scenario", None) is not None:
        cfg.scenario = args.scenario
    if getattr(args, "model", None) is not None:
        cfg.model = args.model
    return cfg


def write_meta(cfg: RunConfig, path: Path) -> None:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(RunConfig)]
    path.write_text("\n".join(sorted(lines)) + "\n", encoding="utf-8")


def _run_dir(cfg: RunConfig) -> Path:
    run_dir = Path(cfg.out) / cfg.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _lbp_config(cfg: RunConfig) -> LBPConfig:
    return LBPConfig(p=cfg.lbp_p, r=cfg.lbp_r, interpolation=cfg.lbp_interpolation)


def _load_records(cfg: RunConfig) -> list[data_mod.DatasetRecord]:
    if cfg.dataset == "synth":
        spec = data_mod.SynthSpec(
            n_per_class=cfg.synth_per_class,
            image_size=cfg.image_size,
            class_signal=cfg.synth_signal,
            n_speakers=cfg.synth_speakers,
        )
        return data_mod.synth_dataset(spec, cfg.seed, _lbp_config(cfg))
    if cfg.dataset == "manifest":
        result = data_mod.load_dataset(
            cfg.dataset_root,
            cfg.manifest,
            image_size=cfg.image_size,
            lbp_config=_lbp_config(cfg),
            permissive=cfg.permissive,
        )
        for err in result.errors:
            print(f"error: {err}", file=sys.stderr)
        return result.records
    raise CliError(f"config key dataset must be 'synth' or 'manifest', got {cfg.dataset!r}")


def _make_plan(cfg: RunConfig, records) -> data_mod.SplitPlan:
    return data_mod.make_split(
        records,
        cfg.scenario,
        cfg.seed,
        speaker=cfg.speaker or None,
        held_out=cfg.held_out,
        train_fraction=cfg.train_fraction,
    )


def _model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        kind=cfg.model,
        input_image_shape=(1, cfg.image_size, cfg.image_size),
        texture_dim=2 ** cfg.lbp_p,
        num_classes=cfg.num_classes,
        dnn_hidden=cfg.dnn_hidden,
        cnn_filters=cfg.cnn_filters,
        cnn_hidden=cfg.cnn_hidden,
        fusion_texture_hidden=cfg.fusion_texture_hidden,
        fusion_head_hidden=cfg.fusion_head_hidden,
        dropout_rate=cfg.dropout_rate,
        pooling=cfg.pooling,
        seed=cfg.seed,
    )


# -- commands -----------------------------------------------------------------


def cmd_extract_lbp(cfg: RunConfig) -> int:
    """One normalized histogram row per image: path,bin_0,...,bin_{2^P-1}."""
    if not cfg.images:
        raise CliError("extract-lbp needs the 'images' config key (input directory)")
    image_dir = Path(cfg.images)
    if not image_dir.is_dir():
        raise CliError(f"image directory not found: {image_dir}")
    paths = sorted(image_dir.glob("*.png"))
    if not paths:
        raise CliError(f"no .png files under {image_dir}")
    config = _lbp_config(cfg)
    run_dir = _run_dir(cfg)
    failures = 0
    rows = ["path," + ",".join(f"bin_{i}" for i in range(config.n_codes))]
    for path in paths:
        try:
            gray = to_grayscale(data_mod.load_png(path))
            codes = lbp_map(gray, config)
            features = lbp_histogram(codes, config, normalize=cfg.lbp_normalize)
            rows.append(str(path) + "," + ",".join(repr(float(v)) for v in features.histogram))
            if cfg.write_maps:
                maps_dir = run_dir / "maps"
                maps_dir.mkdir(exist_ok=True)
                scale = max(config.n_codes - 1, 1)
                img8 = (codes * 255 // scale).astype(np.uint8)
                Image.fromarray(img8, mode="L").save(maps_dir / f"{path.stem}.lbp.png")
        except (ValueError, OSError) as exc:
            failures += 1
            print(f"error: {path}: {exc}", file=sys.stderr)
    (run_dir / "features.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    write_meta(cfg, run_dir / META_NAME)
    return 1 if failures else 0


def cmd_split(cfg: RunConfig) -> int:
    records = _load_records(cfg)
    plan = _make_plan(cfg, records)
    run_dir = _run_dir(cfg)
    payload = {
        "scenario": plan.scenario,
        "seed": plan.seed,
        "held_out_speakers": list(plan.held_out_speakers),
        "train_indices": list(plan.train_indices),
        "test_indices": list(plan.test_indices),
        "train_count": len(plan.train_indices),
        "test_count": len(plan.test_indices),
    }
    import json

    (run_dir / "split.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_meta(cfg, run_dir / META_NAME)
    print(f"{plan.scenario}: {len(plan.train_indices)} train / {len(plan.test_indices)} test")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    records = _load_records(cfg)
    plan = _make_plan(cfg, records)
    train_set = data_mod.stack_records([records[i] for i in plan.train_indices])
    eval_set = None
    if plan.test_indices:
        eval_set = data_mod.stack_records([records[i] for i in plan.test_indices])
    model = build_model(_model_config(cfg))
    sgd = SGDConfig(
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size, epochs=cfg.epochs, seed=cfg.seed
    )
    model, history = train(model, train_set, sgd, eval_data=eval_set)
    run_dir = _run_dir(cfg)
    save_checkpoint(model, run_dir / CHECKPOINT_NAME)
    history.write_csv(run_dir / HISTORY_NAME)
    write_meta(cfg, run_dir / META_NAME)
    if history.rows:
        last = history.rows[-1]
        msg = f"epoch {last.epoch}: train_acc={last.train_acc:.4f}"
        if last.test_acc is not None:
            msg += f" test_acc={last.test_acc:.4f}"
        print(msg)
    return 0


def cmd_evaluate(cfg: RunConfig, checkpoint_path: str) -> int:
    model = load_checkpoint(checkpoint_path)
    if model.kind != cfg.model:
        raise CliError(
            f"checkpoint holds a {model.kind!r} model but the config asks for {cfg.model!r}"
        )
    records = _load_records(cfg)
    plan = _make_plan(cfg, records)
    indices = plan.test_indices if cfg.eval_split == "test" else plan.train_indices
    if not indices:
        raise CliError(f"{cfg.eval_split} split is empty for scenario {cfg.scenario!r}")
    test_set = data_mod.stack_records([records[i] for i in indices])
    report = evaluation.predict_and_report(
        model, test_set, cfg.num_classes, scenario=cfg.scenario, seed=cfg.seed
    )
    run_dir = _run_dir(cfg)
    evaluation.write_report(report, run_dir / REPORT_NAME)
    evaluation.write_confusion_csv(report.confusion, run_dir / CONFUSION_NAME)
    write_meta(cfg, run_dir / META_NAME)
    print(
        f"{report.model_kind} {report.scenario}: accuracy={report.accuracy:.4f} "
        f"precision_macro={report.precision_macro:.4f} ({report.n_samples} samples)"
    )
    return 0


def cmd_compare(cfg: RunConfig, report_paths: list[str]) -> int:
    """Tabulate accuracy and macro precision from saved reports, verbatim."""
    if len(report_paths) < 2:
        raise CliError("compare needs at least two report files")
    rows = ["model,scenario,accuracy,precision_macro"]
    for path in report_paths:
        try:
            payload = evaluation.read_report(path)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read report {path}: {exc}") from exc
        rows.append(
            f"{payload.get('model_kind')},{payload.get('scenario')},"
            f"{repr(float(payload['accuracy']))},{repr(float(payload['precision_macro']))}"
        )
    run_dir = _run_dir(cfg)
    table = "\n".join(rows) + "\n"
    (run_dir / "comparison.csv").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    """Materialize a synthetic corpus as PNGs plus a manifest."""
    spec = data_mod.SynthSpec(
        n_per_class=cfg.synth_per_class,
        image_size=cfg.image_size,
        class_signal=cfg.synth_signal,
        n_speakers=cfg.synth_speakers,
    )
    records = data_mod.synth_dataset(spec, cfg.seed, _lbp_config(cfg))
    run_dir = _run_dir(cfg)
    (run_dir / "synth").mkdir(exist_ok=True)
    manifest_rows = [data_mod.MANIFEST_HEADER]
    for rec in records:
        gray8 = np.clip(rec.image[0] * 255.0, 0, 255).astype(np.uint8)
        rgb = np.stack([gray8] * 3, axis=-1)
        Image.fromarray(rgb, mode="RGB").save(run_dir / rec.image_path)
        manifest_rows.append(f"{rec.image_path},{rec.speaker_id},{rec.utterance_type},{rec.phone_label}")
    (run_dir / "manifest.csv").write_text("\n".join(manifest_rows) + "\n", encoding="utf-8")
    write_meta(cfg, run_dir / META_NAME)
    print(f"wrote {len(records)} images and manifest.csv under {run_dir}")
    return 0


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="master seed for all random streams")
    common.add_argument("--out", help="output directory root")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    parser = argparse.ArgumentParser(prog="utifusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("extract-lbp", parents=[common], help="write LBP histogram rows for a directory of PNGs")

    p_split = sub.add_parser("split", parents=[common], help="build and save a train/test split plan")
    p_split.add_argument("--scenario", choices=data_mod.SCENARIOS)

    p_train = sub.add_parser("train", parents=[common], help="train a model and save checkpoint + history")
    p_train.add_argument("--scenario", choices=data_mod.SCENARIOS)
    p_train.add_argument("--model", choices=("dnn", "cnn", "fusionnet"))

    p_eval = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on the configured split")
    p_eval.add_argument("--scenario", choices=data_mod.SCENARIOS)
    p_eval.add_argument("--model", choices=("dnn", "cnn", "fusionnet"))
    p_eval.add_argument("--checkpoint", required=True)

    p_cmp = sub.add_parser("compare", parents=[common], help="tabulate saved evaluation reports")
    p_cmp.add_argument("reports", nargs="+", help="report.txt files to tabulate")

    sub.add_parser("synth", parents=[common], help="write a synthetic PNG corpus and manifest")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "extract-lbp":
            return cmd_extract_lbp(cfg)
        if args.command == "split":
            return cmd_split(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint)
        if args.command == "compare":
            return cmd_compare(cfg, args.reports)
        if args.command == "synth":
            return cmd_synth(cfg)
        raise CliError(f"unknown command {args.command!r}")
    except (CliError, CheckpointError, ManifestError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
