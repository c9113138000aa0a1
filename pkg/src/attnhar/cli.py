"""``attnhar`` command line: train, loso, ablate, viz, synth.

Every command writes ``run.json`` (resolved config, seed, version) into its
output directory.  Failures exit nonzero with a JSON error object on stderr.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any

import click
import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, parse_yaml, synth_spec_from_dict
from .data_ingest import DatasetError, DatasetMeta, Recording, synth_generate, write_csv_dataset
from .model import build_model, model_from_header
from .nn.checkpoint import CheckpointError, load_state, read_checkpoint, save_checkpoint
from .signal_repr import ImageKind, WindowingConfig, image_shape, preprocess, stack_images
from .train_eval import evaluate, fit, history_csv, loso_cv
from .viz import artifact_name, attention_summary, cam, render_confusion, render_heatmap

log = logging.getLogger("attnhar")

SEGMENT_GRID: tuple[tuple[int, int | None], ...] = (
    (32, 8), (32, 16), (32, 24), (64, 16), (64, 32), (96, 24), (125, None))
REPRESENTATION_ROWS = (("I_RS", ImageKind.RAW), ("I_DCT", ImageKind.DCT), ("I_DFT", ImageKind.DFT))
FUSION_ROWS = (("early", "early"), ("late", "late"), ("attention", "attention"))
METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "weighted_precision", "weighted_recall", "weighted_f1")


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare(command: str, config: str | None, seed: int | None, deterministic: bool | None,
             out: str | None, extra: dict | None = None) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(config, {"train.seed": seed, "train.deterministic": deterministic, "output": out})
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "run.json", {
        "command": command, "version": __version__, "config_file": config,
        "seed": cfg.train.seed, "deterministic": cfg.train.deterministic,
        "config": cfg.resolved(), **(extra or {})})
    return cfg, out_dir


def _builder(cfg: ExperimentConfig, variant: str | None = None):
    def build(meta: DatasetMeta, shape: tuple[int, int], seed: int):
        return build_model(variant or cfg.variant, meta.num_sensors, *shape, meta.num_classes, cfg.model, seed)
    return build


def _arrays(cfg: ExperimentConfig, meta: DatasetMeta, recs: list[Recording],
            windowing: WindowingConfig | None = None, kind: ImageKind | None = None):
    images = preprocess(recs, windowing or cfg.windowing, kind or cfg.representation, meta.modality_spans)
    return stack_images(images)


def _echo_json(obj: Any) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


common = [
    click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), default=None,
                 help="YAML experiment config."),
    click.option("--seed", type=int, default=None, help="Overrides train.seed."),
    click.option("--deterministic/--no-deterministic", default=None,
                 help="Seeded (bit-reproducible) shuffling; overrides train.deterministic."),
    click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
]


def with_common(fn):
    for opt in reversed(common):
        fn = opt(fn)
    return fn


jobs_option = click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
                           help="Worker threads for LOSO folds.")


@click.group()
@click.version_option(__version__, prog_name="attnhar")
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def cli(verbose: int) -> None:
    """Sensor-attention activity recognition experiments."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@cli.command()
@with_common
def train(config, seed, deterministic, out):
    """Train on all subjects but one and evaluate on the held-out subject."""
    cfg, out_dir = _prepare("train", config, seed, deterministic, out)
    meta, recs = cfg.load_dataset()
    x, y, subj = _arrays(cfg, meta, recs)
    holdout = cfg.holdout_subject if cfg.holdout_subject is not None else int(subj.max())
    if holdout not in set(subj.tolist()):
        raise ConfigError(f"subject {holdout} has no recordings", "eval.holdout_subject")
    test = subj == holdout
    if test.all():
        raise ConfigError("holding out the only subject leaves no training data", "eval.holdout_subject")
    shape = image_shape(meta.num_channels, cfg.windowing.window_len, cfg.representation)
    model = _builder(cfg)(meta, shape, cfg.train.seed)
    history = fit(model, x[~test], y[~test], cfg.train)
    report = evaluate(model, x[test], y[test], meta.class_names)

    header = {**model.header(), "representation": cfg.representation.value,
              "window_len": cfg.windowing.window_len, "stride": cfg.windowing.stride,
              "dataset": meta.name, "class_names": list(meta.class_names),
              "sensor_names": list(meta.sensor_names), "holdout_subject": holdout}
    save_checkpoint(out_dir / "checkpoint.json", model, header)
    (out_dir / "history.csv").write_text(history_csv(history))
    (out_dir / "report.csv").write_text(report.to_csv())
    (out_dir / "confusion.csv").write_text(report.confusion_csv())
    render_confusion(report.confusion, out_dir / "confusion_normalized", meta.class_names)
    _write_json(out_dir / "metrics.json", {"holdout_subject": holdout, **report.to_dict()})
    _echo_json({"holdout_subject": holdout, **report.summary()})


@cli.command()
@with_common
@jobs_option
def loso(config, seed, deterministic, out, jobs):
    """Leave-one-subject-out cross validation."""
    cfg, out_dir = _prepare("loso", config, seed, deterministic, out, {"jobs": jobs})
    meta, recs = cfg.load_dataset()
    res = loso_cv(meta, recs, cfg.train, _builder(cfg), cfg.windowing, cfg.representation,
                  cfg.folds, jobs)
    _write_json(out_dir / "loso.json", res.to_dict())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["test_subject", *METRIC_KEYS])
    for f in res.folds:
        w.writerow([f.test_subject, *(repr(f.report.summary()[k]) for k in METRIC_KEYS)])
    mean = res.mean_metrics()
    w.writerow(["mean", *(repr(mean[k]) for k in METRIC_KEYS)])
    (out_dir / "folds.csv").write_text(buf.getvalue())
    (out_dir / "pooled_confusion.csv").write_text(res.pooled.confusion_csv())
    render_confusion(res.pooled.confusion, out_dir / "pooled_confusion_normalized", meta.class_names)
    _echo_json({"folds": len(res.folds), "mean": mean, "pooled_accuracy": res.pooled.accuracy})


def _segment_rows(total_len: int, kind: ImageKind) -> list[tuple[str, str, WindowingConfig | None, str]]:
    rows = []
    for length, stride in SEGMENT_GRID:
        if stride is None:
            # whole-recording row: one window covering the recording
            win = min(length, total_len)
            if kind is ImageKind.DFT and win % 2:
                win -= 1
            rows.append((str(length), "-", WindowingConfig(win, win), "" if win == length else f"window {win}"))
        elif length > total_len:
            rows.append((str(length), str(stride), None, f"skipped: recordings have {total_len} frames"))
        else:
            rows.append((str(length), str(stride), WindowingConfig(length, stride), ""))
    return rows


@cli.command()
@with_common
@jobs_option
@click.option("--axis", type=click.Choice(["representation", "segment", "fusion"]), required=True)
def ablate(config, seed, deterministic, out, jobs, axis):
    """Sweep one axis with everything else fixed; writes ablation_<axis>.csv."""
    cfg, out_dir = _prepare("ablate", config, seed, deterministic, out, {"jobs": jobs, "axis": axis})
    meta, recs = cfg.load_dataset()
    # each entry: leading label columns, windowing, kind, variant, note
    plan: list[tuple[list[str], WindowingConfig | None, ImageKind, str, str]] = []
    if axis == "representation":
        label_cols = ["representation"]
        for name, kind in REPRESENTATION_ROWS:
            plan.append(([name], cfg.windowing, kind, cfg.variant, ""))
    elif axis == "segment":
        label_cols = ["length", "stride"]
        total = min(r.length for r in recs)
        for length, stride, win, note in _segment_rows(total, cfg.representation):
            plan.append(([length, stride], win, cfg.representation, cfg.variant, note))
    else:
        label_cols = ["fusion"]
        for name, variant in FUSION_ROWS:
            plan.append(([name], cfg.windowing, cfg.representation, variant, ""))

    rows = []
    for labels, win, kind, variant, note in plan:
        if win is None:
            rows.append({"labels": labels, "metrics": None, "note": note})
            continue
        res = loso_cv(meta, recs, cfg.train, _builder(cfg, variant), win, kind, cfg.folds, jobs)
        rows.append({"labels": labels, "metrics": res.mean_metrics(), "note": note,
                     "window_len": win.window_len, "stride": win.stride})
        log.info("ablate %s %s: %s", axis, labels, rows[-1]["metrics"])

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*label_cols, *METRIC_KEYS, "note"])
    for r in rows:
        vals = [repr(r["metrics"][k]) if r["metrics"] else "" for k in METRIC_KEYS]
        w.writerow([*r["labels"], *vals, r["note"]])
    (out_dir / f"ablation_{axis}.csv").write_text(buf.getvalue())
    _write_json(out_dir / f"ablation_{axis}.json", rows)
    click.echo(buf.getvalue(), nl=False)


def check_checkpoint_meta(header: dict, meta: DatasetMeta) -> None:
    """Refuse a checkpoint whose sensor/channel/class counts differ from the dataset."""
    for key, value in (("num_sensors", meta.num_sensors), ("num_channels", meta.num_channels),
                       ("num_classes", meta.num_classes)):
        if header.get(key) != value:
            raise CheckpointError(f"checkpoint {key}={header.get(key)} but the dataset has {value}")


@cli.command()
@with_common
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
def viz(config, seed, deterministic, out, checkpoint):
    """Attention heatmaps, per-activity CAMs and a confusion image for a checkpoint."""
    cfg, out_dir = _prepare("viz", config, seed, deterministic, out, {"checkpoint": checkpoint})
    doc = read_checkpoint(checkpoint)
    header = doc["header"]
    model = model_from_header(header)
    load_state(model, doc)
    model.eval()
    meta, recs = cfg.load_dataset()
    check_checkpoint_meta(header, meta)
    windowing = WindowingConfig(header["window_len"], header["stride"])
    kind = ImageKind(header["representation"])
    x, y, subj = _arrays(cfg, meta, recs, windowing, kind)
    fold = cfg.holdout_subject if cfg.holdout_subject is not None else header.get("holdout_subject")
    if fold is not None:
        keep = subj == fold
        x, y = x[keep], y[keep]
    if len(y) == 0:
        raise ConfigError(f"no segments for subject {fold}", "eval.holdout_subject")
    dataset = meta.name
    fold_label = "all" if fold is None else fold
    written = []

    summary = attention_summary(model, x, y, meta.num_classes)
    stem = out_dir / artifact_name("attention", dataset, fold_label)
    written += render_heatmap(summary.mean, stem, meta.class_names, meta.sensor_names, vmin=0.0, vmax=1.0)
    raw_path = out_dir / (artifact_name("attention-raw", dataset, fold_label) + ".csv")
    raw_path.write_text(summary.raw_csv())
    written.append(raw_path)

    for m, name in enumerate(meta.class_names):
        idx = np.flatnonzero(y == m)[:cfg.max_segments_per_class]
        if len(idx) == 0:
            continue
        maps = cam(model, x[idx], m).mean(axis=0)
        for s, sensor in enumerate(meta.sensor_names):
            stem = out_dir / artifact_name("cam", dataset, fold_label, name, sensor)
            written += render_heatmap(maps[s], stem)

    report = evaluate(model, x, y, meta.class_names)
    written += render_confusion(report.confusion, out_dir / artifact_name("confusion", dataset, fold_label),
                                meta.class_names)
    _echo_json({"artifacts": [str(p) for p in written], "accuracy": report.accuracy})


@cli.command()
@click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="YAML synth spec (or an experiment config with dataset.synth).")
@click.option("--seed", type=int, default=0, show_default=True, help="Data generation seed.")
@click.option("--deterministic/--no-deterministic", default=None, hidden=True)
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
def synth(config, seed, deterministic, out):
    """Generate a synthetic dataset in the generic CSV schema (with manifest)."""
    spec_dict: dict = {"preset": "planted"}
    if config is not None:
        data, _ = parse_yaml(Path(config).read_text(encoding="utf-8"), config)
        if "dataset" in data:
            data = (data["dataset"] or {}).get("synth", spec_dict)
        spec_dict = data
    try:
        spec = synth_spec_from_dict(spec_dict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "synth", path=config) from None
    meta, recs = synth_generate(spec, seed)
    out_dir = Path(out)
    manifest = write_csv_dataset(out_dir, meta, recs)
    _write_json(out_dir / "run.json", {"command": "synth", "version": __version__, "seed": seed,
                                       "config_file": config, "spec": spec_dict})
    _echo_json({"manifest": str(manifest), "recordings": len(recs)})


def _error_payload(exc: BaseException) -> dict:
    if isinstance(exc, (ConfigError, DatasetError)):
        return exc.to_dict()
    return {"error": type(exc).__name__, "message": str(exc)}


def main(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    try:
        cli.main(args=argv, prog_name="attnhar", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        click.echo(json.dumps({"error": "UsageError", "message": exc.format_message()}), err=True)
        return 2
    except click.Abort:
        click.echo(json.dumps({"error": "Aborted", "message": "interrupted"}), err=True)
        return 130
    except (ConfigError, DatasetError, CheckpointError, ValueError, OSError) as exc:
        click.echo(json.dumps(_error_payload(exc)), err=True)
        return 1
    return 0


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
