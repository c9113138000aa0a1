"""Versioned YAML experiment configuration.

Documented key set (version 1)::

    version: 1
    dataset:
      source: synth            # synth | daily | csv
      path: data/daily         # daily root directory or csv manifest
      activities: [0, 1]       # daily only, optional subset (0-based)
      subjects: null           # daily only, optional subset (0-based)
      seed: 0                  # synth only
      synth:                   # synth only
        preset: planted        # planted | custom
        ...                    # preset keyword overrides or SynthSpec fields
    windowing: {window_len: 32, stride: 8}
    representation: dft      # raw | dct | dft
    model:
      variant: attention       # attention | no_attention | early | late
      kernel_sizes: [[1, 3], [3, 3], [5, 5]]
      filters_per_kernel: 8
      use_larger_kernels: false
      shared_sensor_blocks: true
      hidden_units: 128
    train: {lr: 0.001, momentum: 0.9, weight_decay: 1.0e-5, batch_size: 64,
            epochs: 30, seed: 0, deterministic: true}
    eval:
      holdout_subject: null    # train command; null = highest subject id
      folds: null              # loso/ablate: subset of held-out subjects
    viz: {max_segments_per_class: 16}
    output: runs/experiment

Every key is optional.  Command-line flags override file values.  Errors name
the offending dotted field and the line it appears on.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .data_ingest import DatasetMeta, Recording, SynthSpec, load_csv_dataset, load_daily_dataset
from .data_ingest import planted_relevance_spec, synth_generate
from .model import VARIANTS, ModelConfig
from .signal_repr import ImageKind, WindowingConfig
from .train_eval import TrainConfig

CONFIG_VERSION = 1
SOURCES = ("synth", "daily", "csv")


class ConfigError(ValueError):
    def __init__(self, message: str, field_name: str | None = None, line: int | None = None,
                 path: str | None = None):
        where = f"{field_name}" if field_name else "config"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")
        self.field = field_name
        self.line = line
        self.path = path

    def to_dict(self) -> dict:
        return {"error": "ConfigError", "message": str(self), "field": self.field,
                "line": self.line, "path": self.path}


DEFAULTS: dict[str, Any] = {
    "version": CONFIG_VERSION,
    "dataset": {"source": "synth", "path": None, "activities": None, "subjects": None,
                "seed": 0, "synth": {"preset": "planted"}},
    "windowing": {"window_len": 32, "stride": 8},
    "representation": "dft",
    "model": {"variant": "attention", "kernel_sizes": [[1, 3], [3, 3], [5, 5]],
              "filters_per_kernel": 8, "use_larger_kernels": False,
              "shared_sensor_blocks": True, "hidden_units": 128},
    "train": {"lr": 0.001, "momentum": 0.9, "weight_decay": 1e-5, "batch_size": 64,
              "epochs": 30, "seed": 0, "deterministic": True},
    "eval": {"holdout_subject": None, "folds": None},
    "viz": {"max_segments_per_class": 16},
    "output": "runs/experiment",
}

# keys whose value is free-form (validated later by the consumer)
_OPEN_KEYS = {"dataset.synth"}


def _to_python(node: yaml.Node, prefix: str, lines: dict[str, int]) -> Any:
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = str(key_node.value)
            name = f"{prefix}.{key}" if prefix else key
            if key in out:
                raise ConfigError("duplicate key", name, key_node.start_mark.line + 1)
            lines[name] = key_node.start_mark.line + 1
            out[key] = _to_python(value_node, name, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{prefix}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def parse_yaml(text: str, source: str | None = None) -> tuple[dict, dict[str, int]]:
    """Parse YAML into a dict plus a map from dotted key to 1-based line."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"YAML syntax error: {exc.problem}", None,
                          mark.line + 1 if mark else None, source) from None
    if node is None:
        return {}, {}
    lines: dict[str, int] = {}
    data = _to_python(node, "", lines)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", None, node.start_mark.line + 1, source)
    return data, lines


def _merge(base: dict, override: dict, lines: dict[str, int], prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        name = f"{prefix}.{key}" if prefix else key
        if key not in base:
            raise ConfigError("unknown key", name, lines.get(name))
        if isinstance(base[key], dict) and name not in _OPEN_KEYS:
            if not isinstance(value, dict):
                raise ConfigError("expected a mapping", name, lines.get(name))
            out[key] = _merge(base[key], value, lines, name)
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    source: str
    path: str | None
    activities: list[int] | None
    subjects: list[int] | None
    synth_seed: int
    synth: dict
    windowing: WindowingConfig
    representation: ImageKind
    variant: str
    model: ModelConfig
    train: TrainConfig
    holdout_subject: int | None
    folds: list[int] | None
    max_segments_per_class: int
    output: str
    raw: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        """The fully resolved settings as plain data (for run.json)."""
        return copy.deepcopy(self.raw)

    def load_dataset(self) -> tuple[DatasetMeta, list[Recording]]:
        if self.source == "daily":
            return load_daily_dataset(self.path, self.activities, self.subjects)
        if self.source == "csv":
            return load_csv_dataset(self.path)
        return synth_generate(synth_spec_from_dict(self.synth), self.synth_seed)


def _check(cond: bool, message: str, name: str, lines: dict[str, int]) -> None:
    if not cond:
        raise ConfigError(message, name, lines.get(name))


def _int(d: dict, key: str, prefix: str, lines, minimum: int | None = None, optional=False):
    name = f"{prefix}.{key}"
    v = d[key]
    if v is None and optional:
        return None
    _check(isinstance(v, int) and not isinstance(v, bool), f"expected an integer, got {v!r}", name, lines)
    if minimum is not None:
        _check(v >= minimum, f"must be >= {minimum}", name, lines)
    return v


def _int_list(d: dict, key: str, prefix: str, lines):
    name = f"{prefix}.{key}"
    v = d[key]
    if v is None:
        return None
    _check(isinstance(v, list) and all(isinstance(i, int) and not isinstance(i, bool) for i in v),
           "expected a list of integers", name, lines)
    return list(v)


def _build(data: dict, lines: dict[str, int]) -> ExperimentConfig:
    _check(data["version"] == CONFIG_VERSION,
           f"unsupported config version {data['version']!r} (expected {CONFIG_VERSION})", "version", lines)
    ds = data["dataset"]
    _check(ds["source"] in SOURCES, f"must be one of {SOURCES}", "dataset.source", lines)
    if ds["source"] in ("daily", "csv"):
        _check(isinstance(ds["path"], str), "a path is required for this source", "dataset.path", lines)
        _check(Path(ds["path"]).exists(), f"path does not exist: {ds['path']}", "dataset.path", lines)
    _check(isinstance(ds["synth"], dict), "expected a mapping", "dataset.synth", lines)
    if ds["source"] == "synth":
        try:
            synth_spec_from_dict(ds["synth"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "dataset.synth", lines.get("dataset.synth")) from None

    w = data["windowing"]
    try:
        windowing = WindowingConfig(_int(w, "window_len", "windowing", lines, 1),
                                    _int(w, "stride", "windowing", lines, 1))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), "windowing.stride", lines.get("windowing.stride")) from None

    rep = data["representation"]
    _check(rep in [k.value for k in ImageKind], "must be one of raw, dct, dft", "representation", lines)
    if rep == "dft":
        _check(windowing.window_len % 2 == 0, "the dft representation needs an even window",
               "windowing.window_len", lines)

    m = data["model"]
    _check(m["variant"] in VARIANTS, f"must be one of {VARIANTS}", "model.variant", lines)
    try:
        model = ModelConfig(kernel_sizes=tuple(tuple(k) for k in m["kernel_sizes"]),
                            filters_per_kernel=_int(m, "filters_per_kernel", "model", lines, 1),
                            use_larger_kernels=bool(m["use_larger_kernels"]),
                            shared_sensor_blocks=bool(m["shared_sensor_blocks"]),
                            hidden_units=_int(m, "hidden_units", "model", lines, 1))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "model.kernel_sizes", lines.get("model.kernel_sizes")) from None

    t = data["train"]
    for key in ("lr", "momentum", "weight_decay"):
        _check(isinstance(t[key], (int, float)) and not isinstance(t[key], bool),
               f"expected a number, got {t[key]!r}", f"train.{key}", lines)
    _check(isinstance(t["deterministic"], bool), "expected true or false", "train.deterministic", lines)
    try:
        train = TrainConfig(lr=float(t["lr"]), momentum=float(t["momentum"]),
                            weight_decay=float(t["weight_decay"]),
                            batch_size=_int(t, "batch_size", "train", lines),
                            epochs=_int(t, "epochs", "train", lines, 0),
                            seed=_int(t, "seed", "train", lines),
                            deterministic=t["deterministic"])
    except ConfigError:
        raise
    except ValueError as exc:
        key = str(exc).split()[0]
        name = f"train.{key}" if key in t else "train"
        raise ConfigError(str(exc), name, lines.get(name)) from None

    e = data["eval"]
    return ExperimentConfig(
        source=ds["source"], path=ds["path"],
        activities=_int_list(ds, "activities", "dataset", lines),
        subjects=_int_list(ds, "subjects", "dataset", lines),
        synth_seed=_int(ds, "seed", "dataset", lines), synth=dict(ds["synth"]),
        windowing=windowing, representation=ImageKind(rep), variant=m["variant"],
        model=model, train=train,
        holdout_subject=_int(e, "holdout_subject", "eval", lines, 0, optional=True),
        folds=_int_list(e, "folds", "eval", lines),
        max_segments_per_class=_int(data["viz"], "max_segments_per_class", "viz", lines, 1),
        output=str(data["output"]), raw=data)


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None,
                text: str | None = None) -> ExperimentConfig:
    """Load a config file (or ``text``), apply dotted-key ``overrides`` and validate."""
    source = str(path) if path is not None else None
    if text is None:
        text = Path(path).read_text(encoding="utf-8") if path is not None else ""
    try:
        data, lines = parse_yaml(text, source)
        merged = _merge(DEFAULTS, data, lines)
        for dotted, value in (overrides or {}).items():
            if value is None:
                continue
            *parents, leaf = dotted.split(".")
            node = merged
            for p in parents:
                node = node[p]
            node[leaf] = value
            lines.pop(dotted, None)
        return _build(merged, lines)
    except ConfigError as exc:
        exc.path = source
        raise


# ------------------------------------------------------------------- synth


PRESETS = ("planted", "custom")


def synth_spec_from_dict(d: dict) -> SynthSpec:
    """``preset: planted`` takes keyword overrides of the planted-relevance
    benchmark; ``preset: custom`` takes the SynthSpec fields directly, with
    ``signatures`` as ``{class: [[sensor, channel, freq_hz, amplitude], ...]}``."""
    d = dict(d)
    preset = d.pop("preset", "planted")
    if preset == "planted":
        spec = planted_relevance_spec(**d)
    elif preset == "custom":
        if "signatures" in d:
            d["signatures"] = {int(m): [tuple(s) for s in slots] for m, slots in d["signatures"].items()}
        if d.get("relevant_sensor_map") is not None:
            d["relevant_sensor_map"] = {int(m): int(s) for m, s in d["relevant_sensor_map"].items()}
        for key in ("modality_spans",):
            if key in d:
                d[key] = tuple(tuple(v) for v in d[key])
        if "distractor_freqs" in d:
            d["distractor_freqs"] = tuple(d["distractor_freqs"])
        spec = SynthSpec(**d)
    else:
        raise ValueError(f"unknown synth preset {preset!r}; choose from {PRESETS}")
    spec.validate()
    return spec
