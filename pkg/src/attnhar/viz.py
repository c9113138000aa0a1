"""Interpretability artifacts: sensor-attention summaries, class activation
maps and heatmap rendering (exact CSV plus a derived PNG)."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .model import AttentionHar, EarlyFusionHar, HarModel
from .nn import tensor as T
from .train_eval import confusion_normalize, predict

# Heatmap colour ramp: blue (low) -> white (middle) -> red (high).
RAMP_LOW = (0, 0, 255)
RAMP_MID = (255, 255, 255)
RAMP_HIGH = (255, 0, 0)


@dataclass
class AttentionSummary:
    """Mean attention per true activity (rows) and sensor (columns).

    Rows for activities with no segments are NaN.
    """

    mean: np.ndarray        # [M, S]
    raw: np.ndarray         # [N, S]
    labels: np.ndarray      # [N]
    counts: np.ndarray      # [M]

    def to_csv(self, class_names: Sequence[str] = (), sensor_names: Sequence[str] = ()) -> str:
        return matrix_to_csv(self.mean, class_names, sensor_names)

    def raw_csv(self) -> str:
        lines = ["label," + ",".join(f"s{s}" for s in range(self.raw.shape[1]))]
        lines += [f"{int(lab)}," + ",".join(repr(float(v)) for v in row)
                  for lab, row in zip(self.labels, self.raw)]
        return "\n".join(lines) + "\n"


def attention_summary(model: HarModel, x: np.ndarray, labels: np.ndarray,
                      num_classes: int | None = None) -> AttentionSummary:
    """Group each segment's attention vector by its true activity and average.

    Models without learned attention report a uniform 1/S vector per segment.
    """
    labels = np.asarray(labels, dtype=np.int64)
    m = num_classes if num_classes is not None else model.num_classes
    _, att = predict(model, x)
    if att is None:
        att = np.full((len(x), model.num_sensors), 1.0 / model.num_sensors)
    counts = np.bincount(labels, minlength=m)
    mean = np.full((m, att.shape[1]), np.nan)
    for k in range(m):
        if counts[k]:
            mean[k] = att[labels == k].mean(axis=0)
    return AttentionSummary(mean=mean, raw=att, labels=labels, counts=counts)


# ------------------------------------------------------------------------ CAM


def bilinear_resize(grid: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Bilinear resize with corner alignment; the identity when shapes match."""
    h, w = grid.shape
    ys = np.linspace(0, h - 1, rows) if h > 1 else np.zeros(rows)
    xs = np.linspace(0, w - 1, cols) if w > 1 else np.zeros(cols)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bottom = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def minmax(grid: np.ndarray) -> np.ndarray:
    lo, hi = grid.min(), grid.max()
    if hi - lo <= 0:
        return np.zeros_like(grid)
    return (grid - lo) / (hi - lo)


def _grad_weighted(maps: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """``relu(sum_k grad_k * map_k)`` cell by cell, for maps/grads of shape [ch, H, W].

    Weighting each cell by its own gradient rather than a per-channel spatial
    mean keeps the grid faithful on images only a few cells tall, where the
    mean gradient of a channel is dominated by cells unrelated to the class.
    """
    return np.maximum((grads * maps).sum(axis=0), 0.0)


def cam(model: HarModel, x: np.ndarray, target_class: int) -> np.ndarray:
    """Gradient-weighted activation maps, one C x K grid in [0, 1] per sensor.

    ``x`` is one segment ``[S, C, K]`` (returns ``[S, C, K]``) or a batch
    ``[N, S, C, K]`` (returns ``[N, S, C, K]``).  The target score is the
    pre-softmax logit of ``target_class`` (the averaged probability for late
    fusion, which has no single logit).  Maps are taken at the pooled output
    of each sensor block in inference mode and resized back to C x K.  Early
    fusion has a single block over all sensors, so every sensor gets the same
    map.
    """
    single = x.ndim == 3
    xb = x[None] if single else x
    n, s, c, k = xb.shape
    if not 0 <= target_class < model.num_classes:
        raise ValueError(f"target_class must be in [0, {model.num_classes})")
    with T.enable_grad():
        out = model.forward(xb, train=False)
        score_src = out.logits if out.logits is not None else out.probs
        seed = np.zeros(score_src.shape)
        seed[:, target_class] = 1.0
        score_src.backward(seed)
        maps = [m.data for m in out.sensor_maps]
        grads = [m.grad if m.grad is not None else np.zeros_like(m.data) for m in out.sensor_maps]
    model.zero_grad()

    if isinstance(model, AttentionHar):
        maps_s, grads_s = model.per_sensor(maps, n), model.per_sensor(grads, n)
    elif isinstance(model, EarlyFusionHar):
        maps_s, grads_s = maps * s, grads * s
    else:
        maps_s, grads_s = maps, grads

    result = np.zeros((n, s, c, k))
    for i in range(n):
        for j in range(s):
            raw = _grad_weighted(maps_s[j][i], grads_s[j][i])
            result[i, j] = minmax(bilinear_resize(raw, c, k))
    return result[0] if single else result


# -------------------------------------------------------------------- output


def matrix_to_csv(matrix: np.ndarray, row_labels: Sequence[str] = (),
                  col_labels: Sequence[str] = ()) -> str:
    """Exact CSV: a header row of column labels, then label + repr(float) per row."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("heatmap matrix must be 2-D")
    rows, cols = matrix.shape
    col_labels = list(col_labels) or [f"c{j}" for j in range(cols)]
    row_labels = list(row_labels) or [f"r{i}" for i in range(rows)]
    lines = [",".join(["", *col_labels])]
    for label, row in zip(row_labels, matrix):
        lines.append(",".join([label, *(repr(float(v)) for v in row)]))
    return "\n".join(lines) + "\n"


def read_matrix_csv(path: str | Path) -> tuple[np.ndarray, list[str], list[str]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    cols = rows[0][1:]
    labels = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return values.reshape(len(labels), len(cols)), labels, cols


def colorize(matrix: np.ndarray, vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    """Map values onto the blue-white-red ramp; NaN cells are grey."""
    matrix = np.asarray(matrix, dtype=np.float64)
    finite = np.isfinite(matrix)
    vals = matrix[finite] if finite.any() else np.zeros(1)
    lo = float(vals.min()) if vmin is None else vmin
    hi = float(vals.max()) if vmax is None else vmax
    t = np.full(matrix.shape, 0.5) if hi <= lo else (matrix - lo) / (hi - lo)
    t = np.clip(np.where(finite, t, 0.5), 0.0, 1.0)[..., None]
    low, mid, high = (np.array(c, dtype=np.float64) for c in (RAMP_LOW, RAMP_MID, RAMP_HIGH))
    rgb = np.where(t < 0.5, low + (mid - low) * (t / 0.5), mid + (high - mid) * ((t - 0.5) / 0.5))
    rgb[~finite] = 128.0
    return np.rint(rgb).astype(np.uint8)


def render_heatmap(matrix: np.ndarray, path: str | Path, row_labels: Sequence[str] = (),
                   col_labels: Sequence[str] = (), cell: int = 16,
                   vmin: float | None = None, vmax: float | None = None) -> tuple[Path, Path]:
    """Write ``<path>.csv`` with exact values and ``<path>.png`` rendered from that CSV.

    Returns the (csv, png) paths.  ``path`` may carry either suffix or none.
    """
    base = Path(path)
    if base.suffix in (".png", ".csv"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path, png_path = base.with_suffix(".csv"), base.with_suffix(".png")
    csv_path.write_text(matrix_to_csv(matrix, row_labels, col_labels))
    values, _, _ = read_matrix_csv(csv_path)
    rgb = colorize(values, vmin, vmax)
    rgb = np.repeat(np.repeat(rgb, cell, axis=0), cell, axis=1)
    Image.fromarray(rgb).save(png_path)
    return csv_path, png_path


def render_confusion(confusion: np.ndarray, path: str | Path,
                     class_names: Sequence[str] = ()) -> tuple[Path, Path]:
    """Row-normalised confusion matrix on a fixed [0, 1] scale."""
    names = list(class_names)
    return render_heatmap(confusion_normalize(confusion), path, names, names, vmin=0.0, vmax=1.0)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", str(text)).strip("-").lower() or "x"


def artifact_name(kind: str, dataset: str, fold: int | str | None = None,
                  activity: str | None = None, sensor: str | None = None) -> str:
    """File stem encoding dataset, fold, activity and sensor, e.g.
    ``cam_daily_fold3_walking_torso``."""
    parts = [_slug(kind), _slug(dataset)]
    if fold is not None:
        parts.append(f"fold{_slug(str(fold))}")
    if activity is not None:
        parts.append(_slug(activity))
    if sensor is not None:
        parts.append(_slug(sensor))
    return "_".join(parts)
