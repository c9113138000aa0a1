"""Sliding windows, modality-wise normalization and per-sensor images.

The default pipeline is window -> normalize -> DFT image: each sensor's
``C x T`` window becomes a ``C x T/2`` grid of log-magnitude Fourier
coefficients (bins 0..T/2-1; the Nyquist bin is dropped so the width is
exactly T/2).  Raw and DCT-II images are kept for representation ablations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data_ingest import Recording, check_spans, default_spans

LOG_EPS = 1e-8


class ImageKind(str, enum.Enum):
    RAW = "raw"
    DCT = "dct"
    DFT = "dft"


@dataclass(frozen=True)
class WindowingConfig:
    window_len: int = 32
    stride: int = 8

    def __post_init__(self):
        if self.window_len < 1 or self.stride < 1:
            raise ValueError("window length and stride must be positive")
        if self.stride > self.window_len:
            raise ValueError(f"stride {self.stride} exceeds window length {self.window_len}")


@dataclass(frozen=True)
class Segment:
    sensors: tuple[np.ndarray, ...]
    label: int
    subject_id: int
    modality_spans: tuple[tuple[int, int], ...]
    offset: int = 0


@dataclass(frozen=True)
class SegmentImage:
    images: tuple[np.ndarray, ...]
    kind: ImageKind
    label: int
    subject_id: int

    def as_array(self) -> np.ndarray:
        """Stack to ``[S, C, K]``."""
        return np.stack(self.images)


def window_count(total: int, window_len: int, stride: int) -> int:
    return (total - window_len) // stride + 1


def slide_windows(recording: Recording, cfg: WindowingConfig,
                  modality_spans: Sequence[tuple[int, int]] | None = None) -> list[Segment]:
    total = recording.length
    if cfg.window_len > total:
        raise ValueError(f"window length {cfg.window_len} exceeds recording length {total}")
    spans = tuple(modality_spans) if modality_spans else default_spans(recording.num_channels)
    check_spans(spans, recording.num_channels)
    segments = []
    for i in range(window_count(total, cfg.window_len, cfg.stride)):
        lo = i * cfg.stride
        segments.append(Segment(
            sensors=tuple(s[:, lo:lo + cfg.window_len] for s in recording.sensors),
            label=recording.activity_label, subject_id=recording.subject_id,
            modality_spans=spans, offset=lo))
    return segments


def normalize_modality(segment: Segment) -> Segment:
    """Min-max scale every (sensor, modality span) block of the window to [0, 1].

    Blocks with a single repeated value map to 0.5.
    """
    out = []
    for mat in segment.sensors:
        norm = np.empty_like(mat, dtype=np.float64)
        for lo, hi in segment.modality_spans:
            block = mat[lo:hi]
            bmin, bmax = block.min(), block.max()
            if bmax > bmin:
                norm[lo:hi] = (block - bmin) / (bmax - bmin)
            else:
                norm[lo:hi] = 0.5
        out.append(norm)
    return Segment(sensors=tuple(out), label=segment.label, subject_id=segment.subject_id,
                   modality_spans=segment.modality_spans, offset=segment.offset)


def dft_magnitude(mat: np.ndarray) -> np.ndarray:
    """``|X[k]|`` for bins ``k = 0 .. T/2 - 1`` of every row of a ``C x T`` matrix."""
    t = mat.shape[1]
    if t % 2:
        raise ValueError(f"DFT image needs an even window length, got {t}")
    return np.abs(np.fft.fft(mat, axis=1)[:, :t // 2])


def dft_image(segment: Segment) -> SegmentImage:
    images = tuple(np.log(dft_magnitude(mat) + LOG_EPS) for mat in segment.sensors)
    return SegmentImage(images, ImageKind.DFT, segment.label, segment.subject_id)


def dct_matrix(n: int) -> np.ndarray:
    """Unnormalized DCT-II: ``X[k] = sum_n x[n] cos(pi k (2n+1) / 2N)``."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    return np.cos(np.pi * k * (2 * j + 1) / (2 * n))


def dct_image(segment: Segment) -> SegmentImage:
    basis = dct_matrix(segment.sensors[0].shape[1])
    images = tuple(mat @ basis.T for mat in segment.sensors)
    return SegmentImage(images, ImageKind.DCT, segment.label, segment.subject_id)


def raw_image(segment: Segment) -> SegmentImage:
    images = tuple(np.array(mat, dtype=np.float64) for mat in segment.sensors)
    return SegmentImage(images, ImageKind.RAW, segment.label, segment.subject_id)


_IMAGE_FNS = {ImageKind.RAW: raw_image, ImageKind.DCT: dct_image, ImageKind.DFT: dft_image}


def to_image(segment: Segment, kind: ImageKind | str = ImageKind.DFT) -> SegmentImage:
    return _IMAGE_FNS[ImageKind(kind)](segment)


def image_shape(num_channels: int, window_len: int, kind: ImageKind | str) -> tuple[int, int]:
    kind = ImageKind(kind)
    return (num_channels, window_len // 2) if kind is ImageKind.DFT else (num_channels, window_len)


def preprocess(recordings: Iterable[Recording], cfg: WindowingConfig,
               kind: ImageKind | str = ImageKind.DFT,
               modality_spans: Sequence[tuple[int, int]] | None = None) -> list[SegmentImage]:
    """Window, normalize and transform every recording."""
    out = []
    for rec in recordings:
        for seg in slide_windows(rec, cfg, modality_spans):
            out.append(to_image(normalize_modality(seg), kind))
    return out


def stack_images(images: Sequence[SegmentImage]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``X[N, S, C, K]``, labels and subject ids."""
    if not images:
        raise ValueError("no segment images to stack")
    x = np.stack([img.as_array() for img in images])
    y = np.array([img.label for img in images], dtype=np.int64)
    subj = np.array([img.subject_id for img in images], dtype=np.int64)
    return x, y, subj


def dump_images(images: Sequence[SegmentImage], out_dir: str | Path, png: bool = True) -> list[Path]:
    """Write one CSV (and an 8-bit grayscale PNG preview) per sensor per segment."""
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for n, img in enumerate(images):
        for s, mat in enumerate(img.images):
            stem = f"seg{n:05d}_s{s}_{img.kind.value}_label{img.label}"
            path = out / f"{stem}.csv"
            path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in mat) + "\n",
                            encoding="utf-8")
            written.append(path)
            if png:
                lo, hi = mat.min(), mat.max()
                scaled = np.zeros_like(mat) if hi == lo else (mat - lo) / (hi - lo)
                Image.fromarray(np.round(scaled * 255).astype(np.uint8)).save(out / f"{stem}.png")
    return written
