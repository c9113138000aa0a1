"""Dataset loading and synthetic data generation.

All loaders return ``(DatasetMeta, list[Recording])``.  A Recording holds one
subject's continuous multi-sensor signal with a single activity label; each
sensor is a ``C x T_total`` float64 matrix.

Daily and Sports Activities layout (``root/aNN/pK/sMM.txt``)
-------------------------------------------------------------
* ``aNN``: activity 01..19 -> label NN-1
* ``pK``: subject 1..8 -> subject_id K-1
* ``sMM``: 5-second segment 01..60, 125 rows sampled at 25 Hz
* each row has 45 comma-separated values, five 9-wide blocks in the order
  torso, right arm, left arm, right leg, left leg; inside a block the
  channels are acc x,y,z, gyro x,y,z, mag x,y,z.  Column ``9*s + c`` of the
  file becomes ``sensors[s][c, :]``.

Generic manifest
----------------
UTF-8 text.  First line ``S=<int>,C=<int>,rate=<int>,M=<int>`` (an optional
``spans=3:3:3`` key gives the modality widths), then one ``file,subject,label``
line per recording.  File paths are relative to the manifest.  Each CSV has no
header, ``S*C`` comma-separated columns grouped sensor-major and one frame per
row.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DAILY_ACTIVITIES = (
    "sitting", "standing", "lying on back", "lying on right side",
    "ascending stairs", "descending stairs", "standing in elevator",
    "moving in elevator", "walking in parking lot", "treadmill 4 km/h flat",
    "treadmill 4 km/h inclined", "treadmill 8 km/h running", "stepper",
    "cross trainer", "cycling horizontal", "cycling vertical", "rowing",
    "jumping", "basketball",
)
DAILY_SENSORS = ("torso", "right arm", "left arm", "right leg", "left leg")
DAILY_SUBJECTS = 8
DAILY_SEGMENTS = 60
DAILY_ROWS = 125
DAILY_RATE = 25
DAILY_CHANNELS = 9


class DatasetError(ValueError):
    """Malformed or incomplete dataset input; ``path`` names the culprit."""

    def __init__(self, message: str, path: str | Path | None = None, row: int | None = None):
        super().__init__(message)
        self.path = str(path) if path is not None else None
        self.row = row

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self), "path": self.path, "row": self.row}


@dataclass(frozen=True)
class Recording:
    subject_id: int
    activity_label: int
    sensors: tuple[np.ndarray, ...]
    sample_rate_hz: int

    def __post_init__(self):
        if not self.sensors:
            raise ValueError("a recording needs at least one sensor")
        shapes = {s.shape for s in self.sensors}
        if len(shapes) != 1:
            raise ValueError(f"sensor matrices disagree in shape: {sorted(shapes)}")
        c, t = self.sensors[0].shape
        if c < 1 or t < 1:
            raise ValueError("empty sensor matrix")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        for s in self.sensors:
            s.flags.writeable = False

    @property
    def num_channels(self) -> int:
        return self.sensors[0].shape[0]

    @property
    def length(self) -> int:
        return self.sensors[0].shape[1]


def default_spans(num_channels: int) -> tuple[tuple[int, int], ...]:
    """Tri-axial modalities when C is a multiple of 3, otherwise one span."""
    if num_channels % 3 == 0:
        return tuple((i, i + 3) for i in range(0, num_channels, 3))
    return ((0, num_channels),)


@dataclass(frozen=True)
class DatasetMeta:
    num_sensors: int
    num_channels: int
    num_classes: int
    num_subjects: int
    sample_rate_hz: int
    class_names: tuple[str, ...] = ()
    sensor_names: tuple[str, ...] = ()
    modality_spans: tuple[tuple[int, int], ...] = ()
    name: str = "dataset"

    def __post_init__(self):
        if not self.class_names:
            object.__setattr__(self, "class_names", tuple(f"class{m}" for m in range(self.num_classes)))
        if not self.sensor_names:
            object.__setattr__(self, "sensor_names", tuple(f"sensor{s}" for s in range(self.num_sensors)))
        if not self.modality_spans:
            object.__setattr__(self, "modality_spans", default_spans(self.num_channels))
        check_spans(self.modality_spans, self.num_channels)

    def check(self, rec: Recording) -> None:
        if len(rec.sensors) != self.num_sensors or rec.num_channels != self.num_channels:
            raise DatasetError(f"recording shape {len(rec.sensors)}x{rec.num_channels} does not match "
                               f"meta {self.num_sensors}x{self.num_channels}")
        if not 0 <= rec.activity_label < self.num_classes:
            raise DatasetError(f"label {rec.activity_label} outside [0, {self.num_classes})")


def check_spans(spans: Sequence[tuple[int, int]], num_channels: int) -> None:
    pos = 0
    for lo, hi in spans:
        if lo != pos or hi <= lo:
            raise ValueError(f"modality spans {list(spans)} do not partition [0, {num_channels})")
        pos = hi
    if pos != num_channels:
        raise ValueError(f"modality spans {list(spans)} do not partition [0, {num_channels})")


def _parse_csv_matrix(path: Path, width: int, rows: int | None = None) -> np.ndarray:
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if rows is not None and len(lines) != rows:
        raise DatasetError(f"{path}: expected {rows} rows, found {len(lines)}", path)
    for i, line in enumerate(lines):
        if line.count(",") != width - 1:
            raise DatasetError(f"{path}: row {i} has {line.count(',') + 1} columns, expected {width}",
                               path, row=i)
    flat = np.array(",".join(lines).split(","))
    try:
        return flat.astype(np.float64).reshape(len(lines), width)
    except ValueError:
        pass
    # slow path only to name the offending row
    for i, line in enumerate(lines):
        try:
            [float(v) for v in line.split(",")]
        except ValueError as exc:
            raise DatasetError(f"{path}: row {i}: {exc}", path, row=i) from None
    raise DatasetError(f"{path}: unparseable values", path)


def _split_sensors(frames: np.ndarray, num_sensors: int, num_channels: int) -> tuple[np.ndarray, ...]:
    return tuple(np.ascontiguousarray(frames[:, s * num_channels:(s + 1) * num_channels].T)
                 for s in range(num_sensors))


_DAILY_DIR = re.compile(r"a(\d\d)$")
_DAILY_SUBJ = re.compile(r"p(\d+)$")
_DAILY_FILE = re.compile(r"s(\d\d)\.txt$")


def load_daily_dataset(root_dir: str | Path, activities: Sequence[int] | None = None,
                       subjects: Sequence[int] | None = None) -> tuple[DatasetMeta, list[Recording]]:
    """Load the Daily and Sports Activities dataset.

    ``activities`` (0-based labels) and ``subjects`` (0-based ids) restrict the
    part of the tree that is read; within that part every expected file must
    exist and nothing unexpected may sit next to it.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetError(f"{root}: dataset root is not a directory", root)
    acts = list(range(len(DAILY_ACTIVITIES))) if activities is None else sorted(activities)
    subs = list(range(DAILY_SUBJECTS)) if subjects is None else sorted(subjects)
    width = len(DAILY_SENSORS) * DAILY_CHANNELS

    # layout audit before any parsing
    for entry in sorted(root.iterdir()):
        m = _DAILY_DIR.match(entry.name)
        if not (entry.is_dir() and m and 1 <= int(m.group(1)) <= len(DAILY_ACTIVITIES)):
            raise DatasetError(f"{entry}: unexpected entry in Daily root", entry)
    recordings = []
    for a in acts:
        adir = root / f"a{a + 1:02d}"
        if not adir.is_dir():
            raise DatasetError(f"{adir}: missing activity directory", adir)
        for entry in sorted(adir.iterdir()):
            m = _DAILY_SUBJ.match(entry.name)
            if not (entry.is_dir() and m and 1 <= int(m.group(1)) <= DAILY_SUBJECTS):
                raise DatasetError(f"{entry}: unexpected entry in activity directory", entry)
        for p in subs:
            pdir = adir / f"p{p + 1}"
            if not pdir.is_dir():
                raise DatasetError(f"{pdir}: missing subject directory", pdir)
            expected = {f"s{k:02d}.txt" for k in range(1, DAILY_SEGMENTS + 1)}
            present = {e.name for e in pdir.iterdir()}
            for name in sorted(present - expected):
                raise DatasetError(f"{pdir / name}: unexpected file", pdir / name)
            for name in sorted(expected - present):
                raise DatasetError(f"{pdir / name}: missing file", pdir / name)
            for k in range(1, DAILY_SEGMENTS + 1):
                path = pdir / f"s{k:02d}.txt"
                frames = _parse_csv_matrix(path, width, rows=DAILY_ROWS)
                recordings.append(Recording(
                    subject_id=p, activity_label=a,
                    sensors=_split_sensors(frames, len(DAILY_SENSORS), DAILY_CHANNELS),
                    sample_rate_hz=DAILY_RATE))

    meta = DatasetMeta(num_sensors=len(DAILY_SENSORS), num_channels=DAILY_CHANNELS,
                       num_classes=len(DAILY_ACTIVITIES), num_subjects=DAILY_SUBJECTS,
                       sample_rate_hz=DAILY_RATE, class_names=DAILY_ACTIVITIES,
                       sensor_names=DAILY_SENSORS, name="daily")
    return meta, recordings


def _parse_header(line: str, path: Path) -> dict[str, str]:
    fields = {}
    for part in line.strip().split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise DatasetError(f"{path}: header item {part!r} is not key=value", path, row=0)
        fields[key.strip()] = value.strip()
    for key in ("S", "C", "rate", "M"):
        if key not in fields:
            raise DatasetError(f"{path}: header lacks {key}=", path, row=0)
    return fields


def load_csv_dataset(manifest: str | Path) -> tuple[DatasetMeta, list[Recording]]:
    manifest = Path(manifest)
    lines = manifest.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DatasetError(f"{manifest}: empty manifest (header required)", manifest)
    hdr = _parse_header(lines[0], manifest)
    try:
        S, C, rate, M = (int(hdr[k]) for k in ("S", "C", "rate", "M"))
    except ValueError:
        raise DatasetError(f"{manifest}: header values must be integers", manifest, row=0) from None
    spans: tuple[tuple[int, int], ...] = ()
    if "spans" in hdr:
        widths = [int(w) for w in hdr["spans"].split(":")]
        bounds = np.cumsum([0] + widths)
        spans = tuple((int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]))

    entries = []
    seen = set()
    for row, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise DatasetError(f"{manifest}: row {row} must be file,subject,label", manifest, row=row)
        fname, subject, label = parts[0], int(parts[1]), int(parts[2])
        if fname in seen:
            raise DatasetError(f"{manifest}: duplicate file entry {fname}", manifest, row=row)
        seen.add(fname)
        if not 0 <= label < M:
            raise DatasetError(f"{manifest}: row {row} label {label} outside [0, {M})", manifest, row=row)
        entries.append((fname, subject, label))

    recordings = []
    for fname, subject, label in entries:
        path = manifest.parent / fname
        if not path.is_file():
            raise DatasetError(f"{path}: missing file", path)
        frames = _parse_csv_matrix(path, S * C)
        recordings.append(Recording(subject_id=subject, activity_label=label,
                                    sensors=_split_sensors(frames, S, C), sample_rate_hz=rate))
    subjects = {r.subject_id for r in recordings}
    meta = DatasetMeta(num_sensors=S, num_channels=C, num_classes=M,
                       num_subjects=len(subjects), sample_rate_hz=rate,
                       modality_spans=spans, name=manifest.stem)
    return meta, recordings


def write_csv_dataset(out_dir: str | Path, meta: DatasetMeta, recordings: Sequence[Recording],
                      manifest_name: str = "manifest.txt") -> Path:
    """Write recordings in the generic schema; values use the round-trip float repr."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    widths = ":".join(str(hi - lo) for lo, hi in meta.modality_spans)
    lines = [f"S={meta.num_sensors},C={meta.num_channels},rate={meta.sample_rate_hz},"
             f"M={meta.num_classes},spans={widths}"]
    for i, rec in enumerate(recordings):
        fname = f"rec{i:05d}.csv"
        frames = np.concatenate(rec.sensors, axis=0).T
        text = "\n".join(",".join(repr(float(v)) for v in row) for row in frames)
        (out / fname).write_text(text + "\n", encoding="utf-8")
        lines.append(f"{fname},{rec.subject_id},{rec.activity_label}")
    path = out / manifest_name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass
class SynthSpec:
    """Recipe for a synthetic dataset with known class-frequency signatures.

    ``signatures[m]`` lists ``(sensor, channel, freq_hz, amplitude)`` slots for
    class m.  With ``relevant_sensor_map`` set, every slot of class m is moved
    onto sensor ``relevant_sensor_map[m]`` so only that sensor carries signal.
    """

    num_sensors: int
    num_channels: int
    num_classes: int
    num_subjects: int
    recordings_per_class: int
    length: int
    sample_rate_hz: int
    signatures: dict[int, list[tuple[int, int, float, float]]]
    noise_std: float = 0.0
    relevant_sensor_map: dict[int, int] | None = None
    random_phase: bool = False
    modality_spans: tuple[tuple[int, int], ...] = field(default=())
    # class-independent sinusoids on the sensors that carry no class signal
    distractor_freqs: tuple[float, ...] = ()
    distractor_amplitude: float = 0.0

    def validate(self) -> None:
        for name in ("num_sensors", "num_channels", "num_classes", "num_subjects",
                     "recordings_per_class", "length", "sample_rate_hz"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        for m, slots in self.signatures.items():
            if not 0 <= m < self.num_classes:
                raise ValueError(f"signature for unknown class {m}")
            for s, c, f, amp in slots:
                if not (0 <= s < self.num_sensors and 0 <= c < self.num_channels):
                    raise ValueError(f"class {m}: slot ({s}, {c}) out of range")
                if not 0 < f < self.sample_rate_hz / 2:
                    raise ValueError(f"class {m}: frequency {f} not below Nyquist")
                if amp <= 0:
                    raise ValueError(f"class {m}: amplitude must be positive")
        for f in self.distractor_freqs:
            if not 0 < f < self.sample_rate_hz / 2:
                raise ValueError(f"distractor frequency {f} not below Nyquist")
        if self.distractor_amplitude < 0:
            raise ValueError("distractor amplitude must be >= 0")
        if self.relevant_sensor_map is not None:
            for m, s in self.relevant_sensor_map.items():
                if not (0 <= m < self.num_classes and 0 <= s < self.num_sensors):
                    raise ValueError(f"relevant sensor map entry {m}->{s} out of range")


def synth_generate(spec: SynthSpec, seed: int) -> tuple[DatasetMeta, list[Recording]]:
    """Deterministic synthetic dataset: class sinusoids plus Gaussian noise.

    Recordings are emitted class-major; recording i of a class belongs to
    subject ``i % num_subjects``.  Noise is added to every entry.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    t = np.arange(spec.length)
    recordings = []
    for m in range(spec.num_classes):
        slots = spec.signatures.get(m, [])
        if spec.relevant_sensor_map is not None and m in spec.relevant_sensor_map:
            k = spec.relevant_sensor_map[m]
            slots = [(k, c, f, amp) for _, c, f, amp in slots]
        for i in range(spec.recordings_per_class):
            data = np.zeros((spec.num_sensors, spec.num_channels, spec.length))
            for s, c, f, amp in slots:
                phase = rng.uniform(0, 2 * np.pi) if spec.random_phase else 0.0
                data[s, c] += amp * np.sin(2 * np.pi * f * t / spec.sample_rate_hz + phase)
            if spec.distractor_freqs and spec.distractor_amplitude > 0:
                busy = {s for s, *_ in slots}
                for s in range(spec.num_sensors):
                    if s in busy:
                        continue
                    c = rng.integers(spec.num_channels)
                    f = spec.distractor_freqs[rng.integers(len(spec.distractor_freqs))]
                    phase = rng.uniform(0, 2 * np.pi)
                    data[s, c] += spec.distractor_amplitude * np.sin(
                        2 * np.pi * f * t / spec.sample_rate_hz + phase)
            if spec.noise_std > 0:
                data += rng.normal(0.0, spec.noise_std, size=data.shape)
            recordings.append(Recording(subject_id=i % spec.num_subjects, activity_label=m,
                                        sensors=tuple(data), sample_rate_hz=spec.sample_rate_hz))
    meta = DatasetMeta(num_sensors=spec.num_sensors, num_channels=spec.num_channels,
                       num_classes=spec.num_classes, num_subjects=spec.num_subjects,
                       sample_rate_hz=spec.sample_rate_hz, modality_spans=spec.modality_spans,
                       name="synth")
    return meta, recordings


def planted_relevance_spec(num_sensors: int = 4, num_channels: int = 3, num_classes: int = 4,
                           num_subjects: int = 4, recordings_per_class: int = 40,
                           length: int = 64, sample_rate_hz: int = 32,
                           noise_std: float = 0.3) -> SynthSpec:
    """Benchmark where class m's signal lives only on sensor ``m % S``."""
    if min(num_sensors, num_channels, num_classes) < 1:
        raise ValueError("planted benchmark needs at least one sensor, channel and class")
    freqs = np.linspace(2.0, sample_rate_hz / 2 - 3.0, num_classes)
    signatures = {m: [(0, m % num_channels, float(freqs[m]), 1.0)] for m in range(num_classes)}
    return SynthSpec(num_sensors=num_sensors, num_channels=num_channels, num_classes=num_classes,
                     num_subjects=num_subjects, recordings_per_class=recordings_per_class,
                     length=length, sample_rate_hz=sample_rate_hz, signatures=signatures,
                     noise_std=noise_std,
                     relevant_sensor_map={m: m % num_sensors for m in range(num_classes)},
                     random_phase=True)
