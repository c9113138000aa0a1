"""Training loop, classification metrics and leave-one-subject-out evaluation."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data_ingest import DatasetMeta, Recording
from .model import HarModel
from .nn import tensor as T
from .nn.layers import cross_entropy_l2
from .nn.optim import sgd_step
from .signal_repr import ImageKind, SegmentImage, WindowingConfig, image_shape, preprocess, stack_images

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def fit(model: HarModel, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> list[float]:
    """Mini-batch SGD on arrays; returns the per-epoch mean training loss.

    With ``cfg.deterministic`` the epoch shuffles come from ``cfg.seed`` and
    the run is bit-reproducible; otherwise they come from fresh OS entropy.
    Weight initialisation is seeded by the model builder either way.
    """
    rng = np.random.default_rng(cfg.seed if cfg.deterministic else None)
    params = model.parameters()
    model.zero_grad()
    history = []
    n = len(y)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if len(idx) < 2:
                log.warning("epoch %d: dropping a batch of %d sample (batch norm needs >= 2)", epoch, len(idx))
                continue
            out = model.forward(x[idx], train=True)
            loss = cross_entropy_l2(out.probs, y[idx], params, cfg.weight_decay)
            loss.backward()
            sgd_step(params, cfg.lr, cfg.momentum)
            total += float(loss.data) * len(idx)
            seen += len(idx)
        history.append(total / seen if seen else float("nan"))
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    model.eval()
    return history


def train(model: HarModel, segments: Sequence[SegmentImage], cfg: TrainConfig) -> tuple[HarModel, list[float]]:
    x, y, _ = stack_images(segments)
    return model, fit(model, x, y, cfg)


def predict(model: HarModel, x: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray | None]:
    """Class predictions and (if the model has them) attention vectors."""
    preds, atts = [], []
    model.eval()
    with T.no_grad():
        for lo in range(0, len(x), batch_size):
            out = model.forward(x[lo:lo + batch_size])
            preds.append(out.probs.data.argmax(axis=1))
            if out.attention is not None:
                atts.append(out.attention.data)
    return np.concatenate(preds), (np.concatenate(atts) if atts else None)


# -------------------------------------------------------------------- metrics


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def confusion_normalize(confusion: np.ndarray) -> np.ndarray:
    """Divide each nonzero row by its sum; all-zero rows stay zero."""
    cm = np.asarray(confusion, dtype=np.float64)
    sums = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, sums, out=np.zeros_like(cm), where=sums > 0)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


@dataclass
class EvalReport:
    confusion: np.ndarray
    accuracy: float
    precision: float
    recall: float
    f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_class: list[tuple[float, float, float]]
    support: list[int]
    class_names: list[str] = field(default_factory=list)

    @classmethod
    def from_confusion(cls, confusion: np.ndarray, class_names: Sequence[str] = ()) -> "EvalReport":
        cm = np.asarray(confusion, dtype=np.int64)
        total = int(cm.sum())
        if total == 0:
            raise ValueError("cannot evaluate an empty set of predictions")
        per_class, support = [], []
        for m in range(cm.shape[0]):
            tp = int(cm[m, m])
            fp = int(cm[:, m].sum()) - tp
            fn = int(cm[m, :].sum()) - tp
            p = _ratio(tp, tp + fp)
            r = _ratio(tp, tp + fn)
            per_class.append((p, r, _ratio(2 * p * r, p + r)))
            support.append(tp + fn)
        # plain left-to-right sums keep the averages reproducible bit for bit
        k = len(per_class)
        macro = [sum(row[i] for row in per_class) / k for i in range(3)]
        weighted = [sum(n * row[i] for n, row in zip(support, per_class)) / total for i in range(3)]
        return cls(
            confusion=cm,
            accuracy=int(np.trace(cm)) / total,
            precision=macro[0],
            recall=macro[1],
            f1=macro[2],
            weighted_precision=weighted[0],
            weighted_recall=weighted[1],
            weighted_f1=weighted[2],
            per_class=per_class,
            support=support,
            class_names=list(class_names) or [f"class{m}" for m in range(k)],
        )

    @classmethod
    def from_predictions(cls, y_true, y_pred, num_classes: int, class_names: Sequence[str] = ()) -> "EvalReport":
        return cls.from_confusion(confusion_matrix(y_true, y_pred, num_classes), class_names)

    def summary(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "weighted_precision": self.weighted_precision,
                "weighted_recall": self.weighted_recall, "weighted_f1": self.weighted_f1}

    def to_dict(self) -> dict:
        d = self.summary()
        d["per_class"] = [{"class": name, "precision": p, "recall": r, "f1": f, "support": s}
                          for name, (p, r, f), s in zip(self.class_names, self.per_class, self.support)]
        d["confusion"] = self.confusion.tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for name, (p, r, f), s in zip(self.class_names, self.per_class, self.support):
            w.writerow([name, repr(p), repr(r), repr(f), s])
        w.writerow(["macro", repr(self.precision), repr(self.recall), repr(self.f1), sum(self.support)])
        w.writerow(["weighted", repr(self.weighted_precision), repr(self.weighted_recall),
                    repr(self.weighted_f1), sum(self.support)])
        w.writerow(["accuracy", repr(self.accuracy), "", "", sum(self.support)])
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\pred"] + self.class_names)
        for name, row in zip(self.class_names, self.confusion):
            w.writerow([name] + [int(v) for v in row])
        return buf.getvalue()


def evaluate(model: HarModel, segments, labels: np.ndarray | None = None,
             class_names: Sequence[str] = ()) -> EvalReport:
    """Evaluate on a list of SegmentImages, or on an array ``x`` plus ``labels``."""
    if labels is None:
        if len(segments) == 0:
            raise ValueError("cannot evaluate on an empty segment list")
        x, labels, _ = stack_images(segments)
    else:
        x = segments
        if len(x) == 0:
            raise ValueError("cannot evaluate on an empty segment list")
    preds, _ = predict(model, x)
    return EvalReport.from_predictions(labels, preds, model.num_classes, class_names)


def history_csv(history: Sequence[float]) -> str:
    return "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(history))


# ----------------------------------------------------------------------- LOSO

ModelBuilder = Callable[[DatasetMeta, tuple[int, int], int], HarModel]


@dataclass
class FoldResult:
    test_subject: int
    train_subjects: list[int]
    report: EvalReport
    history: list[float]


@dataclass
class LosoResult:
    folds: list[FoldResult]
    pooled: EvalReport

    def mean_metrics(self) -> dict:
        keys = self.folds[0].report.summary().keys()
        return {k: float(np.mean([f.report.summary()[k] for f in self.folds])) for k in keys}

    def to_dict(self) -> dict:
        return {
            "folds": [{"test_subject": f.test_subject, "train_subjects": f.train_subjects,
                       **f.report.to_dict(), "history": f.history} for f in self.folds],
            "mean": self.mean_metrics(),
            "pooled": self.pooled.to_dict(),
        }


def loso_cv(meta: DatasetMeta, recordings: Sequence[Recording], cfg: TrainConfig,
            model_builder: ModelBuilder, windowing: WindowingConfig = WindowingConfig(),
            kind: ImageKind | str = ImageKind.DFT, folds: Sequence[int] | None = None,
            jobs: int = 1) -> LosoResult:
    """One fold per held-out subject.

    Every fold builds its model and shuffles with ``cfg.seed``, so folds with
    identical data give identical results.  ``folds`` limits which subjects are
    held out (all others still form the training set).
    """
    subjects = sorted({r.subject_id for r in recordings})
    for sid in range(meta.num_subjects):
        if sid not in subjects:
            raise ValueError(f"subject {sid} has no recordings")
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    test_subjects = subjects if folds is None else list(folds)
    for sid in test_subjects:
        if sid not in subjects:
            raise ValueError(f"subject {sid} has no recordings")

    images = preprocess(recordings, windowing, kind, meta.modality_spans)
    x, y, subj = stack_images(images)
    shape = image_shape(meta.num_channels, windowing.window_len, kind)

    def run_fold(test_subject: int) -> FoldResult:
        train_mask = subj != test_subject
        model = model_builder(meta, shape, cfg.seed)
        history = fit(model, x[train_mask], y[train_mask], cfg)
        report = evaluate(model, x[~train_mask], y[~train_mask], meta.class_names)
        train_ids = sorted(set(subj[train_mask].tolist()))
        return FoldResult(test_subject, train_ids, report, history)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_fold, test_subjects))
    else:
        results = [run_fold(s) for s in test_subjects]
    pooled = EvalReport.from_confusion(sum(r.report.confusion for r in results), meta.class_names)
    return LosoResult(results, pooled)
