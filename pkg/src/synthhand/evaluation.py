"""Checkpoint evaluation: squared-error statistics and the checkpoint sweep report.

Statistics are taken over the flattened set of per-(sample, joint) squared
errors, with the population standard deviation. In normalized units each
residual is divided by its joint's range width before squaring, so the
always-midpoint predictor scores 1/12 on uniformly sampled data.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import read_record
from .kinematics import JointSpace
from .pipeline import Dataset, load_dataset
from .regressor import CHECKPOINT_GLOB, Checkpoint, extract_features, predict_features
from .renderer import Image

log = logging.getLogger(__name__)

CSV_COLUMNS = ("checkpoint", "avg_mse", "std_mse", "min_mse", "max_mse", "n_samples")


class Units(str, enum.Enum):
    RADIANS_SQUARED = "radians_squared"
    NORMALIZED_SQUARED = "normalized_squared"


@dataclass(frozen=True)
class EvalRow:
    checkpoint_step: int
    avg_mse: float
    std_mse: float
    min_mse: float
    max_mse: float
    n_samples: int


@dataclass
class EvalReport:
    rows: list[EvalRow]
    units: Units = Units.RADIANS_SQUARED
    dataset_fingerprint: str = ""
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        steps = [r.checkpoint_step for r in self.rows]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("report rows must have strictly increasing steps")

    @property
    def steps(self) -> list[int]:
        return [r.checkpoint_step for r in self.rows]


def squared_errors(pred, truth, space: JointSpace, units: Units | str = Units.RADIANS_SQUARED) -> np.ndarray:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.shape[1] != len(space):
        raise ValueError(f"expected {len(space)} joints per sample, got {pred.shape[1]}")
    residual = pred - truth
    if Units(units) is Units.NORMALIZED_SQUARED:
        widths = space.widths
        # zero-width joints carry no information; their residual is defined as 0
        safe = np.where(widths > 0, widths, 1.0)
        residual = np.where(widths > 0, residual / safe, 0.0)
    return residual * residual


def error_stats(sq: np.ndarray, step: int = 0) -> EvalRow:
    """avg/std/min/max over every cell of an (N, J) squared-error array."""
    sq = np.atleast_2d(sq)
    if sq.size == 0:
        raise ValueError("empty validation set")
    flat = sq.ravel()
    avg = float(np.mean(flat))
    dev = flat - avg
    std = math.sqrt(float(np.mean(dev * dev)))
    return EvalRow(step, avg, std, float(flat.min()), float(flat.max()), sq.shape[0])


def evaluate_predictions(pred, truth, space: JointSpace, units: Units | str = Units.RADIANS_SQUARED, step: int = 0) -> EvalRow:
    return error_stats(squared_errors(pred, truth, space, units), step)


@dataclass
class ValidationSet:
    """Images and ground-truth joint vectors of one dataset split."""

    space: JointSpace
    images: list[Image]
    truths: np.ndarray
    fingerprint: str = ""
    _features: dict = field(default_factory=dict, repr=False)

    def features(self, down_w: int, down_h: int) -> np.ndarray:
        key = (down_w, down_h)
        if key not in self._features:
            self._features[key] = np.array([extract_features(im, down_w, down_h) for im in self.images])
        return self._features[key]

    @property
    def resolution(self) -> tuple[int, int] | None:
        return (self.images[0].width, self.images[0].height) if self.images else None

    @classmethod
    def from_dataset(cls, dataset: str | Path | Dataset, split: str = "val") -> ValidationSet:
        ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
        images, truths = [], []
        for index in ds.manifest.split_indices(split):
            image, q = read_record(ds.split_dir(split), index, ds.space)
            images.append(image)
            truths.append(q)
        truths_arr = np.array(truths) if truths else np.zeros((0, len(ds.space)))
        return cls(ds.space, images, truths_arr, ds.fingerprint)


def evaluate_checkpoint(ckpt: Checkpoint, val: ValidationSet, units: Units | str = Units.RADIANS_SQUARED) -> EvalRow:
    if len(val.images) == 0:
        raise ValueError("empty validation set")
    if ckpt.image_width is not None and val.resolution != (ckpt.image_width, ckpt.image_height):
        raise ValueError(
            f"validation images are {val.resolution}, checkpoint was trained on "
            f"{(ckpt.image_width, ckpt.image_height)}"
        )
    if ckpt.joint_names and tuple(ckpt.joint_names) != tuple(val.space.names):
        raise ValueError("checkpoint joint names do not match the validation joint space")
    pred = predict_features(ckpt.params, val.features(ckpt.params.down_w, ckpt.params.down_h))
    return evaluate_predictions(pred, val.truths, val.space, units, ckpt.step)


def sweep_checkpoints(directory: str | Path, val: ValidationSet, units: Units | str = Units.RADIANS_SQUARED) -> EvalReport:
    paths = sorted(Path(directory).glob(CHECKPOINT_GLOB))
    if not paths:
        raise FileNotFoundError(f"no checkpoints matching {CHECKPOINT_GLOB} in {directory}")
    rows: dict[int, EvalRow] = {}
    warnings: list[str] = []
    for path in paths:
        try:
            ckpt = Checkpoint.load(path)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            msg = f"skipped unreadable checkpoint {path.name}: {exc}"
            log.warning(msg)
            warnings.append(msg)
            continue
        rows[ckpt.step] = evaluate_checkpoint(ckpt, val, units)
    if not rows:
        raise ValueError(f"no readable checkpoints in {directory}")
    return EvalReport([rows[s] for s in sorted(rows)], Units(units), val.fingerprint, warnings)


def best_checkpoint(report: EvalReport) -> int:
    """Step with the lowest avg_mse; the earliest step wins ties."""
    if not report.rows:
        raise ValueError("empty report")
    best = min(report.rows, key=lambda r: (r.avg_mse, r.checkpoint_step))
    return best.checkpoint_step


def _cell(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def report_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    buf.write(f"# units={report.units.value}\n")
    buf.write(f"# dataset_fingerprint={report.dataset_fingerprint}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.rows:
        writer.writerow([r.checkpoint_step, _cell(r.avg_mse), _cell(r.std_mse), _cell(r.min_mse), _cell(r.max_mse), r.n_samples])
    return buf.getvalue()


def report_to_json(report: EvalReport) -> str:
    def num(x):
        return None if math.isnan(x) else x

    doc = {
        "units": report.units.value,
        "dataset_fingerprint": report.dataset_fingerprint,
        "statistic": "per (sample, joint) squared error, population std",
        "rows": [
            {"checkpoint": r.checkpoint_step, "avg_mse": num(r.avg_mse), "std_mse": num(r.std_mse),
             "min_mse": num(r.min_mse), "max_mse": num(r.max_mse), "n_samples": r.n_samples}
            for r in report.rows
        ],
        "warnings": report.warnings,
    }
    return json.dumps(doc, indent=2) + "\n"


def emit_report(report: EvalReport, fmt: str, out: str | Path | None = None) -> str:
    """Serialize as ``csv`` or ``json``; writes to ``out`` when given and returns the text."""
    if fmt == "csv":
        text = report_to_csv(report)
    elif fmt == "json":
        text = report_to_json(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if out is not None:
        Path(out).write_text(text, encoding="utf-8")
    return text


def _float(cell: str | None) -> float:
    return math.nan if cell in (None, "") else float(cell)


def parse_report_csv(text: str) -> EvalReport:
    """Inverse of report_to_csv. Blank metric cells read back as NaN."""
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    reader = csv.DictReader(body)
    if reader.fieldnames is None or not {"checkpoint", "avg_mse"} <= set(reader.fieldnames):
        raise ValueError("report CSV needs at least the checkpoint and avg_mse columns")
    rows = [
        EvalRow(
            int(rec["checkpoint"]), _float(rec.get("avg_mse")), _float(rec.get("std_mse")),
            _float(rec.get("min_mse")), _float(rec.get("max_mse")),
            int(rec["n_samples"]) if rec.get("n_samples") else 0,
        )
        for rec in reader
    ]
    rows.sort(key=lambda r: r.checkpoint_step)
    return EvalReport(rows, Units(meta.get("units", Units.RADIANS_SQUARED.value)), meta.get("dataset_fingerprint", ""))


def parse_report_json(text: str) -> EvalReport:
    doc = json.loads(text)
    rows = [
        EvalRow(int(r["checkpoint"]), _float(r["avg_mse"]), _float(r.get("std_mse")), _float(r.get("min_mse")),
                _float(r.get("max_mse")), int(r.get("n_samples") or 0))
        for r in doc["rows"]
    ]
    return EvalReport(rows, Units(doc["units"]), doc.get("dataset_fingerprint", ""), list(doc.get("warnings", [])))


def ingest_report(path: str | Path) -> EvalReport:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return parse_report_json(text)
    return parse_report_csv(text)

