"""Dataset generation and verification.

Layout of a dataset directory::

    manifest.json            written last; its absence marks an incomplete run
    joints.def               canonical joint definition used for generation
    train/images/XXXXXXXX.png, train/labels/XXXXXXXX.txt   indices [0, train_count)
    val/images/...,            val/labels/...              indices [train_count, count)

Record ``i`` depends only on the manifest and ``i``, so any worker schedule
writes the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .codec import RecordParseError, encode_angles, read_label, record_paths, write_record_bytes
from .kinematics import JointSpace, forward_kinematics, parse_joint_definition
from .renderer import CameraConfig, LightConfig, build_hand_mesh, decode_png, png_bytes, render
from .sampling import GENERATOR_NAME, AppearanceRanges, SeedSpec, sample_appearance, sample_configuration

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
JOINTS_NAME = "joints.def"
SPLITS = ("train", "val")
REDERIVE_EVERY = 100  # re-render 1% of records during verification


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    master_seed: int
    count: int
    train_count: int
    val_count: int
    joint_space_fingerprint: str
    camera: CameraConfig = CameraConfig()
    light: LightConfig = LightConfig()
    appearance_ranges: AppearanceRanges = AppearanceRanges()
    generator_name: str = GENERATOR_NAME
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.count < 0 or self.train_count < 0 or self.val_count < 0:
            raise ManifestError("counts must be non-negative")
        if self.train_count + self.val_count != self.count:
            raise ManifestError(
                f"train_count + val_count = {self.train_count + self.val_count}, expected count = {self.count}"
            )
        SeedSpec(self.master_seed, 0)

    @classmethod
    def create(
        cls,
        space: JointSpace,
        master_seed: int,
        count: int,
        val_count: int | None = None,
        camera: CameraConfig = CameraConfig(),
        light: LightConfig = LightConfig(),
        appearance_ranges: AppearanceRanges = AppearanceRanges(),
    ) -> DatasetManifest:
        """Build a manifest; by default 20% of records (at most 500) go to validation."""
        if val_count is None:
            val_count = min(500, count // 5)
        if not 0 <= val_count <= count:
            raise ManifestError(f"val_count {val_count} outside [0, {count}]")
        return cls(
            master_seed=master_seed,
            count=count,
            train_count=count - val_count,
            val_count=val_count,
            joint_space_fingerprint=space.fingerprint,
            camera=camera,
            light=light,
            appearance_ranges=appearance_ranges,
        )

    def split_of(self, index: int) -> str:
        return "train" if index < self.train_count else "val"

    def split_indices(self, split: str) -> range:
        if split == "train":
            return range(0, self.train_count)
        if split == "val":
            return range(self.train_count, self.count)
        raise ValueError(f"unknown split {split!r}")

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "count": self.count,
            "train_count": self.train_count,
            "val_count": self.val_count,
            "joint_space_fingerprint": self.joint_space_fingerprint,
            "camera": self.camera.to_dict(),
            "light": self.light.to_dict(),
            "appearance_ranges": self.appearance_ranges.to_dict(),
            "generator_name": self.generator_name,
            "format_version": self.format_version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> DatasetManifest:
        if d.get("format_version") != FORMAT_VERSION:
            raise ManifestError(f"unsupported format_version {d.get('format_version')!r}")
        try:
            return cls(
                master_seed=int(d["master_seed"]),
                count=int(d["count"]),
                train_count=int(d["train_count"]),
                val_count=int(d["val_count"]),
                joint_space_fingerprint=str(d["joint_space_fingerprint"]),
                camera=CameraConfig.from_dict(d["camera"]),
                light=LightConfig.from_dict(d["light"]),
                appearance_ranges=AppearanceRanges.from_dict(d["appearance_ranges"]),
                generator_name=str(d["generator_name"]),
                format_version=int(d["format_version"]),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed manifest: {exc!r}") from exc


@dataclass(frozen=True)
class Dataset:
    root: Path
    manifest: DatasetManifest
    space: JointSpace

    @property
    def fingerprint(self) -> str:
        """SHA-256 of the manifest file, identifying the dataset."""
        return hashlib.sha256((self.root / MANIFEST_NAME).read_bytes()).hexdigest()

    def split_dir(self, split: str) -> Path:
        return self.root / split

    def paths(self, index: int) -> tuple[Path, Path]:
        return record_paths(self.split_dir(self.manifest.split_of(index)), index)


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ManifestError(f"{manifest_path} not found (dataset missing or generation incomplete)")
    try:
        manifest = DatasetManifest.from_dict(json.loads(manifest_path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: invalid JSON: {exc}") from exc
    joints_path = root / JOINTS_NAME
    if not joints_path.is_file():
        raise ManifestError(f"{joints_path} not found")
    space = parse_joint_definition(joints_path.read_text(encoding="utf-8"), str(joints_path))
    if space.fingerprint != manifest.joint_space_fingerprint:
        raise ManifestError(f"{joints_path} fingerprint does not match the manifest")
    return Dataset(root, manifest, space)


def render_record(space: JointSpace, manifest: DatasetManifest, index: int) -> tuple[bytes, str]:
    """Regenerate record ``index``: (PNG bytes, label string)."""
    seed = SeedSpec(manifest.master_seed, index)
    q = sample_configuration(space, seed)
    appearance = sample_appearance(seed, manifest.appearance_ranges)
    image = render(build_hand_mesh(space, forward_kinematics(space, q), appearance), manifest.camera, manifest.light)
    return png_bytes(image), encode_angles(space, q)


def _write_range(space: JointSpace, manifest: DatasetManifest, root: str, start: int, stop: int) -> int:
    written = 0
    for index in range(start, stop):
        png, label = render_record(space, manifest, index)
        written += write_record_bytes(Path(root) / manifest.split_of(index), index, png, label)
    return written


@dataclass(frozen=True)
class GenerationSummary:
    count: int
    wall_time: float
    bytes_written: int


def _prepare_output(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST_NAME).unlink(missing_ok=True)
    for split in SPLITS:
        if (out / split).exists():
            shutil.rmtree(out / split)
        for sub in ("images", "labels"):
            (out / split / sub).mkdir(parents=True)


def generate_dataset(
    space: JointSpace, manifest: DatasetManifest, out: str | Path, workers: int = 1, chunk: int = 64
) -> GenerationSummary:
    if workers < 1:
        raise ValueError("workers must be a positive integer")
    if space.fingerprint != manifest.joint_space_fingerprint:
        raise ManifestError("joint space does not match the manifest fingerprint")
    out = Path(out)
    started = time.perf_counter()
    _prepare_output(out)
    joints_text = space.canonical_text().encode("utf-8")
    (out / JOINTS_NAME).write_bytes(joints_text)
    bounds = [(s, min(s + chunk, manifest.count)) for s in range(0, manifest.count, chunk)]
    if workers == 1 or len(bounds) <= 1:
        written = sum(_write_range(space, manifest, str(out), a, b) for a, b in bounds)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_write_range, space, manifest, str(out), a, b) for a, b in bounds]
            written = sum(f.result() for f in futures)
    manifest_bytes = manifest.to_json().encode("utf-8")
    (out / MANIFEST_NAME).write_bytes(manifest_bytes)
    written += len(joints_text) + len(manifest_bytes)
    elapsed = time.perf_counter() - started
    log.info("generated %d records in %.1fs (%d bytes)", manifest.count, elapsed, written)
    return GenerationSummary(manifest.count, elapsed, written)


@dataclass
class VerificationReport:
    records_checked: int = 0
    rederived: int = 0
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "records_checked": self.records_checked,
            "rederived": self.rederived,
            "failures": [{"index": i, "cause": c} for i, c in self.failures],
        }


def _check_record(ds: Dataset, index: int) -> str | None:
    image_path, label_path = ds.paths(index)
    for p in (image_path, label_path):
        if not p.is_file():
            return f"missing file {p}"
    try:
        read_label(label_path, ds.space)
    except RecordParseError as exc:
        return str(exc)
    except UnicodeDecodeError as exc:
        return f"{label_path}: not UTF-8 ({exc})"
    try:
        image = decode_png(image_path)
    except ValueError as exc:
        return f"{image_path}: decode failure: {exc}"
    cam = ds.manifest.camera
    if (image.width, image.height) != (cam.width, cam.height):
        return f"{image_path}: resolution {image.width}x{image.height}, manifest says {cam.width}x{cam.height}"
    if index % REDERIVE_EVERY == 0:
        png, label = render_record(ds.space, ds.manifest, index)
        if image_path.read_bytes() != png:
            return f"{image_path}: bytes differ from re-derived record"
        if label_path.read_bytes() != (label + "\n").encode("utf-8"):
            return f"{label_path}: bytes differ from re-derived record"
    return None


def verify_dataset(root: str | Path) -> VerificationReport:
    ds = load_dataset(root)
    report = VerificationReport()
    for index in range(ds.manifest.count):
        cause = _check_record(ds, index)
        report.records_checked += 1
        if index % REDERIVE_EVERY == 0 and cause is None:
            report.rederived += 1
        if cause is not None:
            report.failures.append((index, cause))
    return report


def dataset_digest(root: str | Path) -> str:
    """SHA-256 over every file below ``root`` in sorted path order."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode("utf-8") + b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()
