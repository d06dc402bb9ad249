"""Joint-angle label strings and the on-disk record layout.

A label is a run of ``<name>value</name>`` elements, one per joint, in
canonical joint order with no whitespace between elements, e.g.::

    <lh_WRJ2>0.1</lh_WRJ2><lh_WRJ1>-0.25</lh_WRJ1>...<lh_THJ1>1.3</lh_THJ1>

Two parsers read it back. The strict one accepts only that exact shape. The
lenient one is meant for model-emitted text: it ignores whitespace and
surrounding prose, accepts any tag order, warns on unknown tags and clamps
out-of-range values, but still refuses missing or duplicated joints.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import JointSpace
from .renderer import Image, decode_png, png_bytes

# Values are rounded to 6 fractional digits, so anything within this slack of
# a range bound is treated as on the bound rather than out of range.
RANGE_SLACK = 1e-6
# Shorter encodings are taken only if they stay this close; strictly below
# 1e-6 so re-encoding a parsed value reproduces the same digits.
_SHORTEN_TOLERANCE = 5e-7
MAX_ISSUES = 1000

_OPEN = re.compile(r"<([^<>/\s]+)>")
_CLOSE = re.compile(r"</([^<>]*)>")
_ELEMENT = re.compile(r"<([^<>/\s]+)>([^<]*)</([^<>]*)>")
_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")


class IssueKind(str, enum.Enum):
    MISSING_TAG = "missing_tag"
    DUPLICATE_TAG = "duplicate_tag"
    UNKNOWN_TAG = "unknown_tag"
    MALFORMED_NUMBER = "malformed_number"
    MISMATCHED_CLOSE = "mismatched_close"
    OUT_OF_RANGE = "out_of_range"
    OUT_OF_ORDER = "out_of_order"
    UNEXPECTED_TEXT = "unexpected_text"


class Mode(str, enum.Enum):
    STRICT = "strict"
    LENIENT = "lenient"


@dataclass(frozen=True)
class Issue:
    kind: IssueKind
    joint: str | None
    position: int
    fatal: bool

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "joint": self.joint, "position": self.position, "fatal": self.fatal}


@dataclass
class ParseReport:
    mode: Mode
    vector: np.ndarray | None = None
    issues: list[Issue] = field(default_factory=list)
    truncated: bool = False

    @property
    def ok(self) -> bool:
        return self.vector is not None

    @property
    def fatal_issues(self) -> list[Issue]:
        return [i for i in self.issues if i.fatal]

    def add(self, kind: IssueKind, joint: str | None, position: int, fatal: bool) -> None:
        if len(self.issues) >= MAX_ISSUES:
            self.truncated = True
            if fatal and not self.fatal_issues:
                self.issues[-1] = Issue(kind, joint, position, fatal)
            return
        self.issues.append(Issue(kind, joint, position, fatal))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "ok": self.ok,
            "vector": None if self.vector is None else [float(v) for v in self.vector],
            "issues": [i.to_dict() for i in self.issues],
            "truncated": self.truncated,
        }


def format_angle(x: float) -> str:
    """Shortest decimal with at most 6 fractional digits near ``x``."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite angle {x!r}")
    for digits in range(6):
        s = f"{x:.{digits}f}"
        if abs(float(s) - x) <= _SHORTEN_TOLERANCE:
            break
    else:
        s = f"{x:.6f}"
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def encode_angles(space: JointSpace, q) -> str:
    q = space.check_vector(q)
    return "".join(f"<{name}>{format_angle(v)}</{name}>" for name, v in zip(space.names, q))


def _number(raw: str) -> float | None:
    if not _NUMBER.fullmatch(raw):
        return None
    value = float(raw)
    return value if math.isfinite(value) else None


def _check_range(space: JointSpace, report: ParseReport, name: str, value: float, position: int, fatal: bool) -> float:
    j = space.index[name]
    lo, hi = space.mins[j], space.maxs[j]
    if value < lo - RANGE_SLACK or value > hi + RANGE_SLACK:
        report.add(IssueKind.OUT_OF_RANGE, name, position, fatal)
    return min(max(value, lo), hi)


def parse_angles_strict(space: JointSpace, text: str) -> ParseReport:
    report = ParseReport(Mode.STRICT)
    values: dict[str, float] = {}
    seen: set[str] = set()
    n = len(text)
    pos = 0
    while pos < n and not report.truncated:
        m = _OPEN.match(text, pos)
        if m is None:
            report.add(IssueKind.UNEXPECTED_TEXT, None, pos, True)
            nxt = text.find("<", pos + 1)
            pos = n if nxt < 0 else nxt
            continue
        name = m.group(1)
        vstart = m.end()
        vend = text.find("<", vstart)
        if vend < 0:
            vend = n
        close = _CLOSE.match(text, vend)
        pos = close.end() if close else vend
        if close is None or close.group(1) != name:
            report.add(IssueKind.MISMATCHED_CLOSE, name, vend, True)
            continue
        if name not in space.index:
            report.add(IssueKind.UNKNOWN_TAG, name, m.start(), True)
            continue
        if name in seen:
            report.add(IssueKind.DUPLICATE_TAG, name, m.start(), True)
            continue
        expected = next(nm for nm in space.names if nm not in seen)
        if name != expected:
            report.add(IssueKind.OUT_OF_ORDER, name, m.start(), True)
        seen.add(name)
        value = _number(text[vstart:vend])
        if value is None:
            report.add(IssueKind.MALFORMED_NUMBER, name, vstart, True)
            continue
        values[name] = _check_range(space, report, name, value, vstart, True)
    for name in space.names:
        if name not in seen:
            report.add(IssueKind.MISSING_TAG, name, n, True)
    if not report.issues:
        report.vector = np.array([values[nm] for nm in space.names])
    return report


def parse_angles_lenient(space: JointSpace, text: str) -> ParseReport:
    report = ParseReport(Mode.LENIENT)
    values: dict[str, float] = {}
    seen: set[str] = set()
    for m in _ELEMENT.finditer(text):
        if report.truncated:
            break
        name, raw, close_name = m.group(1), m.group(2), m.group(3)
        if close_name.strip() != name:
            report.add(IssueKind.MISMATCHED_CLOSE, name, m.start(3) - 2, False)
            continue
        if name not in space.index:
            report.add(IssueKind.UNKNOWN_TAG, name, m.start(), False)
            continue
        if name in seen:
            report.add(IssueKind.DUPLICATE_TAG, name, m.start(), True)
            continue
        seen.add(name)
        value = _number(raw.strip())
        if value is None:
            report.add(IssueKind.MALFORMED_NUMBER, name, m.start(2), True)
            continue
        values[name] = _check_range(space, report, name, value, m.start(2), False)
    for name in space.names:
        if name not in seen:
            report.add(IssueKind.MISSING_TAG, name, len(text), True)
    if not report.fatal_issues:
        report.vector = np.array([values[nm] for nm in space.names])
    return report


def parse_angles(space: JointSpace, text: str, mode: Mode | str = Mode.STRICT) -> ParseReport:
    if Mode(mode) is Mode.STRICT:
        return parse_angles_strict(space, text)
    return parse_angles_lenient(space, text)


class RecordNotFoundError(FileNotFoundError):
    pass


class RecordParseError(ValueError):
    def __init__(self, path: Path, report: ParseReport):
        kinds = ", ".join(f"{i.kind.value}({i.joint})" for i in report.fatal_issues[:5])
        super().__init__(f"{path}: label does not parse: {kinds}")
        self.report = report


def record_paths(directory: str | Path, index: int) -> tuple[Path, Path]:
    d = Path(directory)
    stem = f"{index:08d}"
    return d / "images" / f"{stem}.png", d / "labels" / f"{stem}.txt"


def label_file_text(angles: str) -> str:
    return angles + "\n"


def write_record_bytes(directory: str | Path, index: int, png: bytes, angles: str) -> int:
    """Write one record from pre-encoded PNG bytes; returns bytes written."""
    image_path, label_path = record_paths(directory, index)
    image_path.parent.mkdir(parents=True, exist_ok=True)
    label_path.parent.mkdir(parents=True, exist_ok=True)
    label = label_file_text(angles).encode("utf-8")
    image_path.write_bytes(png)
    label_path.write_bytes(label)
    return len(png) + len(label)


def write_record(directory: str | Path, index: int, image: Image, angles: str) -> None:
    write_record_bytes(directory, index, png_bytes(image), angles)


def read_label(path: Path, space: JointSpace) -> np.ndarray:
    text = path.read_text(encoding="utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    report = parse_angles_strict(space, text)
    if not report.ok:
        raise RecordParseError(path, report)
    return report.vector


def read_record(directory: str | Path, index: int, space: JointSpace) -> tuple[Image, np.ndarray]:
    image_path, label_path = record_paths(directory, index)
    missing = [p for p in (image_path, label_path) if not p.is_file()]
    if missing:
        raise RecordNotFoundError(
            f"record {index} not found: expected {image_path} and {label_path}"
            f" (missing: {', '.join(str(p) for p in missing)})"
        )
    return decode_png(image_path), read_label(label_path, space)
