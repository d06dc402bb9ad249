"""Joint space definition and forward kinematics for a tree of revolute joints.

Every joint owns the link that follows it. A link extends along the local +x
axis of its joint frame; a child joint sits at the tip of its parent link,
shifted by an optional ``origin`` offset expressed in the parent frame. The
root of the tree is the wrist, placed at the world origin.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

ROOT_LINK = "root"
AXIS_TOLERANCE = 1e-9
DEFAULT_RADIUS = 0.008

REQUIRED_COLUMNS = (
    "name", "parent", "axis_x", "axis_y", "axis_z", "link_length", "min", "max",
)
OPTIONAL_COLUMNS = {
    "origin_x": 0.0,
    "origin_y": 0.0,
    "origin_z": 0.0,
    "radius": DEFAULT_RADIUS,
}
ALL_COLUMNS = REQUIRED_COLUMNS + tuple(OPTIONAL_COLUMNS)


class JointDefinitionError(ValueError):
    """Raised when a joint-definition file or JointSpace is invalid."""

    def __init__(self, message: str, joint: str | None = None, line: int | None = None):
        where = []
        if joint is not None:
            where.append(f"joint {joint!r}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.joint = joint
        self.line = line


@dataclass(frozen=True)
class JointSpec:
    name: str
    min_angle: float
    max_angle: float
    parent_link: str
    axis: tuple[float, float, float]
    link_length: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = DEFAULT_RADIUS

    def validate(self, line: int | None = None) -> None:
        if not self.min_angle <= self.max_angle:
            raise JointDefinitionError(
                f"min_angle {self.min_angle} exceeds max_angle {self.max_angle}",
                self.name, line,
            )
        norm = float(np.linalg.norm(self.axis))
        if abs(norm - 1.0) > AXIS_TOLERANCE:
            raise JointDefinitionError(f"axis norm is {norm!r}, expected 1", self.name, line)
        if self.link_length < 0:
            raise JointDefinitionError("link_length must be non-negative", self.name, line)
        if self.radius <= 0:
            raise JointDefinitionError("radius must be positive", self.name, line)


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class JointSpace:
    """Ordered, immutable set of joints. Order is the canonical output order."""

    joints: tuple[JointSpec, ...]
    fingerprint: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        seen = set()
        for spec in self.joints:
            if spec.name in seen:
                raise JointDefinitionError("duplicate joint name", spec.name)
            seen.add(spec.name)
            spec.validate()
        object.__setattr__(self, "fingerprint", hashlib.sha256(self.canonical_text().encode()).hexdigest())

    def __len__(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> list[str]:
        return [j.name for j in self.joints]

    @cached_property
    def index(self) -> dict[str, int]:
        return {j.name: i for i, j in enumerate(self.joints)}

    @cached_property
    def mins(self) -> np.ndarray:
        return np.array([j.min_angle for j in self.joints], dtype=np.float64)

    @cached_property
    def maxs(self) -> np.ndarray:
        return np.array([j.max_angle for j in self.joints], dtype=np.float64)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.mins + self.maxs)

    @property
    def widths(self) -> np.ndarray:
        return self.maxs - self.mins

    def canonical_text(self) -> str:
        """Normalized definition text; its SHA-256 is the fingerprint."""
        lines = [" ".join(ALL_COLUMNS)]
        for j in self.joints:
            values = [
                j.name, j.parent_link, *map(_fmt, j.axis), _fmt(j.link_length),
                _fmt(j.min_angle), _fmt(j.max_angle), *map(_fmt, j.origin), _fmt(j.radius),
            ]
            lines.append(" ".join(values))
        return "\n".join(lines) + "\n"

    @cached_property
    def topological_order(self) -> tuple[int, ...]:
        """Joint indices ordered so every parent precedes its children."""
        children: dict[str, list[int]] = {}
        for i, j in enumerate(self.joints):
            if j.parent_link != ROOT_LINK and j.parent_link not in self.index:
                raise JointDefinitionError(f"unknown parent link {j.parent_link!r}", j.name)
            children.setdefault(j.parent_link, []).append(i)
        order: list[int] = []
        stack = list(reversed(children.get(ROOT_LINK, [])))
        while stack:
            i = stack.pop()
            order.append(i)
            stack.extend(reversed(children.get(self.joints[i].name, [])))
        if len(order) != len(self.joints):
            orphan = next(j.name for i, j in enumerate(self.joints) if i not in set(order))
            raise JointDefinitionError("joint is not reachable from the root (cycle)", orphan)
        return tuple(order)

    def check_vector(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (len(self.joints),):
            raise ValueError(f"joint vector has shape {q.shape}, expected ({len(self.joints)},)")
        return q


def parse_joint_definition(text: str, source: str = "<string>") -> JointSpace:
    """Parse joint-definition text. See README for the column format."""
    header: list[str] | None = None
    specs: list[JointSpec] = []
    lines_of: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if header is None:
            header = tokens
            unknown = [c for c in header if c not in ALL_COLUMNS]
            missing = [c for c in REQUIRED_COLUMNS if c not in header]
            if unknown or missing or len(set(header)) != len(header):
                raise JointDefinitionError(
                    f"bad header in {source} (unknown {unknown}, missing {missing})", line=lineno
                )
            continue
        if len(tokens) != len(header):
            name = tokens[0] if tokens else None
            raise JointDefinitionError(
                f"expected {len(header)} fields, got {len(tokens)}", name, lineno
            )
        row = dict(zip(header, tokens))
        name = row["name"]
        try:
            num = {k: float(v) for k, v in row.items() if k not in ("name", "parent")}
        except ValueError as exc:
            raise JointDefinitionError(f"malformed number ({exc})", name, lineno) from None
        for k, default in OPTIONAL_COLUMNS.items():
            num.setdefault(k, default)
        if not all(np.isfinite(v) for v in num.values()):
            raise JointDefinitionError("non-finite number", name, lineno)
        if name in lines_of:
            raise JointDefinitionError(
                f"duplicate joint name (first defined on line {lines_of[name]})", name, lineno
            )
        lines_of[name] = lineno
        spec = JointSpec(
            name=name,
            min_angle=num["min"],
            max_angle=num["max"],
            parent_link=row["parent"],
            axis=(num["axis_x"], num["axis_y"], num["axis_z"]),
            link_length=num["link_length"],
            origin=(num["origin_x"], num["origin_y"], num["origin_z"]),
            radius=num["radius"],
        )
        spec.validate(lineno)
        specs.append(spec)
    if header is None or not specs:
        raise JointDefinitionError(f"no joints defined in {source}")
    for spec in specs:
        if spec.parent_link != ROOT_LINK and spec.parent_link not in lines_of:
            raise JointDefinitionError(
                f"unknown parent link {spec.parent_link!r}", spec.name, lines_of[spec.name]
            )
    space = JointSpace(tuple(specs))
    space.topological_order  # noqa: B018  (raises on cycles)
    return space


def load_joint_space(definition_file: str | Path | None = None) -> JointSpace:
    """Load a joint space from a definition file, or the shipped default."""
    if definition_file is None:
        text = default_definition_text()
        return parse_joint_definition(text, "default")
    path = Path(definition_file)
    return parse_joint_definition(path.read_text(encoding="utf-8"), str(path))


def default_definition_text() -> str:
    return resources.files("synthhand.data").joinpath("shadow_hand_25.joints").read_text(encoding="utf-8")


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


@dataclass(frozen=True)
class HandPose:
    """World-frame link transforms, index-aligned with the joint space.

    ``rotations[j]`` and ``translations[j]`` are the frame of joint j after its
    rotation; link j runs from ``translations[j]`` to ``tips[j]``.
    """

    rotations: np.ndarray  # (J, 3, 3)
    translations: np.ndarray  # (J, 3)
    tips: np.ndarray  # (J, 3)

    def __post_init__(self):
        for arr in (self.rotations, self.translations, self.tips):
            arr.flags.writeable = False

    @property
    def link_transforms(self) -> list[np.ndarray]:
        out = []
        for R, t in zip(self.rotations, self.translations):
            T = np.eye(4)
            T[:3, :3] = R
            T[:3, 3] = t
            out.append(T)
        return out


def forward_kinematics(space: JointSpace, q) -> HandPose:
    q = space.check_vector(q)
    n = len(space)
    rotations = np.empty((n, 3, 3))
    translations = np.empty((n, 3))
    tips = np.empty((n, 3))
    for i in space.topological_order:
        spec = space.joints[i]
        if spec.parent_link == ROOT_LINK:
            parent_R = np.eye(3)
            parent_tip = np.zeros(3)
        else:
            p = space.index[spec.parent_link]
            parent_R = rotations[p]
            parent_tip = tips[p]
        rotations[i] = parent_R @ axis_angle_matrix(spec.axis, q[i])
        translations[i] = parent_tip + parent_R @ np.asarray(spec.origin)
        tips[i] = translations[i] + rotations[i][:, 0] * spec.link_length
    return HandPose(rotations, translations, tips)


def clamp_to_ranges(space: JointSpace, q) -> np.ndarray:
    q = space.check_vector(q)
    return np.clip(q, space.mins, space.maxs)


def chain_reach(space: JointSpace) -> np.ndarray:
    """Per joint, the largest distance from the joint to any point it moves.

    Sum of link lengths and origin offsets down the longest descendant chain.
    """
    reach = np.zeros(len(space))
    for i in reversed(space.topological_order):
        spec = space.joints[i]
        reach[i] = max(reach[i], spec.link_length)
        if spec.parent_link != ROOT_LINK:
            p = space.index[spec.parent_link]
            reach[p] = max(reach[p], space.joints[p].link_length + float(np.linalg.norm(spec.origin)) + reach[i])
    return reach
