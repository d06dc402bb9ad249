"""Seeded sampling of joint configurations and appearance parameters.

Each sample owns two independent random streams (joints, appearance) whose
seeds are derived from ``(master_seed, sample_index, stream)`` with a
SplitMix64-style mixer. The derivation is frozen: changing it changes every
dataset, so it is versioned through ``GENERATOR_NAME``.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .kinematics import JointSpace

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
GENERATOR_NAME = "splitmix64-derive/numpy-PCG64-random-v1"


class Stream(enum.IntEnum):
    JOINTS = 1
    APPEARANCE = 2


class TextureKind(str, enum.Enum):
    SOLID = "solid"
    NOISE = "noise"
    STRIPES = "stripes"


TEXTURE_KINDS = (TextureKind.SOLID, TextureKind.NOISE, TextureKind.STRIPES)


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    sample_index: int

    def __post_init__(self):
        for name in ("master_seed", "sample_index"):
            value = getattr(self, name)
            if not 0 <= value <= MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value}")


@dataclass(frozen=True)
class AppearanceRanges:
    """Declared sampling ranges for appearance randomization.

    Color channels stay below 1 so a lit hand never renders pure white.
    """

    color_min: float = 0.25
    color_max: float = 0.95
    texture_scale_min: float = 0.5
    texture_scale_max: float = 2.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["texture_kinds"] = [k.value for k in TEXTURE_KINDS]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AppearanceRanges:
        return cls(**{k: d[k] for k in ("color_min", "color_max", "texture_scale_min", "texture_scale_max")})


@dataclass(frozen=True)
class AppearanceParams:
    base_color: tuple[float, float, float]
    texture_scale: float
    texture_kind: TextureKind


def splitmix64(z: int) -> int:
    """SplitMix64 output finalizer (Steele, Lea & Flood)."""
    z = (z + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_sample_seed(master_seed: int, index: int, stream: Stream | int) -> int:
    """Mix (master_seed, index, stream) into one 64-bit seed.

    Each fold is ``h = mix(h ^ x)`` with a bijective mixer, so for a fixed
    prefix every step is injective in the new input, and swapping inputs
    does not cancel out the way ``mix(a) ^ mix(b)`` would.
    """
    SeedSpec(master_seed, index)
    h = splitmix64(master_seed)
    h = splitmix64(h ^ index)
    return splitmix64(h ^ int(stream))


def stream_rng(seed: SeedSpec, stream: Stream) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_sample_seed(seed.master_seed, seed.sample_index, stream)))


def sample_configuration(space: JointSpace, seed: SeedSpec) -> np.ndarray:
    """Draw every joint independently from U(min_j, max_j)."""
    u = stream_rng(seed, Stream.JOINTS).random(len(space))
    q = space.mins + (space.maxs - space.mins) * u
    # guards the upper bound against rounding in the affine map
    return np.minimum(q, space.maxs)


def sample_appearance(seed: SeedSpec, ranges: AppearanceRanges = AppearanceRanges()) -> AppearanceParams:
    u = stream_rng(seed, Stream.APPEARANCE).random(5)
    lo, hi = ranges.color_min, ranges.color_max
    color = tuple(float(lo + (hi - lo) * c) for c in u[:3])
    scale = ranges.texture_scale_min + (ranges.texture_scale_max - ranges.texture_scale_min) * float(u[3])
    kind = TEXTURE_KINDS[min(int(u[4] * len(TEXTURE_KINDS)), len(TEXTURE_KINDS) - 1)]
    return AppearanceParams(color, scale, kind)
