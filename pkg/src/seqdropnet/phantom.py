"""Synthetic multi-contrast lesion phantoms.

A phantom is an ellipsoidal "brain" of constant per-channel intensity on a
zero background, with non-overlapping ellipsoidal lesions whose contrast
(magnitude and sign) is set per channel.  Gaussian noise is added inside the
brain and intensities are clipped at zero.  Rater A sees the exact lesion
mask; rater B drops each lesion boundary voxel independently with the flip
probability.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from seqdropnet.errors import ConfigError
from seqdropnet.volume import MultiChannelVolume, Volume, write_stack, write_volume


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    background: float
    contrast: float
    noise: float | None = None  # overrides PhantomConfig.noise_std


def default_channels() -> tuple[ChannelSpec, ...]:
    # FLAIR carries the strongest lesion signal; PD barely any; T1 lesions are dark
    return (
        ChannelSpec("T1", 0.6, -0.25),
        ChannelSpec("T2", 0.4, 0.25),
        ChannelSpec("PD", 0.5, 0.05),
        ChannelSpec("FLAIR", 0.3, 0.6),
    )


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple[int, int, int] = (32, 32, 32)
    channels: tuple[ChannelSpec, ...] = field(default_factory=default_channels)
    lesion_count: tuple[int, int] = (3, 6)
    lesion_radius: tuple[float, float] = (2.0, 4.0)
    noise_std: float = 0.1
    flip_prob: float = 0.2
    brain_fraction: float = 0.9  # brain semi-axes as a fraction of the half-extent
    max_attempts: int = 1000
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        channels = tuple(c if isinstance(c, ChannelSpec) else ChannelSpec(**c) for c in self.channels)
        object.__setattr__(self, "channels", channels)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ConfigError(f"dims must be three positive integers, got {self.dims}")
        if not channels or len({c.name for c in channels}) != len(channels):
            raise ConfigError("phantom needs at least one channel and unique channel names")
        lo, hi = self.lesion_count
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad lesion_count range {self.lesion_count}")
        rlo, rhi = self.lesion_radius
        if rlo < 1 or rhi < rlo:
            raise ConfigError(f"lesion radii must satisfy 1 <= min <= max, got {self.lesion_radius}")
        if self.noise_std < 0 or any(c.noise is not None and c.noise < 0 for c in channels):
            raise ConfigError("noise must be nonnegative")
        if not 0 <= self.flip_prob < 1:
            raise ConfigError(f"flip_prob must be in [0, 1), got {self.flip_prob}")
        if not 0 < self.brain_fraction <= 1:
            raise ConfigError("brain_fraction must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown phantom config keys {sorted(unknown)}")
        for key in ("dims", "lesion_count", "lesion_radius"):
            if key in d:
                d[key] = tuple(d[key])
        if "channels" in d:
            d["channels"] = tuple(ChannelSpec(**c) for c in d["channels"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = [asdict(c) for c in self.channels]
        for key in ("dims", "lesion_count", "lesion_radius"):
            d[key] = list(d[key])
        return d


@dataclass
class Phantom:
    image: MultiChannelVolume
    gt_a: np.ndarray  # uint8
    gt_b: np.ndarray
    brain: np.ndarray  # bool
    lesions: list[dict]


def _grid(dims):
    return np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij")


def brain_mask(dims, fraction) -> np.ndarray:
    xs = _grid(dims)
    c = [(d - 1) / 2 for d in dims]
    semi = [fraction * d / 2 for d in dims]
    return sum(((x - ci) / si) ** 2 for x, ci, si in zip(xs, c, semi)) <= 1.0


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one face neighbor outside the mask."""
    return mask & ~ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(3, 1), border_value=0)


def generate_phantom(cfg: PhantomConfig) -> Phantom:
    rng = np.random.default_rng(cfg.seed)
    dims = cfg.dims
    brain = brain_mask(dims, cfg.brain_fraction)
    # lesions must sit strictly inside the brain, off its boundary
    interior = brain & ~boundary(brain)
    xs = _grid(dims)

    n_lesions = int(rng.integers(cfg.lesion_count[0], cfg.lesion_count[1] + 1))
    lesion_mask = np.zeros(dims, dtype=bool)
    lesions = []
    attempts = 0
    while len(lesions) < n_lesions:
        attempts += 1
        if attempts > cfg.max_attempts:
            raise ConfigError(
                f"could not place {n_lesions} lesions in {cfg.max_attempts} attempts; "
                "reduce lesion_count or lesion_radius"
            )
        radii = rng.uniform(cfg.lesion_radius[0], cfg.lesion_radius[1], size=3)
        center = np.array([rng.uniform(0, d - 1) for d in dims])
        blob = sum(((x - c) / r) ** 2 for x, c, r in zip(xs, center, radii)) <= 1.0
        if not blob.any() or (blob & ~interior).any():
            continue
        # keep a one-voxel gap so lesions stay separate components under any connectivity
        grown = ndimage.binary_dilation(blob, structure=np.ones((3, 3, 3), dtype=bool))
        if (grown & lesion_mask).any():
            continue
        lesion_mask |= blob
        lesions.append({"center": center.tolist(), "radii": radii.tolist(), "voxels": int(blob.sum())})

    channels = []
    for spec in cfg.channels:
        sigma = cfg.noise_std if spec.noise is None else spec.noise
        img = np.where(brain, spec.background, 0.0) + np.where(lesion_mask, spec.contrast, 0.0)
        noise = rng.normal(0.0, 1.0, size=dims) * sigma
        img = np.where(brain, np.clip(img + noise, 0.0, None), 0.0)
        # store what the f32 file format can hold so files round-trip exactly
        channels.append(Volume(img.astype(np.float32).astype(np.float64), spec.name))

    edge = boundary(lesion_mask)
    flips = edge & (rng.random(dims) < cfg.flip_prob)
    gt_a = lesion_mask.astype(np.uint8)
    gt_b = (lesion_mask & ~flips).astype(np.uint8)
    return Phantom(MultiChannelVolume(tuple(channels)), gt_a, gt_b, brain, lesions)


def write_phantom(ph: Phantom, cfg: PhantomConfig, directory) -> Path:
    directory = Path(directory)
    write_stack(ph.image, directory)
    write_volume(Volume(ph.gt_a, "gt_a"), directory / "gt_a")
    write_volume(Volume(ph.gt_b, "gt_b"), directory / "gt_b")
    record = {"config": cfg.to_dict(), "seed": cfg.seed, "lesions": ph.lesions}
    path = directory / "phantom.json"
    path.write_text(json.dumps(record, indent=2) + "\n")
    return path
