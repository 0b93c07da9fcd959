"""Sequence dropout.

During training whole input channels are replaced with zero volumes: first a
preserve count ``n`` is drawn from the policy, then a uniformly random subset
of ``n`` channels is kept.  At deployment, channels that are unavailable are
zeroed the same way so the network sees the input it was trained on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from seqdropnet.errors import ConfigError
from seqdropnet.volume import MultiChannelVolume, Volume


@dataclass(frozen=True)
class DropoutPolicy:
    """Probability of preserving n = 1..C channels (``preserve_probs[n - 1]``)."""

    preserve_probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.preserve_probs)
        if not probs:
            raise ConfigError("dropout policy needs at least one preserve count")
        if any(p < 0 or not np.isfinite(p) for p in probs):
            raise ConfigError(f"preserve probabilities must be nonnegative, got {probs}")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ConfigError(f"preserve probabilities must sum to 1, got {sum(probs)}")
        object.__setattr__(self, "preserve_probs", probs)

    @property
    def channels(self) -> int:
        return len(self.preserve_probs)

    @classmethod
    def uniform(cls, channels: int) -> "DropoutPolicy":
        """Default: every preserve count 1..C equally likely, keep-all included."""
        return cls((1.0 / channels,) * channels)

    @classmethod
    def strict(cls, channels: int) -> "DropoutPolicy":
        """Counts 1..C-1 only; the full stack is never shown during training."""
        if channels < 2:
            raise ConfigError("strict policy needs at least two channels")
        return cls((1.0 / (channels - 1),) * (channels - 1) + (0.0,))

    @classmethod
    def keep_all(cls, channels: int) -> "DropoutPolicy":
        """No dropout; used for the baseline arm."""
        return cls((0.0,) * (channels - 1) + (1.0,))

    @classmethod
    def from_name(cls, name: str, channels: int) -> "DropoutPolicy":
        try:
            return {"uniform": cls.uniform, "strict": cls.strict, "none": cls.keep_all}[name](channels)
        except KeyError:
            raise ConfigError(f"unknown dropout policy {name!r}") from None

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """Indices of the preserved channels, sorted ascending."""
        n = int(rng.choice(self.channels, p=self.preserve_probs)) + 1
        keep = rng.choice(self.channels, size=n, replace=False)
        return np.sort(keep)


def dropout_array(x: np.ndarray, policy: DropoutPolicy, rng: np.random.Generator):
    """Zero non-preserved channels of a (C, ...) array; returns (out, kept indices)."""
    if x.shape[0] != policy.channels:
        raise ConfigError(f"policy covers {policy.channels} channels, input has {x.shape[0]}")
    keep = policy.draw(rng)
    out = np.zeros_like(x)
    out[keep] = x[keep]
    return out, keep


def apply_sequence_dropout(patch: MultiChannelVolume, policy: DropoutPolicy, rng: np.random.Generator):
    """Return the patch with dropped channels zeroed and the set of kept names."""
    if len(patch) != policy.channels:
        raise ConfigError(f"policy covers {policy.channels} channels, patch has {len(patch)}")
    keep = set(policy.draw(rng).tolist())
    channels = tuple(
        c if i in keep else Volume(np.zeros(c.dims), c.name) for i, c in enumerate(patch.channels)
    )
    preserved = frozenset(patch.names[i] for i in keep)
    return MultiChannelVolume(channels), preserved


def mask_missing(vol: MultiChannelVolume, available: Iterable[str]) -> MultiChannelVolume:
    """Replace every channel not in ``available`` by a zero volume."""
    available = set(available)
    if not available:
        raise ValueError("at least one channel must be available")
    unknown = available - set(vol.names)
    if unknown:
        raise KeyError(f"unknown channel(s) {sorted(unknown)}; stack has {list(vol.names)}")
    return MultiChannelVolume(
        tuple(c if c.name in available else Volume(np.zeros(c.dims), c.name) for c in vol.channels)
    )


def available_from_missing(names: Sequence[str], missing: Iterable[str]) -> list[str]:
    """Channel names left after removing ``missing``; validates the names."""
    missing = list(missing)
    unknown = [m for m in missing if m not in names]
    if unknown:
        raise KeyError(f"unknown channel(s) {unknown}; stack has {list(names)}")
    return [n for n in names if n not in missing]
