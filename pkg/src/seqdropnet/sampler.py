"""Lesion-biased patch sampling.

A patch is centered on a lesion voxel with probability ``lesion_center_prob``
and on a non-lesion voxel otherwise.  The origin of a patch is
``clamp(center - size // 2, 0, dims - size)``, so patches never leave the
volume; near the boundary the effective center shifts inward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from seqdropnet.errors import InvalidSpecError
from seqdropnet.volume import LabelVolume, MultiChannelVolume, Volume


@dataclass(frozen=True)
class PatchSpec:
    size: tuple[int, int, int] = (64, 64, 64)
    lesion_center_prob: float = 0.99

    def __post_init__(self):
        size = tuple(int(s) for s in self.size)
        if len(size) != 3 or any(s < 1 for s in size):
            raise InvalidSpecError(f"patch size must be three positive integers, got {self.size}")
        if not 0.0 <= self.lesion_center_prob <= 1.0:
            raise InvalidSpecError(f"lesion_center_prob must be in [0, 1], got {self.lesion_center_prob}")
        object.__setattr__(self, "size", size)


def _check_fits(dims, size):
    if any(d < s for d, s in zip(dims, size)):
        raise InvalidSpecError(f"volume {tuple(dims)} is smaller than patch {tuple(size)}")


def patch_origin(center, size, dims) -> tuple[int, int, int]:
    return tuple(
        int(min(max(c - s // 2, 0), d - s)) for c, s, d in zip(center, size, dims)
    )


def clamp_center(center, size, dims) -> tuple[int, int, int]:
    origin = patch_origin(center, size, dims)
    return tuple(o + s // 2 for o, s in zip(origin, size))


def draw_center(labels: LabelVolume, spec: PatchSpec, rng: np.random.Generator):
    """Draw an unclamped center voxel.

    Returns ``(center, lesion_draw)`` where ``lesion_draw`` says whether the
    center came from the lesion set.  Lesion-free volumes always fall back to
    the non-lesion set, and volumes that are lesion everywhere to the lesion set.
    """
    _check_fits(labels.dims, spec.size)
    flat = labels.data.ravel()
    lesion = np.flatnonzero(flat == 1.0)
    # draw u unconditionally so the stream advances the same way for every volume
    u = rng.random()
    use_lesion = lesion.size > 0 and u < spec.lesion_center_prob
    if use_lesion or lesion.size == flat.size:
        pool = lesion
    else:
        pool = np.flatnonzero(flat != 1.0)
    idx = pool[rng.integers(pool.size)]
    center = tuple(int(i) for i in np.unravel_index(idx, labels.dims))
    return center, bool(pool is lesion)


def sample_patch_center(labels: LabelVolume, spec: PatchSpec, rng: np.random.Generator):
    center, _ = draw_center(labels, spec, rng)
    return clamp_center(center, spec.size, labels.dims)


def _slices(center, size, dims):
    origin = patch_origin(center, size, dims)
    for o, s, d in zip(origin, size, dims):
        if o < 0 or o + s > d:
            raise InvalidSpecError(f"patch at origin {origin} of size {size} leaves volume {dims}")
    return tuple(slice(o, o + s) for o, s in zip(origin, size))


def extract_patch(
    image: MultiChannelVolume, labels: LabelVolume, center, spec: PatchSpec
) -> tuple[MultiChannelVolume, LabelVolume]:
    """Cut spatially aligned image and label patches around ``center``."""
    if image.dims != labels.dims:
        raise InvalidSpecError(f"image dims {image.dims} != label dims {labels.dims}")
    _check_fits(image.dims, spec.size)
    sl = _slices(center, spec.size, image.dims)
    patch = MultiChannelVolume(tuple(Volume(c.data[sl], c.name) for c in image.channels))
    return patch, LabelVolume(labels.data[sl], labels.name)


def extract_arrays(image: np.ndarray, labels: np.ndarray, center, size):
    """Array variant of :func:`extract_patch` for (C, X, Y, Z) stacks."""
    dims = image.shape[1:]
    _check_fits(dims, size)
    sl = _slices(center, size, dims)
    return image[(slice(None),) + sl], labels[sl]
