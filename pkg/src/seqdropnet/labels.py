"""Two-rater label merging."""

import numpy as np

from seqdropnet.errors import SizeMismatchError
from seqdropnet.volume import LabelVolume, Volume


def as_binary(mask) -> np.ndarray:
    """Return a bool array for a Volume/LabelVolume/ndarray holding only 0 and 1."""
    data = mask.data if isinstance(mask, (Volume, LabelVolume)) else np.asarray(mask)
    if not np.isin(data, (0, 1)).all():
        raise ValueError("binary mask may only contain 0 and 1")
    return data.astype(bool)


def merge_masks(a, b) -> LabelVolume:
    """Consensus label volume: 1 where both raters mark lesion, 0 where neither
    does, 0.5 where they disagree."""
    a = as_binary(a)
    b = as_binary(b)
    if a.shape != b.shape:
        raise SizeMismatchError(f"rater masks differ in dims: {a.shape} vs {b.shape}")
    merged = np.where(a == b, a.astype(np.float64), 0.5)
    return LabelVolume(merged)
