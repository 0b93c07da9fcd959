"""Volume containers, min-max normalization and raw f32 file I/O.

Arrays are held as numpy arrays indexed ``[x, y, z]``.  On disk the payload
is written x-fastest, which is Fortran order for that indexing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from seqdropnet.errors import InvalidDimensionsError, SizeMismatchError, UnsupportedDtypeError

DTYPE = "f32le"
ORDER = "x-fastest"
LABEL_VALUES = (0.0, 0.5, 1.0)


def _check_dims(dims: Sequence[int]) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise InvalidDimensionsError(f"dims must be three positive integers, got {dims}")
    return dims


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """One named scalar 3D field."""

    data: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidDimensionsError(f"volume data must be 3D, got shape {self.data.shape}")
        _check_dims(self.data.shape)
        object.__setattr__(self, "data", _frozen(self.data))

    @classmethod
    def from_voxels(cls, dims, voxels, name: str = "") -> "Volume":
        dims = _check_dims(dims)
        voxels = np.asarray(voxels, dtype=np.float64).ravel()
        if voxels.size != int(np.prod(dims)):
            raise SizeMismatchError(f"{voxels.size} voxels do not fill dims {dims}")
        return cls(voxels.reshape(dims, order="F"), name)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def voxels(self) -> np.ndarray:
        """Flat voxel array in x-fastest order."""
        return self.data.ravel(order="F")

    def renamed(self, name: str) -> "Volume":
        return Volume(self.data, name)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.name == other.name and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class MultiChannelVolume:
    """Ordered stack of named volumes on one grid."""

    channels: tuple[Volume, ...]

    def __post_init__(self):
        channels = tuple(self.channels)
        if not channels:
            raise InvalidDimensionsError("a multi-channel volume needs at least one channel")
        dims = channels[0].dims
        if any(c.dims != dims for c in channels):
            raise SizeMismatchError(f"channel dims differ: {[c.dims for c in channels]}")
        names = [c.name for c in channels]
        if len(set(names)) != len(names):
            raise ValueError(f"channel names must be unique, got {names}")
        object.__setattr__(self, "channels", channels)

    @classmethod
    def from_array(cls, arr: np.ndarray, names: Sequence[str]) -> "MultiChannelVolume":
        arr = np.asarray(arr)
        if arr.ndim != 4 or arr.shape[0] != len(names):
            raise SizeMismatchError(f"array of shape {arr.shape} does not match {len(names)} channel names")
        return cls(tuple(Volume(a, n) for a, n in zip(arr, names)))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.channels[0].dims

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.channels)

    def __len__(self):
        return len(self.channels)

    def __getitem__(self, name: str) -> Volume:
        for c in self.channels:
            if c.name == name:
                return c
        raise KeyError(name)

    def array(self) -> np.ndarray:
        """Channels stacked to shape (C, nx, ny, nz)."""
        return np.stack([c.data for c in self.channels])

    def __eq__(self, other):
        if not isinstance(other, MultiChannelVolume):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self.channels, other.channels))


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Merged ground truth: 0 (non-lesion), 0.5 (raters disagree), 1 (lesion)."""

    data: np.ndarray
    name: str = "labels"

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidDimensionsError(f"label data must be 3D, got shape {self.data.shape}")
        _check_dims(self.data.shape)
        data = _frozen(self.data)
        bad = ~np.isin(data, LABEL_VALUES)
        if bad.any():
            raise ValueError(f"label values must be in {LABEL_VALUES}, found {np.unique(data[bad])[:5]}")
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def voxels(self) -> np.ndarray:
        return self.data.ravel(order="F")

    def as_volume(self) -> Volume:
        return Volume(self.data, self.name)

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return np.array_equal(self.data, other.data)


def normalize(v: Volume) -> Volume:
    """Min-max rescale to [0, 1]; a constant volume maps to all zeros."""
    lo = v.data.min()
    hi = v.data.max()
    if hi == lo:
        return Volume(np.zeros(v.dims), v.name)
    out = (v.data - lo) / (hi - lo)
    # rounding can land a hair outside [0, 1]
    return Volume(np.clip(out, 0.0, 1.0), v.name)


def normalize_stack(vol: MultiChannelVolume) -> MultiChannelVolume:
    return MultiChannelVolume(tuple(normalize(c) for c in vol.channels))


def zero_like(dims, name: str = "") -> Volume:
    return Volume(np.zeros(_check_dims(dims)), name)


# ---------------------------------------------------------------------------
# file format: <stem>.json header + <stem>.raw payload


def _stem(path) -> Path:
    path = Path(path)
    if path.suffix in (".json", ".raw"):
        path = path.with_suffix("")
    return path


def write_volume(v: Volume, path) -> Path:
    """Write ``v`` as a header/payload pair and return the header path.

    Values are stored as little-endian float32; a volume read back from disk
    is a fixed point of write/read.
    """
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = {"dims": list(v.dims), "dtype": DTYPE, "order": ORDER, "channel": v.name}
    payload = v.voxels.astype("<f4")
    stem.with_suffix(".raw").write_bytes(payload.tobytes())
    header_path = stem.with_suffix(".json")
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    return header_path


def read_volume(path) -> Volume:
    stem = _stem(path)
    header_path = stem.with_suffix(".json")
    raw_path = stem.with_suffix(".raw")
    for p in (header_path, raw_path):
        if not p.exists():
            raise FileNotFoundError(f"volume file not found: {p}")
    header = json.loads(header_path.read_text())
    if header.get("dtype") != DTYPE:
        raise UnsupportedDtypeError(f"{header_path}: unsupported dtype {header.get('dtype')!r}")
    if header.get("order", ORDER) != ORDER:
        raise UnsupportedDtypeError(f"{header_path}: unsupported order {header.get('order')!r}")
    dims = _check_dims(header["dims"])
    nbytes = raw_path.stat().st_size
    expected = int(np.prod(dims))
    if nbytes != 4 * expected:
        raise SizeMismatchError(
            f"{raw_path}: header dims {dims} need {expected} values, payload holds {nbytes / 4:g}"
        )
    voxels = np.frombuffer(raw_path.read_bytes(), dtype="<f4")
    return Volume.from_voxels(dims, voxels, header.get("channel", stem.name))


def write_labels(labels: LabelVolume, path) -> Path:
    return write_volume(labels.as_volume(), path)


def read_labels(path) -> LabelVolume:
    v = read_volume(path)
    return LabelVolume(v.data, v.name)


def write_stack(vol: MultiChannelVolume, directory) -> Path:
    """Write every channel as ``<name>.json/.raw`` plus ``stack.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for ch in vol.channels:
        write_volume(ch, directory / ch.name)
    stack_path = directory / "stack.json"
    stack_path.write_text(json.dumps({"channels": list(vol.names)}, indent=2) + "\n")
    return stack_path


def read_stack(directory, names: Iterable[str] | None = None) -> MultiChannelVolume:
    directory = Path(directory)
    stack_path = directory / "stack.json"
    if not stack_path.exists():
        raise FileNotFoundError(f"no stack.json in {directory}")
    listed = json.loads(stack_path.read_text())["channels"]
    names = list(listed if names is None else names)
    missing = [n for n in names if n not in listed]
    if missing:
        raise KeyError(f"{directory}: channels {missing} not in stack {listed}")
    return MultiChannelVolume(tuple(read_volume(directory / n).renamed(n) for n in names))
