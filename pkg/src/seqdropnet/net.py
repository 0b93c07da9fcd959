"""Configurable 3D U-Net: parameters, forward/backward, sliding-window
inference and checkpoint files.

Encoder level ``l`` runs ``convs_per_level`` blocks of conv -> bias -> PReLU
at width ``root_features * 2**l``; levels are joined by 2x2x2 max pooling.
Each decoder level upsamples with a stride-2 transposed convolution,
concatenates the matching encoder output (upsampled features first) and
runs its own conv blocks.  A 1x1x1 projection and a voxelwise softmax give
class probabilities.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from seqdropnet import ops
from seqdropnet.errors import ConfigError, InvalidSpecError, SizeMismatchError
from seqdropnet.volume import MultiChannelVolume

ParameterStore = dict  # name -> np.ndarray, insertion order is canonical


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 3
    root_features: int = 96
    kernel: tuple[int, int, int] = (3, 3, 3)
    in_channels: int = 4
    classes: int = 2
    convs_per_level: int = 2
    prelu_init_slope: float = 0.25

    def __post_init__(self):
        kernel = tuple(int(k) for k in self.kernel)
        object.__setattr__(self, "kernel", kernel)
        if self.levels < 1 or self.root_features < 1 or self.convs_per_level < 1:
            raise ConfigError("levels, root_features and convs_per_level must be >= 1")
        if self.in_channels < 1 or self.classes < 2:
            raise ConfigError("need in_channels >= 1 and classes >= 2")
        if len(set(kernel)) != 1 or kernel[0] % 2 == 0:
            raise ConfigError(f"kernel must be isotropic and odd, got {kernel}")

    @property
    def k(self) -> int:
        return self.kernel[0]

    def width(self, level: int) -> int:
        return self.root_features * 2**level

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def check_spatial(self, dims) -> None:
        bad = [d for d in dims if d % self.divisor]
        if bad:
            raise InvalidSpecError(
                f"spatial dims {tuple(dims)} must be divisible by 2**(levels-1) = {self.divisor}"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        d = dict(d)
        if "kernel" in d:
            d["kernel"] = tuple(d["kernel"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown net config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = list(self.kernel)
        return d


def parameter_shapes(cfg: UNetConfig) -> dict[str, tuple[int, ...]]:
    k = cfg.k
    shapes = {}

    def block(prefix, cin, cout):
        for j in range(cfg.convs_per_level):
            shapes[f"{prefix}.conv{j}.w"] = (cout, cin, k, k, k)
            shapes[f"{prefix}.conv{j}.b"] = (cout,)
            shapes[f"{prefix}.conv{j}.a"] = (cout,)
            cin = cout

    cin = cfg.in_channels
    for l in range(cfg.levels):
        block(f"enc{l}", cin, cfg.width(l))
        cin = cfg.width(l)
    for l in reversed(range(cfg.levels - 1)):
        shapes[f"up{l}.w"] = (cfg.width(l + 1), cfg.width(l), 2, 2, 2)
        shapes[f"up{l}.b"] = (cfg.width(l),)
        block(f"dec{l}", 2 * cfg.width(l), cfg.width(l))
    shapes["head.w"] = (cfg.classes, cfg.width(0))
    shapes["head.b"] = (cfg.classes,)
    return shapes


def parameter_kind(name: str) -> str:
    """One of conv, bias, prelu, upconv, head."""
    if name.startswith("head"):
        return "head"
    if name.startswith("up"):
        return "upconv" if name.endswith(".w") else "bias"
    return {"w": "conv", "b": "bias", "a": "prelu"}[name.rsplit(".", 1)[1]]


def _fan_in(name: str, shape) -> int:
    if name.startswith("up"):
        # every output voxel of a stride-2, 2x2x2 transposed conv sees one tap per input channel
        return shape[0]
    return int(np.prod(shape[1:]))


def init_parameters(cfg: UNetConfig, rng: np.random.Generator) -> ParameterStore:
    """He-normal weights, zero biases, PReLU slopes at ``prelu_init_slope``."""
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        elif name.endswith(".a"):
            params[name] = np.full(shape, float(cfg.prelu_init_slope))
        else:
            std = np.sqrt(2.0 / _fan_in(name, shape))
            params[name] = rng.normal(0.0, std, size=shape)
    return params


def check_parameters(params: ParameterStore, cfg: UNetConfig) -> None:
    shapes = parameter_shapes(cfg)
    if list(params) != list(shapes):
        missing = set(shapes) - set(params)
        extra = set(params) - set(shapes)
        raise SizeMismatchError(f"parameter names do not match config: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise SizeMismatchError(f"{name}: shape {params[name].shape} != expected {shape}")


def _as_batch(x, cfg: UNetConfig) -> np.ndarray:
    if isinstance(x, MultiChannelVolume):
        x = x.array()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        x = x[None]
    if x.ndim != 5:
        raise SizeMismatchError(f"input must be (C, X, Y, Z) or (N, C, X, Y, Z), got {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise SizeMismatchError(f"input has {x.shape[1]} channels, config expects {cfg.in_channels}")
    cfg.check_spatial(x.shape[2:])
    return x


def _block_forward(params, prefix, h, cfg, tape):
    for j in range(cfg.convs_per_level):
        p = f"{prefix}.conv{j}"
        z = ops.conv3d(h, params[p + ".w"], params[p + ".b"])
        tape.append(("conv", p, h))
        h = ops.prelu(z, params[p + ".a"])
        tape.append(("prelu", p, z))
    return h


def forward_logits(params: ParameterStore, cfg: UNetConfig, x, keep_tape: bool = False):
    """Pre-softmax scores of shape (N, classes, X, Y, Z).

    With ``keep_tape`` the intermediate values needed by :func:`backward` are
    returned as a second value.
    """
    x = _as_batch(x, cfg)
    tape = []
    skips = []
    h = x
    for l in range(cfg.levels):
        h = _block_forward(params, f"enc{l}", h, cfg, tape)
        if l < cfg.levels - 1:
            skips.append(h)
            h, idx = ops.maxpool2(h)
            tape.append(("pool", l, idx))
    for l in reversed(range(cfg.levels - 1)):
        tape.append(("up", f"up{l}", h))
        h = ops.upconv2(h, params[f"up{l}.w"], params[f"up{l}.b"])
        tape.append(("cat", l, h.shape[1]))
        h = np.concatenate([h, skips[l]], axis=1)
        h = _block_forward(params, f"dec{l}", h, cfg, tape)
    tape.append(("head", "head", h))
    logits = ops.pointwise(h, params["head.w"], params["head.b"])
    if keep_tape:
        return logits, tape
    return logits


def backward(params: ParameterStore, cfg: UNetConfig, tape, g_logits) -> ParameterStore:
    """Reverse pass over a tape from :func:`forward_logits`."""
    grads = {}
    pending_skip = {}  # level -> gradient flowing into the encoder output through the skip
    g = g_logits
    for entry in reversed(tape):
        op = entry[0]
        if op == "head":
            g, grads["head.w"], grads["head.b"] = ops.pointwise_backward(g, entry[2], params["head.w"])
        elif op == "prelu":
            p, z = entry[1], entry[2]
            g, grads[p + ".a"] = ops.prelu_backward(g, z, params[p + ".a"])
        elif op == "conv":
            p, h = entry[1], entry[2]
            g, grads[p + ".w"], grads[p + ".b"] = ops.conv3d_backward(g, h, params[p + ".w"])
        elif op == "cat":
            level, n_up = entry[1], entry[2]
            pending_skip[level] = g[:, n_up:]
            g = g[:, :n_up]
        elif op == "up":
            p, h = entry[1], entry[2]
            g, grads[p + ".w"], grads[p + ".b"] = ops.upconv2_backward(g, h, params[p + ".w"])
        elif op == "pool":
            level, idx = entry[1], entry[2]
            g = ops.maxpool2_backward(g, idx) + pending_skip.pop(level)
    return {name: grads[name] for name in params}


def forward(params: ParameterStore, cfg: UNetConfig, x) -> np.ndarray:
    """Class probabilities.  A single (C, X, Y, Z) input gives (classes, X, Y, Z)."""
    single = isinstance(x, MultiChannelVolume) or np.ndim(x) == 4
    probs = ops.softmax(forward_logits(params, cfg, x), axis=1)
    return probs[0] if single else probs


def _window_starts(dim: int, size: int, stride: int) -> list[int]:
    starts = list(range(0, dim - size + 1, stride))
    if starts[-1] != dim - size:
        starts.append(dim - size)
    return starts


def window_grid(dims, size, stride) -> list[tuple[int, int, int]]:
    axes = [_window_starts(d, s, st) for d, s, st in zip(dims, size, stride)]
    return [(i, j, k) for i in axes[0] for j in axes[1] for k in axes[2]]


def predict_probabilities(params, cfg, vol, size, stride) -> np.ndarray:
    """Overlap-averaged class probabilities over a whole (C, X, Y, Z) volume."""
    x = vol.array() if isinstance(vol, MultiChannelVolume) else np.asarray(vol, dtype=np.float64)
    dims = x.shape[1:]
    size = tuple(int(s) for s in size)
    stride = tuple(int(s) for s in stride)
    if any(d < s for d, s in zip(dims, size)):
        raise InvalidSpecError(f"volume {dims} smaller than window {size}")
    if any(st < 1 or st > s for st, s in zip(stride, size)):
        raise InvalidSpecError(f"stride {stride} must be in [1, window size {size}]")
    cfg.check_spatial(size)
    acc = np.zeros((cfg.classes,) + dims)
    count = np.zeros(dims)
    for o in window_grid(dims, size, stride):
        sl = tuple(slice(a, a + s) for a, s in zip(o, size))
        acc[(slice(None),) + sl] += forward(params, cfg, x[(slice(None),) + sl])
        count[sl] += 1
    return acc / count


def predict_volume(params, cfg, vol, size, stride) -> np.ndarray:
    """Binary lesion mask (uint8) by argmax; ties resolve to class 0."""
    probs = predict_probabilities(params, cfg, vol, size, stride)
    # argmax returns the first maximal class, i.e. background on ties
    return (probs.argmax(axis=0) == 1).astype(np.uint8) if cfg.classes == 2 else probs.argmax(axis=0)


# ---------------------------------------------------------------------------
# checkpoints: <dir>/checkpoint.json manifest + <dir>/weights.raw (f64le)


def save_checkpoint(params: ParameterStore, cfg: UNetConfig, directory, seed=None, extra=None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(data.size)})
        chunks.append(data.tobytes())
        offset += data.size
    (directory / "weights.raw").write_bytes(b"".join(chunks))
    manifest = {
        "format": "seqdropnet-checkpoint",
        "dtype": "f64le",
        "config": cfg.to_dict(),
        "seed": seed,
        "parameters": entries,
    }
    if extra:
        manifest.update(extra)
    path = directory / "checkpoint.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_checkpoint(directory) -> tuple[ParameterStore, UNetConfig, dict]:
    directory = Path(directory)
    if directory.name == "checkpoint.json":
        directory = directory.parent
    manifest_path = directory / "checkpoint.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("dtype") != "f64le":
        raise ConfigError(f"unsupported checkpoint dtype {manifest.get('dtype')!r}")
    cfg = UNetConfig.from_dict(manifest["config"])
    flat = np.frombuffer((directory / "weights.raw").read_bytes(), dtype="<f8")
    total = sum(e["count"] for e in manifest["parameters"])
    if flat.size != total:
        raise SizeMismatchError(f"weights.raw holds {flat.size} values, manifest lists {total}")
    params = {}
    for e in manifest["parameters"]:
        params[e["name"]] = flat[e["offset"] : e["offset"] + e["count"]].reshape(e["shape"]).astype(np.float64)
    check_parameters(params, cfg)
    return params, cfg, manifest
