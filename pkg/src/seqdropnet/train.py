"""Weighted cross-entropy, gradients, Adam and the training loop.

Every optimizer step draws ``batch_size`` samples.  A sample picks a case,
samples a lesion-biased patch, applies sequence dropout, and contributes its
loss to the batch mean.  All randomness for step ``s`` comes from a stream
seeded by ``(seed, s)``, so a run is a pure function of its inputs and seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from seqdropnet import net
from seqdropnet.errors import ConfigError, NonFiniteError, SizeMismatchError
from seqdropnet.net import ParameterStore, UNetConfig
from seqdropnet.ops import softmax
from seqdropnet.sampler import PatchSpec, clamp_center, draw_center, extract_arrays
from seqdropnet.seqdrop import DropoutPolicy, dropout_array
from seqdropnet.volume import LabelVolume, MultiChannelVolume

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    class_weights: tuple[float, float] = (1.0, 3.0)  # (background, lesion)
    ignore_value: float = 0.5

    def __post_init__(self):
        if len(self.class_weights) != 2 or any(w <= 0 for w in self.class_weights):
            raise ConfigError(f"class weights must be two positive numbers, got {self.class_weights}")


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    steps_per_epoch: int = 10
    batch_size: int = 1
    patch: PatchSpec = field(default_factory=PatchSpec)
    dropout: DropoutPolicy | None = None  # None: uniform over the input channel count
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ConfigError("epochs, steps_per_epoch and batch_size must be positive")


def weighted_ce_loss(probs: np.ndarray, labels: np.ndarray, cfg: LossConfig = LossConfig()):
    """Mean weighted cross-entropy over voxels whose label is not ``ignore_value``.

    ``probs`` is (2, X, Y, Z) or (N, 2, X, Y, Z) softmax output; ``labels`` has
    the matching spatial shape.  Returns ``(loss, grad)`` where ``grad`` is the
    derivative with respect to the pre-softmax logits.  A batch contributes
    the mean of its per-sample losses.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    single = probs.ndim == 4
    if single:
        probs, labels = probs[None], labels[None]
    if probs.shape[1] != 2 or probs.shape[:1] + probs.shape[2:] != labels.shape:
        raise SizeMismatchError(f"probs {probs.shape} and labels {labels.shape} are not aligned")
    w_bg, w_les = cfg.class_weights
    n = probs.shape[0]
    total = 0.0
    grad = np.zeros_like(probs)
    for i in range(n):
        lab = labels[i]
        lesion = lab == 1.0
        background = lab == 0.0
        nc = int(lesion.sum() + background.sum())
        if nc == 0:
            continue
        p_true = np.maximum(np.where(lesion, probs[i, 1], probs[i, 0]), PROB_FLOOR)
        weight = np.where(lesion, w_les, np.where(background, w_bg, 0.0))
        total += float((weight * -np.log(p_true)).sum()) / nc
        onehot = np.stack([background, lesion]).astype(np.float64)
        grad[i] = weight / nc * (probs[i] - onehot)
    grad /= n
    return total / n, (grad[0] if single else grad)


def compute_gradients(params: ParameterStore, cfg: UNetConfig, batch, loss_cfg: LossConfig = LossConfig()):
    """Mean batch loss and its gradient for every parameter.

    ``batch`` is an (N, C, X, Y, Z) input array with (N, X, Y, Z) labels, or a
    sequence of ``(input, labels)`` pairs.
    """
    x, y = _stack_batch(batch)
    logits, tape = net.forward_logits(params, cfg, x, keep_tape=True)
    loss, g = weighted_ce_loss(softmax(logits, axis=1), y, loss_cfg)
    grads = net.backward(params, cfg, tape, g)
    for name, gr in grads.items():
        if not np.all(np.isfinite(gr)):
            raise NonFiniteError(f"non-finite gradient in parameter {name}")
    return loss, grads


def _stack_batch(batch):
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray) and batch[0].ndim == 5:
        return batch
    xs, ys = [], []
    for x, y in batch:
        xs.append(x.array() if isinstance(x, MultiChannelVolume) else np.asarray(x, dtype=np.float64))
        ys.append(y.data if isinstance(y, LabelVolume) else np.asarray(y, dtype=np.float64))
    return np.stack(xs), np.stack(ys)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParameterStore) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: ParameterStore, grads: ParameterStore, state: AdamState, t: int, h: AdamHyper = AdamHyper()):
    """One bias-corrected Adam update; returns new (params, state), inputs untouched."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    if set(grads) != set(params):
        raise SizeMismatchError("gradient names do not match parameter names")
    bc1 = 1.0 - h.beta1**t
    bc2 = 1.0 - h.beta2**t
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise SizeMismatchError(f"{k}: shape mismatch between parameter, gradient and state")
        m[k] = h.beta1 * state.m[k] + (1.0 - h.beta1) * g
        v[k] = h.beta2 * state.v[k] + (1.0 - h.beta2) * (g * g)
        step = h.learning_rate * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + h.epsilon)
        new_params[k] = p - step
    return new_params, AdamState(m, v, t)


@dataclass
class Case:
    """A normalized training subject: stacked channels plus merged labels."""

    image: np.ndarray  # (C, X, Y, Z)
    labels: LabelVolume
    name: str = ""

    @classmethod
    def from_volumes(cls, image: MultiChannelVolume, labels: LabelVolume, name: str = "") -> "Case":
        if image.dims != labels.dims:
            raise SizeMismatchError(f"{name}: image dims {image.dims} != label dims {labels.dims}")
        return cls(image.array(), labels, name)


@dataclass
class TrainResult:
    params: ParameterStore
    epoch_losses: list[float]
    step_losses: list[float]
    preserved: list[list[list[str]]]  # per step, per sample: preserved channel names
    centers: list[list[tuple[int, int, int]]]


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(step)])


def sample_batch(cases: Sequence[Case], channel_names, tcfg: TrainConfig, policy: DropoutPolicy, rng):
    xs, ys, kept, centers = [], [], [], []
    for _ in range(tcfg.batch_size):
        case = cases[int(rng.integers(len(cases)))]
        center, _ = draw_center(case.labels, tcfg.patch, rng)
        center = clamp_center(center, tcfg.patch.size, case.labels.dims)
        x, y = extract_arrays(case.image, case.labels.data, center, tcfg.patch.size)
        x, keep = dropout_array(x, policy, rng)
        xs.append(x)
        ys.append(y)
        kept.append([channel_names[i] for i in keep])
        centers.append(center)
    return (np.stack(xs), np.stack(ys)), kept, centers


def train(
    cases: Sequence[Case],
    net_cfg: UNetConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig = LossConfig(),
    adam: AdamHyper = AdamHyper(),
    channel_names: Sequence[str] | None = None,
    params: ParameterStore | None = None,
    progress=None,
) -> TrainResult:
    """Train from scratch (or from ``params``) and return weights plus logs."""
    if not cases:
        raise ConfigError("training needs at least one case")
    if channel_names is None:
        channel_names = [f"ch{i}" for i in range(net_cfg.in_channels)]
    if len(channel_names) != net_cfg.in_channels:
        raise ConfigError(f"{len(channel_names)} channel names for {net_cfg.in_channels} input channels")
    net_cfg.check_spatial(train_cfg.patch.size)
    policy = train_cfg.dropout or DropoutPolicy.uniform(net_cfg.in_channels)
    if policy.channels != net_cfg.in_channels:
        raise ConfigError(f"dropout policy covers {policy.channels} channels, net has {net_cfg.in_channels}")

    if params is None:
        params = net.init_parameters(net_cfg, np.random.default_rng([int(train_cfg.seed), 2**32 - 1]))
    state = AdamState.zeros_like(params)
    epoch_losses, step_losses, preserved, centers = [], [], [], []
    step = 0
    for epoch in range(train_cfg.epochs):
        running = 0.0
        for _ in range(train_cfg.steps_per_epoch):
            step += 1
            rng = step_rng(train_cfg.seed, step)
            batch, kept, ctr = sample_batch(cases, channel_names, train_cfg, policy, rng)
            loss, grads = compute_gradients(params, net_cfg, batch, loss_cfg)
            if not math.isfinite(loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch + 1}, step {step}")
            params, state = adam_step(params, grads, state, step, adam)
            running += loss
            step_losses.append(loss)
            preserved.append(kept)
            centers.append(ctr)
        epoch_losses.append(running / train_cfg.steps_per_epoch)
        log.debug("epoch %d loss %.6f", epoch + 1, epoch_losses[-1])
        if progress is not None:
            progress(epoch + 1, epoch_losses[-1])
    return TrainResult(params, epoch_losses, step_losses, preserved, centers)
