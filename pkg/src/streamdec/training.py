"""Training and partial-input adaptation for the transformer.

Gradients come from the in-repo reverse-mode graph (autodiff.py); the
optimizer is Adam with linear warmup followed by inverse-square-root decay.
Adaptation fine-tunes on an even mix of full utterances and proportionally
truncated frame/token pairs, at a quarter of the base learning rate, keeping
the checkpoint with the best full-sequence dev token error rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import transformer as tfm
from .core import BOS_ID, EOS_ID, PAD_ID, ConfigError, Utterance, Vocab
from .data import make_partial_pair
from .decoder import BeamConfig, offline_decode
from .metrics import corpus_wer
from .transformer import TinyTransformer, TransformerConfig


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    warmup_steps: int = 400
    label_smoothing: float = 0.1
    batch_size: int = 32
    total_steps: int = 600
    seed: int = 0
    eval_every: int = 40  # dev evaluation cadence (checkpoint selection)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.total_steps < 1:
            raise ConfigError("learning_rate and total_steps must be positive")
        if self.warmup_steps < 1 or self.batch_size < 1:
            raise ConfigError("warmup_steps and batch_size must be >= 1")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label_smoothing must be in [0, 1)")


@dataclass(frozen=True)
class PartialSliceSpec:
    """Truncation-ratio range for adaptation pairs; the full:partial mix per
    batch is one to one."""

    ratio_low: float = 0.1
    ratio_high: float = 0.4

    def __post_init__(self) -> None:
        if not 0 < self.ratio_low <= self.ratio_high <= 1:
            raise ConfigError("need 0 < ratio_low <= ratio_high <= 1")


class Adam:
    def __init__(
        self,
        params: dict[str, np.ndarray],
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-9,
    ) -> None:
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            self.params[k] -= lr * mhat / (np.sqrt(vhat) + self.eps)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the base rate, then inverse-sqrt decay."""
    step = max(step, 1)
    return cfg.learning_rate * min(
        step / cfg.warmup_steps, math.sqrt(cfg.warmup_steps / step)
    )


def make_batch(
    pairs: Sequence[tuple[np.ndarray, Sequence[str]]],
    vocab: Vocab,
    frame_dim: int,
) -> dict[str, np.ndarray]:
    """Pad (frames, tokens) pairs into fixed arrays with 0/1 masks."""
    if not pairs:
        raise ConfigError("empty batch")
    b = len(pairs)
    tf = max(len(f) for f, _ in pairs)
    td = max(len(t) for _, t in pairs) + 1  # room for bos/eos shift
    frames = np.zeros((b, tf, frame_dim))
    frame_mask = np.zeros((b, tf))
    dec_in = np.full((b, td), PAD_ID, dtype=np.int64)
    labels = np.full((b, td), PAD_ID, dtype=np.int64)
    label_mask = np.zeros((b, td))
    for i, (f, toks) in enumerate(pairs):
        if len(f) == 0:
            raise ConfigError("utterance with zero frames in batch")
        frames[i, : len(f)] = f
        frame_mask[i, : len(f)] = 1.0
        ids = vocab.encode(tuple(toks))
        dec_in[i, 0] = BOS_ID
        dec_in[i, 1 : len(ids) + 1] = ids
        labels[i, : len(ids)] = ids
        labels[i, len(ids)] = EOS_ID
        label_mask[i, : len(ids) + 1] = 1.0
    return {
        "frames": frames,
        "frame_mask": frame_mask,
        "dec_in": dec_in,
        "labels": labels,
        "label_mask": label_mask,
    }


def _full_pair(
    utt: Utterance, use_target: bool
) -> tuple[np.ndarray, tuple[str, ...]]:
    toks = utt.target_tokens if use_target else utt.reference_tokens
    if toks is None:
        raise ConfigError(f"utterance {utt.id} has no target tokens")
    return utt.frames, tuple(toks)


def batch_loss_and_grads(
    model: TinyTransformer,
    batch: dict[str, np.ndarray],
    label_smoothing: float,
) -> tuple[float, dict[str, np.ndarray]]:
    pt = tfm.leaf_tensors(model.params)
    loss = tfm.training_loss(model.cfg, pt, batch, label_smoothing)
    loss.backward()
    grads = {k: t.grad for k, t in pt.items() if t.grad is not None}
    return float(loss.data), grads


def token_error_rate(
    model: TinyTransformer,
    utts: Sequence[Utterance],
    use_target: bool = False,
    beam: BeamConfig = BeamConfig(beam_width=1),
) -> float:
    """Corpus token error rate of full-stream decodes."""
    pairs = []
    for u in utts:
        ref = u.target_tokens if use_target else u.reference_tokens
        hyp = offline_decode(model, u, beam)
        pairs.append((ref, hyp))
    return corpus_wer(pairs).rate


def train(
    model: TinyTransformer,
    dataset: Sequence[Utterance],
    cfg: TrainConfig,
    use_target: bool = False,
) -> tuple[TinyTransformer, list[tuple[int, float, float]]]:
    """Teacher-forced training from the model's current parameters.

    Returns a new model plus the (step, loss, lr) curve; the input model is
    left untouched. Seeded runs are bit-reproducible.
    """
    if not dataset:
        raise ConfigError("empty training dataset")
    out = model.clone()
    opt = Adam(out.params)
    rng = np.random.default_rng(cfg.seed)
    curve: list[tuple[int, float, float]] = []
    for step in range(1, cfg.total_steps + 1):
        idx = rng.choice(len(dataset), size=min(cfg.batch_size, len(dataset)), replace=False)
        pairs = [_full_pair(dataset[i], use_target) for i in idx]
        batch = make_batch(pairs, out.vocab, out.cfg.frame_dim)
        loss, grads = batch_loss_and_grads(out, batch, cfg.label_smoothing)
        if not math.isfinite(loss):
            raise RuntimeError(
                f"training diverged at step {step}: loss={loss}; last lr "
                f"{lr_at(step - 1, cfg):.3g}"
            )
        lr = lr_at(step, cfg)
        opt.step(grads, lr)
        curve.append((step, loss, lr))
    return out, curve


def adapt(
    model: TinyTransformer,
    dataset: Sequence[Utterance],
    base_cfg: TrainConfig,
    dev: Sequence[Utterance],
    slices: PartialSliceSpec = PartialSliceSpec(),
    lr_factor: float = 0.25,
    use_target: bool = False,
) -> tuple[TinyTransformer, list[tuple[int, float, float]]]:
    """Fine-tune on a 1:1 mix of full utterances and truncated pairs.

    The truncation ratio is drawn fresh per utterance per batch. Learning
    rate is the base rate scaled by lr_factor. Every eval_every steps the
    full-sequence dev token error rate decides which checkpoint survives.
    """
    if not dataset:
        raise ConfigError("empty adaptation dataset")
    if not dev:
        raise ConfigError("adaptation needs a dev set for checkpoint selection")
    cfg = replace(base_cfg, learning_rate=base_cfg.learning_rate * lr_factor)
    out = model.clone()
    opt = Adam(out.params)
    rng = np.random.default_rng(cfg.seed + 1)
    curve: list[tuple[int, float, float]] = []
    n_half = max(cfg.batch_size // 2, 1)
    best_params = {k: v.copy() for k, v in out.params.items()}
    best_ter = token_error_rate(out, dev, use_target)
    for step in range(1, cfg.total_steps + 1):
        full_idx = rng.choice(len(dataset), size=min(n_half, len(dataset)), replace=False)
        part_idx = rng.choice(len(dataset), size=min(n_half, len(dataset)), replace=False)
        pairs = [_full_pair(dataset[i], use_target) for i in full_idx]
        for i in part_idx:
            p = rng.uniform(slices.ratio_low, slices.ratio_high)
            pairs.append(make_partial_pair(dataset[i], p, use_target))
        batch = make_batch(pairs, out.vocab, out.cfg.frame_dim)
        loss, grads = batch_loss_and_grads(out, batch, cfg.label_smoothing)
        if not math.isfinite(loss):
            raise RuntimeError(f"adaptation diverged at step {step}: loss={loss}")
        lr = lr_at(step, cfg)
        opt.step(grads, lr)
        curve.append((step, loss, lr))
        if step % cfg.eval_every == 0 or step == cfg.total_steps:
            ter = token_error_rate(out, dev, use_target)
            if ter <= best_ter:
                best_ter = ter
                best_params = {k: v.copy() for k, v in out.params.items()}
    return TinyTransformer(out.cfg, out.vocab, best_params), curve


def write_curve(curve: Sequence[tuple[int, float, float]], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss,lr\n")
        for step, loss, lr in curve:
            fh.write(f"{step},{loss:.6f},{lr:.8f}\n")
