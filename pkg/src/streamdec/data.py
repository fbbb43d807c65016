"""Synthetic aligned sequence task.

Each token owns a run of consecutive frames: its prototype vector plus
Gaussian noise. The generator is fully determined by (task spec, count,
seed), so a dataset and any oracle built on its hidden alignment can be
reproduced independently from the same arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConfigError, Utterance, Vocab


@dataclass(frozen=True)
class SyntheticTaskSpec:
    vocab_size: int = 20
    min_tokens: int = 4
    max_tokens: int = 10
    min_frames_per_token: int = 20
    max_frames_per_token: int = 30
    frame_dim: int = 16
    noise_std: float = 0.1
    frame_period_sec: float = 0.010
    translation: bool = False
    # seeds the per-word prototypes and the translation permutation; part of
    # the task identity so that datasets drawn with different seeds still
    # share one frame-to-token mapping (train/dev/eval consistency)
    world_seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must be >= 4")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError("need 1 <= min_tokens <= max_tokens")
        if not 1 <= self.min_frames_per_token <= self.max_frames_per_token:
            raise ConfigError("need 1 <= min/max frames per token")
        if self.frame_dim < 1:
            raise ConfigError("frame_dim must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.frame_period_sec <= 0:
            raise ConfigError("frame_period_sec must be positive")


def source_words(spec: SyntheticTaskSpec) -> list[str]:
    return [f"w{i:02d}" for i in range(spec.vocab_size)]


def target_words(spec: SyntheticTaskSpec) -> list[str]:
    return [f"v{i:02d}" for i in range(spec.vocab_size)]


def task_vocab(spec: SyntheticTaskSpec) -> Vocab:
    """Vocabulary the model decodes into: target side when translating."""
    if spec.translation:
        return Vocab.build(target_words(spec))
    return Vocab.build(source_words(spec))


def prototypes(spec: SyntheticTaskSpec) -> np.ndarray:
    """Per-word frame prototypes, fixed by the task's world seed and shared
    by every dataset drawn from the same spec."""
    rng = np.random.default_rng(spec.world_seed)
    return rng.normal(0.0, 1.0, (spec.vocab_size, spec.frame_dim))


def translation_map(spec: SyntheticTaskSpec) -> np.ndarray:
    """Fixed source-to-target word permutation, part of the task identity."""
    rng = np.random.default_rng(spec.world_seed)
    rng.normal(0.0, 1.0, (spec.vocab_size, spec.frame_dim))  # skip prototype draw
    return rng.permutation(spec.vocab_size)


@dataclass(frozen=True)
class Alignment:
    """Hidden truth for one utterance: which output token owns which frames."""

    token_ids: tuple[int, ...]  # vocab ids of the tokens the model must emit
    span_ends: tuple[int, ...]  # exclusive frame index closing each span
    total_frames: int


def gen_with_alignments(
    spec: SyntheticTaskSpec, count: int, seed: int
) -> tuple[list[Utterance], dict[str, Alignment]]:
    """Generate utterances together with their hidden token-span table."""
    if count < 0:
        raise ConfigError("count must be >= 0")
    rng = np.random.default_rng(seed)
    protos = prototypes(spec)
    perm = translation_map(spec)
    src = source_words(spec)
    tgt = target_words(spec)
    vocab = task_vocab(spec)

    utts: list[Utterance] = []
    aligns: dict[str, Alignment] = {}
    for u in range(count):
        n_tok = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
        word_idx = rng.integers(0, spec.vocab_size, n_tok)
        durs = rng.integers(
            spec.min_frames_per_token, spec.max_frames_per_token + 1, n_tok
        )
        total = int(durs.sum())
        frames = np.repeat(protos[word_idx], durs, axis=0)
        if spec.noise_std > 0:
            frames = frames + rng.normal(
                0.0, spec.noise_std, (total, spec.frame_dim)
            )
        ref = tuple(src[i] for i in word_idx)
        tgt_tokens: tuple[str, ...] | None = None
        out_words = list(word_idx)
        if spec.translation:
            mapped = [int(perm[i]) for i in word_idx]
            # mild reordering: each adjacent pair may swap
            for j in range(0, len(mapped) - 1, 2):
                if rng.random() < 0.3:
                    mapped[j], mapped[j + 1] = mapped[j + 1], mapped[j]
            tgt_tokens = tuple(tgt[i] for i in mapped)
            out_words = mapped
        out_surfaces = (
            [tgt[i] for i in out_words]
            if spec.translation
            else [src[i] for i in out_words]
        )
        # the draw seed is part of the id so utterances from different draws
        # of the same task can never be confused with one another
        uid = f"utt{seed:03d}-{u:05d}"
        utts.append(
            Utterance(
                id=uid,
                frames=frames,
                reference_tokens=ref,
                target_tokens=tgt_tokens,
                frame_period_sec=spec.frame_period_sec,
            )
        )
        ends = np.cumsum(durs)
        aligns[uid] = Alignment(
            token_ids=tuple(vocab.id_of(s) for s in out_surfaces),
            span_ends=tuple(int(e) for e in ends),
            total_frames=total,
        )
    return utts, aligns


def gen_dataset(
    spec: SyntheticTaskSpec, count: int, seed: int
) -> list[Utterance]:
    """Deterministic synthetic dataset; same arguments give identical bytes."""
    utts, _ = gen_with_alignments(spec, count, seed)
    return utts


def _ceil(x: float) -> int:
    """Ceiling tolerant of float dust from products like 10 * 0.1."""
    return math.ceil(x - 1e-9)


def make_partial_pair(
    utt: Utterance, p: float, use_target: bool = False
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Proportionally truncated training pair: the first ceil(I*p) frames
    paired with the first ceil(J*p) tokens."""
    if not 0 < p <= 1:
        raise ConfigError("ratio p must be in (0, 1]")
    tokens = utt.target_tokens if use_target else utt.reference_tokens
    if use_target and utt.target_tokens is None:
        raise ConfigError(f"utterance {utt.id} has no target tokens")
    n_frames = _ceil(utt.n_frames * p)
    n_tokens = _ceil(len(tokens) * p)
    return utt.frames[:n_frames], tuple(tokens[:n_tokens])
