"""Beam search with forced prefixes, and the chunk-by-chunk session loop.

Each chunk: extend (or rebuild) the encoder states, run beam search forced
through every token committed so far, hand the fresh continuation to the
commit strategy, and append its choice to the commit log. Committed tokens
are never revised; they condition all later decoding.

Two session modes produce identical commit logs for a deterministic model:

* forced-redecode: each chunk starts a fresh beam and re-scores the committed
  prefix token by token.
* buffered-state:  the decoder state of the committed path is kept between
  chunks and reused whenever the model confirms it is still valid for the
  grown encoder states; otherwise it is rebuilt by the same forced walk,
  computing identical numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .core import (
    Chunk,
    ChunkOutput,
    CommitLog,
    ConfigError,
    ContractViolation,
    Utterance,
    chunk_stream,
)
from .model import EncoderStates, SequenceModel
from .strategies import (
    StrategyConfig,
    StrategyState,
    initial_state,
    select_prefix,
)

FORCED_REDECODE = "forced"
BUFFERED_STATE = "buffered"


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 8
    cap_tokens_per_sec: float = 8.0
    length_normalize: bool = False

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if self.cap_tokens_per_sec <= 0:
            raise ConfigError("cap_tokens_per_sec must be positive")


@dataclass(frozen=True)
class BeamHypothesis:
    """A (possibly finished) decoder path; tokens never include bos/eos."""

    tokens: tuple[int, ...]
    log_prob: float
    step_log_probs: tuple[float, ...]
    finished: bool
    state: Any = None


def _rank_key(h: BeamHypothesis, length_normalize: bool):
    score = h.log_prob
    if length_normalize:
        score = score / max(1, len(h.tokens))
    return (-score, h.tokens)


def beam_search(
    model: SequenceModel,
    enc: EncoderStates | None,
    forced_prefix: Sequence[int],
    cfg: BeamConfig = BeamConfig(),
    seed: BeamHypothesis | None = None,
) -> list[BeamHypothesis]:
    """Ranked hypotheses continuing forced_prefix.

    Every hypothesis passes through the forced prefix exactly; the search
    never keeps more than beam_width live paths, never extends any path past
    cap_tokens_per_sec * available audio seconds, and stops once the best
    finished path provably beats every live one (token log-probs are
    non-positive, so extensions never raise a score). Ties rank the smaller
    token-id sequence first.
    """
    vocab = model.vocab
    prefix = tuple(int(t) for t in forced_prefix)
    if any(t == vocab.eos_id for t in prefix):
        raise ContractViolation("forced prefix must not contain eos")
    if enc is None or enc.frames_covered == 0:
        return [
            BeamHypothesis(prefix, 0.0, (0.0,) * len(prefix), True, None)
        ]
    max_total = math.floor(
        cfg.cap_tokens_per_sec * enc.audio_sec + 1e-9
    )

    if (
        seed is not None
        and seed.tokens == prefix
        and seed.state is not None
        and model.state_covers(seed.state, enc)
    ):
        root = replace(seed, finished=False)
        logps = model.dec_logits(seed.state, enc)
    else:
        state, logps = model.dec_init(enc)
        score = 0.0
        steps: list[float] = []
        for tok in prefix:
            score += float(logps[tok])
            steps.append(float(logps[tok]))
            state, logps = model.dec_advance(state, tok, enc)
        root = BeamHypothesis(prefix, score, tuple(steps), False, state)

    if len(root.tokens) >= max_total:
        return [replace(root, finished=True)]

    gen_ids = [i for i in range(len(vocab)) if i not in (vocab.pad_id, vocab.bos_id, vocab.eos_id)]
    active: list[tuple[BeamHypothesis, np.ndarray]] = [(root, logps)]
    finished: list[BeamHypothesis] = []
    while active:
        if finished:
            best_fin = max(f.log_prob for f in finished)
            best_act = max(h.log_prob for h, _ in active)
            if best_fin > best_act:
                break
        candidates: list[tuple[float, tuple[int, ...], BeamHypothesis, int, float]] = []
        for hyp, lps in active:
            # the finished path keeps its state (after its last real token)
            # so a later chunk can resume from it
            finished.append(
                replace(
                    hyp,
                    log_prob=hyp.log_prob + float(lps[vocab.eos_id]),
                    finished=True,
                )
            )
            for tok in gen_ids:
                lp = float(lps[tok])
                candidates.append(
                    (hyp.log_prob + lp, hyp.tokens + (tok,), hyp, tok, lp)
                )
        finished.sort(key=lambda h: _rank_key(h, False))
        del finished[max(cfg.beam_width, 1):]
        candidates.sort(key=lambda c: (-c[0], c[1]))
        new_active: list[tuple[BeamHypothesis, np.ndarray]] = []
        for score, toks, parent, tok, lp in candidates[: cfg.beam_width]:
            state, lps = model.dec_advance(parent.state, tok, enc)
            child = BeamHypothesis(
                toks, score, parent.step_log_probs + (lp,), False, state
            )
            if len(child.tokens) >= max_total:
                finished.append(replace(child, finished=True))
            else:
                new_active.append((child, lps))
        active = new_active
    result = finished + [h for h, _ in active]
    result.sort(key=lambda h: _rank_key(h, cfg.length_normalize))
    return result[: max(cfg.beam_width, 1)]


def offline_decode(
    model: SequenceModel,
    utt: Utterance,
    cfg: BeamConfig = BeamConfig(),
) -> tuple[str, ...]:
    """Single decode over the whole stream; the tokens (not the timing) of
    an offline-strategy session."""
    enc = model.encode(
        utt.frames,
        None,
        utt_id=utt.id,
        frame_period_sec=utt.frame_period_sec,
    )
    best = beam_search(model, enc, (), cfg)[0]
    return tuple(model.vocab.token_of(t) for t in best.tokens)


@dataclass
class Session:
    """Mutable streaming-decode state for one utterance."""

    model: SequenceModel
    utterance: Utterance
    strategy: StrategyConfig
    chunk_len_sec: float = 0.5
    beam: BeamConfig = field(default_factory=BeamConfig)
    mode: str = FORCED_REDECODE

    log: CommitLog = field(default_factory=CommitLog)
    strategy_state: StrategyState = field(default_factory=initial_state)
    committed_ids: tuple[int, ...] = ()
    enc: EncoderStates | None = None
    seed: BeamHypothesis | None = None
    next_chunk_index: int = 1
    positions_encoded: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (FORCED_REDECODE, BUFFERED_STATE):
            raise ConfigError(f"unknown session mode {self.mode!r}")

    def chunks(self) -> list[Chunk]:
        return chunk_stream(
            self.utterance.frames,
            self.chunk_len_sec,
            self.utterance.frame_period_sec,
            self.utterance.id,
        )


def step_chunk(
    session: Session, chunk: Chunk
) -> tuple[ChunkOutput, tuple[str, ...]]:
    """Consume one chunk: decode, select a commit prefix, append to the log.

    Returns the fresh continuation and the tokens actually committed.
    """
    if chunk.index != session.next_chunk_index:
        raise ContractViolation(
            f"chunk {chunk.index} given, expected {session.next_chunk_index}"
        )
    utt = session.utterance
    model = session.model
    prior_covered = (
        session.enc.frames_covered if session.enc is not None else 0
    )
    session.enc = model.encode(
        utt.frames[: chunk.end],
        session.enc,
        utt_id=utt.id,
        frame_period_sec=utt.frame_period_sec,
    )
    if model.mode == "unidirectional":
        session.positions_encoded += session.enc.frames_covered - prior_covered
    else:
        session.positions_encoded += session.enc.frames_covered

    seed = session.seed if session.mode == BUFFERED_STATE else None
    hyps = beam_search(
        model, session.enc, session.committed_ids, session.beam, seed
    )
    best = hyps[0]
    n_prev = len(session.committed_ids)
    cont_ids = best.tokens[n_prev:]
    cont_lps = best.step_log_probs[n_prev:]
    surfaces = tuple(model.vocab.token_of(t) for t in cont_ids)
    out = ChunkOutput(chunk.index, surfaces, tuple(cont_lps))

    committed, session.strategy_state = select_prefix(
        session.strategy,
        session.strategy_state,
        chunk.index,
        chunk.is_final,
        surfaces,
        session.chunk_len_sec,
    )
    n_commit = len(committed)
    session.committed_ids = session.committed_ids + cont_ids[:n_commit]
    session.log.commit(committed, chunk.index, session.chunk_len_sec)

    if session.mode == BUFFERED_STATE:
        session.seed = _seed_for_prefix(model, best, n_prev + n_commit)
    session.next_chunk_index = chunk.index + 1
    return out, committed


def _seed_for_prefix(
    model: SequenceModel, best: BeamHypothesis, n_tokens: int
) -> BeamHypothesis | None:
    """Decoder state for the committed path, trimmed to the committed length
    when the model supports it."""
    if best.state is None:
        return None
    if n_tokens == len(best.tokens):
        return replace(best, finished=False)
    state = model.trim_state(best.state, n_tokens)
    if state is None:
        return None
    return BeamHypothesis(
        best.tokens[:n_tokens],
        float(sum(best.step_log_probs[:n_tokens])),
        best.step_log_probs[:n_tokens],
        False,
        state,
    )


def run_session(
    model: SequenceModel,
    utt: Utterance,
    strategy: StrategyConfig,
    chunk_len_sec: float = 0.5,
    beam: BeamConfig = BeamConfig(),
    mode: str = FORCED_REDECODE,
) -> CommitLog:
    """Stream one utterance through the chunk loop and return its commit log."""
    session = Session(
        model=model,
        utterance=utt,
        strategy=strategy,
        chunk_len_sec=chunk_len_sec,
        beam=beam,
        mode=mode,
    )
    for chunk in session.chunks():
        step_chunk(session, chunk)
    return session.log
