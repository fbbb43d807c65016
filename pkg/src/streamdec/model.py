"""Sequence-model interface, encoder-state container, the aligned synthetic
oracle model, and single-file model serialization.

A model exposes: incremental encoding of a growing frame stream, and an
incremental decoder interface (``dec_init`` / ``dec_advance``) that yields a
normalized next-token log-probability vector after each consumed token.
``decode_step`` composes these into the one-shot form used by tests.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence, runtime_checkable

import numpy as np

from .core import (
    ContractViolation,
    ConfigError,
    UnsupportedOperation,
    Vocab,
)
from .data import Alignment, SyntheticTaskSpec, gen_with_alignments, task_vocab

UNIDIRECTIONAL = "unidirectional"
BIDIRECTIONAL = "bidirectional"


@dataclass(eq=False)
class EncoderStates:
    """Encoder output rows for every frame position received so far."""

    states: np.ndarray  # (frames_covered, d_model)
    frames_covered: int
    frame_period_sec: float = 0.010
    utt_id: str | None = None
    owner: int = 0  # id() of the producing model; guards cross-model reuse
    layer_inputs: Any = None  # model-internal cache for incremental extension
    attn_cache: dict = field(default_factory=dict)

    @property
    def audio_sec(self) -> float:
        return self.frames_covered * self.frame_period_sec


@runtime_checkable
class SequenceModel(Protocol):
    vocab: Vocab
    mode: str

    def encode(
        self,
        frames: np.ndarray,
        prior: EncoderStates | None = None,
        *,
        utt_id: str | None = None,
        frame_period_sec: float = 0.010,
    ) -> EncoderStates: ...

    def dec_init(self, enc: EncoderStates) -> tuple[Any, np.ndarray]: ...

    def dec_advance(
        self, state: Any, token_id: int, enc: EncoderStates
    ) -> tuple[Any, np.ndarray]: ...

    def dec_logits(self, state: Any, enc: EncoderStates) -> np.ndarray: ...

    def state_covers(self, state: Any, enc: EncoderStates) -> bool: ...

    def trim_state(self, state: Any, n_tokens: int) -> Any | None: ...


def decode_step(
    model: SequenceModel, enc: EncoderStates, prefix: Sequence[int]
) -> np.ndarray:
    """Next-token log-probability vector after forcing the given prefix."""
    state, logps = model.dec_init(enc)
    for tok in prefix:
        state, logps = model.dec_advance(state, int(tok), enc)
    return logps


def _check_token_id(vocab: Vocab, token_id: int) -> None:
    if not 0 <= token_id < len(vocab):
        raise ContractViolation(f"token id {token_id} out of vocab")


def _check_prior(
    model: Any, prior: EncoderStates, n_frames: int, utt_id: str | None
) -> None:
    if prior.owner != id(model):
        raise ContractViolation("prior states come from a different model")
    if prior.frames_covered > n_frames:
        raise ContractViolation(
            "prior states cover more frames than were provided"
        )
    if utt_id is not None and prior.utt_id is not None and utt_id != prior.utt_id:
        raise ContractViolation("prior states belong to a different utterance")


class SyntheticAlignedModel:
    """Deterministic oracle with a hidden token-span alignment.

    Emission rule for output slot j given ``avail`` frames of input:

    * the span of token j is not fully covered yet -> end of sequence;
    * the span ends inside the last ``instability_frames`` of a truncated
      stream -> a deterministic wrong token (confusion map);
    * otherwise -> token j itself.

    With the full stream available the greedy continuation equals the
    reference exactly. Probability mass is concentrated on the chosen token.
    """

    PEAK_LOGIT = 7.0

    def __init__(
        self,
        vocab: Vocab,
        alignments: dict[str, Alignment],
        instability_frames: int = 10,
        perturb_seed: int = 0,
        meta: dict | None = None,
    ) -> None:
        if instability_frames < 0:
            raise ConfigError("instability_frames must be >= 0")
        self.vocab = vocab
        self.mode = UNIDIRECTIONAL
        self.alignments = alignments
        self.instability_frames = instability_frames
        self.perturb_seed = perturb_seed
        self._meta = meta or {}
        # fixed-point-free map over word ids: rotate a seeded permutation
        word_ids = np.fromiter(vocab.word_ids(), dtype=np.int64)
        rng = np.random.default_rng(perturb_seed)
        shuffled = rng.permutation(word_ids)
        self.confusion = {
            int(shuffled[i]): int(shuffled[(i + 1) % len(shuffled)])
            for i in range(len(shuffled))
        }
        base = np.full(len(vocab), 0.0)
        self._base_logits = base

    @classmethod
    def from_task(
        cls,
        spec: SyntheticTaskSpec,
        count: int,
        seed: int,
        instability_frames: int = 10,
        perturb_seed: int | None = None,
    ) -> "SyntheticAlignedModel":
        """Rebuild the oracle for the dataset gen_dataset(spec, count, seed)."""
        _, aligns = gen_with_alignments(spec, count, seed)
        if perturb_seed is None:
            perturb_seed = seed
        meta = {
            "task": spec.__dict__.copy(),
            "count": count,
            "seed": seed,
            "instability_frames": instability_frames,
            "perturb_seed": perturb_seed,
        }
        return cls(
            task_vocab(spec), aligns, instability_frames, perturb_seed, meta
        )

    # --- encoding ---------------------------------------------------------

    def encode(
        self,
        frames: np.ndarray,
        prior: EncoderStates | None = None,
        *,
        utt_id: str | None = None,
        frame_period_sec: float = 0.010,
    ) -> EncoderStates:
        frames = np.asarray(frames, dtype=np.float64)
        if prior is not None:
            _check_prior(self, prior, len(frames), utt_id)
            if utt_id is None:
                utt_id = prior.utt_id
            frame_period_sec = prior.frame_period_sec
        return EncoderStates(
            states=frames,
            frames_covered=len(frames),
            frame_period_sec=frame_period_sec,
            utt_id=utt_id,
            owner=id(self),
        )

    # --- decoding ---------------------------------------------------------

    def _alignment(self, enc: EncoderStates) -> Alignment:
        if enc.utt_id is None or enc.utt_id not in self.alignments:
            raise ContractViolation(
                f"unknown utterance {enc.utt_id!r}; the oracle only decodes "
                "streams from its own dataset"
            )
        return self.alignments[enc.utt_id]

    def _emission(self, enc: EncoderStates, slot: int) -> np.ndarray:
        align = self._alignment(enc)
        avail = enc.frames_covered
        if slot >= len(align.token_ids):
            target = self.vocab.eos_id
        else:
            end = align.span_ends[slot]
            tok = align.token_ids[slot]
            if end > avail:
                target = self.vocab.eos_id
            elif (
                avail < align.total_frames
                and end + self.instability_frames > avail
            ):
                target = self.confusion[tok]
            else:
                target = tok
        logits = self._base_logits.copy()
        logits[target] = self.PEAK_LOGIT
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())

    def dec_init(self, enc: EncoderStates) -> tuple[int, np.ndarray]:
        return 0, self._emission(enc, 0)

    def dec_advance(
        self, state: int, token_id: int, enc: EncoderStates
    ) -> tuple[int, np.ndarray]:
        _check_token_id(self.vocab, token_id)
        return state + 1, self._emission(enc, state + 1)

    def dec_logits(self, state: int, enc: EncoderStates) -> np.ndarray:
        return self._emission(enc, state)

    def state_covers(self, state: int, enc: EncoderStates) -> bool:
        # position-counter state is valid for any coverage of the same stream
        return True

    def trim_state(self, state: int, n_tokens: int) -> int:
        return n_tokens

    def dump_attention(self, enc: EncoderStates, prefix: Sequence[int]):
        raise UnsupportedOperation(
            "the synthetic oracle has no attention weights"
        )


# --- serialization ---------------------------------------------------------

_MAGIC = b"SDM1"


def _write_block(fh, name: str, arr: np.ndarray) -> None:
    meta = json.dumps(
        {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
    ).encode("utf-8")
    fh.write(struct.pack("<I", len(meta)))
    fh.write(meta)
    fh.write(arr.tobytes(order="C"))


def save_model(model: Any, path: str) -> None:
    """Serialize a model to one self-describing binary file."""
    from . import transformer  # local import; transformer depends on model

    if isinstance(model, SyntheticAlignedModel):
        if not model._meta:
            raise UnsupportedOperation(
                "only oracles built by from_task can be serialized"
            )
        header = {
            "format_version": 1,
            "model_type": "synthetic",
            "meta": model._meta,
        }
        params: dict[str, np.ndarray] = {}
    elif isinstance(model, transformer.TinyTransformer):
        header = {
            "format_version": 1,
            "model_type": "transformer",
            "config": model.cfg.__dict__.copy(),
            "vocab": list(model.vocab.tokens),
        }
        params = model.params
    else:
        raise UnsupportedOperation(f"cannot serialize {type(model).__name__}")

    head = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            _write_block(fh, name, params[name])


def load_model(path: str) -> Any:
    """Inverse of save_model; the header tells which model type to rebuild."""
    from . import transformer

    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ConfigError(f"{path} is not a serialized model")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ConfigError(
                f"unsupported model format version {header.get('format_version')}"
            )
        (n_params,) = struct.unpack("<I", fh.read(4))
        params: dict[str, np.ndarray] = {}
        for _ in range(n_params):
            (mlen,) = struct.unpack("<I", fh.read(4))
            meta = json.loads(fh.read(mlen).decode("utf-8"))
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            dtype = np.dtype(meta["dtype"])
            buf = fh.read(count * dtype.itemsize)
            params[meta["name"]] = np.frombuffer(buf, dtype=dtype).reshape(
                shape
            ).copy()

    if header["model_type"] == "synthetic":
        meta = header["meta"]
        spec = SyntheticTaskSpec(**meta["task"])
        return SyntheticAlignedModel.from_task(
            spec,
            int(meta["count"]),
            int(meta["seed"]),
            int(meta["instability_frames"]),
            int(meta["perturb_seed"]),
        )
    if header["model_type"] == "transformer":
        cfg = transformer.TransformerConfig(**header["config"])
        vocab = Vocab(tuple(header["vocab"]))
        return transformer.TinyTransformer(cfg, vocab, params)
    raise ConfigError(f"unknown model type {header['model_type']!r}")
