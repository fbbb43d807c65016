"""A small encoder-decoder transformer over frame streams.

The encoder can run with causal (unidirectional) self-attention, in which
case encoder states for earlier positions never change as more frames arrive
and encoding is append-only. Decoding is incremental: per-layer key/value
rows are cached per hypothesis and cross-attention always spans every encoder
state available at the time of the call.

Inference runs on plain float64 numpy. Training builds the same math as an
autodiff graph (see training.py for the loop).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import ConfigError, ContractViolation, Vocab
from .model import (
    BIDIRECTIONAL,
    UNIDIRECTIONAL,
    EncoderStates,
    _check_prior,
    _check_token_id,
)

LN_EPS = 1e-5


@dataclass(frozen=True)
class TransformerConfig:
    frame_dim: int
    vocab_size: int
    d_model: int = 64
    heads: int = 2
    ff_dim: int = 128
    enc_layers: int = 2
    dec_layers: int = 2
    mode: str = UNIDIRECTIONAL
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (UNIDIRECTIONAL, BIDIRECTIONAL):
            raise ConfigError(f"unknown encoder mode {self.mode!r}")
        if self.d_model % self.heads != 0:
            raise ConfigError("d_model must be divisible by heads")
        if min(self.frame_dim, self.vocab_size, self.d_model, self.heads,
               self.ff_dim, self.enc_layers, self.dec_layers) < 1:
            raise ConfigError("all size hyperparameters must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, (fan_in, fan_out))


def init_params(cfg: TransformerConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.init_seed)
    d, ff, v = cfg.d_model, cfg.ff_dim, cfg.vocab_size
    p: dict[str, np.ndarray] = {
        "enc_in_w": _xavier(rng, cfg.frame_dim, d),
        "enc_in_b": np.zeros(d),
        "tok_emb": rng.normal(0.0, d ** -0.5, (v, d)),
        "enc_lnf_g": np.ones(d),
        "enc_lnf_b": np.zeros(d),
        "dec_lnf_g": np.ones(d),
        "dec_lnf_b": np.zeros(d),
        "out_w": _xavier(rng, d, v),
        "out_b": np.zeros(v),
    }
    for l in range(cfg.enc_layers):
        for nm in ("wq", "wk", "wv", "wo"):
            p[f"enc{l}_{nm}"] = _xavier(rng, d, d)
            p[f"enc{l}_b{nm[1]}"] = np.zeros(d)
        p[f"enc{l}_ln1_g"] = np.ones(d)
        p[f"enc{l}_ln1_b"] = np.zeros(d)
        p[f"enc{l}_ln2_g"] = np.ones(d)
        p[f"enc{l}_ln2_b"] = np.zeros(d)
        p[f"enc{l}_ff1_w"] = _xavier(rng, d, ff)
        p[f"enc{l}_ff1_b"] = np.zeros(ff)
        p[f"enc{l}_ff2_w"] = _xavier(rng, ff, d)
        p[f"enc{l}_ff2_b"] = np.zeros(d)
    for l in range(cfg.dec_layers):
        for nm in ("sq", "sk", "sv", "so", "cq", "ck", "cv", "co"):
            p[f"dec{l}_{nm}"] = _xavier(rng, d, d)
            p[f"dec{l}_b{nm}"] = np.zeros(d)
        for i in (1, 2, 3):
            p[f"dec{l}_ln{i}_g"] = np.ones(d)
            p[f"dec{l}_ln{i}_b"] = np.zeros(d)
        p[f"dec{l}_ff1_w"] = _xavier(rng, d, ff)
        p[f"dec{l}_ff1_b"] = np.zeros(ff)
        p[f"dec{l}_ff2_w"] = _xavier(rng, ff, d)
        p[f"dec{l}_ff2_b"] = np.zeros(d)
    return p


def _ln_np(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    c = x - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    return g * (c / np.sqrt(var + LN_EPS)) + b


def _softmax_np(x: np.ndarray) -> np.ndarray:
    s = x - x.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_np(x: np.ndarray) -> np.ndarray:
    s = x - x.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def _heads(x: np.ndarray, h: int, dh: int) -> np.ndarray:
    # (T, d) -> (h, T, dh)
    t = x.shape[0]
    return x.reshape(t, h, dh).transpose(1, 0, 2)


def _merge(x: np.ndarray, d: int) -> np.ndarray:
    # (h, T, dh) -> (T, d)
    return x.transpose(1, 0, 2).reshape(x.shape[1], d)


@dataclass(frozen=True)
class DecState:
    """Immutable incremental decoder state: per-layer self-attention K/V for
    every consumed position, plus the cached next-token distribution."""

    owner: int
    frames_covered: int
    pos: int  # consumed input positions, bos included
    kv: tuple  # per layer: (K, V) with shape (heads, pos, head_dim)
    logps: np.ndarray


class TinyTransformer:
    def __init__(
        self,
        cfg: TransformerConfig,
        vocab: Vocab,
        params: dict[str, np.ndarray] | None = None,
    ) -> None:
        if len(vocab) != cfg.vocab_size:
            raise ConfigError(
                f"vocab has {len(vocab)} entries, config says {cfg.vocab_size}"
            )
        self.cfg = cfg
        self.vocab = vocab
        self.params = params if params is not None else init_params(cfg)
        self._pos_table = np.zeros((0, cfg.d_model))

    @property
    def mode(self) -> str:
        return self.cfg.mode

    def clone(self) -> "TinyTransformer":
        return TinyTransformer(
            self.cfg, self.vocab, {k: v.copy() for k, v in self.params.items()}
        )

    # --- shared pieces ------------------------------------------------------

    def _pos(self, upto: int) -> np.ndarray:
        if upto > len(self._pos_table):
            self._pos_table = sinusoid_table(
                max(upto, 2 * len(self._pos_table), 64), self.cfg.d_model
            )
        return self._pos_table[:upto]

    # --- encoder ------------------------------------------------------------

    def encode(
        self,
        frames: np.ndarray,
        prior: EncoderStates | None = None,
        *,
        utt_id: str | None = None,
        frame_period_sec: float = 0.010,
    ) -> EncoderStates:
        cfg = self.cfg
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or (frames.size and frames.shape[1] != cfg.frame_dim):
            raise ContractViolation(
                f"frames must be (n, {cfg.frame_dim}); got {frames.shape}"
            )
        total = len(frames)
        if prior is not None:
            _check_prior(self, prior, total, utt_id)
            if utt_id is None:
                utt_id = prior.utt_id
            frame_period_sec = prior.frame_period_sec

        incremental = cfg.mode == UNIDIRECTIONAL and prior is not None
        if incremental:
            start = prior.frames_covered
            layer_inputs = list(prior.layer_inputs)
            old_states = prior.states
        else:
            start = 0
            layer_inputs = [
                np.zeros((0, cfg.d_model)) for _ in range(cfg.enc_layers + 1)
            ]
            old_states = np.zeros((0, cfg.d_model))

        if total == start:
            return EncoderStates(
                old_states, total, frame_period_sec, utt_id, id(self),
                layer_inputs,
            )

        n_new = total - start
        x = frames[start:] @ self.params["enc_in_w"] + self.params["enc_in_b"]
        x = x + self._pos(total)[start:]
        for l in range(cfg.enc_layers):
            full_in = (
                np.concatenate([layer_inputs[l], x]) if start else x
            )
            x = self._enc_layer(l, x, full_in, start)
            layer_inputs[l] = full_in
        layer_inputs[cfg.enc_layers] = (
            np.concatenate([layer_inputs[cfg.enc_layers], x]) if start else x
        )
        new_states = _ln_np(
            x, self.params["enc_lnf_g"], self.params["enc_lnf_b"]
        )
        states = np.concatenate([old_states, new_states]) if start else new_states
        return EncoderStates(
            states, total, frame_period_sec, utt_id, id(self), layer_inputs
        )

    def _enc_layer(
        self, l: int, x_new: np.ndarray, full_in: np.ndarray, start: int
    ) -> np.ndarray:
        """One pre-norm encoder block evaluated for the new rows only."""
        p = self.params
        cfg = self.cfg
        h, dh = cfg.heads, cfg.head_dim
        t_full = len(full_in)
        n_new = len(x_new)
        ln = _ln_np(full_in, p[f"enc{l}_ln1_g"], p[f"enc{l}_ln1_b"])
        q = _heads(ln[start:] @ p[f"enc{l}_wq"] + p[f"enc{l}_bq"], h, dh)
        k = _heads(ln @ p[f"enc{l}_wk"] + p[f"enc{l}_bk"], h, dh)
        v = _heads(ln @ p[f"enc{l}_wv"] + p[f"enc{l}_bv"], h, dh)
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh)  # (h, n_new, t_full)
        if cfg.mode == UNIDIRECTIONAL:
            cols = np.arange(t_full)[None, :]
            rows = start + np.arange(n_new)[:, None]
            scores = np.where(cols > rows, -np.inf, scores)
        ctx = _merge(_softmax_np(scores) @ v, cfg.d_model)
        x_attn = x_new + (ctx @ p[f"enc{l}_wo"] + p[f"enc{l}_bo"])
        ln2 = _ln_np(x_attn, p[f"enc{l}_ln2_g"], p[f"enc{l}_ln2_b"])
        f = np.maximum(ln2 @ p[f"enc{l}_ff1_w"] + p[f"enc{l}_ff1_b"], 0.0)
        return x_attn + (f @ p[f"enc{l}_ff2_w"] + p[f"enc{l}_ff2_b"])

    # --- incremental decoder --------------------------------------------------

    def _cross_kv(self, enc: EncoderStates, l: int) -> tuple[np.ndarray, np.ndarray]:
        key = ("cross_kv", id(self), l)
        hit = enc.attn_cache.get(key)
        if hit is None:
            p = self.params
            h, dh = self.cfg.heads, self.cfg.head_dim
            ke = _heads(enc.states @ p[f"dec{l}_ck"] + p[f"dec{l}_bck"], h, dh)
            ve = _heads(enc.states @ p[f"dec{l}_cv"] + p[f"dec{l}_bcv"], h, dh)
            hit = (ke, ve)
            enc.attn_cache[key] = hit
        return hit

    def _advance_one(
        self, x: np.ndarray, kv: tuple, enc: EncoderStates
    ) -> tuple[tuple, np.ndarray]:
        """Push one embedded input position through the decoder stack."""
        p = self.params
        cfg = self.cfg
        h, dh = cfg.heads, cfg.head_dim
        row = x[None, :]
        new_kv = []
        for l in range(cfg.dec_layers):
            ln = _ln_np(row, p[f"dec{l}_ln1_g"], p[f"dec{l}_ln1_b"])
            q = _heads(ln @ p[f"dec{l}_sq"] + p[f"dec{l}_bsq"], h, dh)
            k_new = _heads(ln @ p[f"dec{l}_sk"] + p[f"dec{l}_bsk"], h, dh)
            v_new = _heads(ln @ p[f"dec{l}_sv"] + p[f"dec{l}_bsv"], h, dh)
            k_old, v_old = kv[l]
            k_all = np.concatenate([k_old, k_new], axis=1)
            v_all = np.concatenate([v_old, v_new], axis=1)
            scores = q @ k_all.transpose(0, 2, 1) / math.sqrt(dh)
            ctx = _merge(_softmax_np(scores) @ v_all, cfg.d_model)
            row = row + (ctx @ p[f"dec{l}_so"] + p[f"dec{l}_bso"])

            ln2 = _ln_np(row, p[f"dec{l}_ln2_g"], p[f"dec{l}_ln2_b"])
            q2 = _heads(ln2 @ p[f"dec{l}_cq"] + p[f"dec{l}_bcq"], h, dh)
            ke, ve = self._cross_kv(enc, l)
            scores2 = q2 @ ke.transpose(0, 2, 1) / math.sqrt(dh)
            ctx2 = _merge(_softmax_np(scores2) @ ve, cfg.d_model)
            row = row + (ctx2 @ p[f"dec{l}_co"] + p[f"dec{l}_bco"])

            ln3 = _ln_np(row, p[f"dec{l}_ln3_g"], p[f"dec{l}_ln3_b"])
            f = np.maximum(ln3 @ p[f"dec{l}_ff1_w"] + p[f"dec{l}_ff1_b"], 0.0)
            row = row + (f @ p[f"dec{l}_ff2_w"] + p[f"dec{l}_ff2_b"])
            new_kv.append((k_all, v_all))
        out = _ln_np(row, p["dec_lnf_g"], p["dec_lnf_b"])
        logits = out @ self.params["out_w"] + self.params["out_b"]
        return tuple(new_kv), _log_softmax_np(logits)[0]

    def _embed_token(self, token_id: int, position: int) -> np.ndarray:
        d = self.cfg.d_model
        return (
            self.params["tok_emb"][token_id] * math.sqrt(d)
            + self._pos(position + 1)[position]
        )

    def dec_init(self, enc: EncoderStates) -> tuple[DecState, np.ndarray]:
        if enc.owner != id(self):
            raise ContractViolation("encoder states from a different model")
        if enc.frames_covered == 0:
            raise ContractViolation("cannot decode with no encoder states")
        empty = tuple(
            (
                np.zeros((self.cfg.heads, 0, self.cfg.head_dim)),
                np.zeros((self.cfg.heads, 0, self.cfg.head_dim)),
            )
            for _ in range(self.cfg.dec_layers)
        )
        kv, logps = self._advance_one(
            self._embed_token(self.vocab.bos_id, 0), empty, enc
        )
        state = DecState(id(self), enc.frames_covered, 1, kv, logps)
        return state, logps

    def dec_advance(
        self, state: DecState, token_id: int, enc: EncoderStates
    ) -> tuple[DecState, np.ndarray]:
        _check_token_id(self.vocab, token_id)
        if not self.state_covers(state, enc):
            raise ContractViolation(
                "decoder state does not match the given encoder states"
            )
        kv, logps = self._advance_one(
            self._embed_token(token_id, state.pos), state.kv, enc
        )
        return DecState(id(self), enc.frames_covered, state.pos + 1, kv, logps), logps

    def dec_logits(self, state: DecState, enc: EncoderStates) -> np.ndarray:
        if not self.state_covers(state, enc):
            raise ContractViolation("stale decoder state")
        return state.logps

    def state_covers(self, state: Any, enc: EncoderStates) -> bool:
        return (
            isinstance(state, DecState)
            and state.owner == id(self)
            and enc.owner == id(self)
            and state.frames_covered == enc.frames_covered
        )

    def trim_state(self, state: DecState, n_tokens: int) -> None:
        # hidden rows for intermediate lengths are not kept; a shorter prefix
        # has to be rebuilt (cross-attention changes with coverage anyway)
        return None

    # --- whole-prefix decoder pass (attention introspection) -----------------

    def _dec_full(
        self, enc: EncoderStates, prefix: Sequence[int]
    ) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        p = self.params
        cfg = self.cfg
        h, dh = cfg.heads, cfg.head_dim
        ids = [self.vocab.bos_id] + [int(t) for t in prefix]
        for t in ids:
            _check_token_id(self.vocab, t)
        q_len = len(ids)
        x = (
            p["tok_emb"][ids] * math.sqrt(cfg.d_model)
            + self._pos(q_len)
        )
        self_attns: list[np.ndarray] = []
        cross_attns: list[np.ndarray] = []
        causal = np.where(
            np.arange(q_len)[None, :] > np.arange(q_len)[:, None], -np.inf, 0.0
        )
        for l in range(cfg.dec_layers):
            ln = _ln_np(x, p[f"dec{l}_ln1_g"], p[f"dec{l}_ln1_b"])
            q = _heads(ln @ p[f"dec{l}_sq"] + p[f"dec{l}_bsq"], h, dh)
            k = _heads(ln @ p[f"dec{l}_sk"] + p[f"dec{l}_bsk"], h, dh)
            v = _heads(ln @ p[f"dec{l}_sv"] + p[f"dec{l}_bsv"], h, dh)
            attn = _softmax_np(q @ k.transpose(0, 2, 1) / math.sqrt(dh) + causal)
            self_attns.append(attn)
            x = x + (_merge(attn @ v, cfg.d_model) @ p[f"dec{l}_so"] + p[f"dec{l}_bso"])

            ln2 = _ln_np(x, p[f"dec{l}_ln2_g"], p[f"dec{l}_ln2_b"])
            q2 = _heads(ln2 @ p[f"dec{l}_cq"] + p[f"dec{l}_bcq"], h, dh)
            ke, ve = self._cross_kv(enc, l)
            attn2 = _softmax_np(q2 @ ke.transpose(0, 2, 1) / math.sqrt(dh))
            cross_attns.append(attn2)
            x = x + (_merge(attn2 @ ve, cfg.d_model) @ p[f"dec{l}_co"] + p[f"dec{l}_bco"])

            ln3 = _ln_np(x, p[f"dec{l}_ln3_g"], p[f"dec{l}_ln3_b"])
            f = np.maximum(ln3 @ p[f"dec{l}_ff1_w"] + p[f"dec{l}_ff1_b"], 0.0)
            x = x + (f @ p[f"dec{l}_ff2_w"] + p[f"dec{l}_ff2_b"])
        out = _ln_np(x, p["dec_lnf_g"], p["dec_lnf_b"])
        logps = _log_softmax_np(out @ p["out_w"] + p["out_b"])
        return logps, self_attns, cross_attns

    def dump_attention(
        self, enc: EncoderStates, prefix: Sequence[int]
    ) -> dict[str, np.ndarray]:
        """Per-layer, per-head attention weight matrices for the current
        stream: encoder self-attention, decoder self-attention over bos+prefix,
        and cross-attention of those query rows over all encoder states."""
        if enc.owner != id(self) or enc.layer_inputs is None:
            raise ContractViolation(
                "attention dump needs encoder states produced by this model"
            )
        p = self.params
        cfg = self.cfg
        h, dh = cfg.heads, cfg.head_dim
        grids: dict[str, np.ndarray] = {}
        for l in range(cfg.enc_layers):
            full_in = enc.layer_inputs[l]
            t = len(full_in)
            ln = _ln_np(full_in, p[f"enc{l}_ln1_g"], p[f"enc{l}_ln1_b"])
            q = _heads(ln @ p[f"enc{l}_wq"] + p[f"enc{l}_bq"], h, dh)
            k = _heads(ln @ p[f"enc{l}_wk"] + p[f"enc{l}_bk"], h, dh)
            scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
            if cfg.mode == UNIDIRECTIONAL:
                scores = np.where(
                    np.arange(t)[None, :] > np.arange(t)[:, None],
                    -np.inf,
                    scores,
                )
            attn = _softmax_np(scores)
            for head in range(h):
                grids[f"encoder_self.layer{l}.head{head}"] = attn[head]
        _, self_attns, cross_attns = self._dec_full(enc, prefix)
        for l in range(cfg.dec_layers):
            for head in range(h):
                grids[f"decoder_self.layer{l}.head{head}"] = self_attns[l][head]
                grids[f"cross.layer{l}.head{head}"] = cross_attns[l][head]
        return grids


def sinusoid_table(n: int, d: int) -> np.ndarray:
    """Absolute sinusoidal position encodings, (n, d)."""
    pos = np.arange(n)[:, None].astype(np.float64)
    i = np.arange(d)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


# --- training graph ----------------------------------------------------------


def leaf_tensors(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def _attn_graph(
    q_in: Tensor,
    kv_in: Tensor,
    wq: Tensor, bq: Tensor,
    wk: Tensor, bk: Tensor,
    wv: Tensor, bv: Tensor,
    wo: Tensor, bo: Tensor,
    mask: np.ndarray | None,
    heads: int,
) -> Tensor:
    b_sz, tq, d = q_in.shape
    tk = kv_in.shape[1]
    dh = d // heads
    q = ad.add(ad.matmul(q_in, wq), bq)
    k = ad.add(ad.matmul(kv_in, wk), bk)
    v = ad.add(ad.matmul(kv_in, wv), bv)
    qh = ad.transpose(ad.reshape(q, (b_sz, tq, heads, dh)), (0, 2, 1, 3))
    kh = ad.transpose(ad.reshape(k, (b_sz, tk, heads, dh)), (0, 2, 3, 1))
    vh = ad.transpose(ad.reshape(v, (b_sz, tk, heads, dh)), (0, 2, 1, 3))
    scores = ad.scale(ad.matmul(qh, kh), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = ad.add(scores, Tensor(mask))
    ctx = ad.matmul(ad.softmax(scores), vh)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b_sz, tq, d))
    return ad.add(ad.matmul(ctx, wo), bo)


def _ffn_graph(x: Tensor, w1, b1, w2, b2) -> Tensor:
    return ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(x, w1), b1)), w2), b2)


def training_logits(
    cfg: TransformerConfig,
    pt: dict[str, Tensor],
    frames: np.ndarray,
    frame_mask: np.ndarray,
    dec_in: np.ndarray,
) -> Tensor:
    """Teacher-forced decoder log-probabilities (batch, positions, vocab)."""
    b_sz, tf, _ = frames.shape
    td = dec_in.shape[1]
    d = cfg.d_model

    key_ok = frame_mask[:, None, None, :]  # (B,1,1,Tf)
    allow = np.broadcast_to(key_ok, (b_sz, 1, tf, tf)).copy()
    if cfg.mode == UNIDIRECTIONAL:
        causal = (
            np.arange(tf)[None, :] <= np.arange(tf)[:, None]
        ).astype(np.float64)
        allow = allow * causal[None, None]
    enc_mask = (1.0 - allow) * -1e9

    x = ad.add(ad.matmul(Tensor(frames), pt["enc_in_w"]), pt["enc_in_b"])
    x = ad.add(x, Tensor(sinusoid_table(tf, d)[None]))
    for l in range(cfg.enc_layers):
        ln = ad.layer_norm(x, pt[f"enc{l}_ln1_g"], pt[f"enc{l}_ln1_b"], LN_EPS)
        x = ad.add(
            x,
            _attn_graph(
                ln, ln,
                pt[f"enc{l}_wq"], pt[f"enc{l}_bq"],
                pt[f"enc{l}_wk"], pt[f"enc{l}_bk"],
                pt[f"enc{l}_wv"], pt[f"enc{l}_bv"],
                pt[f"enc{l}_wo"], pt[f"enc{l}_bo"],
                enc_mask, cfg.heads,
            ),
        )
        ln2 = ad.layer_norm(x, pt[f"enc{l}_ln2_g"], pt[f"enc{l}_ln2_b"], LN_EPS)
        x = ad.add(
            x,
            _ffn_graph(
                ln2,
                pt[f"enc{l}_ff1_w"], pt[f"enc{l}_ff1_b"],
                pt[f"enc{l}_ff2_w"], pt[f"enc{l}_ff2_b"],
            ),
        )
    enc_out = ad.layer_norm(x, pt["enc_lnf_g"], pt["enc_lnf_b"], LN_EPS)

    dec_causal = np.where(
        np.arange(td)[None, :] > np.arange(td)[:, None], -1e9, 0.0
    )[None, None]
    cross_mask = (1.0 - key_ok) * -1e9  # (B,1,1,Tf)

    y = ad.scale(ad.embedding(pt["tok_emb"], dec_in), math.sqrt(d))
    y = ad.add(y, Tensor(sinusoid_table(td, d)[None]))
    for l in range(cfg.dec_layers):
        ln = ad.layer_norm(y, pt[f"dec{l}_ln1_g"], pt[f"dec{l}_ln1_b"], LN_EPS)
        y = ad.add(
            y,
            _attn_graph(
                ln, ln,
                pt[f"dec{l}_sq"], pt[f"dec{l}_bsq"],
                pt[f"dec{l}_sk"], pt[f"dec{l}_bsk"],
                pt[f"dec{l}_sv"], pt[f"dec{l}_bsv"],
                pt[f"dec{l}_so"], pt[f"dec{l}_bso"],
                dec_causal, cfg.heads,
            ),
        )
        ln2 = ad.layer_norm(y, pt[f"dec{l}_ln2_g"], pt[f"dec{l}_ln2_b"], LN_EPS)
        y = ad.add(
            y,
            _attn_graph(
                ln2, enc_out,
                pt[f"dec{l}_cq"], pt[f"dec{l}_bcq"],
                pt[f"dec{l}_ck"], pt[f"dec{l}_bck"],
                pt[f"dec{l}_cv"], pt[f"dec{l}_bcv"],
                pt[f"dec{l}_co"], pt[f"dec{l}_bco"],
                cross_mask, cfg.heads,
            ),
        )
        ln3 = ad.layer_norm(y, pt[f"dec{l}_ln3_g"], pt[f"dec{l}_ln3_b"], LN_EPS)
        y = ad.add(
            y,
            _ffn_graph(
                ln3,
                pt[f"dec{l}_ff1_w"], pt[f"dec{l}_ff1_b"],
                pt[f"dec{l}_ff2_w"], pt[f"dec{l}_ff2_b"],
            ),
        )
    out = ad.layer_norm(y, pt["dec_lnf_g"], pt["dec_lnf_b"], LN_EPS)
    logits = ad.add(ad.matmul(out, pt["out_w"]), pt["out_b"])
    return ad.log_softmax(logits)


def training_loss(
    cfg: TransformerConfig,
    pt: dict[str, Tensor],
    batch: dict[str, np.ndarray],
    label_smoothing: float,
) -> Tensor:
    """Label-smoothed cross entropy per real target token."""
    logp = training_logits(
        cfg, pt, batch["frames"], batch["frame_mask"], batch["dec_in"]
    )
    labels = batch["labels"]
    label_mask = batch["label_mask"]
    b_sz, td = labels.shape
    v = cfg.vocab_size
    w = np.full((b_sz, td, v), label_smoothing / v)
    bi, ti = np.indices((b_sz, td))
    w[bi, ti, labels] += 1.0 - label_smoothing
    w *= label_mask[:, :, None]
    n_tokens = max(label_mask.sum(), 1.0)
    return ad.scale(ad.sum_all(ad.mul(logp, Tensor(w))), -1.0 / n_tokens)
