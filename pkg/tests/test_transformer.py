import numpy as np
import pytest

from streamdec.core import ContractViolation, Vocab
from streamdec.model import (
    BIDIRECTIONAL,
    UNIDIRECTIONAL,
    load_model,
    save_model,
)
from streamdec.transformer import (
    DecState,
    TinyTransformer,
    TransformerConfig,
    leaf_tensors,
    sinusoid_table,
    training_logits,
    training_loss,
)


@pytest.fixture()
def bidi_model(micro_vocab):
    cfg = TransformerConfig(
        frame_dim=4, vocab_size=len(micro_vocab), d_model=8, heads=2,
        ff_dim=12, enc_layers=1, dec_layers=1, mode=BIDIRECTIONAL, init_seed=5,
    )
    return TinyTransformer(cfg, micro_vocab)


class TestConfig:
    def test_head_divisibility(self, micro_vocab):
        with pytest.raises(Exception):
            TransformerConfig(
                frame_dim=4, vocab_size=len(micro_vocab), d_model=10, heads=4
            )

    def test_param_init_deterministic(self, micro_cfg, micro_vocab):
        a = TinyTransformer(micro_cfg, micro_vocab)
        b = TinyTransformer(micro_cfg, micro_vocab)
        assert sorted(a.params) == sorted(b.params)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])


class TestEncoderCausality:
    def test_unidirectional_prefix_rows_match_full(self, micro_model, rng):
        for _ in range(10):
            t = int(rng.integers(8, 40))
            cut = int(rng.integers(1, t))
            frames = rng.normal(size=(t, 4))
            full = micro_model.encode(frames, None)
            part = micro_model.encode(frames[:cut], None)
            np.testing.assert_allclose(
                full.states[:cut], part.states, atol=1e-6
            )

    def test_unidirectional_insensitive_to_future_frames(self, micro_model, rng):
        frames = rng.normal(size=(20, 4))
        tampered = frames.copy()
        tampered[12:] = 99.0
        a = micro_model.encode(frames, None)
        b = micro_model.encode(tampered, None)
        np.testing.assert_allclose(a.states[:12], b.states[:12], atol=1e-12)

    def test_incremental_equals_one_shot(self, micro_model, rng):
        frames = rng.normal(size=(33, 4))
        one_shot = micro_model.encode(frames, None, utt_id="u")
        grown = micro_model.encode(frames[:10], None, utt_id="u")
        grown = micro_model.encode(frames[:21], grown)
        grown = micro_model.encode(frames, grown)
        np.testing.assert_allclose(one_shot.states, grown.states, atol=1e-9)
        assert grown.frames_covered == 33

    def test_bidirectional_prefix_differs(self, bidi_model, rng):
        frames = rng.normal(size=(30, 4))
        full = bidi_model.encode(frames, None)
        part = bidi_model.encode(frames[:15], None)
        assert np.max(np.abs(full.states[:15] - part.states)) > 1e-4

    def test_bidirectional_prior_not_reused(self, bidi_model, rng):
        # a bidirectional grow re-encodes everything; rows must equal one-shot
        frames = rng.normal(size=(24, 4))
        part = bidi_model.encode(frames[:10], None, utt_id="u")
        grown = bidi_model.encode(frames, part)
        one_shot = bidi_model.encode(frames, None, utt_id="u")
        np.testing.assert_allclose(grown.states, one_shot.states, atol=1e-9)

    def test_frame_dim_mismatch_rejected(self, micro_model, rng):
        with pytest.raises(ContractViolation):
            micro_model.encode(rng.normal(size=(5, 7)), None)

    def test_empty_frames_empty_states(self, micro_model):
        enc = micro_model.encode(np.zeros((0, 4)), None)
        assert enc.frames_covered == 0
        assert enc.states.shape[0] == 0


class TestDecoding:
    def test_distribution_normalized(self, micro_model, rng):
        enc = micro_model.encode(rng.normal(size=(12, 4)), None)
        state, lps = micro_model.dec_init(enc)
        assert np.log(np.sum(np.exp(lps))) == pytest.approx(0.0, abs=1e-6)
        state, lps = micro_model.dec_advance(state, 3, enc)
        assert np.log(np.sum(np.exp(lps))) == pytest.approx(0.0, abs=1e-6)

    def test_state_covers_tracks_encoder_growth(self, micro_model, rng):
        frames = rng.normal(size=(20, 4))
        enc1 = micro_model.encode(frames[:10], None, utt_id="u")
        state, _ = micro_model.dec_init(enc1)
        assert micro_model.state_covers(state, enc1)
        enc2 = micro_model.encode(frames, enc1)
        # more audio means different cross-attention: the cached state is stale
        assert not micro_model.state_covers(state, enc2)

    def test_stale_state_logits_rejected(self, micro_model, rng):
        frames = rng.normal(size=(20, 4))
        enc1 = micro_model.encode(frames[:10], None, utt_id="u")
        state, _ = micro_model.dec_init(enc1)
        enc2 = micro_model.encode(frames, enc1)
        with pytest.raises(ContractViolation):
            micro_model.dec_logits(state, enc2)

    def test_rebuilt_walk_is_identical(self, micro_model, rng):
        """Forcing the same prefix after encoder growth gives exactly the
        numbers a fresh walk gives: the cache is an optimization only."""
        frames = rng.normal(size=(24, 4))
        enc = micro_model.encode(frames, None, utt_id="u")
        prefix = (3, 4, 5)
        state_a, lps_a = micro_model.dec_init(enc)
        for t in prefix:
            state_a, lps_a = micro_model.dec_advance(state_a, t, enc)
        state_b, lps_b = micro_model.dec_init(enc)
        for t in prefix:
            state_b, lps_b = micro_model.dec_advance(state_b, t, enc)
        np.testing.assert_array_equal(lps_a, lps_b)

    def test_trim_state_unsupported(self, micro_model, rng):
        enc = micro_model.encode(rng.normal(size=(10, 4)), None)
        state, _ = micro_model.dec_init(enc)
        assert micro_model.trim_state(state, 0) is None

    def test_foreign_encoder_rejected(self, micro_cfg, micro_vocab, rng):
        m1 = TinyTransformer(micro_cfg, micro_vocab)
        m2 = TinyTransformer(micro_cfg, micro_vocab)
        enc = m1.encode(rng.normal(size=(10, 4)), None)
        with pytest.raises(ContractViolation):
            m2.dec_init(enc)

    def test_bad_token_id_rejected(self, micro_model, rng):
        enc = micro_model.encode(rng.normal(size=(10, 4)), None)
        state, _ = micro_model.dec_init(enc)
        with pytest.raises(ContractViolation):
            micro_model.dec_advance(state, 999, enc)


class TestTrainingGraphParity:
    def test_graph_matches_inference_walk(self, micro_model, micro_cfg, micro_vocab, rng):
        frames = rng.normal(size=(18, 4))
        ids = (3, 5, 4)
        enc = micro_model.encode(frames, None)
        state, lps = micro_model.dec_init(enc)
        walk = [lps]
        for t in ids:
            state, lps = micro_model.dec_advance(state, t, enc)
            walk.append(lps)
        pt = leaf_tensors(micro_model.params)
        dec_in = np.array([[micro_vocab.bos_id, *ids]])
        graph = training_logits(
            micro_cfg, pt, frames[None], np.ones((1, 18)), dec_in
        ).data[0]
        for j in range(len(ids) + 1):
            np.testing.assert_allclose(walk[j], graph[j], atol=1e-9)

    def test_padding_does_not_change_real_rows(self, micro_model, micro_cfg, rng):
        """Frame padding beyond the mask must not touch real positions'
        log-probs."""
        frames = rng.normal(size=(12, 4))
        pt = leaf_tensors(micro_model.params)
        dec_in = np.array([[1, 3, 4]])
        plain = training_logits(
            micro_cfg, pt, frames[None], np.ones((1, 12)), dec_in
        ).data
        padded_frames = np.concatenate([frames, np.full((5, 4), 7.7)])[None]
        mask = np.concatenate([np.ones(12), np.zeros(5)])[None]
        padded = training_logits(micro_cfg, pt, padded_frames, mask, dec_in).data
        np.testing.assert_allclose(plain, padded, atol=1e-9)

    def test_loss_scalar_and_finite(self, micro_model, micro_cfg, rng):
        pt = leaf_tensors(micro_model.params)
        batch = {
            "frames": rng.normal(size=(2, 10, 4)),
            "frame_mask": np.ones((2, 10)),
            "dec_in": np.array([[1, 3, 4], [1, 5, 0]]),
            "labels": np.array([[3, 4, 2], [5, 2, 0]]),
            "label_mask": np.array([[1.0, 1, 1], [1, 1, 0]]),
        }
        loss = training_loss(micro_cfg, pt, batch, 0.1)
        assert loss.data.shape == ()
        assert np.isfinite(loss.data)
        loss.backward()
        assert all(
            t.grad is None or np.all(np.isfinite(t.grad)) for t in pt.values()
        )


class TestAttentionDump:
    def test_grid_names_and_shapes(self, micro_model, rng):
        frames = rng.normal(size=(9, 4))
        enc = micro_model.encode(frames, None)
        grids = micro_model.dump_attention(enc, (3, 4))
        assert "encoder_self.layer0.head0" in grids
        assert "decoder_self.layer0.head1" in grids
        assert "cross.layer0.head0" in grids
        assert grids["encoder_self.layer0.head0"].shape == (9, 9)
        # decoder rows: bos + 2 forced tokens
        assert grids["decoder_self.layer0.head0"].shape == (3, 3)
        assert grids["cross.layer0.head0"].shape == (3, 9)

    def test_rows_are_distributions(self, micro_model, rng):
        enc = micro_model.encode(rng.normal(size=(9, 4)), None)
        grids = micro_model.dump_attention(enc, (3,))
        for name, g in grids.items():
            np.testing.assert_allclose(
                g.sum(axis=-1), np.ones(g.shape[0]), atol=1e-9, err_msg=name
            )

    def test_encoder_self_attention_is_causal(self, micro_model, rng):
        enc = micro_model.encode(rng.normal(size=(7, 4)), None)
        g = micro_model.dump_attention(enc, ())["encoder_self.layer0.head0"]
        upper = np.triu(g, k=1)
        np.testing.assert_allclose(upper, np.zeros_like(upper), atol=1e-12)


class TestCloneAndSerialization:
    def test_clone_is_independent(self, micro_model):
        c = micro_model.clone()
        k = sorted(c.params)[0]
        c.params[k] += 1.0
        assert np.max(np.abs(c.params[k] - micro_model.params[k])) >= 1.0

    def test_save_load_round_trip(self, micro_model, tmp_path, rng):
        path = str(tmp_path / "m.bin")
        save_model(micro_model, path)
        m2 = load_model(path)
        assert isinstance(m2, TinyTransformer)
        assert m2.cfg == micro_model.cfg
        assert m2.vocab.tokens == micro_model.vocab.tokens
        for k in micro_model.params:
            np.testing.assert_array_equal(m2.params[k], micro_model.params[k])
        frames = rng.normal(size=(11, 4))
        a = micro_model.encode(frames, None)
        b = m2.encode(frames, None)
        np.testing.assert_array_equal(a.states, b.states)


class TestSinusoids:
    def test_table_shape_and_range(self):
        t = sinusoid_table(12, 8)
        assert t.shape == (12, 8)
        assert np.max(np.abs(t)) <= 1.0

    def test_rows_extend_consistently(self):
        a = sinusoid_table(5, 8)
        b = sinusoid_table(9, 8)
        np.testing.assert_allclose(a, b[:5], atol=1e-12)
