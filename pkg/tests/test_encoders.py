import numpy as np
import pytest

from simmc_mm.encoders import (
    SPECIALS,
    CausalDecoder,
    EncoderConfig,
    ImageEncoder,
    RasterImage,
    TextEncoder,
    TokenSequence,
    Vocabulary,
    encode_image,
    encode_text,
    lm_forward,
    tokenize,
)
from simmc_mm.errors import ConfigError, LengthError, ShapeError
from simmc_mm.numeric import Tensor
from simmc_mm.numeric.gradcheck import check_gradients

VOCAB = Vocabulary(["red", "top", "blue", "jacket", "hanging", "plain"])


def tiny(**kw):
    base = dict(layers=1, heads=2, d_model=8, d_ff=16, max_len=16, vocab_size=len(VOCAB))
    base.update(kw)
    return EncoderConfig(**base)


# -- vocabulary / tokenize ---------------------------------------------------------
def test_tokenize_examples():
    assert tokenize("", VOCAB) == []
    assert tokenize("red top", VOCAB) == tokenize("red top", VOCAB)
    assert tokenize("zebra", VOCAB) == [VOCAB.unk_id]


def test_specials_distinct_and_stable():
    ids = [VOCAB.id(s) for s in SPECIALS]
    assert len(set(ids)) == len(SPECIALS)
    restored = Vocabulary.from_table(VOCAB.to_table())
    assert restored == VOCAB
    assert [restored.id(s) for s in SPECIALS] == ids


def test_vocab_table_sorted():
    lines = VOCAB.to_table().splitlines()
    assert lines == sorted(lines, key=lambda line: line.rsplit("\t", 1)[0])


def test_config_rejects_bad_heads():
    with pytest.raises(ConfigError):
        EncoderConfig(d_model=10, heads=4)


# -- text encoder --------------------------------------------------------------------
def _seq(words):
    return TokenSequence([VOCAB.cls_id] + tokenize(words, VOCAB))


def test_encode_text_shape_and_determinism():
    enc = TextEncoder(tiny(), rng=np.random.default_rng(0))
    seq = _seq("red top hanging")
    a = encode_text(seq, enc)
    b = encode_text(seq, enc)
    assert a.hidden.shape == (len(seq), 8)
    np.testing.assert_array_equal(a.hidden, b.hidden)
    np.testing.assert_array_equal(a.cls, a.hidden[0])


def test_padding_leaves_cls_unchanged():
    enc = TextEncoder(tiny(layers=2), rng=np.random.default_rng(1))
    seq = _seq("blue jacket plain")
    plain = encode_text(seq, enc).cls
    padded = encode_text(seq.padded(12, VOCAB.pad_id), enc).cls
    assert np.max(np.abs(plain - padded)) <= 1e-9


def test_system_vectors_follow_marks():
    enc = TextEncoder(tiny(), rng=np.random.default_rng(2))
    ids = [VOCAB.cls_id, VOCAB.user_id, VOCAB.id("red"), VOCAB.system_id, VOCAB.id("top"),
           VOCAB.user_id, VOCAB.id("blue"), VOCAB.system_id, VOCAB.id("jacket")]
    ctx = encode_text(TokenSequence(ids, [3, 7], [0, 1]), enc)
    assert len(ctx.system) == 2
    np.testing.assert_array_equal(ctx.system[1], ctx.hidden[7])


def test_text_overlength_rejected():
    enc = TextEncoder(tiny(max_len=4), rng=np.random.default_rng(0))
    with pytest.raises(LengthError):
        encode_text(_seq("red top red top"), enc)


# -- image encoder ---------------------------------------------------------------------
def test_image_shape_example():
    enc = ImageEncoder(tiny(image_size=16, patch_size=8), rng=np.random.default_rng(0))
    out = encode_image(RasterImage(np.random.default_rng(1).random((16, 16, 3))), enc)
    assert out.patches.shape == (5, 8)
    np.testing.assert_array_equal(out.pooled, out.patches[0])


def test_image_determinism_and_sensitivity():
    enc = ImageEncoder(tiny(image_size=16, patch_size=8), rng=np.random.default_rng(3))
    img = RasterImage(np.random.default_rng(4).random((16, 16, 3)))
    np.testing.assert_array_equal(encode_image(img, enc).pooled, encode_image(img, enc).pooled)
    zero = encode_image(RasterImage(np.zeros((16, 16, 3))), enc).pooled
    one = encode_image(RasterImage(np.ones((16, 16, 3))), enc).pooled
    assert np.linalg.norm(zero - one) > 0


def test_image_non_divisible_rejected():
    enc = ImageEncoder(tiny(image_size=16, patch_size=8), rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        enc.forward(np.zeros((1, 12, 16, 3)))
    with pytest.raises(ConfigError):
        ImageEncoder(tiny(image_size=12, patch_size=8))


# -- decoder -----------------------------------------------------------------------------
def test_lm_causality_exact():
    dec = CausalDecoder(tiny(layers=2), rng=np.random.default_rng(5))
    base = _seq("red top blue jacket plain")
    h = lm_forward(base, dec)
    assert h.shape == (len(base), 8)
    for k in range(len(base) - 1):
        edited = list(base.ids)
        edited[k + 1] = VOCAB.id("hanging") if edited[k + 1] != VOCAB.id("hanging") else VOCAB.id("red")
        h2 = lm_forward(TokenSequence(edited), dec)
        np.testing.assert_array_equal(h2[: k + 1], h[: k + 1])


def test_lm_prefix_equivalence():
    dec = CausalDecoder(tiny(layers=2), rng=np.random.default_rng(6))
    seq = _seq("red top blue jacket plain hanging")
    full = lm_forward(seq, dec)
    for k in range(1, len(seq) + 1):
        prefix = lm_forward(TokenSequence(seq.ids[:k]), dec)
        assert np.max(np.abs(prefix - full[:k])) <= 1e-9


def test_lm_overlength_rejected():
    dec = CausalDecoder(tiny(max_len=3), rng=np.random.default_rng(0))
    with pytest.raises(LengthError):
        lm_forward(_seq("red top blue"), dec)


# -- shape contracts across configs ---------------------------------------------------------
@pytest.mark.parametrize("layers", [1, 2])
@pytest.mark.parametrize("d", [32, 64])
def test_shape_contracts(layers, d):
    cfg = EncoderConfig(layers=layers, heads=4, d_model=d, d_ff=2 * d, max_len=16,
                        vocab_size=len(VOCAB), image_size=16, patch_size=8)
    rng = np.random.default_rng(0)
    seq = _seq("red top")
    assert encode_text(seq, TextEncoder(cfg, rng=rng)).hidden.shape == (3, d)
    assert lm_forward(seq, CausalDecoder(cfg, rng=rng)).shape == (3, d)
    img = RasterImage(np.zeros((16, 16, 3)))
    assert encode_image(img, ImageEncoder(cfg, rng=rng)).patches.shape == (5, d)


def test_sinusoidal_positions_option():
    enc = TextEncoder(tiny(positional="sinusoidal"), rng=np.random.default_rng(0))
    assert "pos" not in enc.params
    assert encode_text(_seq("red top"), enc).hidden.shape == (3, 8)


# -- end-to-end gradient checks ----------------------------------------------------------------
def _check_all(fn, params, tol):
    errs = check_gradients(fn, [params[n] for n in params], max_entries=4,
                           rng=np.random.default_rng(0))
    assert max(errs.values()) <= tol, errs


def test_text_encoder_gradcheck_two_tokens():
    enc = TextEncoder(tiny(), rng=np.random.default_rng(7))
    ids = np.array([[VOCAB.cls_id, VOCAB.id("red")]])
    w = np.random.default_rng(8).normal(size=(1, 2, 8))
    _check_all(lambda: (enc.forward(ids) * w).sum(), enc.params, 1e-3)


def test_decoder_gradcheck_two_tokens():
    dec = CausalDecoder(tiny(), rng=np.random.default_rng(9))
    ids = np.array([[VOCAB.cls_id, VOCAB.id("top")]])
    w = np.random.default_rng(10).normal(size=(1, 2, 8))
    _check_all(lambda: (dec.forward(ids) * w).sum(), dec.params, 1e-3)


def test_image_encoder_gradcheck_two_patches():
    enc = ImageEncoder(tiny(image_size=4, image_width=8, patch_size=4), rng=np.random.default_rng(11))
    img = np.random.default_rng(12).random((1, 4, 8, 3))
    w = np.random.default_rng(13).normal(size=(1, 3, 8))
    _check_all(lambda: (enc.forward(img) * w).sum(), enc.params, 1e-3)
