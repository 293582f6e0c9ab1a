"""Tiny from-scratch text, image and causal transformer encoders."""

from simmc_mm.encoders.transformer import (
    CausalDecoder,
    EncodedContext,
    EncodedImage,
    EncoderConfig,
    ImageEncoder,
    RasterImage,
    TextEncoder,
    encode_image,
    encode_text,
    lm_forward,
)
from simmc_mm.encoders.vocab import PAD_ID, SPECIALS, TokenSequence, Vocabulary, collate, tokenize

__all__ = [
    "PAD_ID", "SPECIALS", "CausalDecoder", "EncodedContext", "EncodedImage", "EncoderConfig",
    "ImageEncoder", "RasterImage", "TextEncoder", "TokenSequence", "Vocabulary",
    "collate", "encode_image", "encode_text", "lm_forward", "tokenize",
]
