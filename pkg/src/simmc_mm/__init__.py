"""Multimodal dialogue pipeline on a synthetic SIMMC 2.0-shaped corpus.

Subpackages: ``numeric`` (autograd, AdamW), ``encoders`` (tiny text, image
and causal transformers), ``corpus`` (data model, generator, input builders),
task modules ``pretrain``, ``disambiguation``, ``coref``, ``generation``,
``metrics``, and ``harness`` (CLI, checkpoints, end-to-end pipeline).
"""

__version__ = "0.1.0"
