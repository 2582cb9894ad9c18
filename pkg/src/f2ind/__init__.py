"""Attention-fused multimodal classifier with a trainable fuzzy-rule head.

Text and image embeddings are projected to a shared 512-d space, combined by
a learned modality-attention gate (with hard masking for absent images), and
compressed to a small bounded vector that drives a Takagi-Sugeno fuzzy rule
system ending in a sigmoid fake-news probability. Everything is plain numpy
with hand-derived gradients, verified against finite differences.
"""

__version__ = "0.1.0"
