"""Modality projection, attention gating, and the bounded head.

Image and text embeddings are projected to a shared 512-d space and stacked
along a modality axis (image first, text second). A small shared MLP scores
each modality; softmax over the two scores gives convex attention weights,
and the weighted sum is the fused representation. Rows without an image are
hard-masked: the image logit is forced to -1e9 and the weights are then
snapped to exactly (0, 1), which also zeroes every gradient flowing into the
image path for those rows. A trainable affine map plus tanh compresses the
fused vector to the n bounded values the fuzzy head consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheError, ConfigError, NumericError, ShapeError

PROJ_DIM = 512
MASK_LOGIT = -1e9


@dataclass
class FusionParams:
    img_proj_w: np.ndarray  # (image_dim, PROJ_DIM)
    img_proj_b: np.ndarray  # (PROJ_DIM,)
    txt_proj_w: np.ndarray  # (text_dim, PROJ_DIM)
    txt_proj_b: np.ndarray  # (PROJ_DIM,)
    attn_w1: np.ndarray  # (PROJ_DIM, hidden_a), shared across modalities
    attn_b1: np.ndarray  # (hidden_a,)
    attn_w2: np.ndarray  # (hidden_a,)
    attn_b2: np.ndarray  # (1,)
    head_w: np.ndarray  # (PROJ_DIM, n)
    head_b: np.ndarray  # (n,)
    dropout_rate: float = 0.30  # applied to the text embedding in train mode

    @property
    def text_dim(self) -> int:
        return self.txt_proj_w.shape[0]

    @property
    def image_dim(self) -> int:
        return self.img_proj_w.shape[0]

    @property
    def hidden_a(self) -> int:
        return self.attn_w1.shape[1]

    @property
    def n_out(self) -> int:
        return self.head_w.shape[1]

    def param_count(self) -> int:
        return sum(
            a.size
            for a in (
                self.img_proj_w,
                self.img_proj_b,
                self.txt_proj_w,
                self.txt_proj_b,
                self.attn_w1,
                self.attn_b1,
                self.attn_w2,
                self.attn_b2,
                self.head_w,
                self.head_b,
            )
        )


@dataclass
class FusionCache:
    """Activations retained by fusion_forward for the exact backward pass."""

    text_in: np.ndarray  # (B, text_dim) post-dropout text embeddings
    image_in: np.ndarray  # (B, image_dim) with masked rows zeroed
    drop_mask: np.ndarray | None  # inverted-dropout scale mask, train mode only
    img_proj: np.ndarray  # (B, PROJ_DIM)
    txt_proj: np.ndarray  # (B, PROJ_DIM)
    attn_hidden: np.ndarray  # (B, 2, hidden_a) tanh activations
    attn_weights: np.ndarray  # (B, 2), masked rows exactly (0, 1)
    has_image: np.ndarray  # (B,) bool
    fused: np.ndarray  # (B, PROJ_DIM)
    head_out: np.ndarray  # (B, n) tanh output


def init_fusion(
    text_dim: int,
    image_dim: int,
    n: int,
    hidden_a: int = 128,
    seed: int = 0,
    dropout_rate: float = 0.30,
) -> FusionParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    if min(text_dim, image_dim, n, hidden_a) <= 0:
        raise ConfigError("all fusion dimensions must be positive")
    if not 0.0 <= dropout_rate < 1.0:
        raise ConfigError(f"dropout_rate must lie in [0,1), got {dropout_rate}")
    rng = np.random.default_rng(seed)

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return FusionParams(
        img_proj_w=uniform(image_dim, (image_dim, PROJ_DIM)),
        img_proj_b=np.zeros(PROJ_DIM),
        txt_proj_w=uniform(text_dim, (text_dim, PROJ_DIM)),
        txt_proj_b=np.zeros(PROJ_DIM),
        attn_w1=uniform(PROJ_DIM, (PROJ_DIM, hidden_a)),
        attn_b1=np.zeros(hidden_a),
        attn_w2=uniform(hidden_a, (hidden_a,)),
        attn_b2=np.zeros(1),
        head_w=uniform(PROJ_DIM, (PROJ_DIM, n)),
        head_b=np.zeros(n),
        dropout_rate=dropout_rate,
    )


def fusion_forward(
    params: FusionParams,
    text_batch: np.ndarray,
    image_batch: np.ndarray | None,
    has_image: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, FusionCache]:
    """Project, gate, fuse, and compress a batch.

    Returns (head output (B, n) in (-1, 1), attention weights (B, 2) with
    image at index 0 and text at index 1, cache for fusion_backward).
    image_batch may be None when no row has an image; masked rows of a given
    image_batch are ignored entirely.
    """
    text = np.asarray(text_batch, dtype=np.float64)
    mask = np.asarray(has_image, dtype=bool)
    if text.ndim != 2 or text.shape[1] != params.text_dim:
        raise ShapeError(f"text batch shape {text.shape} != (B, {params.text_dim})")
    B = text.shape[0]
    if mask.shape != (B,):
        raise ShapeError(f"has_image shape {mask.shape} != ({B},)")
    if image_batch is None:
        if mask.any():
            raise ShapeError("has_image set but image_batch is None")
        image = np.zeros((B, params.image_dim))
    else:
        image = np.asarray(image_batch, dtype=np.float64)
        if image.shape != (B, params.image_dim):
            raise ShapeError(f"image batch shape {image.shape} != ({B}, {params.image_dim})")
    if not np.isfinite(text).all():
        raise NumericError("non-finite text embeddings")
    if mask.any() and not np.isfinite(image[mask]).all():
        raise NumericError("non-finite image embeddings")

    drop_mask = None
    if train_mode and params.dropout_rate > 0.0:
        if rng is None:
            raise ConfigError("train-mode dropout needs an rng")
        keep = 1.0 - params.dropout_rate
        drop_mask = (rng.random(text.shape) < keep).astype(np.float64) / keep
        text = text * drop_mask

    image = np.where(mask[:, None], image, 0.0)  # masked rows carry no image signal at all

    img_proj = image @ params.img_proj_w + params.img_proj_b
    txt_proj = text @ params.txt_proj_w + params.txt_proj_b
    stacked = np.stack([img_proj, txt_proj], axis=1)  # (B, 2, PROJ_DIM)

    attn_hidden = np.tanh(stacked @ params.attn_w1 + params.attn_b1)  # (B, 2, hidden_a)
    logits = attn_hidden @ params.attn_w2 + params.attn_b2[0]  # (B, 2)
    logits[~mask, 0] = MASK_LOGIT
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    attn = expl / expl.sum(axis=1, keepdims=True)
    attn[~mask, 0] = 0.0  # snap masked rows to exact {0, 1}
    attn[~mask, 1] = 1.0

    fused = attn[:, 0:1] * img_proj + attn[:, 1:2] * txt_proj
    head_out = np.tanh(fused @ params.head_w + params.head_b)

    cache = FusionCache(
        text_in=text,
        image_in=image,
        drop_mask=drop_mask,
        img_proj=img_proj,
        txt_proj=txt_proj,
        attn_hidden=attn_hidden,
        attn_weights=attn,
        has_image=mask,
        fused=fused,
        head_out=head_out,
    )
    return head_out, attn, cache


@dataclass
class FusionGrads:
    img_proj_w: np.ndarray
    img_proj_b: np.ndarray
    txt_proj_w: np.ndarray
    txt_proj_b: np.ndarray
    attn_w1: np.ndarray
    attn_b1: np.ndarray
    attn_w2: np.ndarray
    attn_b2: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    text: np.ndarray  # gradient w.r.t. the (pre-dropout) text embeddings
    image: np.ndarray  # gradient w.r.t. the image embeddings


def fusion_backward(
    params: FusionParams, cache: FusionCache, grad_head_out: np.ndarray
) -> FusionGrads:
    """Exact gradients of the projection/attention/head composition.

    Masked rows have constant attention weights (0, 1), so no gradient passes
    through their softmax or into the image projection; text still learns.
    """
    g = np.asarray(grad_head_out, dtype=np.float64)
    B = cache.text_in.shape[0]
    if g.shape != cache.head_out.shape:
        raise CacheError(f"grad shape {g.shape} != head output shape {cache.head_out.shape}")
    if cache.txt_proj.shape != (B, PROJ_DIM) or cache.img_proj.shape != (B, PROJ_DIM):
        raise CacheError("cache projections have inconsistent shapes")
    if params.head_w.shape[1] != cache.head_out.shape[1]:
        raise CacheError("cache does not match these parameters")

    d_head_pre = g * (1.0 - cache.head_out**2)  # tanh'
    d_head_w = cache.fused.T @ d_head_pre
    d_head_b = d_head_pre.sum(axis=0)
    d_fused = d_head_pre @ params.head_w.T

    attn = cache.attn_weights
    d_attn = np.stack(
        [(d_fused * cache.img_proj).sum(axis=1), (d_fused * cache.txt_proj).sum(axis=1)], axis=1
    )
    d_img_proj = attn[:, 0:1] * d_fused
    d_txt_proj = attn[:, 1:2] * d_fused

    # softmax backward; masked rows have frozen weights -> zero logit gradient
    d_logits = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
    d_logits[~cache.has_image] = 0.0

    d_hidden = d_logits[:, :, None] * params.attn_w2[None, None, :]
    d_hidden_pre = d_hidden * (1.0 - cache.attn_hidden**2)
    d_attn_w2 = (cache.attn_hidden * d_logits[:, :, None]).sum(axis=(0, 1))
    d_attn_b2 = np.array([d_logits.sum()])
    stacked = np.stack([cache.img_proj, cache.txt_proj], axis=1)
    d_attn_w1 = np.einsum("bmp,bmh->ph", stacked, d_hidden_pre)
    d_attn_b1 = d_hidden_pre.sum(axis=(0, 1))
    d_stacked = d_hidden_pre @ params.attn_w1.T

    d_img_proj = d_img_proj + d_stacked[:, 0, :]
    d_txt_proj = d_txt_proj + d_stacked[:, 1, :]

    d_img_proj_w = cache.image_in.T @ d_img_proj
    d_img_proj_b = d_img_proj.sum(axis=0)
    d_txt_proj_w = cache.text_in.T @ d_txt_proj
    d_txt_proj_b = d_txt_proj.sum(axis=0)

    d_image = (d_img_proj @ params.img_proj_w.T) * cache.has_image[:, None]
    d_text = d_txt_proj @ params.txt_proj_w.T
    if cache.drop_mask is not None:
        d_text = d_text * cache.drop_mask

    return FusionGrads(
        img_proj_w=d_img_proj_w,
        img_proj_b=d_img_proj_b,
        txt_proj_w=d_txt_proj_w,
        txt_proj_b=d_txt_proj_b,
        attn_w1=d_attn_w1,
        attn_b1=d_attn_b1,
        attn_w2=d_attn_w2,
        attn_b2=d_attn_b2,
        head_w=d_head_w,
        head_b=d_head_b,
        text=d_text,
        image=d_image,
    )
