"""Manifest -> embeddings pipeline with batched inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .encoders import IMAGE_DIM, TEXT_DIM, ImageEncoder, TextEncoder
from .manifest import ManifestRow
from .writer import EmbeddedSample, write_f2emb

log = logging.getLogger("f2ind_extract")


@dataclass
class ExtractionSummary:
    n_samples: int
    n_true: int
    n_fake: int
    n_missing_image: int
    n_upscaled_images: int


def build_dataset(
    rows: list[ManifestRow],
    out_path,
    batch_size: int = 16,
    text_encoder: TextEncoder | None = None,
    image_encoder: ImageEncoder | None = None,
    weights: str = "pretrained",
    seed: int = 0,
) -> ExtractionSummary:
    """Encode every manifest row and emit one F2EMB1 file.

    Rows whose image path is empty or unreadable keep has_image=false; the
    sample itself is retained so the masking path downstream sees it.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    text_encoder = text_encoder or TextEncoder(weights=weights, seed=seed)
    image_encoder = image_encoder or ImageEncoder(weights=weights, seed=seed)

    samples: list[EmbeddedSample] = []
    for start in range(0, len(rows), batch_size):
        chunk = rows[start : start + batch_size]
        text_vecs = text_encoder.encode([r.text for r in chunk])

        tensors = []
        tensor_owner = []
        image_vecs = {}
        for j, row in enumerate(chunk):
            if not row.image_path:
                continue
            tensor = image_encoder.load_tensor(row.image_path)
            if tensor is not None:
                tensors.append(tensor)
                tensor_owner.append(j)
        if tensors:
            encoded = image_encoder.encode(tensors)
            for pos, j in enumerate(tensor_owner):
                image_vecs[j] = encoded[pos]

        for j, row in enumerate(chunk):
            samples.append(
                EmbeddedSample(
                    sample_id=row.sample_id,
                    label=row.label,
                    text_emb=text_vecs[j],
                    image_emb=image_vecs.get(j),
                )
            )

    write_f2emb(samples, TEXT_DIM, IMAGE_DIM, out_path)
    n_fake = sum(1 for s in samples if s.label == 1)
    n_missing = sum(1 for s in samples if s.image_emb is None)
    summary = ExtractionSummary(
        n_samples=len(samples),
        n_true=len(samples) - n_fake,
        n_fake=n_fake,
        n_missing_image=n_missing,
        n_upscaled_images=image_encoder.upscaled_count,
    )
    log.info(
        "extracted %d samples (%d fake, %d without image, %d upscaled) -> %s",
        summary.n_samples, summary.n_fake, summary.n_missing_image, summary.n_upscaled_images, out_path,
    )
    return summary
