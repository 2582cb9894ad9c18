"""Frozen text and image encoders.

Text: DistilBERT; the tokenizer wraps each input as [CLS] tokens [SEP], and
the sentence vector is the mean of the final hidden states weighted by the
attention mask (padding contributes nothing). Images: ResNet-50 with the
classification layer removed; inputs are resized to 224x224 (bilinear) and
normalized with the ImageNet statistics, output is the 2048-d global-average
pool.

Weights come from the published checkpoints by default. In sandboxes without
model-hub access, ``weights="random"`` builds the same architectures with
seeded random parameters and a self-contained character-level WordPiece
vocabulary; shapes, masking, and determinism are identical, only the feature
quality differs.
"""

from __future__ import annotations

import logging
import string
import tempfile
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger("f2ind_extract")

TEXT_DIM = 768
IMAGE_DIM = 2048
IMAGE_SIZE = 224
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

DEFAULT_TEXT_MODEL = "distilbert-base-uncased"


def _char_vocab() -> list[str]:
    """Deterministic WordPiece vocabulary covering printable ASCII, so any
    text tokenizes without unknowns when running with random weights."""
    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    chars = list(string.ascii_lowercase + string.digits + string.punctuation)
    return specials + chars + [f"##{c}" for c in chars]


class TextEncoder:
    """Mean-pooled DistilBERT sentence embeddings, inference mode only."""

    def __init__(self, weights: str = "pretrained", model_name: str = DEFAULT_TEXT_MODEL,
                 seed: int = 0, max_length: int = 512):
        from transformers import AutoTokenizer, DistilBertConfig, DistilBertModel

        self.max_length = max_length
        if weights == "pretrained":
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = DistilBertModel.from_pretrained(model_name)
        elif weights == "random":
            from transformers import DistilBertTokenizer

            vocab = _char_vocab()
            with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as fh:
                fh.write("\n".join(vocab))
                vocab_file = fh.name
            self.tokenizer = DistilBertTokenizer(vocab_file=vocab_file, do_lower_case=True)
            torch.manual_seed(seed)
            self.model = DistilBertModel(DistilBertConfig(vocab_size=len(vocab)))
            log.warning("text encoder uses seeded random weights (seed=%d); embeddings are "
                        "shape- and protocol-correct but not semantically pretrained", seed)
        else:
            raise ValueError(f"unknown weights mode {weights!r}")
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def encode(self, texts: list[str]) -> np.ndarray:
        """(B, 768) float32 mask-weighted mean of the final hidden states."""
        enc = self.tokenizer(
            texts,
            return_tensors="pt",
            padding=True,  # dynamic: longest sequence in the batch
            truncation=True,
            max_length=self.max_length,
        )
        hidden = self.model(input_ids=enc["input_ids"], attention_mask=enc["attention_mask"]).last_hidden_state
        mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
        pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1)
        return pooled.numpy().astype(np.float32)


class ImageEncoder:
    """ResNet-50 backbone features: resize, ImageNet-normalize, pool to 2048."""

    def __init__(self, weights: str = "pretrained", seed: int = 0):
        from torchvision.models import ResNet50_Weights, resnet50

        if weights == "pretrained":
            backbone = resnet50(weights=ResNet50_Weights.IMAGENET1K_V1)
        elif weights == "random":
            torch.manual_seed(seed + 1)
            backbone = resnet50(weights=None)
            log.warning("image encoder uses seeded random weights (seed=%d)", seed + 1)
        else:
            raise ValueError(f"unknown weights mode {weights!r}")
        backbone.fc = torch.nn.Identity()  # keep the global-average-pooled 2048-d output
        backbone.eval()
        for p in backbone.parameters():
            p.requires_grad_(False)
        self.model = backbone
        self.mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
        self.std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
        self.upscaled_count = 0

    def load_tensor(self, path) -> torch.Tensor | None:
        """Decode, resize, and normalize one image; None when unreadable."""
        try:
            with Image.open(path) as img:
                if img.width < IMAGE_SIZE or img.height < IMAGE_SIZE:
                    self.upscaled_count += 1
                rgb = img.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        except (OSError, ValueError) as exc:
            log.warning("image %s unreadable (%s); sample kept without image", path, exc)
            return None
        arr = torch.from_numpy(np.asarray(rgb, dtype=np.float32) / 255.0).permute(2, 0, 1)
        return (arr - self.mean) / self.std

    @torch.no_grad()
    def encode(self, tensors: list[torch.Tensor]) -> np.ndarray:
        """(B, 2048) float32 pooled features for pre-processed image tensors."""
        batch = torch.stack(tensors)
        return self.model(batch).numpy().astype(np.float32)
