"""Converts raw news manifests (id, text, image path, label) into the F2EMB1
binary embedding format using frozen pretrained encoders: DistilBERT with
attention-mask-weighted mean pooling for text, ResNet-50 without its
classifier (global-average-pooled, 2048-d) for images."""

__version__ = "0.1.0"
