"""Composite objective: weighted binary cross-entropy + Huber + focal losses.

All three operate on predicted probabilities (the classifier output is already
squashed), averaged over the batch, and return the loss together with its
gradient w.r.t. each probability. Probabilities are clamped to
[1e-7, 1 - 1e-7] before any logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

PROB_EPS = 1e-7


@dataclass
class LossConfig:
    w_bce: float = 1.0
    w_huber: float = 0.5
    w_focal: float = 1.0
    huber_delta: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    huber_minority_only: bool = False  # restrict the Huber term to fake-class rows

    def validate(self) -> None:
        if min(self.w_bce, self.w_huber, self.w_focal) < 0.0:
            raise ConfigError("loss weights must be non-negative")
        if self.w_bce == self.w_huber == self.w_focal == 0.0:
            raise ConfigError("at least one loss weight must be positive")
        if self.huber_delta <= 0.0:
            raise ConfigError(f"huber_delta must be positive, got {self.huber_delta}")
        if not 0.0 < self.focal_alpha < 1.0:
            raise ConfigError(f"focal_alpha must lie in (0,1), got {self.focal_alpha}")
        if self.focal_gamma < 0.0:
            raise ConfigError(f"focal_gamma must be >= 0, got {self.focal_gamma}")


def _clamped(p: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)


def bce(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. p."""
    p = _clamped(p)
    y = np.asarray(y, dtype=np.float64)
    loss = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    grad = -(y / p - (1.0 - y) / (1.0 - p)) / p.size
    return loss, grad


def huber(
    p: np.ndarray, y: np.ndarray, delta: float, minority_only: bool = False
) -> tuple[float, np.ndarray]:
    """Mean Huber loss on the residual p - y; quadratic within delta, linear outside."""
    if delta <= 0.0:
        raise ConfigError(f"huber delta must be positive, got {delta}")
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r = p - y
    quad = np.abs(r) <= delta
    per = np.where(quad, 0.5 * r**2, delta * (np.abs(r) - 0.5 * delta))
    dper = np.where(quad, r, delta * np.sign(r))
    if minority_only:
        sel = y == 1.0
        count = int(sel.sum())
        if count == 0:
            return 0.0, np.zeros_like(p)
        per = np.where(sel, per, 0.0)
        dper = np.where(sel, dper, 0.0)
        return float(per.sum() / count), dper / count
    return float(per.mean()), dper / p.size


def focal(p: np.ndarray, y: np.ndarray, alpha: float, gamma: float) -> tuple[float, np.ndarray]:
    """Mean focal loss -alpha_t (1 - p_t)^gamma log(p_t) and its gradient."""
    p = _clamped(p)
    y = np.asarray(y, dtype=np.float64)
    p_t = y * p + (1.0 - y) * (1.0 - p)
    alpha_t = y * alpha + (1.0 - y) * (1.0 - alpha)
    one_minus = 1.0 - p_t
    loss = float(np.mean(-alpha_t * one_minus**gamma * np.log(p_t)))
    d_pt = alpha_t * (gamma * one_minus ** (gamma - 1.0) * np.log(p_t) - one_minus**gamma / p_t)
    grad = d_pt * (2.0 * y - 1.0) / p.size  # dp_t/dp = +1 for y=1, -1 for y=0
    return loss, grad


def composite_loss(p: np.ndarray, y: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Weighted sum of the three component losses; gradient is the same sum."""
    cfg.validate()
    total = 0.0
    grad = np.zeros(np.asarray(p).shape, dtype=np.float64)
    if cfg.w_bce > 0.0:
        l, g = bce(p, y)
        total += cfg.w_bce * l
        grad += cfg.w_bce * g
    if cfg.w_huber > 0.0:
        l, g = huber(p, y, cfg.huber_delta, cfg.huber_minority_only)
        total += cfg.w_huber * l
        grad += cfg.w_huber * g
    if cfg.w_focal > 0.0:
        l, g = focal(p, y, cfg.focal_alpha, cfg.focal_gamma)
        total += cfg.w_focal * l
        grad += cfg.w_focal * g
    return total, grad
