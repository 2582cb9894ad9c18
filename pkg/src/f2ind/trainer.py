"""Training/evaluation harness: composed model, k-fold loop, gradient checks.

A model is the fusion stage plus either the fuzzy-rule head or, for the
ablation variant, a single affine map to one logit. Folds re-initialize
parameters independently (seed + fold index), train with Adam under a
one-cycle schedule sized to exactly epochs * ceil(train/batch) steps, and
report validation metrics from the best epoch by macro-F1.
"""

from __future__ import annotations

import copy
import math
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .anfis import SIGMA_MIN, AnfisParams, anfis_backward, anfis_forward, init_anfis
from .data_model import Dataset, FoldSplit, make_batches, stratified_kfold
from .errors import (
    ConfigError,
    FormatError,
    IoError,
    NumericError,
    TruncatedError,
)
from .fusion import PROJ_DIM, FusionCache, FusionParams, fusion_backward, fusion_forward, init_fusion
from .losses import LossConfig, composite_loss
from .metrics import MetricsReport
from .optim import DEFAULT_LR_SCALES, AdamState, ScheduleConfig, adam_step, assign_group, onecycle_lr

CHECKPOINT_MAGIC = b"F2CKP1"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    k_folds: int = 5
    epochs: int = 5
    batch_size: int = 16
    seed: int = 0
    n_anfis_inputs: int = 4
    mf_per_input: int = 2
    hidden_a: int = 128
    use_anfis: bool = True
    dropout_rate: float = 0.30
    loss: LossConfig = field(default_factory=LossConfig)
    base_max_lr: float = 2.5e-3
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    lr_scales: dict = field(default_factory=lambda: dict(DEFAULT_LR_SCALES))
    threshold: float = 0.5
    parallel_folds: int = 1
    pool_folds: bool = False
    select_final_epoch: bool = False  # fallback: report the last epoch instead of the best
    grad_clip: float = 0.0  # reserved; only 0 (off) is supported

    def validate(self) -> None:
        if self.k_folds < 2:
            raise ConfigError(f"k_folds must be >= 2, got {self.k_folds}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_anfis_inputs < 1 or self.mf_per_input < 2:
            raise ConfigError("need n_anfis_inputs >= 1 and mf_per_input >= 2")
        if self.hidden_a < 1:
            raise ConfigError("hidden_a must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0,1), got {self.dropout_rate}")
        if self.parallel_folds < 1:
            raise ConfigError("parallel_folds must be >= 1")
        if self.grad_clip != 0.0:
            raise ConfigError("grad_clip is reserved and must stay 0.0")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0,1)")
        unknown = set(self.lr_scales) - set(DEFAULT_LR_SCALES)
        if unknown:
            raise ConfigError(f"unknown lr_scale groups: {sorted(unknown)}")
        if any(v <= 0 for v in self.lr_scales.values()):
            raise ConfigError("lr_scales must be positive")
        self.loss.validate()

    def echo(self) -> dict:
        return asdict(self)


@dataclass
class LinearHeadParams:
    """Ablation replacement for the fuzzy stage: affine n -> 1 plus sigmoid."""

    w: np.ndarray  # (n,)
    b: np.ndarray  # (1,)


@dataclass
class ModelParams:
    fusion: FusionParams
    anfis: AnfisParams | None = None
    linear: LinearHeadParams | None = None

    @property
    def use_anfis(self) -> bool:
        return self.anfis is not None

    def head_param_count(self) -> int:
        if self.anfis is not None:
            return self.anfis.param_count()
        return self.linear.w.size + self.linear.b.size

    def param_count(self) -> int:
        return self.fusion.param_count() + self.head_param_count()

    def flat(self) -> dict[str, np.ndarray]:
        """Qualified name -> array view; mutating the arrays mutates the model."""
        out = {
            "fusion.img_proj_w": self.fusion.img_proj_w,
            "fusion.img_proj_b": self.fusion.img_proj_b,
            "fusion.txt_proj_w": self.fusion.txt_proj_w,
            "fusion.txt_proj_b": self.fusion.txt_proj_b,
            "fusion.attn_w1": self.fusion.attn_w1,
            "fusion.attn_b1": self.fusion.attn_b1,
            "fusion.attn_w2": self.fusion.attn_w2,
            "fusion.attn_b2": self.fusion.attn_b2,
            "fusion.head_w": self.fusion.head_w,
            "fusion.head_b": self.fusion.head_b,
        }
        if self.anfis is not None:
            out.update(
                {
                    "anfis.centers": self.anfis.centers,
                    "anfis.spreads": self.anfis.spreads,
                    "anfis.slopes": self.anfis.slopes,
                    "anfis.intercepts": self.anfis.intercepts,
                }
            )
        else:
            out.update({"linear.w": self.linear.w, "linear.b": self.linear.b})
        return out


def init_model(text_dim: int, image_dim: int, cfg: TrainConfig, seed: int) -> ModelParams:
    """Fresh parameters for one fold; seeds for the two stages are derived
    from one seed sequence so folds stay independent."""
    ss = np.random.SeedSequence(seed)
    s_fusion, s_head = (int(x) for x in ss.generate_state(2))
    fusion = init_fusion(
        text_dim,
        image_dim,
        cfg.n_anfis_inputs,
        hidden_a=cfg.hidden_a,
        seed=s_fusion,
        dropout_rate=cfg.dropout_rate,
    )
    if cfg.use_anfis:
        return ModelParams(fusion=fusion, anfis=init_anfis(cfg.n_anfis_inputs, cfg.mf_per_input, s_head))
    rng = np.random.default_rng(s_head)
    n = cfg.n_anfis_inputs
    linear = LinearHeadParams(w=rng.uniform(-1.0, 1.0, size=n) / math.sqrt(n), b=np.zeros(1))
    return ModelParams(fusion=fusion, linear=linear)


@dataclass
class ModelCache:
    fusion: FusionCache
    anfis: object | None
    head_in: np.ndarray
    prob: np.ndarray


def model_forward(
    model: ModelParams,
    text: np.ndarray,
    image: np.ndarray | None,
    has_image: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, ModelCache]:
    """Fusion then classifier head; returns (prob, attention weights, cache)."""
    head_in, attn, fcache = fusion_forward(model.fusion, text, image, has_image, train_mode, rng)
    if model.use_anfis:
        prob, acache = anfis_forward(model.anfis, head_in)
        return prob, attn, ModelCache(fcache, acache, head_in, prob)
    z = head_in @ model.linear.w + model.linear.b[0]
    prob = 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))
    return prob, attn, ModelCache(fcache, None, head_in, prob)


def model_backward(model: ModelParams, cache: ModelCache, grad_prob: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every trainable array, keyed like ModelParams.flat()."""
    if model.use_anfis:
        ag = anfis_backward(model.anfis, cache.anfis, grad_prob)
        d_head_in = ag.x
        head_grads = {
            "anfis.centers": ag.centers,
            "anfis.spreads": ag.spreads,
            "anfis.slopes": ag.slopes,
            "anfis.intercepts": ag.intercepts,
        }
    else:
        dz = grad_prob * cache.prob * (1.0 - cache.prob)
        head_grads = {
            "linear.w": cache.head_in.T @ dz,
            "linear.b": np.array([dz.sum()]),
        }
        d_head_in = np.outer(dz, model.linear.w)
    fg = fusion_backward(model.fusion, cache.fusion, d_head_in)
    grads = {
        "fusion.img_proj_w": fg.img_proj_w,
        "fusion.img_proj_b": fg.img_proj_b,
        "fusion.txt_proj_w": fg.txt_proj_w,
        "fusion.txt_proj_b": fg.txt_proj_b,
        "fusion.attn_w1": fg.attn_w1,
        "fusion.attn_b1": fg.attn_b1,
        "fusion.attn_w2": fg.attn_w2,
        "fusion.attn_b2": fg.attn_b2,
        "fusion.head_w": fg.head_w,
        "fusion.head_b": fg.head_b,
    }
    grads.update(head_grads)
    return grads


def evaluate(model: ModelParams, dataset: Dataset, indices, batch_size: int, threshold: float = 0.5):
    """Dropout-free predictions over the given indices -> (MetricsReport, scores, labels)."""
    scores: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for batch in make_batches(dataset, indices, batch_size, shuffle=False):
        text, image, mask, y = dataset.gather(batch)
        prob, _, _ = model_forward(model, text, image, mask, train_mode=False)
        scores.append(prob)
        labels.append(y)
    all_scores = np.concatenate(scores) if scores else np.array([])
    all_labels = np.concatenate(labels) if labels else np.array([], dtype=np.int64)
    return MetricsReport.from_scores(all_scores, all_labels, threshold), all_scores, all_labels


@dataclass
class FoldResult:
    fold_index: int
    metrics: MetricsReport
    loss_trajectory: list[float]
    model: ModelParams
    best_epoch: int  # -1 when training was skipped (epochs=0)
    used_final_epoch: bool
    wall_seconds: float
    total_steps: int
    val_indices: np.ndarray
    val_scores: np.ndarray
    val_labels: np.ndarray


def train_fold(dataset: Dataset, split: FoldSplit, cfg: TrainConfig, fold_index: int = 0) -> FoldResult:
    """Train one fold to completion and evaluate on its held-out indices."""
    cfg.validate()
    try:
        return _train_fold_inner(dataset, split, cfg, fold_index)
    except NumericError as exc:
        raise NumericError(f"fold {fold_index} aborted: {exc}") from exc


def _train_fold_inner(dataset: Dataset, split: FoldSplit, cfg: TrainConfig, fold_index: int) -> FoldResult:
    started = time.perf_counter()
    ss = np.random.SeedSequence(cfg.seed + fold_index)
    s_model, s_batches, s_dropout = (int(x) for x in ss.generate_state(3))

    model = init_model(dataset.text_dim, dataset.image_dim, cfg, s_model)
    params = model.flat()
    opt = AdamState()
    drop_rng = np.random.default_rng(s_dropout)

    steps_per_epoch = math.ceil(len(split.train_indices) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    schedule = None
    if total_steps > 0:
        schedule = ScheduleConfig(
            total_steps=max(total_steps, 2),
            base_max_lr=cfg.base_max_lr,
            pct_start=cfg.pct_start,
            div_factor=cfg.div_factor,
            final_div_factor=cfg.final_div_factor,
        )
    lr_scale = {name: cfg.lr_scales[assign_group(name)] for name in params}
    projections = {"anfis.spreads": lambda s: np.maximum(s, SIGMA_MIN)}

    trajectory: list[float] = []
    best: tuple[float, int, ModelParams, MetricsReport] | None = None
    step = 0
    for epoch in range(cfg.epochs):
        batches = make_batches(dataset, split.train_indices, cfg.batch_size, shuffle=True, seed=s_batches + epoch)
        epoch_losses = []
        for batch in batches:
            text, image, mask, y = dataset.gather(batch)
            try:
                prob, _, cache = model_forward(model, text, image, mask, train_mode=True, rng=drop_rng)
                loss, d_prob = composite_loss(prob, y, cfg.loss)
                grads = model_backward(model, cache, d_prob)
                mult = onecycle_lr(step, schedule)
                lrs = {name: cfg.base_max_lr * mult * lr_scale[name] for name in grads}
                adam_step(opt, params, grads, lrs, projections=projections)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {step}: {exc}") from exc
            epoch_losses.append(loss)
            step += 1
        trajectory.append(float(np.mean(epoch_losses)))
        report, scores, labels = evaluate(model, dataset, split.val_indices, cfg.batch_size, cfg.threshold)
        if best is None or report.macro_f1 > best[0]:
            best = (report.macro_f1, epoch, copy.deepcopy(model), report)

    used_final = False
    if cfg.epochs == 0:
        report, scores, labels = evaluate(model, dataset, split.val_indices, cfg.batch_size, cfg.threshold)
        best_epoch, best_model, best_report = -1, model, report
        used_final = True
    elif cfg.select_final_epoch:
        best_epoch, best_model, best_report = cfg.epochs - 1, model, report
        used_final = True
    else:
        _, best_epoch, best_model, best_report = best

    # re-evaluate the selected snapshot so the stored scores match the metrics
    best_report, scores, labels = evaluate(
        best_model, dataset, split.val_indices, cfg.batch_size, cfg.threshold
    )
    return FoldResult(
        fold_index=fold_index,
        metrics=best_report,
        loss_trajectory=trajectory,
        model=best_model,
        best_epoch=best_epoch,
        used_final_epoch=used_final,
        wall_seconds=time.perf_counter() - started,
        total_steps=total_steps,
        val_indices=split.val_indices,
        val_scores=scores,
        val_labels=labels,
    )


def aggregate_metrics(reports: list[MetricsReport]) -> tuple[dict[str, float], dict[str, float]]:
    """Per-metric mean and population standard deviation across folds."""
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for key in MetricsReport.METRIC_KEYS:
        values = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        if np.ptp(values) == 0.0:  # identical folds -> exactly that value, zero spread
            mean[key], std[key] = float(values[0]), 0.0
        else:
            mean[key], std[key] = float(values.mean()), float(values.std())
    return mean, std


@dataclass
class CVReport:
    folds: list[FoldResult]
    mean: dict[str, float]
    std: dict[str, float]
    config: dict
    param_count: int
    pooled: MetricsReport | None = None


def cross_validate(dataset: Dataset, cfg: TrainConfig) -> CVReport:
    """Stratified k-fold training with per-fold re-initialization."""
    cfg.validate()
    splits = stratified_kfold(dataset, cfg.k_folds, cfg.seed)

    def run(i: int) -> FoldResult:
        return train_fold(dataset, splits[i], cfg, fold_index=i)

    if cfg.parallel_folds > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallel_folds) as pool:
            folds = list(pool.map(run, range(cfg.k_folds)))
    else:
        folds = [run(i) for i in range(cfg.k_folds)]

    mean, std = aggregate_metrics([f.metrics for f in folds])
    pooled = None
    if cfg.pool_folds:
        pooled = MetricsReport.from_scores(
            np.concatenate([f.val_scores for f in folds]),
            np.concatenate([f.val_labels for f in folds]),
            cfg.threshold,
        )
    return CVReport(
        folds=folds,
        mean=mean,
        std=std,
        config=cfg.echo(),
        param_count=folds[0].model.param_count(),
        pooled=pooled,
    )


def ablate_anfis(dataset: Dataset, cfg: TrainConfig) -> tuple[CVReport, CVReport]:
    """Paired runs differing only in the classifier head (same seeds, schedule)."""
    with_head = cross_validate(dataset, replace(cfg, use_anfis=True))
    without_head = cross_validate(dataset, replace(cfg, use_anfis=False))
    return with_head, without_head


# ---------------------------------------------------------------------------
# Gradient check harness
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    seed: int
    block_errors: dict[str, float]
    max_rel_error: float
    passed: bool
    tolerance: float
    worst_block: str


def gradcheck(
    cfg: TrainConfig,
    seed: int,
    batch: int = 3,
    coords_per_block: int = 24,
    text_dim: int = 768,
    image_dim: int = 2048,
    h: float = 1e-4,
    tolerance: float = 1e-4,
    inject_fault: str | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of the composed graph against central
    finite differences on a random micro-batch (dropout off).

    `inject_fault` adds 2.0 to the named block's analytic gradient so the
    harness itself can be shown to catch wrong gradients.
    """
    rng = np.random.default_rng(seed)
    eval_cfg = replace(cfg, dropout_rate=0.0)
    model = init_model(text_dim, image_dim, eval_cfg, seed)
    text = rng.standard_normal((batch, text_dim))
    image = rng.standard_normal((batch, image_dim))
    mask = np.ones(batch, dtype=bool)
    if batch >= 2:
        mask[batch - 1] = False  # exercise the masked path
    y = rng.integers(0, 2, size=batch)
    if y.min() == y.max() and batch >= 2:
        y[0] = 1 - y[0]

    def scalar_loss() -> float:
        prob, _, _ = model_forward(model, text, image, mask, train_mode=False)
        loss, _ = composite_loss(prob, y, cfg.loss)
        return loss

    prob, _, cache = model_forward(model, text, image, mask, train_mode=False)
    _, d_prob = composite_loss(prob, y, cfg.loss)
    grads = model_backward(model, cache, d_prob)
    if inject_fault is not None:
        if inject_fault not in grads:
            raise ConfigError(f"unknown gradient block {inject_fault!r}")
        grads[inject_fault] = grads[inject_fault] + 2.0

    params = model.flat()
    block_errors: dict[str, float] = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        count = min(flat.size, coords_per_block)
        coords = rng.choice(flat.size, size=count, replace=False)
        worst = 0.0
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            up = scalar_loss()
            flat[idx] = orig - h
            down = scalar_loss()
            flat[idx] = orig
            fd = (up - down) / (2.0 * h)
            got = grads[name].reshape(-1)[idx]
            worst = max(worst, abs(got - fd) / max(abs(got), abs(fd), 1e-6))
        block_errors[name] = worst

    worst_block = max(block_errors, key=block_errors.get)
    max_err = block_errors[worst_block]
    return GradCheckReport(
        seed=seed,
        block_errors=block_errors,
        max_rel_error=max_err,
        passed=max_err <= tolerance,
        tolerance=tolerance,
        worst_block=worst_block,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_HEADER = struct.Struct("<6sIBIIIIId")  # magic, version, use_anfis, dims..., dropout

_FUSION_FIELDS = (
    "img_proj_w",
    "img_proj_b",
    "txt_proj_w",
    "txt_proj_b",
    "attn_w1",
    "attn_b1",
    "attn_w2",
    "attn_b2",
    "head_w",
    "head_b",
)


def save_checkpoint(model: ModelParams, path) -> None:
    """Versioned binary snapshot of every trainable array (float64)."""
    fus = model.fusion
    f = model.anfis.f if model.use_anfis else 0
    try:
        with open(path, "wb") as fh:
            fh.write(
                _CKPT_HEADER.pack(
                    CHECKPOINT_MAGIC,
                    CHECKPOINT_VERSION,
                    1 if model.use_anfis else 0,
                    fus.text_dim,
                    fus.image_dim,
                    fus.hidden_a,
                    fus.n_out,
                    f,
                    fus.dropout_rate,
                )
            )
            for name in _FUSION_FIELDS:
                fh.write(np.ascontiguousarray(getattr(fus, name), dtype="<f8").tobytes())
            if model.use_anfis:
                for arr in (model.anfis.centers, model.anfis.spreads, model.anfis.slopes, model.anfis.intercepts):
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            else:
                fh.write(np.ascontiguousarray(model.linear.w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(model.linear.b, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> ModelParams:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(buf) < len(CHECKPOINT_MAGIC):
        raise TruncatedError(f"{path}: too short for magic")
    if buf[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    if len(buf) < _CKPT_HEADER.size:
        raise TruncatedError(f"{path}: incomplete checkpoint header")
    _, version, use_anfis, text_dim, image_dim, hidden_a, n, f, dropout = _CKPT_HEADER.unpack_from(buf, 0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")

    off = _CKPT_HEADER.size

    def take(shape) -> np.ndarray:
        nonlocal off
        count = int(np.prod(shape))
        end = off + 8 * count
        if end > len(buf):
            raise TruncatedError(f"{path}: checkpoint payload cut off")
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off = end
        return arr

    fus = FusionParams(
        img_proj_w=take((image_dim, PROJ_DIM)),
        img_proj_b=take((PROJ_DIM,)),
        txt_proj_w=take((text_dim, PROJ_DIM)),
        txt_proj_b=take((PROJ_DIM,)),
        attn_w1=take((PROJ_DIM, hidden_a)),
        attn_b1=take((hidden_a,)),
        attn_w2=take((hidden_a,)),
        attn_b2=take((1,)),
        head_w=take((PROJ_DIM, n)),
        head_b=take((n,)),
        dropout_rate=dropout,
    )
    if use_anfis:
        model = ModelParams(
            fusion=fus,
            anfis=AnfisParams(
                centers=take((n, f)),
                spreads=take((n, f)),
                slopes=take((f**n, n)),
                intercepts=take((f**n,)),
                n=n,
                f=f,
            ),
        )
    else:
        model = ModelParams(fusion=fus, linear=LinearHeadParams(w=take((n,)), b=take((1,))))
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes in checkpoint")
    return model
