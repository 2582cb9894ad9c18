"""Five-layer Takagi-Sugeno fuzzy classifier with hand-derived gradients.

Inputs are fuzzified by Gaussian membership functions with learnable centers
and spreads; every combination of one membership per input forms a rule whose
firing strength is the product (AND) of its memberships. Normalized firing
strengths weight per-rule affine consequents, and a sigmoid squashes the
weighted sum into a probability. All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheError, ConfigError, ShapeError

SIGMA_MIN = 1e-3  # spread clamp applied after every optimizer step
RULE_LIMIT = 4096
NORM_EPS = 1e-12  # guards the all-rules-underflowed row
LOG_SPACE_MIN_INPUTS = 9  # product of >8 memberships risks underflow in f32-scale values


@dataclass
class AnfisParams:
    """Learnable state: membership Gaussians plus per-rule affine consequents."""

    centers: np.ndarray  # (n, f) Gaussian means
    spreads: np.ndarray  # (n, f) Gaussian standard deviations, > SIGMA_MIN
    slopes: np.ndarray  # (f**n, n) consequent coefficients
    intercepts: np.ndarray  # (f**n,) consequent offsets
    n: int
    f: int

    @property
    def n_rules(self) -> int:
        return self.f**self.n

    def param_count(self) -> int:
        return self.centers.size + self.spreads.size + self.slopes.size + self.intercepts.size


@dataclass
class AnfisCache:
    """Forward intermediates needed for the exact backward pass."""

    x: np.ndarray  # (B, n)
    memberships: np.ndarray  # (B, n, f)
    firing: np.ndarray  # (B, f**n)
    normalized: np.ndarray  # (B, f**n)
    rule_outputs: np.ndarray  # (B, f**n)
    pre_sigmoid: np.ndarray  # (B,)
    prob: np.ndarray  # (B,)


def init_anfis(n: int, f: int, seed: int) -> AnfisParams:
    """Centers evenly spaced on [-1, 1], unit spreads, small random slopes."""
    if n < 1:
        raise ConfigError(f"need n >= 1 inputs, got {n}")
    if f < 2:
        raise ConfigError(f"need f >= 2 membership functions, got {f}")
    if f**n > RULE_LIMIT:
        raise ConfigError(f"f**n = {f**n} exceeds rule limit {RULE_LIMIT}")
    rng = np.random.default_rng(seed)
    # midpoints of f equal segments of [-1, 1]; for f=2 this is {-0.5, +0.5}
    centers_row = -1.0 + (2.0 * np.arange(f) + 1.0) / f
    return AnfisParams(
        centers=np.tile(centers_row, (n, 1)),
        spreads=np.ones((n, f)),
        slopes=rng.uniform(-0.1, 0.1, size=(f**n, n)),
        intercepts=np.zeros(f**n),
        n=n,
        f=f,
    )


def rule_to_assignment(k: int, n: int, f: int) -> list[int]:
    """Base-f digits of rule index k, most significant digit = input 0."""
    if not 0 <= k < f**n:
        raise IndexError(f"rule index {k} outside [0, {f**n})")
    digits = []
    for _ in range(n):
        digits.append(k % f)
        k //= f
    return digits[::-1]


def assignment_to_rule(assignment, f: int) -> int:
    """Inverse of rule_to_assignment."""
    k = 0
    for d in assignment:
        if not 0 <= d < f:
            raise IndexError(f"membership index {d} outside [0, {f})")
        k = k * f + int(d)
    return k


def assignment_table(n: int, f: int) -> np.ndarray:
    """(f**n, n) int array: row k holds rule k's membership index per input."""
    rules = np.arange(f**n)
    table = np.empty((f**n, n), dtype=np.int64)
    for i in range(n - 1, -1, -1):
        table[:, i] = rules % f
        rules //= f
    return table


def fuzzify(params: AnfisParams, x: np.ndarray) -> np.ndarray:
    """Gaussian membership degrees exp(-(x - center)^2 / (2 spread^2)), (B, n, f)."""
    x = np.asarray(x, dtype=np.float64)
    spreads = np.maximum(params.spreads, SIGMA_MIN)
    diff = x[:, :, None] - params.centers[None, :, :]
    return np.exp(-(diff**2) / (2.0 * spreads[None, :, :] ** 2))


def rule_firing(memberships: np.ndarray) -> np.ndarray:
    """Product (AND) of each rule's assigned memberships, (B, f**n)."""
    _, n, f = memberships.shape
    table = assignment_table(n, f)
    gathered = memberships[:, np.arange(n)[None, :], table]  # (B, f**n, n)
    if n >= LOG_SPACE_MIN_INPUTS:
        return np.exp(np.log(gathered).sum(axis=2))
    return gathered.prod(axis=2)


def normalize_firing(firing: np.ndarray) -> np.ndarray:
    """Rescale firing strengths to a partition of unity per row."""
    return firing / (firing.sum(axis=1, keepdims=True) + NORM_EPS)


def anfis_forward(params: AnfisParams, x: np.ndarray) -> tuple[np.ndarray, AnfisCache]:
    """Full pass: fuzzify -> fire -> normalize -> affine consequents -> sigmoid.

    Returns per-row probabilities in (0, 1) and the cache for anfis_backward.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.n:
        raise ShapeError(f"expected input shape (B, {params.n}), got {x.shape}")
    memberships = fuzzify(params, x)
    firing = rule_firing(memberships)
    normalized = normalize_firing(firing)
    rule_outputs = x @ params.slopes.T + params.intercepts[None, :]
    pre_sigmoid = (normalized * rule_outputs).sum(axis=1)
    prob = 1.0 / (1.0 + np.exp(-np.clip(pre_sigmoid, -500.0, 500.0)))
    return prob, AnfisCache(x, memberships, firing, normalized, rule_outputs, pre_sigmoid, prob)


@dataclass
class AnfisGrads:
    centers: np.ndarray
    spreads: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    x: np.ndarray  # gradient w.r.t. the inputs, for chaining into the fusion layer


def anfis_backward(params: AnfisParams, cache: AnfisCache, grad_prob: np.ndarray) -> AnfisGrads:
    """Exact gradients through sigmoid, normalization quotient, rule products,
    and the Gaussian memberships."""
    grad_prob = np.asarray(grad_prob, dtype=np.float64)
    B = cache.x.shape[0]
    if grad_prob.shape != (B,):
        raise CacheError(f"grad_prob shape {grad_prob.shape} != ({B},)")
    if cache.x.shape != (B, params.n) or cache.firing.shape != (B, params.n_rules):
        raise CacheError("cache does not match these parameters")

    table = assignment_table(params.n, params.f)
    spreads = np.maximum(params.spreads, SIGMA_MIN)

    d_pre = grad_prob * cache.prob * (1.0 - cache.prob)  # sigmoid
    d_rule_outputs = d_pre[:, None] * cache.normalized  # (B, R)
    d_slopes = d_rule_outputs.T @ cache.x
    d_intercepts = d_rule_outputs.sum(axis=0)
    d_x = d_rule_outputs @ params.slopes  # consequent path

    d_normalized = d_pre[:, None] * cache.rule_outputs
    # quotient rule of normalized = firing / (sum + eps)
    total = cache.firing.sum(axis=1, keepdims=True) + NORM_EPS
    d_firing = d_normalized / total - (
        (d_normalized * cache.firing).sum(axis=1, keepdims=True) / total**2
    )

    # product rule: d firing_k / d G[i, assignment(k, i)] = product of the other memberships
    gathered = cache.memberships[:, np.arange(params.n)[None, :], table]  # (B, R, n)
    left = np.ones_like(gathered)
    right = np.ones_like(gathered)
    np.cumprod(gathered[:, :, :-1], axis=2, out=left[:, :, 1:])
    np.cumprod(gathered[:, :, :0:-1], axis=2, out=right[:, :, -2::-1])
    prod_except = left * right

    d_memberships = np.zeros_like(cache.memberships)
    weighted = d_firing[:, :, None] * prod_except  # (B, R, n)
    for i in range(params.n):
        onehot = np.equal(table[:, i][:, None], np.arange(params.f)[None, :]).astype(np.float64)
        d_memberships[:, i, :] = weighted[:, :, i] @ onehot

    # Gaussian chain rule
    diff = cache.x[:, :, None] - params.centers[None, :, :]
    dG_dx = cache.memberships * (-diff / spreads[None, :, :] ** 2)
    d_centers = (d_memberships * cache.memberships * diff / spreads[None, :, :] ** 2).sum(axis=0)
    d_spreads = (d_memberships * cache.memberships * diff**2 / spreads[None, :, :] ** 3).sum(axis=0)
    d_x += (d_memberships * dG_dx).sum(axis=2)

    return AnfisGrads(d_centers, d_spreads, d_slopes, d_intercepts, d_x)


@dataclass
class RuleRow:
    """One line of the rule inspection table."""

    index: int
    assignment: tuple[int, ...]
    mean_norm_firing: float
    mean_contribution: float


def rule_report(params: AnfisParams, x: np.ndarray) -> list[RuleRow]:
    """Per-rule mean normalized firing and mean signed contribution to the
    pre-sigmoid output; contributions sum to the mean pre-sigmoid value."""
    _, cache = anfis_forward(params, x)
    contributions = cache.normalized * cache.rule_outputs
    return [
        RuleRow(
            index=k,
            assignment=tuple(rule_to_assignment(k, params.n, params.f)),
            mean_norm_firing=float(cache.normalized[:, k].mean()),
            mean_contribution=float(contributions[:, k].mean()),
        )
        for k in range(params.n_rules)
    ]


def rule_report_tsv(rows: list[RuleRow]) -> str:
    """Tab-separated serialization used by the CLI inspect command."""
    lines = ["rule_index\tassignment\tmean_norm_firing\tmean_contribution"]
    for r in rows:
        assign = ",".join(str(d) for d in r.assignment)
        lines.append(f"{r.index}\t{assign}\t{r.mean_norm_firing!r}\t{r.mean_contribution!r}")
    return "\n".join(lines) + "\n"
