"""Ordinal score model: one continuous development score per tile."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neural
from .neural import Adam, MlpParams, ShapeError
from .synthworld import TileTable

UNINHABITED, RURAL, URBAN = 0, 1, 2


@dataclass
class OrdinalConfig:
    t1: float = 0.0
    t2: float = 10.0
    t_min: float = -10.0
    t_max: float = 20.0
    epochs: int = 100
    batch_size: int = 50
    lr: float = 1e-4
    warmup_epochs: int = 10
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "relu"

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not self.t_min < self.t1 < self.t2 < self.t_max:
            raise ValueError("need t_min < t1 < t2 < t_max")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.warmup_epochs < 0:
            raise ValueError("epochs, batch_size and lr must be positive")


@dataclass
class ScoreModel:
    params: MlpParams
    cfg: OrdinalConfig
    history: list[float] = field(default_factory=list)  # mean class loss per epoch
    warmup_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.params.layer_sizes[-1] != 1:
            raise ShapeError("score head must have one output")


def clamp_score(raw, cfg: OrdinalConfig):
    out = np.clip(raw, cfg.t_min, cfg.t_max)
    return float(out) if np.ndim(out) == 0 else out


def ordinal_logits(score, cfg: OrdinalConfig) -> np.ndarray:
    """``[t1 - s, min(s - t1, t2 - s), s - t2]``; rows for an array of scores."""
    s = np.asarray(score, dtype=np.float64)
    return np.stack([cfg.t1 - s, np.minimum(s - cfg.t1, cfg.t2 - s), s - cfg.t2], axis=-1)


def classify_score(score, cfg: OrdinalConfig):
    """Threshold rule; ties go to the upper class."""
    s = np.asarray(score, dtype=np.float64)
    out = np.where(s < cfg.t1, UNINHABITED, np.where(s < cfg.t2, RURAL, URBAN))
    return int(out) if out.ndim == 0 else out


def _logit_slopes(s: np.ndarray, cfg: OrdinalConfig) -> np.ndarray:
    mid = np.where(s - cfg.t1 < cfg.t2 - s, 1.0, -1.0)
    return np.stack([-np.ones_like(s), mid, np.ones_like(s)], axis=-1)


def class_loss_and_grad(scores, soft_labels, cfg: OrdinalConfig) -> tuple[float, np.ndarray]:
    """Mean soft-label cross entropy of the ordinal logits, and d(loss)/d(score)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("empty batch")
    y = np.asarray(soft_labels, dtype=np.float64).reshape(s.size, 3)
    loss, dlogits = neural.soft_cross_entropy(ordinal_logits(s, cfg), y)
    return loss, (dlogits * _logit_slopes(s, cfg)).sum(axis=1)


def class_loss(scores, soft_labels, cfg: OrdinalConfig) -> float:
    return class_loss_and_grad(scores, soft_labels, cfg)[0]


def clamped_output_loss(params: MlpParams, X: np.ndarray, Y: np.ndarray, cfg: OrdinalConfig):
    """Class loss of the clamped network output with gradients for all network arrays.

    Outside the clamp range the score gradient is zero.
    """
    cache = neural.forward_with_cache(params, X)
    raw = cache.output[:, 0]
    s = np.clip(raw, cfg.t_min, cfg.t_max)
    loss, ds = class_loss_and_grad(s, Y, cfg)
    ds = ds * ((raw >= cfg.t_min) & (raw <= cfg.t_max))
    return loss, neural.mlp_backward(params, cache, ds[:, None]), cache


def class_centers(cfg: OrdinalConfig) -> np.ndarray:
    """Midpoints of the three class intervals inside the clamp range."""
    return np.array([(cfg.t_min + cfg.t1) / 2, (cfg.t1 + cfg.t2) / 2, (cfg.t2 + cfg.t_max) / 2])


def warmup_loss(params: MlpParams, X: np.ndarray, Y: np.ndarray, cfg: OrdinalConfig):
    """Squared error between the raw score and the soft label's expected class centre."""
    cache = neural.forward_with_cache(params, X)
    loss, g = neural.mse_loss(cache.output[:, 0], Y @ class_centers(cfg))
    return loss, neural.mlp_backward(params, cache, g[:, None])


def init_score_params(feature_dim: int, cfg: OrdinalConfig, seed: int) -> MlpParams:
    """Glorot weights; the head bias starts at the threshold midpoint.

    Scores starting below the midpoint sit on a flat stretch of the urban-label loss
    (the rural and urban logits rise together), so a zero bias stalls training.
    """
    params = neural.init_mlp((feature_dim, *cfg.hidden, 1), seed, cfg.activation)
    params.biases[-1][:] = 0.5 * (cfg.t1 + cfg.t2)
    return params


def train_score_model(labeled: TileTable, cfg: OrdinalConfig | None = None, seed: int = 0) -> ScoreModel:
    """Minimise the class loss over minibatches of the labelled tiles with Adam.

    With mixed soft labels the class loss has a spurious minimum about 1.8 above t1 for rural and
    urban tiles (and below t2 for uninhabited ones), so ``cfg.warmup_epochs`` of regression onto
    the expected class centre come first to start every class in its own basin.
    """
    cfg = cfg or OrdinalConfig()
    if len(labeled) == 0:
        raise ValueError("no labelled tiles")
    if not labeled.has_labels().all():
        raise ValueError("every training tile needs a soft label")
    X, Y = labeled.features, labeled.soft_label
    init_seed, order_seed = np.random.SeedSequence(seed).spawn(2)
    params = init_score_params(X.shape[1], cfg, int(init_seed.generate_state(1)[0]))
    arrays = params.arrays()
    opt = Adam(lr=cfg.lr)
    rng = np.random.default_rng(order_seed)
    history, warm = [], []
    step = 0
    for _ in range(cfg.warmup_epochs):
        perm = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), cfg.batch_size):
            b = perm[start:start + cfg.batch_size]
            loss, grads = warmup_loss(params, X[b], Y[b], cfg)
            neural.check_finite(step, loss, grads)
            opt.update(arrays, grads)
            total += loss * len(b)
            step += 1
        warm.append(total / len(X))
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), cfg.batch_size):
            b = perm[start:start + cfg.batch_size]
            loss, grads, _ = clamped_output_loss(params, X[b], Y[b], cfg)
            neural.check_finite(step, loss, grads)
            opt.update(arrays, grads)
            total += loss * len(b)
            step += 1
        history.append(total / len(X))
    return ScoreModel(params, cfg, history, warm)


def raw_scores(model: ScoreModel, features: np.ndarray) -> np.ndarray:
    return neural.mlp_forward(model.params, np.atleast_2d(features))[:, 0]


def score_tiles(model: ScoreModel, tiles: TileTable | np.ndarray) -> np.ndarray:
    """Clamped scores aligned with the input rows."""
    X = tiles.features if isinstance(tiles, TileTable) else np.asarray(tiles, dtype=np.float64)
    return np.clip(raw_scores(model, X), model.cfg.t_min, model.cfg.t_max)


def epoch_class_loss(model: ScoreModel, labeled: TileTable) -> float:
    return class_loss(score_tiles(model, labeled), labeled.soft_label, model.cfg)
