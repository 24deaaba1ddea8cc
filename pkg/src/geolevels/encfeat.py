"""Tile encoders: k-means pseudo-label clustering, multi-task fine-tuning, proxy correlation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neural
from .hyperlocal import ScoreModel, clamped_output_loss, score_tiles
from .neural import Adam, MlpParams
from .synthworld import TileTable

SOURCES = ("surrogate", "proxy", "score")


class StratumError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


@dataclass
class EncoderConfig:
    epochs: int = 5
    batch_labeled: int = 40
    batch_unlabeled: int = 256
    lr: float = 1e-3
    lam: float = 1.0
    proxy_cluster_loss: bool = True
    kmeans_iter: int = 300


@dataclass
class Encoder:
    """Network with a scalar head; the embedding is its penultimate activation."""

    params: MlpParams
    n_c: int = 0
    cluster_head: np.ndarray | None = None  # (embedding_dim, 2 * n_c)
    source: str = "surrogate"
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown encoder source {self.source!r}")
        if self.n_c > 0:
            if self.cluster_head is None or self.cluster_head.shape[1] != 2 * self.n_c:
                raise ValueError("cluster head must have 2 * n_c columns")
        elif self.cluster_head is not None:
            raise ValueError("cluster head present with n_c = 0")

    @property
    def embedding_dim(self) -> int:
        return self.params.layer_sizes[-2]


def embed(encoder: Encoder, tiles) -> np.ndarray:
    X = tiles.features if isinstance(tiles, TileTable) else tiles
    return neural.hidden_forward(encoder.params, np.atleast_2d(X))


def score_body(model: ScoreModel) -> Encoder:
    """The score model itself viewed as an encoder (no fine-tuning)."""
    return Encoder(model.params.copy(), source="score")


def filter_inhabited(model: ScoreModel, tiles: TileTable) -> TileTable:
    return tiles.subset(np.flatnonzero(score_tiles(model, tiles) >= model.cfg.t1))


# -- k-means -----------------------------------------------------------------


@dataclass
class KmeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)
    n_iter: int = 0


def _sq_dists(points, centroids):
    d = (points**2).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids**2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plus_plus(points, k, rng):
    centroids = [points[rng.integers(len(points))]]
    closest = _sq_dists(points, centroids[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(len(points))
        else:
            idx = rng.choice(len(points), p=closest / total)
        centroids.append(points[idx])
        closest = np.minimum(closest, _sq_dists(points, points[idx][None])[:, 0])
    return np.array(centroids)


def _repair_empty(points, centroids, assign, d2):
    counts = np.bincount(assign, minlength=len(centroids))
    own = d2[np.arange(len(points)), assign]
    for c in np.flatnonzero(counts == 0):
        # steal the point farthest from its own centroid, never emptying its donor
        order = np.argsort(-own, kind="stable")
        for p in order:
            if counts[assign[p]] > 1:
                break
        counts[assign[p]] -= 1
        assign[p] = c
        counts[c] = 1
        own[p] = 0.0
        centroids[c] = points[p]
    return assign


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300) -> KmeansResult:
    """Lloyd's algorithm from a seeded k-means++ start; stops at an assignment fixpoint."""
    points = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be positive")
    if len(points) < k:
        raise ValueError(f"{len(points)} points cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus(points, k, rng)
    d2 = _sq_dists(points, centroids)
    assign = d2.argmin(1)
    history = [float(d2[np.arange(len(points)), assign].sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        assign = _repair_empty(points, centroids, assign, d2)
        for c in range(k):
            centroids[c] = points[assign == c].mean(0)
        d2 = _sq_dists(points, centroids)
        new = d2.argmin(1)
        rows = np.arange(len(points))
        stay = d2[rows, assign] <= d2[rows, new]  # ties keep their cluster, so repairs survive
        new[stay] = assign[stay]
        history.append(float(d2[np.arange(len(points)), new].sum()))
        if np.array_equal(new, assign):
            break
        assign = new
    inertia = float(d2[np.arange(len(points)), assign].sum())
    return KmeansResult(centroids, assign, inertia, history, n_iter)


def pseudo_labels(encoder: Encoder, score_model: ScoreModel, tiles: TileTable, n_c: int, seed: int = 0,
                  max_iter: int = 300) -> np.ndarray:
    """Cluster rural (score < t2) and urban tiles separately; rural ids first, urban offset by n_c."""
    if n_c < 1:
        raise ValueError("n_c must be positive")
    urban = score_tiles(score_model, tiles) >= score_model.cfg.t2
    emb = embed(encoder, tiles)
    out = np.empty(len(tiles), dtype=np.int64)
    seeds = np.random.SeedSequence(seed).spawn(2)
    for offset, mask, ss in ((0, ~urban, seeds[0]), (n_c, urban, seeds[1])):
        name = "urban" if offset else "rural"
        if mask.sum() < n_c:
            raise StratumError(f"{name} stratum has {mask.sum()} tiles, fewer than n_c={n_c}")
        res = kmeans(emb[mask], n_c, int(ss.generate_state(1)[0]), max_iter)
        out[mask] = res.assignments + offset
    return out


def cluster_loss_and_grad(params: MlpParams, head: np.ndarray, X: np.ndarray, pseudo: np.ndarray):
    """Cross entropy of ``embedding @ head`` against one-hot pseudo-labels.

    Gradients are returned for ``params.arrays() + [head]``.
    """
    cache = neural.forward_with_cache(params, X)
    emb = cache.hidden
    targets = np.eye(head.shape[1])[pseudo]
    loss, dz = neural.soft_cross_entropy(emb @ head, targets)
    grads = neural.mlp_backward(params, cache, np.zeros_like(cache.output), grad_hidden=dz @ head.T)
    return loss, grads + [emb.T @ dz]


def cluster_loss(encoder: Encoder, tiles, pseudo) -> float:
    X = tiles.features if isinstance(tiles, TileTable) else tiles
    pseudo = np.asarray(pseudo)
    if len(pseudo) != len(X) or (pseudo < 0).any():
        raise KeyError("every tile in the batch needs a pseudo-label")
    return cluster_loss_and_grad(encoder.params, encoder.cluster_head, X, pseudo)[0]


def _init_head(dim: int, n_out: int, rng) -> np.ndarray:
    limit = np.sqrt(6.0 / (dim + n_out))
    return rng.uniform(-limit, limit, size=(dim, n_out))


def _seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


class _Batches:
    """Endless reshuffled minibatches over ``n`` rows."""

    def __init__(self, n: int, size: int, rng):
        self.n, self.size, self.rng = n, size, rng
        self.perm, self.pos = rng.permutation(n), 0

    def next(self) -> np.ndarray:
        if self.pos >= self.n:
            self.perm, self.pos = self.rng.permutation(self.n), 0
        b = self.perm[self.pos:self.pos + self.size]
        self.pos += self.size
        return b


def train_encoder(labeled: TileTable, unlabeled: TileTable, score_model: ScoreModel, n_c: int = 0,
                  lam: float | None = None, seed: int = 0, cfg: EncoderConfig | None = None) -> Encoder:
    """Fine-tune a copy of the score network on class loss + lam * cluster loss.

    The encoder body starts from the score model's hidden layers; the scalar head that carries
    the class loss starts from the score head. Pseudo-labels are recomputed at the start of every
    epoch and the cluster head is re-drawn with them.
    """
    cfg = cfg or EncoderConfig()
    lam = cfg.lam if lam is None else lam
    if len(labeled) == 0:
        raise ValueError("no labelled tiles")
    if n_c < 0:
        raise ValueError("n_c must be >= 0")
    order_seed, cluster_seed = _seeds(seed, 2)
    params = score_model.params.copy()
    arrays = params.arrays()
    ocfg = score_model.cfg

    use_cluster = n_c > 0 and lam != 0
    rng_order = np.random.default_rng(order_seed)
    rng_cluster = np.random.default_rng(cluster_seed)
    lab_batches = _Batches(len(labeled), cfg.batch_labeled, rng_order)
    n_unl = max(len(unlabeled), 1)
    steps_per_epoch = -(-n_unl // cfg.batch_unlabeled)
    unl_batches = _Batches(n_unl, cfg.batch_unlabeled, rng_order)
    opt = Adam(lr=cfg.lr)
    head = None
    hist = {"class": [], "cluster": [], "cluster_first": [], "cluster_last": []}
    step = 0
    for _ in range(cfg.epochs):
        if n_c > 0:
            pseudo = pseudo_labels(Encoder(params, source="surrogate"), score_model, unlabeled, n_c,
                                   int(rng_cluster.integers(2**32)), cfg.kmeans_iter)
            head = _init_head(params.layer_sizes[-2], 2 * n_c, rng_cluster)
            head_opt = Adam(lr=cfg.lr)
        closs, kloss = [], []
        for _ in range(steps_per_epoch):
            lb = lab_batches.next()
            ub = unl_batches.next()
            loss, grads, _ = clamped_output_loss(params, labeled.features[lb], labeled.soft_label[lb], ocfg)
            neural.check_finite(step, loss, grads)
            closs.append(loss)
            if use_cluster:
                kl, kgrads = cluster_loss_and_grad(params, head, unlabeled.features[ub], pseudo[ub])
                neural.check_finite(step, kl, kgrads)
                kloss.append(kl)
                grads = [g + lam * k for g, k in zip(grads, kgrads[:-1])]
                head_opt.update([head], [lam * kgrads[-1]])
            opt.update(arrays, grads)
            step += 1
        hist["class"].append(float(np.mean(closs)))
        if kloss:
            hist["cluster"].append(float(np.mean(kloss)))
            hist["cluster_first"].append(kloss[0])
            hist["cluster_last"].append(kloss[-1])
    return Encoder(params, n_c, head if n_c > 0 else None, "surrogate", hist)


# -- proxy correlation -------------------------------------------------------


def pearson_loss_and_grad(scores, proxy) -> tuple[float, np.ndarray]:
    """Negative sample Pearson correlation and its gradient w.r.t. ``scores``."""
    x = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(proxy, dtype=np.float64).ravel()
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length batches of at least 2 values")
    xc, yc = x - x.mean(), y - y.mean()
    nx, ny = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if nx == 0 or ny == 0:
        raise DegenerateBatchError("zero variance batch")
    rho = (xc @ yc) / (nx * ny)
    grad = yc / (nx * ny) - rho * xc / (nx * nx)
    return float(-rho), -grad


def pearson_loss(scores, proxy) -> float:
    return pearson_loss_and_grad(scores, proxy)[0]


def proxy_loss_and_grad(params: MlpParams, X: np.ndarray, proxy: np.ndarray):
    cache = neural.forward_with_cache(params, X)
    loss, ds = pearson_loss_and_grad(cache.output[:, 0], proxy)
    return loss, neural.mlp_backward(params, cache, ds[:, None])


def head_scores(encoder: Encoder, tiles) -> np.ndarray:
    X = tiles.features if isinstance(tiles, TileTable) else tiles
    return neural.mlp_forward(encoder.params, np.atleast_2d(X))[:, 0]


def train_proxy_encoder(tiles: TileTable, seed: int = 0, cfg: EncoderConfig | None = None,
                        score_model: ScoreModel | None = None, n_c: int = 0, lam: float | None = None,
                        hidden: tuple[int, ...] = (32, 32)) -> Encoder:
    """Train a scalar head to correlate with the proxy intensity over minibatches.

    Starts from the score network when one is given (the head output is read as a hyperlocal
    score), otherwise from a seeded fresh network. With ``n_c > 0`` and ``cfg.proxy_cluster_loss``
    the cluster loss on inhabited tiles is added, stratified by ``score_model``.
    """
    cfg = cfg or EncoderConfig()
    lam = cfg.lam if lam is None else lam
    init_seed, order_seed, cluster_seed = _seeds(seed, 3)
    if score_model is not None:
        params = score_model.params.copy()
    else:
        params = neural.init_mlp((tiles.features.shape[1], *hidden, 1), init_seed)
    arrays = params.arrays()
    use_cluster = n_c > 0 and cfg.proxy_cluster_loss and lam != 0
    if n_c > 0 and cfg.proxy_cluster_loss and score_model is None:
        raise ValueError("cluster loss on the proxy source needs a score model for stratification")
    inhabited = filter_inhabited(score_model, tiles) if use_cluster else None

    rng_order = np.random.default_rng(order_seed)
    rng_cluster = np.random.default_rng(cluster_seed)
    batches = _Batches(len(tiles), cfg.batch_unlabeled, rng_order)
    steps_per_epoch = -(-len(tiles) // cfg.batch_unlabeled)
    if use_cluster:
        unl_batches = _Batches(len(inhabited), cfg.batch_unlabeled, rng_order)
    opt = Adam(lr=cfg.lr)
    head = None
    hist = {"initial": _full_pearson_loss(params, tiles), "pearson": [], "cluster": []}
    step = skipped = 0
    for _ in range(cfg.epochs):
        if use_cluster:
            pseudo = pseudo_labels(Encoder(params, source="proxy"), score_model, inhabited, n_c,
                                   int(rng_cluster.integers(2**32)), cfg.kmeans_iter)
            head = _init_head(params.layer_sizes[-2], 2 * n_c, rng_cluster)
            head_opt = Adam(lr=cfg.lr)
        ploss, kloss = [], []
        for _ in range(steps_per_epoch):
            b = batches.next()
            try:
                loss, grads = proxy_loss_and_grad(params, tiles.features[b], tiles.proxy[b])
            except (DegenerateBatchError, ValueError):
                skipped += 1
                continue
            neural.check_finite(step, loss, grads)
            ploss.append(loss)
            if use_cluster:
                ub = unl_batches.next()
                kl, kgrads = cluster_loss_and_grad(params, head, inhabited.features[ub], pseudo[ub])
                neural.check_finite(step, kl, kgrads)
                kloss.append(kl)
                grads = [g + lam * k for g, k in zip(grads, kgrads[:-1])]
                head_opt.update([head], [lam * kgrads[-1]])
            opt.update(arrays, grads)
            step += 1
        hist["pearson"].append(float(np.mean(ploss)) if ploss else float("nan"))
        if kloss:
            hist["cluster"].append(float(np.mean(kloss)))
    if step == 0:
        raise DegenerateBatchError("every proxy batch was degenerate")
    hist["skipped"] = skipped
    hist["final"] = _full_pearson_loss(params, tiles)
    return Encoder(params, n_c if use_cluster else 0, head if use_cluster else None, "proxy", hist)


def _full_pearson_loss(params, tiles) -> float:
    try:
        return pearson_loss(neural.mlp_forward(params, tiles.features)[:, 0], tiles.proxy)
    except DegenerateBatchError:
        return float("nan")
