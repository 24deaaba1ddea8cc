"""Metrics and evaluation harnesses: R², correlations, Gini, Zipf fits, split repetitions,
data-shortage curves, cross-world transfer, tile-level and inequality evaluations."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .hyperlocal import score_tiles
from .scaling import (MultiLevelModel, PipelineConfig, Stages, StageError, predict_districts, scaling_factors,
                      train_pipeline, train_stages)
from .synthworld import World, tile_truth


class DegenerateError(ValueError):
    pass


# -- metrics -----------------------------------------------------------------


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) != len(b):
        raise ValueError(f"length mismatch {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("need at least 2 values")
    return a, b


def r_squared(truth, pred) -> float:
    t, p = _pair(truth, pred)
    ss_tot = np.sum((t - t.mean()) ** 2)
    if ss_tot == 0:
        raise DegenerateError("truth has zero variance")
    return float(1.0 - np.sum((t - p) ** 2) / ss_tot)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    ac, bc = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(ac @ ac), np.sqrt(bc @ bc)
    if na == 0 or nb == 0:
        raise DegenerateError("zero variance")
    return float(np.clip((ac @ bc) / (na * nb), -1.0, 1.0))


def correlation(a, b, kind: str = "pearson") -> float:
    """Sample Pearson, or Pearson of average ranks for ``kind="spearman"``."""
    a, b = _pair(a, b)
    if kind == "pearson":
        return _pearson(a, b)
    if kind == "spearman":
        return _pearson(rankdata(a), rankdata(b))
    raise ValueError(f"unknown correlation kind {kind!r}")


def gini(values) -> float:
    """Mean absolute pairwise difference over twice the mean, via the sorted O(n log n) form."""
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if len(x) == 0:
        raise ValueError("empty input")
    if x[0] < 0:
        raise ValueError("gini needs non-negative values")
    total = x.sum()
    if total <= 0:
        raise DegenerateError("all-zero input")
    n = len(x)
    i = np.arange(1, n + 1)
    return max(0.0, float(np.sum((2 * i - n - 1) * x) / (n * total)))  # rounding can dip below 0


@dataclass
class ZipfFit:
    slope: float
    intercept: float
    r2: float
    log_rank: np.ndarray
    log_size: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.log_rank)


def zipf_fit(values, top_quantile: float = 0.75) -> ZipfFit:
    """OLS of log size on log rank over the largest ``top_quantile`` share of the values."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("zipf_fit needs positive finite values")
    if not 0 < top_quantile <= 1:
        raise ValueError("top_quantile must lie in (0, 1]")
    k = int(np.ceil(top_quantile * len(v) - 1e-9))
    if k < 3:
        raise ValueError(f"only {k} points survive the quantile filter")
    size = np.sort(v)[::-1][:k]
    x = np.log(np.arange(1, k + 1, dtype=np.float64))
    y = np.log(size)
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    intercept = float(y.mean() - slope * x.mean())
    ss_tot = np.sum((y - y.mean()) ** 2)
    resid = y - (intercept + slope * x)
    r2 = 1.0 if ss_tot == 0 else float(1.0 - resid @ resid / ss_tot)
    return ZipfFit(slope, intercept, r2, x, y)


# -- split evaluation --------------------------------------------------------


def fingerprint(obj) -> str:
    """sha256 of the canonical JSON form of a (possibly nested) dataclass."""
    if dataclasses.is_dataclass(obj):
        obj = dataclasses.asdict(obj)
    text = json.dumps(obj, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class EvalReport:
    r2: list[float]
    train_fraction: float
    fingerprint: str
    guard_flags: list[int] = field(default_factory=list)
    test_ids: list[list] = field(default_factory=list)

    @property
    def repetitions(self) -> int:
        return len(self.r2)

    @property
    def mean(self) -> float:
        return float(np.mean(self.r2))

    @property
    def std(self) -> float:
        return float(np.std(self.r2))

    @property
    def median(self) -> float:
        return float(np.median(self.r2))

    def rows(self) -> list[tuple]:
        flags = self.guard_flags or [0] * len(self.r2)
        return [(k, repr(float(v)), int(f)) for k, (v, f) in enumerate(zip(self.r2, flags))]

    def summary(self) -> dict:
        return {"repetitions": self.repetitions, "train_fraction": self.train_fraction,
                "mean": self.mean, "std": self.std, "median": self.median,
                "guard_flags": int(sum(self.guard_flags)), "fingerprint": self.fingerprint}


def split(ids: Sequence, train_fraction: float, seed: int, min_train: int = 2) -> tuple[list, list]:
    """Seeded random partition; the training side holds ``round(fraction * n)`` districts."""
    if not 0 < train_fraction < 1:
        raise ValueError("train fraction must lie in (0, 1)")
    n = len(ids)
    n_train = int(round(train_fraction * n))
    if n_train < min_train or n - n_train < 2:
        raise ValueError(f"{n} districts cannot give {min_train}+ training and 2+ test districts "
                         f"at fraction {train_fraction}")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 17])).permutation(n)
    ids = list(ids)
    return [ids[k] for k in perm[:n_train]], [ids[k] for k in perm[n_train:]]


def _rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


Predictor = Callable[[World, list, list, int], np.ndarray]


def evaluate(world: World, indicator: str, config: PipelineConfig | None = None, repetitions: int = 100,
             seed: int = 0, train_fraction: float = 0.8, stages: Stages | None = None, share_stages: bool = True,
             predictor: Predictor | None = None, min_train: int = 2) -> EvalReport:
    """Repeated seeded district splits; R² on test districts in the original label scale.

    Steps 1-2 never see district labels, so by default they are trained once and shared; the
    forest and augmentation are refit on every split. ``predictor(world, train_ids, test_ids, seed)``
    replaces the pipeline, e.g. with oracle or baseline predictors.
    """
    config = config or PipelineConfig()
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    ids = [d.district_id for d in world.districts]
    truth = {d.district_id: d.labels[indicator] for d in world.districts}
    if predictor is None and stages is None and share_stages:
        stages = train_stages(world, config, seed)
    r2s, flags, tests = [], [], []
    for rep in range(repetitions):
        rs = _rep_seed(seed, rep)
        train_ids, test_ids = split(ids, train_fraction, rs, min_train)
        try:
            if predictor is not None:
                pred, flag = np.asarray(predictor(world, train_ids, test_ids, rs), dtype=np.float64), 0
            else:
                model = train_pipeline(world, indicator, config, rs, train_ids, stages)
                pred = predict_districts(model, world, [world.district(i) for i in test_ids])
                flag = model.report["guard_flags"]
        except StageError as e:
            raise StageError(f"repetition {rep}/{e.stage}", e.__cause__) from e
        r2s.append(r_squared([truth[i] for i in test_ids], pred))
        flags.append(int(flag))
        tests.append(list(test_ids))
    fp = fingerprint({"config": dataclasses.asdict(config), "indicator": indicator, "seed": seed,
                      "repetitions": repetitions, "train_fraction": train_fraction,
                      "world": dataclasses.asdict(world.spec), "world_seed": world.seed})
    return EvalReport(r2s, train_fraction, fp, flags, tests)


def robustness_curve(world: World, indicator: str, train_fractions: Sequence[float], with_augmentation: bool,
                     seed: int, config: PipelineConfig | None = None, repetitions: int = 10,
                     stages: Stages | None = None) -> dict[float, EvalReport]:
    """``evaluate`` at each training fraction with augmentation switched on or off."""
    config = dataclasses.replace(config or PipelineConfig(), augment=with_augmentation)
    n = len(world.districts)
    for f in train_fractions:
        if not 0 < f < 1 or int(round(f * n)) < 5:
            raise ValueError(f"fraction {f} leaves fewer than 5 training districts out of {n}")
    if stages is None:
        stages = train_stages(world, config, seed)
    return {float(f): evaluate(world, indicator, config, repetitions, seed, f, stages, min_train=5)
            for f in train_fractions}


def transfer_eval(source: World, target: World, indicator: str, config: PipelineConfig | None = None,
                  seed: int = 0, model: MultiLevelModel | None = None) -> float:
    """Spearman between a source-trained model's predictions and the target world's labels."""
    if source.spec.feature_dim != target.spec.feature_dim:
        raise ValueError(f"feature_dim {source.spec.feature_dim} vs {target.spec.feature_dim}")
    if model is None:
        model = train_pipeline(source, indicator, config or PipelineConfig(), seed)
    pred = predict_districts(model, target)
    return correlation([d.labels[indicator] for d in target.districts], pred, "spearman")


def transfer_grid(worlds: Sequence[World], indicator: str, config: PipelineConfig | None = None,
                  seed: int = 0) -> np.ndarray:
    """Spearman matrix; row = source world, column = target world."""
    out = np.empty((len(worlds), len(worlds)))
    for i, src in enumerate(worlds):
        model = train_pipeline(src, indicator, config or PipelineConfig(), seed)
        for j, tgt in enumerate(worlds):
            out[i, j] = transfer_eval(src, tgt, indicator, seed=seed, model=model)
    return out


def _tile_factors(model: MultiLevelModel, world: World, factors=None) -> np.ndarray:
    """``e^h`` of each tile's district, as a per-tile array."""
    if factors is None:
        factors = scaling_factors(model, world)
    return np.asarray(factors, dtype=np.float64)[world.tile_district_positions()]


def hyperlocal_eval(world: World, model: MultiLevelModel, factors=None) -> tuple[float, float, float, float]:
    """(pearson original, pearson adjusted, spearman original, spearman adjusted) against tile truth.

    ``factors`` overrides the per-district ``e^h``.
    """
    truth = tile_truth(world)
    original = score_tiles(model.score_model, world.tiles)
    adjusted = original * _tile_factors(model, world, factors)
    return (correlation(original, truth), correlation(adjusted, truth),
            correlation(original, truth, "spearman"), correlation(adjusted, truth, "spearman"))


@dataclass
class InequalityResult:
    district_gini: dict
    national: dict  # original, factor, adjusted
    oracle_district_gini: dict
    oracle_national: float


def inequality_eval(world: World, model: MultiLevelModel, factor_mode: str = "district",
                    factors=None) -> InequalityResult:
    """Per-district Gini of clamped scores and national Gini of three score variants.

    ``factor_mode`` sets the population of the factor-only variant: one value per district, or
    each district's factor replicated over its tiles.
    """
    if factor_mode not in ("district", "tile"):
        raise ValueError(f"unknown factor_mode {factor_mode!r}")
    pos = np.maximum(score_tiles(model.score_model, world.tiles), 0.0)
    fac = scaling_factors(model, world) if factors is None else np.asarray(factors, dtype=np.float64)
    per_tile = fac[world.tile_district_positions()]
    truth = tile_truth(world)
    groups = [world.rows(d.tile_ids) for d in world.districts]
    district_gini = {d.district_id: gini(pos[g]) for d, g in zip(world.districts, groups)}
    oracle_district = {}
    for d, g in zip(world.districts, groups):
        oracle_district[d.district_id] = gini(truth[g]) if truth[g].sum() > 0 else float("nan")
    national = {"original": gini(pos),
                "factor": gini(fac if factor_mode == "district" else per_tile),
                "adjusted": gini(pos * per_tile)}
    return InequalityResult(district_gini, national, oracle_district, gini(truth))


def inequality_suite(worlds: Sequence[World], config: PipelineConfig | None = None, seed: int = 0,
                     indicator: str = "power", factor_mode: str = "district") -> tuple[list[dict], dict]:
    """National Gini variants per world and their Pearson correlation with the oracle Gini."""
    rows = []
    for w in worlds:
        model = train_pipeline(w, indicator, config or PipelineConfig(), seed)
        res = inequality_eval(w, model, factor_mode)
        rows.append({"oracle": res.oracle_national, **res.national})
    oracle = [r["oracle"] for r in rows]
    corr = {k: correlation([r[k] for r in rows], oracle) for k in ("original", "factor", "adjusted")}
    return rows, corr
