"""District augmentation, log-ratio scaling targets, and the multi-level predictor."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .districtrep import Member, feature_matrix, fit_pca, project_tiles
from .encfeat import (Encoder, EncoderConfig, embed, filter_inhabited, score_body, train_encoder,
                      train_proxy_encoder)
from .forest import ForestConfig, RegressionForest, fit_forest, forest_predict
from .hyperlocal import OrdinalConfig, ScoreModel, score_tiles, train_score_model
from .synthworld import District, World, sample_surrogate_labels

AUG_MODES = ("sum", "tile_weighted_mean")
DEFAULT_MEMBERS = (("surrogate", 0), ("surrogate", 30), ("surrogate", 90),
                   ("proxy", 0), ("proxy", 30), ("proxy", 90))
INTENSIVE = {"power_per_tile"}


class LabelError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"{stage}: {err}")
        self.stage = stage
        self.__cause__ = err


# -- augmentation ------------------------------------------------------------


@dataclass
class AugmentedEntry:
    district: District
    label: float
    provenance: tuple  # ("original", id) or ("union", id_i, id_j)


@dataclass
class AugmentedSet:
    entries: list[AugmentedEntry]

    def __len__(self) -> int:
        return len(self.entries)


def augment_districts(districts: Sequence[tuple[District, float]], mode: str = "sum",
                      max_pairs: int | None = None, seed: int = 0) -> AugmentedSet:
    """Originals plus one union per unordered pair; all pairs unless ``max_pairs`` caps them."""
    if mode not in AUG_MODES:
        raise ValueError(f"unknown augmentation mode {mode!r}")
    if len(districts) < 1:
        raise ValueError("need at least one district")
    ids = [d.district_id for d, _ in districts]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate district ids")
    for _, y in districts:
        if not np.isfinite(y):
            raise LabelError("non-finite label")
    entries = [AugmentedEntry(d, float(y), ("original", d.district_id)) for d, y in districts]
    pairs = list(itertools.combinations(range(len(districts)), 2))
    if max_pairs is not None and len(pairs) > max_pairs:
        pick = np.sort(np.random.default_rng(seed).choice(len(pairs), size=max_pairs, replace=False))
        pairs = [pairs[k] for k in pick]
    for i, j in pairs:
        (di, yi), (dj, yj) = districts[i], districts[j]
        if mode == "sum":
            y = yi + yj
        else:
            y = (len(di) * yi + len(dj) * yj) / (len(di) + len(dj))
        union = District(f"{di.district_id}+{dj.district_id}", np.union1d(di.tile_ids, dj.tile_ids))
        entries.append(AugmentedEntry(union, float(y), ("union", di.district_id, dj.district_id)))
    return AugmentedSet(entries)


def scaling_target(label: float, score_sum: float, eps: float = 1e-6) -> tuple[float, bool]:
    """``ln(label / max(score_sum, eps))`` and whether the guard fired."""
    if not label > 0:
        raise LabelError(f"label must be positive, got {label}")
    flagged = score_sum <= eps
    return float(np.log(label / max(score_sum, eps))), bool(flagged)


# -- configuration and model -------------------------------------------------


@dataclass
class PipelineConfig:
    ordinal: OrdinalConfig = field(default_factory=OrdinalConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    members: tuple[tuple[str, int], ...] = DEFAULT_MEMBERS
    n_surrogate: int = 1000
    pca_components: int = 3
    augment: bool = True
    max_pairs: int | None = None
    eps: float = 1e-6
    no_ensemble: bool = False
    no_finetune: bool = False
    no_hyperlocal: bool = False

    def __post_init__(self):
        self.members = tuple((str(s), int(n)) for s, n in self.members)
        for src, n_c in self.members:
            if src not in ("surrogate", "proxy") or n_c < 0:
                raise ValueError(f"bad ensemble member {(src, n_c)}")
        if not self.members:
            raise ValueError("empty ensemble")

    def active_members(self) -> tuple[tuple[str, int], ...]:
        return (("surrogate", 30),) if self.no_ensemble else self.members


@dataclass
class Stages:
    """Step 1 and Step 2 models, which never see district labels."""

    score_model: ScoreModel
    encoders: list[Encoder]
    tags: list[tuple[str, int]]

    def select(self, tags) -> "Stages":
        pos = [self.tags.index(tuple(t)) for t in tags]
        return Stages(self.score_model, [self.encoders[k] for k in pos], [self.tags[k] for k in pos])


@dataclass
class MultiLevelModel:
    score_model: ScoreModel
    members: list[Member]
    forest: RegressionForest
    eps: float = 1e-6
    no_hyperlocal: bool = False
    tags: list[tuple[str, int]] = field(default_factory=list)
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        width = 2 * sum(p.n_components for _, p in self.members) + 1
        if self.forest.n_features != width:
            raise ValueError(f"forest expects {self.forest.n_features} inputs, representation has {width}")


def _member_seed(seed: int, tag: tuple[str, int]) -> int:
    src = 0 if tag[0] == "surrogate" else 1
    return int(np.random.SeedSequence([seed, src, tag[1]]).generate_state(1)[0])


def train_stages(world: World, config: PipelineConfig, seed: int) -> Stages:
    cfg = config
    s_label, s_score = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence([seed, 1]).spawn(2))
    try:
        labeled = sample_surrogate_labels(world, min(cfg.n_surrogate, len(world.tiles)), s_label)
        score = train_score_model(labeled, cfg.ordinal, s_score)
    except Exception as e:
        raise StageError("step1", e) from e
    tags = list(cfg.active_members())
    encoders = []
    try:
        unlabeled = filter_inhabited(score, world.tiles)
        for tag in tags:
            src, n_c = tag
            if cfg.no_finetune:
                encoders.append(score_body(score))
            elif src == "surrogate":
                encoders.append(train_encoder(labeled, unlabeled, score, n_c, seed=_member_seed(seed, tag),
                                              cfg=cfg.encoder))
            else:
                encoders.append(train_proxy_encoder(world.tiles, _member_seed(seed, tag), cfg.encoder,
                                                    score_model=score, n_c=n_c))
    except Exception as e:
        raise StageError("step2", e) from e
    return Stages(score, encoders, tags)


def _multiplier(score_sum: np.ndarray, counts: np.ndarray, no_hyperlocal: bool) -> np.ndarray:
    return counts.astype(np.float64) if no_hyperlocal else score_sum


def representation(model_or_members, score_model: ScoreModel, world: World, groups, no_hyperlocal=False,
                   cache=None):
    """District vectors for row-index groups, plus the per-group multiplier of the final product."""
    members = model_or_members
    if cache is None:
        proj = project_tiles(members, world.tiles)
        scores = score_tiles(score_model, world.tiles)
    else:
        proj, scores = cache
    R = feature_matrix(proj, scores, groups)
    counts = np.array([len(g) for g in groups])
    mult = _multiplier(R[:, -1].copy(), counts, no_hyperlocal)
    if no_hyperlocal:
        R[:, -1] = counts
    return R, mult


def fit_scaling(world: World, stages: Stages, train_ids: Sequence, indicator: str, config: PipelineConfig,
                seed: int) -> MultiLevelModel:
    """PCA fits, augmentation, log-ratio targets and the forest, on the training districts only."""
    try:
        train = [world.district(i) for i in train_ids]
        train_rows = np.concatenate([world.rows(d.tile_ids) for d in train])
        train_tiles = world.tiles.subset(train_rows)
        inhabited = filter_inhabited(stages.score_model, train_tiles)
        fit_on = inhabited if len(inhabited) > config.pca_components else train_tiles
        members = [(enc, fit_pca(embed(enc, fit_on), config.pca_components)) for enc in stages.encoders]
    except Exception as e:
        raise StageError("step2-pca", e) from e
    try:
        pairs = [(d, d.labels[indicator]) for d in train]
        if config.augment:
            mode = "tile_weighted_mean" if indicator in INTENSIVE else "sum"
            aug = augment_districts(pairs, mode, config.max_pairs, seed)
        else:
            aug = AugmentedSet([AugmentedEntry(d, y, ("original", d.district_id)) for d, y in pairs])
        proj = project_tiles(members, world.tiles)
        scores = score_tiles(stages.score_model, world.tiles)
        groups = [world.rows(e.district.tile_ids) for e in aug.entries]
        R, mult = representation(members, stages.score_model, world, groups, config.no_hyperlocal, (proj, scores))
        targets, keep, flags = [], [], 0
        for k, e in enumerate(aug.entries):
            if not e.label > 0:
                continue
            t, flagged = scaling_target(e.label, mult[k], config.eps)
            flags += flagged
            targets.append(t)
            keep.append(k)
        forest = fit_forest(R[keep], np.array(targets), config.forest, seed)
    except Exception as e:
        raise StageError("step3", e) from e
    report = {"guard_flags": int(flags), "dropped_nonpositive": len(aug) - len(keep), "n_train": len(keep)}
    return MultiLevelModel(stages.score_model, members, forest, config.eps, config.no_hyperlocal,
                           list(stages.tags), report)


def train_pipeline(world: World, indicator: str, config: PipelineConfig | None = None, seed: int = 0,
                   train_ids: Sequence | None = None, stages: Stages | None = None) -> MultiLevelModel:
    """Steps 1-3 end to end. ``train_ids`` defaults to every district."""
    config = config or PipelineConfig()
    if indicator not in world.districts[0].labels:
        raise KeyError(f"unknown indicator {indicator!r}")
    tags = list(config.active_members())
    if stages is None:
        stages = train_stages(world, config, seed)
    elif config.no_finetune:
        stages = Stages(stages.score_model, [score_body(stages.score_model) for _ in tags], tags)
    else:
        stages = stages.select(tags)
    if train_ids is None:
        train_ids = [d.district_id for d in world.districts]
    return fit_scaling(world, stages, train_ids, indicator, config, seed)


def tile_cache(model: MultiLevelModel, world: World):
    return project_tiles(model.members, world.tiles), score_tiles(model.score_model, world.tiles)


def district_parts(model: MultiLevelModel, world: World, districts: Sequence[District], cache=None):
    """Multiplier (score sum or tile count) and forest output for each district."""
    groups = [world.rows(d.tile_ids) for d in districts]
    if any(len(g) == 0 for g in groups):
        raise ValueError("empty district")
    R, mult = representation(model.members, model.score_model, world, groups, model.no_hyperlocal,
                             cache or tile_cache(model, world))
    return np.maximum(mult, model.eps), np.atleast_1d(forest_predict(model.forest, R))


def predict_districts(model: MultiLevelModel, world: World, districts: Sequence[District] | None = None,
                      cache=None) -> np.ndarray:
    districts = world.districts if districts is None else districts
    mult, h = district_parts(model, world, districts, cache)
    return mult * np.exp(h)


def predict_district(model: MultiLevelModel, world: World, district: District) -> float:
    return float(predict_districts(model, world, [district])[0])


def combine(score_sum: float, h: float, eps: float = 1e-6) -> float:
    """The final product ``max(score_sum, eps) * exp(h)``."""
    return max(score_sum, eps) * float(np.exp(h))


def scaling_factors(model: MultiLevelModel, world: World, districts=None, cache=None) -> np.ndarray:
    """``exp(h)`` for each district."""
    districts = world.districts if districts is None else districts
    return np.exp(district_parts(model, world, districts, cache)[1])
