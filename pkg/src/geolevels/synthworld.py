"""Seeded synthetic countries with a multiplicative ground truth.

Every tile has a latent development score ``s*`` and a latent class; every district has a
latent factor ``m*`` drawn from a Pareto law. The extensive "power" indicator of a district is
``sum(max(0, s*)) * m*``, so a model that recovers ``s*`` and ``ln m*`` recovers the label.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

CLASSES = ("uninhabited", "rural", "urban")
INDICATORS = ("power", "power_per_tile")
FORMAT = "geolevels-world"
FORMAT_VERSION = 1


class WorldSpecError(ValueError):
    pass


@dataclass
class WorldSpec:
    n_districts: int = 60
    tiles_per_district: tuple[int, int] = (40, 160)
    feature_dim: int = 16
    # Class mixture of the lowest- and highest-factor districts; a district's mixture is
    # interpolated by its factor position, then jittered with a Dirichlet draw.
    class_mixture: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (0.35, 0.55, 0.10),
        (0.10, 0.35, 0.55),
    )
    mixture_concentration: float = 30.0  # 0 disables jitter
    true_score_ranges: tuple[tuple[float, float], ...] = ((-6.0, -0.5), (0.5, 9.5), (10.5, 19.5))
    pareto_alpha: float = 1.2
    pareto_scale: float = 1.0
    # Per-district development level: within-class scores are lo + (hi - lo) * U**k with
    # ln k = -development_coupling * ln m* + N(0, development_spread), drawn per district and class.
    development_spread: float = 0.5
    development_coupling: float = 0.0
    factor_cap: float = 3.0  # ln m* at which the mixture reaches the high endpoint
    factor_signal: float = 1.0  # weight of ln m* in the tile embedding
    feature_noise: float = 0.3
    proxy_noise: float = 0.5
    flip_prob: float = 0.05
    embedding_seed: int = 0

    def validate(self) -> None:
        lo, hi = self.tiles_per_district
        if self.n_districts < 1:
            raise WorldSpecError("n_districts must be positive")
        if not 1 <= lo <= hi:
            raise WorldSpecError("tiles_per_district must be an ordered positive range")
        if self.feature_dim < 1:
            raise WorldSpecError("feature_dim must be positive")
        if len(self.class_mixture) != 2:
            raise WorldSpecError("class_mixture needs a low and a high endpoint")
        for mix in self.class_mixture:
            if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
                raise WorldSpecError(f"class mixture {mix} is not a distribution over 3 classes")
        ranges = self.true_score_ranges
        if len(ranges) != 3 or any(a >= b for a, b in ranges):
            raise WorldSpecError("true_score_ranges must be three ordered intervals")
        if not (ranges[0][1] <= ranges[1][0] and ranges[1][1] <= ranges[2][0]):
            raise WorldSpecError("true_score_ranges must be ordered and non-overlapping")
        if self.pareto_alpha <= 0 or self.pareto_scale <= 0 or self.factor_cap <= 0:
            raise WorldSpecError("pareto_alpha, pareto_scale and factor_cap must be positive")
        if min(self.feature_noise, self.proxy_noise, self.mixture_concentration, self.development_spread) < 0:
            raise WorldSpecError("noise levels must be non-negative")
        if not 0 <= self.flip_prob < 1:
            raise WorldSpecError("flip_prob must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise WorldSpecError(f"unknown world spec keys: {sorted(unknown)}")
        for key in ("tiles_per_district", "class_mixture", "true_score_ranges"):
            if key in d:
                d[key] = _tuplify(d[key])
        return cls(**d)


def _tuplify(x):
    return tuple(_tuplify(v) for v in x) if isinstance(x, (list, tuple)) else x


class Tile(NamedTuple):
    tile_id: int
    district_id: int
    features: np.ndarray
    true_score: float
    true_class: int
    proxy_intensity: float
    soft_label: np.ndarray | None


@dataclass
class TileTable:
    """Column store of tiles; row subsets are tile sets."""

    ids: np.ndarray
    district: np.ndarray
    features: np.ndarray
    true_score: np.ndarray
    true_class: np.ndarray
    proxy: np.ndarray
    soft_label: np.ndarray  # (n, 3); NaN rows where no label is attached

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, rows) -> "TileTable":
        rows = np.asarray(rows)
        return TileTable(*(getattr(self, f)[rows] for f in _TILE_FIELDS))

    def has_labels(self) -> np.ndarray:
        return ~np.isnan(self.soft_label).any(axis=1)

    def __getitem__(self, row: int) -> Tile:
        lab = self.soft_label[row]
        return Tile(
            int(self.ids[row]),
            int(self.district[row]),
            self.features[row],
            float(self.true_score[row]),
            int(self.true_class[row]),
            float(self.proxy[row]),
            None if np.isnan(lab).any() else lab,
        )

    def __iter__(self) -> Iterator[Tile]:
        return (self[i] for i in range(len(self)))


_TILE_FIELDS = ("ids", "district", "features", "true_score", "true_class", "proxy", "soft_label")


@dataclass
class District:
    district_id: int | str
    tile_ids: np.ndarray
    labels: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tile_ids)


@dataclass
class World:
    spec: WorldSpec
    tiles: TileTable
    districts: list[District]
    factors: np.ndarray  # latent m* per district, in district order
    seed: int

    def __post_init__(self):
        self._row = {int(t): i for i, t in enumerate(self.tiles.ids)}

    def rows(self, tile_ids) -> np.ndarray:
        """Tile-table rows for the given tile ids."""
        try:
            return np.fromiter((self._row[int(t)] for t in tile_ids), dtype=np.int64)
        except KeyError as e:
            raise KeyError(f"unknown tile id {e.args[0]}") from None

    def district(self, district_id) -> District:
        return self.districts[self.district_index(district_id)]

    def district_index(self, district_id) -> int:
        for i, d in enumerate(self.districts):
            if d.district_id == district_id:
                return i
        raise KeyError(f"unknown district {district_id!r}")

    def tile_district_positions(self) -> np.ndarray:
        """Position in ``districts`` of each tile's district, aligned with the tile table."""
        idx = {d.district_id: i for i, d in enumerate(self.districts)}
        return np.fromiter((idx[x.item()] for x in self.tiles.district), dtype=np.int64, count=len(self.tiles))

    def district_tiles(self, district: District) -> TileTable:
        return self.tiles.subset(self.rows(district.tile_ids))


def embedding_matrix(spec: WorldSpec) -> np.ndarray:
    """Fixed linear map from (class one-hot, s*/10, ln m*) to tile features.

    Seeded by ``spec.embedding_seed`` so that worlds sharing it share a feature space.
    """
    rng = np.random.default_rng([spec.embedding_seed, 7919])
    return rng.normal(size=(5, spec.feature_dim))


def _tile_features(spec, emb, cls, s, log_m, noise):
    onehot = np.eye(3)[cls]
    latent = np.column_stack([onehot, s / 10.0, spec.factor_signal * log_m])
    return latent @ emb + noise


def _district_mixture(spec: WorldSpec, log_m: float, rng) -> np.ndarray:
    lo, hi = (np.asarray(m, dtype=float) for m in spec.class_mixture)
    w = min(log_m / spec.factor_cap, 1.0)
    mix = (1 - w) * lo + w * hi
    if spec.mixture_concentration > 0:
        mix = rng.dirichlet(spec.mixture_concentration * mix + 1e-3)
    return mix


def generate_world(spec: WorldSpec, seed: int) -> World:
    spec.validate()
    ss = np.random.SeedSequence(seed)
    r_fac, r_mix, r_tiles, r_noise, r_dev = (np.random.default_rng(s) for s in ss.spawn(5))
    emb = embedding_matrix(spec)
    # classical Pareto: m = scale * U^(-1/alpha)
    factors = spec.pareto_scale * (1.0 - r_fac.random(spec.n_districts)) ** (-1.0 / spec.pareto_alpha)
    log_m = np.log(factors / spec.pareto_scale)
    dev = np.exp(spec.development_spread * r_dev.normal(size=(spec.n_districts, 3))
                 - spec.development_coupling * log_m[:, None])
    lo_n, hi_n = spec.tiles_per_district
    ranges = np.asarray(spec.true_score_ranges, dtype=float)

    cols = {k: [] for k in ("district", "cls", "s", "logm")}
    districts = []
    next_id = 0
    for i in range(spec.n_districts):
        mix = _district_mixture(spec, log_m[i], r_mix)
        n = int(r_tiles.integers(lo_n, hi_n + 1))
        cls = r_tiles.choice(3, size=n, p=mix)
        u = r_tiles.random(n) ** dev[i, cls]
        s = ranges[cls, 0] + (ranges[cls, 1] - ranges[cls, 0]) * u
        districts.append(District(i, np.arange(next_id, next_id + n)))
        next_id += n
        cols["district"].append(np.full(n, i))
        cols["cls"].append(cls)
        cols["s"].append(s)
        cols["logm"].append(np.full(n, log_m[i]))
    district = np.concatenate(cols["district"])
    cls = np.concatenate(cols["cls"])
    s = np.concatenate(cols["s"])
    n_tiles = len(s)
    noise = spec.feature_noise * r_noise.normal(size=(n_tiles, spec.feature_dim))
    features = _tile_features(spec, emb, cls, s, np.concatenate(cols["logm"]), noise)
    proxy = np.maximum(0.0, s + spec.proxy_noise * r_noise.normal(size=n_tiles))
    tiles = TileTable(
        ids=np.arange(n_tiles),
        district=district,
        features=features,
        true_score=s,
        true_class=cls,
        proxy=proxy,
        soft_label=np.full((n_tiles, 3), np.nan),
    )
    world = World(spec, tiles, districts, factors, seed)
    for ind in INDICATORS:
        for d, y in zip(districts, _labels(world, ind)):
            d.labels[ind] = y
    return world


def _labels(world: World, indicator: str) -> list[float]:
    pos = np.maximum(0.0, world.tiles.true_score)
    out = []
    for d, m in zip(world.districts, world.factors):
        total = float(pos[world.rows(d.tile_ids)].sum() * m)
        out.append(total if indicator == "power" else total / len(d))
    return out


def oracle_label(world: World, tile_ids, indicator: str = "power") -> float:
    """Constructed label of an arbitrary union of whole districts, recomputed from its tiles."""
    if indicator not in INDICATORS:
        raise KeyError(f"unknown indicator {indicator!r}; known: {INDICATORS}")
    rows = world.rows(tile_ids)
    owner = world.tile_district_positions()[rows]
    pos = np.maximum(0.0, world.tiles.true_score)
    total, count = 0.0, 0
    for k in np.unique(owner):
        d = world.districts[k]
        own = world.rows(d.tile_ids)
        if np.count_nonzero(owner == k) != len(own):
            raise ValueError(f"tile set splits district {d.district_id!r}")
        total += float(pos[own].sum() * world.factors[k])
        count += len(d)
    return total if indicator == "power" else total / count


def world_ground_truth(world: World, indicator: str) -> dict:
    """Constructed district labels for ``indicator``.

    "power" is extensive (sums under district union); "power_per_tile" is its
    tile-count-weighted mean.
    """
    if indicator not in INDICATORS:
        raise KeyError(f"unknown indicator {indicator!r}; known: {INDICATORS}")
    return {d.district_id: d.labels[indicator] for d in world.districts}


def tile_truth(world: World) -> np.ndarray:
    """Per-tile economic truth ``max(0, s*) * m*`` aligned with the tile table."""
    m = world.factors[world.tile_district_positions()]
    return np.maximum(0.0, world.tiles.true_score) * m


def soft_labels_for(true_class: np.ndarray, flip_prob: float) -> np.ndarray:
    """One-hot of the true class with ``flip_prob`` mass spread over the other classes."""
    lab = np.full((len(true_class), 3), flip_prob / 2.0)
    lab[np.arange(len(true_class)), true_class] = 1.0 - flip_prob
    return lab / lab.sum(axis=1, keepdims=True)


def sample_surrogate_labels(world: World, n: int = 1000, seed: int = 0) -> TileTable:
    if n < 1:
        raise ValueError("n must be positive")
    if n > len(world.tiles):
        raise ValueError(f"cannot sample {n} tiles from {len(world.tiles)}")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(world.tiles), size=n, replace=False))
    labeled = world.tiles.subset(rows)
    labeled.soft_label = soft_labels_for(labeled.true_class, world.spec.flip_prob)
    return labeled


# -- line-delimited export ---------------------------------------------------


def _floats(a) -> list:
    return [float(x) for x in np.asarray(a).ravel()]


def world_to_text(world: World) -> str:
    """JSON lines: a header, one record per tile, one per district."""
    lines = [
        json.dumps({"type": "header", "format": FORMAT, "version": FORMAT_VERSION,
                    "spec": world.spec.to_dict(), "seed": world.seed})
    ]
    t = world.tiles
    for i in range(len(t)):
        rec = {
            "type": "tile",
            "id": int(t.ids[i]),
            "district": int(t.district[i]),
            "features": _floats(t.features[i]),
            "true_score": float(t.true_score[i]),
            "true_class": int(t.true_class[i]),
            "proxy": float(t.proxy[i]),
        }
        if not np.isnan(t.soft_label[i]).any():
            rec["soft_label"] = _floats(t.soft_label[i])
        lines.append(json.dumps(rec))
    for d, m in zip(world.districts, world.factors):
        lines.append(json.dumps({"type": "district", "id": d.district_id, "tiles": [int(x) for x in d.tile_ids],
                                 "labels": d.labels, "factor": float(m)}))
    return "\n".join(lines) + "\n"


def save_world(world: World, path) -> None:
    Path(path).write_text(world_to_text(world))


def load_world(path) -> World:
    header = None
    tiles, districts, factors = [], [], []
    with open(path) as fh:
        for n, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("type")
            if n == 0:
                if kind != "header" or rec.get("format") != FORMAT:
                    raise ValueError(f"{path}: not a {FORMAT} file")
                if rec.get("version") != FORMAT_VERSION:
                    raise ValueError(f"{path}: format version {rec.get('version')} != {FORMAT_VERSION}")
                header = rec
            elif kind == "tile":
                tiles.append(rec)
            elif kind == "district":
                districts.append(District(rec["id"], np.asarray(rec["tiles"], dtype=np.int64), dict(rec["labels"])))
                factors.append(rec["factor"])
            else:
                raise ValueError(f"{path}:{n + 1}: unknown record type {kind!r}")
    if header is None:
        raise ValueError(f"{path}: empty dataset")
    spec = WorldSpec.from_dict(header["spec"])
    table = TileTable(
        ids=np.array([r["id"] for r in tiles], dtype=np.int64),
        district=np.array([r["district"] for r in tiles], dtype=np.int64),
        features=np.array([r["features"] for r in tiles], dtype=np.float64).reshape(len(tiles), spec.feature_dim),
        true_score=np.array([r["true_score"] for r in tiles], dtype=np.float64),
        true_class=np.array([r["true_class"] for r in tiles], dtype=np.int64),
        proxy=np.array([r["proxy"] for r in tiles], dtype=np.float64),
        soft_label=np.array([r.get("soft_label", [np.nan] * 3) for r in tiles], dtype=np.float64).reshape(-1, 3),
    )
    return World(spec, table, districts, np.asarray(factors, dtype=np.float64), header["seed"])
