import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geolevels.synthworld import (District, WorldSpec, WorldSpecError, embedding_matrix, generate_world,
                                  load_world, sample_surrogate_labels, soft_labels_for, tile_truth,
                                  world_ground_truth)


def _same_world(a, b):
    for f in ("ids", "district", "features", "true_score", "true_class", "proxy"):
        assert np.array_equal(getattr(a.tiles, f), getattr(b.tiles, f)), f
    assert np.array_equal(a.factors, b.factors)
    assert [d.labels for d in a.districts] == [d.labels for d in b.districts]


def test_counts_follow_spec():
    w = generate_world(WorldSpec(n_districts=10, tiles_per_district=(50, 200)), 0)
    assert len(w.districts) == 10
    assert all(50 <= len(d) <= 200 for d in w.districts)


def test_regeneration_is_bit_identical():
    spec = WorldSpec(n_districts=8)
    _same_world(generate_world(spec, 42), generate_world(spec, 42))


def test_districts_partition_tiles(small_world):
    ids = np.concatenate([d.tile_ids for d in small_world.districts])
    assert len(ids) == len(small_world.tiles)
    assert len(np.unique(ids)) == len(ids)
    assert set(ids) == set(small_world.tiles.ids)


def test_zero_noise_features_are_invertible_linear_map():
    spec = WorldSpec(n_districts=5, feature_noise=0.0, proxy_noise=0.0, flip_prob=0.0, factor_signal=0.0)
    w = generate_world(spec, 1)
    emb = embedding_matrix(spec)[:4]
    latent = np.column_stack([np.eye(3)[w.tiles.true_class], w.tiles.true_score / 10.0])
    assert np.allclose(w.tiles.features, latent @ emb, atol=1e-12)
    # full row rank: least squares recovers the latent exactly
    rec = np.linalg.lstsq(emb.T, w.tiles.features.T, rcond=None)[0].T
    assert np.allclose(rec, latent, atol=1e-9)
    assert np.array_equal(w.tiles.proxy, np.maximum(0.0, w.tiles.true_score))


def test_labels_match_brute_force(small_world):
    w = small_world
    for d, m in zip(w.districts, w.factors):
        total = 0.0
        for t in w.district_tiles(d):
            total += max(0.0, t.true_score)
        assert d.labels["power"] == pytest.approx(total * m, rel=1e-12)
        assert d.labels["power_per_tile"] == pytest.approx(total * m / len(d), rel=1e-12)


def test_multiplicative_construction():
    from geolevels.synthworld import _labels
    w = generate_world(WorldSpec(n_districts=2, tiles_per_district=(20, 20)), 5)
    r0, r1 = (w.rows(d.tile_ids) for d in w.districts)
    w.tiles.true_score[r1] = w.tiles.true_score[r0][::-1]
    w.factors[:] = [1.0, 2.0]
    y0, y1 = _labels(w, "power")
    assert y0 > 0 and y1 == 2.0 * y0


def test_nonpositive_district_has_zero_power():
    spec = WorldSpec(n_districts=3, class_mixture=((1.0, 0.0, 0.0), (1.0, 0.0, 0.0)), mixture_concentration=0.0)
    w = generate_world(spec, 2)
    assert all(d.labels["power"] == 0.0 for d in w.districts)


def test_ground_truth_lookup(small_world):
    gt = world_ground_truth(small_world, "power")
    assert gt == {d.district_id: d.labels["power"] for d in small_world.districts}
    with pytest.raises(KeyError):
        world_ground_truth(small_world, "population")


def test_tile_truth_sums_to_labels(small_world):
    t = tile_truth(small_world)
    for d in small_world.districts:
        assert t[small_world.rows(d.tile_ids)].sum() == pytest.approx(d.labels["power"], rel=1e-12)


def test_surrogate_labels_exact_one_hot_without_flips():
    w = generate_world(WorldSpec(n_districts=20, flip_prob=0.0), 0)
    lab = sample_surrogate_labels(w, 1000, 3)
    assert len(lab) == 1000
    assert len(np.unique(lab.ids)) == 1000
    assert np.array_equal(lab.soft_label, np.eye(3)[lab.true_class])


@given(st.floats(0.0, 0.6), st.lists(st.integers(0, 2), min_size=1, max_size=40))
def test_soft_labels_on_simplex_with_true_argmax(flip, cls):
    lab = soft_labels_for(np.array(cls), flip)
    assert np.allclose(lab.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(lab >= 0)
    assert np.array_equal(lab.argmax(axis=1), cls)


def test_surrogate_sample_too_large(small_world):
    with pytest.raises(ValueError):
        sample_surrogate_labels(small_world, len(small_world.tiles) + 1)


@pytest.mark.parametrize("bad", [
    dict(n_districts=0),
    dict(pareto_alpha=0.0),
    dict(tiles_per_district=(10, 5)),
    dict(true_score_ranges=((-6, 1), (0.5, 9.5), (10.5, 19.5))),
    dict(class_mixture=((0.5, 0.5, 0.5), (0.1, 0.3, 0.6))),
    dict(flip_prob=1.0),
])
def test_invalid_spec_rejected(bad):
    with pytest.raises(WorldSpecError):
        generate_world(WorldSpec(**bad), 0)


def test_spec_dict_round_trip_rejects_unknown():
    spec = WorldSpec(n_districts=7)
    assert WorldSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(WorldSpecError):
        WorldSpec.from_dict({"n_district": 3})


def test_save_load_bit_exact(tmp_path, small_world):
    from geolevels.synthworld import save_world
    save_world(small_world, tmp_path / "w.jsonl")
    back = load_world(tmp_path / "w.jsonl")
    _same_world(small_world, back)
    assert back.spec == small_world.spec and back.seed == small_world.seed
    assert np.array_equal(np.isnan(back.tiles.soft_label), np.isnan(small_world.tiles.soft_label))


def test_factors_log_log_linear():
    w = generate_world(WorldSpec(n_districts=2000, tiles_per_district=(1, 1)), 0)
    m = np.sort(w.factors)[::-1]
    x, y = np.log(np.arange(1, len(m) + 1)), np.log(m)
    slope, icpt = np.polyfit(x, y, 1)
    assert abs(slope + 1 / 1.2) < 0.1
    assert np.corrcoef(x, y)[0, 1] < -0.97


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_scores_respect_class_ranges(seed):
    spec = WorldSpec(n_districts=4)
    w = generate_world(spec, seed)
    r = np.asarray(spec.true_score_ranges)
    lo, hi = r[w.tiles.true_class, 0], r[w.tiles.true_class, 1]
    assert np.all((w.tiles.true_score >= lo) & (w.tiles.true_score <= hi))
    assert np.all(w.tiles.proxy >= 0)


def test_district_len():
    assert len(District(0, np.arange(4))) == 4


def test_spec_replace_keeps_validation():
    with pytest.raises(WorldSpecError):
        generate_world(dataclasses.replace(WorldSpec(), feature_noise=-1.0), 0)
