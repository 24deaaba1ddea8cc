import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geolevels.districtrep import (district_feature, ensemble_feature, feature_matrix, fit_pca, pca_apply,
                                   project_tiles, save_matrix, summarize)
from geolevels.encfeat import score_body
from geolevels.hyperlocal import score_tiles
from geolevels.neural import ShapeError


def test_pca_recovers_axis_aligned_variance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 3)) * [5.0, 2.0, 0.1]
    p = fit_pca(X, 2)
    assert np.allclose(np.abs(p.components), [[1, 0, 0], [0, 1, 0]], atol=0.05)
    assert p.explained_variance_ratio[0] > p.explained_variance_ratio[1]


def test_pca_line_has_all_variance_in_first_component():
    t = np.linspace(-1, 1, 50)
    p = fit_pca(np.column_stack([t, 2 * t, -t]), 2)
    assert p.explained_variance_ratio[0] == pytest.approx(1.0)
    assert np.allclose(p.components[0], np.array([1, 2, -1]) / np.sqrt(6))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_pca_orthonormal_and_sign_fixed(seed):
    X = np.random.default_rng(seed).normal(size=(40, 6))
    p = fit_pca(X, 3)
    assert np.allclose(p.components @ p.components.T, np.eye(3), atol=1e-10)
    assert all(row[np.argmax(np.abs(row))] > 0 for row in p.components)
    proj = pca_apply(p, X)
    assert np.allclose(proj.mean(0), 0, atol=1e-10)
    assert np.all(np.diff(proj.var(0)) <= 1e-10)


def test_pca_rejects_bad_inputs():
    with pytest.raises(ValueError):
        fit_pca(np.ones((10, 3)), 2)
    with pytest.raises(ValueError):
        fit_pca(np.zeros((3, 4)), 3)
    with pytest.raises(ValueError):
        fit_pca(np.zeros((10, 2)), 3)
    with pytest.raises(ShapeError):
        pca_apply(fit_pca(np.random.default_rng(0).normal(size=(10, 4)), 2), np.ones(5))


def test_summary_hand_values():
    proj = np.array([[1.0, 0.0], [3.0, 4.0]])
    out = summarize(proj, np.array([2.0, 5.0]))
    assert np.array_equal(out, [2.0, 2.0, 1.0, 2.0, 7.0])


def test_single_tile_district_has_zero_spread():
    out = summarize(np.array([[0.5, -1.0, 2.0]]), np.array([3.0]))
    assert np.array_equal(out[3:6], np.zeros(3)) and out[-1] == 3.0
    with pytest.raises(ValueError):
        summarize(np.zeros((0, 3)), np.zeros(0))


def _members(stages, world, k):
    from geolevels.encfeat import embed
    return [(e, fit_pca(embed(e, world.tiles), 3)) for e in stages.encoders[:k]]


def test_feature_lengths(small_world, small_stages):
    d = small_world.districts[0]
    tiles = small_world.tiles.subset(small_world.rows(d.tile_ids))
    members = _members(small_stages, small_world, 4)
    assert ensemble_feature(members, small_stages.score_model, tiles).shape == (25,)
    assert district_feature(members[0], small_stages.score_model, tiles).shape == (7,)


def test_six_member_ensemble_has_37_entries(small_world, small_stages):
    members = _members(small_stages, small_world, 4)
    members += members[:2]
    tiles = small_world.tiles.subset(small_world.rows(small_world.districts[1].tile_ids))
    r = ensemble_feature(members, small_stages.score_model, tiles)
    assert r.shape == (37,)
    assert r[-1] == pytest.approx(score_tiles(small_stages.score_model, tiles).sum())


def test_permutation_invariant(small_world, small_stages):
    members = _members(small_stages, small_world, 2)
    tiles = small_world.tiles.subset(small_world.rows(small_world.districts[2].tile_ids))
    perm = np.random.default_rng(1).permutation(len(tiles))
    a = ensemble_feature(members, small_stages.score_model, tiles)
    b = ensemble_feature(members, small_stages.score_model, tiles.subset(perm))
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_union_score_sum_is_additive(small_world, small_stages):
    members = _members(small_stages, small_world, 1)
    proj = project_tiles(members, small_world.tiles)
    scores = score_tiles(small_stages.score_model, small_world.tiles)
    g1, g2 = (small_world.rows(d.tile_ids) for d in small_world.districts[:2])
    R = feature_matrix(proj, scores, [g1, g2, np.concatenate([g1, g2])])
    assert R[2, -1] == pytest.approx(R[0, -1] + R[1, -1], rel=1e-12)


def test_score_body_member_uses_score_network(small_world, small_stages):
    enc = score_body(small_stages.score_model)
    assert enc.source == "score" and enc.n_c == 0


def test_save_matrix(tmp_path):
    save_matrix(tmp_path / "r.csv", ["a", "b"], np.array([[1.0, 0.5], [2.0, 0.25]]))
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines == ["district,r0,r1", "a,1.0,0.5", "b,2.0,0.25"]
