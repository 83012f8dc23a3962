import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fsum.errors import DegenerateInputError
from fsum.fsum_map import NormalizationStats
from fsum.scoring import (
    brute_force_oracle,
    difficulty_from_scores,
    harmonic,
    k_values,
    ripley_k,
    score_map,
    weighted_k_score,
)

H10 = sum(1.0 / r for r in range(1, 11))

maps = st.tuples(st.integers(1, 7), st.integers(1, 7)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(0, 1, allow_nan=False))
)


def test_two_by_two_ones_hand_case():
    w = np.ones((2, 2))
    # 4 cells x 2 neighbours at d=1, 4 x 1 at d=sqrt(2), all / n=4
    assert k_values(w, 3) == [2.0, 1.0, 0.0]
    assert weighted_k_score(w) == pytest.approx(2.5 / H10, abs=1e-12)
    assert abs(weighted_k_score(w) - 0.8535428803685138) < 1e-12


def test_closed_bins_double_count_boundaries():
    w = np.ones((2, 2))
    # sqrt(1) sits on both the first and second closed bin
    assert k_values(w, 2, closed=True) == [2.0, 3.0]
    assert weighted_k_score(w, closed=True) == pytest.approx(brute_force_oracle(w, closed=True), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(maps, st.integers(1, 12), st.booleans())
def test_fast_path_matches_oracle(w, R, closed):
    assert weighted_k_score(w, R, closed) == pytest.approx(brute_force_oracle(w, R, closed), abs=1e-9)


def test_single_cell_map_scores_zero():
    assert weighted_k_score([[0.7]]) == 0.0


@settings(max_examples=60, deadline=None)
@given(maps)
def test_symmetries(w):
    s = weighted_k_score(w)
    for t in (np.fliplr(w), np.flipud(w), np.rot90(w), np.rot90(w, 2), w.T):
        assert weighted_k_score(t) == pytest.approx(s, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(maps, st.floats(0.0, 4.0))
def test_quadratic_scaling(w, c):
    assert weighted_k_score(c * w) == pytest.approx(c * c * weighted_k_score(w), abs=1e-12)


def test_uniform_maps_monotone_in_value():
    vals = np.linspace(0, 1, 11)
    scores = [weighted_k_score(np.full((9, 12), v)) for v in vals]
    assert np.all(np.diff(scores) > 0)


def test_clustered_beats_dispersed():
    clustered = np.zeros((8, 8))
    clustered[:4, :4] = 1.0
    dispersed = np.zeros((8, 8))
    dispersed[::2, ::2] = 1.0
    assert clustered.sum() == dispersed.sum()
    assert weighted_k_score(clustered) > weighted_k_score(dispersed)


def test_ripley_k_and_validation():
    w = np.ones((3, 3))
    assert ripley_k(w, 1) == k_values(w, 1)[0]
    with pytest.raises(ValueError):
        k_values(w, 0)
    with pytest.raises(ValueError):
        weighted_k_score(np.ones(4))
    assert harmonic(10) == pytest.approx(H10)


def test_score_map_report():
    rep = score_map(np.ones((2, 2)), "a", R=10)
    assert rep.n_cells == 4 and len(rep.k_values) == 10
    row = rep.to_row()
    assert row["image_id"] == "a" and float(row["s_raw"]) == rep.s_raw


def test_difficulty_inversion_and_stats():
    d, stats = difficulty_from_scores([1.0, 3.0, 2.0])
    assert d == [1.0, 0.0, 0.5]
    d2, _ = difficulty_from_scores([0.0, 4.0], stats=stats)
    assert d2 == [1.0, 0.0]  # clipped to the stored range
    with pytest.raises(DegenerateInputError):
        difficulty_from_scores([2.0, 2.0])
    d3, _ = difficulty_from_scores([2.0, 2.0], fallback=True)
    assert d3 == [0.5, 0.5]
    assert isinstance(stats, NormalizationStats)
