import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topovoc.features import (
    FEATURE_COLUMNS,
    AssemblyError,
    assemble,
    diagram_features,
    diagram_p_norm,
    feature_names,
    fit_persistent_variable,
    lifetime_stats,
    persistent_betti,
    persistent_entropy,
    read_features_csv,
    write_features_csv,
)
from topovoc.persistence import PersistenceDiagram, sublevel_cubical_persistence


def diagram(pairs, dim=0, source="embedding"):
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    n = len(pairs)
    cap = float(pairs[:, 1].max()) if n else 0.0
    return PersistenceDiagram(pairs[:, 0], pairs[:, 1], np.full(n, dim), np.zeros(n, bool), cap, source)


def lifetimes(values):
    return diagram([(0.0, v) for v in values])


def test_entropy_examples():
    assert persistent_entropy(lifetimes([3.0]), 0) == 0.0
    assert persistent_entropy(lifetimes([2.0, 2.0]), 0) == pytest.approx(math.log(2))
    assert persistent_entropy(lifetimes([1.0, 3.0]), 0) == pytest.approx(-(0.25 * math.log(0.25) + 0.75 * math.log(0.75)))
    assert persistent_entropy(lifetimes([1.0, 3.0]), 0) == pytest.approx(0.5623, abs=1e-4)
    assert persistent_entropy(lifetimes([]), 0) == 0.0
    assert persistent_entropy(lifetimes([0.0, 2.0]), 0) == 0.0


def test_p_norm_examples():
    assert diagram_p_norm(lifetimes([2.0]), 0) == 2.0
    assert diagram_p_norm(lifetimes([3.0, 4.0]), 0) == pytest.approx(5.0)
    life = [0.5, 1.5, 4.0]
    assert diagram_p_norm(lifetimes(life), 0, p=1) == pytest.approx(lifetime_stats(lifetimes(life), 0)[4])
    assert diagram_p_norm(lifetimes([]), 0) == 0.0


def test_betti_examples():
    dg = diagram([(0, 2), (1, 3)])
    assert persistent_betti(dg, 0, -1.0) == 0
    assert persistent_betti(dg, 0, 1.5) == 2
    assert persistent_betti(dg, 0, 2.0) == 1


def test_lifetime_stats_examples():
    assert lifetime_stats(lifetimes([]), 0) == (0, 0.0, 0.0, 0.0, 0.0)
    assert lifetime_stats(lifetimes([2.0, 2.0]), 0) == (2, 2.0, 0.0, 2.0, 4.0)
    c, m, s, mx, sm = lifetime_stats(lifetimes([1.0, 2.0, 3.0]), 0)
    assert (c, m, mx, sm) == (3, 2.0, 3.0, 6.0)
    assert s == pytest.approx(0.8165, abs=1e-4)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=30), st.floats(0.01, 100.0))
def test_entropy_bound_and_norm_monotone(values, extra):
    dg = lifetimes(values)
    assert persistent_entropy(dg, 0) <= math.log(len(values)) + 1e-12
    assert persistent_entropy(dg, 0) >= 0.0
    assert diagram_p_norm(lifetimes(values + [extra]), 0) >= diagram_p_norm(dg, 0)
    c, m, s, mx, sm = lifetime_stats(dg, 0)
    assert mx >= m - 1e-12 >= -1e-12


def test_feature_vector_layout():
    assert feature_names(1)[:2] == ["h0_entropy", "h0_p_norm"]
    assert len(feature_names(2)) == 24
    dg = sublevel_cubical_persistence(np.random.default_rng(0).random((8, 8)))
    v = diagram_features(dg)
    assert v.shape == (16,)
    assert v[3] == len(dg.select(0)[0])  # h0 lifetime_count includes the capped class


def test_pca_two_clips_ratio_one():
    rows = np.array([[1.0, 2.0, 3.0], [2.0, 0.0, 5.0]])
    model, scores = fit_persistent_variable(rows, ["a", "h0_lifetime_sum", "c"])
    assert model.explained_variance_ratio == pytest.approx(1.0)
    assert abs(scores.sum()) < 1e-8


def test_pca_perfectly_correlated_ratio_one():
    t = np.random.default_rng(0).normal(size=20)
    rows = np.column_stack([t, 2 * t + 1, -3 * t])
    model, _ = fit_persistent_variable(rows, ["h0_lifetime_sum", "b", "c"])
    assert model.explained_variance_ratio == pytest.approx(1.0)


def test_pca_invariants_and_sign():
    rng = np.random.default_rng(4)
    rows = rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6))
    names = ["x0", "h0_lifetime_sum", "x2", "x3", "x4", "x5"]
    model, scores = fit_persistent_variable(rows, names)
    assert model.all_ratios.sum() == pytest.approx(1.0)
    assert model.explained_variance_ratio == pytest.approx(model.all_ratios.max())
    assert np.linalg.norm(model.axis) == pytest.approx(1.0)
    assert abs(scores.mean()) < 1e-8
    assert model.axis[names.index("h0_lifetime_sum")] >= 0
    np.testing.assert_allclose(model.transform(rows, names), scores)


def test_pca_drops_constant_columns(caplog):
    rng = np.random.default_rng(1)
    rows = np.column_stack([rng.normal(size=10), np.full(10, 7.0), rng.normal(size=10)])
    with caplog.at_level(logging.WARNING):
        model, scores = fit_persistent_variable(rows, ["a", "const", "h0_lifetime_sum"])
    assert model.dropped == ["const"]
    assert "const" in caplog.text
    assert np.all(np.isfinite(scores))


def test_assemble():
    v = assemble(np.zeros(12), 0.0, 0.0, "x", 3)
    assert v.as_array().shape == (14,)
    assert not np.any(v.as_array())
    a = assemble(np.arange(12.0), 1.5, -2.0, "x", 3).as_array()
    b = assemble(np.arange(12.0), 1.5, -2.0, "x", 3).as_array()
    assert a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(a[12:], [1.5, -2.0])


def test_assemble_rejects_non_finite_with_stage():
    with pytest.raises(AssemblyError, match="embedding"):
        assemble(np.zeros(12), 0.0, np.nan, "x", 1)
    with pytest.raises(AssemblyError, match="mfcc"):
        assemble(np.full(12, np.inf), 0.0, 0.0, "x", 1)
    with pytest.raises(AssemblyError):
        assemble(np.zeros(11), 0.0, 0.0, "x", 1)


def test_features_csv_roundtrip(tmp_path):
    vecs = [assemble(np.random.default_rng(i).normal(size=12), 0.1 * i, -0.2 * i, f"c{i}", i + 1) for i in range(3)]
    write_features_csv(tmp_path / "f.csv", vecs)
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header == ["id", "month", *FEATURE_COLUMNS]
    back = read_features_csv(tmp_path / "f.csv")
    for a, b in zip(vecs, back):
        assert a.as_array().tobytes() == b.as_array().tobytes()
        assert (a.id, a.month) == (b.id, b.month)
