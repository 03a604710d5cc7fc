import numpy as np
import pytest

from topovoc.acoustics import PROFILE_COLUMNS
from topovoc.report import (
    cluster_by_month,
    emit_figure,
    garbage_candidates,
    median_table,
    month_by_cluster,
    write_proportion_csv,
)

CLUSTERS = [1, 1, 2, 2, 2, 3, 1, 2]
MONTHS = [1, 2, 2, 5, 5, 5, 1, 1]


def test_cluster_by_month_rows_sum_to_100():
    t = cluster_by_month(CLUSTERS, MONTHS)
    assert t.rows == [1, 2, 3] and t.cols == [1, 2, 5]
    np.testing.assert_allclose(t.values.sum(axis=1), 100.0)
    np.testing.assert_allclose(t.values[0], [200 / 3, 100 / 3, 0.0])


def test_month_by_cluster_columns_sum_to_100():
    t = month_by_cluster(CLUSTERS, MONTHS)
    np.testing.assert_allclose(t.values.sum(axis=0), 100.0)
    np.testing.assert_allclose(t.values[:, 2], [0.0, 200 / 3, 100 / 3])


def test_median_table_ignores_nan():
    P = np.arange(3 * len(PROFILE_COLUMNS), dtype=float).reshape(3, -1)
    P[1, 1] = np.nan
    med = median_table([7, 7, 7], P)
    assert med[7]["duration"] == P[1, 0]
    assert med[7]["pitch"] == pytest.approx(np.mean([P[0, 1], P[2, 1]]))
    P[:, 2] = np.nan
    assert np.isnan(median_table([7, 7, 7], P)[7]["f1"])


def test_garbage_candidates_flagged_not_removed():
    clusters = [1] * 995 + [2] * 4 + [3]
    assert garbage_candidates(clusters, 0.005) == [2, 3]
    assert garbage_candidates(clusters, 0.0) == []
    assert len(clusters) == 1000


def test_proportion_csv(tmp_path):
    write_proportion_csv(tmp_path / "t.csv", cluster_by_month(CLUSTERS, MONTHS))
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "cluster,month_1,month_2,month_5"
    for line in lines[1:]:
        assert sum(float(v) for v in line.split(",")[1:]) == pytest.approx(100.0, abs=0.1)


def test_single_cluster_figure(tmp_path):
    t = month_by_cluster([1, 1, 1, 1], [1, 2, 3, 4])
    np.testing.assert_allclose(t.values, 100.0)
    path = emit_figure(t, tmp_path / "f.svg", months=range(1, 5))
    text = open(path).read()
    assert text.startswith("<?xml")
    assert "Cluster 1" in text
    assert "no data" not in text


def test_missing_month_renders_gap(tmp_path):
    t = month_by_cluster([1, 2, 1, 2], [1, 1, 3, 3])
    text = open(emit_figure(t, tmp_path / "f.svg", months=[1, 2, 3])).read()
    assert text.count("no data") == 1
    assert "Cluster 2" in text


def test_figure_is_deterministic(tmp_path):
    t = month_by_cluster(CLUSTERS, MONTHS)
    a = open(emit_figure(t, tmp_path / "a.svg")).read()
    b = open(emit_figure(t, tmp_path / "b.svg")).read()
    assert a == b
