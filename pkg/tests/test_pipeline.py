import csv
import shutil

import numpy as np
import pytest

from topovoc import cli
from topovoc.config import DPMMConfig, PipelineConfig, load_config
from topovoc.pipeline import StageError, run, run_cluster
from topovoc.synthetic import make_corpus

SMALL_DPMM = "[dpmm]\niters = 60\nburnin = 20\nseed = 3\n"


def write_config(path, manifest, out, extra=SMALL_DPMM):
    path.write_text(f'manifest = "{manifest}"\noutput_dir = "{out}"\n{extra}')
    return path


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest, labels = make_corpus(root, n_per_family=3, duration_range=(0.3, 0.4), seed=5, edge_clips=True)
    return root, manifest, labels


@pytest.fixture(scope="module")
def full_run(corpus, tmp_path_factory):
    root, manifest, _ = corpus
    out = tmp_path_factory.mktemp("out")
    cfg = load_config(write_config(root / "cfg.toml", manifest, out))
    return cfg, run(cfg)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_paths_relative_to_file(tmp_path):
    cfg = load_config(write_config(tmp_path / "c.toml", "m.csv", "out"))
    assert cfg.manifest == tmp_path / "m.csv"
    assert cfg.output_dir == tmp_path / "out"
    assert cfg.dpmm.iters == 60 and cfg.dpmm.init_spec == "kmeans5"


def test_config_errors(tmp_path):
    with pytest.raises(ValueError, match="unknown"):
        load_config(write_config(tmp_path / "a.toml", "m", "o", "[dpmm]\nsweeps = 3\n"))
    with pytest.raises(ValueError, match="manifest"):
        (tmp_path / "b.toml").write_text('output_dir = "o"\n')
        load_config(tmp_path / "b.toml")
    with pytest.raises(ValueError):
        DPMMConfig(iters=10, burnin=10)
    with pytest.raises(ValueError):
        PipelineConfig("m", "o", stage="plot")


def test_every_clip_in_partition_or_skip_log(corpus, full_run):
    cfg, _ = full_run
    _, _, labels = corpus
    assigned = [r["id"] for r in read_rows(cfg.output_dir / "partition.csv")]
    skipped = {r["id"]: r for r in read_rows(cfg.output_dir / "skipped.csv")}
    everything = sorted(assigned + list(skipped))
    assert everything == sorted(list(labels) + ["edge_silence", "edge_quiet", "edge_long", "edge_broken"])
    assert "edge_quiet" in assigned
    assert set(skipped) == {"edge_silence", "edge_long", "edge_broken"}
    assert "silence" in skipped["edge_silence"]["reason"]


def test_outputs_and_report(full_run):
    cfg, rep = full_run
    out = cfg.output_dir
    for name in ("features.csv", "chain_trace.csv", "similarity.bin", "partition.csv", "profiles.csv",
                 "fits.csv", "table_cluster_by_month.csv", "table_month_by_cluster.csv", "table_medians.csv",
                 "figure.svg", "corpus_counts.csv"):
        assert (out / name).exists(), name
    n = len(rep.partition)
    psm = np.fromfile(out / "similarity.bin", dtype="<f4").reshape(n, n)
    np.testing.assert_allclose(np.diag(psm), 1.0)
    np.testing.assert_array_equal(psm, psm.T)
    np.testing.assert_allclose(rep.table_cluster_by_month.values.sum(axis=1), 100.0, atol=0.1)
    np.testing.assert_allclose(rep.table_month_by_cluster.values.sum(axis=0), 100.0, atol=0.1)
    assert len(read_rows(out / "chain_trace.csv")) == 60
    assert min(rep.partition.values()) == 1


def test_rerun_is_byte_identical(corpus, full_run, tmp_path):
    root, manifest, _ = corpus
    cfg, _ = full_run
    out2 = tmp_path / "again"
    run(load_config(write_config(tmp_path / "cfg.toml", manifest, out2)))
    for path in sorted(cfg.output_dir.glob("*.csv")) + [cfg.output_dir / "similarity.bin", cfg.output_dir / "figure.svg"]:
        assert path.read_bytes() == (out2 / path.name).read_bytes(), path.name


def test_features_only_stops_before_chain(corpus, full_run, tmp_path):
    root, manifest, _ = corpus
    cfg, _ = full_run
    out = tmp_path / "feat"
    code = cli.main(["run", str(write_config(tmp_path / "c.toml", manifest, out)), "--features-only"])
    assert code == 0
    assert (out / "features.csv").read_bytes() == (cfg.output_dir / "features.csv").read_bytes()
    assert not (out / "chain_trace.csv").exists()
    assert not (out / "partition.csv").exists()


def test_cluster_and_report_stages_resume(full_run, tmp_path):
    cfg, _ = full_run
    out = tmp_path / "resume"
    out.mkdir()
    for name in ("features.csv", "acoustics.csv", "corpus_counts.csv"):
        shutil.copy(cfg.output_dir / name, out / name)
    conf = write_config(tmp_path / "c.toml", cfg.manifest, out)
    assert cli.main(["run", str(conf), "--cluster-only"]) == 0
    assert (out / "partition.csv").read_bytes() == (cfg.output_dir / "partition.csv").read_bytes()
    assert not (out / "figure.svg").exists()
    assert cli.main(["run", str(conf), "--report-only"]) == 0
    assert (out / "table_medians.csv").read_bytes() == (cfg.output_dir / "table_medians.csv").read_bytes()


def test_stage_error_names_stage(tmp_path, capsys):
    conf = write_config(tmp_path / "c.toml", "m.csv", tmp_path / "o")
    assert cli.main(["run", str(conf), "--report-only"]) == 1
    assert "[report]" in capsys.readouterr().err
    cfg = load_config(conf)
    cfg.output_dir.mkdir(exist_ok=True)
    with pytest.raises(StageError) as info:
        run_cluster(cfg)
    assert info.value.stage == "dpmm"


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.toml")]) == 2
    assert "[config]" in capsys.readouterr().err
    conf = write_config(tmp_path / "c.toml", "m.csv", tmp_path / "o", "[dpmm]\niters = 5\nburnin = 9\n")
    assert cli.main(["run", str(conf)]) == 2


def test_missing_manifest_is_stage_error(tmp_path, capsys):
    conf = write_config(tmp_path / "c.toml", "nowhere.csv", tmp_path / "o")
    assert cli.main(["run", str(conf)]) == 1
    assert "nowhere.csv" in capsys.readouterr().err
