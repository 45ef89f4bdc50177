import json

import pytest

from solarcast.autograd import precision
from solarcast.cli import main
from solarcast.config import ConfigError, RUN_ROOT_ENV, read_config_file, resolve

TINY = ["--days", "12", "--max-epochs", "2", "--batch-size", "64"]


@pytest.fixture(autouse=True)
def _float32_default():
    # the CLI runs at the configured precision; undo the suite-wide float64
    with precision("float32"):
        yield


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    with precision("float32"):
        d = tmp_path_factory.mktemp("trained")
        assert main(["train", *TINY, "--run-dir", str(d)]) == 0
    return d


class TestGenerate:
    def test_row_count(self, tmp_path):
        assert run("generate", "--seed", 0, "--nodes", 8, "--days", 30, "--run-dir", tmp_path) == 0
        lines = (tmp_path / "panel.csv").read_text().splitlines()
        assert lines[0] == "# target=target" and lines[1] == "timestamp,node_id,ghi"
        assert len(lines) - 2 == 8 * 30 * 144
        assert (tmp_path / "panel.truth.csv").exists()

    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a", "b"):
            assert run("generate", "--days", 3, "--out", tmp_path / name / "p.csv",
                       "--run-dir", tmp_path / name) == 0
        assert (tmp_path / "a/p.csv").read_bytes() == (tmp_path / "b/p.csv").read_bytes()
        assert (tmp_path / "a/p.truth.csv").read_bytes() == (tmp_path / "b/p.truth.csv").read_bytes()

    def test_zero_delta_is_config_error(self, tmp_path, capsys):
        assert run("generate", "--delta", 0, "--run-dir", tmp_path) == 2
        assert "delta" in capsys.readouterr().err

    def test_run_root_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(RUN_ROOT_ENV, str(tmp_path / "root"))
        assert run("generate", "--days", 2) == 0
        (made,) = (tmp_path / "root").iterdir()
        assert {"config.txt", "seed.txt", "version.txt", "panel.csv"} <= {p.name for p in made.iterdir()}


class TestConfig:
    def test_unknown_flag(self, tmp_path):
        assert run("generate", "--bogus", 1, "--run-dir", tmp_path) == 2

    def test_unknown_file_key(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("nodes = 4\nwat = 1\n")
        with pytest.raises(ConfigError, match="wat"):
            read_config_file(cfg)

    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("# comment\nnodes = 4\ndays = 5\n")
        resolved = resolve(read_config_file(cfg), {"days": 7})
        assert (resolved.nodes, resolved.days) == (4, 7)

    def test_echo_round_trips(self, trained):
        echoed = resolve(read_config_file(trained / "config.txt"))
        assert echoed.max_epochs == 2 and echoed.days == 12 and echoed.run_dir == ""

    def test_both_pathways_ablated_is_startup_error(self, tmp_path):
        assert run("train", *TINY, "--ablate", "no_stgl", "--ablate", "no_sgt",
                   "--run-dir", tmp_path) == 2
        assert not (tmp_path / "checkpoint.npz").exists()


class TestTrain:
    def test_writes_artifacts(self, trained):
        names = {p.name for p in trained.iterdir()}
        assert {"checkpoint.npz", "history.json", "history.csv", "report.txt", "report.csv",
                "config.txt", "seed.txt", "version.txt", "run.json"} <= names
        hist = json.loads((trained / "history.json").read_text())
        assert len(hist["val_loss"]) == 2

    def test_ablated_model_is_smaller(self, trained, tmp_path):
        assert run("train", *TINY, "--ablate", "no_sgt", "--run-dir", tmp_path) == 0
        full = json.loads((trained / "run.json").read_text())["param_count"]
        small = json.loads((tmp_path / "run.json").read_text())["param_count"]
        assert small < full

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, tmp_path):
        assert run("train", *TINY, "--lr-start", "1e30", "--lr-end", "1e30",
                   "--run-dir", tmp_path) == 4
        assert (tmp_path / "history.json").exists()


class TestEvaluate:
    def test_twice_gives_identical_reports(self, trained, tmp_path):
        for name in ("a", "b"):
            assert run("evaluate", "--checkpoint", trained / "checkpoint.npz",
                       "--run-dir", tmp_path / name) == 0
        a = (tmp_path / "a/report.txt").read_text()
        assert a == (tmp_path / "b/report.txt").read_text()
        assert a == (trained / "report.txt").read_text()

    def test_model_and_baseline_rows(self, trained, tmp_path):
        assert run("evaluate", "--checkpoint", trained / "checkpoint.npz", "--split", "test",
                   "--baseline", "persistence", "--run-dir", tmp_path) == 0
        rows = (tmp_path / "report.csv").read_text().splitlines()
        sources = {r.split(",")[-1] for r in rows[1:]}
        assert sources == {"model", "persistence"}

    def test_mismatched_config_rejected(self, trained, tmp_path):
        assert run("evaluate", "--checkpoint", trained / "checkpoint.npz", "--d-model", 16,
                   "--run-dir", tmp_path) == 2

    def test_missing_checkpoint(self, tmp_path):
        assert run("evaluate", "--checkpoint", tmp_path / "nope.npz", "--run-dir", tmp_path) == 2

    def test_ablation_suite_reports_every_variant(self, tmp_path):
        assert run("ablation-suite", "--days", 12, "--max-epochs", 1, "--batch-size", 128,
                   "--run-dir", tmp_path) == 0
        for name in ("full", "no_emb", "no_stgl", "no_sgt"):
            assert (tmp_path / name / "report.txt").exists()
        rows = (tmp_path / "report.csv").read_text().splitlines()
        assert {r.split(",")[3] for r in rows[1:]} == {"full", "no_emb", "no_stgl", "no_sgt"}


@pytest.fixture(scope="module")
def panel_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("panel")
    assert main(["generate", "--days", "2", "--seed", "9", "--run-dir", str(d)]) == 0
    return d / "panel.csv"


class TestForecast:
    def test_one_row_at_horizon(self, trained, panel_csv, tmp_path):
        assert run("forecast", "--checkpoint", trained / "checkpoint.npz", "--csv", panel_csv,
                   "--run-dir", tmp_path) == 0
        lines = (tmp_path / "forecast.csv").read_text().splitlines()
        assert lines[0] == "timestamp,ghi_hat"
        # panel ends 2024-01-02T23:50Z; h = 12 steps of 10 minutes later
        assert lines[1].startswith("2024-01-03T01:50:00Z,")
        assert len(lines) == 2

    def test_emit_alpha(self, trained, panel_csv, tmp_path):
        assert run("forecast", "--checkpoint", trained / "checkpoint.npz", "--csv", panel_csv,
                   "--emit-alpha", "--run-dir", tmp_path) == 0
        header, row = (tmp_path / "forecast.csv").read_text().splitlines()
        assert header == "timestamp,ghi_hat,alpha"
        assert 0.0 < float(row.split(",")[2]) < 1.0

    def test_short_input_names_required_length(self, trained, panel_csv, tmp_path, capsys):
        short = tmp_path / "short.csv"
        lines = panel_csv.read_text().splitlines()
        short.write_text("\n".join(lines[: 2 + 8 * 10]) + "\n")
        assert run("forecast", "--checkpoint", trained / "checkpoint.npz", "--csv", short,
                   "--run-dir", tmp_path) == 3
        assert "T = 24" in capsys.readouterr().err

    def test_bad_csv_is_data_error(self, trained, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("# target=a\ntimestamp,node_id,ghi\n2024-01-01T00:00:00Z,a,-5\n")
        assert run("forecast", "--checkpoint", trained / "checkpoint.npz", "--csv", bad,
                   "--run-dir", tmp_path) == 3
