"""Pipeline orchestration and the command line wrappers around it."""

import json

import pytest
import yaml

from cdga.backends import FailingBackend, StubBackend
from cdga.cli import main
from cdga.config import load_config
from cdga.pipeline import Pipeline, PipelineError
from cdga.toydata import make_toy_dataset


def write_experiment(tmp_path, *, per_class=4, **config_overrides):
    """Toy dataset plus a small-but-complete experiment config."""
    data_root = tmp_path / "data"
    if not data_root.exists():
        make_toy_dataset(data_root, per_class=per_class, seed=0)
    payload = {
        "dataset_root": str(data_root),
        "targets": ["purple"],
        "out_root": str(tmp_path / "out"),
        "descriptions": {
            "red": "warm red tones",
            "blue": "cool blue tones",
            "purple": "purple tones",
        },
        "backend": {"kind": "stub"},
        "benchmark": {
            "model": {"architecture": "small_cnn", "width": 4, "pretrained": False},
            "steps": 20,
            "checkpoint_every": 10,
            "image_size": 12,
        },
        "diagnostics": {
            "steps": 20,
            "checkpoint_every": 10,
            "max_images_per_domain": 16,
            "bins": 5,
        },
    }
    payload.update(config_overrides)
    config_path = tmp_path / "experiment.yaml"
    config_path.write_text(yaml.safe_dump(payload))
    return config_path


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    """One complete pipeline run shared by the read-only assertions."""
    tmp_path = tmp_path_factory.mktemp("pipeline")
    config_path = write_experiment(tmp_path)
    config = load_config(config_path)
    backend = StubBackend(image_size=12)
    pipeline = Pipeline(config, backend=backend)
    code, outcomes = pipeline.run(["report"])
    return tmp_path, config_path, backend, code, outcomes


class TestFullRun:
    def test_exit_code_and_stage_status(self, full_run):
        _, _, _, code, outcomes = full_run
        assert code == 0
        assert [o.stage for o in outcomes] == ["report"]
        assert outcomes[0].status == "ok"

    def test_artifacts_exist(self, full_run):
        tmp_path = full_run[0]
        out = tmp_path / "out"
        for rel in (
            "manifest.json",
            "augmented/purple/manifest.json",
            "reports/generation_purple.json",
            "tables/train_validation.csv",
            "tables/oracle.csv",
            "runs/index.json",
            "diagnostics/report.json",
            "summary.md",
            "summary.json",
            "ledger.jsonl",
        ):
            assert (out / rel).is_file(), rel

    def test_json_artifacts_embed_config_hash(self, full_run):
        out = full_run[0] / "out"
        for rel in (
            "reports/generation_purple.json",
            "runs/index.json",
            "diagnostics/report.json",
            "summary.json",
        ):
            payload = json.loads((out / rel).read_text())
            assert payload["config_hash"], rel

    def test_run_files_indexed_and_tagged(self, full_run):
        out = full_run[0] / "out"
        index = json.loads((out / "runs" / "index.json").read_text())
        # erm + augmented, one trial each, no leave-one-out runs.
        assert len(index["runs"]) == 2
        for name in index["runs"]:
            run = json.loads((out / "runs" / name).read_text())
            assert run["config_hash"] == index["config_hash"]
            assert run["status"] == "ok"
            assert run["config"]["target_domain"] == "purple"

    def test_tables_have_both_algorithms(self, full_run):
        out = full_run[0] / "out"
        text = (out / "tables" / "train_validation.csv").read_text()
        rows = text.strip().splitlines()
        assert rows[0] == "Algorithm,purple,Avg"
        names = {r.split(",")[0] for r in rows[1:]}
        assert names == {"ERM", "CDGA-PG"}
        assert "X" not in text

    def test_diagnostics_sections_all_ok(self, full_run):
        out = full_run[0] / "out"
        report = json.loads((out / "diagnostics" / "report.json").read_text())
        sections = report["sections"]
        expected = {"near_dup", "tsne", "hessian_trace", "diversity",
                    "robustness", "sharpness"}
        assert expected <= set(sections)
        for name in expected:
            assert sections[name]["status"] == "ok", name

    def test_rerun_performs_zero_backend_calls(self, full_run):
        tmp_path, config_path, backend, _, _ = full_run
        calls_before = backend.call_count
        assert calls_before > 0
        fresh_backend = StubBackend(image_size=12)
        pipeline = Pipeline(load_config(config_path), backend=fresh_backend)
        code, outcomes = pipeline.run(["report"])
        assert code == 0
        assert fresh_backend.call_count == 0
        assert pipeline.stage_generate().status == "skipped"
        assert pipeline.stage_benchmark().status == "skipped"

    def test_changed_generation_config_invalidates_ledger(self, full_run):
        tmp_path, config_path, _, _, _ = full_run
        config = load_config(config_path)
        config.augmentation["seed"] = 123
        backend = StubBackend(image_size=12)
        pipeline = Pipeline(config, backend=backend)
        outcome = pipeline.stage_generate()
        assert outcome.status == "ok"
        assert backend.call_count > 0


class TestFailureHandling:
    def test_generation_failure_is_partial_then_recovers(self, tmp_path):
        config_path = write_experiment(tmp_path)
        config = load_config(config_path)
        failing = Pipeline(config, backend=FailingBackend())
        code, outcomes = failing.run(["generate"])
        assert code == 2
        assert outcomes[-1].status == "partial"
        report = json.loads(
            (tmp_path / "out" / "reports" / "generation_purple.json").read_text()
        )
        assert report["failures"]
        assert report["tasks_done"] < report["tasks_total"]

        # Rerun with a working backend: only the missing work happens and
        # the stage completes.
        backend = StubBackend(image_size=12)
        recovered = Pipeline(load_config(config_path), backend=backend)
        code, outcomes = recovered.run(["generate"])
        assert code == 0
        assert outcomes[-1].status == "ok"
        report = json.loads(
            (tmp_path / "out" / "reports" / "generation_purple.json").read_text()
        )
        assert backend.call_count == report["tasks_total"]
        assert not report["failures"]

    def test_benchmark_without_augmented_data_goes_partial(self, tmp_path):
        config_path = write_experiment(tmp_path)
        config = load_config(config_path)
        pipeline = Pipeline(config, backend=FailingBackend())
        code, outcomes = pipeline.run(["benchmark"])
        assert code == 2
        bench = [o for o in outcomes if o.stage == "benchmark"][0]
        assert bench.status == "partial"
        assert any("augmented" in m for m in bench.details["missing"])
        table = (tmp_path / "out" / "tables" / "train_validation.csv").read_text()
        assert "X" in table  # augmented row renders as gaps

    def test_unknown_target_is_fatal(self, tmp_path):
        config_path = write_experiment(tmp_path, targets=["mauve"])
        pipeline = Pipeline(load_config(config_path), backend=StubBackend())
        with pytest.raises(PipelineError, match="mauve"):
            pipeline.run(["generate"])

    def test_missing_target_description_is_fatal_for_star_modes(self, tmp_path):
        config_path = write_experiment(
            tmp_path,
            augmentation={"mode": "cdga_star_pg", "batch_size": 1},
        )
        pipeline = Pipeline(load_config(config_path), backend=StubBackend())
        with pytest.raises(PipelineError, match="description"):
            pipeline.run(["generate"])

    def test_unknown_stage_rejected(self, tmp_path):
        config_path = write_experiment(tmp_path)
        pipeline = Pipeline(load_config(config_path), backend=StubBackend())
        with pytest.raises(PipelineError, match="unknown stages"):
            pipeline.run(["deploy"])


class TestNoResume:
    def test_no_resume_discards_partial_work(self, tmp_path):
        config_path = write_experiment(tmp_path)
        failing = Pipeline(load_config(config_path), backend=FailingBackend())
        failing.run(["generate"])
        work = tmp_path / "out" / "gen_work" / "purple"
        assert work.exists()

        backend = StubBackend(image_size=12)
        fresh = Pipeline(load_config(config_path), backend=backend, resume=False)
        code, _ = fresh.run(["generate"])
        assert code == 0
        report = json.loads(
            (tmp_path / "out" / "reports" / "generation_purple.json").read_text()
        )
        # Every task ran; nothing was reused from the failed attempt.
        assert backend.call_count == report["tasks_total"]


class TestCli:
    def test_scan_then_report_exit_codes(self, tmp_path, capsys):
        config_path = write_experiment(tmp_path)
        assert main(["scan", "--config", str(config_path)]) == 0
        assert "[scan] ok" in capsys.readouterr().out
        assert main(["report", "--config", str(config_path), "--stub-backend"]) == 0
        assert "[report] ok" in capsys.readouterr().out
        assert (tmp_path / "out" / "summary.json").is_file()

    def test_partial_run_exits_2(self, tmp_path, capsys):
        # A remote backend nobody listens on: every task fails, the stage
        # stays partial, completed work is kept for a retry.
        config_path = write_experiment(
            tmp_path,
            backend={
                "kind": "remote",
                "params": {"url": "http://127.0.0.1:1/generate"},
                "max_retries": 0,
            },
        )
        assert main(["generate", "--config", str(config_path)]) == 2
        assert "[generate] partial" in capsys.readouterr().out

    def test_fatal_error_exits_1(self, tmp_path, capsys):
        config_path = write_experiment(tmp_path, targets=["mauve"])
        assert main(["generate", "--config", str(config_path)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        assert main(["scan", "--config", "/nonexistent/experiment.yaml"]) == 1

    def test_out_and_seed_overrides(self, tmp_path, capsys):
        config_path = write_experiment(tmp_path)
        other_out = tmp_path / "elsewhere"
        code = main(
            ["scan", "--config", str(config_path), "--out", str(other_out),
             "--seed", "7"]
        )
        assert code == 0
        assert (other_out / "manifest.json").is_file()

    def test_stub_backend_flag_overrides_config(self, tmp_path, capsys):
        config_path = write_experiment(
            tmp_path, backend={"kind": "remote", "params": {"url": "http://x"}}
        )
        code = main(["generate", "--config", str(config_path), "--stub-backend"])
        assert code == 0
        assert (tmp_path / "out" / "augmented" / "purple" / "manifest.json").is_file()
