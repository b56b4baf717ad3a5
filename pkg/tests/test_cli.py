from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from curverouter.cli import main
from curverouter.predictors import load_checkpoint
from curverouter.routing import RoutingMode, RoutingPolicy, route

SCENARIO = {
    "seed": 4,
    "n_queries": 24,
    "embedding_dim": 8,
    "noise_sd": 0.0,
    "input_tokens": 100,
    "grid": {"anchors": [50, 200], "default_cap": 1000},
    "profiles": [
        {
            "model_id": "m-a", "display_name": "Model A",
            "input_price_per_1m": 0.1, "output_price_per_1m": 0.5,
            "ceiling": 0.9, "halflife": 100.0,
            "skill": [0.5, -0.2, 0.1, 0.3], "compliance_reliability": 0.9,
        },
        {
            "model_id": "m-b", "display_name": "Model B",
            "input_price_per_1m": 0.01, "output_price_per_1m": 0.05,
            "ceiling": 0.5, "halflife": 300.0,
            "skill": [-0.1, 0.4, 0.2, -0.3], "compliance_reliability": 0.7,
        },
    ],
}

TRAIN_FLAGS = ["--epochs", "3", "--learning-rate", "1e-3", "--batch-size", "8", "--seed", "0"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    td = tmp_path_factory.mktemp("cli")
    (td / "scn.json").write_text(json.dumps(SCENARIO))
    runner = CliRunner()
    r = runner.invoke(main, ["gen", str(td / "scn.json"), str(td / "data")])
    assert r.exit_code == 0, r.output
    r = runner.invoke(main, ["train", "--data", str(td / "data"), "--out", str(td / "model.json"), *TRAIN_FLAGS])
    assert r.exit_code == 0, r.output
    return td


def sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestGen:
    def test_reports_sample_count(self, workspace):
        runner = CliRunner()
        r = runner.invoke(main, ["gen", str(workspace / "scn.json"), str(workspace / "data_again")])
        assert r.exit_code == 0
        assert "wrote 144 samples" in r.output  # 24 queries x 2 models x (2 anchors + default)

    def test_rerun_is_byte_identical(self, workspace):
        runner = CliRunner()
        runner.invoke(main, ["gen", str(workspace / "scn.json"), str(workspace / "data_b")])
        for name in ("pool.json", "grid.json", "queries.jsonl", "samples.jsonl"):
            assert sha(workspace / "data" / name) == sha(workspace / "data_b" / name)

    def test_missing_scenario_exits_2(self, tmp_path):
        r = CliRunner().invoke(main, ["gen", str(tmp_path / "nope.json"), str(tmp_path / "out")])
        assert r.exit_code == 2
        assert "scenario not found" in r.output

    def test_invalid_scenario_exits_2(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"n_queries": 3}')
        r = CliRunner().invoke(main, ["gen", str(tmp_path / "bad.json"), str(tmp_path / "out")])
        assert r.exit_code == 2


class TestTrain:
    def test_same_seed_gives_identical_checkpoint(self, workspace):
        runner = CliRunner()
        r = runner.invoke(main, ["train", "--data", str(workspace / "data"), "--out", str(workspace / "model_b.json"), *TRAIN_FLAGS])
        assert r.exit_code == 0
        assert sha(workspace / "model.json") == sha(workspace / "model_b.json")

    def test_prints_per_head_mse(self, workspace):
        runner = CliRunner()
        r = runner.invoke(main, ["train", "--data", str(workspace / "data"), "--out", str(workspace / "model_c.json"), *TRAIN_FLAGS])
        assert "m-a|50: final train MSE" in r.output

    def test_defaults_come_from_reference_settings(self, workspace):
        r = CliRunner().invoke(
            main,
            ["train", "--data", str(workspace / "data"), "--out", str(workspace / "model_defaults.json"),
             "--epochs", "0"],
        )
        assert r.exit_code == 0
        meta = load_checkpoint(workspace / "model_defaults.json").training_meta
        assert meta["learning_rate"] == 1e-4 and meta["batch_size"] == 256

    def test_empty_cell_exits_3(self, workspace, tmp_path):
        data = tmp_path / "partial"
        data.mkdir()
        for name in ("pool.json", "grid.json", "queries.jsonl"):
            (data / name).write_bytes((workspace / "data" / name).read_bytes())
        lines = (workspace / "data" / "samples.jsonl").read_text().splitlines()
        kept = [ln for ln in lines if not ('"model_id": "m-b", "budget": 200' in ln)]
        (data / "samples.jsonl").write_text("\n".join(kept) + "\n")
        r = CliRunner().invoke(main, ["train", "--data", str(data), "--out", str(tmp_path / "m.json"), *TRAIN_FLAGS])
        assert r.exit_code == 3
        assert "(m-b, 200)" in r.output

    def test_missing_options_exit_2(self):
        r = CliRunner().invoke(main, ["train"])
        assert r.exit_code == 2

    def test_config_file_supplies_defaults(self, workspace, tmp_path):
        cfg = {
            "data_dir": str(workspace / "data"),
            "checkpoint": str(tmp_path / "from_config.json"),
            "epochs": 3, "learning_rate": 1e-3, "batch_size": 8, "seed": 0,
        }
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        r = CliRunner().invoke(main, ["train", "--config", str(tmp_path / "cfg.json")])
        assert r.exit_code == 0
        assert sha(tmp_path / "from_config.json") == sha(workspace / "model.json")


class TestRoute:
    def test_decision_matches_library(self, workspace):
        model = load_checkpoint(workspace / "model.json")
        emb = np.linspace(-1, 1, model.embedding_dim)
        emb_arg = ",".join(str(v) for v in emb)
        r = CliRunner().invoke(main, [
            "route", "--checkpoint", str(workspace / "model.json"),
            "--embedding", emb_arg, "--lambda", "0.3", "--budget-limit", "1000",
            "--mode", "discrete_curve",
        ])
        assert r.exit_code == 0, r.output
        got = json.loads(r.output.strip())
        lib = route(model, emb, RoutingPolicy(lam=0.3, budget_limit=1000, mode=RoutingMode.DISCRETE))
        assert got == lib.record(query_id="")

    def test_golden_decision_for_fixture_query(self, workspace):
        # frozen from the first verified run of this scenario/seed
        emb_arg = ",".join(["0.25"] * 8)
        r = CliRunner().invoke(main, [
            "route", "--checkpoint", str(workspace / "model.json"),
            "--embedding", emb_arg, "--lambda", "0.0",
        ])
        assert r.exit_code == 0
        got = json.loads(r.output.strip())
        assert (got["model_id"], got["budget"]) == ("m-a", 1000)
        assert got["instruction"] == "Use at most 1000 tokens."
        assert got["predicted_quality"] == pytest.approx(0.4882194181501763, rel=1e-6)

    def test_query_file_routes_every_line(self, workspace):
        r = CliRunner().invoke(main, [
            "route", "--checkpoint", str(workspace / "model.json"),
            "--query-file", str(workspace / "data" / "queries.jsonl"),
            "--lambda", "0.5", "--mode", "continuous_curve",
        ])
        assert r.exit_code == 0, r.output
        lines = [json.loads(ln) for ln in r.output.strip().splitlines()]
        assert len(lines) == SCENARIO["n_queries"]
        assert all(ln["query_id"] for ln in lines)

    def test_requires_exactly_one_input_source(self, workspace):
        r = CliRunner().invoke(main, [
            "route", "--checkpoint", str(workspace / "model.json"), "--lambda", "0.5",
        ])
        assert r.exit_code == 2

    def test_reactive_vs_continuous_score(self, workspace):
        model = load_checkpoint(workspace / "model.json")
        emb = np.linspace(-1, 1, model.embedding_dim)
        scores = {}
        for mode in ("reactive", "continuous_curve"):
            r = CliRunner().invoke(main, [
                "route", "--checkpoint", str(workspace / "model.json"),
                "--embedding", ",".join(str(v) for v in emb),
                "--lambda", "0.4", "--mode", mode,
            ])
            scores[mode] = json.loads(r.output.strip())["score"]
        assert scores["continuous_curve"] >= scores["reactive"]

    def test_dimension_mismatch_exits_2(self, workspace):
        r = CliRunner().invoke(main, [
            "route", "--checkpoint", str(workspace / "model.json"),
            "--embedding", "0.1,0.2", "--lambda", "0.5",
        ])
        assert r.exit_code == 2
        assert "dimension mismatch" in r.output


class TestEvalAndSweep:
    def test_eval_writes_all_method_files(self, workspace):
        out = workspace / "report"
        r = CliRunner().invoke(main, [
            "eval", "--checkpoint", str(workspace / "model.json"),
            "--data", str(workspace / "data"), "--out", str(out),
            "--lambda-points", "8",
        ])
        assert r.exit_code == 0, r.output
        names = sorted(p.name for p in out.iterdir())
        assert names == [
            "compliance.csv", "curve_curve.csv", "curve_oracle_curve.csv",
            "curve_oracle_point.csv", "curve_reactive.csv", "report.json",
        ]

    def test_report_matches_library_metrics(self, workspace):
        from curverouter.dataset_io import load_dataset
        from curverouter.evaluation import build_report, default_lambda_grid, oracle_curve as lib_oracle_curve

        doc = json.loads((workspace / "report" / "report.json").read_text())
        test = load_dataset(workspace / "data")
        grid = default_lambda_grid(8)
        curve = lib_oracle_curve(test, grid)
        report = build_report({"oracle_curve": curve}, test, grid)
        # shared axis in the CLI report includes the router methods, so compare points
        got_points = doc["methods"]["oracle_curve"]["points"]
        assert len(got_points) == len(curve.points)
        by_lam = {p.lam: p for p in curve.points}
        for entry in got_points:
            assert by_lam[entry["lambda"]].mean_quality == pytest.approx(entry["mean_quality"], rel=1e-12)

    def test_selected_methods_only(self, workspace, tmp_path):
        out = tmp_path / "partial"
        r = CliRunner().invoke(main, [
            "eval", "--checkpoint", str(workspace / "model.json"),
            "--data", str(workspace / "data"), "--out", str(out),
            "--method", "curve", "--method", "oracle_curve", "--lambda-points", "4",
        ])
        assert r.exit_code == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["compliance.csv", "curve_curve.csv", "curve_oracle_curve.csv", "report.json"]

    def test_sweep_is_single_method_eval(self, workspace, tmp_path):
        out = tmp_path / "sweep"
        r = CliRunner().invoke(main, [
            "sweep", "--data", str(workspace / "data"), "--out", str(out),
            "--method", "oracle_point", "--lambda-points", "4",
        ])
        assert r.exit_code == 0, r.output
        assert sorted(p.name for p in out.iterdir()) == ["compliance.csv", "curve_oracle_point.csv", "report.json"]

    def test_oracle_only_needs_no_checkpoint(self, workspace, tmp_path):
        r = CliRunner().invoke(main, [
            "eval", "--data", str(workspace / "data"), "--out", str(tmp_path / "o"),
            "--method", "oracle_point", "--lambda-points", "4",
        ])
        assert r.exit_code == 0

    def test_router_method_without_checkpoint_exits_2(self, workspace, tmp_path):
        r = CliRunner().invoke(main, [
            "eval", "--data", str(workspace / "data"), "--out", str(tmp_path / "x"),
            "--method", "curve", "--lambda-points", "4",
        ])
        assert r.exit_code == 2


class TestServeValidation:
    def test_bad_port_exits_2(self, workspace):
        r = CliRunner().invoke(main, [
            "serve", "--checkpoint", str(workspace / "model.json"), "--port", "70000",
        ])
        assert r.exit_code == 2
        assert "port" in r.output

    def test_missing_checkpoint_exits_2(self, tmp_path):
        r = CliRunner().invoke(main, ["serve", "--checkpoint", str(tmp_path / "none.json")])
        assert r.exit_code == 2


class TestDivergenceExit:
    def test_training_divergence_exits_4(self, tmp_path):
        import numpy as np

        from curverouter.core import BudgetGrid, Dataset, ModelSpec, Query, ResponseSample
        from curverouter.dataset_io import save_dataset

        pool = (ModelSpec("m", 0.1, 0.5),)
        grid = BudgetGrid((10,), 10)
        rng = np.random.default_rng(0)
        queries = tuple(Query(f"q{i}", rng.standard_normal(4) * 1e150) for i in range(8))
        samples = tuple(
            ResponseSample(q.query_id, "m", 10, 0.9, 10, 0, is_default=True) for q in queries
        )
        save_dataset(Dataset(pool, grid, queries, samples, 4), tmp_path / "data")
        with np.errstate(all="ignore"):
            r = CliRunner().invoke(main, [
                "train", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "m.json"),
                "--epochs", "3", "--learning-rate", "1e200", "--batch-size", "8",
            ])
        assert r.exit_code == 4
        assert "non-finite" in r.output
