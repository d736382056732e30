import numpy as np
import pytest

from alorat import data
from alorat.harness import main


def write_config(path, sections: dict):
    lines = []
    for section, entries in sections.items():
        lines.append(f"[{section}]")
        for key, value in entries.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    path.write_text("\n".join(lines))


@pytest.fixture
def workspace(tmp_path):
    """Simulated training CSV plus a config covering every command."""
    sim_dir = tmp_path / "sim"
    sim_dir.mkdir()
    frame = data.simulate_mean_shift(seed=3)
    data.save_csv(frame, sim_dir / "sim.csv")
    data.save_loc_truth(frame.loc_truth, sim_dir / "truth.csv")

    cfg = tmp_path / "config.ini"
    write_config(
        cfg,
        {
            "train": {
                "data": sim_dir / "sim.csv",
                "out": tmp_path / "run",
                "seed": 5,
                "t_window": 16,
                "d_model": 4,
                "heads": 2,
                "layers": 2,
                "max_epochs": 2,
                "k_pairs": 2,
                "learning_rate": 1e-3,
                "batch_size": 64,
            },
            "score": {
                "checkpoint": tmp_path / "run" / "model.alora",
                "data": sim_dir / "sim.csv",
                "out": tmp_path / "scored",
                "h2": 5.0,
            },
            "localize": {
                "checkpoint": tmp_path / "run" / "model.alora",
                "data": sim_dir / "sim.csv",
                "out": tmp_path / "localized",
            },
            "eval": {
                "scores": tmp_path / "scored" / "scores.csv",
                "data": sim_dir / "sim.csv",
                "las": tmp_path / "localized" / "las.csv",
                "loc_truth": sim_dir / "truth.csv",
                "out": tmp_path / "evaled",
                "t_window": 16,
            },
            "simulate": {"out": tmp_path / "sim_out", "seed": 11},
        },
    )
    return tmp_path, cfg


class TestTrainCommand:
    def test_smoke_run(self, workspace, capsys):
        tmp_path, cfg = workspace
        assert main(["train", "--config", str(cfg)]) == 0
        out_dir = tmp_path / "run"
        assert (out_dir / "model.alora").exists()
        assert (out_dir / "model.alora.manifest.txt").exists()
        assert (out_dir / "pairs.txt").exists()
        assert (out_dir / "loss_history.csv").exists()
        assert (out_dir / "resolved_config.ini").exists()

    def test_missing_data_file(self, tmp_path):
        cfg = tmp_path / "c.ini"
        write_config(cfg, {"train": {"data": tmp_path / "nope.csv", "out": tmp_path / "o"}})
        assert main(["train", "--config", str(cfg)]) == 3

    def test_negative_lambda(self, workspace):
        tmp_path, _ = workspace
        cfg = tmp_path / "bad.ini"
        write_config(
            cfg,
            {
                "train": {
                    "data": tmp_path / "sim" / "sim.csv",
                    "out": tmp_path / "o2",
                    "lambda_reg": -1.0,
                }
            },
        )
        assert main(["train", "--config", str(cfg)]) == 2

    def test_unknown_key(self, workspace):
        tmp_path, _ = workspace
        cfg = tmp_path / "bad2.ini"
        write_config(
            cfg,
            {
                "train": {
                    "data": tmp_path / "sim" / "sim.csv",
                    "out": tmp_path / "o3",
                    "not_a_key": 7,
                }
            },
        )
        assert main(["train", "--config", str(cfg)]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "ghost.ini")]) == 2


class TestScoreCommand:
    def test_scores_training_data(self, workspace):
        tmp_path, cfg = workspace
        assert main(["train", "--config", str(cfg)]) == 0
        assert main(["score", "--config", str(cfg)]) == 0
        scores_csv = (tmp_path / "scored" / "scores.csv").read_text().splitlines()
        assert scores_csv[0] == "timestamp,anomaly_score,alora_t_score,residual_sq,label"
        values = np.array(
            [[float(c) for c in line.split(",")] for line in scores_csv[1:]]
        )
        assert values.shape[0] == 500
        assert np.isfinite(values).all()
        assert (tmp_path / "scored" / "scores.meta.txt").exists()

    def test_checkpoint_without_h1(self, workspace):
        tmp_path, cfg = workspace
        assert main(["train", "--config", str(cfg)]) == 0
        from alorat import model as model_mod

        params, tc, sel, _, stats = model_mod.load_checkpoint(tmp_path / "run" / "model.alora")
        bare = tmp_path / "bare.alora"
        model_mod.save_checkpoint(bare, params, tc, sel, h1=None, norm_stats=stats)
        cfg2 = tmp_path / "noh1.ini"
        write_config(
            cfg2,
            {
                "score": {
                    "checkpoint": bare,
                    "data": tmp_path / "sim" / "sim.csv",
                    "out": tmp_path / "scored2",
                }
            },
        )
        assert main(["score", "--config", str(cfg2)]) == 2

    def test_shape_mismatch_checkpoint(self, workspace, tmp_path):
        ws_path, cfg = workspace
        assert main(["train", "--config", str(cfg)]) == 0
        other = ws_path / "three.csv"
        rng = np.random.default_rng(0)
        data.save_csv(
            data.TimeSeriesFrame(values=rng.normal(size=(40, 3)), names=("a", "b", "c")), other
        )
        cfg2 = ws_path / "mismatch.ini"
        write_config(
            cfg2,
            {
                "score": {
                    "checkpoint": ws_path / "run" / "model.alora",
                    "data": other,
                    "out": ws_path / "scored3",
                }
            },
        )
        assert main(["score", "--config", str(cfg2)]) == 2


class TestPipelineCommands:
    def test_localize_eval_chain(self, workspace):
        tmp_path, cfg = workspace
        assert main(["train", "--config", str(cfg)]) == 0
        assert main(["score", "--config", str(cfg)]) == 0
        assert main(["localize", "--config", str(cfg)]) == 0
        loc_dir = tmp_path / "localized"
        assert (loc_dir / "las.csv").exists()
        assert (loc_dir / "c_matrix.csv").exists()
        assert (loc_dir / "e_matrix.csv").exists()
        las_lines = (loc_dir / "las.csv").read_text().splitlines()
        assert las_lines[0] == "x1,x2"
        assert len(las_lines) == 501

        assert main(["eval", "--config", str(cfg)]) == 0
        report = (tmp_path / "evaled" / "report.txt").read_text()
        assert "detection_best_f1=" in report
        assert "hit_rate_at_100=" in report
        assert "ips=" in report
        assert (tmp_path / "evaled" / "sweep.csv").exists()

    def test_eval_without_positives_is_data_error(self, tmp_path):
        frame = data.TimeSeriesFrame(
            values=np.zeros((10, 1)), names=("a",), labels=np.zeros(10, dtype=int)
        )
        data.save_csv(frame, tmp_path / "truth.csv")
        with open(tmp_path / "scores.csv", "w") as fh:
            fh.write("timestamp,anomaly_score\n")
            for t in range(10):
                fh.write(f"{t},0.5\n")
        cfg = tmp_path / "e0.ini"
        write_config(
            cfg,
            {
                "eval": {
                    "scores": tmp_path / "scores.csv",
                    "data": tmp_path / "truth.csv",
                    "out": tmp_path / "out0",
                }
            },
        )
        assert main(["eval", "--config", str(cfg)]) == 3

    def test_eval_perfect_predictions(self, tmp_path):
        frame = data.TimeSeriesFrame(
            values=np.zeros((50, 1)),
            names=("a",),
            labels=np.array([0] * 20 + [1] * 10 + [0] * 20),
        )
        data.save_csv(frame, tmp_path / "truth.csv")
        with open(tmp_path / "scores.csv", "w") as fh:
            fh.write("timestamp,anomaly_score\n")
            for t in range(50):
                fh.write(f"{t},{1.0 if 20 <= t < 30 else 0.0}\n")
        cfg = tmp_path / "e.ini"
        write_config(
            cfg,
            {
                "eval": {
                    "scores": tmp_path / "scores.csv",
                    "data": tmp_path / "truth.csv",
                    "out": tmp_path / "out",
                }
            },
        )
        assert main(["eval", "--config", str(cfg)]) == 0
        report = (tmp_path / "out" / "report.txt").read_text()
        assert "detection_best_f1=1.0" in report
        assert "affiliation_f1=1.0" in report


class TestDeploymentFlow:
    def test_scores_spike_on_simulated_anomaly(self, tmp_path):
        """Clean-train / shifted-score through the CLI: the anomaly-score
        column rises sharply inside the simulated segment."""
        cfg = tmp_path / "flow.ini"
        write_config(
            cfg,
            {
                "simulate": {"out": tmp_path / "clean", "seed": 77, "delta": 0.0},
                "train": {
                    "data": tmp_path / "clean" / "sim.csv",
                    "out": tmp_path / "run",
                    "seed": 0,
                    "t_window": 16,
                    "d_model": 4,
                    "heads": 1,
                    "layers": 2,
                    "learning_rate": 1e-3,
                    "max_epochs": 10,
                    "patience": 10,
                    "k_pairs": 1,
                    "batch_size": 64,
                },
                "score": {
                    "checkpoint": tmp_path / "run" / "model.alora",
                    "data": tmp_path / "shifted" / "sim.csv",
                    "out": tmp_path / "scored",
                },
            },
        )
        shifted_cfg = tmp_path / "shifted.ini"
        write_config(
            shifted_cfg, {"simulate": {"out": tmp_path / "shifted", "seed": 0, "delta": 6.0}}
        )
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert main(["simulate", "--config", str(shifted_cfg)]) == 0
        assert main(["train", "--config", str(cfg)]) == 0
        assert main(["score", "--config", str(cfg)]) == 0

        lines = (tmp_path / "scored" / "scores.csv").read_text().splitlines()[1:]
        scores = np.array([float(line.split(",")[1]) for line in lines])
        inside = np.median(scores[200:300])
        outside = np.percentile(np.concatenate([scores[:200], scores[300:]]), 95)
        assert inside > outside


class TestSimulateCommand:
    def test_default_dimensions(self, workspace):
        tmp_path, cfg = workspace
        assert main(["simulate", "--config", str(cfg)]) == 0
        frame = data.load_csv(tmp_path / "sim_out" / "sim.csv")
        assert frame.n == 500 and frame.d == 2
        assert frame.labels is not None
        assert (tmp_path / "sim_out" / "sim_loc_truth.csv").exists()

    def test_injection(self, tmp_path):
        cfg = tmp_path / "s.ini"
        write_config(
            cfg,
            {
                "simulate": {
                    "out": tmp_path / "o",
                    "delta": 0.0,
                    "inject_kind": "spike",
                    "inject_series": 1,
                    "inject_start": 400,
                    "inject_end": 401,
                    "inject_magnitude": 12.0,
                }
            },
        )
        assert main(["simulate", "--config", str(cfg)]) == 0
        frame = data.load_csv(tmp_path / "o" / "sim.csv")
        assert np.argmax(frame.values[:, 1]) == 400


class TestStarCheckCommand:
    def test_default_grid_passes(self, capsys):
        assert main(["star-check"]) == 0
        out = capsys.readouterr().out
        assert "aggregate=PASS" in out
        assert out.count("mode=skip") == 20

    def test_report_file(self, tmp_path):
        assert main(["star-check", "--out", str(tmp_path / "sc")]) == 0
        assert (tmp_path / "sc" / "star_report.txt").exists()
        assert (tmp_path / "sc" / "resolved_config.ini").exists()


class TestDeterminism:
    def test_identical_runs_byte_identical_scores(self, workspace):
        tmp_path, cfg = workspace
        for tag in ("a", "b"):
            write_config(
                tmp_path / f"{tag}.ini",
                {
                    "train": {
                        "data": tmp_path / "sim" / "sim.csv",
                        "out": tmp_path / f"run_{tag}",
                        "seed": 9,
                        "t_window": 16,
                        "d_model": 4,
                        "heads": 1,
                        "layers": 1,
                        "max_epochs": 2,
                        "k_pairs": 2,
                        "batch_size": 64,
                    },
                    "score": {
                        "checkpoint": tmp_path / f"run_{tag}" / "model.alora",
                        "data": tmp_path / "sim" / "sim.csv",
                        "out": tmp_path / f"scored_{tag}",
                    },
                },
            )
        for tag in ("a", "b"):
            assert main(["train", "--config", str(tmp_path / f"{tag}.ini")]) == 0
            assert main(["score", "--config", str(tmp_path / f"{tag}.ini")]) == 0
        a = (tmp_path / "scored_a" / "scores.csv").read_bytes()
        b = (tmp_path / "scored_b" / "scores.csv").read_bytes()
        assert a == b


class TestResolvedConfigRoundTrip:
    def test_rerun_from_resolved_config_reproduces_checkpoint(self, workspace):
        tmp_path, cfg = workspace
        assert main(["train", "--config", str(cfg)]) == 0
        resolved = tmp_path / "run" / "resolved_config.ini"
        assert main(
            ["train", "--config", str(resolved), "--out", str(tmp_path / "rerun")]
        ) == 0
        original = (tmp_path / "run" / "model.alora").read_bytes()
        redone = (tmp_path / "rerun" / "model.alora").read_bytes()
        assert original == redone


class TestConfigParsing:
    def test_flag_overrides(self, workspace):
        tmp_path, cfg = workspace
        out_dir = tmp_path / "override_out"
        assert main(["train", "--config", str(cfg), "--out", str(out_dir), "--seed", "77"]) == 0
        resolved = (out_dir / "resolved_config.ini").read_text()
        assert "seed = 77" in resolved
        assert (out_dir / "model.alora").exists()

    def test_bad_type(self, workspace):
        tmp_path, _ = workspace
        cfg = tmp_path / "badtype.ini"
        write_config(
            cfg,
            {
                "train": {
                    "data": tmp_path / "sim" / "sim.csv",
                    "out": tmp_path / "o4",
                    "t_window": "sixteen",
                }
            },
        )
        assert main(["train", "--config", str(cfg)]) == 2

    def test_missing_required_key(self, tmp_path):
        cfg = tmp_path / "norequired.ini"
        write_config(cfg, {"train": {"out": tmp_path / "o"}})
        assert main(["train", "--config", str(cfg)]) == 2
