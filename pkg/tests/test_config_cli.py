"""Config parsing, overrides, and the CLI surface (exit codes, files)."""

import json

import pytest

from dgossip.cli import main
from dgossip.config import (
    apply_override,
    config_from_dict,
    config_to_dict,
    parse_config_text,
    parse_scalar,
)
from dgossip.engine import AlgorithmKind, ConfigError, validated

BASE_CONFIG = """\
# desk-scale logistic run
algorithm = "oled_sgd"
beta = 0.2
m = 8
rounds = 6
local_steps = 3
seed = 1
targets = [0.5, 0.7]

[topology]
kind = "ring"

[model]
kind = "logistic"

[optimizer]
eta0 = 0.1
decay = 0.998
batch_size = 8

[partition]
scheme = "dirichlet"
alpha = 0.5

[data]
classes = 3
dim = 6
per_class = 40
spread = 0.8
test_per_class = 20
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text(BASE_CONFIG)
    return path


class TestParsing:
    def test_scalars(self):
        assert parse_scalar("true") is True
        assert parse_scalar("false") is False
        assert parse_scalar("42") == 42
        assert parse_scalar("0.3") == 0.3
        assert parse_scalar("1e6") == 1e6
        assert parse_scalar('"ring"') == "ring"
        assert parse_scalar("ring") == "ring"
        assert parse_scalar("[1, 2, 3]") == [1, 2, 3]
        assert parse_scalar("[0.5, 0.7]") == [0.5, 0.7]
        assert parse_scalar("[]") == []

    def test_sections_and_comments(self):
        tree = parse_config_text(BASE_CONFIG)
        assert tree["algorithm"] == "oled_sgd"
        assert tree["targets"] == [0.5, 0.7]
        assert tree["topology"]["kind"] == "ring"
        assert tree["optimizer"]["eta0"] == 0.1

    def test_hash_inside_string_kept(self):
        tree = parse_config_text('name = "a#b"  # trailing comment\n')
        assert tree["name"] == "a#b"

    def test_bad_line_reports_number(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("a = 1\nnot a pair\n")

    def test_override(self):
        tree = parse_config_text(BASE_CONFIG)
        apply_override(tree, "optimizer.lambda=0.1")
        apply_override(tree, "beta", "0.4")
        assert tree["optimizer"]["lambda"] == 0.1
        assert tree["beta"] == 0.4


class TestConfigFromDict:
    def test_full_tree(self):
        cfg = config_from_dict(parse_config_text(BASE_CONFIG))
        assert cfg.algorithm is AlgorithmKind.OLED_SGD
        assert cfg.beta == 0.2
        assert cfg.m == 8
        assert cfg.topology.kind.value == "ring"
        assert cfg.optimizer.batch_size == 8
        assert cfg.targets == (0.5, 0.7)

    def test_unknown_key_is_named(self):
        tree = parse_config_text(BASE_CONFIG)
        tree["optimizer"]["lambdaa"] = 0.1
        with pytest.raises(ConfigError, match="optimizer.lambdaa"):
            config_from_dict(tree)
        tree2 = parse_config_text(BASE_CONFIG)
        tree2["betaa"] = 0.1
        with pytest.raises(ConfigError, match="betaa"):
            config_from_dict(tree2)

    def test_method_conflict_rejected(self):
        tree = parse_config_text(BASE_CONFIG)
        tree["optimizer"]["method"] = "sam"
        with pytest.raises(ConfigError, match="method"):
            config_from_dict(tree)

    def test_type_errors_name_the_key(self):
        tree = parse_config_text(BASE_CONFIG)
        tree["rounds"] = "many"
        with pytest.raises(ConfigError, match="rounds"):
            config_from_dict(tree)

    def test_round_trip_identity(self):
        cfg = validated(config_from_dict(parse_config_text(BASE_CONFIG)))
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_round_trip_central_kind(self):
        tree = parse_config_text(BASE_CONFIG)
        tree["algorithm"] = "fedavg_central"
        tree.pop("topology")
        cfg = validated(config_from_dict(tree))
        assert cfg.topology is None
        assert config_from_dict(config_to_dict(cfg)) == cfg


class TestCmdRun:
    def test_happy_path(self, config_file, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", str(config_file), "--out", str(out)]) == 0
        assert (out / "metrics.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["beta"] == 0.2
        assert summary["rounds"] == 6
        # echoed config re-parses to the identical experiment
        cfg = validated(config_from_dict(parse_config_text(BASE_CONFIG)))
        assert config_from_dict(summary["config"]) == cfg

    def test_refuses_overwrite_without_force(self, config_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--config", str(config_file), "--out", str(out)]) == 0
        assert main(["run", "--config", str(config_file), "--out", str(out)]) == 4
        assert "refusing to overwrite" in capsys.readouterr().err
        assert main(["run", "--config", str(config_file), "--out", str(out), "--force"]) == 0

    def test_beta_validation_exit_code(self, config_file, tmp_path, capsys):
        code = main(
            ["run", "--config", str(config_file), "--out", str(tmp_path / "o"), "--set", "beta=1.2"]
        )
        assert code == 2
        assert "beta" in capsys.readouterr().err

    def test_lambda_override_echoed(self, config_file, tmp_path):
        out = tmp_path / "out"
        code = main(
            [
                "run", "--config", str(config_file), "--out", str(out),
                "--set", "algorithm=oled_sam", "--set", "optimizer.lambda=0.1",
            ]
        )
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["optimizer"]["lambda"] == 0.1

    def test_env_seed_override(self, config_file, tmp_path, monkeypatch):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        monkeypatch.setenv("DGOSSIP_SEED", "777")
        assert main(["run", "--config", str(config_file), "--out", str(out1)]) == 0
        monkeypatch.delenv("DGOSSIP_SEED")
        assert main(["run", "--config", str(config_file), "--out", str(out2)]) == 0
        s1 = json.loads((out1 / "summary.json").read_text())
        s2 = json.loads((out2 / "summary.json").read_text())
        assert s1["config"]["seed"] == 777
        assert s2["config"]["seed"] == 1

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, tmp_path, capsys):
        path = tmp_path / "diverge.toml"
        path.write_text(
            'algorithm = "dfedavg"\nm = 4\nrounds = 5\nlocal_steps = 5\n'
            '[topology]\nkind = "ring"\n[model]\nkind = "quadratic"\np = 4\n'
            "[optimizer]\neta0 = 1e200\ndecay = 1.0\n"
        )
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
        assert "round" in capsys.readouterr().err

    def test_missing_config_is_io_error(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 4

    def test_worker_flag_does_not_change_outputs(self, config_file, tmp_path):
        out1, out2 = tmp_path / "w1", tmp_path / "w4"
        assert main(["run", "--config", str(config_file), "--out", str(out1)]) == 0
        assert main(
            ["run", "--config", str(config_file), "--out", str(out2), "--workers", "4"]
        ) == 0
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()


class TestCmdSweep:
    def test_beta_sweep_and_degeneracy(self, config_file, tmp_path):
        out = tmp_path / "sweep"
        code = main(
            [
                "sweep", "--config", str(config_file), "--out", str(out),
                "--key", "beta", "--values", "0.0,0.2",
            ]
        )
        assert code == 0
        rows = (out / "sweep.csv").read_text().strip().split("\n")
        assert rows[0] == "value,best_acc,rounds_to_first_target,final_delta_t,status"
        assert len(rows) == 3
        # beta = 0 cell must match a plain dfedavg run
        dfed_out = tmp_path / "dfed"
        assert main(
            [
                "run", "--config", str(config_file), "--out", str(dfed_out),
                "--set", "algorithm=dfedavg", "--set", "beta=0.0",
            ]
        ) == 0
        cell = json.loads((out / "beta=0.0" / "summary.json").read_text())
        ref = json.loads((dfed_out / "summary.json").read_text())
        assert cell["best_acc"] == ref["best_acc"]
        assert cell["final"]["train_loss"] == ref["final"]["train_loss"]

    def test_empty_sweep_rejected(self, config_file, tmp_path, capsys):
        code = main(
            [
                "sweep", "--config", str(config_file), "--out", str(tmp_path / "s"),
                "--key", "beta", "--values", " , ",
            ]
        )
        assert code == 2
        assert "empty sweep" in capsys.readouterr().err

    def test_local_steps_axis(self, config_file, tmp_path):
        out = tmp_path / "sweepk"
        code = main(
            [
                "sweep", "--config", str(config_file), "--out", str(out),
                "--key", "local_steps", "--values", "1,2,5",
            ]
        )
        assert code == 0
        rows = (out / "sweep.csv").read_text().strip().split("\n")
        assert len(rows) == 4

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverged_cell_marked_and_sweep_continues(self, tmp_path):
        path = tmp_path / "quad.toml"
        path.write_text(
            'algorithm = "dfedavg"\nm = 4\nrounds = 5\nlocal_steps = 5\n'
            '[topology]\nkind = "ring"\n[model]\nkind = "quadratic"\np = 4\n'
            "[optimizer]\ndecay = 1.0\n"
        )
        out = tmp_path / "s"
        code = main(
            [
                "sweep", "--config", str(path), "--out", str(out),
                "--key", "optimizer.eta0", "--values", "0.05,1e200",
            ]
        )
        assert code == 0
        rows = (out / "sweep.csv").read_text().strip().split("\n")[1:]
        assert rows[0].endswith(",ok")
        assert rows[1].endswith(",diverged")

    def test_unknown_axis_key(self, config_file, tmp_path, capsys):
        code = main(
            [
                "sweep", "--config", str(config_file), "--out", str(tmp_path / "s"),
                "--key", "optimizer.etaa", "--values", "0.1",
            ]
        )
        assert code == 2
        assert "etaa" in capsys.readouterr().err


class TestCmdTopoReport:
    def test_values(self, capsys):
        assert main(["topo-report", "--kinds", "full,ring", "--m", "32,4"]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0] == "kind,m,psi,beta_theory_bound,reference_formula"
        table = {tuple(row.split(",")[:2]): row.split(",") for row in lines[1:]}
        assert abs(float(table[("full", "32")][2])) <= 1e-12
        assert float(table[("ring", "4")][2]) == pytest.approx(1 / 3, abs=1e-9)

    def test_grid_requires_square(self, capsys):
        assert main(["topo-report", "--kinds", "grid", "--m", "15"]) == 2
        assert "perfect square" in capsys.readouterr().err

    def test_unknown_kind(self, capsys):
        assert main(["topo-report", "--kinds", "tree", "--m", "4"]) == 2
        assert "tree" in capsys.readouterr().err

    def test_file_output(self, tmp_path):
        out = tmp_path / "topo.csv"
        assert main(["topo-report", "--kinds", "exponential", "--m", "16", "--out", str(out)]) == 0
        assert out.read_text().startswith("kind,m,psi")


class TestCmdStability:
    def test_writes_trace_with_zero_prefix(self, config_file, tmp_path):
        out = tmp_path / "stab"
        code = main(
            [
                "stability", "--config", str(config_file), "--out", str(out),
                "--client", "0", "--sample", "1", "--replace-label", "2",
                "--set", "rounds=12", "--set", "optimizer.batch_size=2",
            ]
        )
        assert code == 0
        rows = (out / "stability.csv").read_text().strip().split("\n")
        assert rows[0] == "t,step_of_first_draw_flag,mean_param_distance,heldout_loss_gap"
        assert len(rows) == 13
        for row in rows[1:]:
            t, flag, dist, gap = row.split(",")
            if flag == "0":
                assert float(dist) == 0.0

    def test_identical_twin_by_default(self, config_file, tmp_path):
        out = tmp_path / "stab0"
        code = main(
            [
                "stability", "--config", str(config_file), "--out", str(out),
                "--client", "1", "--sample", "0", "--set", "rounds=5",
            ]
        )
        assert code == 0
        rows = (out / "stability.csv").read_text().strip().split("\n")[1:]
        assert all(float(r.split(",")[2]) == 0.0 for r in rows)

    def test_bad_indices(self, config_file, tmp_path, capsys):
        code = main(
            [
                "stability", "--config", str(config_file), "--out", str(tmp_path / "s"),
                "--client", "99", "--sample", "0",
            ]
        )
        assert code == 2
        assert "client" in capsys.readouterr().err
