"""End-to-end checks of the command layer and the argparse entry point."""

import numpy as np
import pandas as pd
import pytest

import commands
from checkpoint import load_checkpoint
from encoder import PARAM_NAMES, init_params
from fmap_io import write_fmap, write_vector
from main import main
from tensors import EmbeddingVector, FeatureMap


def _distinct_map(rng, h=7, w=7, c=16) -> np.ndarray:
    data = rng.normal(size=(h * w, c))
    data[:, 0] = np.abs(data[:, 0]) + 3.0
    return data.reshape(h, w, c)


@pytest.fixture
def files(tmp_path, rng):
    """Two 7×7×16 maps and anchors, written as FMAP files (float32-exact)."""
    a = _distinct_map(rng).astype(np.float32)
    b = _distinct_map(rng).astype(np.float32)
    anchor = np.eye(16)[0]
    paths = {}
    for name, arr in (("a", a), ("b", b)):
        paths[name] = str(tmp_path / f"{name}.fmap")
        write_fmap(FeatureMap(arr), paths[name])
    paths["va"] = str(tmp_path / "va.fmap")
    paths["vb"] = str(tmp_path / "vb.fmap")
    write_vector(EmbeddingVector(anchor), paths["va"])
    write_vector(EmbeddingVector(anchor), paths["vb"])
    return paths


class TestEmdCommand:
    def test_identical_files_exact(self, files):
        out = commands.cmd_emd(files["a"], files["a"], files["va"], files["va"], exact=True)
        assert out["emd_loss"] <= 1e-6
        assert out["nodes_a"] == 49

    def test_antipodal(self, tmp_path):
        d = np.array([1.0, 2.0, -0.5])
        write_fmap(FeatureMap(np.tile(d, (3, 3, 1))), str(tmp_path / "x.fmap"))
        write_fmap(FeatureMap(np.tile(-d, (3, 3, 1))), str(tmp_path / "y.fmap"))
        write_vector(EmbeddingVector(d), str(tmp_path / "vx.fmap"))
        write_vector(EmbeddingVector(-d), str(tmp_path / "vy.fmap"))
        out = commands.cmd_emd(*(str(tmp_path / n) for n in ("x.fmap", "y.fmap", "vx.fmap", "vy.fmap")))
        assert out["emd_loss"] == pytest.approx(4.0, abs=1e-9)

    def test_pyramid_reports_83_nodes(self, files):
        out = commands.cmd_emd(files["a"], files["b"], files["va"], files["vb"], grids=[7, 5, 3])
        assert out["nodes_a"] == 83 and out["nodes_b"] == 83

    def test_key_value_output(self, files, capsys):
        assert main(["emd", files["a"], files["b"], files["va"], files["vb"], "--lambda", "10"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        values = dict(line.split("=", 1) for line in lines)
        assert values["lambda"] == "10.0"
        assert 0.0 <= float(values["emd_loss"]) <= 4.0

    def test_channel_mismatch_exits_2(self, files, tmp_path):
        other = str(tmp_path / "c.fmap")
        write_fmap(FeatureMap(np.ones((7, 7, 8))), other)
        assert main(["emd", files["a"], other, files["va"], files["vb"]]) == 2

    def test_missing_file_exits_2(self, files, tmp_path):
        assert main(["emd", str(tmp_path / "nope.fmap"), files["b"], files["va"], files["vb"]]) == 2


class TestHeatmapCommand:
    def test_row_sums_to_marginal(self, files, tmp_path):
        out_csv = str(tmp_path / "heat.csv")
        out = commands.cmd_heatmap(files["a"], files["b"], files["va"], files["vb"], 24, out_csv, lambda_=5.0)
        grid = pd.read_csv(out_csv, header=None).to_numpy()
        assert grid.shape == (7, 7)
        assert np.all(grid >= 0.0)
        assert abs(grid.sum() - out["marginal"]) <= 1e-9

    def test_identical_maps_exact_concentrates(self, files, tmp_path):
        out_csv = str(tmp_path / "heat.csv")
        out = commands.cmd_heatmap(files["a"], files["a"], files["va"], files["va"], 10, out_csv, exact=True)
        grid = pd.read_csv(out_csv, header=None).to_numpy().ravel()
        assert out["peak_node"] == 10
        assert grid[10] >= 0.99 * grid.sum()

    def test_index_out_of_range(self, files, tmp_path):
        args = ["heatmap", files["a"], files["b"], files["va"], files["vb"], "--node", "49",
                "--out", str(tmp_path / "h.csv")]
        assert main(args) == 2


class TestBenchAndOracle:
    def test_bench_columns(self, tmp_path):
        out_csv = str(tmp_path / "bench.csv")
        commands.cmd_sinkhorn_bench(4, [5.0, 50.0], [1, 10, 100], seed=0, out_csv=out_csv, instances=2)
        df = pd.read_csv(out_csv)
        assert list(df.columns) == commands.BENCH_COLUMNS
        assert len(df) == 2 * 2 * 3
        assert (df["col_violation"] <= 1e-9).all()

    def test_bench_is_deterministic_without_timing(self, tmp_path):
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        commands.cmd_sinkhorn_bench(3, [25.0], [10], seed=1, out_csv=a, instances=3)
        commands.cmd_sinkhorn_bench(3, [25.0], [10], seed=1, out_csv=b, instances=3)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_timing_column(self):
        df = commands.sinkhorn_bench(3, [25.0], [10], seed=0, instances=1, timing=True)
        assert "seconds" in df.columns

    def test_oracle_check_passes(self):
        report = commands.cmd_oracle_check(instances=100, max_n=5, seed=0)
        assert report["passed"]
        assert report["permutation_instances"] > 0
        assert report["unconverged"] == 0
        assert report["worst_sinkhorn_gap"] <= 0.02

    def test_oracle_check_exit_code(self):
        assert main(["oracle-check", "--instances", "20"]) == 0


class TestTrainAndSynthetic:
    def _config(self, tmp_path, body: str) -> str:
        path = tmp_path / "run.cfg"
        path.write_text(body)
        return str(path)

    def test_zero_steps_checkpoint_is_initialization(self, tmp_path):
        cfg = self._config(tmp_path, "steps = 0\nseed = 3\n")
        out = commands.cmd_train(cfg, str(tmp_path / "out"))
        theta, xi = load_checkpoint(out["checkpoint"])
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(theta[name], init_params(3)[name])
            np.testing.assert_array_equal(xi[name], init_params(3)[name])

    def test_same_config_identical_history_bytes(self, tmp_path):
        cfg = self._config(tmp_path, "steps = 2\nbatch = 2\ndataset_size = 4\ngrid_sizes = 7,3\n")
        commands.cmd_train(cfg, str(tmp_path / "one"))
        commands.cmd_train(cfg, str(tmp_path / "two"))
        one = (tmp_path / "one" / "history.csv").read_bytes()
        two = (tmp_path / "two" / "history.csv").read_bytes()
        assert one == two
        assert one.decode().splitlines()[0] == "step,lr,emd_ab,emd_ba,vec_ab,vec_ba,total"

    def test_bad_config_exits_2(self, tmp_path):
        cfg = self._config(tmp_path, "steps = -1\nfoo = 2\n")
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "out")]) == 2

    def test_gen_synthetic(self, tmp_path):
        assert main(["gen-synthetic", "--n", "3", "--seed", "5", "--out", str(tmp_path / "a")]) == 0
        commands.cmd_gen_synthetic(3, 5, str(tmp_path / "b"))
        for name in ("image_0000.png", "image_0002.png", "manifest.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        manifest = pd.read_csv(tmp_path / "a" / "manifest.csv")
        assert manifest["n_shapes"].between(2, 4).all()

    def test_gen_synthetic_empty(self, tmp_path):
        assert main(["gen-synthetic", "--n", "0", "--out", str(tmp_path / "empty")]) == 0
        assert list((tmp_path / "empty").iterdir()) == []
