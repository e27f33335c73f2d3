import pytest

from fmdnn.cli import main, parse_cli
from fmdnn.data import read_image
from fmdnn.errors import ConfigError, UsageError
from fmdnn.selftest import SUITES, format_report, run_selftest

TINY = ["image_size=16", "patch=8", "dim=8", "heads=2", "depth=1", "widths=4,4",
        "epochs=1", "batch_size=4", "split=0.5,0.25,0.25"]


class TestParse:
    def test_train_with_config(self, tmp_path):
        (tmp_path / "cfg.txt").write_text("# run\nseed = 4\n")
        args, cfg = parse_cli(["train", "--config", str(tmp_path / "cfg.txt")])
        assert args.command == "train" and cfg.train.seed == 4

    def test_override_after_file(self, tmp_path):
        (tmp_path / "cfg.txt").write_text("lr = 0.5\n")
        _, cfg = parse_cli(["train", "--config", str(tmp_path / "cfg.txt"), "lr=0.01"])
        assert cfg.train.lr == 0.01

    def test_dotted_override(self):
        _, cfg = parse_cli(["train", "model.dim=32", "model.heads=4"])
        assert cfg.model.dim == 32

    def test_unknown_subcommand(self):
        with pytest.raises(UsageError):
            parse_cli(["frobnicate"])

    def test_unknown_flag(self):
        with pytest.raises(UsageError):
            parse_cli(["eval", "--bogus"])

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_cli(["train", "nonsense=1"])

    def test_env_seed_last(self, monkeypatch):
        monkeypatch.setenv("FMDNN_SEED", "11")
        _, cfg = parse_cli(["train", "seed=3"])
        assert cfg.train.seed == 11


class TestExitCodes:
    @pytest.mark.parametrize("argv", [["frobnicate"], ["train", "nonsense=1"], [],
                                      ["train", "--config", "/nonexistent/cfg.txt"]])
    def test_usage_errors(self, argv, capsys):
        assert main(argv) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_data_is_runtime(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none"), *TINY]) == 1

    def test_selftest(self, capsys):
        assert main(["selftest"]) == 0
        assert main(["selftest", "--mutate", "softmax-scale"]) == 1
        assert "FAIL" in capsys.readouterr().out


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["train", "--data", str(root / "syn"), "--synthetic", "4",
                 "--out", str(root / "run"), *TINY]) == 0
    return root


class TestCommands:
    def test_train_outputs(self, run):
        assert (run / "run" / "best.ckpt").exists() and (run / "run" / "metrics.csv").exists()

    def test_eval(self, run, capsys):
        assert main(["eval", "--checkpoint", str(run / "run" / "best.ckpt"),
                     "--data", str(run / "syn"), "--split", "all"]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].startswith("epoch")

    def test_extract_fuzzy(self, run, tmp_path):
        image = next((run / "syn").rglob("*.ppm"))
        assert main(["extract-fuzzy", "--image", str(image), "--out", str(tmp_path)]) == 0
        for name in ("I_mu", "I_sigma", "I_T", "z_fuzzy"):
            assert read_image(tmp_path / f"{name}.ppm").shape[:2] == (16, 16)
        fields = dict(line.split(" = ") for line in (tmp_path / "fuzzy.txt").read_text().splitlines())
        w = [float(fields[k]) for k in ("w_mu", "w_sigma", "w_T")]
        assert abs(sum(w) - 1) < 1e-12 and float(fields["bias"]) == 0.0

    def test_visualize(self, run, tmp_path):
        ckpt = str(run / "run" / "best.ckpt")
        image = str(next((run / "syn").rglob("*.ppm")))
        assert main(["visualize", "--checkpoint", ckpt, "--image", image, "--source", "cam",
                     "--target", "1", "--out", str(tmp_path / "cam.ppm")]) == 0
        assert read_image(tmp_path / "cam.ppm").shape == (16, 16, 3)
        assert main(["visualize", "--checkpoint", ckpt, "--image", image, "--source", "coarse",
                     "--out", str(tmp_path / "c.ppm")]) == 0
        assert main(["visualize", "--checkpoint", ckpt, "--image", image, "--source", "cam",
                     "--target", "2", "--out", str(tmp_path / "bad.ppm")]) == 1


class TestSelftest:
    def test_fresh_build_passes(self):
        results = run_selftest()
        assert all(r.passed for r in results), format_report(results)

    def test_each_suite_once(self):
        names = [r.name for r in run_selftest()]
        assert names == [name for name, _ in SUITES] and len(set(names)) == 4
        report = format_report(run_selftest())
        assert all(report.count(name + " ") == 1 for name in names)

    def test_softmax_scale_mutation(self):
        results = {r.name: r for r in run_selftest(["softmax-scale"])}
        assert not results["gradient-check"].passed
        assert results["membership"].passed and results["metric-oracle"].passed

    def test_mutation_is_undone(self):
        run_selftest(["softmax-scale"])
        assert all(r.passed for r in run_selftest())

    def test_unknown_mutation(self):
        with pytest.raises(UsageError):
            run_selftest(["nope"])
