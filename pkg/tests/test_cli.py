import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nrc import cli, harness, imageio
from nrc.config import RenderConfig

SCENES = Path(__file__).resolve().parent.parent / "scenes"


def read_stats(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestRender:
    def test_artifacts(self, tmp_path):
        rc = cli.main(["render", "--scene", str(SCENES / "furnace.scn"), "--frames", "3",
                       "--seed", "7", "--width", "16", "--height", "16", "--out", str(tmp_path)])
        assert rc == 0
        assert sorted(p.name for p in tmp_path.glob("frame_*.pfm")) == \
            ["frame_0000.pfm", "frame_0001.pfm", "frame_0002.pfm"]
        rows = read_stats(tmp_path / "stats.csv")
        assert tuple(rows[0].keys()) == cli.STATS_COLUMNS
        assert [int(r["frame"]) for r in rows] == [0, 1, 2]
        assert rows[0]["smape"] == "nan" and float(rows[1]["smape"]) >= 0
        assert (tmp_path / "cache.ckpt").exists() and (tmp_path / "final.ppm").exists()
        assert imageio.read_pfm(tmp_path / "frame_0002.pfm").shape == (16, 16, 3)

    def test_same_seed_same_output(self, tmp_path):
        args = ["render", "--scene", "cornell", "--frames", "2", "--width", "12", "--height", "12",
                "--seed", "3"]
        assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
        assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
        a = imageio.read_pfm(tmp_path / "a" / "frame_0001.pfm")
        b = imageio.read_pfm(tmp_path / "b" / "frame_0001.pfm")
        assert np.array_equal(a, b)

    def test_reference_gives_mrse(self, tmp_path):
        ref = np.full((8, 8, 3), 2.0, dtype=np.float32)
        imageio.write_pfm(tmp_path / "ref.pfm", ref)
        rc = cli.main(["render", "--scene", "builtin:furnace", "--frames", "2", "--width", "8",
                       "--height", "8", "--reference", str(tmp_path / "ref.pfm"), "--no-frames",
                       "--out", str(tmp_path / "o")])
        assert rc == 0
        rows = read_stats(tmp_path / "o" / "stats.csv")
        assert all(float(r["mrse"]) >= 0 for r in rows)
        assert not list((tmp_path / "o").glob("frame_*.pfm"))

    def test_defaults_match_config(self):
        a = cli.build_parser().parse_args(["render", "--scene", "furnace"])
        cfg = cli.config_from_args(a)
        d = RenderConfig()
        for name in ("c", "ema_alpha", "u_unbiased", "n_batches", "batch_size", "learning_rate",
                     "width", "height", "frames", "tile_size", "self_train"):
            assert getattr(cfg, name) == getattr(d, name)
        assert cfg.c == 0.01 and cfg.ema_alpha == 0.99 and cfg.u_unbiased == 1 / 16

    def test_self_train_flag(self):
        a = cli.build_parser().parse_args(["render", "--scene", "furnace", "--self-train", "off"])
        assert cli.config_from_args(a).self_train is False
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(["render", "--scene", "x", "--self-train", "maybe"])

    def test_bad_config(self, tmp_path):
        assert cli.main(["render", "--scene", "furnace", "--ema-alpha", "1.5",
                         "--out", str(tmp_path)]) == 2

    def test_missing_scene(self, tmp_path, capsys):
        assert cli.main(["render", "--scene", str(tmp_path / "nope.scn"), "--out", str(tmp_path)]) == 2
        assert "nope.scn" in capsys.readouterr().err

    def test_invalid_scene_file(self, tmp_path, capsys):
        (tmp_path / "bad.scn").write_text("material m {\n  diffuse 0.9 0.9 0.9\n"
                                          "  specular 0.5 0.5 0.5\n}\n")
        assert cli.main(["render", "--scene", str(tmp_path / "bad.scn"),
                         "--out", str(tmp_path)]) == 2
        assert "energy" in capsys.readouterr().err

    def test_invariant_violation_exit(self, tmp_path, monkeypatch):
        real = harness.trace_frame

        def broken(state, train=True):
            out = real(state, train)
            out.image[0, 0, 0] = np.nan
            return out

        monkeypatch.setattr(harness, "trace_frame", broken)
        rc = cli.main(["render", "--scene", "furnace", "--frames", "2", "--width", "8",
                       "--height", "8", "--out", str(tmp_path)])
        assert rc == cli.EXIT_INVARIANT


class TestOtherCommands:
    def test_gradcheck(self, capsys):
        assert cli.main(["gradcheck", "--draws", "2"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_gradcheck_impossible_tolerance(self, capsys):
        assert cli.main(["gradcheck", "--draws", "1", "--tolerance", "0"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_bench(self, capsys):
        assert cli.main(["bench-mlp", "--batch", "1024", "--repeats", "1"]) == 0
        out = capsys.readouterr().out
        assert "speedup" in out and "fused" in out and "naive" in out

    def test_metrics(self, tmp_path, capsys):
        imageio.write_pfm(tmp_path / "a.pfm", np.full((2, 2, 3), 2.0))
        imageio.write_pfm(tmp_path / "r.pfm", np.full((2, 2, 3), 1.0))
        assert cli.main(["metrics", str(tmp_path / "a.pfm"), str(tmp_path / "r.pfm"),
                         "--prev", str(tmp_path / "a.pfm")]) == 0
        out = capsys.readouterr().out.split()
        assert out[0] == "mrse" and float(out[1]) == pytest.approx(1 / 1.01)
        assert out[2] == "smape" and float(out[3]) == 0.0

    def test_metrics_mismatch(self, tmp_path):
        imageio.write_pfm(tmp_path / "a.pfm", np.ones((2, 2, 3)))
        imageio.write_pfm(tmp_path / "b.pfm", np.ones((3, 2, 3)))
        assert cli.main(["metrics", str(tmp_path / "a.pfm"), str(tmp_path / "b.pfm")]) == 2
        assert cli.main(["metrics", str(tmp_path / "a.pfm")]) == 2

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "nrc", "--help"], capture_output=True, text=True)
        assert r.returncode == 0
        for cmd in ("render", "bench-mlp", "gradcheck", "metrics"):
            assert cmd in r.stdout
