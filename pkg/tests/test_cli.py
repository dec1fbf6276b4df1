import subprocess
import sys

import numpy as np
import pytest

from evdepth.cli import main, parse_run_config, read_manifest
from evdepth.errors import ConfigError
from evdepth.events import read_events
from evdepth.tensorio import load_tensor, read_meta, save_tensor

from oracles import evaluate_direct

SMALL = ["--width", "16", "--height", "12", "--duration", "0.2"]


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--out", str(out), *SMALL, "--emit-predictions"]) == 0
    return out


class TestSynth:
    def test_default_windows(self, tmp_path):
        out = tmp_path / "s"
        assert main(["synth", "--out", str(out), "--width", "16", "--height", "12"]) == 0
        meta, rows = read_manifest(out / "manifest.txt")
        assert sum(not r["partial"] for r in rows) == 20
        assert [r["t0"] for r in rows[:3]] == [0, 50_000, 100_000]
        s = read_events(out / "events.evt")
        assert len(s) == int(meta["events"]) == sum(r["events"] for r in rows)

    def test_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth", "--out", str(tmp_path / name), *SMALL, "--emit-predictions"]) == 0
        assert files(tmp_path / "a") == files(tmp_path / "b")

    def test_seed_changes_output(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "a"), *SMALL])
        main(["synth", "--out", str(tmp_path / "b"), *SMALL, "--seed", "7"])
        assert (tmp_path / "a" / "events.evt").read_bytes() != (tmp_path / "b" / "events.evt").read_bytes()

    def test_gt_sidecar(self, synth_dir):
        meta = read_meta(synth_dir / "gt_0000.tsr.meta")
        assert meta["kind"] == "depth" and int(meta["t"]) == 50_000
        assert load_tensor(synth_dir / "gt_0000.tsr").shape == (12, 16)

    def test_csv_format(self, tmp_path):
        out = tmp_path / "c"
        assert main(["synth", "--out", str(out), *SMALL, "--format", "csv"]) == 0
        assert (out / "events.csv").read_bytes().startswith(b"x,y,t,p\n")

    @pytest.mark.parametrize("bad", [["--threshold", "0"], ["--threshold", "-1"],
                                     ["--scene", "nope"], ["--dt", "0"]])
    def test_bad_config(self, tmp_path, bad, capsys):
        assert main(["synth", "--out", str(tmp_path / "x"), *bad]) == 1
        assert "error" in capsys.readouterr().err


class TestRepr:
    @pytest.mark.parametrize("args,shape", [
        ([], (5, 12, 16)),
        (["--kind", "cstr"], (3, 12, 16)),
        (["--kind", "tore"], (6, 12, 16)),
        (["--kind", "tore", "--downsample", "2"], (6, 6, 8)),
        (["--kind", "voxel", "--bins", "10", "--hflip"], (10, 12, 16)),
    ])
    def test_shapes(self, synth_dir, tmp_path, args, shape):
        out = tmp_path / "r"
        rc = main(["repr", "--events", str(synth_dir / "events.evt"), "--out", str(out),
                   "--manifest", str(synth_dir / "manifest.txt"), *args])
        assert rc == 0
        assert load_tensor(out / "repr_0000.tsr").shape == shape
        assert load_tensor(out / "mask_0000.tsr").shape == shape[1:]

    def test_workers_do_not_change_output(self, synth_dir, tmp_path):
        for n in ("1", "4"):
            main(["repr", "--events", str(synth_dir / "events.evt"), "--out", str(tmp_path / n),
                  "--kind", "tore", "--workers", n])
        assert files(tmp_path / "1") == files(tmp_path / "4")

    def test_flag_mismatch(self, synth_dir, tmp_path):
        rc = main(["repr", "--events", str(synth_dir / "events.evt"), "--out", str(tmp_path),
                   "--kind", "cstr", "--bins", "5"])
        assert rc == 1

    def test_missing_file(self, tmp_path):
        assert main(["repr", "--events", str(tmp_path / "none.evt"), "--out", str(tmp_path)]) == 2

    def test_malformed_events(self, tmp_path):
        bad = tmp_path / "bad.evt"
        bad.write_bytes(b"EVT2" + bytes(12))
        assert main(["repr", "--events", str(bad), "--out", str(tmp_path / "o")]) == 2


class TestEval:
    def _run(self, d, tmp_path, pred, unc, extra=()):
        out = tmp_path / "e"
        rc = main(["eval", "--gt", str(d / "gt_0000.tsr"), "--pred", str(pred),
                   "--uncertainty", str(unc), "--event-mask", str(d / "mask.tsr"),
                   "--out", str(out), *extra])
        return rc, out

    def test_perfect_prediction(self, synth_dir, tmp_path):
        gt = load_tensor(synth_dir / "gt_0000.tsr")
        save_tensor(synth_dir / "mask.tsr", np.ones_like(gt))
        rc, out = self._run(synth_dir, tmp_path, synth_dir / "gt_0000.tsr", synth_dir / "unc_0000.tsr")
        assert rc == 0
        row = (out / "report.csv").read_text().splitlines()[1]
        assert all(float(v) == 0 for v in row.split(","))

    def test_uncertainty_equal_to_error(self, synth_dir, tmp_path):
        gt = load_tensor(synth_dir / "gt_0000.tsr")
        pred = load_tensor(synth_dir / "pred_0000.tsr")
        save_tensor(synth_dir / "mask.tsr", np.ones_like(gt))
        save_tensor(synth_dir / "abs.tsr", np.abs(pred.astype(np.float64) - gt))
        rc, out = self._run(synth_dir, tmp_path, synth_dir / "pred_0000.tsr", synth_dir / "abs.tsr")
        assert rc == 0
        text = (out / "report.txt").read_text()
        assert "ause=0.0\n" in text
        assert (out / "sparsification.csv").read_text().count("\n") == 101

    def test_matches_direct_oracle(self, tmp_path, rng):
        gt = rng.uniform(1, 20, (16, 16)).astype(np.float32)
        gt[rng.random((16, 16)) < 0.1] = 0
        pred = (gt + rng.normal(0, 1, (16, 16))).astype(np.float32)
        unc = rng.random((16, 16)).astype(np.float32)
        em = (rng.random((16, 16)) < 0.2).astype(np.float32)
        for name, a in (("gt", gt), ("pred", pred), ("unc", unc), ("mask", em)):
            save_tensor(tmp_path / f"{name}.tsr", a)
        out = tmp_path / "e"
        assert main(["eval", "--gt", str(tmp_path / "gt.tsr"), "--pred", str(tmp_path / "pred.tsr"),
                     "--uncertainty", str(tmp_path / "unc.tsr"), "--event-mask",
                     str(tmp_path / "mask.tsr"), "--out", str(out)]) == 0
        got = read_meta(out / "report.txt")
        ref = evaluate_direct(*(a.astype(np.float64).ravel().tolist() for a in (gt, pred, unc)),
                              (em != 0).ravel().tolist(), 0.1, 100)
        for k, v in ref.items():
            assert float(got[k]) == pytest.approx(v, abs=1e-9), k

    def test_empty_event_mask(self, synth_dir, tmp_path, capsys):
        gt = load_tensor(synth_dir / "gt_0000.tsr")
        save_tensor(synth_dir / "mask.tsr", np.zeros_like(gt))
        rc, _ = self._run(synth_dir, tmp_path, synth_dir / "pred_0000.tsr", synth_dir / "unc_0000.tsr")
        assert rc == 2 and "M" in capsys.readouterr().err

    def test_bad_retain(self, synth_dir, tmp_path):
        gt = load_tensor(synth_dir / "gt_0000.tsr")
        save_tensor(synth_dir / "mask.tsr", np.ones_like(gt))
        rc, _ = self._run(synth_dir, tmp_path, synth_dir / "pred_0000.tsr",
                          synth_dir / "unc_0000.tsr", ["--retain", "0"])
        assert rc == 1


class TestFitAndGradcheck:
    def test_fit(self, tmp_path):
        samples = tmp_path / "y.txt"
        samples.write_text("\n".join(repr(float(v)) for v in np.random.default_rng(0).normal(4, 0.5, 2000)))
        out = tmp_path / "fit.txt"
        assert main(["fit", "--samples", str(samples), "--out", str(out)]) == 0
        params = read_meta(out)
        assert abs(float(params["mu"]) - 4) < 0.05 and params["model"] == "gaussian"

    def test_fit_divergence_exit(self, tmp_path, capsys):
        samples = tmp_path / "y.txt"
        samples.write_text("\n".join(str(v) for v in range(-50, 50)))
        rc = main(["fit", "--samples", str(samples), "--out", str(tmp_path / "o"),
                   "--model", "evidential", "--step-size", "1e200", "--steps", "200"])
        assert rc == 3 and "diverged" in capsys.readouterr().err

    def test_bad_samples(self, tmp_path):
        samples = tmp_path / "y.txt"
        samples.write_text("1.0\nabc\n")
        assert main(["fit", "--samples", str(samples), "--out", str(tmp_path / "o")]) == 2

    @pytest.mark.parametrize("seed", ["0", "11"])
    def test_gradcheck(self, capsys, seed):
        assert main(["gradcheck", "--seed", seed, "--draws", "300"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 3 and all(l.endswith("PASS") for l in lines)

    def test_gradcheck_tolerance_fail(self):
        assert main(["gradcheck", "--draws", "50", "--tol", "1e-15"]) == 3


class TestConfigFile:
    def test_file_and_flag_precedence(self, tmp_path):
        conf = tmp_path / "c.cfg"
        conf.write_text("# defaults\nkind=tore\nK=4\ndownsample=2\n")
        cfg = parse_run_config(["repr", "--events", "e", "--out", "o", "--config", str(conf),
                                "--K", "2"])
        assert cfg.kind == "tore" and cfg.K == 2 and cfg.downsample == 2

    def test_unknown_key(self, tmp_path):
        conf = tmp_path / "c.cfg"
        conf.write_text("colour=blue\n")
        with pytest.raises(ConfigError):
            parse_run_config(["synth", "--out", "o", "--config", str(conf)])

    def test_missing_file(self):
        assert main(["synth", "--out", "o", "--config", "/nonexistent/cfg"]) == 1


def test_unknown_command():
    assert main(["frobnicate"]) == 1


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "evdepth.cli", "gradcheck", "--draws", "50"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.count("PASS") == 3
