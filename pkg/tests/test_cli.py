import json

import numpy as np
import pytest

from jamlab import cli, synth
from jamlab import dataset as ds


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """A 24-pixel dataset plus a one-epoch checkpoint trained on it."""
    root = tmp_path_factory.mktemp("cli")
    data, model = root / "data", root / "model"
    assert cli.main(["--seed", "3", "--out", str(data), "--quiet", "dataset", "--count", "20",
                     "--image-size", "24"]) == 0
    assert cli.main(["--seed", "3", "--out", str(model), "--quiet", "train", "--manifest", str(data),
                     "--epochs", "2"]) == 0
    return data, model


def test_synth_single_tone_peak(tmp_path, capsys):
    code, out, _ = run(capsys, "--out", tmp_path, "synth", "single-tone", "--power", 1, "--freq", 1000)
    assert code == 0 and "wrote" in out
    buf = synth.load_iq(tmp_path / "single-tone.jsiq")
    mag = np.abs(np.fft.fft(buf.samples))
    assert int(np.argmax(mag[: len(buf) // 2])) == 1000
    assert (tmp_path / "synth_resolved_config.json").exists()


def test_synth_chirp_zero_slope_is_tone(tmp_path, capsys):
    code, _, _ = run(capsys, "--out", tmp_path, "synth", "chirp", "--slope", 0, "--f0", 2000,
                     "--duration", 0.01, "--raster", "--spectrum", "--image-size", 32)
    assert code == 0
    buf = synth.load_iq(tmp_path / "chirp.jsiq")
    inst = np.diff(np.unwrap(np.angle(buf.samples))) * buf.sample_rate_hz / (2 * np.pi)
    np.testing.assert_allclose(inst, 2000.0, atol=0.05)
    table = np.loadtxt(tmp_path / "chirp_spectrum.txt")
    assert table.shape[1] == 2 and table[np.argmax(table[:, 1]), 0] == pytest.approx(2000.0)
    assert (tmp_path / "chirp.jgrd").exists()


def test_missing_required_flag_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--out", str(tmp_path), "synth", "single-tone", "--freq", "3"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["bogus"])
    assert exc.value.code == 2


def test_bad_parameters_exit_one(tmp_path, capsys):
    code, _, err = run(capsys, "--out", tmp_path, "synth", "single-tone", "--power", -1, "--freq", 3)
    assert code == 1 and "error" in err


@pytest.mark.parametrize("kind,args", [
    ("multi-tone", ["--tone", "1,1000,0", "--tone", "3,2000,0"]),
    ("sawtooth", ["--period", "0.001", "--slope", "1e8"]),
    ("broadband", ["--center", "0", "--bandwidth", "6e5", "--channel-bandwidth", "1e5"]),
    ("ofdm", []),
])
def test_synth_other_kinds(tmp_path, capsys, kind, args):
    code, _, _ = run(capsys, "--out", tmp_path, "synth", kind, "--duration", 0.002, *args)
    assert code == 0
    assert len(synth.load_iq(tmp_path / f"{kind}.jsiq")) == 2000


def test_dataset_counts_and_checksum(tmp_path, capsys):
    code, out, _ = run(capsys, "--seed", 1, "--out", tmp_path / "a", "dataset", "--count", 1000, "--image-size", 8)
    assert code == 0 and "800 train / 200 test" in out
    run(capsys, "--seed", 1, "--out", tmp_path / "b", "dataset", "--count", 1000, "--image-size", 8)
    a = ds.manifest_checksum(tmp_path / "a" / ds.MANIFEST_NAME)
    assert a == ds.manifest_checksum(tmp_path / "b" / ds.MANIFEST_NAME)


def test_dataset_zero_count(tmp_path, capsys):
    code, _, err = run(capsys, "--out", tmp_path, "dataset", "--count", 0)
    assert code == 1 and "count" in err


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": {"count": 12, "image_size": 8, "profile": "desk"}}))
    code, out, _ = run(capsys, "--config", cfg, "--out", tmp_path / "o", "dataset", "--count", 20)
    assert code == 0 and "16 train / 4 test" in out
    snap = json.loads((tmp_path / "o" / "dataset_resolved_config.json").read_text())
    assert snap["count"] == 20 and snap["image_size"] == 8


def test_env_selects_output_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    code, _, _ = run(capsys, "synth", "ofdm", "--duration", 0.001)
    assert code == 0 and (tmp_path / "env" / "ofdm.jsiq").exists()


def test_quiet(tmp_path, capsys):
    code, out, _ = run(capsys, "--quiet", "--out", tmp_path, "synth", "ofdm", "--duration", 0.001)
    assert code == 0 and out == ""


def test_train_rejects_zero_epochs(tmp_path, capsys, tiny_run):
    data, _ = tiny_run
    code, _, err = run(capsys, "--out", tmp_path, "train", "--manifest", data, "--epochs", 0)
    assert code == 1 and "epochs" in err


def test_train_outputs_and_determinism(tmp_path, capsys, tiny_run):
    data, model = tiny_run
    rows = (model / "loss_curve.tsv").read_text().splitlines()
    assert rows[0].split("\t")[:2] == ["epoch", "mean_train_loss"] and len(rows) == 3
    summary = json.loads((model / "run_summary.json").read_text())
    assert summary["flatten_len"] == 32 * 1 * 1 and "started_at" in summary
    cli.main(["--seed", "3", "--out", str(tmp_path), "--quiet", "train", "--manifest", str(data), "--epochs", "2"])
    assert (tmp_path / "model.jnet").read_bytes() == (model / "model.jnet").read_bytes()
    assert (tmp_path / "loss_curve.tsv").read_bytes() == (model / "loss_curve.tsv").read_bytes()


def test_eval_report(tmp_path, capsys, tiny_run):
    data, model = tiny_run
    code, out, _ = run(capsys, "--out", tmp_path, "eval", "--checkpoint", model / "model.jnet", "--manifest", data)
    assert code == 0
    labels = [ln.split()[0] for ln in out.splitlines() if ln.strip()]
    for row in ("0", "1", "accuracy", "macro", "weighted"):
        assert row in labels
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["macro_avg"]["support"] == 4
    first = (tmp_path / "metrics.json").read_bytes()
    run(capsys, "--out", tmp_path, "eval", "--checkpoint", model / "model.jnet", "--manifest", data)
    assert (tmp_path / "metrics.json").read_bytes() == first


def test_simulate_oracle_and_baseline(tmp_path, capsys):
    code, _, _ = run(capsys, "--out", tmp_path, "simulate", "--jammer", "static", "--jam-channels", "3",
                     "--predictor", "oracle", "--slots", 300)
    assert code == 0
    assert json.loads((tmp_path / "simulation_summary.json").read_text())["delivery_ratio"] == 1.0
    run(capsys, "--out", tmp_path, "simulate", "--jammer", "static", "--jam-channels", "0",
        "--predictor", "always_clear", "--slots", 300)
    assert json.loads((tmp_path / "simulation_summary.json").read_text())["delivery_ratio"] == 0.0
    assert len((tmp_path / "simulation_slots.jsonl").read_text().splitlines()) == 300


def test_simulate_trained(tmp_path, capsys, tiny_run):
    data, model = tiny_run
    res = {}
    for pred in ("oracle", "trained"):
        code, _, _ = run(capsys, "--out", tmp_path / pred, "simulate", "--jammer", "sweep", "--predictor", pred,
                         "--checkpoint", model / "model.jnet", "--manifest", data, "--slots", 10)
        assert code == 0
        res[pred] = json.loads((tmp_path / pred / "simulation_summary.json").read_text())["delivery_ratio"]
    assert res["trained"] <= res["oracle"]
    code, _, err = run(capsys, "--out", tmp_path, "simulate", "--predictor", "trained")
    assert code == 1 and "checkpoint" in err


def test_inspect(tmp_path, capsys, tiny_run):
    data, model = tiny_run
    code, out, _ = run(capsys, "inspect", model / "model.jnet")
    assert code == 0 and json.loads(out)["magic"] == "JNET"
    grid = next((data / "grids").iterdir())
    assert json.loads(run(capsys, "inspect", grid)[1])["height"] == 24
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"ABCDEFGH")
    assert run(capsys, "inspect", junk)[0] == 1
