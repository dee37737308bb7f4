import json

import numpy as np
import pytest

from rfmodrec.cli import main, sha256_file
from rfmodrec.dataset import read_container


@pytest.fixture
def toy(tmp_path):
    path = tmp_path / "toy.iqds"
    rc = main(["synth", "--classes", "qpsk,fsk4", "--train-per-class", "32", "--test-per-class", "16",
               "--n-samples", "128", "--snr", "noiseless", "--out", str(path)])
    assert rc == 0
    return path


def test_synth_container(toy):
    ds = read_container(toy)
    assert len(ds.train()) == 64 and len(ds.test()) == 32
    assert ds.class_names == ["QPSK", "FSK4"]
    manifest = json.loads(toy.with_name("toy.iqds.manifest.json").read_text())
    assert manifest["seed"] == 0
    assert manifest["outputs"][str(toy)] == sha256_file(toy)


def test_synth_defaults_shape(tmp_path, monkeypatch):
    monkeypatch.setenv("RFMODREC_OUT_DIR", str(tmp_path / "outdir"))
    assert main(["synth", "--train-per-class", "2", "--test-per-class", "1"]) == 0
    ds = read_container(tmp_path / "outdir" / "dataset.iqds")
    assert ds.frame_shape == (2, 1024) and len(ds.class_names) == 8
    assert set(np.unique(ds.snr_db)) <= set(range(0, 20, 2))


def test_synth_repeatable(tmp_path):
    args = ["synth", "--classes", "rml", "--train-per-class", "3", "--test-per-class", "2", "--n-samples", "128",
            "--snr-range", "-20", "18", "2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert sha256_file(tmp_path / "a") == sha256_file(tmp_path / "b")


def test_convert(toy, tmp_path):
    out = tmp_path / "ct.iqds"
    assert main(["convert", "--in", str(toy), "--transform", "ct", "--filters", "32", "--out", str(out)]) == 0
    ds = read_container(out)
    assert ds.frame_shape == (2, 32, 32) and ds.split is not None
    out2 = tmp_path / "st.iqds"
    assert main(["convert", "--in", str(toy), "--transform", "stft", "--out-size", "28", "--out", str(out2)]) == 0
    assert read_container(out2).frame_shape == (2, 28, 28)


def test_convert_stft_rf1024_geometry(tmp_path):
    src = tmp_path / "s.iqds"
    main(["synth", "--classes", "ofdm", "--train-per-class", "1", "--test-per-class", "0", "--out", str(src)])
    out = tmp_path / "o.iqds"
    assert main(["convert", "--in", str(src), "--transform", "stft", "--win", "128", "--overlap", "112",
                 "--out-size", "256", "--out", str(out)]) == 0
    assert read_container(out).frame_shape == (2, 256, 256)


def test_missing_input(tmp_path, capsys):
    assert main(["convert", "--in", str(tmp_path / "nope"), "--transform", "ct"]) == 2
    assert "no such file" in capsys.readouterr().err


def test_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == 1
    assert main(["synth", "--classes", "notamod", "--out", "/dev/null"]) == 1


def test_train_and_eval(toy, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(toy), "--widths", "8,8,16,16,16", "--batch", "16", "--out-dir", str(run)]) == 0
    hist = (run / "history.csv").read_text().splitlines()
    assert hist[0] == "epoch,train_loss,test_loss,test_acc" and len(hist) == 11
    manifest = json.loads((run / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {str(run / n) for n in ("model.ckpt", "history.csv", "report.csv")}
    capsys.readouterr()
    assert main(["eval", "--data", str(toy), "--checkpoint", str(run / "model.ckpt"), "--split", "train"]) == 0
    out = capsys.readouterr().out
    acc = float(out.strip().splitlines()[-1].split()[0].split("=")[1])
    assert acc >= 0.99


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_diverges(toy, tmp_path):
    rc = main(["train", "--data", str(toy), "--lr", "1e38", "--batch", "2", "--epochs", "1",
               "--out-dir", str(tmp_path / "r")])
    assert rc == 3


def test_train_wrong_model_for_data(toy, tmp_path):
    assert main(["train", "--data", str(toy), "--model", "imagecnn", "--out-dir", str(tmp_path)]) == 2


@pytest.mark.parametrize("model", ["conv5", "ct-imagecnn"])
def test_gradcheck(model, capsys):
    assert main(["gradcheck", "--model", model, "--max-per-tensor", "8"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("PASS max_rel_err=")
    assert float(line.split()[1].split("=")[1]) < 1e-4
