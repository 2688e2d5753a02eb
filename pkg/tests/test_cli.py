import json
import math
import shutil

import numpy as np
import pytest

from ccdenoise.cli import classification_summary, load_run_config, main
from ccdenoise.image import load_image, save_image

NET = {"levels": 2, "base_channels": 4, "aspp_rates": [1, 2], "input_size": [16, 16]}


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["phantom-gen", "--out", str(out), "--per-class", "2", "--seed", "7",
                 "--size", "16x16", "--looks", "4"]) == 0
    return out


@pytest.fixture
def model_dir(tmp_path, dataset):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"net": NET, "train": {"epochs": 1, "batch_size": 3, "seed": 1}}))
    out = tmp_path / "model"
    assert main(["train", "--manifest", str(dataset / "manifest.json"), "--config", str(cfg),
                 "--out", str(out)]) == 0
    return out


def test_phantom_gen_counts_and_determinism(tmp_path, dataset):
    assert len(list((dataset / "noisy").iterdir())) == 6
    assert len(list((dataset / "clean").iterdir())) == 6
    again = tmp_path / "again"
    main(["phantom-gen", "--out", str(again), "--per-class", "2", "--seed", "7", "--size", "16x16"])
    for p in sorted((dataset / "noisy").iterdir()):
        assert p.read_bytes() == (again / "noisy" / p.name).read_bytes()


def test_phantom_gen_usage_errors(tmp_path, capsys):
    assert main(["phantom-gen", "--out", str(tmp_path / "x"), "--per-class", "0"]) == 2
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["phantom-gen", "--out", str(tmp_path), "--per-class", "1", "--size", "big"])
    assert exc.value.code == 2


def test_train_writes_artifacts(model_dir):
    for name in ("odd.ckpt", "even.ckpt", "model.json", "train_log.csv"):
        assert (model_dir / name).is_file()
    assert len((model_dir / "train_log.csv").read_text().splitlines()) == 3


def test_train_zero_epochs_and_rerun_identical(tmp_path, dataset):
    cfg = tmp_path / "zero.json"
    cfg.write_text(json.dumps({"net": NET, "train": {"epochs": 0}}))
    args = ["train", "--manifest", str(dataset / "manifest.json"), "--config", str(cfg)]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "odd.ckpt").read_bytes() == (tmp_path / "b" / "odd.ckpt").read_bytes()


def test_train_missing_manifest_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    assert main(["train", "--manifest", str(tmp_path / "none.json"), "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 2


def test_run_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"net": NET, "optimizer": {}}))
    with pytest.raises(ValueError):
        load_run_config(p)
    p.write_text(json.dumps({"train": {"loss_weights": {"w_r": 1, "w_x": 0}}}))
    with pytest.raises(ValueError):
        load_run_config(p)
    p.write_text(json.dumps({"loss_weights": {"w_r": 1.0, "w_c": 0.0}, "phantom": {"seed": 3}}))
    _, train, phantom = load_run_config(p)
    assert train.loss_weights.w_c == 0.0 and phantom.seed == 3


def test_denoise_file_and_directory(tmp_path, dataset, model_dir):
    src = dataset / "noisy" / "c0_0000.pgm"
    assert main(["denoise", "--model", str(model_dir), "--in", str(src), "--out", str(tmp_path / "one")]) == 0
    out = load_image(tmp_path / "one" / "c0_0000.pgm")
    assert out.shape == (16, 16)
    assert main(["denoise", "--model", str(model_dir), "--in", str(dataset / "noisy"),
                 "--out", str(tmp_path / "all")]) == 0
    assert len(list((tmp_path / "all").iterdir())) == 6


def test_denoise_raw_output_in_open_unit_interval(tmp_path, model_dir, rng):
    save_image(rng.random((16, 16)), tmp_path / "x.raw")
    assert main(["denoise", "--model", str(model_dir), "--in", str(tmp_path / "x.raw"),
                 "--out", str(tmp_path / "o")]) == 0
    out = load_image(tmp_path / "o" / "x.raw")
    assert np.all((out > 0) & (out < 1))


def test_denoise_shape_mismatch(tmp_path, model_dir, capsys):
    save_image(np.full((30, 30), 0.5), tmp_path / "big.pgm")
    assert main(["denoise", "--model", str(model_dir), "--in", str(tmp_path / "big.pgm"),
                 "--out", str(tmp_path / "o")]) == 1
    assert "shape mismatch" in capsys.readouterr().err


def test_evaluate_self_identity(tmp_path, dataset, capsys):
    noisy = dataset / "noisy"
    report = tmp_path / "r.json"
    assert main(["evaluate", "--noisy", str(noisy), "--denoised", str(noisy), "--rois",
                 str(dataset / "rois.json"), "--clean", str(dataset / "clean"),
                 "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert len(doc["images"]) == 6
    for row in doc["images"]:
        for key in ("noisy", "denoised"):
            r = row[key]
            assert r["tp"] == 1.0 and r["ep"] == 1.0
            assert r["cnr_db"] == 10 * math.log10(r["cnr_linear"])
            assert "psnr" in r["extra"]
    out = capsys.readouterr().out
    assert out.splitlines()[0].split() == ["method", "CNR", "CNR(dB)", "MSR", "TP", "EP"]
    assert (tmp_path / "r.json.txt").read_text() == out


def test_evaluate_denoised_output(tmp_path, dataset, model_dir):
    main(["denoise", "--model", str(model_dir), "--in", str(dataset / "noisy"), "--out", str(tmp_path / "d")])
    assert main(["evaluate", "--noisy", str(dataset / "noisy"), "--denoised", str(tmp_path / "d"),
                 "--rois", str(dataset / "rois.json"), "--report", str(tmp_path / "r.json")]) == 0
    doc = json.loads((tmp_path / "r.json").read_text())
    assert [s["method"] for s in doc["summary"]] == ["noisy", "denoised"]


def test_evaluate_no_common_names(tmp_path, dataset):
    other = tmp_path / "other"
    other.mkdir()
    shutil.copy(dataset / "noisy" / "c0_0000.pgm", other / "zzz.pgm")
    assert main(["evaluate", "--noisy", str(dataset / "noisy"), "--denoised", str(other),
                 "--rois", str(dataset / "rois.json"), "--report", str(tmp_path / "r.json")]) == 1


def test_classify_eval(dataset, model_dir, capsys):
    assert main(["classify-eval", "--model", str(model_dir), "--manifest",
                 str(dataset / "manifest.json")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert 0.0 <= res["accuracy"] <= 1.0
    assert [sum(r) for r in res["confusion"]] == [2, 2, 2]
    # one image per phantom subject: majority vote of one
    assert res["subject_accuracy"] == res["accuracy"]
    assert main(["classify-eval", "--model", str(model_dir), "--manifest",
                 str(dataset / "manifest.json"), "--head", "even"]) == 0


def test_classification_summary_accounting():
    true = [0, 0, 1, 2, 2, 2]
    pred = [0, 1, 1, 2, 0, 2]
    subj = ["a", "a", "b", "c", "c", "c"]
    s = classification_summary(true, pred, subj)
    assert s["accuracy"] == pytest.approx(4 / 6)
    assert s["confusion"] == [[1, 1, 0], [0, 1, 0], [1, 0, 2]]
    # subject a ties 0/1 -> lowest class 0 (correct); b correct; c majority 2 (correct)
    assert s["subject_accuracy"] == 1.0
    d = classification_summary(true * 2, pred * 2, subj * 2)
    assert d["accuracy"] == s["accuracy"]
