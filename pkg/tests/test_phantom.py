import json

import numpy as np
import pytest

from ccdenoise.image import load_image, load_rois
from ccdenoise.metrics import evaluate_image
from ccdenoise.phantom import PhantomConfig, generate, generate_manifest, phantom_rois, phantom_seed


def test_generate_is_deterministic():
    cfg = PhantomConfig(class_label=1, seed=99)
    a, b = generate(cfg), generate(cfg)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    assert a[2] == 1
    c = generate(PhantomConfig(class_label=1, seed=100))
    assert c[1].tobytes() != a[1].tobytes()


def test_values_in_unit_range():
    for label in (0, 1, 2):
        clean, noisy, _ = generate(PhantomConfig(class_label=label, seed=label))
        assert clean.shape == noisy.shape == (64, 64)
        for arr in (clean, noisy):
            assert arr.min() >= 0.0 and arr.max() <= 1.0


def test_many_looks_concentrates_speckle():
    clean, noisy, _ = generate(PhantomConfig(speckle_looks=1e6, seed=3))
    assert np.mean(np.abs(noisy - clean)) < 1e-2


def test_speckle_has_unit_mean():
    for seed in range(6):
        clean, noisy, _ = generate(PhantomConfig(speckle_looks=4.0, class_label=seed % 3, seed=seed))
        sel = clean > 0.2
        ratio = np.mean(noisy[sel] / clean[sel])
        assert 0.95 <= ratio <= 1.05


def test_config_validation():
    with pytest.raises(ValueError):
        PhantomConfig(size=(8, 8))
    with pytest.raises(ValueError):
        PhantomConfig(class_label=3)
    with pytest.raises(ValueError):
        PhantomConfig(speckle_looks=0.0)


def test_seed_derivation_is_stable():
    assert phantom_seed(1, 0, 0) == phantom_seed(1, 0, 0)
    assert len({phantom_seed(1, c, i) for c in range(3) for i in range(50)}) == 150


def test_classes_are_separable_by_clean_centroids():
    # nearest class-mean on the clean images; a sanity check that the labels
    # carry visual signal a network can pick up
    def clean_set(base, n):
        return [(generate(PhantomConfig(class_label=c, seed=phantom_seed(base, c, i)))[0], c)
                for c in range(3) for i in range(n)]

    train, test = clean_set(11, 20), clean_set(12, 10)
    feats = lambda img: img.reshape(16, 4, 16, 4).mean(axis=(1, 3)).ravel()
    centroids = np.array([np.mean([feats(x) for x, c in train if c == k], axis=0) for k in range(3)])
    hits = [np.argmin(((centroids - feats(x)) ** 2).sum(axis=1)) == c for x, c in test]
    assert np.mean(hits) > 0.9


def test_rois_fit_and_are_evaluable():
    rois = phantom_rois()
    purposes = {r.purpose for r in rois}
    assert purposes == {"foreground", "background", "texture", "edge"}
    assert sum(r.purpose == "background" for r in rois) == 1
    for r in rois:
        r.check_bounds((64, 64))
    for label in (0, 1, 2):
        _, noisy, _ = generate(PhantomConfig(class_label=label, seed=5))
        rep = evaluate_image(noisy, noisy, rois)
        assert rep.tp == 1.0 and rep.ep == 1.0


def test_generate_manifest(tmp_path):
    m = generate_manifest(1, PhantomConfig(seed=7), tmp_path)
    assert len(m) == 3 and sorted(m.labels) == [0, 1, 2]
    assert len(list((tmp_path / "noisy").iterdir())) == 3
    assert len(list((tmp_path / "clean").iterdir())) == 3
    assert len(load_rois(tmp_path / "rois.json")) == len(phantom_rois())
    items = json.loads((tmp_path / "manifest.json").read_text())
    assert {i["path"] for i in items} == {f"noisy/c{c}_0000.pgm" for c in range(3)}

    again = tmp_path / "again"
    generate_manifest(1, PhantomConfig(seed=7), again)
    for name in ("noisy/c0_0000.pgm", "clean/c2_0000.pgm", "manifest.json"):
        assert (tmp_path / name).read_bytes() == (again / name).read_bytes()


def test_generate_manifest_uniform_labels(tmp_path):
    m = generate_manifest(4, PhantomConfig(seed=1, size=(32, 32)), tmp_path, fmt="raw")
    assert [m.labels.count(c) for c in range(3)] == [4, 4, 4]
    assert load_image(m.resolve(m.records[0])).shape == (32, 32)
    with pytest.raises(ValueError):
        generate_manifest(0, PhantomConfig(), tmp_path / "x")
