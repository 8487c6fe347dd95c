"""End-to-end smoke tests of the python bindings: fixture generation,
splits, preprocessing, scoring, training and the evaluation protocol."""

import numpy as np
import pytest

import hs3bench as hs3


@pytest.fixture(scope="module")
def fixture_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    desc = hs3.generate_fixture(
        str(out),
        n_images=6,
        height=12,
        width=12,
        channels=5,
        num_classes=3,
        noise_sigma=0.02,
        seed=7,
    )
    return desc


def test_fixture_and_samples(fixture_dataset):
    desc = fixture_dataset
    assert desc.expected_channels == 5
    assert desc.num_evaluated_classes == 3
    ids = hs3.list_samples(desc)
    assert len(ids) == 6
    assert ids == sorted(ids)
    cube, labels = hs3.load_sample(desc, ids[0])
    assert cube.shape == (12, 12, 5) and cube.dtype == np.float32
    assert labels.shape == (12, 12) and labels.dtype == np.uint16
    assert labels.max() < 3  # the fixture labels every pixel


def test_splits_roundtrip(fixture_dataset, tmp_path):
    man = hs3.make_splits(fixture_dataset)
    ids = hs3.list_samples(fixture_dataset)
    assert sorted(man.train + man.val + man.test) == sorted(ids)
    assert man.train and man.val and man.test
    path = str(tmp_path / "splits.txt")
    man.save(path)
    again = hs3.SplitManifest.load(path)
    assert (again.train, again.val, again.test) == (man.train, man.val, man.test)
    # Same seed, same partition.
    assert hs3.make_splits(fixture_dataset).train == man.train


def test_preproc_variants(fixture_dataset, tmp_path):
    desc = fixture_dataset
    ids = hs3.list_samples(desc)
    cube, _ = hs3.load_sample(desc, ids[0])

    hsi = hs3.fit_preproc(desc, "hsi")
    out = hsi.apply(cube)
    assert out.shape == cube.shape
    assert out.min() >= 0.0 and out.max() <= 1.0  # whole-dataset extrema

    pca = hs3.fit_preproc(desc, "pca1", ids=ids[:4])
    assert pca.scope == "train_split"
    assert pca.output_channels == 1
    assert pca.apply(cube).shape == (12, 12, 1)

    prgb = hs3.fit_preproc(desc, "prgb")
    assert prgb.apply(cube).shape == (12, 12, 3)

    path = str(tmp_path / "preproc.json")
    pca.save(path)
    reloaded = hs3.Preproc.load(path)
    assert np.allclose(reloaded.apply(cube), pca.apply(cube))


def test_score_labels_ignores_masked_pixels():
    truth = np.zeros((4, 4), dtype=np.int64)
    truth[3, 3] = 1
    truth[0, 0] = -1  # ignored
    pred = np.zeros((4, 4), dtype=np.int64)
    s = hs3.score_labels(truth, pred, 2)
    assert s["acc_micro"] == pytest.approx(14 / 15)
    assert s["acc_macro"] == pytest.approx(0.5)
    assert len(s["jaccard"]) == 2

    perfect = hs3.score_labels(truth, truth, 2)
    assert perfect["jaccard_macro"] == 1.0


def test_normalize_value_convention():
    assert hs3.normalize_value(2.0, 2.0, 6.0) == 0.0
    assert hs3.normalize_value(6.0, 2.0, 6.0) == 1.0
    assert hs3.normalize_value(5.0, 5.0, 5.0) == 0.0  # constant channel


def test_train_eval_protocol(fixture_dataset, tmp_path):
    desc = fixture_dataset
    man = hs3.make_splits(desc)
    pre = hs3.fit_preproc(desc, "pca1", ids=man.train)

    def pairs(ids):
        out = []
        for sid in ids:
            cube, labels = hs3.load_sample(desc, sid)
            out.append((pre.apply(cube), labels.astype(np.int64)))
        return out

    model = hs3.build_model("runet", in_channels=1, num_classes=3, base_width=4, seed=1)
    assert model.trainable_parameters > 0
    assert hs3.run_record(model) is None

    run_dir = str(tmp_path / "run")
    rec = hs3.train_model(
        model,
        pairs(man.train),
        pairs(man.val),
        dataset=desc.name,
        learning_rate=3e-3,
        batch_size=2,
        max_epochs=3,
        patience=2,
        seed=1,
        run_dir=run_dir,
    )
    assert rec["status"] == "completed"
    assert rec["epochs"] == 3
    assert 0.0 <= rec["best_val_jaccard"] <= 1.0
    assert hs3.load_run_record(run_dir)["run_id"] == rec["run_id"]

    scores = hs3.evaluate_model(model, pairs(man.test))
    assert set(scores) >= {"acc_micro", "acc_macro", "f1_macro", "jaccard_macro"}
    assert hs3.run_record(model)["test_slot_consumed"]

    # The test split is a one-shot resource; reuse needs an explicit override.
    with pytest.raises(ValueError, match="test reuse"):
        hs3.evaluate_model(model, pairs(man.test))
    hs3.evaluate_model(model, pairs(man.test), override_test_reuse=True)
    assert any("override" in d for d in hs3.run_record(model)["deviations"])


def test_predict_and_checkpoint_roundtrip(fixture_dataset, tmp_path):
    desc = fixture_dataset
    cube, _ = hs3.load_sample(desc, hs3.list_samples(desc)[0])
    model = hs3.build_model("dl3", in_channels=5, num_classes=3, seed=2)
    pred = model.predict(cube)
    assert pred.shape == (12, 12) and pred.dtype == np.uint16
    assert pred.max() < 3

    path = str(tmp_path / "ckpt")
    model.save_checkpoint(path)
    again = hs3.load_model(path)
    assert again.architecture == "dl3"
    assert (again.predict(cube) == pred).all()


def test_validation_errors_surface_as_value_error():
    with pytest.raises(ValueError):
        hs3.build_model("runet", in_channels=0, num_classes=3)
    with pytest.raises((ValueError, RuntimeError)):
        hs3.load_descriptor("/nonexistent/descriptor.json")
