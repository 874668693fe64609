import json
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smelter import evaluate as E
from smelter import net as N
from smelter.distort import DistortionSpec


def test_accuracy_examples():
    assert E.accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert E.accuracy([1, 0, 1, 1], [1, 1, 1, 0]) == 0.5
    assert E.accuracy(np.array([[0.5, 0.5], [0.2, 0.8]]), [0, 1]) == 1.0  # tie goes to class 0
    with pytest.raises(ValueError):
        E.accuracy([], [])
    with pytest.raises(ValueError):
        E.accuracy([1, 0], [1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=10))
def test_cv_report_statistics(accs):
    r = E.CvReport.from_folds(accs, 3, "abc")
    assert abs(r.mean - sum(accs) / len(accs)) < 1e-12
    m = sum(accs) / len(accs)
    expected = (sum((a - m) ** 2 for a in accs) / (len(accs) - 1)) ** 0.5
    assert abs(r.std - expected) < 1e-9


def test_cv_report_json_keys():
    r = E.CvReport.from_folds([0.9, 0.95, 0.92, 0.93], 7, "d1g3st")
    obj = json.loads(r.to_json())
    assert list(obj) == ["folds", "mean", "std", "seed", "config_digest"]
    assert obj["std"] == statistics.stdev([0.9, 0.95, 0.92, 0.93])


def _tiny_model():
    net = N.build_minicnn(channels=(4,), input_side=8, rng=0)
    net.channel_mean = np.full(3, 100.0, np.float32)
    net.input_scale = 1 / 64
    return net


def test_sweep_rows(rng):
    net = _tiny_model()
    images = [rng.integers(0, 256, (10, 10, 3), dtype=np.uint8) for _ in range(12)]
    labels = rng.integers(0, 2, 12)
    for kind in ("noise", "blur"):
        rows = E.distortion_sweep(net, images, labels, DistortionSpec(kind), crop=8, seed=1)
        assert [r.sigma for r in rows] == [0.0] + [float(s) for s in range(1, 11)]
        assert all(r.n == 12 and 0 <= r.accuracy <= 1 and r.kind == kind for r in rows)
        from smelter.training import accuracy_of

        assert rows[0].accuracy == accuracy_of(net, images, labels, net.channel_mean, 8)
    again = E.distortion_sweep(net, images, labels, DistortionSpec("noise"), crop=8, seed=1)
    assert [r.accuracy for r in again] == [r.accuracy for r in E.distortion_sweep(
        net, images, labels, DistortionSpec("noise"), crop=8, seed=1)]


def test_sweep_csv_header():
    text = E.sweep_csv([E.SweepRow("blur", 0.0, 0.5, 4)], 256, 224, "abc", 3)
    lines = text.splitlines()
    assert lines[0] == "# distorted-at=256,crop=center224"
    assert lines[1] == "# config_digest=abc,seed=3"
    assert lines[2] == "kind,sigma,accuracy,n" and lines[3] == "blur,0,0.5,4"


def test_feature_map_to_pgm():
    assert np.all(E.feature_map_to_pgm(np.zeros((3, 3))) == 128)
    out = E.feature_map_to_pgm(np.array([[0.0, 1.0], [2.0, 4.0]]))
    assert out.min() == 0 and out.max() == 255


def test_export_feature_maps(tmp_path, rng):
    net = N.build_minicnn(rng=0)
    x = rng.standard_normal((3, 64, 64)).astype(np.float32)
    files = E.export_feature_maps(net, x, ["conv2_1", "fc5"], tmp_path, comment="seed=0")
    pgms = sorted(p.name for p in files if p.suffix == ".pgm")
    assert len(pgms) == 16 and "conv2_1_15.pgm" in pgms
    from smelter.imageproc import read_image

    assert read_image(tmp_path / "conv2_1_0.pgm").shape == (32, 32, 1)
    assert len((tmp_path / "fc5.txt").read_text().split()) == 2
    assert (tmp_path / "index.txt").read_text().splitlines() == ["# seed=0", "conv2_1 16x32x32", "fc5 2"]
    with pytest.raises(KeyError):
        E.export_feature_maps(net, x, ["conv9_1"], tmp_path / "none")
    assert not (tmp_path / "none").exists() or not any((tmp_path / "none").iterdir())


def test_export_vgg_conv3_3(tmp_path):
    net = N.build_vgg16(2, rng=0)
    x = np.random.default_rng(0).standard_normal((3, 224, 224)).astype(np.float32)
    files = E.export_feature_maps(net, x, ["conv3_3", "fc7"], tmp_path)
    pgms = [p for p in files if p.suffix == ".pgm"]
    assert len(pgms) == 256
    from smelter.imageproc import read_image

    assert read_image(pgms[0]).shape == (56, 56, 1)
    assert len((tmp_path / "fc7.txt").read_text().split()) == 4096
