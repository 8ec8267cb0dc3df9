import numpy as np
import pytest

import spironet


def test_rfft2_matches_numpy_and_inverts():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 8, 16))
    re, im = spironet.rfft2(x)
    ref = np.fft.rfft2(x)
    assert re.shape == (2, 3, 8, 9)
    np.testing.assert_allclose(re, ref.real, atol=1e-10)
    np.testing.assert_allclose(im, ref.imag, atol=1e-10)
    np.testing.assert_allclose(spironet.irfft2(re, im, 16), x, atol=1e-10)


def test_rfft2_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        spironet.rfft2(np.zeros((6, 8)))


def test_metrics_hand_case():
    gt = np.array([[1, 1, 0, 0]], dtype=float)
    pred = np.array([[1, 0, 1, 0]], dtype=float)
    c = spironet.confusion(pred, gt)
    assert (c.tp, c.fp, c.tn, c.fn) == (1, 1, 1, 1)
    m = spironet.metrics(pred, gt)
    assert m["iou"] == pytest.approx(1 / 3)
    assert m["f1"] == pytest.approx(0.5)
    assert m["mcc"] == pytest.approx(0.0)
    assert m["f1"] == pytest.approx(2 * m["iou"] / (1 + m["iou"]))


def test_generate_sample_is_reproducible():
    a = spironet.generate_sample(seed=3, index=1, size=32)
    b = spironet.generate_sample(seed=3, index=1, size=32)
    assert a["image"].shape == (32, 32)
    np.testing.assert_array_equal(a["image"], b["image"])
    assert set(np.unique(a["mask"])) <= {0.0, 1.0}
    assert 0 < a["mask"].sum() < 32 * 32 / 2


def test_net_forward_predict_and_checkpoint(tmp_path):
    net = spironet.Net(variant="full", input_size=32, stages=2, base_channels=4, precision="f64", seed=1)
    assert net.precision == "f64"
    assert net.num_params > 0
    x = spironet.generate_sample(seed=0, index=0, size=32)["image"][None, None]
    logits = net.forward(x)
    assert logits.shape == (1, 1, 32, 32)
    mask = net.predict(x)
    np.testing.assert_array_equal(mask, (1 / (1 + np.exp(-logits)) >= 0.5).astype(float))

    path = tmp_path / "net.ckpt"
    net.save(path)
    back = spironet.Net.load(path)
    assert back.num_params == net.num_params
    np.testing.assert_array_equal(back.forward(x), logits)

    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 1, 16, 16)))


def test_variants_and_bad_config():
    assert "full" in spironet.variants()
    with pytest.raises(ValueError):
        spironet.Net(input_size=48)
