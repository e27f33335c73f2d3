import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fmdnn.config import Config
from fmdnn.data import read_image
from fmdnn.errors import InputError
from fmdnn.fca import FMDNN
from fmdnn.viz import (
    RAMP,
    cam_from_gradients,
    colorize,
    emit_cam,
    emit_heatmap,
    feature_map,
    grad_cam,
    rescale,
    upscale_nearest,
)

LUMA = np.array([0.299, 0.587, 0.114])


def small_model(**model):
    cfg = Config()
    m = cfg.model
    m.image_size, m.patch, m.dim, m.heads, m.depth, m.widths = 16, 8, 8, 2, 1, (4, 4)
    for k, v in model.items():
        setattr(m, k, v)
    return FMDNN(cfg)


def sidecar(path):
    return dict(line.split(" = ", 1) for line in path.with_name(path.name + ".txt").read_text().splitlines())


def test_ramp_luma_increases():
    assert np.all(np.diff(RAMP.astype(float) @ LUMA) > 0)


class TestHeatmap:
    def test_constant_map_mid_ramp(self, tmp_path):
        rgb = emit_heatmap(np.full((3, 4), 7.0), tmp_path / "c.ppm")
        assert np.all(rgb == RAMP[128])
        side = sidecar(tmp_path / "c.ppm")
        assert float(side["min"]) == float(side["max"]) == 7.0

    def test_two_by_two(self, tmp_path):
        rgb = emit_heatmap(np.array([[0.0, 1.0], [0.0, 1.0]]), tmp_path / "h.ppm")
        assert np.all(rgb[:, 0] == RAMP[0]) and np.all(rgb[:, 1] == RAMP[-1])

    def test_channel_mean(self, tmp_path):
        emit_heatmap(np.array([[[0.0]], [[2.0]]]), tmp_path / "m.ppm", "medium")
        side = sidecar(tmp_path / "m.ppm")
        assert float(side["min"]) == 1.0 and side["source"] == "medium"

    def test_file_is_p6_and_matches(self, tmp_path):
        values = np.random.default_rng(0).random((5, 6))
        rgb = emit_heatmap(values, tmp_path / "r.ppm", "fuzzy")
        raw = (tmp_path / "r.ppm").read_bytes()
        assert raw.startswith(b"P6")
        assert np.array_equal(read_image(tmp_path / "r.ppm"), rgb)

    def test_byte_identical(self, tmp_path):
        values = np.random.default_rng(1).normal(size=(2, 8, 8))
        emit_heatmap(values, tmp_path / "a.ppm", upscale_to=(16, 16))
        emit_heatmap(values.copy(), tmp_path / "b.ppm", upscale_to=(16, 16))
        assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
        assert (tmp_path / "a.ppm.txt").read_bytes() == (tmp_path / "b.ppm.txt").read_bytes()

    def test_upscale_nearest(self):
        up = upscale_nearest(np.array([[1, 2], [3, 4]]), (4, 4))
        assert np.array_equal(up, np.kron([[1, 2], [3, 4]], np.ones((2, 2), int)))

    @pytest.mark.parametrize("bad", [np.zeros((0, 3)), np.zeros(4), np.array([[np.nan]])])
    def test_rejects(self, tmp_path, bad):
        with pytest.raises(InputError):
            emit_heatmap(bad, tmp_path / "x.ppm")

    def test_unknown_source(self, tmp_path):
        with pytest.raises(InputError):
            emit_heatmap(np.zeros((2, 2)), tmp_path / "x.ppm", "deep")

    def test_unwritable(self, tmp_path):
        (tmp_path / "file").write_text("")
        with pytest.raises(OSError):
            emit_heatmap(np.zeros((2, 2)), tmp_path / "file" / "x.ppm")

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 5), elements=st.floats(-1e3, 1e3)))
    def test_order_preserved(self, values):
        unit, _, _ = rescale(values)
        luma = colorize(unit).astype(float) @ LUMA
        flat_v, flat_l = values.ravel(), luma.ravel()
        order = np.argsort(flat_v, kind="stable")
        assert np.all(np.diff(flat_l[order]) >= 0)


class TestCam:
    def test_uniform_weights_uniform_maps(self):
        acts = np.ones((3, 4, 4))
        cam = cam_from_gradients(acts, np.full((3, 4, 4), 0.5))
        assert np.all(cam == cam[0, 0]) and cam[0, 0] > 0

    def test_single_channel_proportional(self):
        rng = np.random.default_rng(0)
        acts = rng.random((4, 5, 5))
        grads = np.zeros((4, 5, 5))
        grads[2] = rng.random((5, 5)) + 0.1
        cam = cam_from_gradients(acts, grads)
        ratio = cam / acts[2]
        assert np.allclose(ratio, ratio[0, 0])

    def test_zero_where_weighted_sum_non_positive(self):
        acts = np.array([[[1.0, -1.0]], [[0.0, 0.0]]])
        grads = np.ones((2, 1, 2))
        assert cam_from_gradients(acts, grads).tolist() == [[1.0, 0.0]]

    def test_model_cam_nonnegative_and_shaped(self):
        model = small_model()
        rng = np.random.default_rng(1)
        for g, side in (("fine", 4), ("medium", 8), ("coarse", 16)):
            cam = grad_cam(model, rng.random((3, 16, 16)), 1, g)
            assert cam.shape == (side, side) and np.all(cam >= 0)

    def test_matches_manual_gradient(self):
        # spatial mean of the gradient is the gradient of the logit w.r.t. a uniform shift of a channel
        from fmdnn import tensor as T

        model = small_model()
        x = np.random.default_rng(2).random((1, 3, 16, 16))
        trace = model.trace(x)
        T.backward(T.tsum(trace.logits[0:1, 0]))
        expect = cam_from_gradients(trace.features.fine.data[0], trace.features.fine.grad[0])
        model.zero_grad()
        assert np.allclose(grad_cam(model, x[0], 0), expect)

    def test_bad_class(self):
        with pytest.raises(InputError):
            grad_cam(small_model(), np.zeros((3, 16, 16)), 2)
        with pytest.raises(InputError):
            grad_cam(small_model(), np.zeros((3, 16, 16)), -1)

    def test_emit_cam_deterministic(self, tmp_path):
        model = small_model()
        x = np.random.default_rng(3).random((3, 16, 16))
        emit_cam(model, x, 0, tmp_path / "a.ppm")
        emit_cam(model, x, 0, tmp_path / "b.ppm")
        assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
        assert read_image(tmp_path / "a.ppm").shape == (16, 16, 3)
        assert sidecar(tmp_path / "a.ppm")["source"] == "cam"

    def test_feature_map_sources(self):
        model = small_model()
        x = np.random.default_rng(4).random((3, 16, 16))
        assert feature_map(model, x, "fine").shape == (48, 4, 4)
        assert feature_map(model, x, "fuzzy").shape == (16, 16)
        with pytest.raises(InputError):
            feature_map(small_model(fusion="none"), x, "fuzzy")
