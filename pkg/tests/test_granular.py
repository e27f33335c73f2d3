import numpy as np
import pytest

from fmdnn import tensor as T
from fmdnn.errors import DimensionError
from fmdnn.granular import (
    GranularExtractor,
    GranularFeatures,
    GranularityConfig,
    PatchEmbed,
    validate_shapes,
)
from fmdnn.nn import patchify
from fmdnn.tensor import Tensor

FULL = GranularityConfig(H=224, W=224, r=2, c_coarse=3, c_medium=12, c_fine=48, P=16)
DESK = GranularityConfig()


def fake_features(cfg, B=1, override=None):
    maps = {g: Tensor(np.zeros((B,) + cfg.map_shape(g))) for g in ("fine", "medium", "coarse")}
    maps.update(override or {})
    return GranularFeatures(**maps)


@pytest.mark.parametrize(
    "cfg, shapes",
    [
        (FULL, {"coarse": (3, 224, 224), "medium": (12, 112, 112), "fine": (48, 56, 56)}),
        (DESK, {"coarse": (3, 64, 64), "medium": (12, 32, 32), "fine": (48, 16, 16)}),
    ],
)
def test_extractor_map_shapes(cfg, shapes):
    ex = GranularExtractor(cfg, np.random.default_rng(0))
    with T.no_grad():
        feats = ex(Tensor(np.random.default_rng(1).random((1, 3, cfg.H, cfg.W))))
    for g, shape in shapes.items():
        assert feats.get(g).shape == (1,) + shape
    assert validate_shapes(feats, cfg) == []


@pytest.mark.parametrize("cfg, n, length", [(FULL, 196, 768), (DESK, 64, 192)])
def test_token_counts_and_patch_lengths(cfg, n, length):
    assert cfg.num_tokens == n
    for g in ("fine", "medium", "coarse"):
        assert cfg.patch_length(g) == length
        fmap = Tensor(np.zeros((1,) + cfg.map_shape(g)))
        assert patchify(fmap, cfg.patch_size(g)).shape == (1, n, length)


def test_token_sequences_share_shape():
    rng = np.random.default_rng(0)
    ex = GranularExtractor(DESK, rng)
    feats = ex(Tensor(rng.random((2, 3, 64, 64))))
    seqs = [
        PatchEmbed(DESK.channels(g), DESK.patch_size(g), DESK.num_tokens, 32, rng)(feats.get(g))
        for g in ("fine", "medium", "coarse")
    ]
    assert {s.shape for s in seqs} == {(2, DESK.num_tokens + 1, 32)}


def test_zero_input_gives_zero_maps():
    ex = GranularExtractor(DESK, np.random.default_rng(0))
    feats = ex(Tensor(np.zeros((1, 3, 64, 64))))
    for g in ("fine", "medium", "coarse"):
        assert np.all(feats.get(g).data == 0.0)


def test_resolution_mismatch():
    ex = GranularExtractor(DESK, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        ex(Tensor(np.zeros((1, 3, 32, 32))))


def test_gradient_reaches_first_conv():
    rng = np.random.default_rng(3)
    ex = GranularExtractor(DESK, rng)
    feats = ex(Tensor(rng.random((1, 3, 64, 64))))
    loss = sum((T.tsum(T.mul(feats.get(g), feats.get(g))) for g in ("fine", "medium", "coarse")),
               Tensor(0.0))
    T.backward(loss)
    assert np.abs(ex.enc1.weight.grad).sum() > 0


def test_extractor_deterministic():
    x = np.random.default_rng(5).random((1, 3, 64, 64))
    a = GranularExtractor(DESK, np.random.default_rng(0))(Tensor(x))
    b = GranularExtractor(DESK, np.random.default_rng(0))(Tensor(x))
    assert np.array_equal(a.fine.data, b.fine.data)


class TestValidateShapes:
    def test_conforming(self):
        assert validate_shapes(fake_features(DESK), DESK) == []

    def test_medium_wrong_resolution(self):
        bad = fake_features(DESK, override={"medium": Tensor(np.zeros((1, 12, 16, 16)))})
        problems = validate_shapes(bad, DESK)
        assert len(problems) == 1
        assert "medium" in problems[0] and "32x32" in problems[0]

    def test_token_count_mismatch(self):
        # P=6 is not divisible by 2r=4: fine patches floor to 1 px and N differs
        cfg = GranularityConfig(H=48, W=48, P=6)
        problems = validate_shapes(fake_features(cfg), cfg)
        assert any("token count N must match" in p for p in problems)
        assert any("divisible by 2r" in p for p in problems)

    def test_non_finite(self):
        m = np.zeros((1, 3, 64, 64))
        m[0, 0, 0, 0] = np.nan
        problems = validate_shapes(fake_features(DESK, override={"coarse": Tensor(m)}), DESK)
        assert any("non-finite" in p for p in problems)

    def test_never_raises_on_garbage(self):
        bad = fake_features(DESK, override={"fine": Tensor(np.zeros((1, 48, 5, 7)))})
        assert validate_shapes(bad, DESK)


class TestPatchEmbed:
    def test_zero_everything(self):
        emb = PatchEmbed(3, 8, 64, 16, np.random.default_rng(0))
        emb.cls.data[...] = 0
        emb.pos.data[...] = 0
        out = emb(Tensor(np.zeros((1, 3, 64, 64))))
        assert out.shape == (1, 65, 16) and np.all(out.data == 0)

    def test_patch_permutation_permutes_rows(self):
        rng = np.random.default_rng(1)
        emb = PatchEmbed(3, 8, 64, 16, rng)
        fmap = rng.random((1, 3, 64, 64))
        swapped = fmap.copy()
        # swap patch (0,0) with patch (2,5)
        swapped[..., 0:8, 0:8], swapped[..., 16:24, 40:48] = fmap[..., 16:24, 40:48], fmap[..., 0:8, 0:8]
        a = emb.tokens(Tensor(fmap)).data[0]
        b = emb.tokens(Tensor(swapped)).data[0]
        j = 2 * 8 + 5
        assert np.allclose(a[0], b[j]) and np.allclose(a[j], b[0])
        rest = [i for i in range(64) if i not in (0, j)]
        assert np.array_equal(a[rest], b[rest])

    def test_positions_added_once(self):
        rng = np.random.default_rng(2)
        emb = PatchEmbed(3, 8, 64, 16, rng)
        fmap = Tensor(rng.random((1, 3, 64, 64)))
        out = emb(fmap).data[0]
        assert np.allclose(out[1:] - emb.tokens(fmap).data[0], emb.pos.data[1:])
        assert np.allclose(out[0], emb.cls.data[0, 0] + emb.pos.data[0])

    def test_indivisible_grid(self):
        emb = PatchEmbed(3, 8, 64, 16, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            emb(Tensor(np.zeros((1, 3, 60, 60))))
