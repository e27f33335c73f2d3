import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmdnn import tensor as T
from fmdnn.config import Config
from fmdnn.errors import ConfigError, DimensionError
from fmdnn.fca import (
    AddFusion,
    ClassCrossAttention,
    ClassificationHead,
    EncoderLayer,
    FcaBlock,
    FMDNN,
    MlpBlock,
    fca_attention,
)
from fmdnn.gradcheck import numerical_grad, rel_error
from fmdnn.nn import MultiHeadAttention
from fmdnn.tensor import Tensor


def identity_attention(D=2, h=1):
    attn = MultiHeadAttention(D, h, np.random.default_rng(0))
    for lin in (attn.q, attn.k, attn.v, attn.out):
        lin.weight.data[...] = np.eye(D)
    attn.out.bias.data[...] = 0.0
    return attn


def small_config(**model):
    cfg = Config()
    cfg.model.image_size, cfg.model.patch, cfg.model.dim, cfg.model.heads = 16, 8, 8, 2
    cfg.model.widths = (4, 4)
    for k, v in model.items():
        setattr(cfg.model, k, v)
    return cfg


def np_layer_norm(x, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(x.var(-1, keepdims=True) + eps)


class TestAttention:
    def test_two_token_hand_case(self):
        attn = identity_attention()
        out = fca_attention(Tensor([[[1.0, 0.0]]]), Tensor([[[1.0, 0.0], [0.0, 1.0]]]), attn)
        e = math.exp(1 / math.sqrt(2))
        w = (e / (e + 1), 1 / (e + 1))
        assert abs(w[0] - 0.6698) < 1e-4
        assert np.allclose(out.data[0, 0], w, atol=1e-12)
        assert np.allclose(attn.last_weights[0, 0, 0], w, atol=1e-12)

    def test_single_token_returns_value(self):
        rng = np.random.default_rng(1)
        attn = MultiHeadAttention(4, 2, rng)
        src = rng.normal(size=(1, 1, 4))
        out = fca_attention(Tensor(rng.normal(size=(1, 1, 4))), Tensor(src), attn)
        expect = (src @ attn.v.weight.data) @ attn.out.weight.data + attn.out.bias.data
        assert np.allclose(out.data, expect, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 9), st.sampled_from([1, 2, 4]))
    def test_rows_stochastic(self, seed, nq, nk, h):
        rng = np.random.default_rng(seed)
        attn = MultiHeadAttention(8, h, rng)
        fca_attention(Tensor(rng.normal(0, 3, (2, nq, 8))), Tensor(rng.normal(0, 3, (2, nk, 8))), attn)
        w = attn.last_weights
        assert w.shape == (2, h, nq, nk)
        assert np.all(np.abs(w.sum(-1) - 1) < 1e-9) and np.all(w >= 0)

    def test_dimension_mismatch(self):
        attn = MultiHeadAttention(4, 1, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            attn(Tensor(np.zeros((1, 2, 4))), Tensor(np.zeros((1, 2, 3))))

    def test_heads_must_divide(self):
        with pytest.raises(DimensionError):
            MultiHeadAttention(6, 4, np.random.default_rng(0))

    def test_logits_scale_with_query(self):
        rng = np.random.default_rng(2)
        attn = MultiHeadAttention(8, 2, rng)
        fuzzy, branch = rng.normal(size=(1, 5, 8)), rng.normal(size=(1, 6, 8))

        def logits(q):
            Q = (q @ attn.q.weight.data).reshape(1, 5, 2, 4).transpose(0, 2, 1, 3)
            K = (branch @ attn.k.weight.data).reshape(1, 6, 2, 4).transpose(0, 2, 1, 3)
            return Q @ K.transpose(0, 1, 3, 2) * attn.scale

        fca_attention(Tensor(fuzzy), Tensor(branch), attn)
        w = attn.last_weights
        assert np.allclose(w, np.exp(logits(fuzzy)) / np.exp(logits(fuzzy)).sum(-1, keepdims=True))
        assert np.allclose(logits(3.0 * fuzzy), 3.0 * logits(fuzzy))


class TestFcaBlock:
    def test_brute_force_two_tokens(self):
        # N=2, D=2, h=1, identity projections everywhere
        block = FcaBlock(2, 1, np.random.default_rng(0))
        block.attn = identity_attention()
        block.f_proj.weight.data[...] = np.eye(2)
        block.f_proj.bias.data[...] = 0.0
        rng = np.random.default_rng(4)
        fuzzy = rng.normal(size=(1, 2, 2))
        z = rng.normal(size=(1, 3, 2))
        out = block(Tensor(fuzzy), Tensor(z)).data[0]

        q = np_layer_norm(np.vstack([z[0, :1], fuzzy[0]]))
        kv = np_layer_norm(z[0])
        expect = np.empty((3, 2))
        for i in range(3):
            s = [float(q[i] @ kv[j]) / math.sqrt(2) for j in range(3)]
            e = [math.exp(v - max(s)) for v in s]
            w = [v / sum(e) for v in e]
            expect[i] = sum(w[j] * kv[j] for j in range(3)) + z[0, i]
        assert np.allclose(out, expect, atol=1e-9)

    def test_zero_value_projection_is_identity(self):
        rng = np.random.default_rng(5)
        block = FcaBlock(8, 2, rng)
        block.attn.v.weight.data[...] = 0.0
        z = rng.normal(size=(2, 5, 8))
        out = block(Tensor(rng.normal(size=(2, 4, 8))), Tensor(z))
        assert np.array_equal(out.data, z)

    def test_shape_and_row_check(self):
        rng = np.random.default_rng(6)
        block = FcaBlock(8, 4, rng)
        assert block(Tensor(rng.normal(size=(3, 4, 8))), Tensor(rng.normal(size=(3, 5, 8)))).shape == (3, 5, 8)
        with pytest.raises(DimensionError):
            block(Tensor(np.zeros((1, 4, 8))), Tensor(np.zeros((1, 4, 8))))

    def test_add_fusion_touches_patch_rows_only(self):
        rng = np.random.default_rng(7)
        add = AddFusion(8, rng)
        z = rng.normal(size=(1, 5, 8))
        out = add(Tensor(rng.normal(size=(1, 4, 8))), Tensor(z)).data
        assert np.array_equal(out[:, 0], z[:, 0]) and not np.allclose(out[:, 1:], z[:, 1:])

    def test_cross_attention_touches_class_row_only(self):
        rng = np.random.default_rng(8)
        ca = ClassCrossAttention(8, 2, rng)
        z = rng.normal(size=(1, 5, 8))
        out = ca(None, Tensor(z)).data
        assert np.array_equal(out[:, 1:], z[:, 1:]) and not np.allclose(out[:, 0], z[:, 0])
        assert ca.attn.last_weights.shape == (1, 2, 1, 5)


class TestMlpAndEncoder:
    def zero_mlp(self, mode):
        block = MlpBlock(8, np.random.default_rng(0), mode)
        for lin in (block.mlp.fc1, block.mlp.fc2):
            lin.weight.data[...] = 0.0
        return block

    def test_literal_zero_weights_zero_output(self):
        z = np.random.default_rng(1).normal(size=(1, 3, 8))
        assert np.array_equal(self.zero_mlp("literal")(Tensor(z)).data, np.zeros_like(z))

    def test_prenorm_zero_weights_identity(self):
        z = np.random.default_rng(1).normal(size=(1, 3, 8))
        assert np.array_equal(self.zero_mlp("prenorm")(Tensor(z)).data, z)

    def test_literal_matches_formula(self):
        rng = np.random.default_rng(2)
        block = MlpBlock(8, rng, "literal")
        z = Tensor(rng.normal(size=(1, 3, 8)))
        assert np.allclose(block(z).data, block.mlp(block.ln(z) + z).data)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            MlpBlock(8, np.random.default_rng(0), "post")

    def test_encoder_zero_outputs_identity(self):
        rng = np.random.default_rng(3)
        layer = EncoderLayer(8, 2, rng)
        layer.attn.out.weight.data[...] = 0.0
        layer.mlp.fc2.weight.data[...] = 0.0
        z = rng.normal(size=(2, 5, 8))
        assert np.array_equal(layer(Tensor(z)).data, z)

    def test_encoder_permutation_equivariant(self):
        rng = np.random.default_rng(4)
        layer = EncoderLayer(8, 2, rng)
        z = rng.normal(size=(1, 7, 8))
        perm = np.concatenate([[0], 1 + rng.permutation(6)])
        out = layer(Tensor(z)).data
        out_p = layer(Tensor(z[:, perm])).data
        assert np.allclose(out_p, out[:, perm], atol=1e-12)


class TestHead:
    @pytest.mark.parametrize("norm", ["pre", "post"])
    def test_zero_tokens_zero_logits(self, norm):
        head = ClassificationHead(3, 8, 4, np.random.default_rng(0), norm)
        zeros = [Tensor(np.zeros((1, 8))) for _ in range(3)]
        out = head(zeros)
        assert out.shape == (1, 4) and np.all(out.data == 0.0)

    def test_input_width_is_branches_times_dim(self):
        head = ClassificationHead(3, 8, 2, np.random.default_rng(0))
        assert head.proj.weight.shape == (24, 2)
        with pytest.raises(DimensionError):
            head([Tensor(np.zeros((1, 8)))] * 2)

    def test_k_below_two(self):
        with pytest.raises(ConfigError):
            ClassificationHead(3, 8, 1, np.random.default_rng(0))

    def test_post_norm_is_literal_order(self):
        rng = np.random.default_rng(1)
        head = ClassificationHead(3, 8, 3, rng, "post")
        toks = [Tensor(rng.normal(size=(2, 8))) for _ in range(3)]
        x = np.concatenate([t.data for t in toks], -1)
        expect = np_layer_norm(x @ head.proj.weight.data + head.proj.bias.data)
        assert np.allclose(head(toks).data, expect, atol=1e-12)

    def test_gradient_reaches_all_class_tokens(self):
        rng = np.random.default_rng(2)
        head = ClassificationHead(3, 8, 2, rng)
        toks = [Tensor(rng.normal(size=(2, 8)), requires_grad=True) for _ in range(3)]
        T.backward(T.cross_entropy(head(toks), np.array([0, 1])))
        assert all(np.abs(t.grad).sum() > 0 for t in toks)


class TestModel:
    def test_desk_output_shape(self):
        model = FMDNN(Config())
        x = np.random.default_rng(0).random((2, 3, 64, 64))
        with T.no_grad():
            assert model(x).shape == (2, 2)

    def test_resolution_mismatch(self):
        with pytest.raises(DimensionError):
            FMDNN(small_config())(np.zeros((1, 3, 32, 32)))

    def test_deterministic(self):
        x = np.random.default_rng(1).random((2, 3, 16, 16))
        a = FMDNN(small_config())(x).data
        b = FMDNN(small_config())(x).data
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("fusion", ["fca", "add", "cross-attn", "none"])
    def test_fusion_modes(self, fusion):
        model = FMDNN(small_config(fusion=fusion))
        names = [n for n, _ in model.named_parameters()]
        assert any(n.startswith("fuzzy_") for n in names) == (fusion in ("fca", "add"))
        assert (not any(".mlps." in n for n in names)) == (fusion == "none")
        trace = model.trace(np.random.default_rng(2).random((2, 3, 16, 16)))
        assert trace.logits.shape == (2, 2)
        assert (trace.fuzzy_map is None) == (fusion not in ("fca", "add"))

    @pytest.mark.parametrize("branches", [("fine",), ("medium", "coarse"), ("fine", "medium", "coarse")])
    def test_branch_masks(self, branches):
        model = FMDNN(small_config(branches=branches))
        assert model.head.proj.weight.shape[0] == len(branches) * 8
        assert set(model.stacks) == set(branches)
        assert model(np.zeros((1, 3, 16, 16))).shape == (1, 2)

    def test_identity_composition(self):
        # zero FCA value projections and prenorm MLPs with zero fc2 make fusion + MLP the identity,
        # so the fca model must agree with the encoder-only model sharing its other weights
        x = np.random.default_rng(3).random((2, 3, 16, 16))
        fused = FMDNN(small_config(mlp_mode="prenorm"))
        for stack in fused.stacks.values():
            for f, m in zip(stack.fusions, stack.mlps):
                f.attn.v.weight.data[...] = 0.0
                m.mlp.fc2.weight.data[...] = 0.0
                m.mlp.fc2.bias.data[...] = 0.0
        plain = FMDNN(small_config(fusion="none"))
        shared = dict(fused.named_parameters())
        for name, p in plain.named_parameters():
            p.data[...] = shared[name].data
        assert np.allclose(fused(x).data, plain(x).data, atol=1e-12)

    def test_end_to_end_gradient(self):
        rng = np.random.default_rng(4)
        model = FMDNN(small_config())
        x, y = rng.random((2, 3, 16, 16)), np.array([0, 1])
        loss_fn = lambda: T.cross_entropy(model(x), y)  # noqa: E731
        T.backward(loss_fn())
        named = list(model.named_parameters())
        for i in rng.choice(len(named), 12, replace=False):
            name, p = named[i]
            idx = [int(rng.integers(p.data.size))]
            num = numerical_grad(loss_fn, p, idx)
            ana = p.grad.reshape(-1)[idx]
            if max(abs(num[0]), abs(ana[0])) < 1e-9:
                continue
            assert rel_error(ana, num) < 1e-4, name
