"""Fuzzy-guided cross-attention, branch encoders, and the end-to-end model.

Each granularity branch runs ``depth`` layers of

    fusion  ->  MLP block  ->  transformer encoder layer

where the fusion step injects the shared fuzzy tokens into the branch. The
final class tokens of the active branches are concatenated, projected to
class logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import Config, ModelConfig
from .errors import ConfigError, DimensionError
from .fuzzy import FuzzyFusion, FuzzyPatchEmbed, membership_stack
from .granular import GranularExtractor, GranularFeatures, GranularityConfig, PatchEmbed
from .nn import MLP, LayerNorm, Linear, Module, MultiHeadAttention
from .tensor import Tensor

HEAD_ORDER = ("fine", "medium", "coarse")


def fca_attention(query: Tensor, branch: Tensor, attn: MultiHeadAttention) -> Tensor:
    """softmax(Q K^T / sqrt(D/h)) V per head, Q from ``query`` and K, V from ``branch``."""
    return attn(query, branch)


class FcaBlock(Module):
    """Fuzzy-guided cross-attention with residual into the branch.

    The query sequence is [f(branch class token) ; fuzzy patch tokens]; keys
    and values are the full branch sequence. Output has the branch's shape.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.f_proj = Linear(dim, dim, rng)
        self.ln_query = LayerNorm(dim)
        self.ln_branch = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)

    def query_sequence(self, fuzzy_tokens: Tensor, z_prev: Tensor) -> Tensor:
        if z_prev.shape[1] != fuzzy_tokens.shape[1] + 1:
            raise DimensionError(
                f"branch has {z_prev.shape[1]} rows, fuzzy tokens {fuzzy_tokens.shape[1]}; "
                "expected N + 1 and N"
            )
        return T.concat([self.f_proj(z_prev[:, :1]), fuzzy_tokens], axis=1)

    def forward(self, fuzzy_tokens: Tensor, z_prev: Tensor) -> Tensor:
        query = self.query_sequence(fuzzy_tokens, z_prev)
        fused = fca_attention(self.ln_query(query), self.ln_branch(z_prev), self.attn)
        return fused + z_prev


class AddFusion(Module):
    """Additive baseline: linearly projected fuzzy tokens added to patch tokens."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.proj = Linear(dim, dim, rng)

    def forward(self, fuzzy_tokens: Tensor, z_prev: Tensor) -> Tensor:
        B, N, D = fuzzy_tokens.shape
        if z_prev.shape[1] != N + 1:
            raise DimensionError(f"branch has {z_prev.shape[1]} rows, expected {N + 1}")
        delta = T.concat([Tensor(np.zeros((B, 1, D))), self.proj(fuzzy_tokens)], axis=1)
        return z_prev + delta


class ClassCrossAttention(Module):
    """Plain cross-attention: the branch class token queries its own sequence.

    No fuzzy input; only the class-token row is updated.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.f_proj = Linear(dim, dim, rng)
        self.ln_query = LayerNorm(dim)
        self.ln_branch = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)

    def forward(self, fuzzy_tokens, z_prev: Tensor) -> Tensor:
        B, M, D = z_prev.shape
        cls = self.attn(self.ln_query(self.f_proj(z_prev[:, :1])), self.ln_branch(z_prev))
        return z_prev + T.concat([cls, Tensor(np.zeros((B, M - 1, D)))], axis=1)


class MlpBlock(Module):
    """``literal``: MLP(LN(z) + z), no outer residual. ``prenorm``: z + MLP(LN(z))."""

    def __init__(self, dim: int, rng: np.random.Generator, mode: str = "literal", ratio: int = 4):
        if mode not in ("literal", "prenorm"):
            raise ConfigError(f"unknown mlp mode {mode!r}")
        self.mode = mode
        self.ln = LayerNorm(dim)
        self.mlp = MLP(dim, rng, ratio)

    def forward(self, z: Tensor) -> Tensor:
        if self.mode == "literal":
            return self.mlp(self.ln(z) + z)
        return z + self.mlp(self.ln(z))


class EncoderLayer(Module):
    """Pre-norm transformer layer: self-attention and MLP, each with a residual."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ratio: int = 4):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(dim, rng, ratio)

    def forward(self, z: Tensor) -> Tensor:
        h = self.ln1(z)
        z = z + self.attn(h, h)
        return z + self.mlp(self.ln2(z))


class BranchStack(Module):
    def __init__(self, mc: ModelConfig, rng: np.random.Generator):
        D, h = mc.dim, mc.heads
        self.fusion_mode = mc.fusion
        self.fusions = []
        self.mlps = []
        self.encoders = []
        for _ in range(mc.depth):
            if mc.fusion == "fca":
                self.fusions.append(FcaBlock(D, h, rng))
            elif mc.fusion == "add":
                self.fusions.append(AddFusion(D, rng))
            elif mc.fusion == "cross-attn":
                self.fusions.append(ClassCrossAttention(D, h, rng))
            if mc.fusion != "none":
                self.mlps.append(MlpBlock(D, rng, mc.mlp_mode, mc.mlp_ratio))
            self.encoders.append(EncoderLayer(D, h, rng, mc.mlp_ratio))

    def forward(self, fuzzy_tokens: Tensor | None, z: Tensor) -> Tensor:
        for i, encoder in enumerate(self.encoders):
            if self.fusion_mode != "none":
                z = self.mlps[i](self.fusions[i](fuzzy_tokens, z))
            z = encoder(z)
        return z


class ClassificationHead(Module):
    """Class logits from the concatenated class tokens; softmax is left to the loss.

    ``norm="post"``: LN(concat @ W_x + b), layer norm over the K logits.
    ``norm="pre"``: LN(concat) @ W_x + b.
    """

    def __init__(self, num_branches: int, dim: int, num_classes: int, rng: np.random.Generator,
                 norm: str = "pre"):
        if num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {num_classes}")
        if norm not in ("post", "pre"):
            raise ConfigError(f"unknown head norm {norm!r}")
        self.norm = norm
        self.proj = Linear(num_branches * dim, num_classes, rng)
        self.ln = LayerNorm(num_classes if norm == "post" else num_branches * dim)

    def forward(self, class_tokens: list[Tensor]) -> Tensor:
        x = T.concat(class_tokens, axis=-1)
        if x.shape[-1] != self.proj.weight.shape[0]:
            raise DimensionError(f"head expects {self.proj.weight.shape[0]} inputs, got {x.shape[-1]}")
        if self.norm == "post":
            return self.ln(self.proj(x))
        return self.proj(self.ln(x))


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass, for visualisation and CAM."""

    logits: Tensor
    features: GranularFeatures
    fuzzy_map: Tensor | None
    memberships: np.ndarray | None
    branch_outputs: dict[str, Tensor]


class FMDNN(Module):
    """Fuzzy-guided multi-granular classifier.

    ``config.model.fusion`` selects the fusion step (``fca``, ``add``,
    ``cross-attn``, ``none``); ``config.model.branches`` masks granularities.
    """

    def __init__(self, config: Config):
        config.validate()
        self.config = config
        mc = config.model
        rng = np.random.default_rng(mc.init_seed)
        self.granularity = GranularityConfig.from_model(mc)
        g = self.granularity
        N = g.num_tokens
        self.branches = [b for b in HEAD_ORDER if b in mc.branches]
        self.extractor = GranularExtractor(g, rng, tuple(mc.widths))
        self.uses_fuzzy = mc.fusion in ("fca", "add")
        if self.uses_fuzzy:
            self.fuzzy_fusion = FuzzyFusion(config.fuzzy.bias, config.fuzzy.clamp)
            self.fuzzy_embed = FuzzyPatchEmbed(g.P, N, mc.dim, rng)
        self.embeds = {b: PatchEmbed(g.channels(b), g.patch_size(b), N, mc.dim, rng) for b in self.branches}
        self.stacks = {b: BranchStack(mc, rng) for b in self.branches}
        self.head = ClassificationHead(len(self.branches), mc.dim, mc.num_classes, rng,
                                       mc.head_norm)
        self._membership = config.fuzzy.membership()

    def trace(self, images) -> ForwardTrace:
        """Full forward pass returning the logits and intermediates.

        ``images`` is a (B, 3, H, W) float array in [0, 1].
        """
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        g = self.granularity
        if x.ndim != 4 or x.shape[1:] != (3, g.H, g.W):
            raise DimensionError(f"expected (B, 3, {g.H}, {g.W}) images, got {x.shape}")
        granular_in = x
        if self.config.model.input_norm == "center":
            # per-image channel centering for the conv path; fuzzy maps see raw intensities
            granular_in = x - T.mean(x, axis=(2, 3), keepdims=True)
        features = self.extractor(granular_in)
        fuzzy_tokens = fuzzy_map = memberships = None
        if self.uses_fuzzy:
            memberships = membership_stack(x.data, self._membership)
            fuzzy_map = self.fuzzy_fusion(Tensor(memberships))
            fuzzy_tokens = self.fuzzy_embed(fuzzy_map)
        outputs = {}
        for b in self.branches:
            outputs[b] = self.stacks[b](fuzzy_tokens, self.embeds[b](features.get(b)))
        logits = self.head([outputs[b][:, 0] for b in self.branches])
        return ForwardTrace(logits, features, fuzzy_map, memberships, outputs)

    def forward(self, images) -> Tensor:
        return self.trace(images).logits

    def predict(self, images) -> np.ndarray:
        with T.no_grad():
            return self.forward(images).data.argmax(axis=-1)
