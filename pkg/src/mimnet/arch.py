"""The nested word/sentence segmentation network.

A convolutional stem embeds the image twice: a fine "visual word" grid
(each word covers a small pixel patch) and a coarse "visual sentence" grid
(each sentence spans a square block of words).  Four encoder stages each run
nested blocks: a weight-shared word-level scan block inside every sentence,
an additive projection of each sentence's words into its sentence embedding,
and a sentence-level scan block over the sentence grid.  Patch merging
halves both grids between stages.  Per-stage sentence maps are upsampled to
strides 4/8/16/32 and fused by a plain expand-concat-convolve decoder that
emits one logit map at input resolution.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, LayerNorm, Linear, Module
from .ss2d import ConvFFN, VssBlock
from .tensor import ShapeError, Tensor, dtype_for


@dataclass
class MimConfig:
    """Geometry and ablation switches; JSON config files mirror these keys."""

    input_h: int = 64
    input_w: int = 64
    word_dim: int = 8
    sentence_dim: int = 32
    blocks_per_stage: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    word_pixels: int = 2
    words_per_sentence_side: int = 4
    sentence_init: str = "stem"
    inner_enabled: bool = True
    outer_bypass: bool = False
    share_scan_params: bool = False
    state_dim: int = 16
    precision: str = "double"

    N_STAGES = 4

    def validate(self) -> "MimConfig":
        if self.word_pixels not in (1, 2, 4):
            raise ValueError(f"word_pixels must be 1, 2 or 4, got {self.word_pixels}")
        wps = self.words_per_sentence_side
        if wps < 2 or wps & (wps - 1):
            raise ValueError(f"words_per_sentence_side must be a power of two >= 2, got {wps}")
        divisor = self.word_pixels * wps * 2 ** (self.N_STAGES - 1)
        for name, extent in (("input_h", self.input_h), ("input_w", self.input_w)):
            if extent % divisor or extent <= 0:
                raise ValueError(f"{name}={extent} must be a positive multiple of {divisor}")
        if len(self.blocks_per_stage) != self.N_STAGES:
            raise ValueError("blocks_per_stage must list four stages")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ValueError("each stage needs at least one block")
        if self.sentence_init not in ("stem", "zero"):
            raise ValueError(f"sentence_init must be 'stem' or 'zero', got {self.sentence_init!r}")
        if self.word_dim < 1 or self.sentence_dim < 2 or self.sentence_dim % 2:
            raise ValueError("word_dim must be >= 1 and sentence_dim an even number >= 2")
        if self.state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        dtype_for(self.precision)
        return self

    # -- stage geometry ------------------------------------------------------

    def word_dim_at(self, stage: int) -> int:
        return self.word_dim * 2 ** stage

    def sentence_dim_at(self, stage: int) -> int:
        return self.sentence_dim * 2 ** stage

    def word_hw_at(self, stage: int) -> tuple[int, int]:
        f = self.word_pixels * 2 ** stage
        return self.input_h // f, self.input_w // f

    def sentence_hw_at(self, stage: int) -> tuple[int, int]:
        hw = self.word_hw_at(stage)
        return hw[0] // self.words_per_sentence_side, hw[1] // self.words_per_sentence_side

    @property
    def words_per_sentence(self) -> int:
        return self.words_per_sentence_side ** 2

    @property
    def dtype(self):
        return dtype_for(self.precision)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, path) -> "MimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class StageState:
    """Paired word and sentence embeddings flowing through one stage.

    words: [B, n, m, c] (n sentences, m words each); sentences: [B, n, d].
    Both reshape losslessly to 2D grid layouts via the geometry fields.
    """

    words: Tensor
    sentences: Tensor
    sentence_hw: tuple[int, int]
    word_sub: int  # words per sentence side

    def word_grid(self) -> Tensor:
        b, n, m, c = self.words.shape
        hs, ws = self.sentence_hw
        p = self.word_sub
        g = T.reshape(self.words, (b, hs, ws, p, p, c))
        g = T.permute(g, (0, 1, 3, 2, 4, 5))
        return T.reshape(g, (b, hs * p, ws * p, c))

    def sentence_grid(self) -> Tensor:
        b, n, d = self.sentences.shape
        hs, ws = self.sentence_hw
        return T.reshape(self.sentences, (b, hs, ws, d))


def grid_to_words(grid: Tensor, word_sub: int) -> Tensor:
    """[B, Hw, Ww, c] -> [B, n, m, c] with sentence-aligned word blocks."""
    b, hw, ww, c = grid.shape
    p = word_sub
    if hw % p or ww % p:
        raise ShapeError(f"word grid {hw}x{ww} not divisible into {p}x{p} sentences")
    hs, ws = hw // p, ww // p
    g = T.reshape(grid, (b, hs, p, ws, p, c))
    g = T.permute(g, (0, 1, 3, 2, 4, 5))
    return T.reshape(g, (b, hs * ws, p * p, c))


def grid_to_sentences(grid: Tensor) -> Tensor:
    b, hs, ws, d = grid.shape
    return T.reshape(grid, (b, hs * ws, d))


def _conv_bn_act(convs: list, x: Tensor) -> Tensor:
    for conv, bn in convs:
        x = T.gelu(bn(conv(x)))
    return x


class ConvStem(Module):
    """Stacked 3x3 convolutions producing the initial word (and optionally
    sentence) embeddings; no positional parameters are introduced."""

    def __init__(self, cfg: MimConfig, *, rng, dtype):
        super().__init__()
        c, d = cfg.word_dim, cfg.sentence_dim
        self.word_convs = []
        in_ch = 3
        n_down = cfg.word_pixels.bit_length() - 1  # 1->0, 2->1, 4->2
        for _ in range(n_down):
            self.word_convs.append(Conv2d(in_ch, c, 3, stride=2, padding=1, bias=False, rng=rng, dtype=dtype))
            self.word_convs.append(BatchNorm2d(c, dtype=dtype))
            in_ch = c
        self.word_convs.append(Conv2d(in_ch, c, 3, stride=1, padding=1, bias=False, rng=rng, dtype=dtype))
        self.word_convs.append(BatchNorm2d(c, dtype=dtype))

        self.sentence_convs = []
        if cfg.sentence_init == "stem":
            in_ch = c
            n_down = cfg.words_per_sentence_side.bit_length() - 1
            for i in range(n_down):
                out_ch = d if i == n_down - 1 else c * 2 ** (i + 1)
                self.sentence_convs.append(
                    Conv2d(in_ch, out_ch, 3, stride=2, padding=1, bias=False, rng=rng, dtype=dtype))
                self.sentence_convs.append(BatchNorm2d(out_ch, dtype=dtype))
                in_ch = out_ch

    def _run(self, convs, x):
        return _conv_bn_act(list(zip(convs[0::2], convs[1::2])), x)

    def forward(self, images: Tensor, cfg: MimConfig) -> StageState:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"stem expects [B,3,H,W], got {images.shape}")
        if images.shape[2] != cfg.input_h or images.shape[3] != cfg.input_w:
            raise ShapeError(
                f"image extent {images.shape[2:]} != configured {(cfg.input_h, cfg.input_w)}")
        word_map = self._run(self.word_convs, images)           # [B, C, Hw, Ww]
        word_grid = T.permute(word_map, (0, 2, 3, 1))
        words = grid_to_words(word_grid, cfg.words_per_sentence_side)
        hs, ws = cfg.sentence_hw_at(0)
        if cfg.sentence_init == "stem":
            sent_map = self._run(self.sentence_convs, word_map)  # [B, D, hs, ws]
            sentences = grid_to_sentences(T.permute(sent_map, (0, 2, 3, 1)))
        else:
            b = images.shape[0]
            sentences = Tensor(np.zeros((b, hs * ws, cfg.sentence_dim), dtype=images.dtype))
        return StageState(words=words, sentences=sentences,
                          sentence_hw=(hs, ws), word_sub=cfg.words_per_sentence_side)


class PatchMerge(Module):
    """Concatenate each 2x2 neighborhood, layer norm, linear 4c -> 2c."""

    def __init__(self, dim: int, *, rng, dtype):
        super().__init__()
        self.norm = LayerNorm(4 * dim, dtype=dtype)
        self.reduce = Linear(4 * dim, 2 * dim, bias=False, rng=rng, dtype=dtype)

    def forward(self, grid: Tensor) -> Tensor:
        b, h, w, c = grid.shape
        if h % 2 or w % 2:
            raise ShapeError(f"patch_merge needs even extents, got {h}x{w}")
        x0 = grid[:, 0::2, 0::2, :]
        x1 = grid[:, 1::2, 0::2, :]
        x2 = grid[:, 0::2, 1::2, :]
        x3 = grid[:, 1::2, 1::2, :]
        merged = T.concat([x0, x1, x2, x3], axis=-1)
        return self.reduce(self.norm(merged))


class MimBlock(Module):
    """One nested block: word-level update (weight-shared across sentences),
    additive word -> sentence injection, then sentence-level update."""

    def __init__(self, word_dim: int, sent_dim: int, word_sub: int, inner_enabled: bool,
                 outer_bypass: bool = False, state_dim: int = 16, share_scan_params: bool = False,
                 *, rng, dtype):
        super().__init__()
        self.word_sub = word_sub
        self.inner_enabled = inner_enabled
        self.outer_bypass = outer_bypass
        if inner_enabled:
            self.inner_norm1 = LayerNorm(word_dim, dtype=dtype)
            self.inner_vss = VssBlock(word_dim, state_dim, share_scan_params, rng=rng, dtype=dtype)
            self.inner_norm2 = LayerNorm(word_dim, dtype=dtype)
            self.inner_ffn = ConvFFN(word_dim, rng=rng, dtype=dtype)
        m = word_sub * word_sub
        self.inject_proj = Linear(m * word_dim, sent_dim, bias=False, rng=rng, dtype=dtype)
        self.outer_norm1 = LayerNorm(sent_dim, dtype=dtype)
        self.outer_vss = VssBlock(sent_dim, state_dim, share_scan_params, rng=rng, dtype=dtype)
        self.outer_norm2 = LayerNorm(sent_dim, dtype=dtype)
        self.outer_ffn = ConvFFN(sent_dim, rng=rng, dtype=dtype)

    def inner_update(self, words: Tensor) -> Tensor:
        """Residual scan + FFN over each sentence's word grid, shared weights."""
        b, n, m, c = words.shape
        p = self.word_sub
        if p * p != m:
            raise ShapeError(f"word count {m} is not a {p}x{p} grid")
        x = T.reshape(words, (b * n, p, p, c))
        x = x + self.inner_vss(self.inner_norm1(x))
        x = x + self.inner_ffn(self.inner_norm2(x))
        return T.reshape(x, (b, n, m, c))

    def inject_words(self, sentences: Tensor, words: Tensor) -> Tensor:
        b, n, m, c = words.shape
        return sentences + self.inject_proj(T.reshape(words, (b, n, m * c)))

    def outer_update(self, sent_grid: Tensor) -> Tensor:
        s = sent_grid + self.outer_vss(self.outer_norm1(sent_grid))
        s = s + self.outer_ffn(self.outer_norm2(s))
        return s

    def forward(self, state: StageState) -> StageState:
        words = state.words
        if self.inner_enabled:
            words = self.inner_update(words)
        sentences = self.inject_words(state.sentences, words)
        if not self.outer_bypass:
            b, n, d = sentences.shape
            hs, ws = state.sentence_hw
            grid = self.outer_update(T.reshape(sentences, (b, hs, ws, d)))
            sentences = T.reshape(grid, (b, n, d))
        return StageState(words=words, sentences=sentences,
                          sentence_hw=state.sentence_hw, word_sub=state.word_sub)


class Stage(Module):
    def __init__(self, blocks: list[MimBlock]):
        super().__init__()
        self.blocks = blocks

    def forward(self, state: StageState) -> StageState:
        for block in self.blocks:
            state = block(state)
        return state


class Encoder(Module):
    """Stem, four block stages, and the between-stage grid merges."""

    def __init__(self, cfg: MimConfig, *, rng, dtype):
        super().__init__()
        self.stem = ConvStem(cfg, rng=rng, dtype=dtype)
        self.stages = []
        self.word_merges = []
        self.sentence_merges = []
        for s in range(cfg.N_STAGES):
            if s > 0:
                self.word_merges.append(PatchMerge(cfg.word_dim_at(s - 1), rng=rng, dtype=dtype))
                self.sentence_merges.append(PatchMerge(cfg.sentence_dim_at(s - 1), rng=rng, dtype=dtype))
            blocks = [MimBlock(cfg.word_dim_at(s), cfg.sentence_dim_at(s),
                               cfg.words_per_sentence_side, cfg.inner_enabled,
                               cfg.outer_bypass, cfg.state_dim, cfg.share_scan_params,
                               rng=rng, dtype=dtype)
                      for _ in range(cfg.blocks_per_stage[s])]
            self.stages.append(Stage(blocks))

    def merge_state(self, state: StageState, stage: int) -> StageState:
        word_grid = self.word_merges[stage - 1](state.word_grid())
        sent_grid = self.sentence_merges[stage - 1](state.sentence_grid())
        hs, ws = sent_grid.shape[1], sent_grid.shape[2]
        return StageState(words=grid_to_words(word_grid, state.word_sub),
                          sentences=grid_to_sentences(sent_grid),
                          sentence_hw=(hs, ws), word_sub=state.word_sub)

    def forward(self, images: Tensor, cfg: MimConfig) -> list[Tensor]:
        """Return the sentence grid [B, hs, ws, d] after every stage."""
        with T.flops_section("stem"):
            state = self.stem(images, cfg)
        outputs = []
        for s, stage in enumerate(self.stages):
            with T.flops_section(f"stage{s + 1}"):
                if s > 0:
                    state = self.merge_state(state, s)
                state = stage(state)
            outputs.append(state.sentence_grid())
        return outputs


class UpsampleBlock(Module):
    """2x2 stride-2 transposed conv, BN, GeLU, 3x3 conv, BN, GeLU (spatial x2)."""

    def __init__(self, channels: int, *, rng, dtype):
        super().__init__()
        self.up = ConvTranspose2d(channels, channels, 2, stride=2, bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(channels, dtype=dtype)
        self.conv = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = T.gelu(self.bn1(self.up(x)))
        return T.gelu(self.bn2(self.conv(x)))


class PatchExpand(Module):
    """Double the spatial extent and halve the channels (linear + pixel shuffle)."""

    def __init__(self, dim: int, *, rng, dtype):
        super().__init__()
        if dim % 2:
            raise ValueError("patch expand needs an even channel count")
        self.dim = dim
        self.expand = Linear(dim, 2 * dim, bias=False, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        y = self.expand(T.permute(x, (0, 2, 3, 1)))          # [B, h, w, 2c]
        y = T.reshape(y, (b, h, w, 2, 2, c // 2))
        y = T.permute(y, (0, 1, 3, 2, 4, 5))
        y = T.reshape(y, (b, 2 * h, 2 * w, c // 2))
        return T.permute(y, (0, 3, 1, 2))


class ResidualConvBlock(Module):
    """Two 3x3 conv + BN + GeLU with an additive skip."""

    def __init__(self, channels: int, *, rng, dtype):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(channels, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        y = T.gelu(self.bn1(self.conv1(x)))
        y = T.gelu(self.bn2(self.conv2(y)))
        return x + y


class Decoder(Module):
    """Deepest-first: expand, concatenate the matching encoder feature, fuse
    with a 1x1 conv, refine with two residual blocks; finish with a 1x1 head
    and bilinear interpolation back to input resolution."""

    def __init__(self, cfg: MimConfig, *, rng, dtype):
        super().__init__()
        dims = [cfg.sentence_dim_at(s) for s in range(cfg.N_STAGES)]
        self.expands = []
        self.fuses = []
        self.refines = []
        for level in (3, 2, 1):
            self.expands.append(PatchExpand(dims[level], rng=rng, dtype=dtype))
            self.fuses.append(Conv2d(2 * dims[level - 1], dims[level - 1], 1, rng=rng, dtype=dtype))
            self.refines.append(ResidualConvBlock(dims[level - 1], rng=rng, dtype=dtype))
            self.refines.append(ResidualConvBlock(dims[level - 1], rng=rng, dtype=dtype))
        self.head = Conv2d(dims[0], 1, 1, rng=rng, dtype=dtype)

    def forward(self, feats: list[Tensor], out_hw: tuple[int, int]) -> Tensor:
        strides = [out_hw[0] // f.shape[2] for f in feats]
        if strides != [4, 8, 16, 32]:
            raise ShapeError(f"decoder expects strides [4, 8, 16, 32], got {strides}")
        x = feats[3]
        for i, level in enumerate((3, 2, 1)):
            x = self.expands[i](x)
            x = T.concat([x, feats[level - 1]], axis=1)
            x = self.fuses[i](x)
            x = self.refines[2 * i](x)
            x = self.refines[2 * i + 1](x)
        return T.bilinear_interpolate(self.head(x), out_hw)


class MimModel(Module):
    """Stem + nested encoder + upsample adapters + decoder; emits raw logits."""

    def __init__(self, cfg: MimConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        dtype = cfg.dtype
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg, rng=rng, dtype=dtype)
        self.upsamples = [UpsampleBlock(cfg.sentence_dim_at(s), rng=rng, dtype=dtype)
                          for s in range(cfg.N_STAGES)]
        self.decoder = Decoder(cfg, rng=rng, dtype=dtype)

    def encoder_forward(self, images: Tensor) -> list[Tensor]:
        return self.encoder(images, self.cfg)

    def forward(self, images: Tensor) -> Tensor:
        stage_grids = self.encoder_forward(images)
        feats = []
        with T.flops_section("upsample"):
            for grid, up in zip(stage_grids, self.upsamples):
                feats.append(up(T.permute(grid, (0, 3, 1, 2))))
        with T.flops_section("decoder"):
            return self.decoder(feats, (self.cfg.input_h, self.cfg.input_w))


def build_model(cfg: MimConfig, seed: int = 0) -> MimModel:
    return MimModel(cfg, seed=seed)
