"""Block and model assembly for the two desk-scale heads.

A block applies two pre-normalized residual sublayers: the selective-SSM
sequence mixer, then a channel mixer (frequency-domain gating, an MLP, or
none at all -- the last two exist so the mixers can be ablated against
each other).  The vision head stacks blocks in a four-stage pyramid over
image patches; the forecasting head runs them over lookback windows of a
multivariate series.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import spectral, ssm
from . import tensor as T
from .errors import ConfigError, ShapeError
from .spectral import EinFftParams
from .ssm import SsmParams
from .tensor import Tensor

MIXER_EINFFT = "einfft"
MIXER_MLP = "mlp"
MIXER_NONE = "none"

STEM_STRIDE = 4
STAGE_STRIDE = 2


@dataclass
class SimbaBlockConfig:
    """Dimensional and regularization hyperparameters of one block."""

    dim: int
    expand: int = ssm.DEFAULT_EXPAND
    state: int = ssm.DEFAULT_STATE_DIM
    conv_width: int = ssm.DEFAULT_CONV_WIDTH
    einfft_blocks: int = 4
    sparsity_threshold: float = 0.01
    dropout: float = 0.0
    norm_eps: float = 1e-5
    channel_mixer: str = MIXER_EINFFT
    mlp_ratio: int = 2
    fft_axis: str = spectral.SEQUENCE_AXIS
    reverse: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("block.dim", f"must be positive, got {self.dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("block.dropout", f"must be in [0, 1), got {self.dropout}")
        if self.norm_eps <= 0:
            raise ConfigError("block.norm_eps", f"must be > 0, got {self.norm_eps}")
        if self.channel_mixer not in (MIXER_EINFFT, MIXER_MLP, MIXER_NONE):
            raise ConfigError("block.channel_mixer", f"unknown mixer {self.channel_mixer!r}")
        if self.channel_mixer == MIXER_EINFFT and self.fft_axis == spectral.SEQUENCE_AXIS:
            if self.dim % self.einfft_blocks != 0:
                raise ConfigError(
                    "block.einfft_blocks",
                    f"dim {self.dim} is not divisible by einfft_blocks {self.einfft_blocks}",
                )


@dataclass
class MlpParams:
    """Two-layer gated channel MLP used as the ablation mixer."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {
            f"{prefix}w1": self.w1,
            f"{prefix}b1": self.b1,
            f"{prefix}w2": self.w2,
            f"{prefix}b2": self.b2,
        }


@dataclass
class SimbaBlockParams:
    """One block: SSM mixer params, mixer pre-norm affine, channel mixer."""

    config: SimbaBlockConfig
    ssm: SsmParams
    norm2_gamma: Optional[Tensor] = None
    norm2_beta: Optional[Tensor] = None
    mixer: Union[EinFftParams, MlpParams, None] = None

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = self.ssm.named_parameters(prefix=f"{prefix}ssm.")
        if self.norm2_gamma is not None:
            out[f"{prefix}norm2_gamma"] = self.norm2_gamma
            out[f"{prefix}norm2_beta"] = self.norm2_beta
        if self.mixer is not None:
            out.update(self.mixer.named_parameters(prefix=f"{prefix}mixer."))
        return out


def init_mlp_params(
    rng: np.random.Generator, dim: int, ratio: int, init_std: float, dtype: str
) -> MlpParams:
    hidden = ratio * dim
    return MlpParams(
        w1=T.normal(rng, (dim, hidden), std=init_std, dtype=dtype, requires_grad=True),
        b1=T.zeros((hidden,), dtype, requires_grad=True),
        w2=T.normal(rng, (hidden, dim), std=init_std, dtype=dtype, requires_grad=True),
        b2=T.zeros((dim,), dtype, requires_grad=True),
    )


def init_simba_block(
    rng: np.random.Generator,
    cfg: SimbaBlockConfig,
    init_std: float = 0.02,
    dtype: str = T.REAL64,
) -> SimbaBlockParams:
    ssm_params = ssm.init_ssm_params(
        rng,
        dim=cfg.dim,
        expand=cfg.expand,
        state=cfg.state,
        conv_width=cfg.conv_width,
        init_std=init_std,
        norm_eps=cfg.norm_eps,
        reverse=cfg.reverse,
        dtype=dtype,
    )
    if cfg.channel_mixer == MIXER_NONE:
        return SimbaBlockParams(config=cfg, ssm=ssm_params)
    norm2_gamma = T.ones((cfg.dim,), dtype, requires_grad=True)
    norm2_beta = T.zeros((cfg.dim,), dtype, requires_grad=True)
    if cfg.channel_mixer == MIXER_EINFFT:
        mixer = spectral.init_einfft_params(
            rng,
            channels=cfg.dim,
            num_blocks=cfg.einfft_blocks,
            sparsity_threshold=cfg.sparsity_threshold,
            fft_axis=cfg.fft_axis,
            init_std=init_std,
            dtype=dtype,
        )
    else:
        mixer = init_mlp_params(rng, cfg.dim, cfg.mlp_ratio, init_std, dtype)
    return SimbaBlockParams(config=cfg, ssm=ssm_params, norm2_gamma=norm2_gamma, norm2_beta=norm2_beta, mixer=mixer)


def mlp_forward(x: Tensor, p: MlpParams) -> Tensor:
    return T.add(T.matmul(T.silu(T.add(T.matmul(x, p.w1), p.b1)), p.w2), p.b2)


def simba_block(
    x: Tensor,
    p: SimbaBlockParams,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Residual sequence mixing then residual channel mixing, pre-normalized.

    With all sublayer output projections zeroed the block is the identity
    map.
    """
    cfg = p.config
    x = T.as_tensor(x)
    if x.ndim != 3 or x.shape[2] != cfg.dim:
        raise ShapeError(f"simba_block: expected (B, N, {cfg.dim}), got {x.shape}")
    mixed = ssm.mamba_block(x, p.ssm, train=train, rng=rng)
    x = T.add(x, T.dropout(mixed, cfg.dropout, train, rng))
    if p.mixer is None:
        return x
    h = T.layer_norm(x, cfg.norm_eps)
    h = T.add(T.mul(h, p.norm2_gamma), p.norm2_beta)
    if isinstance(p.mixer, EinFftParams):
        h = spectral.einfft_forward(h, p.mixer, train=train, rng=rng)
    else:
        h = mlp_forward(h, p.mixer)
    return T.add(x, T.dropout(h, cfg.dropout, train, rng))


# -- token geometry ---------------------------------------------------------


def patch_embed(images: Tensor, weight: Tensor, stride: int = STEM_STRIDE) -> Tensor:
    """Non-overlapping patch projection (bias-free stem).

    ``(B, C, H, W) -> (B, (H/stride) * (W/stride), D)`` where the weight
    maps flattened ``C * stride * stride`` patch pixels to ``D``.
    """
    images = T.as_tensor(images)
    if images.ndim != 4:
        raise ShapeError(f"patch_embed: expected (B, C, H, W), got {images.shape}")
    b, c, h, w = images.shape
    if h % stride or w % stride:
        raise ShapeError(f"patch_embed: spatial dims {(h, w)} not divisible by stride {stride}")
    gh, gw = h // stride, w // stride
    x = T.reshape(images, (b, c, gh, stride, gw, stride))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    x = T.reshape(x, (b, gh * gw, c * stride * stride))
    return T.matmul(x, weight)


def downsample(tokens: Tensor, weight: Tensor, stride: int = STAGE_STRIDE) -> Tensor:
    """Merge ``stride x stride`` token neighbourhoods with a linear projection.

    Tokens must form a square grid in row-major order.
    """
    tokens = T.as_tensor(tokens)
    b, n, c = tokens.shape
    g = int(round(np.sqrt(n)))
    if g * g != n:
        raise ShapeError(f"downsample: token count {n} is not a square grid")
    if g % stride:
        raise ShapeError(f"downsample: grid side {g} not divisible by stride {stride}")
    gh = g // stride
    x = T.reshape(tokens, (b, gh, stride, gh, stride, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    x = T.reshape(x, (b, gh * gh, stride * stride * c))
    return T.matmul(x, weight)


# -- vision head -------------------------------------------------------------


@dataclass
class VisionConfig:
    """Hierarchical image classifier: stem + four stages of blocks."""

    image_size: int = 32
    num_classes: int = 10
    stage_dims: tuple = (32, 64, 96, 128)
    stage_depths: tuple = (1, 1, 2, 1)
    in_channels: int = 3
    expand: int = ssm.DEFAULT_EXPAND
    state: int = ssm.DEFAULT_STATE_DIM
    conv_width: int = ssm.DEFAULT_CONV_WIDTH
    einfft_blocks: int = 4
    sparsity_threshold: float = 0.01
    dropout: float = 0.0
    norm_eps: float = 1e-5
    channel_mixer: str = MIXER_EINFFT
    mlp_ratio: int = 2
    dtype: str = T.REAL32

    def __post_init__(self):
        if len(self.stage_dims) != len(self.stage_depths):
            raise ConfigError("model.stage_dims", "stage_dims and stage_depths lengths differ")
        if any(d < 1 for d in self.stage_depths):
            raise ConfigError("model.stage_depths", "every stage needs depth >= 1")
        total_stride = STEM_STRIDE * STAGE_STRIDE ** (len(self.stage_dims) - 1)
        if self.image_size % total_stride:
            raise ConfigError(
                "model.image_size",
                f"{self.image_size} is not divisible by the cumulative downsampling {total_stride}",
            )

    def block_config(self, dim: int) -> SimbaBlockConfig:
        return SimbaBlockConfig(
            dim=dim,
            expand=self.expand,
            state=self.state,
            conv_width=self.conv_width,
            einfft_blocks=self.einfft_blocks,
            sparsity_threshold=self.sparsity_threshold,
            dropout=self.dropout,
            norm_eps=self.norm_eps,
            channel_mixer=self.channel_mixer,
            mlp_ratio=self.mlp_ratio,
        )


class VisionModel:
    """Stem, stages of blocks with downsampling, mean pool, linear head."""

    def __init__(self, cfg: VisionConfig, rng: np.random.Generator, init_std: float = 0.02):
        self.cfg = cfg
        d = cfg.dtype
        patch_in = cfg.in_channels * STEM_STRIDE * STEM_STRIDE
        self.stem_w = T.normal(rng, (patch_in, cfg.stage_dims[0]), std=init_std, dtype=d, requires_grad=True)
        self.stages: list[list[SimbaBlockParams]] = []
        self.merges: list[Tensor] = []
        for i, (dim, depth) in enumerate(zip(cfg.stage_dims, cfg.stage_depths)):
            self.stages.append(
                [init_simba_block(rng, cfg.block_config(dim), init_std=init_std, dtype=d) for _ in range(depth)]
            )
            if i + 1 < len(cfg.stage_dims):
                merge_in = STAGE_STRIDE * STAGE_STRIDE * dim
                self.merges.append(
                    T.normal(rng, (merge_in, cfg.stage_dims[i + 1]), std=init_std, dtype=d, requires_grad=True)
                )
        self.head_w = T.normal(rng, (cfg.stage_dims[-1], cfg.num_classes), std=init_std, dtype=d, requires_grad=True)
        self.head_b = T.zeros((cfg.num_classes,), d, requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"stem.w": self.stem_w}
        for i, blocks in enumerate(self.stages):
            for j, blk in enumerate(blocks):
                out.update(blk.named_parameters(prefix=f"stage{i}.block{j}."))
        for i, m in enumerate(self.merges):
            out[f"merge{i}.w"] = m
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def forward(self, images, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        x = patch_embed(T.as_tensor(images), self.stem_w)
        for i, blocks in enumerate(self.stages):
            for blk in blocks:
                x = simba_block(x, blk, train=train, rng=rng)
            if i < len(self.merges):
                x = downsample(x, self.merges[i])
        pooled = T.mean(x, axis=1)
        return T.add(T.matmul(pooled, self.head_w), self.head_b)


def vision_forward(
    images, cfg_or_model, train: bool = False, rng: np.random.Generator | None = None
) -> Tensor:
    """Logits for a batch of images; accepts a model or builds one from config."""
    model = cfg_or_model
    if isinstance(cfg_or_model, VisionConfig):
        if rng is None:
            raise ConfigError("vision_forward", "building from a config requires a generator")
        model = VisionModel(cfg_or_model, rng)
    return model.forward(images, train=train, rng=rng)


def micro_vision_config(channel_mixer: str = MIXER_EINFFT, **overrides) -> VisionConfig:
    """The canonical desk-scale classifier (dims 32/64/96/128, depths 1/1/2/1)."""
    return VisionConfig(channel_mixer=channel_mixer, **overrides)


def small_vision_config(**overrides) -> VisionConfig:
    """A pyramid in the published small-model FLOP class.

    Stage widths/depths are a reconstruction chosen to land near the
    reported parameter budget; they are not published values.
    """
    defaults = dict(
        image_size=224, num_classes=1000, stage_dims=(64, 128, 320, 448), stage_depths=(3, 4, 6, 3)
    )
    defaults.update(overrides)
    return VisionConfig(**defaults)


# -- forecasting head ---------------------------------------------------------


@dataclass
class ForecastConfig:
    """Multivariate forecaster over standardized lookback windows."""

    num_channels: int
    lookback: int = 96
    horizon: int = 96
    dim: int = 32
    depth: int = 2
    expand: int = ssm.DEFAULT_EXPAND
    state: int = ssm.DEFAULT_STATE_DIM
    conv_width: int = ssm.DEFAULT_CONV_WIDTH
    einfft_blocks: int = 4
    sparsity_threshold: float = 0.01
    dropout: float = 0.0
    norm_eps: float = 1e-5
    channel_mixer: str = MIXER_EINFFT
    mlp_ratio: int = 2
    dtype: str = T.REAL32

    def __post_init__(self):
        if self.lookback < 1:
            raise ConfigError("model.lookback", f"must be positive, got {self.lookback}")
        if self.horizon < 1:
            raise ConfigError("model.horizon", f"must be positive, got {self.horizon}")
        if self.num_channels < 1:
            raise ConfigError("model.num_channels", f"must be positive, got {self.num_channels}")

    def block_config(self) -> SimbaBlockConfig:
        return SimbaBlockConfig(
            dim=self.dim,
            expand=self.expand,
            state=self.state,
            conv_width=self.conv_width,
            einfft_blocks=self.einfft_blocks,
            sparsity_threshold=self.sparsity_threshold,
            dropout=self.dropout,
            norm_eps=self.norm_eps,
            channel_mixer=self.channel_mixer,
            mlp_ratio=self.mlp_ratio,
        )


class ForecastModel:
    """Channel embedding, blocks over the lookback axis, linear time head."""

    def __init__(self, cfg: ForecastConfig, rng: np.random.Generator, init_std: float = 0.02):
        self.cfg = cfg
        d = cfg.dtype
        self.embed_w = T.normal(rng, (cfg.num_channels, cfg.dim), std=init_std, dtype=d, requires_grad=True)
        self.embed_b = T.zeros((cfg.dim,), d, requires_grad=True)
        self.blocks = [
            init_simba_block(rng, cfg.block_config(), init_std=init_std, dtype=d) for _ in range(cfg.depth)
        ]
        self.out_w = T.normal(rng, (cfg.dim, cfg.num_channels), std=init_std, dtype=d, requires_grad=True)
        self.out_b = T.zeros((cfg.num_channels,), d, requires_grad=True)
        # time head: shared (lookback -> horizon) projection applied per channel
        self.time_w = T.normal(rng, (cfg.lookback, cfg.horizon), std=init_std, dtype=d, requires_grad=True)
        self.time_b = T.zeros((cfg.horizon,), d, requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embed.w": self.embed_w, "embed.b": self.embed_b}
        for j, blk in enumerate(self.blocks):
            out.update(blk.named_parameters(prefix=f"block{j}."))
        out.update({"out.w": self.out_w, "out.b": self.out_b, "time.w": self.time_w, "time.b": self.time_b})
        return out

    def forward(self, series, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        x = T.as_tensor(series)
        if x.ndim != 3 or x.shape[1] != self.cfg.lookback or x.shape[2] != self.cfg.num_channels:
            raise ShapeError(
                f"forecast: expected (B, {self.cfg.lookback}, {self.cfg.num_channels}), got {x.shape}"
            )
        h = T.add(T.matmul(x, self.embed_w), self.embed_b)
        for blk in self.blocks:
            h = simba_block(h, blk, train=train, rng=rng)
        h = T.add(T.matmul(h, self.out_w), self.out_b)  # (B, L, C)
        h = T.transpose(h, (0, 2, 1))  # (B, C, L)
        h = T.add(T.matmul(h, self.time_w), self.time_b)  # (B, C, T)
        return T.transpose(h, (0, 2, 1))


def forecast_forward(
    series, cfg_or_model, train: bool = False, rng: np.random.Generator | None = None
) -> Tensor:
    """Horizon predictions for standardized lookback windows."""
    model = cfg_or_model
    if isinstance(cfg_or_model, ForecastConfig):
        if rng is None:
            raise ConfigError("forecast_forward", "building from a config requires a generator")
        model = ForecastModel(cfg_or_model, rng)
    return model.forward(series, train=train, rng=rng)
