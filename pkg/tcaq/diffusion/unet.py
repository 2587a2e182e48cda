"""Tiny UNet noise predictor with a per-layer registry.

Two resolutions (8x8 with 16 channels, 4x4 with 32), a residual conv block
and one single-head self-attention per block, and concatenated skips on the
way up. Every conv, linear and post-Softmax site has a unique layer id; the
registry tells the quantization pipeline what each site is.

Layer inputs pass through two optional observers:
- capture hooks, which see the raw input;
- a runtime, which may transform the input (reparameterization, activation
  fake quantization) and substitute the weight.
The full-precision model uses neither.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Union

import numpy as np

from ..tensor import Tensor, ops
from .schedule import DiffusionError

logger = logging.getLogger(__name__)

BLOCK_ORDER = ("down.0", "down.1", "mid", "up.0", "up.1")
STEM = "stem"
HEAD = "head"

Timesteps = Union[int, np.ndarray]


class LayerKind(Enum):
    """What a registered site computes."""
    CONV = "conv"
    LINEAR = "linear"
    POST_SOFTMAX = "post_softmax"


@dataclass(frozen=True)
class LayerSpec:
    """Registry entry for one quantizable site."""
    layer_id: str
    kind: LayerKind
    block: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 1
    is_boundary: bool = False

    @property
    def has_weight(self) -> bool:
        return self.kind != LayerKind.POST_SOFTMAX

    @property
    def channel_axis(self) -> int:
        """Axis of the input activation that indexes input channels."""
        return 1 if self.kind == LayerKind.CONV else -1

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == LayerKind.CONV:
            return (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
        if self.kind == LayerKind.LINEAR:
            return (self.out_channels, self.in_channels)
        return ()


@dataclass(frozen=True)
class UNetConfig:
    """Architecture hyper-parameters."""
    base_channels: int = 16
    mid_channels: int = 32
    temb_dim: int = 32
    groups: int = 4
    image_size: int = 8
    in_channels: int = 1

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.base_channels, self.mid_channels, self.temb_dim, self.groups, self.image_size, self.in_channels],
            dtype=np.float32,
        )

    @classmethod
    def from_array(cls, values: np.ndarray) -> "UNetConfig":
        return cls(*(int(v) for v in np.asarray(values).reshape(-1)))


class LayerRuntime(Protocol):
    """Substitutes weights and transforms inputs of registered layers."""

    def weight(self, layer_id: str, weight: Tensor) -> Tensor:
        ...

    def transform_input(self, layer_id: str, x: Tensor, t: int) -> Tensor:
        ...


class ActivationHooks(Protocol):
    """Observes raw layer inputs."""

    def capture(self, layer_id: str, t: int, x: np.ndarray) -> None:
        ...


@dataclass
class UNetState:
    """Activations flowing between blocks."""
    h: Tensor
    emb: Tensor
    skips: list[Tensor] = field(default_factory=list)
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


@dataclass
class _Context:
    t: np.ndarray
    timestep: Optional[int]
    runtime: Optional[LayerRuntime]
    hooks: Optional[ActivationHooks]


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Standard transformer-style timestep embedding, (N, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(np.float32)


def _res_specs(prefix: str, cin: int, cout: int, temb: int) -> list[LayerSpec]:
    specs = [
        LayerSpec(f"{prefix}.conv1", LayerKind.CONV, prefix, cin, cout, 3),
        LayerSpec(f"{prefix}.temb_proj", LayerKind.LINEAR, prefix, temb, cout),
        LayerSpec(f"{prefix}.conv2", LayerKind.CONV, prefix, cout, cout, 3),
    ]
    if cin != cout:
        specs.append(LayerSpec(f"{prefix}.skip", LayerKind.CONV, prefix, cin, cout, 1))
    return specs


def _attn_specs(attn_id: str, block: str, channels: int) -> list[LayerSpec]:
    return [
        LayerSpec(f"{attn_id}.q", LayerKind.LINEAR, block, channels, channels),
        LayerSpec(f"{attn_id}.k", LayerKind.LINEAR, block, channels, channels),
        LayerSpec(f"{attn_id}.v", LayerKind.LINEAR, block, channels, channels),
        LayerSpec(attn_id, LayerKind.POST_SOFTMAX, block),
        LayerSpec(f"{attn_id}.proj", LayerKind.LINEAR, block, channels, channels),
    ]


# Attention site per block.
ATTENTION_IDS = {
    "down.0": "down.0.attn.0",
    "down.1": "down.1.attn.0",
    "mid": "mid.attn",
    "up.0": "up.0.attn.0",
    "up.1": "up.1.attn.0",
}


class ToyUNet:
    """
    Noise predictor eps(x_t, t) for 8x8 single-channel images.

    Parameters live in ``params`` (name -> tracked Tensor); layer weights are
    ``<layer_id>.weight`` / ``<layer_id>.bias``.
    """

    def __init__(self, config: Optional[UNetConfig] = None, seed: int = 0):
        self.config = config or UNetConfig()
        self._specs = self._build_specs(self.config)
        self._index = {spec.layer_id: spec for spec in self._specs}
        if len(self._index) != len(self._specs):
            raise DiffusionError("Duplicate layer ids in UNet registry")
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    # -------------------------------------------------------------------------
    # Registry
    # -------------------------------------------------------------------------

    @staticmethod
    def _build_specs(cfg: UNetConfig) -> list[LayerSpec]:
        c0, c1, te = cfg.base_channels, cfg.mid_channels, cfg.temb_dim
        specs = [
            LayerSpec("temb.dense0", LayerKind.LINEAR, STEM, te, te, is_boundary=True),
            LayerSpec("temb.dense1", LayerKind.LINEAR, STEM, te, te, is_boundary=True),
            LayerSpec("conv_in", LayerKind.CONV, STEM, cfg.in_channels, c0, 3, is_boundary=True),
        ]
        specs += _res_specs("down.0", c0, c0, te) + _attn_specs(ATTENTION_IDS["down.0"], "down.0", c0)
        specs += _res_specs("down.1", c0, c1, te) + _attn_specs(ATTENTION_IDS["down.1"], "down.1", c1)
        specs += _res_specs("mid", c1, c1, te) + _attn_specs(ATTENTION_IDS["mid"], "mid", c1)
        specs += _res_specs("up.0", 2 * c1, c1, te) + _attn_specs(ATTENTION_IDS["up.0"], "up.0", c1)
        specs += _res_specs("up.1", c1 + c0, c0, te) + _attn_specs(ATTENTION_IDS["up.1"], "up.1", c0)
        specs.append(LayerSpec("conv_out", LayerKind.CONV, HEAD, c0, cfg.in_channels, 3, is_boundary=True))
        return specs

    def _norm_names(self) -> list[tuple[str, int]]:
        c0, c1 = self.config.base_channels, self.config.mid_channels
        widths = {"down.0": (c0, c0), "down.1": (c0, c1), "mid": (c1, c1), "up.0": (2 * c1, c1), "up.1": (c1 + c0, c0)}
        norms = []
        for block in BLOCK_ORDER:
            cin, cout = widths[block]
            norms += [(f"{block}.norm1", cin), (f"{block}.norm2", cout), (f"{ATTENTION_IDS[block]}.norm", cout)]
        norms.append(("head.norm", c0))
        return norms

    def _init_params(self, rng: np.random.Generator) -> None:
        for spec in self._specs:
            if not spec.has_weight:
                continue
            fan_in = int(np.prod(spec.weight_shape[1:]))
            std = math.sqrt(1.0 / fan_in)
            self.params[f"{spec.layer_id}.weight"] = Tensor(
                rng.normal(0.0, std, size=spec.weight_shape), requires_grad=True
            )
            self.params[f"{spec.layer_id}.bias"] = Tensor(np.zeros(spec.out_channels), requires_grad=True)
        for name, channels in self._norm_names():
            self.params[f"{name}.gamma"] = Tensor(np.ones(channels), requires_grad=True)
            self.params[f"{name}.beta"] = Tensor(np.zeros(channels), requires_grad=True)

    @property
    def layers(self) -> list[LayerSpec]:
        return list(self._specs)

    def layer(self, layer_id: str) -> LayerSpec:
        spec = self._index.get(layer_id)
        if spec is None:
            raise DiffusionError(f"Unknown layer id '{layer_id}'; known ids: {sorted(self._index)}")
        return spec

    def quantizable_layers(self) -> list[LayerSpec]:
        return [spec for spec in self._specs if not spec.is_boundary]

    def weight_layers(self) -> list[LayerSpec]:
        return [spec for spec in self.quantizable_layers() if spec.has_weight]

    def post_softmax_layers(self) -> list[LayerSpec]:
        return [spec for spec in self._specs if spec.kind == LayerKind.POST_SOFTMAX]

    def boundary_layers(self) -> list[LayerSpec]:
        return [spec for spec in self._specs if spec.is_boundary]

    def block_layers(self, block: str) -> list[LayerSpec]:
        return [spec for spec in self.quantizable_layers() if spec.block == block]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def clone(self) -> "ToyUNet":
        """Deep copy with independent parameter buffers."""
        twin = ToyUNet.__new__(ToyUNet)
        twin.config = self.config
        twin._specs = list(self._specs)
        twin._index = dict(self._index)
        twin.params = {name: Tensor(p.data.copy(), requires_grad=p.requires_grad) for name, p in self.params.items()}
        return twin

    # -------------------------------------------------------------------------
    # Persistence
    # -------------------------------------------------------------------------

    def to_records(self) -> dict[str, np.ndarray]:
        records = {"meta/unet": self.config.to_array()}
        records.update({f"param/{name}": p.data for name, p in self.params.items()})
        return records

    @classmethod
    def from_records(cls, records: dict[str, np.ndarray]) -> "ToyUNet":
        if "meta/unet" not in records:
            raise DiffusionError("Checkpoint has no 'meta/unet' record")
        model = cls(UNetConfig.from_array(records["meta/unet"]))
        for name in model.params:
            key = f"param/{name}"
            if key not in records:
                raise DiffusionError(f"Checkpoint is missing parameter '{name}'")
            if records[key].shape != model.params[name].shape:
                raise DiffusionError(
                    f"Parameter '{name}' has shape {records[key].shape}, expected {model.params[name].shape}"
                )
            model.params[name] = Tensor(records[key].copy(), requires_grad=True)
        return model

    # -------------------------------------------------------------------------
    # Forward
    # -------------------------------------------------------------------------

    def __call__(
        self,
        x: Tensor,
        t: Timesteps,
        hooks: Optional[ActivationHooks] = None,
        runtime: Optional[LayerRuntime] = None,
    ) -> Tensor:
        """Predict the noise in ``x`` at timestep(s) ``t``."""
        state = self.run_stem(x, t, runtime=runtime, hooks=hooks)
        for block in BLOCK_ORDER:
            state = self.run_block(block, state, runtime=runtime, hooks=hooks)
        return self.run_head(state, runtime=runtime, hooks=hooks)

    def _context(
        self,
        n: int,
        t: Timesteps,
        runtime: Optional[LayerRuntime],
        hooks: Optional[ActivationHooks],
    ) -> _Context:
        t_vec = np.asarray(t, dtype=np.int64)
        if t_vec.ndim == 0:
            t_vec = np.full(n, int(t_vec), dtype=np.int64)
        if t_vec.shape != (n,):
            raise DiffusionError(f"Got {t_vec.shape[0]} timesteps for a batch of {n}")
        shared = n > 0 and bool(np.all(t_vec == t_vec[0]))
        timestep = int(t_vec[0]) if shared else None
        if timestep is None and n > 0 and (runtime is not None or hooks is not None):
            raise DiffusionError("Capture hooks and quantized runtimes need one shared timestep per batch")
        return _Context(t=t_vec, timestep=timestep, runtime=runtime, hooks=hooks)

    def _layer_input(self, layer_id: str, x: Tensor, ctx: _Context) -> Tensor:
        if ctx.hooks is not None:
            ctx.hooks.capture(layer_id, ctx.timestep, x.data)
        if ctx.runtime is not None:
            x = ctx.runtime.transform_input(layer_id, x, ctx.timestep)
        return x

    def _weights(self, layer_id: str, ctx: _Context) -> tuple[Tensor, Tensor]:
        weight = self.params[f"{layer_id}.weight"]
        if ctx.runtime is not None:
            weight = ctx.runtime.weight(layer_id, weight)
        return weight, self.params[f"{layer_id}.bias"]

    def _conv(self, layer_id: str, x: Tensor, ctx: _Context) -> Tensor:
        x = self._layer_input(layer_id, x, ctx)
        weight, bias = self._weights(layer_id, ctx)
        return ops.conv2d(x, weight, bias)

    def _linear(self, layer_id: str, x: Tensor, ctx: _Context) -> Tensor:
        x = self._layer_input(layer_id, x, ctx)
        weight, bias = self._weights(layer_id, ctx)
        return ops.linear(x, weight, bias)

    def _norm(self, name: str, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.config.groups, self.params[f"{name}.gamma"], self.params[f"{name}.beta"])

    def _resblock(self, prefix: str, x: Tensor, emb: Tensor, ctx: _Context) -> Tensor:
        h = ops.silu(self._norm(f"{prefix}.norm1", x))
        h = self._conv(f"{prefix}.conv1", h, ctx)
        h = ops.scale_embed_add(h, self._linear(f"{prefix}.temb_proj", emb, ctx))
        h = ops.silu(self._norm(f"{prefix}.norm2", h))
        h = self._conv(f"{prefix}.conv2", h, ctx)
        skip = self._conv(f"{prefix}.skip", x, ctx) if f"{prefix}.skip" in self._index else x
        return ops.add(skip, h)

    def _attention(self, attn_id: str, x: Tensor, ctx: _Context) -> Tensor:
        n, c, height, width = x.shape
        tokens = ops.reshape(self._norm(f"{attn_id}.norm", x), (n, c, height * width))
        tokens = ops.transpose(tokens, (0, 2, 1))
        q = self._linear(f"{attn_id}.q", tokens, ctx)
        k = self._linear(f"{attn_id}.k", tokens, ctx)
        v = self._linear(f"{attn_id}.v", tokens, ctx)
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(c))
        probs = self._layer_input(attn_id, ops.softmax(scores), ctx)
        out = self._linear(f"{attn_id}.proj", ops.matmul(probs, v), ctx)
        out = ops.reshape(ops.transpose(out, (0, 2, 1)), (n, c, height, width))
        return ops.add(x, out)

    def run_stem(
        self,
        x: Tensor,
        t: Timesteps,
        runtime: Optional[LayerRuntime] = None,
        hooks: Optional[ActivationHooks] = None,
    ) -> UNetState:
        """Time embedding and input conv."""
        ctx = self._context(x.shape[0], t, runtime, hooks)
        emb = Tensor(sinusoidal_embedding(ctx.t, self.config.temb_dim))
        emb = ops.silu(self._linear("temb.dense0", emb, ctx))
        emb = ops.silu(self._linear("temb.dense1", emb, ctx))
        h = self._conv("conv_in", x, ctx)
        return UNetState(h=h, emb=emb, skips=[], t=ctx.t)

    def run_block(
        self,
        block: str,
        state: UNetState,
        runtime: Optional[LayerRuntime] = None,
        hooks: Optional[ActivationHooks] = None,
    ) -> UNetState:
        """
        Run one down/mid/up block.

        Args:
            block: One of BLOCK_ORDER.
            state: State produced by the stem or the previous block.
            runtime: Optional quantization runtime.
            hooks: Optional capture hooks.

        Returns:
            A new state; the input state is not modified.
        """
        ctx = self._context(state.h.shape[0], state.t, runtime, hooks)
        h, skips = state.h, list(state.skips)
        attn_id = ATTENTION_IDS.get(block)
        if attn_id is None:
            raise DiffusionError(f"Unknown block '{block}'; blocks are {BLOCK_ORDER}")

        if block == "down.1":
            h = ops.avg_pool2(h)
        elif block == "up.0":
            h = ops.concat([h, skips.pop()], axis=1)
        elif block == "up.1":
            h = ops.concat([ops.upsample2(h), skips.pop()], axis=1)

        h = self._resblock(block, h, state.emb, ctx)
        h = self._attention(attn_id, h, ctx)
        if block.startswith("down."):
            skips.append(h)
        return UNetState(h=h, emb=state.emb, skips=skips, t=state.t)

    def run_head(
        self,
        state: UNetState,
        runtime: Optional[LayerRuntime] = None,
        hooks: Optional[ActivationHooks] = None,
    ) -> Tensor:
        """Output normalization and conv."""
        ctx = self._context(state.h.shape[0], state.t, runtime, hooks)
        h = ops.silu(self._norm("head.norm", state.h))
        return self._conv("conv_out", h, ctx)

    def run_until(
        self,
        block: str,
        x: Tensor,
        t: Timesteps,
        runtime: Optional[LayerRuntime] = None,
    ) -> UNetState:
        """State entering ``block`` (stem plus every earlier block)."""
        if block not in BLOCK_ORDER:
            raise DiffusionError(f"Unknown block '{block}'; blocks are {BLOCK_ORDER}")
        state = self.run_stem(x, t, runtime=runtime)
        for name in BLOCK_ORDER[:BLOCK_ORDER.index(block)]:
            state = self.run_block(name, state, runtime=runtime)
        return state
