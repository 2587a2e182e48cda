"""The quantized model: a frozen FP UNet driven through a quantization runtime.

The runtime rewrites each non-boundary layer on the fly:
- the input is divided by the layer's TCR scaling vector (when present),
  then fake-quantized with the parameters for the current timestep;
- the weight is replaced by its reparameterized, quantized version.

Weights are quantized per output channel. During AdaRound a layer carries
soft rounding variables and its weight is differentiable in them; once
finalized it holds integer codes.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .daq import DaqDecision, PostSoftmaxMode, decision_records, decisions_from_records
from .diffusion import LayerKind, ToyUNet
from .errors import TcaqError
from .quant import (
    Granularity,
    QuantizerKind,
    QuantParams,
    dequantize_uniform,
    fake_quant,
    search_params_minmax,
)
from .tcr import ReparamLayer, ScalingVector, TimestepQuantTable, apply_reparam
from .tensor import Tensor, load_archive, ops, save_archive

logger = logging.getLogger(__name__)

FP_BITS = 32
ZETA = 1.1
GAMMA = -0.1

_MODE_CODES = {PostSoftmaxMode.ADAPTIVE: 0.0, PostSoftmaxMode.UNIFORM: 1.0, PostSoftmaxMode.LOG2: 2.0}


class QuantModelError(TcaqError):
    """Raised when a quantized model is incomplete or inconsistent."""
    pass


@dataclass(frozen=True)
class QuantSettings:
    """Bit widths and method toggles of a quantized model."""
    weight_bits: int = 4
    act_bits: int = 8
    softmax_bits: int = 8
    tcr: bool = True
    softmax_mode: PostSoftmaxMode = PostSoftmaxMode.ADAPTIVE
    groups: int = 20
    clamp: Optional[float] = None
    par_rounds: int = 0

    @property
    def label(self) -> str:
        return f"W{self.weight_bits}A{self.act_bits}"

    def to_array(self) -> np.ndarray:
        return np.array(
            [
                self.weight_bits, self.act_bits, self.softmax_bits, float(self.tcr),
                _MODE_CODES[self.softmax_mode], self.groups, self.clamp or 0.0, self.par_rounds,
            ],
            dtype=np.float32,
        )

    @classmethod
    def from_array(cls, values: np.ndarray) -> "QuantSettings":
        w, a, s, tcr, mode, groups, clamp, rounds = (float(v) for v in np.asarray(values).reshape(-1))
        return cls(
            weight_bits=int(w),
            act_bits=int(a),
            softmax_bits=int(s),
            tcr=bool(tcr),
            softmax_mode=next(m for m, c in _MODE_CODES.items() if c == mode),
            groups=int(groups),
            clamp=clamp if clamp > 0 else None,
            par_rounds=int(rounds),
        )


def rectified_sigmoid(v: Tensor) -> Tensor:
    """h(v) = clip(sigmoid(v) * (zeta - gamma) + gamma, 0, 1)."""
    return ops.clamp(ops.affine(ops.sigmoid(v), ZETA - GAMMA, GAMMA), 0.0, 1.0)


def inverse_rectified_sigmoid(h: np.ndarray) -> np.ndarray:
    """v with h(v) = h for h strictly inside (0, 1)."""
    p = (np.asarray(h, dtype=np.float64) - GAMMA) / (ZETA - GAMMA)
    return np.log(p / (1.0 - p))


class WeightQuantizer:
    """
    Per-output-channel uniform quantizer for one layer weight.

    ``base`` is the (reparameterized) FP weight. Codes are round-to-nearest
    until ``finalize`` or ``set_codes`` fixes them. While soft rounding
    variables are attached, ``tensor()`` is differentiable in them.
    """

    def __init__(self, layer_id: str, base: np.ndarray, params: Optional[QuantParams]):
        self.layer_id = layer_id
        self.base = np.asarray(base, dtype=np.float32)
        self.params = params
        self.v: Optional[Tensor] = None
        self._codes: Optional[np.ndarray] = None
        self._cache: Optional[Tensor] = None

    @property
    def is_quantized(self) -> bool:
        return self.params is not None

    def _grid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s, z = self.params.broadcast(self.base.ndim)
        return np.floor(self.base / s), s, z

    def nearest_codes(self) -> np.ndarray:
        s, z = self.params.broadcast(self.base.ndim)
        return np.clip(np.rint(self.base / s) + z, 0, self.params.qmax).astype(np.int64)

    def learnable_mask(self) -> np.ndarray:
        """Elements whose floor and ceil codes are both on the grid."""
        floor, _, z = self._grid()
        return (floor + z >= 0) & (floor + z + 1 <= self.params.qmax)

    def fractional_part(self) -> np.ndarray:
        floor, s, _ = self._grid()
        return self.base / s - floor

    def codes(self) -> np.ndarray:
        if self.params is None:
            raise QuantModelError(f"{self.layer_id}: weight is not quantized")
        return self._codes if self._codes is not None else self.nearest_codes()

    def set_codes(self, codes: Optional[np.ndarray]) -> None:
        if codes is not None:
            codes = np.asarray(codes, dtype=np.int64)
            if codes.shape != self.base.shape:
                raise QuantModelError(f"{self.layer_id}: codes {codes.shape} vs weight {self.base.shape}")
            if np.any(codes < 0) or np.any(codes > self.params.qmax):
                raise QuantModelError(f"{self.layer_id}: codes outside [0, {self.params.qmax}]")
        self._codes = codes
        self._cache = None

    def dequantized(self) -> np.ndarray:
        if self.params is None:
            return self.base
        return dequantize_uniform(self.codes(), self.params)

    def attach_soft(self, v: Tensor) -> None:
        if v.shape != self.base.shape:
            raise QuantModelError(f"{self.layer_id}: rounding variables {v.shape} vs weight {self.base.shape}")
        self.v = v

    def soft_codes(self) -> np.ndarray:
        """Codes implied by the soft variables: round up where h(v) >= 0.5."""
        floor, _, z = self._grid()
        h = rectified_sigmoid(Tensor(self.v.data)).data
        up = np.where(self.learnable_mask(), h >= 0.5, self.nearest_codes() - floor - z)
        return np.clip(floor + up + z, 0, self.params.qmax).astype(np.int64)

    def finalize(self) -> np.ndarray:
        """Fix the codes implied by the soft variables and detach them."""
        codes = self.soft_codes()
        self.set_codes(codes)
        self.v = None
        return codes

    def detach_soft(self) -> None:
        self.v = None
        self._cache = None

    def tensor(self) -> Tensor:
        if self.params is None:
            if self._cache is None:
                self._cache = Tensor(self.base)
            return self._cache
        if self.v is None:
            if self._cache is None:
                self._cache = Tensor(self.dequantized())
            return self._cache

        floor, s, z = self._grid()
        learn = self.learnable_mask()
        offset = np.where(learn, 0.0, self.nearest_codes() - z - floor)
        scale = np.broadcast_to(s, self.base.shape).astype(np.float32)
        h = ops.mul(rectified_sigmoid(self.v), Tensor(learn.astype(np.float32)))
        return ops.mul(Tensor(scale), ops.add(Tensor(floor + offset), h))


class QuantizedModel:
    """
    A quantized view of a ToyUNet.

    Callable like the FP model: ``qmodel(x, t, hooks=None)``. Boundary layers
    and layers without an entry stay in full precision.
    """

    def __init__(self, fp_model: ToyUNet, settings: QuantSettings):
        self.fp_model = fp_model.clone()
        for p in self.fp_model.parameters():
            p.requires_grad = False
        self.config = self.fp_model.config
        self.settings = settings
        self.scaling: dict[str, ScalingVector] = {}
        self.reparam: dict[str, ReparamLayer] = {}
        self.weights: dict[str, WeightQuantizer] = {}
        self.act_tables: dict[str, TimestepQuantTable] = {}
        self.softmax_decisions: dict[tuple[str, int], DaqDecision] = {}
        self.quantize_activations = True

        for spec in self.fp_model.weight_layers():
            self.set_weight_params(spec.layer_id)

    # -------------------------------------------------------------------------
    # Plan
    # -------------------------------------------------------------------------

    def fp_weight(self, layer_id: str) -> np.ndarray:
        return self.fp_model.params[f"{layer_id}.weight"].data

    def set_scaling(self, sv: ScalingVector) -> None:
        """Reparameterize a layer; its weight quantizer is re-initialized."""
        spec = self.fp_model.layer(sv.layer_id)
        if spec.kind == LayerKind.POST_SOFTMAX or spec.is_boundary:
            raise QuantModelError(f"{sv.layer_id}: only non-boundary conv and linear layers take a scaling vector")
        self.scaling[sv.layer_id] = sv
        self.reparam[sv.layer_id] = apply_reparam(self.fp_weight(sv.layer_id), sv, axis=spec.channel_axis)
        self.set_weight_params(sv.layer_id)

    def set_weight_params(self, layer_id: str, params: Optional[QuantParams] = None) -> None:
        """Attach min-max per-channel parameters (or the given ones) to a layer weight."""
        base = self.reparam[layer_id].weight if layer_id in self.reparam else self.fp_weight(layer_id)
        bits = self.settings.weight_bits
        if params is None and bits < FP_BITS:
            params = search_params_minmax(base, bits, QuantizerKind.UNIFORM, Granularity.PER_CHANNEL, axis=0)
        self.weights[layer_id] = WeightQuantizer(layer_id, base, params)

    def set_act_table(self, table: TimestepQuantTable) -> None:
        self.act_tables[table.layer_id] = table

    def set_softmax_decisions(self, decisions: Mapping[tuple[str, int], DaqDecision]) -> None:
        self.softmax_decisions.update(decisions)

    def weight_quantizer(self, layer_id: str) -> WeightQuantizer:
        quantizer = self.weights.get(layer_id)
        if quantizer is None:
            raise QuantModelError(f"Layer '{layer_id}' has no weight quantizer")
        return quantizer

    def activation_params(self, layer_id: str, t: int) -> Optional[QuantParams]:
        """Activation QuantParams of a layer input at timestep ``t``, or None for FP."""
        spec = self.fp_model.layer(layer_id)
        if spec.is_boundary:
            return None
        if spec.kind == LayerKind.POST_SOFTMAX:
            if self.settings.softmax_bits >= FP_BITS:
                return None
            decision = self.softmax_decisions.get((layer_id, t))
            if decision is not None:
                return decision.params
        elif self.settings.act_bits >= FP_BITS:
            return None
        table = self.act_tables.get(layer_id)
        return table.params_for(t) if table is not None else None

    # -------------------------------------------------------------------------
    # Runtime
    # -------------------------------------------------------------------------

    def weight(self, layer_id: str, weight: Tensor) -> Tensor:
        quantizer = self.weights.get(layer_id)
        return weight if quantizer is None else quantizer.tensor()

    def transform_input(self, layer_id: str, x: Tensor, t: int) -> Tensor:
        reparam = self.reparam.get(layer_id)
        if reparam is not None:
            x = reparam.transform_input(x)
        if not self.quantize_activations:
            return x
        params = self.activation_params(layer_id, t)
        return x if params is None else fake_quant(x, params)

    def __call__(self, x: Tensor, t: Union[int, np.ndarray], hooks=None) -> Tensor:
        return self.fp_model(x, t, hooks=hooks, runtime=self)

    # -------------------------------------------------------------------------
    # Persistence
    # -------------------------------------------------------------------------

    def to_records(self) -> dict[str, np.ndarray]:
        records = self.fp_model.to_records()
        records["quant/settings"] = self.settings.to_array()
        for layer_id, quantizer in self.weights.items():
            if quantizer.is_quantized:
                records.update(quantizer.params.to_records(f"qp/{layer_id}"))
                records[f"qw/{layer_id}"] = quantizer.codes().astype(np.float32)
        for layer_id, sv in self.scaling.items():
            records.update(sv.to_records(f"tcr/{layer_id}"))
        for layer_id, table in self.act_tables.items():
            records.update(table.to_records(f"tcr/{layer_id}/table"))
        records.update(decision_records(self.softmax_decisions))
        return records

    def float64_records(self) -> list[str]:
        """Record names kept at float64 in a checkpoint."""
        return [
            f"tcr/{layer_id}/{field}"
            for layer_id in self.scaling
            for field in ScalingVector.FLOAT64_FIELDS
        ]

    @classmethod
    def from_records(cls, records: Mapping[str, np.ndarray]) -> "QuantizedModel":
        if "quant/settings" not in records:
            raise QuantModelError("Archive has no 'quant/settings' record; not a quantized model")
        qmodel = cls(ToyUNet.from_records(records), QuantSettings.from_array(records["quant/settings"]))

        for spec in qmodel.fp_model.quantizable_layers():
            layer_id = spec.layer_id
            if f"tcr/{layer_id}/r_s" in records:
                qmodel.set_scaling(ScalingVector.from_records(layer_id, f"tcr/{layer_id}", records))
            if f"tcr/{layer_id}/table/scale" in records:
                qmodel.set_act_table(TimestepQuantTable.from_records(layer_id, f"tcr/{layer_id}/table", records))
            if f"qw/{layer_id}" in records:
                params = QuantParams.from_records(f"qp/{layer_id}", records)
                qmodel.set_weight_params(layer_id, params)
                qmodel.weights[layer_id].set_codes(np.rint(records[f"qw/{layer_id}"]))
        qmodel.set_softmax_decisions(decisions_from_records(records))
        return qmodel


def save_quantized(qmodel: QuantizedModel, path: Union[str, Path]) -> Path:
    """Write a quantized checkpoint."""
    return save_archive(path, qmodel.to_records(), float64=qmodel.float64_records())


def load_quantized(path: Union[str, Path]) -> QuantizedModel:
    """Read a quantized checkpoint."""
    return QuantizedModel.from_records(load_archive(path))
