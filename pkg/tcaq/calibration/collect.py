"""Calibration sets: sampler states and per-layer activations across timesteps.

A set is produced by running the DDIM sampler on a full-precision or a
quantized model with capture hooks on the requested layers. Each sample is
one (chain, timestep) pair holding the sampler state x_t and the raw input
of every hooked layer at that step.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from ..diffusion import CaptureHooks, NoiseSchedule, ToyUNet, initial_noise, sample_trajectory
from ..diffusion.sampler import NoisePredictor
from ..errors import TcaqError
from ..tensor import load_archive, save_archive

logger = logging.getLogger(__name__)

DEFAULT_CHAINS = 32
DEFAULT_STEPS = 20

FP_SOURCE = "fp"
_QUANT_TAG = re.compile(r"^q(\d+)$")


class CalibrationError(TcaqError):
    """Raised when a calibration set is incomplete or malformed."""
    pass


@dataclass(frozen=True)
class CalibrationSource:
    """Which model produced a set: the FP model, or the quantized model of a round."""
    round: Optional[int] = None

    @property
    def is_fp(self) -> bool:
        return self.round is None

    @property
    def tag(self) -> str:
        return FP_SOURCE if self.round is None else f"q{self.round}"

    @classmethod
    def from_tag(cls, tag: str) -> "CalibrationSource":
        if tag == FP_SOURCE:
            return cls()
        match = _QUANT_TAG.match(tag)
        if match is None:
            raise CalibrationError(f"Unknown calibration source tag '{tag}'")
        return cls(round=int(match.group(1)))


@dataclass
class CalibrationSample:
    """One chain at one timestep."""
    x_t: np.ndarray
    t: int
    chain_id: int
    captured: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class CalibrationSet:
    """
    Samples ordered by (chain_id, sampling order of t).

    ``timesteps`` lists the inference timesteps in sampling order
    (descending); ``layer_ids`` is the hooked layer set.
    """
    samples: list[CalibrationSample]
    source: CalibrationSource
    seed: int
    timesteps: list[int]
    layer_ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def chain_ids(self) -> list[int]:
        return sorted({s.chain_id for s in self.samples})

    def at(self, t: int) -> list[CalibrationSample]:
        """Samples at timestep ``t``, in chain order."""
        return sorted((s for s in self.samples if s.t == t), key=lambda s: s.chain_id)

    def x_t(self, t: int) -> np.ndarray:
        """Sampler states at ``t`` stacked over chains."""
        cell = self.at(t)
        if not cell:
            raise CalibrationError(f"No calibration samples at t={t}")
        return np.stack([s.x_t for s in cell])


def _collect(
    model: NoisePredictor,
    n_chains: int,
    inference_steps: int,
    seed: int,
    source: CalibrationSource,
    sched: Optional[NoiseSchedule],
    layers: Iterable[str],
) -> CalibrationSet:
    if n_chains < 1:
        raise CalibrationError(f"n_chains must be at least 1, got {n_chains}")
    sched = sched or NoiseSchedule.linear()
    layer_ids = tuple(layers)
    config = model.config

    chain_ids = list(range(n_chains))
    hooks = CaptureHooks(layer_ids, chain_ids)
    x_T = initial_noise(n_chains, config.image_size, seed, config.in_channels)
    _, states = sample_trajectory(model, x_T, sched, inference_steps, hooks=hooks if layer_ids else None)
    captured = hooks.grouped()

    samples = [
        CalibrationSample(x_t=x[chain].copy(), t=t, chain_id=chain, captured=captured.get((chain, t), {}))
        for chain in chain_ids
        for t, x in states
    ]
    cal = CalibrationSet(
        samples=samples,
        source=source,
        seed=seed,
        timesteps=[t for t, _ in states],
        layer_ids=layer_ids,
    )
    validate_coverage(cal)
    logger.info(
        "Sampled %s calibration set: %d chains x %d steps, %d hooked layers",
        source.tag, n_chains, inference_steps, len(layer_ids),
    )
    return cal


def _default_layers(model: ToyUNet) -> list[str]:
    return [spec.layer_id for spec in model.quantizable_layers()]


def sample_calibration_fp(
    model: ToyUNet,
    n_chains: int = DEFAULT_CHAINS,
    inference_steps: int = DEFAULT_STEPS,
    seed: int = 0,
    sched: Optional[NoiseSchedule] = None,
    layers: Optional[Sequence[str]] = None,
) -> CalibrationSet:
    """
    Build a calibration set from the full-precision sampler.

    Args:
        model: The FP model.
        n_chains: Number of sampler chains.
        inference_steps: DDIM steps per chain.
        seed: Seed for the chains' x_T.
        sched: Noise schedule; the default linear one when omitted.
        layers: Layer ids to hook; every quantizable layer when omitted,
            none for an empty sequence.

    Returns:
        n_chains x inference_steps samples tagged with the fp source.
    """
    layer_ids = _default_layers(model) if layers is None else layers
    return _collect(model, n_chains, inference_steps, seed, CalibrationSource(), sched, layer_ids)


def resample_calibration_quant(
    qmodel: NoisePredictor,
    n_chains: int = DEFAULT_CHAINS,
    inference_steps: int = DEFAULT_STEPS,
    seed: int = 0,
    round: int = 0,
    sched: Optional[NoiseSchedule] = None,
    layers: Optional[Sequence[str]] = None,
) -> CalibrationSet:
    """
    Build a calibration set by sampling the quantized model of ``round``.

    Hooks see the raw layer inputs of the quantized chain, so the captured
    activations reflect the drift of its trajectory.
    """
    if round < 0:
        raise CalibrationError(f"round must be non-negative, got {round}")
    fp_model = getattr(qmodel, "fp_model", qmodel)
    layer_ids = _default_layers(fp_model) if layers is None else layers
    return _collect(qmodel, n_chains, inference_steps, seed, CalibrationSource(round=round), sched, layer_ids)


def capture_layer_stats(cal: CalibrationSet, layer_id: str) -> dict[int, np.ndarray]:
    """
    Activations of ``layer_id`` grouped by timestep.

    Returns:
        t -> activations stacked over chains (chain order), keyed in sampling
        order of t.

    Raises:
        CalibrationError: If the layer was not hooked.
    """
    if layer_id not in cal.layer_ids:
        raise CalibrationError(f"Layer '{layer_id}' is not hooked in this set; hooked layers: {list(cal.layer_ids)}")
    groups: dict[int, list[np.ndarray]] = {t: [] for t in cal.timesteps}
    for sample in sorted(cal.samples, key=lambda s: s.chain_id):
        groups[sample.t].append(sample.captured[layer_id])
    return {t: np.stack(batch) for t, batch in groups.items() if batch}


def validate_coverage(cal: CalibrationSet, layer_ids: Optional[Iterable[str]] = None) -> None:
    """
    Check that every (layer, timestep) cell is non-empty.

    Raises:
        CalibrationError: Naming the first empty cell.
    """
    required = tuple(cal.layer_ids if layer_ids is None else layer_ids)
    present = {s.t for s in cal.samples}
    for t in cal.timesteps:
        if t not in present:
            raise CalibrationError(f"Calibration set has no samples at t={t}")
    for sample in cal.samples:
        for layer_id in required:
            if layer_id not in sample.captured:
                raise CalibrationError(
                    f"Empty calibration cell: layer '{layer_id}' at t={sample.t} (chain {sample.chain_id})"
                )


# =============================================================================
# Archive spill
# =============================================================================

def calibration_records(cal: CalibrationSet) -> dict[str, np.ndarray]:
    """Archive records ``cal/<source>/<chain>/<t>/<layer_id>`` plus ``.../x_t``."""
    prefix = f"cal/{cal.source.tag}"
    records = {
        f"{prefix}/seed": np.float32(cal.seed),
        f"{prefix}/timesteps": np.asarray(cal.timesteps, dtype=np.float32),
    }
    for sample in cal.samples:
        cell = f"{prefix}/{sample.chain_id}/{sample.t}"
        records[f"{cell}/x_t"] = sample.x_t
        for layer_id, value in sample.captured.items():
            records[f"{cell}/{layer_id}"] = value
    return records


def save_calibration(cal: CalibrationSet, path: Union[str, Path]) -> Path:
    """Spill a calibration set to a tensor archive."""
    return save_archive(path, calibration_records(cal))


def load_calibration(path: Union[str, Path], source: Optional[str] = None) -> CalibrationSet:
    """
    Read a calibration set back from an archive.

    Args:
        path: Archive path.
        source: Source tag to read ("fp", "q0", ...); required only when the
            archive holds more than one set.

    Raises:
        CalibrationError: If the archive holds no set, or several and no
            source is named.
    """
    records = load_archive(path)
    tags = sorted({name.split("/")[1] for name in records if name.startswith("cal/")})
    if source is None:
        if len(tags) != 1:
            raise CalibrationError(f"Archive {path} holds calibration sources {tags}; name one")
        source = tags[0]
    if source not in tags:
        raise CalibrationError(f"Archive {path} has no calibration source '{source}'")

    prefix = f"cal/{source}/"
    cells: dict[tuple[int, int], CalibrationSample] = {}
    layer_ids: set[str] = set()
    for name, value in records.items():
        if not name.startswith(prefix):
            continue
        parts = name[len(prefix):].split("/", 2)
        if len(parts) != 3:
            continue
        chain_id, t, leaf = int(parts[0]), int(parts[1]), parts[2]
        sample = cells.setdefault((chain_id, t), CalibrationSample(x_t=np.zeros(0), t=t, chain_id=chain_id))
        if leaf == "x_t":
            sample.x_t = value
        else:
            sample.captured[leaf] = value
            layer_ids.add(leaf)

    timesteps = [int(t) for t in records[f"{prefix}timesteps"].reshape(-1)]
    order = {t: i for i, t in enumerate(timesteps)}
    samples = sorted(cells.values(), key=lambda s: (s.chain_id, order.get(s.t, len(order))))
    cal = CalibrationSet(
        samples=samples,
        source=CalibrationSource.from_tag(source),
        seed=int(records[f"{prefix}seed"]),
        timesteps=timesteps,
        layer_ids=tuple(sorted(layer_ids)),
    )
    validate_coverage(cal)
    return cal
