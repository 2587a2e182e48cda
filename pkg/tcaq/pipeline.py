"""Quantization pipeline: initialization, reconstruction, arms and evaluation.

Initialization builds the quantization plan on an FP-sampled calibration
set: per-channel weight parameters, TCR scaling vectors and timestep tables
for activations, DAQ decisions for post-Softmax inputs. Reconstruction then
refines the weight rounding (basic reconstruction plus PAR rounds).
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .audit import get_run_logger
from .calibration import CalibrationSet, sample_calibration_fp
from .config import FP_BITS, RunConfig
from .daq import PostSoftmaxMode, run_daq_offline
from .diffusion import CaptureHooks, NoiseSchedule, ToyUNet, generate_dataset, sample
from .metrics import ArmResult, fmd, layer_error, mean_sqnr
from .quantized import QuantizedModel, QuantSettings
from .recon import ReconConfig, ReconLog, SamplerSpec, par
from .tcr import (
    build_timestep_table,
    clamp_scaling,
    collect_channel_maxima,
    compute_scaling_vector,
    reparam_spread,
    rescale_stats,
)
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class InitStats:
    """What the initialization stage measured."""
    spread_before: dict[str, float] = field(default_factory=dict)
    spread_after: dict[str, float] = field(default_factory=dict)
    daq_seconds: float = 0.0
    calibration_seconds: Optional[float] = None

    @property
    def daq_overhead(self) -> Optional[float]:
        if not self.calibration_seconds:
            return None
        return self.daq_seconds / self.calibration_seconds


@dataclass
class Arm:
    """One quantization configuration of an ablation."""
    name: str
    settings: QuantSettings
    recon: ReconConfig

    @property
    def daq(self) -> bool:
        return self.settings.softmax_mode == PostSoftmaxMode.ADAPTIVE

    def result(self, fmd_value: float, sqnr: float, sample_count: int, seed: int,
               seconds: Optional[float] = None) -> ArmResult:
        s = self.settings
        return ArmResult(
            arm=self.name,
            bits_w=s.weight_bits,
            bits_a=s.act_bits,
            bits_s=s.softmax_bits,
            tcr=s.tcr,
            daq=self.daq,
            par_rounds=s.par_rounds,
            fmd=fmd_value,
            mean_sqnr_db=sqnr,
            sample_count=sample_count,
            seed=seed,
            seconds=seconds,
        )


# -----------------------------------------------------------------------------
# Initialization
# -----------------------------------------------------------------------------

def settings_from_config(config: RunConfig) -> QuantSettings:
    """The quantization settings the config's toggles describe."""
    return QuantSettings(
        weight_bits=config.quant.bits_w,
        act_bits=config.quant.bits_a,
        softmax_bits=config.quant.bits_s,
        tcr=config.tcr.enabled,
        softmax_mode=PostSoftmaxMode.ADAPTIVE if config.daq.enabled else PostSoftmaxMode.UNIFORM,
        groups=config.tcr.groups if config.tcr.enabled else 1,
        clamp=config.tcr.effective_clamp(config.quant.bits_w),
        par_rounds=config.recon.rounds,
    )


def initialize(
    fp_model: ToyUNet,
    cal: CalibrationSet,
    settings: QuantSettings,
    search_grid: int = 100,
    max_search_samples: Optional[int] = None,
    max_fit_samples: Optional[int] = 8192,
    min_tail: int = 50,
    calibration_seconds: Optional[float] = None,
) -> tuple[QuantizedModel, InitStats]:
    """
    Build the quantization plan of a model from FP calibration data.

    Steps, in order:
    1. min-max per-channel weight parameters for every non-boundary weight;
    2. with TCR, a (clamped) scaling vector per conv/linear layer, folded
       into its weight, whose parameters are re-initialized;
    3. uniform activation tables over ``settings.groups`` timestep groups
       for conv/linear inputs, searched on the reparameterized activations;
    4. post-Softmax inputs: in adaptive and log2 modes, a DAQ decision per
       (layer, timestep); in uniform mode, a grouped uniform table.

    Args:
        fp_model: The FP model.
        cal: FP-sampled calibration set hooking every quantizable layer.
        settings: Bit widths and toggles.
        search_grid: MSE search grid size.
        max_search_samples: Subsample cap for activation searches.
        max_fit_samples: Subsample cap for power-law fits.
        min_tail: Minimum power-law tail size.
        calibration_seconds: Wall-clock of the calibration pass, for the
            DAQ overhead ratio.

    Returns:
        The initialized quantized model and initialization statistics.
    """
    run_log = get_run_logger()
    qmodel = QuantizedModel(fp_model, settings)
    stats = InitStats(calibration_seconds=calibration_seconds)

    if settings.tcr:
        for spec in fp_model.weight_layers():
            channel_stats = collect_channel_maxima(cal, spec.layer_id, axis=spec.channel_axis)
            sv = clamp_scaling(compute_scaling_vector(channel_stats), settings.clamp)
            qmodel.set_scaling(sv)
            before = reparam_spread(channel_stats)
            after = reparam_spread(rescale_stats(channel_stats, sv))
            stats.spread_before[spec.layer_id] = before
            stats.spread_after[spec.layer_id] = after
            run_log.log_tcr_applied(spec.layer_id, before, after, settings.clamp)
        logger.info("TCR: reparameterized %d layers", len(stats.spread_after))

    if settings.act_bits < FP_BITS:
        for spec in fp_model.weight_layers():
            qmodel.set_act_table(build_timestep_table(
                cal, spec.layer_id, settings.act_bits, settings.groups,
                reparam=qmodel.reparam.get(spec.layer_id), grid=search_grid, max_samples=max_search_samples,
            ))

    if settings.softmax_bits < FP_BITS:
        softmax_ids = [spec.layer_id for spec in fp_model.post_softmax_layers()]
        if settings.softmax_mode == PostSoftmaxMode.UNIFORM:
            for layer_id in softmax_ids:
                qmodel.set_act_table(build_timestep_table(
                    cal, layer_id, settings.softmax_bits, settings.groups,
                    grid=search_grid, max_samples=max_search_samples,
                ))
        else:
            started = time.perf_counter()
            decisions = run_daq_offline(
                cal, softmax_ids, settings.softmax_bits, mode=settings.softmax_mode,
                grid=search_grid, max_fit_samples=max_fit_samples, min_tail=min_tail,
            )
            stats.daq_seconds = time.perf_counter() - started
            qmodel.set_softmax_decisions(decisions)
            for (layer_id, t), decision in decisions.items():
                run_log.log_daq_decided(layer_id, t, decision.chosen.value, decision.r_g, decision.note)
            if stats.daq_overhead is not None:
                logger.info(
                    "DAQ took %.2fs, %.1f%% of calibration sampling", stats.daq_seconds, 100 * stats.daq_overhead
                )

    return qmodel, stats


def quantize_model(
    fp_model: ToyUNet,
    cal: CalibrationSet,
    settings: QuantSettings,
    recon: ReconConfig,
    sampler: SamplerSpec,
    config: Optional[RunConfig] = None,
    calibration_seconds: Optional[float] = None,
) -> tuple[QuantizedModel, ReconLog, InitStats]:
    """Initialization followed by reconstruction with ``settings.par_rounds`` PAR rounds."""
    config = config or RunConfig()
    qmodel, stats = initialize(
        fp_model, cal, settings,
        search_grid=config.quant.search_grid,
        max_search_samples=config.quant.max_search_samples,
        max_fit_samples=config.daq.max_fit_samples,
        min_tail=config.daq.min_tail,
        calibration_seconds=calibration_seconds,
    )
    recon = replace(recon, rounds=settings.par_rounds)
    qmodel, log = par(fp_model, qmodel, cal, sampler, recon, record_timings=config.report.record_timings)
    return qmodel, log, stats


# -----------------------------------------------------------------------------
# Arms
# -----------------------------------------------------------------------------

TOGGLE_ORDER = [
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
]


def arm_name(tcr: bool, daq: bool, par_on: bool) -> str:
    parts = [name for name, on in (("TCR", tcr), ("DAQ", daq), ("PAR", par_on)) if on]
    return "+" + "+".join(parts) if parts else "baseline"


def toggle_arms(config: RunConfig, bits: Sequence[int]) -> list[Arm]:
    """
    The 2^3 grid of TCR / DAQ / PAR toggles at one [W, A, S] setting.

    Off means: one shared activation quantizer (G = 1) and no scaling
    vector; uniform post-Softmax quantization; no PAR rounds.
    """
    w, a, s = (int(b) for b in bits)
    recon = config.recon_config()
    if config.recon.rounds == 0:
        logger.warning("recon.rounds is 0; the PAR arms repeat their non-PAR counterparts")
    arms = []
    for tcr, daq, par_on in TOGGLE_ORDER:
        settings = QuantSettings(
            weight_bits=w,
            act_bits=a,
            softmax_bits=s,
            tcr=tcr,
            softmax_mode=PostSoftmaxMode.ADAPTIVE if daq else PostSoftmaxMode.UNIFORM,
            groups=config.tcr.groups if tcr else 1,
            clamp=config.tcr.effective_clamp(w),
            par_rounds=config.recon.rounds if par_on else 0,
        )
        arms.append(Arm(f"W{w}A{a}S{s} {arm_name(tcr, daq, par_on)}", settings, recon))
    return arms


def clamp_sweep_arms(config: RunConfig, clamps: Iterable[float]) -> list[Arm]:
    """+TCR+DAQ at W4A8 with each clamp range R."""
    base = replace(settings_from_config(config), weight_bits=4, act_bits=8, tcr=True,
                   softmax_mode=PostSoftmaxMode.ADAPTIVE, groups=config.tcr.groups, par_rounds=0)
    return [Arm(f"clamp={c:g}", replace(base, clamp=float(c)), config.recon_config()) for c in clamps]


def softmax_sweep_arms(config: RunConfig, bit_widths: Iterable[int]) -> list[Arm]:
    """Uniform, log2 and adaptive post-Softmax quantizers at each bit width."""
    base = replace(settings_from_config(config), tcr=True, groups=config.tcr.groups, par_rounds=0)
    arms = []
    for bits in bit_widths:
        for mode in (PostSoftmaxMode.UNIFORM, PostSoftmaxMode.LOG2, PostSoftmaxMode.ADAPTIVE):
            settings = replace(base, softmax_bits=int(bits), softmax_mode=mode)
            arms.append(Arm(f"S{bits} {mode.value}", settings, config.recon_config()))
    return arms


def par_sweep_arms(config: RunConfig, pairs: Iterable[Sequence[int]]) -> list[Arm]:
    """The full method with each (par_iters, rounds) pair."""
    base = replace(settings_from_config(config), tcr=True, groups=config.tcr.groups,
                   softmax_mode=PostSoftmaxMode.ADAPTIVE)
    arms = []
    for par_iters, rounds in pairs:
        recon = replace(config.recon_config(), par_iters=int(par_iters), rounds=int(rounds))
        arms.append(Arm(f"par={par_iters}x{rounds}", replace(base, par_rounds=int(rounds)), recon))
    return arms


# -----------------------------------------------------------------------------
# Evaluation
# -----------------------------------------------------------------------------

@dataclass
class EvalContext:
    """Shared inputs of every arm evaluated in one run."""
    config: RunConfig
    fp_model: ToyUNet
    cal: CalibrationSet
    reference: np.ndarray
    sched: NoiseSchedule
    calibration_seconds: float

    @property
    def sampler(self) -> SamplerSpec:
        return SamplerSpec(
            n_chains=self.config.calibration.n_chains,
            inference_steps=self.config.sampling.inference_steps,
            seed=self.config.run.seed,
            sched=self.sched,
        )


def build_context(config: RunConfig, fp_model: ToyUNet, sched: Optional[NoiseSchedule] = None) -> EvalContext:
    """Sample the FP calibration set and the fmd reference batch."""
    sched = sched or NoiseSchedule.linear()
    started = time.perf_counter()
    cal = sample_calibration_fp(
        fp_model,
        n_chains=config.calibration.n_chains,
        inference_steps=config.sampling.inference_steps,
        seed=config.run.seed,
        sched=sched,
    )
    seconds = time.perf_counter() - started
    get_run_logger().log_calibration_sampled(
        cal.source.tag, config.calibration.n_chains, config.sampling.inference_steps, len(cal.layer_ids), seconds
    )

    ev = config.evaluate
    if ev.reference == "dataset":
        reference = generate_dataset(seed=ev.seed, n=ev.n_samples, contrast=config.dataset.contrast).images
    else:
        reference = sample(fp_model, ev.n_samples, config.sampling.inference_steps, seed=ev.seed + 1, sched=sched).data
    return EvalContext(config, fp_model, cal, reference, sched, seconds)


def layer_errors(
    fp_model: ToyUNet,
    qmodel: QuantizedModel,
    cal: CalibrationSet,
    layer_ids: Optional[Sequence[str]] = None,
) -> dict[str, dict[str, float]]:
    """
    Error of every quantizable layer's input, quantized vs FP model.

    Both models see the same calibration x_t at each timestep; the inputs
    are compared before the quantized model transforms them.
    """
    layer_ids = list(layer_ids) if layer_ids is not None else [s.layer_id for s in fp_model.quantizable_layers()]
    fp_acts: dict[str, list[np.ndarray]] = {lid: [] for lid in layer_ids}
    q_acts: dict[str, list[np.ndarray]] = {lid: [] for lid in layer_ids}
    with no_grad():
        for t in cal.timesteps:
            x = cal.x_t(t)
            chains = list(range(x.shape[0]))
            fp_hooks, q_hooks = CaptureHooks(layer_ids, chains), CaptureHooks(layer_ids, chains)
            fp_model(Tensor(x), t, hooks=fp_hooks)
            qmodel(Tensor(x), t, hooks=q_hooks)
            for (_, _, lid), arr in fp_hooks.records():
                fp_acts[lid].append(arr)
            for (_, _, lid), arr in q_hooks.records():
                q_acts[lid].append(arr)
    return {
        lid: layer_error(np.stack(fp_acts[lid]), np.stack(q_acts[lid])).to_dict()
        for lid in layer_ids
        if fp_acts[lid]
    }


def sample_fmd(ctx: EvalContext, model) -> tuple[float, np.ndarray]:
    """fmd of ``model`` samples against the context reference."""
    ev = ctx.config.evaluate
    samples = sample(model, ev.n_samples, ctx.config.sampling.inference_steps, seed=ev.seed, sched=ctx.sched).data
    return fmd(samples, ctx.reference), samples


def evaluate_arm(ctx: EvalContext, arm: Arm) -> tuple[ArmResult, QuantizedModel, dict[str, dict[str, float]], InitStats]:
    """Quantize, reconstruct and score one arm."""
    started = time.perf_counter()
    logger.info("Evaluating arm %s", arm.name)
    qmodel, _, stats = quantize_model(
        ctx.fp_model, ctx.cal, arm.settings, arm.recon, ctx.sampler, ctx.config, ctx.calibration_seconds
    )
    value, _ = sample_fmd(ctx, qmodel)
    errors = layer_errors(ctx.fp_model, qmodel, ctx.cal)
    seconds = time.perf_counter() - started if ctx.config.report.record_timings else None
    result = arm.result(value, mean_sqnr(errors), ctx.config.evaluate.n_samples, ctx.config.evaluate.seed, seconds)
    logger.info("Arm %s: fmd %.4f, mean SQNR %.2f dB", arm.name, result.fmd, result.mean_sqnr_db)
    return result, qmodel, errors, stats


def ablation_arms(config: RunConfig) -> list[Arm]:
    """Toggle grids for every bit setting, then the configured sweeps."""
    arms = []
    for bits in config.ablation.bit_settings:
        arms.extend(toggle_arms(config, bits))
    arms.extend(clamp_sweep_arms(config, config.ablation.clamp_sweep))
    arms.extend(softmax_sweep_arms(config, config.ablation.softmax_sweep))
    arms.extend(par_sweep_arms(config, config.ablation.par_sweep))
    return arms
