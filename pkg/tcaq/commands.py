"""Command execution for the tcaq CLI.

Each command reads its inputs from the run directory, writes its outputs
there, and echoes the effective configuration next to them. Commands later
in the chain (quantize, sample, evaluate, ablate) fail with a
MissingArtifactError naming the command that produces what they need.
"""

import logging
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .audit import configure_run_logger, get_run_logger
from .calibration import save_calibration
from .config import RunConfig, dump_config
from .daq import write_decision_csv
from .diffusion import (
    NoiseSchedule,
    ToyUNet,
    generate_dataset,
    load_model,
    loss_ratio,
    sample,
    save_model,
    train_toy,
)
from .errors import MissingArtifactError, TcaqError
from .metrics import MetricReport, emit_report, mean_sqnr, write_png_grid
from .pipeline import (
    Arm,
    ablation_arms,
    build_context,
    evaluate_arm,
    layer_errors,
    quantize_model,
    sample_fmd,
    settings_from_config,
)
from .quantized import QuantizedModel, load_quantized, save_quantized
from .tensor import save_archive

logger = logging.getLogger(__name__)

QUANTIZED_FILE = "quantized.tcaq"
CALIBRATION_FILE = "calibration.tcaq"
DECISIONS_FILE = "daq_decisions.csv"
RECON_LOG_FILE = "recon_log.json"
SAMPLES_FILE = "samples.tcaq"
ABLATION_FILE = "ablation.json"
RUN_LOG_FILE = "run.jsonl"


class CommandType(Enum):
    """Commands the CLI can execute."""
    TRAIN = "train"
    QUANTIZE = "quantize"
    SAMPLE = "sample"
    EVALUATE = "evaluate"
    ABLATE = "ablate"


@dataclass
class CommandResult:
    """Result of a command execution."""
    success: bool
    data: Optional[dict[str, Any]] = None
    error: Optional[str] = None
    exit_code: int = 0
    executed_at: Optional[float] = None


class CommandExecutor:
    """Runs commands against one effective configuration."""

    def __init__(self, config: RunConfig, sched: Optional[NoiseSchedule] = None):
        self.config = config
        self.sched = sched or NoiseSchedule.linear()
        self._outputs: dict[str, str] = {}

    @property
    def out_dir(self) -> Path:
        return self.config.out_dir

    def execute(self, cmd_type: CommandType) -> CommandResult:
        """
        Execute a command and report its outcome.

        Pipeline errors become a failed result carrying their exit code;
        anything else is logged with its traceback and exits with 1.
        """
        run_log = get_run_logger()
        if self.config.logging.run_log:
            run_log = configure_run_logger(self.out_dir, log_file=RUN_LOG_FILE)
        started = time.perf_counter()
        self._outputs = {}

        try:
            self.config.validate()
            run_log.log_run_start(cmd_type.value, self.config.to_dict())
            handler = self._get_handler(cmd_type)
            self._write("config", dump_config, self.config, self.out_dir / "config.yaml")
            data = handler()
            run_log.log_run_end(cmd_type.value, time.perf_counter() - started, self._outputs)
            return CommandResult(success=True, data=data, executed_at=time.time())
        except TcaqError as e:
            logger.error(f"{cmd_type.value} failed: {e}")
            run_log.log_command_failed(cmd_type.value, str(e), e.exit_code)
            return CommandResult(success=False, error=str(e), exit_code=e.exit_code, executed_at=time.time())
        except Exception as e:
            logger.error(f"{cmd_type.value} failed unexpectedly: {e}", exc_info=True)
            run_log.log_command_failed(cmd_type.value, str(e), 1)
            return CommandResult(success=False, error=str(e), exit_code=1, executed_at=time.time())
        finally:
            run_log.close()

    def _get_handler(self, cmd_type: CommandType):
        """Get the handler function for a command type."""
        handlers = {
            CommandType.TRAIN: self._handle_train,
            CommandType.QUANTIZE: self._handle_quantize,
            CommandType.SAMPLE: self._handle_sample,
            CommandType.EVALUATE: self._handle_evaluate,
            CommandType.ABLATE: self._handle_ablate,
        }
        return handlers[cmd_type]

    # -------------------------------------------------------------------------
    # Artifacts
    # -------------------------------------------------------------------------

    def _write(self, kind: str, writer, obj, path: Path) -> Path:
        writer(obj, path)
        self._outputs[kind] = str(path)
        get_run_logger().log_artifact_written(kind, path)
        logger.info(f"Wrote {kind}: {path}")
        return path

    def _require(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(str(path), producer)
        return path

    def _load_fp(self) -> ToyUNet:
        return load_model(self._require(self.config.model_path, "train"))

    def _load_quantized(self) -> QuantizedModel:
        return load_quantized(self._require(self.out_dir / QUANTIZED_FILE, "quantize"))

    # -------------------------------------------------------------------------
    # Handlers
    # -------------------------------------------------------------------------

    def _handle_train(self) -> dict[str, Any]:
        """Train the toy UNet and save the checkpoint."""
        cfg = self.config
        dataset = generate_dataset(seed=cfg.run.seed, n=cfg.dataset.n, contrast=cfg.dataset.contrast)
        history: list[float] = []
        model = train_toy(
            dataset, self.sched, steps=cfg.train.steps, lr=cfg.train.lr, seed=cfg.run.seed,
            batch_size=cfg.train.batch, history=history,
        )
        self._write("model", save_model, model, cfg.model_path)
        ratio = loss_ratio(history)
        logger.info(f"Training loss ratio (last/first window): {ratio:.3f}")
        return {"model": str(cfg.model_path), "final_loss": history[-1], "loss_ratio": ratio}

    def _handle_quantize(self) -> dict[str, Any]:
        """Initialize, reconstruct and save the quantized model with its artifacts."""
        cfg = self.config
        fp_model = self._load_fp()
        ctx = build_context(cfg, fp_model, self.sched)
        settings = settings_from_config(cfg)
        qmodel, recon_log, stats = quantize_model(
            fp_model, ctx.cal, settings, cfg.recon_config(), ctx.sampler, cfg, ctx.calibration_seconds
        )

        self._write("calibration", save_calibration, ctx.cal, self.out_dir / CALIBRATION_FILE)
        self._write("quantized", save_quantized, qmodel, self.out_dir / QUANTIZED_FILE)
        if qmodel.softmax_decisions:
            self._write("daq_decisions", write_decision_csv, qmodel.softmax_decisions, self.out_dir / DECISIONS_FILE)
        self._write("recon_log", lambda log, path: log.write_json(path), recon_log, self.out_dir / RECON_LOG_FILE)

        if stats.daq_overhead is not None:
            logger.info(f"DAQ overhead: {100 * stats.daq_overhead:.1f}% of calibration sampling")
        return {
            "settings": settings.label,
            "rounds": recon_log.sources,
            "daq_overhead": stats.daq_overhead,
        }

    def _handle_sample(self) -> dict[str, Any]:
        """Sample the quantized and FP models; write the archive and PNG grids."""
        cfg = self.config
        qmodel = self._load_quantized()
        n, steps, seed = cfg.sampling.n_samples, cfg.sampling.inference_steps, cfg.run.seed
        q_samples = sample(qmodel, n, steps, seed=seed, sched=self.sched, eta=cfg.sampling.eta).data
        fp_samples = sample(qmodel.fp_model, n, steps, seed=seed, sched=self.sched, eta=cfg.sampling.eta).data

        records = {"samples": q_samples.astype(np.float32), "samples_fp": fp_samples.astype(np.float32)}
        self._write("samples", lambda recs, path: save_archive(path, recs), records, self.out_dir / SAMPLES_FILE)
        if n > 0:
            self._write("samples_png", write_png_grid, q_samples, self.out_dir / "samples.png")
            self._write("samples_fp_png", write_png_grid, fp_samples, self.out_dir / "samples_fp.png")
        return {"samples": n}

    def _handle_evaluate(self) -> dict[str, Any]:
        """Score the quantized model against the reference set."""
        cfg = self.config
        fp_model = self._load_fp()
        qmodel = self._load_quantized()
        ctx = build_context(cfg, fp_model, self.sched)

        fp_fmd, _ = sample_fmd(ctx, fp_model)
        q_fmd, _ = sample_fmd(ctx, qmodel)
        errors = layer_errors(fp_model, qmodel, ctx.cal)
        arm = Arm("quantized", qmodel.settings, cfg.recon_config())
        result = arm.result(q_fmd, mean_sqnr(errors), cfg.evaluate.n_samples, cfg.evaluate.seed)

        report = MetricReport(config=cfg.to_dict(), layers=errors, arms=[result], fp_fmd=fp_fmd)
        if cfg.report.record_timings:
            report.timings = {"calibration_seconds": ctx.calibration_seconds}
        json_path, csv_path = emit_report(report, self.out_dir / cfg.report.name)
        self._outputs.update({"report": str(json_path), "report_csv": str(csv_path)})
        logger.info(f"fmd: fp {fp_fmd:.4f}, quantized {q_fmd:.4f}")
        return {"fp_fmd": fp_fmd, "fmd": q_fmd, "mean_sqnr_db": result.mean_sqnr_db}

    def _handle_ablate(self) -> dict[str, Any]:
        """Evaluate every ablation arm; one CSV row per arm."""
        cfg = self.config
        fp_model = self._load_fp()
        ctx = build_context(cfg, fp_model, self.sched)
        fp_fmd, _ = sample_fmd(ctx, fp_model)

        arms = ablation_arms(cfg)
        results = []
        daq_seconds = 0.0
        for i, arm in enumerate(arms, start=1):
            logger.info(f"Ablation arm {i}/{len(arms)}: {arm.name}")
            result, _, _, stats = evaluate_arm(ctx, arm)
            results.append(result)
            daq_seconds = max(daq_seconds, stats.daq_seconds)
        overhead = daq_seconds / ctx.calibration_seconds if ctx.calibration_seconds else None
        if overhead is not None:
            logger.info(f"DAQ overhead: {100 * overhead:.1f}% of calibration sampling")

        report = MetricReport(config=cfg.to_dict(), arms=results, fp_fmd=fp_fmd)
        if cfg.report.record_timings:
            report.timings = {
                "calibration_seconds": ctx.calibration_seconds,
                "daq_seconds": daq_seconds,
                "daq_overhead": overhead,
            }
        json_path, csv_path = emit_report(report, self.out_dir / ABLATION_FILE)
        self._outputs.update({"ablation": str(json_path), "ablation_csv": str(csv_path)})
        return {"arms": len(results), "csv": str(csv_path), "fp_fmd": fp_fmd}


def run_command(config: RunConfig, command: str) -> CommandResult:
    """Execute ``command`` by name."""
    return CommandExecutor(config).execute(CommandType(command))
