"""DAQ module - power-law driven quantizer selection for post-Softmax layers."""

from .powerlaw import (
    LOGNORMAL_MAX_Z,
    MIN_TAIL,
    AltFamily,
    DaqError,
    InsufficientTailError,
    PowerLawFit,
    fit_alternative,
    fit_power_law,
    fit_truncated_lognormal,
    likelihood_ratio,
    lognormal_loglik,
    power_law_loglik,
)
from .selector import (
    CSV_FIELDS,
    DEFAULT_MAX_FIT_SAMPLES,
    DaqDecision,
    PostSoftmaxMode,
    decide,
    decision_records,
    decisions_from_records,
    run_daq_offline,
    select_quantizer,
    write_decision_csv,
)

__all__ = [
    "AltFamily",
    "CSV_FIELDS",
    "DEFAULT_MAX_FIT_SAMPLES",
    "DaqDecision",
    "DaqError",
    "InsufficientTailError",
    "LOGNORMAL_MAX_Z",
    "MIN_TAIL",
    "PostSoftmaxMode",
    "PowerLawFit",
    "decide",
    "decision_records",
    "decisions_from_records",
    "fit_alternative",
    "fit_power_law",
    "fit_truncated_lognormal",
    "likelihood_ratio",
    "lognormal_loglik",
    "power_law_loglik",
    "run_daq_offline",
    "select_quantizer",
    "write_decision_csv",
]
