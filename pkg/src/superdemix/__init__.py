"""Convex demixing super-resolution of two mutually interfering point-source channels."""

from superdemix.signal import (
    MixedMeasurement,
    PointSourceModel,
    PsfRatio,
    atom,
    measure,
    min_separation,
    normalize_raw_channels,
    sample_psf_ratio,
    sample_sources,
    synthesize_signal,
)
from superdemix.kernel import FejerKernel, build_kernel, kernel_eval, modulated_kernel_eval
from superdemix.certificate import (
    CertificateReport,
    CertificateSystem,
    DiagnosticsRecord,
    DualPolynomial,
    build_system,
    certificate_polynomials,
    invertibility_diagnostics,
    solve_coefficients,
    verify_certificate,
)
from superdemix.sdp import (
    DemixProblem,
    DemixSolution,
    SolverOptions,
    dual_norm,
    extract_dual,
    solve_demix,
    toeplitz_from_generator,
)
from superdemix.localize import (
    LocalizationResult,
    ScoreRecord,
    estimate_amplitudes,
    locate,
    localize,
    match_and_score,
)
from superdemix.harness import (
    PhaseTransitionGrid,
    TrialConfig,
    TrialResult,
    emit_results,
    run_phase_transition,
    run_trial,
)

__version__ = "0.1.0"
