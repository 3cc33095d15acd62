"""Seeded Monte Carlo trials, phase-transition grids, and result persistence."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from superdemix.errors import NumericalFailure, ParameterError
from superdemix.sdp import DemixProblem, SolverOptions, solve_demix
from superdemix.signal import measure, sample_psf_ratio, sample_sources, synthesize_signal

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
SUCCESS_NMSE = 1e-4


def splitmix64(x: int) -> int:
    """One step of the splitmix64 output function."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(*parts: int) -> int:
    """Order-sensitive 64-bit hash of integer parts (splitmix64 chained)."""
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


@dataclass(frozen=True)
class TrialConfig:
    M: int
    K1: int
    K2: int
    delta_min: float | None = None
    trials: int = 20
    base_seed: int = 0
    solver_opts: SolverOptions = field(default_factory=SolverOptions)
    success_nmse: float = SUCCESS_NMSE
    amp_law: str = "complex_gaussian"

    def __post_init__(self):
        if self.delta_min is None:
            object.__setattr__(self, "delta_min", 1.0 / (2 * self.M))
        if self.M < 1 or self.K1 < 1 or self.K2 < 1:
            raise ParameterError("M, K1 and K2 must be positive")
        if self.trials < 1:
            raise ParameterError("trials must be at least 1")
        if self.success_nmse <= 0:
            raise ParameterError("success_nmse must be positive")
        if self.K1 + self.K2 > 4 * self.M + 1:
            raise ParameterError(
                f"K1+K2={self.K1 + self.K2} exceeds the 4M+1={4 * self.M + 1} measurements"
            )
        if not self.feasible:
            raise ParameterError(
                f"cannot place max(K1,K2)={max(self.K1, self.K2)} sources "
                f"with separation {self.delta_min}"
            )

    @property
    def feasible(self) -> bool:
        return placement_feasible(max(self.K1, self.K2), self.delta_min)


def placement_feasible(K: int, delta_min: float) -> bool:
    return K == 1 or K * delta_min < 1


@dataclass(frozen=True)
class TrialResult:
    M: int
    K1: int
    K2: int
    trial_index: int
    seed: int
    nmse1: float
    nmse2: float
    nmse: float
    success: bool
    converged: bool
    numerical_failure: bool
    iterations: int
    objective: float
    atomic_norm: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls)})


def _trial_seeds(cfg: TrialConfig, trial_index: int) -> tuple[int, int, int, int]:
    seed = mix_seed(cfg.base_seed, cfg.K1, cfg.K2, trial_index)
    return seed, mix_seed(seed, 1), mix_seed(seed, 2), mix_seed(seed, 3)


def run_trial(cfg: TrialConfig, trial_index: int) -> TrialResult:
    """Generate, solve and score one seeded instance.

    A solver that does not converge, or fails numerically, yields a failed
    trial with the corresponding flag set rather than an exception.
    """
    seed, s1, s2, s3 = _trial_seeds(cfg, trial_index)
    src1 = sample_sources(cfg.K1, cfg.delta_min, cfg.amp_law, s1, channel_id=1)
    src2 = sample_sources(cfg.K2, cfg.delta_min, cfg.amp_law, s2, channel_id=2)
    psf = sample_psf_ratio(cfg.M, s3)
    x1 = synthesize_signal(src1, cfg.M)
    x2 = synthesize_signal(src2, cfg.M)
    meas = measure(x1, x2, psf)
    truth_norm = float(np.abs(src1.amps).sum() + np.abs(src2.amps).sum())
    try:
        sol = solve_demix(DemixProblem.from_measurement(meas), cfg.solver_opts)
    except NumericalFailure:
        log.warning("numerical failure in trial %d of %s", trial_index, cfg)
        nan = float("nan")
        return TrialResult(
            cfg.M, cfg.K1, cfg.K2, trial_index, seed, nan, nan, nan,
            False, False, True, 0, nan, truth_norm,
        )
    e1 = float(np.linalg.norm(sol.x1 - x1) / np.linalg.norm(x1))
    e2 = float(np.linalg.norm(sol.x2 - x2) / np.linalg.norm(x2))
    nmse = e1 + e2
    return TrialResult(
        M=cfg.M,
        K1=cfg.K1,
        K2=cfg.K2,
        trial_index=trial_index,
        seed=seed,
        nmse1=e1,
        nmse2=e2,
        nmse=nmse,
        success=bool(sol.converged and nmse <= cfg.success_nmse),
        converged=sol.converged,
        numerical_failure=False,
        iterations=sol.iterations,
        objective=sol.objective,
        atomic_norm=truth_norm,
    )


def trial_instance(cfg: TrialConfig, trial_index: int):
    """The ground truth ``(sources1, sources2, psf)`` used by ``run_trial``."""
    _, s1, s2, s3 = _trial_seeds(cfg, trial_index)
    return (
        sample_sources(cfg.K1, cfg.delta_min, cfg.amp_law, s1, channel_id=1),
        sample_sources(cfg.K2, cfg.delta_min, cfg.amp_law, s2, channel_id=2),
        sample_psf_ratio(cfg.M, s3),
    )


def max_workers() -> int:
    env = os.environ.get("DEMIX_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError:
            raise ParameterError(f"DEMIX_THREADS must be an integer, got {env!r}") from None
    return cap


def _run_job(job):
    cfg, idx = job
    return run_trial(cfg, idx)


def run_trials(jobs, workers: int | None = None) -> list[TrialResult]:
    """Run ``(cfg, trial_index)`` jobs, in parallel when ``workers > 1``.

    Results come back in job order regardless of scheduling.
    """
    jobs = list(jobs)
    workers = max_workers() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs, chunksize=1))


@dataclass
class PhaseTransitionGrid:
    """Success rates indexed ``[K1-1, K2-1]``; NaN marks an infeasible cell."""

    M: int
    k_range: list
    success_rate: np.ndarray
    trials_per_cell: int
    delta_min: float
    base_seed: int = 0
    results: list = field(default_factory=list, repr=False)

    def rate(self, K1: int, K2: int) -> float:
        return float(self.success_rate[self.k_range.index(K1), self.k_range.index(K2)])

    def cells(self):
        for i, K1 in enumerate(self.k_range):
            for j, K2 in enumerate(self.k_range):
                yield K1, K2, float(self.success_rate[i, j])

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "k_range": list(self.k_range),
            "success_rate": [
                [None if math.isnan(v) else float(v) for v in row] for row in self.success_rate
            ],
            "trials_per_cell": self.trials_per_cell,
            "delta_min": self.delta_min,
            "base_seed": self.base_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseTransitionGrid":
        rates = np.array(
            [[np.nan if v is None else v for v in row] for row in d["success_rate"]], dtype=float
        )
        return cls(d["M"], list(d["k_range"]), rates, d["trials_per_cell"], d["delta_min"], d.get("base_seed", 0))


def rates_from_results(results, k_range) -> np.ndarray:
    """Per-cell success fraction; cells with no trials stay NaN."""
    k_range = list(k_range)
    succ = np.zeros((len(k_range), len(k_range)))
    count = np.zeros_like(succ)
    for r in results:
        i, j = k_range.index(r.K1), k_range.index(r.K2)
        count[i, j] += 1
        succ[i, j] += r.success
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, succ / np.maximum(count, 1), np.nan)


def run_phase_transition(
    M: int,
    k_max: int,
    trials: int,
    base_seed: int = 0,
    delta_min: float | None = None,
    solver_opts: SolverOptions | None = None,
    workers: int | None = None,
) -> PhaseTransitionGrid:
    """Success rate for every ``(K1, K2)`` in ``[1..k_max]^2``.

    Infeasible cells are never attempted and are reported as NaN.
    """
    if k_max < 1:
        raise ParameterError("k_max must be at least 1")
    if delta_min is None:
        delta_min = 1.0 / (2 * M)
    solver_opts = solver_opts or SolverOptions()
    k_range = list(range(1, k_max + 1))
    jobs = []
    for K1 in k_range:
        for K2 in k_range:
            if not placement_feasible(max(K1, K2), delta_min) or K1 + K2 > 4 * M + 1:
                continue
            cfg = TrialConfig(M, K1, K2, delta_min, trials, base_seed, solver_opts)
            jobs.extend((cfg, t) for t in range(trials))
    results = run_trials(jobs, workers)
    return PhaseTransitionGrid(
        M, k_range, rates_from_results(results, k_range), trials, delta_min, base_seed, results
    )


GRID_HEADER = ["K1", "K2", "success_rate", "trials"]
TRIAL_FIELDS = [f.name for f in dataclasses.fields(TrialResult)]


def emit_results(obj, path, fmt: str = "csv") -> None:
    """Write a grid or a list of trial results as CSV or JSON.

    Raises:
        OSError: with the offending path in the message.
    """
    path = Path(path)
    if fmt not in ("csv", "json"):
        raise ParameterError(f"unknown format {fmt!r}")
    try:
        with open(path, "w", newline="") as fh:
            if isinstance(obj, PhaseTransitionGrid):
                if fmt == "csv":
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(GRID_HEADER)
                    for K1, K2, rate in obj.cells():
                        w.writerow([K1, K2, repr(rate), obj.trials_per_cell])
                else:
                    json.dump(obj.to_dict(), fh, indent=2, sort_keys=True)
            else:
                rows = [r.to_dict() for r in obj]
                if fmt == "csv":
                    w = csv.DictWriter(fh, fieldnames=TRIAL_FIELDS, lineterminator="\n")
                    w.writeheader()
                    for row in rows:
                        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
                else:
                    json.dump(rows, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_grid_csv(path) -> PhaseTransitionGrid:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ks = sorted({int(r["K1"]) for r in rows} | {int(r["K2"]) for r in rows})
    rates = np.full((len(ks), len(ks)), np.nan)
    trials = 0
    for r in rows:
        rates[ks.index(int(r["K1"])), ks.index(int(r["K2"]))] = float(r["success_rate"])
        trials = int(r["trials"])
    return PhaseTransitionGrid(0, ks, rates, trials, float("nan"))


def read_grid_json(path) -> PhaseTransitionGrid:
    with open(path) as fh:
        return PhaseTransitionGrid.from_dict(json.load(fh))


def read_trials_json(path) -> list[TrialResult]:
    with open(path) as fh:
        return [TrialResult.from_dict(d) for d in json.load(fh)]


def read_trials_csv(path) -> list[TrialResult]:
    types = {f.name: f.type for f in dataclasses.fields(TrialResult)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            d = {}
            for k, v in row.items():
                t = types[k]
                d[k] = (v == "True") if t == "bool" else int(v) if t == "int" else float(v)
            out.append(TrialResult(**d))
    return out
