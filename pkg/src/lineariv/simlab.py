"""Deterministic data generators and the Monte Carlo harness.

Five generator families (two binary-exposure designs, an effect-modification
design, and the factorial misspecification designs on the lambda grid), all
driven by counter-based generators so that replicate i of master seed s is the
bit-identical dataset on every platform and at any parallelism level.

The harness reports bias and standard deviation on the replicates that
survive a scale-free severity rule (|estimate - median| <= 50 * IQR,
per estimator); severe outliers and failed replicates are counted separately.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset
from .errors import EstimationError, SchemaError
from .glm import expit, normal_cdf
from .rng import draw_normal, make_generator

__all__ = [
    "SimulatedData",
    "ScenarioConfig",
    "EstimatorSummary",
    "MonteCarloReport",
    "gen_sim1",
    "gen_sim2",
    "gen_effectmod",
    "gen_table1",
    "gen_extreme",
    "generate",
    "run_monte_carlo",
    "report_rows",
    "write_report_csv",
    "write_report_json",
]

OUTLIER_IQR_MULTIPLIER = 50.0
GENERATORS = ("sim1", "sim2", "effectmod", "table1", "extreme")


@dataclass(frozen=True)
class SimulatedData:
    dataset: Dataset
    psi_true: np.ndarray
    generator: str
    params: dict


def gen_sim1(n: int, seed) -> SimulatedData:
    """Binary exposure, instrument independent of the covariate.

    Z ~ Bernoulli(0.27); X ~ Bernoulli(Phi(Z+U+V)); Y normal with mean
    0.5*X - U - 2V + V^2 and unit variance.  U is latent and not included.
    """
    gen = make_generator(seed)
    u = draw_normal(gen, n)
    v = draw_normal(gen, n)
    z = (gen.random(n) < 0.27).astype(float)
    x = (gen.random(n) < normal_cdf(z + u + v)).astype(float)
    y = 0.5 * x - u - 2.0 * v + v**2 + draw_normal(gen, n)
    return SimulatedData(Dataset(y, x, z, v), np.array([0.5]), "sim1", {})


def gen_sim2(n: int, seed) -> SimulatedData:
    """Binary exposure with the instrument depending on the covariate.

    Z ~ Bernoulli(expit(-1+V/2)); X ~ Bernoulli(Phi(Z+U+V-ZV+V^2/2)); Y as in
    the first design.
    """
    gen = make_generator(seed)
    u = draw_normal(gen, n)
    v = draw_normal(gen, n)
    z = (gen.random(n) < expit(-1.0 + v / 2.0)).astype(float)
    x = (gen.random(n) < normal_cdf(z + u + v - z * v + v**2 / 2.0)).astype(float)
    y = 0.5 * x - u - 2.0 * v + v**2 + draw_normal(gen, n)
    return SimulatedData(Dataset(y, x, z, v), np.array([0.5]), "sim2", {})


def gen_effectmod(n: int, seed) -> SimulatedData:
    """Continuous exposure with effect modification by the covariate.

    Z ~ Bernoulli(0.27); X normal with mean 2Z+V+U-ZV+0.5V^2; Y normal with
    mean 0.5X + XV - U - 2V + V^2; both unit variance.  The causal
    coefficients on (X, XV) are (0.5, 1).
    """
    gen = make_generator(seed)
    u = draw_normal(gen, n)
    v = draw_normal(gen, n)
    z = (gen.random(n) < 0.27).astype(float)
    x = 2.0 * z + v + u - z * v + 0.5 * v**2 + draw_normal(gen, n)
    y = 0.5 * x + x * v - u - 2.0 * v + v**2 + draw_normal(gen, n)
    return SimulatedData(Dataset(y, x, z, v), np.array([0.5, 1.0]), "effectmod", {})


def gen_table1(lambda_x: int, lambda_y: int, lambda_z: int, n: int, seed) -> SimulatedData:
    """Factorial misspecification design on the lambda grid (true effect 1).

    Z ~ Bernoulli(expit(-1+V/2+lz*V^2/3)); X normal with mean
    Z+U+V-ZV+lx*V^2; Y normal with mean X-U-V+ly*V^2; unit noise variances.
    """
    gen = make_generator(seed)
    u = draw_normal(gen, n)
    v = draw_normal(gen, n)
    z = (gen.random(n) < expit(-1.0 + v / 2.0 + lambda_z * v**2 / 3.0)).astype(float)
    x = z + u + v - z * v + lambda_x * v**2 + draw_normal(gen, n)
    y = x - u - v + lambda_y * v**2 + draw_normal(gen, n)
    return SimulatedData(Dataset(y, x, z, v), np.array([1.0]), "table1",
                         {"lambda": (lambda_x, lambda_y, lambda_z)})


def gen_extreme(lambda_x: int, lambda_y: int, lambda_z: int, n: int, seed) -> SimulatedData:
    """Extreme misspecification design (true effect 1).

    P(Z=1|V) = 1-exp{-exp(-1+V/2-V^2/2+lz*V^2/8)} (complementary log-log);
    X normal with mean Z+U+V-ZV+2V^2+2ZV^2+2*lx*V^3; Y normal with mean
    X-U-V-2V^2+2*ly*V^3; unit noise variances.
    """
    gen = make_generator(seed)
    u = draw_normal(gen, n)
    v = draw_normal(gen, n)
    pz = 1.0 - np.exp(-np.exp(-1.0 + v / 2.0 - v**2 / 2.0 + lambda_z * v**2 / 8.0))
    z = (gen.random(n) < pz).astype(float)
    x = z + u + v - z * v + 2.0 * v**2 + 2.0 * z * v**2 + 2.0 * lambda_x * v**3 + draw_normal(gen, n)
    y = x - u - v - 2.0 * v**2 + 2.0 * lambda_y * v**3 + draw_normal(gen, n)
    return SimulatedData(Dataset(y, x, z, v), np.array([1.0]), "extreme",
                         {"lambda": (lambda_x, lambda_y, lambda_z)})


@dataclass(frozen=True)
class ScenarioConfig:
    """One Monte Carlo scenario: generator, lambda grid point, size, seeding."""

    generator: str
    n: int
    seed: int
    reps: int
    lam: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise SchemaError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        if self.generator in ("table1", "extreme"):
            if self.lam is None or len(self.lam) != 3 or any(c not in (-1, 0, 1) for c in self.lam):
                raise SchemaError("table1/extreme scenarios need lam=(lx,ly,lz) with components in {-1,0,1}")
        if self.n < 50:
            raise SchemaError("scenario n must be at least 50")

    def label(self) -> str:
        if self.lam is not None:
            return f"{self.generator}{self.lam}"
        return self.generator


def generate(config: ScenarioConfig, rep: int) -> SimulatedData:
    """Dataset for replicate ``rep``: depends only on (master seed, rep)."""
    seed = [config.seed, rep]
    if config.generator == "sim1":
        return gen_sim1(config.n, seed)
    if config.generator == "sim2":
        return gen_sim2(config.n, seed)
    if config.generator == "effectmod":
        return gen_effectmod(config.n, seed)
    if config.generator == "table1":
        return gen_table1(*config.lam, config.n, seed)
    return gen_extreme(*config.lam, config.n, seed)


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------

@dataclass
class EstimatorSummary:
    """Bias/SD on retained replicates plus raw moments and exclusion counts."""

    name: str
    bias: np.ndarray
    sd: np.ndarray
    raw_bias: np.ndarray
    raw_sd: np.ndarray
    outliers_removed: int
    failed: int
    used: int
    scenario_failure: bool = False


@dataclass
class MonteCarloReport:
    config: ScenarioConfig
    psi_true: np.ndarray
    summaries: dict[str, EstimatorSummary]
    estimates: dict[str, np.ndarray]   # (reps, k), NaN rows = failed replicates


def _severe_outliers(values: np.ndarray) -> np.ndarray:
    """Componentwise severity rule: |v - median| > 50 * IQR (any component)."""
    med = np.median(values, axis=0)
    q1, q3 = np.percentile(values, [25, 75], axis=0)
    iqr = q3 - q1
    return np.any(np.abs(values - med) > OUTLIER_IQR_MULTIPLIER * iqr, axis=1)


def run_monte_carlo(config: ScenarioConfig,
                    estimators: dict[str, Callable[[Dataset], np.ndarray]],
                    threads: int = 1) -> MonteCarloReport:
    """Run every estimator on every replicate and summarise.

    Estimator callables receive a Dataset and return the effect-coefficient
    vector.  Estimation errors and non-finite results count as failed
    replicates (reported, excluded from the moments); the severity rule then
    removes extreme outliers from the retained ones.  Inserting or removing
    estimators never changes the data, and the report is invariant to the
    thread count.
    """
    if config.reps < 2:
        raise SchemaError("at least 2 replications are required")
    names = list(estimators)
    psi_true = generate(config, 0).psi_true
    k = psi_true.shape[0]
    raw: dict[str, np.ndarray] = {name: np.full((config.reps, k), np.nan) for name in names}

    def run_rep(i: int):
        sim = generate(config, i)
        out = {}
        for name in names:
            try:
                est = np.atleast_1d(np.asarray(estimators[name](sim.dataset), dtype=float))
            except EstimationError:
                out[name] = None
                continue
            out[name] = est if np.all(np.isfinite(est)) else None
        return i, out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_rep, range(config.reps)))
    else:
        results = [run_rep(i) for i in range(config.reps)]
    for i, out in results:
        for name, est in out.items():
            if est is not None:
                raw[name][i] = est

    summaries = {}
    for name in names:
        values = raw[name]
        ok = ~np.any(np.isnan(values), axis=1)
        failed = int(config.reps - ok.sum())
        good = values[ok]
        if good.shape[0] >= 2:
            severe = _severe_outliers(good)
            kept = good[~severe]
            outliers = int(severe.sum())
        else:
            kept = good
            outliers = 0
        used = kept.shape[0]
        nan_vec = np.full(k, np.nan)
        summaries[name] = EstimatorSummary(
            name=name,
            bias=kept.mean(axis=0) - psi_true if used else nan_vec.copy(),
            sd=kept.std(axis=0, ddof=1) if used >= 2 else nan_vec.copy(),
            raw_bias=good.mean(axis=0) - psi_true if good.shape[0] else nan_vec.copy(),
            raw_sd=good.std(axis=0, ddof=1) if good.shape[0] >= 2 else nan_vec.copy(),
            outliers_removed=outliers,
            failed=failed,
            used=used,
            scenario_failure=failed > 0.5 * config.reps,
        )
    return MonteCarloReport(config=config, psi_true=psi_true, summaries=summaries, estimates=raw)


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------

def report_rows(reports: list[MonteCarloReport]) -> list[dict]:
    """One row per (scenario, estimator, effect component)."""
    rows = []
    for rep in reports:
        cfg = rep.config
        for name, s in rep.summaries.items():
            for comp in range(rep.psi_true.shape[0]):
                rows.append({
                    "scenario": cfg.label(),
                    "generator": cfg.generator,
                    "lambda_x": cfg.lam[0] if cfg.lam else "",
                    "lambda_y": cfg.lam[1] if cfg.lam else "",
                    "lambda_z": cfg.lam[2] if cfg.lam else "",
                    "n": cfg.n,
                    "seed": cfg.seed,
                    "reps": cfg.reps,
                    "estimator": name,
                    "component": comp,
                    "bias": float(s.bias[comp]),
                    "sd": float(s.sd[comp]),
                    "raw_bias": float(s.raw_bias[comp]),
                    "raw_sd": float(s.raw_sd[comp]),
                    "outliers_removed": s.outliers_removed,
                    "failed": s.failed,
                    "used": s.used,
                })
    return rows


_REPORT_FIELDS = ["scenario", "generator", "lambda_x", "lambda_y", "lambda_z", "n",
                  "seed", "reps", "estimator", "component", "bias", "sd",
                  "raw_bias", "raw_sd", "outliers_removed", "failed", "used"]


def write_report_csv(reports: list[MonteCarloReport], path) -> None:
    rows = report_rows(reports)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: (repr(val) if isinstance(val, float) else val)
                             for key, val in row.items()})


def write_report_json(reports: list[MonteCarloReport], path) -> None:
    payload = {"schema_version": 1, "rows": report_rows(reports)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
