"""Core estimator lattice.

Standard TSLS with the implied first stage, the plug-in two-stage estimator
for arbitrary exposure links, the exposure-model-free locally efficient
estimator (joint solve over effect and outcome coefficients), and the generic
double-robust G-estimator built on a centered index.  All estimating
equations here are linear in the unknowns, so every solver is a single linear
solve; "one-step" updates from a starting value land on the same solution and
are retained for interface symmetry with the adaptive procedures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import BasisSpec, Dataset, build_design
from .errors import (
    SingularDesignError,
    UnsupportedCombinationError,
    WeakIdentificationError,
)
from .glm import fit_ols
from .inference import sandwich_se
from .models import (
    CustomIndex,
    EffectModel,
    EmpiricalIv,
    ExposureModel,
    IndexFunction,
    IvModel,
    OutcomeModel,
    RawInstruments,
    ScaledInstrument,
)

__all__ = [
    "EstimateResult",
    "standard_tsls",
    "plug_in_two_stage",
    "locally_efficient_y",
    "g_estimate",
    "centered_index",
    "efficient_index",
    "outcome_coef_at",
]

WEAK_ID_CONDITION = 1e10
NORMAL_975 = 1.959963984540054


@dataclass
class EstimateResult:
    """Point estimate plus nuisance fits, optional SEs/CIs and diagnostics."""

    psi_hat: np.ndarray
    beta_hat: np.ndarray = field(default_factory=lambda: np.empty(0))
    nuisance: dict = field(default_factory=dict)
    se: np.ndarray | None = None
    ci: tuple[np.ndarray, np.ndarray] | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def psi(self) -> float:
        """Scalar effect estimate (constant-effect models)."""
        return float(self.psi_hat[0])


def _normal_ci(est: np.ndarray, se: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return est - NORMAL_975 * se, est + NORMAL_975 * se


def _check_denominator(matrix: np.ndarray, scale: float, what: str) -> float:
    s = np.linalg.svd(matrix, compute_uv=False)
    smin, smax = float(s[-1]), float(s[0])
    cond = smax / smin if smin > 0 else np.inf
    if smin <= 1e-10 * max(scale, 1e-300):
        raise WeakIdentificationError(
            f"{what}: estimating-equation denominator is degenerate "
            f"(smallest singular value {smin:.3e} against scale {scale:.3e})",
            condition=cond,
        )
    if cond > WEAK_ID_CONDITION:
        raise WeakIdentificationError(
            f"{what}: denominator condition number {cond:.3e} exceeds {WEAK_ID_CONDITION:.0e}",
            condition=cond,
        )
    return cond


def outcome_coef_at(data: Dataset, effect: EffectModel, outcome_basis: BasisSpec,
                    psi) -> np.ndarray:
    """OLS coefficients of y - m(C;psi)*x on the outcome basis.

    The conventional way to freeze an outcome model at a preliminary effect
    estimate before running a G-estimator.
    """
    resid = data.y - effect.value(data, psi) * data.x
    return fit_ols(build_design(data, outcome_basis), resid).coefficients


# ---------------------------------------------------------------------------
# Standard TSLS
# ---------------------------------------------------------------------------

def standard_tsls(data: Dataset, effect: EffectModel, outcome_basis: BasisSpec,
                  instruments: BasisSpec) -> EstimateResult:
    """Two-stage least squares with the implied first stage.

    Each endogenous regressor x*w_j(C) (one per effect-basis term) is
    projected by OLS onto [instrument columns, outcome-basis columns]; the
    second stage regresses y on [outcome basis, fitted endogenous columns].
    Standard errors are the usual IV sandwich, with residuals formed from the
    actual (not fitted) endogenous columns.
    """
    inst = build_design(data, instruments)
    by = build_design(data, outcome_basis)
    grad = effect.gradient(data)
    k = effect.dim
    if inst.shape[1] < k:
        raise UnsupportedCombinationError(
            f"order condition fails: {inst.shape[1]} instrument column(s) for {k} effect parameter(s)")
    endog = data.x[:, None] * grad
    first_design = np.column_stack([inst, by])
    first_fits = [fit_ols(first_design, endog[:, j]) for j in range(k)]
    fitted_endog = np.column_stack([f.fitted for f in first_fits])

    second_design = np.column_stack([by, fitted_endog])
    try:
        second = fit_ols(second_design, data.y)
    except SingularDesignError as err:
        raise WeakIdentificationError(
            "rank condition fails: fitted endogenous regressors are collinear "
            f"with the outcome basis ({err})", condition=err.condition) from None
    if second.condition > WEAK_ID_CONDITION:
        raise WeakIdentificationError(
            f"rank condition fails: second-stage condition {second.condition:.3e}",
            condition=second.condition)

    p_y = by.shape[1]
    beta = second.coefficients[:p_y]
    psi = second.coefficients[p_y:]

    resid = data.y - by @ beta - endog @ psi
    moments = second_design * resid[:, None]
    jac = -(second_design.T @ np.column_stack([by, endog])) / data.n
    try:
        se_all = sandwich_se(moments, jac)
        se = se_all[p_y:]
        beta_se = se_all[:p_y]
    except SingularDesignError:
        se = beta_se = None

    fs_summary = {}
    for j, f in enumerate(first_fits):
        tot = np.sum((endog[:, j] - endog[:, j].mean()) ** 2)
        fs_summary[f"endog{j}"] = {
            "r_squared": float(1.0 - np.sum(f.residuals ** 2) / tot) if tot > 0 else 0.0,
        }
    result = EstimateResult(
        psi_hat=psi,
        beta_hat=beta,
        nuisance={"first_stage": first_fits},
        se=se,
        ci=_normal_ci(psi, se) if se is not None else None,
        diagnostics={
            "second_stage_condition": second.condition,
            "first_stage": fs_summary,
            "beta_se": beta_se,
        },
    )
    return result


# ---------------------------------------------------------------------------
# Plug-in two-stage
# ---------------------------------------------------------------------------

def plug_in_two_stage(data: Dataset, exposure: ExposureModel, effect: EffectModel,
                      outcome_basis: BasisSpec) -> EstimateResult:
    """Fit the exposure model, then regress y on [outcome basis, m_x*grad].

    Stage-1 non-convergence raises; stage-2 collinearity raises.  Reported
    standard errors condition on the fitted first stage.
    """
    fitted_exposure = exposure if exposure.is_fitted else exposure.fit(data, require_convergence=True)
    mhat = fitted_exposure.predict(data)
    by = build_design(data, outcome_basis)
    grad = effect.gradient(data)
    plug = mhat[:, None] * grad

    design = np.column_stack([by, plug])
    second = fit_ols(design, data.y)
    p_y = by.shape[1]
    beta = second.coefficients[:p_y]
    psi = second.coefficients[p_y:]

    moments = design * second.residuals[:, None]
    jac = -(design.T @ design) / data.n
    try:
        se_all = sandwich_se(moments, jac)
        se = se_all[p_y:]
    except SingularDesignError:
        se = None
    return EstimateResult(
        psi_hat=psi,
        beta_hat=beta,
        nuisance={"exposure": fitted_exposure},
        se=se,
        ci=_normal_ci(psi, se) if se is not None else None,
        diagnostics={
            "second_stage_condition": second.condition,
            "exposure_converged": fitted_exposure.fit_converged,
        },
    )


# ---------------------------------------------------------------------------
# Locally efficient estimation without reliance on the exposure model
# ---------------------------------------------------------------------------

def locally_efficient_y(data: Dataset, exposure: ExposureModel, effect: EffectModel,
                        outcome_basis: BasisSpec, update: str = "full_solve",
                        start: np.ndarray | None = None) -> EstimateResult:
    """Joint solve for (psi, beta) with index (m_x * dm/dpsi ; dm_y/dbeta).

    The exposure model only shapes the index, so the estimator stays
    consistent under exposure-model misspecification as long as the outcome
    model is correct.  The system is linear; ``one_step`` from any start is
    identical to ``full_solve`` and is kept for interface symmetry.
    """
    if not exposure.is_fitted:
        raise ValueError("exposure model must be fitted first")
    if update == "one_step" and start is None:
        raise ValueError("one_step update requires a starting value")
    mhat = exposure.predict(data)
    by = build_design(data, outcome_basis)
    grad = effect.gradient(data)
    k = effect.dim

    index_mat = np.column_stack([mhat[:, None] * grad, by])
    regressors = np.column_stack([data.x[:, None] * grad, by])
    system = index_mat.T @ regressors
    labels = [f"m_x*{lab}" for lab in (effect.basis.labels() if effect.basis else ["1"])] + outcome_basis.labels()
    try:
        cond = _check_denominator(system, _moment_scale(index_mat, regressors, data.n), "locally_efficient_y")
    except WeakIdentificationError as err:
        raise SingularDesignError(
            f"locally efficient system is singular; index components: {labels} ({err})") from None

    rhs = index_mat.T @ data.y
    if update == "one_step":
        start = np.asarray(start, dtype=float)
        theta = start + np.linalg.solve(system, rhs - system @ start)
    else:
        theta = np.linalg.solve(system, rhs)
    psi = theta[:k]
    beta = theta[k:]

    resid = data.y - regressors @ theta
    moments = index_mat * resid[:, None]
    jac = -(index_mat.T @ regressors) / data.n
    try:
        se_all = sandwich_se(moments, jac)
        se = se_all[:k]
    except SingularDesignError:
        se = None
    return EstimateResult(
        psi_hat=psi,
        beta_hat=beta,
        nuisance={"exposure": exposure},
        se=se,
        ci=_normal_ci(psi, se) if se is not None else None,
        diagnostics={
            "system_condition": cond,
            "ee_residual_norm": _relative_residual(moments),
        },
    )


# ---------------------------------------------------------------------------
# Centered index and the double-robust G-estimator
# ---------------------------------------------------------------------------

def centered_index(data: Dataset, index: IndexFunction, iv: IvModel) -> np.ndarray:
    """Evaluate e(Z,C) - E{e(Z,C)|C} rowwise under the fitted instrument law.

    Exact closed forms: multiplicative indices subtract g(C)*E(Z|C); any
    index with a single binary instrument is centered by the two-point
    mixture; linear-in-Z indices substitute E(Z|C); an empirical instrument
    law with a general index falls back to averaging the index over the
    observed instrument values at each row's covariates.
    """
    values = index.evaluate(data)
    if values.ndim == 1:
        values = values[:, None]
    if getattr(index, "centered", False):
        return values
    cond_mean = iv.conditional_mean(data)
    if isinstance(index, RawInstruments):
        return data.z - cond_mean
    if isinstance(index, ScaledInstrument):
        return index.scale(data)[:, None] * (data.z - cond_mean)
    # custom index
    if data.n_instruments == 1 and data.z_is_binary():
        p = cond_mean[:, 0]
        e1 = index.evaluate(data.with_z(1.0))
        e0 = index.evaluate(data.with_z(0.0))
        return values - (p[:, None] * e1 + (1.0 - p)[:, None] * e0)
    if index.is_linear_in_z():
        return values - index.evaluate(data.with_z(cond_mean))
    if isinstance(iv, EmpiricalIv):
        if data.n > 4000:
            raise UnsupportedCombinationError(
                "empirical centering of a general index is quadratic in n; "
                f"n={data.n} exceeds the supported size")
        acc = np.zeros_like(values)
        for j in range(data.n):
            acc += index.evaluate(data.with_z(np.broadcast_to(data.z[j], data.z.shape)))
        return values - acc / data.n
    raise UnsupportedCombinationError(
        "no exact conditional mean for a nonlinear index with a continuous instrument")


def g_estimate(data: Dataset, index: IndexFunction, outcome: OutcomeModel | None,
               iv: IvModel, effect: EffectModel) -> EstimateResult:
    """Solve the centered estimating equation for the causal coefficients.

    ``outcome`` handling: a model with coefficients subtracts its prediction
    (the classical fixed-nuisance G-estimator); a model without coefficients
    is profiled jointly, appending its basis moment conditions to the system
    (equivalent to one Newton update of the stacked equations from any start);
    ``None`` means no outcome model (m_y = 0).

    When the index has more components than the effect has parameters, the
    leading components are used.
    """
    d_full = centered_index(data, index, iv)
    k = effect.dim
    if d_full.shape[1] < k:
        raise UnsupportedCombinationError(
            f"index dimension {d_full.shape[1]} below effect dimension {k}")
    d = d_full[:, :k]
    grad = effect.gradient(data)
    endog = data.x[:, None] * grad

    profiled = outcome is not None and outcome.coef is None
    if profiled:
        by = outcome.design(data)
        index_mat = np.column_stack([d, by])
        regressors = np.column_stack([endog, by])
        system = index_mat.T @ regressors
        cond = _check_denominator(system, _moment_scale(index_mat, regressors, data.n), "g_estimate")
        theta = np.linalg.solve(system, index_mat.T @ data.y)
        psi = theta[:k]
        beta = theta[k:]
        resid = data.y - regressors @ theta
        moments = index_mat * resid[:, None]
        jac = -(index_mat.T @ regressors) / data.n
        se_slice = slice(0, k)
    else:
        base = data.y if outcome is None else data.y - outcome.predict(data)
        system = d.T @ endog
        cond = _check_denominator(system, _moment_scale(d, endog, data.n), "g_estimate")
        psi = np.linalg.solve(system, d.T @ base)
        beta = np.empty(0) if outcome is None else np.asarray(outcome.coef, dtype=float)
        resid = base - endog @ psi
        moments = d * resid[:, None]
        jac = -(d.T @ endog) / data.n
        se_slice = slice(0, k)

    try:
        se = sandwich_se(moments, jac)[se_slice]
    except SingularDesignError:
        se = None
    return EstimateResult(
        psi_hat=psi,
        beta_hat=beta,
        nuisance={"iv": iv, "index": index, "outcome": outcome},
        se=se,
        ci=_normal_ci(psi, se) if se is not None else None,
        diagnostics={
            "denominator_condition": cond,
            "ee_residual_norm": _relative_residual(moments),
            "profiled_outcome": profiled,
        },
    )


def efficient_index(data: Dataset, exposure: ExposureModel, iv: IvModel,
                    effect: EffectModel, variance: str = "homoscedastic") -> CustomIndex:
    """Locally efficient index under constant residual variance.

    e_opt(Z,C) = dm/dpsi * [m_x(Z,C) - E{m_x(Z,C)|C}], with the inner
    conditional expectation computed exactly: a two-point mixture for a
    binary instrument (any exposure link), or substitution of E(Z|C) for an
    exposure model linear in Z.  The result is centered by construction.
    """
    if variance != "homoscedastic":
        raise UnsupportedCombinationError(
            f"only the homoscedastic variance model is supported, got {variance!r}")
    if not exposure.is_fitted:
        raise ValueError("exposure model must be fitted first")

    binary = data.n_instruments == 1 and data.z_is_binary()
    if binary:
        def cond_mean_mx(ds: Dataset) -> np.ndarray:
            p = iv.conditional_mean(ds)[:, 0]
            m1 = exposure.predict_at_z(ds, 1.0)
            m0 = exposure.predict_at_z(ds, 0.0)
            return p * m1 + (1.0 - p) * m0
    elif exposure.is_linear_in_z():
        def cond_mean_mx(ds: Dataset) -> np.ndarray:
            return exposure.predict(ds.with_z(iv.conditional_mean(ds)))
    else:
        raise UnsupportedCombinationError(
            "continuous instruments combined with a nonlinear exposure model "
            "have no exact efficient index here")

    def evaluator(ds: Dataset) -> np.ndarray:
        centered_mx = exposure.predict(ds) - cond_mean_mx(ds)
        return centered_mx[:, None] * effect.gradient(ds)

    return CustomIndex(evaluator=evaluator, centered=True,
                       linear_in_z=exposure.is_linear_in_z())


def _moment_scale(left: np.ndarray, right: np.ndarray, n: int) -> float:
    # The ||right||^2 floor makes an (effectively) zero index register as
    # degenerate no matter how the cancellation scale ||left||*||right||
    # shrinks with it; the estimating equation is homogeneous in the index,
    # so any sanely scaled index sits far above both references.
    right_norm = float(np.linalg.norm(right))
    return max(float(np.linalg.norm(left)) * right_norm, right_norm**2) / n


def _relative_residual(moments: np.ndarray) -> float:
    total = moments.sum(axis=0)
    scale = np.abs(moments).sum(axis=0)
    return float(np.max(np.abs(total) / np.maximum(scale, 1e-300)))
