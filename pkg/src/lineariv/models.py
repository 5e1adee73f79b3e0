"""Working-model types: causal effect form, outcome, exposure, instrument law,
and index functions for estimating equations.

All models are parameterised by a :class:`~lineariv.dataset.BasisSpec`; fitted
instances are immutable value objects carrying their coefficient vector, so
the same fitted model can be evaluated on new data (bootstrap resamples,
counterfactual instrument values) without re-fitting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .dataset import BasisSpec, Dataset, build_design
from .errors import NonConvergenceError, UnsupportedCombinationError
from .glm import BinaryFit, expit, fit_binary, fit_ols, normal_cdf

__all__ = [
    "EffectModel",
    "OutcomeModel",
    "ExposureModel",
    "BinaryLogisticIv",
    "LinearMeanIv",
    "EmpiricalIv",
    "RawInstruments",
    "ScaledInstrument",
    "CustomIndex",
]


# ---------------------------------------------------------------------------
# Causal effect form m(C; psi)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EffectModel:
    """Causal effect of one exposure unit: constant, or linear in covariates.

    ``basis is None`` means the constant-effect model (a single coefficient);
    otherwise the effect is ``psi' @ basis(C)``.  ``value(data, 0) == 0`` in
    both cases, so the coefficient vector is the causal parameter itself.
    """

    basis: BasisSpec | None = None

    @classmethod
    def constant(cls) -> "EffectModel":
        return cls(None)

    @classmethod
    def with_modifiers(cls, basis: BasisSpec) -> "EffectModel":
        return cls(basis)

    @property
    def dim(self) -> int:
        return 1 if self.basis is None else len(self.basis)

    @property
    def is_constant(self) -> bool:
        return self.basis is None

    def gradient(self, data: Dataset) -> np.ndarray:
        """d m(C;psi)/d psi as an n-by-dim matrix (constant in psi)."""
        if self.basis is None:
            return np.ones((data.n, 1))
        return build_design(data, self.basis)

    def value(self, data: Dataset, psi) -> np.ndarray:
        psi = np.atleast_1d(np.asarray(psi, dtype=float))
        return self.gradient(data) @ psi


# ---------------------------------------------------------------------------
# Outcome model m_y(C; beta)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutcomeModel:
    """Linear model for the covariate main effect on the outcome."""

    basis: BasisSpec
    coef: np.ndarray | None = None

    def design(self, data: Dataset) -> np.ndarray:
        return build_design(data, self.basis)

    def predict(self, data: Dataset) -> np.ndarray:
        if self.coef is None:
            raise ValueError("outcome model has no coefficients yet")
        return self.design(data) @ self.coef

    def with_coef(self, coef) -> "OutcomeModel":
        return replace(self, coef=np.asarray(coef, dtype=float))


# ---------------------------------------------------------------------------
# Exposure model m_x(Z, C; alpha)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExposureModel:
    """Conditional-mean model for the exposure with identity/logit/probit link."""

    link: str
    basis: BasisSpec
    coef: np.ndarray | None = None
    fit_converged: bool = True

    def __post_init__(self):
        if self.link not in ("identity", "logit", "probit"):
            raise ValueError(f"unknown link {self.link!r}")

    @property
    def is_fitted(self) -> bool:
        return self.coef is not None

    def is_linear_in_z(self) -> bool:
        return self.link == "identity" and self.basis.is_linear_in_z()

    def fit(self, data: Dataset, require_convergence: bool = False) -> "ExposureModel":
        """Fit by OLS (identity link) or maximum likelihood (logit/probit)."""
        design = build_design(data, self.basis)
        if self.link == "identity":
            res = fit_ols(design, data.x)
            return replace(self, coef=res.coefficients, fit_converged=True)
        res: BinaryFit = fit_binary(design, data.x, link=self.link)
        if require_convergence and not res.converged:
            raise NonConvergenceError(
                f"exposure model ({self.link}) did not converge "
                f"(score norm {res.score_norm:.3e} after {res.iterations} iterations)",
                diagnostics={"score_norm": res.score_norm, "iterations": res.iterations,
                             "separation": res.separation},
            )
        return replace(self, coef=res.coefficients, fit_converged=res.converged)

    def predict(self, data: Dataset) -> np.ndarray:
        if self.coef is None:
            raise ValueError("exposure model has no coefficients yet")
        eta = build_design(data, self.basis) @ self.coef
        if self.link == "identity":
            return eta
        return expit(eta) if self.link == "logit" else normal_cdf(eta)

    def predict_at_z(self, data: Dataset, z_value) -> np.ndarray:
        """Prediction with every instrument cell replaced by ``z_value``."""
        return self.predict(data.with_z(z_value))


# ---------------------------------------------------------------------------
# Instrument-law models f(Z | C)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinaryLogisticIv:
    """P(Z=1|C) = expit(gamma' basis(C)) for a single binary instrument."""

    basis: BasisSpec
    coef: np.ndarray
    fit_converged: bool = True

    @classmethod
    def fit(cls, data: Dataset, basis: BasisSpec) -> "BinaryLogisticIv":
        if data.n_instruments != 1:
            raise UnsupportedCombinationError("binary logistic instrument model requires a single instrument column")
        if not data.z_is_binary():
            raise UnsupportedCombinationError("instrument column is not binary 0/1")
        res = fit_binary(build_design(data, basis), data.z[:, 0], link="logit")
        return cls(basis, res.coefficients, res.converged)

    @classmethod
    def known(cls, basis: BasisSpec, coef) -> "BinaryLogisticIv":
        return cls(basis, np.asarray(coef, dtype=float), True)

    def prob(self, data: Dataset) -> np.ndarray:
        return expit(build_design(data, self.basis) @ self.coef)

    def conditional_mean(self, data: Dataset) -> np.ndarray:
        return self.prob(data)[:, None]


@dataclass(frozen=True)
class LinearMeanIv:
    """E(Z|C) = gamma' basis(C), one coefficient column per instrument."""

    basis: BasisSpec
    coef: np.ndarray  # (p, q)

    @classmethod
    def fit(cls, data: Dataset, basis: BasisSpec) -> "LinearMeanIv":
        design = build_design(data, basis)
        cols = [fit_ols(design, data.z[:, j]).coefficients for j in range(data.n_instruments)]
        return cls(basis, np.column_stack(cols))

    @classmethod
    def known(cls, basis: BasisSpec, coef) -> "LinearMeanIv":
        coef = np.asarray(coef, dtype=float)
        if coef.ndim == 1:
            coef = coef[:, None]
        return cls(basis, coef)

    def conditional_mean(self, data: Dataset) -> np.ndarray:
        return build_design(data, self.basis) @ self.coef


@dataclass(frozen=True)
class EmpiricalIv:
    """Instrument independent of covariates: E(Z|C) is the sample mean of Z."""

    means: np.ndarray | None = None

    @classmethod
    def fit(cls, data: Dataset, basis: BasisSpec | None = None) -> "EmpiricalIv":
        return cls(np.asarray(data.z.mean(axis=0)))

    def conditional_mean(self, data: Dataset) -> np.ndarray:
        means = self.means if self.means is not None else data.z.mean(axis=0)
        return np.broadcast_to(means, (data.n, len(means))).copy()


IvModel = BinaryLogisticIv | LinearMeanIv | EmpiricalIv


# ---------------------------------------------------------------------------
# Index functions e(Z, C)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawInstruments:
    """e(Z, C) = Z: one index component per instrument column."""

    centered: bool = False

    def evaluate(self, data: Dataset) -> np.ndarray:
        return np.asarray(data.z)

    def is_linear_in_z(self) -> bool:
        return True


@dataclass(frozen=True)
class ScaledInstrument:
    """e(Z, C) = (alpha' basis(C)) * Z, columnwise over instruments."""

    basis: BasisSpec
    coef: np.ndarray
    centered: bool = False

    def scale(self, data: Dataset) -> np.ndarray:
        return build_design(data, self.basis) @ np.asarray(self.coef, dtype=float)

    def evaluate(self, data: Dataset) -> np.ndarray:
        return self.scale(data)[:, None] * data.z

    def is_linear_in_z(self) -> bool:
        return True


@dataclass(frozen=True)
class CustomIndex:
    """Arbitrary index: a callable on datasets or a basis over (Z, C).

    ``centered`` marks indices that satisfy E{e(Z,C)|C} = 0 by construction,
    in which case centering is a no-op.
    """

    evaluator: Callable[[Dataset], np.ndarray] | None = None
    basis: BasisSpec | None = None
    centered: bool = False
    linear_in_z: bool | None = None

    @classmethod
    def from_basis(cls, basis: BasisSpec) -> "CustomIndex":
        return cls(basis=basis, linear_in_z=basis.is_linear_in_z())

    def evaluate(self, data: Dataset) -> np.ndarray:
        if self.basis is not None:
            vals = build_design(data, self.basis)
        elif self.evaluator is not None:
            vals = np.asarray(self.evaluator(data), dtype=float)
        else:
            raise ValueError("custom index needs an evaluator or a basis")
        if vals.ndim == 1:
            vals = vals[:, None]
        return vals

    def is_linear_in_z(self) -> bool:
        if self.linear_in_z is not None:
            return self.linear_in_z
        if self.basis is not None:
            return self.basis.is_linear_in_z()
        return False


IndexFunction = RawInstruments | ScaledInstrument | CustomIndex
