"""Penalized negative-binomial regression with a log link and exposure offset.

The model for subject i with arm A, covariates x (already standardized),
events y, and follow-up T is

    E(y) = exp(b0 + ba*A + sum_j bj*x_j + sum_j baj*A*x_j + ln T)

with variance mu + mu^2/theta.  Coefficients are estimated by iteratively
reweighted least squares on the working response, maximizing the
log-likelihood minus an l2 penalty ``lam * sum(beta^2)`` over every
coefficient except the intercept.  Each step is halved until the penalized
objective does not increase, so the penalized deviance is non-increasing
across iterations.  The dispersion is profiled on a log scale and the two
updates are alternated to a joint fixed point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from .errors import (
    DispersionError,
    FoldingError,
    NumericalError,
)
from .trial_data import ScalingParams, TrialDataset

__all__ = [
    "DesignMatrix",
    "FitMeta",
    "FittedBenefitModel",
    "CvResult",
    "build_design_matrix",
    "fit",
    "fit_alternating",
    "estimate_dispersion",
    "default_lambda_grid",
    "cross_validate_lambda",
    "predict_rate",
]

THETA_MIN = 1e-3
THETA_MAX = 1e8
# Above this the variance term mu^2/theta is numerically irrelevant for
# unit-scale rates; the profile likelihood is a plateau and chasing its
# jitter would keep the alternation loop spinning.
THETA_PLATEAU = 1e5

_MAX_ITER = 100
_COEF_TOL = 1e-8
_THETA_RTOL = 1e-4


@dataclass
class DesignMatrix:
    """Fixed design for the interaction model.

    Columns are ordered [intercept, treatment, x_1..x_m, A*x_1..A*x_m];
    the offset is ln(T) and is never penalized or estimated.
    """

    X: np.ndarray
    offset: np.ndarray
    response: np.ndarray
    column_names: list[str]
    scaling: ScalingParams

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64)
        self.response = np.asarray(self.response, dtype=np.float64)
        n, p = self.X.shape
        if p % 2 != 0 or p < 4:
            raise ValueError("design must have 2m+2 columns with m >= 1")
        m = (p - 2) // 2
        if len(self.column_names) != p:
            raise ValueError("column_names must match column count")
        if self.offset.shape != (n,) or self.response.shape != (n,):
            raise ValueError("offset and response must have one entry per row")
        if not np.array_equal(self.X[:, 2 + m :], self.X[:, 1:2] * self.X[:, 2 : 2 + m]):
            raise ValueError("interaction columns must equal treatment * main effect")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return (self.X.shape[1] - 2) // 2

    @property
    def treatment(self) -> np.ndarray:
        return self.X[:, 1]

    def subset(self, idx: np.ndarray) -> "DesignMatrix":
        return DesignMatrix(
            X=self.X[idx],
            offset=self.offset[idx],
            response=self.response[idx],
            column_names=self.column_names,
            scaling=self.scaling,
        )


@dataclass
class FitMeta:
    iterations: int
    converged: bool
    penalized_deviance: float
    deviance_path: tuple[float, ...]
    dispersion_rounds: int = 0


@dataclass
class FittedBenefitModel:
    """Coefficients plus everything needed to score new subjects."""

    coefficients: np.ndarray
    coefficient_names: list[str]
    dispersion: float
    penalty: float
    scaling: ScalingParams
    fit_meta: FitMeta

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.dispersion <= 0:
            raise ValueError("dispersion must be positive")
        if self.penalty < 0:
            raise ValueError("penalty must be non-negative")

    @property
    def m(self) -> int:
        return (self.coefficients.shape[0] - 2) // 2

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def treatment_effect(self) -> float:
        return float(self.coefficients[1])

    @property
    def main_effects(self) -> np.ndarray:
        return self.coefficients[2 : 2 + self.m]

    @property
    def interactions(self) -> np.ndarray:
        return self.coefficients[2 + self.m :]

    def to_dict(self) -> dict:
        # coefficients as an ordered list: design order is part of the
        # contract and must survive key-sorted serialization
        return {
            "coefficients": [
                {"name": name, "value": float(v)}
                for name, v in zip(self.coefficient_names, self.coefficients)
            ],
            "dispersion": float(self.dispersion),
            "penalty": float(self.penalty),
            "scaling_means": [float(v) for v in self.scaling.means],
            "scaling_sds": [float(v) for v in self.scaling.sds],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FittedBenefitModel":
        entries = payload["coefficients"]
        return cls(
            coefficients=np.array([e["value"] for e in entries]),
            coefficient_names=[e["name"] for e in entries],
            dispersion=float(payload["dispersion"]),
            penalty=float(payload["penalty"]),
            scaling=ScalingParams(
                means=np.array(payload["scaling_means"]),
                sds=np.array(payload["scaling_sds"]),
            ),
            fit_meta=FitMeta(0, True, math.nan, ()),
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "FittedBenefitModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class CvResult:
    """Cross-validated penalty path: descending grid, loss, and choice."""

    lambda_grid: np.ndarray
    cv_error: np.ndarray
    cv_se: np.ndarray
    chosen_lambda: float
    folds: int
    seed: int

    def __post_init__(self):
        grid = np.asarray(self.lambda_grid, dtype=np.float64)
        if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
            raise ValueError("lambda grid must be positive and strictly descending")
        if not np.all(np.isfinite(self.cv_error)):
            raise ValueError("cv errors must be finite")
        if self.chosen_lambda not in grid:
            raise ValueError("chosen lambda must come from the grid")


def build_design_matrix(
    d: TrialDataset, scaling: ScalingParams | None = None
) -> DesignMatrix:
    """Assemble the interaction design from a standardized dataset.

    ``scaling`` should be the parameters returned by ``standardize`` so
    the fitted model can map raw covariates from new samples; omitted,
    an identity scaling is recorded.
    """
    a = d.treatment.astype(np.float64)
    X = np.column_stack(
        [
            np.ones(d.n),
            a,
            d.covariates,
            a[:, None] * d.covariates,
        ]
    )
    names = (
        ["intercept", "treatment"]
        + list(d.covariate_names)
        + [f"treatment:{c}" for c in d.covariate_names]
    )
    return DesignMatrix(
        X=X,
        offset=np.log(d.time),
        response=d.events.astype(np.float64),
        column_names=names,
        scaling=scaling if scaling is not None else ScalingParams.identity(d.m),
    )


def _neg_loglik_beta(eta_full, y, theta):
    """-loglik up to beta-independent constants; eta_full includes offset."""
    log_theta_mu = np.logaddexp(math.log(theta), eta_full)
    return -float(np.sum(y * eta_full - (y + theta) * log_theta_mu))


def _deviance_constant(y, theta):
    ypos = y[y > 0]
    c = 2.0 * float(np.sum(ypos * np.log(ypos) - (ypos + theta) * np.log(ypos + theta)))
    y0 = int(np.sum(y == 0))
    c += 2.0 * y0 * float(-theta * math.log(theta))
    return c


def _start_coefficients(design: DesignMatrix) -> np.ndarray:
    beta = np.zeros(design.p)
    total = design.response.sum()
    exposure = np.exp(design.offset).sum()
    beta[0] = math.log((total + 0.5) / exposure) if total > 0 else math.log(0.5 / exposure)
    return beta


def fit(
    design: DesignMatrix,
    lam: float,
    theta: float,
    beta_start: np.ndarray | None = None,
    max_iter: int = _MAX_ITER,
    tol: float = _COEF_TOL,
) -> FittedBenefitModel:
    """Estimate coefficients for a fixed penalty and fixed dispersion.

    Convergence is declared when the largest absolute coefficient change
    falls below ``tol``; otherwise the model is returned flagged
    non-converged after ``max_iter`` iterations.

    Raises
    ------
    NumericalError
        If the penalized normal equations are singular or produce
        non-finite coefficients (e.g. separation or collinearity).
    """
    if lam < 0:
        raise ValueError("penalty must be non-negative")
    if theta <= 0:
        raise ValueError("dispersion must be positive")
    X, y, offset = design.X, design.response, design.offset
    pen = np.ones(design.p)
    pen[0] = 0.0  # intercept unpenalized
    beta = _start_coefficients(design) if beta_start is None else beta_start.astype(np.float64).copy()

    def objective(b):
        return _neg_loglik_beta(X @ b + offset, y, theta) + lam * float(np.sum(pen * b * b))

    obj = objective(beta)
    if not math.isfinite(obj):
        raise NumericalError("starting point has non-finite objective")
    obj_path = [obj]
    converged = False
    iterations = 0
    diag = np.diag_indices(design.p)
    ridge_diag = 2.0 * lam * pen

    for iterations in range(1, max_iter + 1):
        eta_lin = X @ beta
        eta_full = eta_lin + offset
        mu = np.exp(eta_full)
        w = mu * theta / (theta + mu)
        score_resid = (y - mu) * theta / (theta + mu)
        A = (X * w[:, None]).T @ X
        A[diag] += ridge_diag
        rhs = X.T @ (w * eta_lin + score_resid)
        try:
            beta_new = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"singular penalized system (cond~{np.linalg.cond(A):.3e})"
            ) from exc
        if not np.all(np.isfinite(beta_new)):
            raise NumericalError(
                f"non-finite update (cond~{np.linalg.cond(A):.3e})"
            )

        direction = beta_new - beta
        step = 1.0
        candidate = beta_new
        cand_obj = objective(candidate)
        halvings = 0
        while cand_obj > obj and halvings < 40:
            step *= 0.5
            candidate = beta + step * direction
            cand_obj = objective(candidate)
            halvings += 1
        if cand_obj > obj:
            converged = True  # no descent direction left at fp resolution
            break
        delta = float(np.max(np.abs(candidate - beta)))
        beta = candidate
        obj = cand_obj
        obj_path.append(obj)
        if delta < tol:
            converged = True
            break

    dev_const = _deviance_constant(y, theta)
    deviance_path = tuple(2.0 * v + dev_const for v in obj_path)
    meta = FitMeta(
        iterations=iterations,
        converged=converged,
        penalized_deviance=deviance_path[-1],
        deviance_path=deviance_path,
    )
    return FittedBenefitModel(
        coefficients=beta,
        coefficient_names=list(design.column_names),
        dispersion=theta,
        penalty=lam,
        scaling=design.scaling,
        fit_meta=meta,
    )


def _profile_loglik(y, eta_full, theta):
    log_theta = math.log(theta)
    log_theta_mu = np.logaddexp(log_theta, eta_full)
    return float(
        np.sum(
            gammaln(y + theta)
            - gammaln(theta)
            + theta * log_theta
            - (y + theta) * log_theta_mu
            + y * eta_full
        )
    )


def estimate_dispersion(
    design: DesignMatrix, coefficients: np.ndarray, xatol: float = 1e-6
) -> float:
    """Profile the dispersion at fixed fitted means.

    Maximizes the likelihood in theta over [1e-3, 1e8] on the log scale
    (``xatol`` is the log-scale search tolerance).  A likelihood still
    climbing at the upper bound (no overdispersion beyond Poisson)
    returns the bound itself.

    Raises
    ------
    DispersionError
        If every response is zero, in which case no dispersion is
        identifiable.
    """
    y = design.response
    if y.sum() == 0:
        raise DispersionError("dispersion undefined: all event counts are zero")
    eta_full = design.X @ np.asarray(coefficients, dtype=np.float64) + design.offset
    if not np.all(np.isfinite(eta_full)):
        raise NumericalError("coefficients produce non-finite linear predictor")

    lo, hi = math.log(THETA_MIN), math.log(THETA_MAX)
    res = minimize_scalar(
        lambda lt: -_profile_loglik(y, eta_full, math.exp(lt)),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": xatol},
    )
    theta_hat = math.exp(res.x)
    ll_hat = -res.fun
    ll_hi = _profile_loglik(y, eta_full, THETA_MAX)
    if ll_hi >= ll_hat - 1e-8 * (1.0 + abs(ll_hat)):
        return THETA_MAX
    return theta_hat


def fit_alternating(
    design: DesignMatrix,
    lam: float,
    theta_init: float = 1.0,
    beta_start: np.ndarray | None = None,
    max_rounds: int = 50,
    theta_rtol: float = _THETA_RTOL,
    max_iter: int = _MAX_ITER,
    tol: float = _COEF_TOL,
    profile_xatol: float = 1e-6,
) -> FittedBenefitModel:
    """Alternate coefficient fitting with dispersion profiling.

    Repeats fit -> profile-theta until theta moves by less than
    ``theta_rtol`` relative, then returns the model from the final
    coefficient fit with the settled dispersion attached.  Once theta
    sits on the Poisson plateau (both consecutive values above
    ``THETA_PLATEAU``) the alternation stops: up there the profile is
    flat and its jitter carries no information.
    """
    theta = theta_init
    beta = beta_start
    model = None
    rounds = 0
    settled = False
    # The profile search must resolve theta finer than the alternation
    # tolerance, or the loop can oscillate inside optimizer noise.
    profile_xatol = min(profile_xatol, theta_rtol / 10.0)
    for rounds in range(1, max_rounds + 1):
        model = fit(design, lam, theta, beta_start=beta, max_iter=max_iter, tol=tol)
        beta = model.coefficients
        theta_new = estimate_dispersion(design, beta, xatol=profile_xatol)
        if abs(theta_new - theta) <= theta_rtol * theta or (
            theta >= THETA_PLATEAU and theta_new >= THETA_PLATEAU
        ):
            theta = theta_new
            settled = True
            break
        theta = theta_new
    assert model is not None
    model.dispersion = theta
    model.fit_meta.dispersion_rounds = rounds
    if not settled:
        model.fit_meta.converged = False
    return model


def default_lambda_grid(
    design: DesignMatrix, size: int = 100, min_ratio: float = 1e-4
) -> np.ndarray:
    """Descending log-spaced penalty grid anchored at the null-model score.

    The top of the grid is the largest absolute component of the
    unpenalized score at the intercept-only fit, the scale at which all
    penalized coefficients are crushed toward zero; the grid descends by
    ``min_ratio`` over ``size`` log-spaced values.
    """
    beta0 = _start_coefficients(design)
    mu0 = np.exp(design.X @ beta0 + design.offset)
    try:
        theta0 = estimate_dispersion(design, beta0)
    except DispersionError:
        theta0 = 1.0
    resid = (design.response - mu0) * theta0 / (theta0 + mu0)
    score = design.X[:, 1:].T @ resid
    lam_max = max(float(np.max(np.abs(score))), 1e-8)
    return np.geomspace(lam_max, lam_max * min_ratio, size)


def _held_out_loss(model, design_ho, kind):
    mu = np.exp(design_ho.X @ model.coefficients + design_ho.offset)
    y = design_ho.response
    if kind == "squared":
        return (y - mu) ** 2
    if kind == "deviance":
        theta = model.dispersion
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
        return 2.0 * (term - (y + theta) * np.log((y + theta) / (mu + theta)))
    raise ValueError(f"unknown cv loss {kind!r}")


def _stratified_folds(treatment: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Arm-stratified fold labels; retries seeds until every training
    split contains both arms, erroring after 10 attempts."""
    n = treatment.shape[0]
    for attempt in range(10):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(attempt,)))
        fold_id = np.empty(n, dtype=np.int64)
        for arm in (0, 1):
            idx = np.flatnonzero(treatment == arm)
            perm = rng.permutation(idx)
            fold_id[perm] = np.arange(perm.size) % folds
        ok = all(
            np.any(treatment[fold_id != f] == 0) and np.any(treatment[fold_id != f] == 1)
            for f in range(folds)
        )
        if ok:
            return fold_id
    raise FoldingError(
        "could not build folds with both arms in every training split"
    )


def cross_validate_lambda(
    design: DesignMatrix,
    folds: int,
    grid: Sequence[float] | np.ndarray,
    seed: int,
    loss: str = "squared",
    theta_init: float = 1.0,
    fold_tol: float = 1e-6,
    fold_theta_rtol: float = 1e-2,
) -> CvResult:
    """Pick the penalty that minimizes off-sample prediction loss.

    Folds are assigned by a seeded permutation stratified by arm.  For
    each penalty, the model (dispersion re-profiled on the training
    folds) is fitted on the other K-1 folds and scored on the held-out
    subjects; the per-penalty error is the mean over all held-out
    subjects and its SE comes from the spread of fold means.  Ties break
    toward the larger penalty.

    Fold fits use relaxed convergence tolerances (``fold_tol`` on
    coefficients, ``fold_theta_rtol`` on the dispersion alternation):
    penalty selection does not need final-fit precision, and the choice
    stays deterministic.
    """
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if design.n < folds:
        raise ValueError("need at least one subject per fold")
    grid = np.sort(np.asarray(grid, dtype=np.float64))[::-1]
    if grid.size == 0:
        raise ValueError("empty penalty grid")
    if np.any(grid <= 0):
        raise ValueError("penalties must be positive")

    fold_id = _stratified_folds(design.treatment.astype(np.int64), folds, seed)
    total = np.zeros(grid.size)
    fold_means = np.zeros((folds, grid.size))
    for f in range(folds):
        ho = np.flatnonzero(fold_id == f)
        tr = np.flatnonzero(fold_id != f)
        design_tr = design.subset(tr)
        design_ho = design.subset(ho)
        # Dispersion is profiled on the training split once, at the top
        # of the path; coefficient fits are then warm-started down the
        # descending grid at that fixed dispersion.
        model = fit_alternating(
            design_tr,
            float(grid[0]),
            theta_init=theta_init,
            theta_rtol=fold_theta_rtol,
            tol=fold_tol,
            profile_xatol=5e-4,
        )
        theta_f = model.dispersion
        beta_warm = model.coefficients
        for g, lam in enumerate(grid):
            if g > 0:
                model = fit(design_tr, float(lam), theta_f, beta_start=beta_warm, tol=fold_tol)
                beta_warm = model.coefficients
            losses = _held_out_loss(model, design_ho, loss)
            total[g] += float(losses.sum())
            fold_means[f, g] = float(losses.mean())
    cv_error = total / design.n
    cv_se = fold_means.std(axis=0, ddof=1) / math.sqrt(folds)
    chosen = float(grid[int(np.argmin(cv_error))])
    return CvResult(
        lambda_grid=grid,
        cv_error=cv_error,
        cv_se=cv_se,
        chosen_lambda=chosen,
        folds=folds,
        seed=seed,
    )


def predict_rate(
    model: FittedBenefitModel,
    covariates: np.ndarray,
    treatment: int,
    time: float | np.ndarray = 1.0,
) -> float | np.ndarray:
    """Expected event count for raw (unstandardized) covariates.

    ``covariates`` may be a single length-m vector or a (k, m) matrix;
    the model's stored scaling maps them into the training space.
    """
    x = np.asarray(covariates, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.m:
        raise ValueError(
            f"expected {model.m} covariates, got {x.shape[1]}"
        )
    if treatment not in (0, 1):
        raise ValueError("treatment must be 0 or 1")
    z = model.scaling.transform(x)
    eta = model.intercept + z @ model.main_effects
    if treatment == 1:
        eta = eta + model.treatment_effect + z @ model.interactions
    rate = np.exp(eta) * np.asarray(time, dtype=np.float64)
    return float(rate[0]) if single and np.ndim(rate) == 1 and rate.shape[0] == 1 else rate
