"""
Structural equation model of self-recognition, estimated by maximum likelihood.

The model is written in LISREL all-y/x form. With A = (I - B)^-1 the implied
covariance of the observed vector (y first, then xi) is

    Syy  = Ly A (G Phi G' + Psi) A' Ly' + Theta
    Syx  = Ly A G Phi
    Sxx  = Phi

Parameters are fitted by minimizing n' * F_ML with n' = n - 1,

    F_ML = ln|Sigma| + tr(S Sigma^-1) - ln|S| - p,

using BFGS with central-difference (or closed-form) gradients and several
seeded starts. Standard errors come from the inverse numeric Hessian, fit is
judged against the independence baseline (CFI, TLI, RMSEA).

Features:
- Generic pattern-matrix model spec (NaN marks a free entry)
- Canonical self-recognition model with fixed variable orders
- Standardized solution and path table with Wald tests
- Monte Carlo data simulation from any admissible parameter set
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.optimize import minimize

from app.core.config import settings
from app.core.exceptions import (
    HessianNotPDError,
    InsufficientDataError,
    NonConvergenceError,
    NotPositiveDefiniteError,
    SingularStructureError,
    ValidationError,
    ZeroDfError,
    ZeroVarianceError,
)


logger = logging.getLogger(__name__)


Y_COLUMNS = ("rubric_Dimensions", "rubric_Movement", "rubric_Image", "rubric_Individual")
XI_COLUMNS = ("Memory", "Image", "Position", "Orientation", "Velocity", "Acceleration")
BINARY_COLUMNS = ("Memory", "Image")
CONTINUOUS_COLUMNS = ("Position", "Orientation", "Velocity", "Acceleration")
ETA_NAMES = (
    "PastPresentMemory",
    "DimensionAwareness",
    "MovementAwareness",
    "EnvironmentalAwareness",
    "SelfIdentification",
)

FREE = np.nan
MIN_ROWS = 50
PENALTY = 1e10
GRADIENT_TOL = 1e-6
OBJECTIVE_RTOL = 1e-10
_MATRIX_ORDER = ("lambda_y", "beta", "gamma", "phi", "psi", "theta")
_SYMMETRIC = ("phi", "psi", "theta")


@dataclass
class SemData:
    """Observed dataset: one row per scored iteration."""

    frame: pd.DataFrame

    @property
    def n(self) -> int:
        return len(self.frame)

    def covariance(self, columns: Sequence[str]) -> np.ndarray:
        missing = [c for c in columns if c not in self.frame.columns]
        if missing:
            raise ValidationError(f"Dataset lacks columns: {', '.join(missing)}", field="columns")
        return np.cov(self.frame[list(columns)].to_numpy(dtype=float), rowvar=False, ddof=1)


def zscore(data: SemData, columns: Sequence[str] = CONTINUOUS_COLUMNS) -> SemData:
    """Standardize continuous columns to mean 0 and population sd 1; binary columns are left alone."""
    frame = data.frame.copy()
    constant = [c for c in columns if c in frame and frame[c].std(ddof=0) == 0]
    if constant:
        raise ZeroVarianceError(constant)
    for column in columns:
        if column in frame:
            values = frame[column].astype(float)
            frame[column] = (values - values.mean()) / values.std(ddof=0)
    return SemData(frame)


@dataclass(frozen=True)
class ParamSpec:
    matrix: str
    row: int
    col: int
    label: str


@dataclass
class SemMatrices:
    lambda_y: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    theta: np.ndarray


@dataclass
class SemModel:
    """
    Pattern matrices of a LISREL model; NaN entries are free parameters,
    every other entry is fixed at its value.
    """

    y_names: Tuple[str, ...]
    eta_names: Tuple[str, ...]
    xi_names: Tuple[str, ...]
    lambda_y: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    params: List[ParamSpec] = field(init=False)

    def __post_init__(self):
        py, m, k = len(self.y_names), len(self.eta_names), len(self.xi_names)
        expected = {
            "lambda_y": (py, m), "beta": (m, m), "gamma": (m, k),
            "phi": (k, k), "psi": (m, m), "theta": (py, py),
        }
        for name, shape in expected.items():
            matrix = np.asarray(getattr(self, name), dtype=float)
            if matrix.shape != shape:
                raise ValidationError(f"{name} must have shape {shape}, got {matrix.shape}", field=name)
            if name in _SYMMETRIC:
                fixed = np.nan_to_num(matrix, nan=0.0)
                if not np.array_equal(np.isnan(matrix), np.isnan(matrix).T) or not np.allclose(fixed, fixed.T):
                    raise ValidationError(f"{name} pattern must be symmetric", field=name)
            setattr(self, name, matrix)
        if np.any(np.isnan(np.diag(self.beta))) or np.any(np.diag(self.beta) != 0):
            raise ValidationError("beta must have a zero diagonal", field="beta")
        self.params = self._index_parameters()

    def _label(self, matrix: str, i: int, j: int) -> str:
        if matrix == "lambda_y":
            return f"{self.eta_names[j]} -> {self.y_names[i]}"
        if matrix == "beta":
            return f"{self.eta_names[j]} -> {self.eta_names[i]}"
        if matrix == "gamma":
            return f"{self.xi_names[j]} -> {self.eta_names[i]}"
        names = {"phi": self.xi_names, "psi": self.eta_names, "theta": self.y_names}[matrix]
        return f"{names[i]} ~~ {names[j]}"

    def _index_parameters(self) -> List[ParamSpec]:
        specs = []
        for name in _MATRIX_ORDER:
            matrix = getattr(self, name)
            for i, j in zip(*np.where(np.isnan(matrix))):
                if name in _SYMMETRIC and j > i:
                    continue
                specs.append(ParamSpec(name, int(i), int(j), self._label(name, int(i), int(j))))
        return specs

    @property
    def observed_names(self) -> Tuple[str, ...]:
        return self.y_names + self.xi_names

    @property
    def p(self) -> int:
        return len(self.observed_names)

    @property
    def n_free(self) -> int:
        return len(self.params)

    @property
    def df(self) -> int:
        return self.p * (self.p + 1) // 2 - self.n_free

    def matrices(self, theta: np.ndarray) -> SemMatrices:
        """Pattern matrices with the free entries filled from ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_free,):
            raise ValidationError(f"Expected {self.n_free} parameters, got {theta.shape}", field="theta")
        filled = {name: np.nan_to_num(getattr(self, name), nan=0.0).copy() for name in _MATRIX_ORDER}
        for value, spec in zip(theta, self.params):
            filled[spec.matrix][spec.row, spec.col] = value
            if spec.matrix in _SYMMETRIC:
                filled[spec.matrix][spec.col, spec.row] = value
        return SemMatrices(**filled)

    def pack(self, matrices: SemMatrices) -> np.ndarray:
        return np.array([getattr(matrices, s.matrix)[s.row, s.col] for s in self.params])

    def start_values(self, S: np.ndarray) -> np.ndarray:
        """Paths at 0.1, Phi at the sample moments of xi, variances at half the observed scale."""
        py = len(self.y_names)
        s_xx = S[py:, py:]
        y_scale = float(np.mean(np.diag(S[:py, :py]))) if py else 1.0
        values = []
        for spec in self.params:
            if spec.matrix in ("beta", "gamma"):
                values.append(0.1)
            elif spec.matrix == "lambda_y":
                values.append(1.0)
            elif spec.matrix == "phi":
                values.append(s_xx[spec.row, spec.col])
            elif spec.matrix == "psi":
                values.append(0.5 * y_scale if spec.row == spec.col else 0.0)
            else:
                values.append(0.5 * S[spec.row, spec.row] if spec.row == spec.col else 0.0)
        return np.array(values, dtype=float)


def build_canonical_model() -> SemModel:
    """
    Canonical self-recognition model.

    PastPresentMemory is caused by all six exogenous inputs and feeds
    DimensionAwareness, MovementAwareness and SelfIdentification (the last
    path fixed at 1 to set its scale). EnvironmentalAwareness is caused by
    Image and feeds MovementAwareness, which also depends on
    SelfIdentification; DimensionAwareness feeds SelfIdentification. Every
    awareness construct has its rubric score as single indicator with
    loading 1 and no measurement error.
    """
    ppm, dim, mov, env, sid = range(5)
    image = XI_COLUMNS.index("Image")

    lambda_y = np.zeros((4, 5))
    for row, eta in enumerate((dim, mov, env, sid)):
        lambda_y[row, eta] = 1.0

    beta = np.zeros((5, 5))
    beta[dim, ppm] = FREE
    beta[mov, ppm] = FREE
    beta[sid, ppm] = 1.0
    beta[mov, env] = FREE
    beta[mov, sid] = FREE
    beta[sid, dim] = FREE

    gamma = np.zeros((5, 6))
    gamma[ppm, :] = FREE
    gamma[env, image] = FREE

    psi = np.zeros((5, 5))
    np.fill_diagonal(psi, FREE)

    return SemModel(
        y_names=Y_COLUMNS,
        eta_names=ETA_NAMES,
        xi_names=XI_COLUMNS,
        lambda_y=lambda_y,
        beta=beta,
        gamma=gamma,
        phi=np.full((6, 6), FREE),
        psi=psi,
        theta=np.zeros((4, 4)),
    )


def population_parameters(model: Optional[SemModel] = None) -> np.ndarray:
    """
    Documented parameter set of the canonical model used for synthetic data.

    PastPresentMemory reaches MovementAwareness both directly and through
    SelfIdentification, so the two paths are only told apart by the part of
    SelfIdentification that PastPresentMemory does not explain. The set keeps
    that part large (SelfIdentification disturbance 2.0 against 0.1 for
    PastPresentMemory) and the direct path strong, which holds every
    standardized path's asymptotic standard error near 0.04 at n = 657.

    Standardized paths: PPM->Dimension 0.67, PPM->Movement 0.59,
    Environment->Movement 0.17, SelfId->Movement 0.38, Dimension->SelfId 0.31,
    PPM->SelfId 0.52, Image->Environment 0.61, xi->PPM 0.53 / 0.35 / 0.35 /
    0.18 / 0.35 / 0.18.
    """
    model = model or build_canonical_model()
    ppm, dim, mov, env, sid = range(5)
    m = model.matrices(np.zeros(model.n_free))

    m.gamma[ppm] = [0.6, 0.4, 0.4, 0.2, 0.4, 0.2]
    m.gamma[env, XI_COLUMNS.index("Image")] = 0.6
    m.beta[dim, ppm] = 0.8
    m.beta[mov, ppm] = 0.9
    m.beta[mov, env] = 0.3
    m.beta[mov, sid] = 0.3
    m.beta[sid, dim] = 0.5

    phi = np.eye(6)
    position, velocity, acceleration = (XI_COLUMNS.index(c) for c in ("Position", "Velocity", "Acceleration"))
    phi[0, 1] = phi[1, 0] = 0.2
    phi[position, velocity] = phi[velocity, position] = 0.3
    phi[velocity, acceleration] = phi[acceleration, velocity] = 0.4
    m.phi = phi
    m.psi = np.diag([0.1, 1.0, 0.2, 0.6, 2.0])
    return model.pack(m)


def _structure_inverse(beta: np.ndarray) -> np.ndarray:
    identity = np.eye(beta.shape[0])
    i_minus_b = identity - beta
    if abs(np.linalg.det(i_minus_b)) < 1e-12:
        raise SingularStructureError()
    return np.linalg.solve(i_minus_b, identity)


def implied_from_matrices(m: SemMatrices) -> np.ndarray:
    a = _structure_inverse(m.beta)
    cov_eta = a @ (m.gamma @ m.phi @ m.gamma.T + m.psi) @ a.T
    s_yy = m.lambda_y @ cov_eta @ m.lambda_y.T + m.theta
    s_yx = m.lambda_y @ a @ m.gamma @ m.phi
    return np.block([[s_yy, s_yx], [s_yx.T, m.phi]])


def implied_covariance(model: SemModel, theta: np.ndarray) -> np.ndarray:
    """Model-implied covariance of (y, xi) at parameters ``theta``."""
    return implied_from_matrices(model.matrices(theta))


def _unit(shape: Tuple[int, int], i: int, j: int, symmetric: bool) -> np.ndarray:
    e = np.zeros(shape)
    e[i, j] = 1.0
    if symmetric:
        e[j, i] = 1.0
    return e


def implied_derivatives(model: SemModel, theta: np.ndarray) -> np.ndarray:
    """
    Closed-form derivatives of the implied covariance, one (p, p) slice per
    free parameter. A symmetric off-diagonal entry moves both of its cells.
    """
    m = model.matrices(theta)
    a = _structure_inverse(m.beta)
    c = m.gamma @ m.phi @ m.gamma.T + m.psi
    cov_eta = a @ c @ a.T
    ly = m.lambda_y
    py, p = len(model.y_names), model.p
    out = np.zeros((model.n_free, p, p))

    for k, spec in enumerate(model.params):
        symmetric = spec.matrix in _SYMMETRIC
        e = _unit(getattr(m, spec.matrix).shape, spec.row, spec.col, symmetric)
        d_yy = np.zeros((py, py))
        d_yx = np.zeros((py, p - py))
        d_xx = np.zeros((p - py, p - py))
        if spec.matrix == "lambda_y":
            d_yy = e @ cov_eta @ ly.T + ly @ cov_eta @ e.T
            d_yx = e @ a @ m.gamma @ m.phi
        elif spec.matrix == "beta":
            d_a = a @ e @ a
            d_eta = d_a @ c @ a.T
            d_yy = ly @ (d_eta + d_eta.T) @ ly.T
            d_yx = ly @ d_a @ m.gamma @ m.phi
        elif spec.matrix == "gamma":
            d_c = e @ m.phi @ m.gamma.T
            d_yy = ly @ a @ (d_c + d_c.T) @ a.T @ ly.T
            d_yx = ly @ a @ e @ m.phi
        elif spec.matrix == "phi":
            d_yy = ly @ a @ m.gamma @ e @ m.gamma.T @ a.T @ ly.T
            d_yx = ly @ a @ m.gamma @ e
            d_xx = e
        elif spec.matrix == "psi":
            d_yy = ly @ a @ e @ a.T @ ly.T
        else:
            d_yy = e
        out[k] = np.block([[d_yy, d_yx], [d_yx.T, d_xx]])
    return out


def ml_gradient(model: SemModel, S: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Gradient of F_ML: tr(W dSigma) with W = Sigma^-1 - Sigma^-1 S Sigma^-1."""
    sigma = implied_covariance(model, theta)
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("implied")
    inverse = np.linalg.inv(sigma)
    w = inverse - inverse @ S @ inverse
    return np.einsum("ij,kij->k", w, implied_derivatives(model, theta))


def ml_discrepancy(S: np.ndarray, sigma: np.ndarray) -> float:
    """Normal-theory ML discrepancy between sample S and implied Sigma."""
    for name, matrix in (("sample", S), ("implied", sigma)):
        try:
            np.linalg.cholesky(matrix)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(name)
    _, logdet_sigma = np.linalg.slogdet(sigma)
    _, logdet_s = np.linalg.slogdet(S)
    trace = float(np.trace(np.linalg.solve(sigma, S)))
    return float(logdet_sigma + trace - logdet_s - S.shape[0])


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6,
                     scheme: str = "central") -> np.ndarray:
    """Finite-difference gradient with per-coordinate relative steps."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    f0 = f(x) if scheme == "forward" else None
    for i in range(len(x)):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        if scheme == "central":
            grad[i] = (f(x + e) - f(x - e)) / (2.0 * h)
        elif scheme == "forward":
            grad[i] = (f(x + e) - f0) / h
        else:
            raise ValueError(f"Unknown scheme {scheme}")
    return grad


def numeric_hessian(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = len(x)
    h = step * np.maximum(1.0, np.abs(x))
    f0 = f(x)
    hess = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / (h[i] ** 2)
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return hess


@dataclass
class BaselineFit:
    chi2: float
    df: int


def baseline_model(S: np.ndarray, n: int) -> BaselineFit:
    """Independence model: all observed variables uncorrelated."""
    p = S.shape[0]
    discrepancy = ml_discrepancy(S, np.diag(np.diag(S)))
    return BaselineFit(chi2=(n - 1) * discrepancy, df=p * (p - 1) // 2)


@dataclass
class FitIndices:
    cfi: float
    tli: float
    rmsea: float


def fit_indices(chi2_m: float, df_m: int, chi2_b: float, df_b: int, n: int) -> FitIndices:
    """CFI, TLI (clamped to [0, 1]) and RMSEA."""
    if df_m <= 0 or df_b <= 0:
        raise ZeroDfError(df_m, df_b)
    d_m = max(chi2_m - df_m, 0.0)
    d_b = max(chi2_b - df_b, 0.0)
    denominator = max(d_m, d_b)
    cfi = 1.0 - d_m / denominator if denominator > 0 else 1.0

    baseline_ratio = chi2_b / df_b
    if baseline_ratio - 1.0 != 0:
        tli = (baseline_ratio - chi2_m / df_m) / (baseline_ratio - 1.0)
    else:
        tli = 1.0
    tli = min(max(tli, 0.0), 1.0)

    rmsea = math.sqrt(d_m / (df_m * (n - 1)))
    return FitIndices(cfi=cfi, tli=tli, rmsea=rmsea)


@dataclass
class StandardizedSolution:
    matrices: SemMatrices
    sd_eta: np.ndarray
    sd_xi: np.ndarray
    sd_y: np.ndarray


def standardize(model: SemModel, theta: np.ndarray) -> StandardizedSolution:
    """Rescale every variable to unit variance under the implied moments."""
    m = model.matrices(theta)
    a = _structure_inverse(m.beta)
    cov_eta = a @ (m.gamma @ m.phi @ m.gamma.T + m.psi) @ a.T
    sigma = implied_from_matrices(m)
    py = len(model.y_names)

    def _sd(variances: np.ndarray, which: str) -> np.ndarray:
        if np.any(variances <= 0):
            raise NotPositiveDefiniteError(which)
        return np.sqrt(variances)

    sd_eta = _sd(np.diag(cov_eta), "latent")
    sd_xi = _sd(np.diag(m.phi), "exogenous")
    sd_y = _sd(np.diag(sigma)[:py], "indicator")

    standardized = SemMatrices(
        lambda_y=m.lambda_y * sd_eta[None, :] / sd_y[:, None],
        beta=m.beta * sd_eta[None, :] / sd_eta[:, None],
        gamma=m.gamma * sd_xi[None, :] / sd_eta[:, None],
        phi=m.phi / np.outer(sd_xi, sd_xi),
        psi=m.psi / np.outer(sd_eta, sd_eta),
        theta=m.theta / np.outer(sd_y, sd_y),
    )
    return StandardizedSolution(standardized, sd_eta, sd_xi, sd_y)


@dataclass
class StartOutcome:
    start: int
    objective: float
    iterations: int
    gradient_norm: float
    converged: bool


@dataclass
class FitResult:
    """Estimates, inference and fit of one model on one dataset."""

    model: SemModel
    theta: np.ndarray
    se: Optional[np.ndarray]
    n: int
    discrepancy: float
    chi2: float
    df: int
    p_value: Optional[float]
    baseline: BaselineFit
    indices: Optional[FitIndices]
    standardized: StandardizedSolution
    converged: bool
    iterations: int
    gradient_norm: float
    starts: List[StartOutcome]
    warnings: List[str] = field(default_factory=list)

    @property
    def z(self) -> Optional[np.ndarray]:
        if self.se is None:
            return None
        return self.theta / self.se

    @property
    def p_values(self) -> Optional[np.ndarray]:
        z = self.z
        return None if z is None else 2.0 * stats.norm.sf(np.abs(z))

    def parameter_table(self) -> pd.DataFrame:
        """Free parameters with Wald tests."""
        rows = []
        z, p = self.z, self.p_values
        for i, spec in enumerate(self.model.params):
            rows.append({
                "label": spec.label,
                "matrix": spec.matrix,
                "estimate": float(self.theta[i]),
                "se": float(self.se[i]) if self.se is not None else None,
                "z": float(z[i]) if z is not None else None,
                "p_value": float(p[i]) if p is not None else None,
            })
        return pd.DataFrame(rows)

    def path_table(self) -> pd.DataFrame:
        """Structural paths (B and Gamma), free or fixed, with standardized estimates."""
        m = self.model.matrices(self.theta)
        std = self.standardized.matrices
        free_index = {(s.matrix, s.row, s.col): i for i, s in enumerate(self.model.params)}
        z, p = self.z, self.p_values
        rows = []
        for matrix, sources in (("gamma", self.model.xi_names), ("beta", self.model.eta_names)):
            pattern = getattr(self.model, matrix)
            for i, j in zip(*np.where(np.isnan(pattern) | (pattern != 0))):
                idx = free_index.get((matrix, int(i), int(j)))
                rows.append({
                    "source": sources[j],
                    "target": self.model.eta_names[i],
                    "matrix": matrix,
                    "estimate": float(getattr(m, matrix)[i, j]),
                    "std_estimate": float(getattr(std, matrix)[i, j]),
                    "se": float(self.se[idx]) if idx is not None and self.se is not None else None,
                    "z": float(z[idx]) if idx is not None and z is not None else None,
                    "p_value": float(p[idx]) if idx is not None and p is not None else None,
                    "fixed": idx is None,
                })
        return pd.DataFrame(rows)

    def standardized_path(self, source: str, target: str) -> float:
        table = self.path_table()
        row = table[(table["source"] == source) & (table["target"] == target)]
        if row.empty:
            raise KeyError(f"{source} -> {target}")
        return float(row["std_estimate"].iloc[0])

    def summary(self) -> Dict:
        return {
            "n": self.n,
            "free_parameters": self.model.n_free,
            "chi2": self.chi2,
            "df": self.df,
            "p_value": self.p_value,
            "discrepancy": self.discrepancy,
            "baseline_chi2": self.baseline.chi2,
            "baseline_df": self.baseline.df,
            "cfi": self.indices.cfi if self.indices else None,
            "tli": self.indices.tli if self.indices else None,
            "rmsea": self.indices.rmsea if self.indices else None,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "starts": [s.__dict__ for s in self.starts],
            "warnings": list(self.warnings),
        }


class _ConvergenceTracker:
    """BFGS callback that stops once the objective stops changing."""

    def __init__(self, objective: Callable[[np.ndarray], float], rel_tol: float = OBJECTIVE_RTOL):
        self.objective = objective
        self.rel_tol = rel_tol
        self.previous: Optional[float] = None
        self.iterations = 0
        self.stalled = False

    def __call__(self, xk: np.ndarray) -> None:
        self.iterations += 1
        value = self.objective(xk)
        if self.previous is not None:
            change = abs(self.previous - value) / max(abs(self.previous), 1e-12)
            if change < self.rel_tol:
                self.stalled = True
                raise StopIteration
        self.previous = value


def _check_data(model: SemModel, data: SemData) -> np.ndarray:
    required = max(MIN_ROWS, model.n_free + 1)
    if data.n < required:
        raise InsufficientDataError(data.n, required)
    S = data.covariance(model.observed_names)
    constant = [name for name, var in zip(model.observed_names, np.diag(S)) if var <= 1e-12]
    if constant:
        raise ZeroVarianceError(constant)
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("sample")
    return S


def _jittered_start(model: SemModel, theta0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    start = theta0.copy()
    for i, spec in enumerate(model.params):
        if spec.matrix in ("beta", "gamma", "lambda_y"):
            start[i] += rng.normal(0.0, 0.2)
        elif spec.row == spec.col and spec.matrix != "phi":
            start[i] *= math.exp(rng.normal(0.0, 0.2))
    return start


def _minimize_from(objective: Callable[[np.ndarray], float], gradient: Callable[[np.ndarray], np.ndarray],
                   start: np.ndarray, max_iterations: int, n_free: int,
                   restarts: int = 3) -> Tuple[np.ndarray, float, int, float, bool]:
    """
    BFGS from one start. Converged means gradient max-norm below GRADIENT_TOL
    or a relative change in the objective below OBJECTIVE_RTOL, either between
    iterates or between a run and its restart from the same point.
    """
    x, fun = np.asarray(start, dtype=float), math.inf
    iterations, grad_norm, converged = 0, math.inf, False
    for _ in range(restarts + 1):
        tracker = _ConvergenceTracker(objective, OBJECTIVE_RTOL)
        result = minimize(
            objective, x, jac=gradient, method="BFGS", callback=tracker,
            options={"gtol": GRADIENT_TOL, "maxiter": max_iterations},
        )
        previous, x, fun = fun, result.x, float(result.fun)
        iterations += tracker.iterations
        grad_norm = float(np.max(np.abs(gradient(x)))) if n_free else 0.0
        settled = math.isfinite(previous) and abs(previous - fun) / max(abs(previous), 1e-12) < OBJECTIVE_RTOL
        converged = bool(result.success or tracker.stalled or grad_norm < GRADIENT_TOL or settled)
        if converged or iterations >= max_iterations:
            break
    return x, fun, iterations, grad_norm, converged


def fit(model: SemModel, data: SemData, n_starts: Optional[int] = None, seed: int = 0,
        max_iterations: Optional[int] = None, analytic_gradient: Optional[bool] = None) -> FitResult:
    """
    Maximum-likelihood fit of ``model`` to ``data``.

    The best of ``n_starts`` seeded starts is kept. Raises NonConvergenceError
    when even the best start did not converge; a singular Hessian only drops
    the standard errors and is recorded in ``warnings``. Gradients are
    central differences unless ``analytic_gradient`` (or SEM_ANALYTIC_GRADIENT)
    selects the closed form.
    """
    n_starts = n_starts or settings.sem_multi_starts
    if analytic_gradient is None:
        analytic_gradient = settings.sem_analytic_gradient
    max_iterations = max_iterations or settings.sem_max_iterations
    S = _check_data(model, data)
    n_prime = data.n - 1

    def objective(theta: np.ndarray) -> float:
        try:
            return n_prime * ml_discrepancy(S, implied_covariance(model, theta))
        except (NotPositiveDefiniteError, SingularStructureError):
            return PENALTY

    def gradient(theta: np.ndarray) -> np.ndarray:
        if analytic_gradient:
            try:
                return n_prime * ml_gradient(model, S, theta)
            except (NotPositiveDefiniteError, SingularStructureError):
                pass
        return numeric_gradient(objective, theta)

    rng = np.random.default_rng(seed)
    theta0 = model.start_values(S)
    starts = [theta0]
    attempts = 0
    while len(starts) < n_starts and attempts < 100 * n_starts:
        attempts += 1
        candidate = _jittered_start(model, theta0, rng)
        if objective(candidate) < PENALTY:
            starts.append(candidate)

    outcomes: List[StartOutcome] = []
    best_x, best_f = None, math.inf
    for index, start in enumerate(starts):
        x, fun, iterations, grad_norm, converged = _minimize_from(
            objective, gradient, start, max_iterations, model.n_free
        )
        outcomes.append(StartOutcome(index, fun, iterations, grad_norm, converged))
        logger.debug(f"Start {index}: F={fun:.6f} iterations={iterations} converged={converged}")
        if fun < best_f:
            best_x, best_f = x, fun

    best = min(outcomes, key=lambda o: o.objective)
    if not best.converged or best_f >= PENALTY:
        raise NonConvergenceError(best.iterations, best.gradient_norm, best_f)

    warnings: List[str] = []
    se = None
    try:
        se = _standard_errors(objective, best_x)
    except HessianNotPDError as e:
        warnings.append(e.message)
        logger.warning(e.message)

    chi2 = best_f
    df = model.df
    baseline = baseline_model(S, data.n)
    indices = None
    if df > 0:
        indices = fit_indices(chi2, df, baseline.chi2, baseline.df, data.n)
    else:
        warnings.append("Model is saturated; fit indices are not defined")

    result = FitResult(
        model=model,
        theta=best_x,
        se=se,
        n=data.n,
        discrepancy=chi2 / n_prime,
        chi2=chi2,
        df=df,
        p_value=float(stats.chi2.sf(chi2, df)) if df > 0 else None,
        baseline=baseline,
        indices=indices,
        standardized=standardize(model, best_x),
        converged=True,
        iterations=best.iterations,
        gradient_norm=best.gradient_norm,
        starts=outcomes,
        warnings=warnings,
    )
    logger.info(
        f"Fit converged: chi2={chi2:.3f} df={df} n={data.n}"
        + (f" CFI={indices.cfi:.3f} TLI={indices.tli:.3f} RMSEA={indices.rmsea:.4f}" if indices else ""),
        extra={"chi2": chi2, "df": df, "n": data.n},
    )
    return result


def _standard_errors(objective: Callable[[np.ndarray], float], theta: np.ndarray) -> np.ndarray:
    """Asymptotic SEs: covariance is 2 H^-1 for H the Hessian of n' * F."""
    hessian = numeric_hessian(objective, theta)
    hessian = (hessian + hessian.T) / 2.0
    eigenvalues = np.linalg.eigvalsh(hessian)
    if np.any(eigenvalues <= 0) or not np.all(np.isfinite(hessian)):
        raise HessianNotPDError()
    covariance = 2.0 * np.linalg.inv(hessian)
    return np.sqrt(np.diag(covariance))


def simulate_data(model: SemModel, theta: np.ndarray, n: int,
                  rng: Optional[np.random.Generator] = None) -> SemData:
    """Draw ``n`` rows from the structural equations with normal disturbances."""
    rng = rng or np.random.default_rng()
    m = model.matrices(theta)
    a = _structure_inverse(m.beta)

    def _draw(cov: np.ndarray) -> np.ndarray:
        if not np.any(cov):
            return np.zeros((n, cov.shape[0]))
        return rng.multivariate_normal(np.zeros(cov.shape[0]), cov, size=n, method="eigh")

    xi = _draw(m.phi)
    zeta = _draw(m.psi)
    eps = _draw(m.theta)
    eta = (xi @ m.gamma.T + zeta) @ a.T
    y = eta @ m.lambda_y.T + eps
    frame = pd.DataFrame(np.hstack([y, xi]), columns=list(model.observed_names))
    return SemData(frame)
