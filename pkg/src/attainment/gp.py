"""Exact Gaussian-process regression of binary trial outcomes.

The regressor works in unit-cube coordinates (see :func:`attainment.core.normalize`)
with an ARD squared-exponential kernel and a constant prior mean equal to the
empirical success rate.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from .core import N_DIMS, DatasetError, DomainBounds, FeatureParameterPoint, SchemaVersionError, records_to_arrays

MODEL_SCHEMA = "attainment-model-v1"

LENGTHSCALE_RANGE = (1e-3, 1e3)
SIGNAL_VARIANCE_RANGE = (1e-3, 1e2)
NOISE_FLOOR = 1e-6
NOISE_CEILING = 1.0
JITTER_LIMIT = 1e-2


class FitError(RuntimeError):
    """Numerical failure while fitting or evaluating the GP."""


@dataclass(frozen=True)
class GpHyperparams:
    lengthscales: tuple
    signal_variance: float = 1.0
    noise_variance: float = 1e-2

    def __post_init__(self):
        ls = tuple(float(v) for v in np.broadcast_to(self.lengthscales, (N_DIMS,)))
        lo, hi = LENGTHSCALE_RANGE
        if not all(math.isfinite(v) and lo <= v <= hi for v in ls):
            raise ValueError(f"lengthscales must lie in [{lo}, {hi}], got {ls}")
        if not (math.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError("signal_variance must be positive and finite")
        if not (math.isfinite(self.noise_variance) and self.noise_variance >= NOISE_FLOOR):
            raise ValueError(f"noise_variance must be >= {NOISE_FLOOR}")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    def to_log_vector(self) -> np.ndarray:
        return np.log(np.r_[self.lengthscales, self.signal_variance, self.noise_variance])

    @classmethod
    def from_log_vector(cls, theta) -> "GpHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(tuple(np.exp(theta[:N_DIMS])), float(np.exp(theta[N_DIMS])), float(np.exp(theta[N_DIMS + 1])))

    def with_noise(self, noise_variance) -> "GpHyperparams":
        return GpHyperparams(self.lengthscales, self.signal_variance, noise_variance)

    def to_json(self) -> dict:
        return {
            "lengthscales": list(self.lengthscales),
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }


@dataclass(frozen=True)
class OptConfig:
    n_starts: int = 8
    max_iter: int = 200
    seed: int = 0


def rbf_kernel(a, b, h: GpHyperparams) -> float:
    """Covariance between two unit-cube points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scaled = (a - b) / np.asarray(h.lengthscales)
    return h.signal_variance * math.exp(-0.5 * float(scaled @ scaled))


def gram_matrix(A, B, h: GpHyperparams) -> np.ndarray:
    """Cross-covariance matrix ``K[i, j] = rbf_kernel(A[i], B[j])``."""
    ls = np.asarray(h.lengthscales)
    A = np.atleast_2d(A) / ls
    B = np.atleast_2d(B) / ls
    sq = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return h.signal_variance * np.exp(-0.5 * sq)


def _exact_gram(U, h: GpHyperparams) -> np.ndarray:
    # pairwise differences instead of the expanded square keep the diagonal exact
    diff = (U[:, None, :] - U[None, :, :]) / np.asarray(h.lengthscales)
    return h.signal_variance * np.exp(-0.5 * np.sum(diff**2, axis=-1))


def _log_bounds() -> list[tuple[float, float]]:
    return (
        [tuple(np.log(LENGTHSCALE_RANGE))] * N_DIMS
        + [tuple(np.log(SIGNAL_VARIANCE_RANGE))]
        + [(math.log(NOISE_FLOOR), math.log(NOISE_CEILING))]
    )


class AttainmentGP(RegressorMixin, BaseEstimator):
    """GP regressor on 0/1 task outcomes over the feature-parameter space.

    Parameters
    ----------
    bounds : DomainBounds, optional
        Domain used for normalization. Defaults to ``DomainBounds()``.
    n_starts : int, default=8
        Number of optimizer starts for the log marginal likelihood.
        The first start uses fixed defaults, the rest are drawn
        log-uniformly from ``random_state``.
    max_iter : int, default=200
        L-BFGS iteration cap per start.
    random_state : int, default=0
        Seed for the random starts.
    hyperparams : GpHyperparams, optional
        If given, hyperparameter optimization is skipped and these are used.

    Attributes
    ----------
    X_train_ : ndarray of shape (n_samples, 5)
        Training inputs in raw units.
    U_train_ : ndarray of shape (n_samples, 5)
        Training inputs in unit-cube coordinates.
    y_train_ : ndarray of shape (n_samples,)
    prior_mean_ : float
        Empirical success rate of the training targets.
    hyperparams_ : GpHyperparams
        Fitted hyperparameters; ``noise_variance`` includes any jitter escalation.
    L_ : ndarray
        Lower Cholesky factor of ``K + noise_variance * I``.
    alpha_ : ndarray
        ``(K + noise_variance * I)^-1 (y - prior_mean)``.
    degenerate_ : bool
        True when every training label is identical.
    log_marginal_likelihood_value_ : float
    """

    def __init__(self, bounds=None, n_starts=8, max_iter=200, random_state=0, hyperparams=None):
        self.bounds = bounds
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.random_state = random_state
        self.hyperparams = hyperparams

    @property
    def bounds_(self) -> DomainBounds:
        return self.bounds if self.bounds is not None else DomainBounds()

    def fit(self, X, y):
        X = check_array(X, dtype=float, ensure_min_samples=1)
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[1] != N_DIMS:
            raise ValueError(f"expected {N_DIMS} features, got {X.shape[1]}")
        if len(y) != len(X):
            raise ValueError("X and y have inconsistent lengths")
        bounds = self.bounds_
        bounds.check(X)

        self.X_train_ = X.copy()
        self.U_train_ = (X - bounds.lo_array) / bounds.span
        self.y_train_ = y.copy()
        self.prior_mean_ = float(np.mean(y))
        self.degenerate_ = bool(np.all(y == y[0]))
        if self.degenerate_:
            warnings.warn("degenerate: constant labels; posterior mean equals the label everywhere")

        if self.hyperparams is not None:
            h = self.hyperparams
        elif self.degenerate_:
            h = self._default_start()
        else:
            h = self._optimize()
        self._factorize(h)
        self.log_marginal_likelihood_value_ = self.log_marginal_likelihood()
        return self

    # -- hyperparameter search -------------------------------------------------------

    def _default_start(self) -> GpHyperparams:
        var = float(np.var(self.y_train_)) if len(self.y_train_) > 1 else 0.25
        return GpHyperparams((0.5,) * N_DIMS, max(var, 0.05), 0.05)

    def _objective(self, theta, sq_dists, resid):
        """Negative log marginal likelihood and its gradient in log-parameter space."""
        ls = np.exp(theta[:N_DIMS])
        sf2 = math.exp(theta[N_DIMS])
        sn2 = math.exp(theta[N_DIMS + 1])
        scaled = [sq_dists[d] / ls[d] ** 2 for d in range(N_DIMS)]
        K = sf2 * np.exp(-0.5 * sum(scaled))
        Ky = K + sn2 * np.eye(len(resid))
        try:
            L = cholesky(Ky, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(theta)
        alpha = cho_solve((L, True), resid, check_finite=False)
        lml = -0.5 * resid @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(resid) * math.log(2 * math.pi)

        W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(len(resid)), check_finite=False)
        WK = W * K
        grad = np.empty_like(theta)
        for d in range(N_DIMS):
            grad[d] = 0.5 * np.sum(WK * scaled[d])
        grad[N_DIMS] = 0.5 * np.sum(WK)
        grad[N_DIMS + 1] = 0.5 * sn2 * np.trace(W)
        return -lml, -grad

    def _optimize(self) -> GpHyperparams:
        U = self.U_train_
        sq_dists = [(U[:, d, None] - U[None, :, d]) ** 2 for d in range(N_DIMS)]
        resid = self.y_train_ - self.prior_mean_
        rng = check_random_state(self.random_state)
        bounds = _log_bounds()

        starts = [self._default_start().to_log_vector()]
        for _ in range(max(self.n_starts, 1) - 1):
            starts.append(
                np.r_[
                    rng.uniform(np.log(0.05), np.log(5.0), N_DIMS),
                    rng.uniform(np.log(0.05), np.log(2.0)),
                    rng.uniform(np.log(1e-4), np.log(0.2)),
                ]
            )

        best_theta, best_value = None, np.inf
        for start in starts:
            start = np.clip(start, [b[0] for b in bounds], [b[1] for b in bounds])
            res = minimize(
                self._objective,
                start,
                args=(sq_dists, resid),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": self.max_iter},
            )
            # strict '<' keeps the lowest start index on ties
            if np.isfinite(res.fun) and res.fun < best_value:
                best_theta, best_value = res.x, res.fun
        if best_theta is None:
            raise FitError("no optimizer start produced a positive definite Gram matrix")
        return GpHyperparams.from_log_vector(np.clip(best_theta, [b[0] for b in bounds], [b[1] for b in bounds]))

    def _factorize(self, h: GpHyperparams):
        K = _exact_gram(self.U_train_, h)
        noise = max(h.noise_variance, NOISE_FLOOR)
        escalations = 0
        while True:
            try:
                L = cholesky(K + noise * np.eye(len(K)), lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                noise *= 10.0
                escalations += 1
                if noise > JITTER_LIMIT * (1 + 1e-9):
                    raise FitError("Gram matrix is singular even after jitter escalation") from None
        self.hyperparams_ = h.with_noise(noise)
        self.jitter_escalations_ = escalations
        self.L_ = L
        self.alpha_ = cho_solve((L, True), self.y_train_ - self.prior_mean_, check_finite=False)
        self.gram_diag_checksum_ = _diag_checksum(K, noise)

    # -- inference -----------------------------------------------------------------

    def _to_unit(self, X) -> np.ndarray:
        X = self.bounds_.check(X)
        return (X - self.bounds_.lo_array) / self.bounds_.span

    def predict(self, X, return_var=False):
        """Posterior mean (and latent variance) at raw-unit inputs of shape (n, 5)."""
        check_is_fitted(self, "alpha_")
        U = self._to_unit(X)
        Ks = gram_matrix(U, self.U_train_, self.hyperparams_)
        mu = self.prior_mean_ + Ks @ self.alpha_
        if not return_var:
            return mu
        V = solve_triangular(self.L_, Ks.T, lower=True, check_finite=False)
        var = self.hyperparams_.signal_variance - np.sum(V**2, axis=0)
        if np.any(var < -1e-9):
            raise FitError(f"negative posterior variance {var.min():.3e}")
        return mu, np.maximum(var, 0.0)

    def predict_grid(self, axes, max_block=4096) -> np.ndarray:
        """Posterior mean over the tensor grid ``axes[0] x ... x axes[4]`` (raw units).

        Uses separability of the ARD kernel, so the cost is one matrix product
        per block rather than a kernel evaluation per grid point.
        """
        check_is_fitted(self, "alpha_")
        if len(axes) != N_DIMS:
            raise ValueError(f"need {N_DIMS} axes")
        bounds = self.bounds_
        factors = []
        for d, axis in enumerate(axes):
            axis = np.atleast_1d(np.asarray(axis, dtype=float))
            probe = np.tile(bounds.lo_array, (len(axis), 1))
            probe[:, d] = axis
            bounds.check(probe)
            u = (axis - bounds.lo[d]) / (bounds.hi[d] - bounds.lo[d])
            z = (u[:, None] - self.U_train_[None, :, d]) / self.hyperparams_.lengthscales[d]
            factors.append(np.exp(-0.5 * z**2))
        shape = tuple(len(f) for f in factors)

        # split dims into a dense left block and a chunked right block
        split = 1
        while split < N_DIMS - 1 and np.prod(shape[: split + 1]) <= max_block * 16:
            split += 1
        left = _outer_rows(factors[:split]) * (self.hyperparams_.signal_variance * self.alpha_)
        right_shape = shape[split:]
        n_right = int(np.prod(right_shape))
        out = np.empty((left.shape[0], n_right))
        for start in range(0, n_right, max_block):
            idx = np.unravel_index(np.arange(start, min(start + max_block, n_right)), right_shape)
            block = np.ones((len(idx[0]), len(self.alpha_)))
            for f, i in zip(factors[split:], idx):
                block *= f[i]
            out[:, start : start + len(idx[0])] = left @ block.T
        return self.prior_mean_ + out.reshape(shape)

    def log_marginal_likelihood(self) -> float:
        check_is_fitted(self, "alpha_")
        resid = self.y_train_ - self.prior_mean_
        n = len(resid)
        return float(-0.5 * resid @ self.alpha_ - np.log(np.diag(self.L_)).sum() - 0.5 * n * math.log(2 * math.pi))


def _outer_rows(factors) -> np.ndarray:
    """Row-wise product over the tensor grid of per-dimension factor matrices."""
    rows = factors[0]
    for f in factors[1:]:
        rows = (rows[:, None, :] * f[None, :, :]).reshape(-1, f.shape[1])
    return rows


def _diag_checksum(K, noise) -> str:
    diag = np.ascontiguousarray(np.diag(K) + noise, dtype="<f8")
    return hashlib.sha256(diag.tobytes()).hexdigest()


# -- functional interface ----------------------------------------------------------------


def fit(records, bounds: DomainBounds | None = None, opt_config: OptConfig | None = None) -> AttainmentGP:
    """Fit a GP to a sequence of TrialRecord."""
    if not records:
        raise ValueError("cannot fit a GP to an empty dataset")
    cfg = opt_config or OptConfig()
    X, y = records_to_arrays(records)
    model = AttainmentGP(bounds=bounds, n_starts=cfg.n_starts, max_iter=cfg.max_iter, random_state=cfg.seed)
    return model.fit(X, y)


def predict(model: AttainmentGP, x) -> tuple[float, float]:
    if isinstance(x, FeatureParameterPoint):
        x = x.as_array()
    mu, var = model.predict(np.atleast_2d(x), return_var=True)
    return float(mu[0]), float(var[0])


def log_marginal_likelihood(model: AttainmentGP) -> float:
    return model.log_marginal_likelihood()


def save_model(model: AttainmentGP, path) -> None:
    check_is_fitted(model, "alpha_")
    doc = {
        "schema": MODEL_SCHEMA,
        "bounds": model.bounds_.to_json(),
        "hyperparams": model.hyperparams_.to_json(),
        "prior_mean": model.prior_mean_,
        "X_train": model.X_train_.tolist(),
        "y_train": model.y_train_.tolist(),
        "opt_config": {"n_starts": model.n_starts, "max_iter": model.max_iter, "seed": model.random_state},
        "degenerate": model.degenerate_,
        "gram_diag_checksum": model.gram_diag_checksum_,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))


def load_model(path) -> AttainmentGP:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"model file is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if doc.get("schema") != MODEL_SCHEMA:
        raise SchemaVersionError(f"unsupported model schema {doc.get('schema')!r}")
    try:
        h = doc["hyperparams"]
        opt = doc.get("opt_config", {})
        model = AttainmentGP(
            bounds=DomainBounds.from_json(doc["bounds"]),
            n_starts=opt.get("n_starts", 8),
            max_iter=opt.get("max_iter", 200),
            random_state=opt.get("seed", 0),
            hyperparams=GpHyperparams(tuple(h["lengthscales"]), h["signal_variance"], h["noise_variance"]),
        )
        X, y = np.array(doc["X_train"], dtype=float), np.array(doc["y_train"], dtype=float)
        checksum = doc["gram_diag_checksum"]
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"model file lacks field {exc}") from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model.fit(X, y)
    if model.prior_mean_ != doc["prior_mean"]:
        raise DatasetError("stored prior mean does not match the training targets")
    if model.gram_diag_checksum_ != checksum:
        raise DatasetError("Gram diagonal checksum mismatch; model file is inconsistent")
    return model
