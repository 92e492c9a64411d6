"""Weighted maximum-likelihood fits for the exposure and outcome models.

Both fitters are plain Newton-Raphson with step halving on the weighted
log-likelihood. The logistic model is ``logit e(x) = phi + psi'x`` and the
outcome model is the baseline-category multinomial logit with categories
``{0, 1, 2}`` and linear predictor ``alpha_k + beta_k a + gamma_k'x``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

TOL = 1e-9
MAX_ITER = 100
SEPARATION_BOUND = 30.0
_MAX_HALVINGS = 30
# Raw score max-norm below which the final polishing step is skipped.
_POLISHED = 1e-11


class FitError(RuntimeError):
    """Base class for model-fitting failures."""


class SeparationError(FitError):
    pass


class RankDeficiencyError(FitError):
    pass


class ConvergenceError(FitError):
    pass


class AbsentCategoryError(FitError):
    pass


# ---------------------------------------------------------------------------
# Likelihood pieces. ``Z`` is always the full design matrix, intercept included.
# ---------------------------------------------------------------------------

def _log1pexp(x):
    """``log(1 + exp(x))`` without overflow."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def logistic_loglik(beta, Z, y, w):
    eta = Z @ beta
    return float(np.sum(w * (y * eta - _log1pexp(eta))))


def logistic_score(beta, Z, y, w):
    p = _expit(Z @ beta)
    return Z.T @ (w * (y - p))


def _expit(eta):
    a = np.exp(-np.abs(eta))
    r = 1.0 / (1.0 + a)
    return np.where(eta >= 0, r, a * r)


def _softmax2(eta):
    """Category probabilities ``(p0, p1, p2)`` for an ``(n, 2)`` logit array."""
    m = np.maximum(np.maximum(eta[:, 0], eta[:, 1]), 0.0)
    e0 = np.exp(-m)
    e1 = np.exp(eta[:, 0] - m)
    e2 = np.exp(eta[:, 1] - m)
    den = e0 + e1 + e2
    return e0 / den, e1 / den, e2 / den


def multinomial_loglik(theta, Z, y, w):
    """Weighted multinomial log-likelihood; ``theta`` is ``(2, q)`` or flat."""
    B = np.reshape(theta, (2, Z.shape[1]))
    eta = Z @ B.T
    m = np.maximum(np.maximum(eta[:, 0], eta[:, 1]), 0.0)
    lse = m + np.log(np.exp(-m) + np.exp(eta[:, 0] - m) + np.exp(eta[:, 1] - m))
    own = np.where(y == 1, eta[:, 0], np.where(y == 2, eta[:, 1], 0.0))
    return float(np.sum(w * (own - lse)))


def multinomial_score(theta, Z, y, w):
    B = np.reshape(theta, (2, Z.shape[1]))
    _, p1, p2 = _softmax2(Z @ B.T)
    g1 = Z.T @ (w * ((y == 1) - p1))
    g2 = Z.T @ (w * ((y == 2) - p2))
    return np.concatenate([g1, g2])


# ---------------------------------------------------------------------------
# Fitted-model containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExposureModelFit:
    """Logistic propensity model ``e(x) = expit(intercept + coef'x)``."""

    intercept: float
    coef: np.ndarray
    converged: bool = True
    score_norm: float = 0.0
    n_iter: int = 0
    loglik_path: tuple = field(default=(), repr=False)
    covariate_names: tuple = ()

    @property
    def params(self):
        return np.concatenate([[self.intercept], self.coef])

    def to_dict(self):
        return {
            "intercept": float(self.intercept),
            "coef": dict(zip(self._names(), map(float, self.coef))),
            "converged": bool(self.converged),
            "score_norm": float(self.score_norm),
            "n_iter": int(self.n_iter),
        }

    def _names(self):
        if len(self.covariate_names) == len(self.coef):
            return list(self.covariate_names)
        return [f"x{j + 1}" for j in range(len(self.coef))]


@dataclass(frozen=True)
class OutcomeModelFit:
    """Multinomial outcome model.

    ``coef`` has shape ``(2, 2 + p)``; row ``k - 1`` holds
    ``(alpha_k, beta_k, gamma_k...)`` for subtype ``k``.
    """

    coef: np.ndarray
    converged: bool = True
    score_norm: float = 0.0
    n_iter: int = 0
    loglik_path: tuple = field(default=(), repr=False)
    covariate_names: tuple = ()

    @property
    def alpha(self):
        return self.coef[:, 0]

    @property
    def beta(self):
        return self.coef[:, 1]

    @property
    def gamma(self):
        return self.coef[:, 2:]

    def to_dict(self):
        names = list(self.covariate_names)
        if len(names) != self.gamma.shape[1]:
            names = [f"x{j + 1}" for j in range(self.gamma.shape[1])]
        out = {}
        for k in (1, 2):
            row = self.coef[k - 1]
            out[f"subtype{k}"] = {
                "alpha": float(row[0]),
                "beta": float(row[1]),
                "gamma": dict(zip(names, map(float, row[2:]))),
            }
        out.update(converged=bool(self.converged), score_norm=float(self.score_norm),
                   n_iter=int(self.n_iter))
        return out


# ---------------------------------------------------------------------------
# Newton iterations
# ---------------------------------------------------------------------------

def _check_inputs(Z, w):
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if not np.all(np.isfinite(Z)):
        raise ValueError("design matrix contains non-finite values")
    q = Z.shape[1]
    n_support = int(np.count_nonzero(w > 0))
    # Gram of the positively weighted rows, scaled to unit diagonal so the
    # eigenvalue cut-off does not depend on covariate units.
    G = Z.T @ (Z * (w > 0)[:, None])
    d = np.sqrt(np.diag(G))
    if n_support < q or np.any(d == 0):
        raise RankDeficiencyError(f"design matrix is rank deficient ({q} columns)")
    eig = np.linalg.eigvalsh(G / np.outer(d, d))
    if eig[0] < 1e-10 * eig[-1]:
        raise RankDeficiencyError(
            f"design matrix is rank deficient ({Z.shape[1]} columns)")


def _newton(evaluate, theta0, total_weight, tol, max_iter):
    """Damped Newton ascent.

    ``evaluate(theta)`` returns ``(loglik, score, hessian)`` with the hessian of
    the log-likelihood (negative definite). Convergence is declared when the
    score max-norm per unit of total weight drops below ``tol``; one further
    Newton step is then kept if it shrinks the score.
    """
    theta = np.array(theta0, dtype=float)
    ll, g, H = evaluate(theta)
    path = [ll]
    scale = max(total_weight, 1.0)
    for it in range(max_iter + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm / scale < tol:
            if gnorm < _POLISHED:
                return theta, gnorm, it, path, True
            # One polishing step: inside the quadratic basin it takes the
            # score down to rounding level at the cost of one evaluation.
            try:
                cand = theta + np.linalg.solve(-H, g)
            except np.linalg.LinAlgError:
                return theta, gnorm, it, path, True
            ll_new, g_new, _ = evaluate(cand)
            g_norm_new = float(np.max(np.abs(g_new)))
            if np.isfinite(ll_new) and g_norm_new < gnorm and ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                path.append(ll_new)
                return cand, g_norm_new, it + 1, path, True
            return theta, gnorm, it, path, True
        if it == max_iter:
            break
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular information matrix") from exc
        t = 1.0
        for _ in range(_MAX_HALVINGS):
            cand = theta + t * step
            ll_new, g_new, H_new = evaluate(cand)
            # relative slack absorbs rounding noise once at the optimum
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            raise ConvergenceError("step halving failed to increase the log-likelihood")
        theta, ll, g, H = cand, ll_new, g_new, H_new
        path.append(ll)
        if np.max(np.abs(theta)) > SEPARATION_BOUND:
            raise SeparationError(
                f"coefficient max-norm {np.max(np.abs(theta)):.1f} exceeds "
                f"{SEPARATION_BOUND:g}; the data are (quasi-)separated")
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations (score norm {gnorm:.3g})")


def logistic_newton(Z, y, w=None, *, tol=TOL, max_iter=MAX_ITER, start=None):
    """Fit a weighted logistic regression on the full design ``Z``.

    Returns ``(beta, score_norm, n_iter, loglik_path)``.
    """
    # column-major makes the weighted cross-products Z'WZ markedly faster
    Z = np.asfortranarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    _check_inputs(Z, w)
    pos = w > 0
    if np.all(y[pos] == y[pos][0]):
        raise SeparationError("response is constant among positively weighted units")

    def evaluate(beta):
        eta = Z @ beta
        a = np.exp(-np.abs(eta))
        r = 1.0 / (1.0 + a)
        p = np.where(eta >= 0, r, a * r)
        ll = float(w @ (y * eta - np.maximum(eta, 0.0) - np.log1p(a)))
        g = Z.T @ (w * (y - p))
        H = -(Z.T @ (Z * (w * p * (1.0 - p))[:, None]))
        return ll, g, H

    beta0 = np.zeros(Z.shape[1]) if start is None else np.asarray(start, dtype=float)
    beta, gnorm, it, path, _ = _newton(evaluate, beta0, w.sum(), tol, max_iter)
    return beta, gnorm, it, path


def multinomial_newton(Z, y, w=None, *, tol=TOL, max_iter=MAX_ITER, start=None):
    """Fit the three-category baseline logit on the full design ``Z``.

    Returns ``(theta, score_norm, n_iter, loglik_path)`` with ``theta`` of
    shape ``(2, q)``.
    """
    # column-major makes the weighted cross-products Z'WZ markedly faster
    Z = np.asfortranarray(Z, dtype=float)
    y = np.asarray(y)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    _check_inputs(Z, w)
    pos = w > 0
    for k in (0, 1, 2):
        if not np.any(y[pos] == k):
            raise AbsentCategoryError(f"outcome category {k} is absent")
    q = Z.shape[1]
    y1 = (y == 1).astype(float)
    y2 = (y == 2).astype(float)

    def evaluate(theta):
        B = theta.reshape(2, q)
        eta1 = Z @ B[0]
        eta2 = Z @ B[1]
        m = np.maximum(np.maximum(eta1, eta2), 0.0)
        e0 = np.exp(-m)
        e1 = np.exp(eta1 - m)
        e2 = np.exp(eta2 - m)
        den = e0 + e1 + e2
        p1 = e1 / den
        p2 = e2 / den
        ll = float(w @ (y1 * eta1 + y2 * eta2 - m - np.log(den)))
        g = np.concatenate([Z.T @ (w * (y1 - p1)), Z.T @ (w * (y2 - p2))])
        wp1 = w * p1
        wp2 = w * p2
        h11 = Z.T @ (Z * (wp1 * (1.0 - p1))[:, None])
        h22 = Z.T @ (Z * (wp2 * (1.0 - p2))[:, None])
        h12 = -(Z.T @ (Z * (wp1 * p2)[:, None]))
        H = -np.block([[h11, h12], [h12, h22]])
        return ll, g, H

    theta0 = np.zeros(2 * q) if start is None else np.ravel(start).astype(float)
    theta, gnorm, it, path, _ = _newton(evaluate, theta0, w.sum(), tol, max_iter)
    return theta.reshape(2, q), gnorm, it, path


# ---------------------------------------------------------------------------
# Public fitting API
# ---------------------------------------------------------------------------

def _with_intercept(X, n):
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(n), X])


def fit_logistic(X, response, weights=None, *, tol=TOL, max_iter=MAX_ITER,
                 start: Optional[ExposureModelFit] = None,
                 covariate_names: Sequence[str] = ()) -> ExposureModelFit:
    """Weighted logistic regression of a binary ``response`` on ``X``.

    Parameters
    ----------
    X : array of shape (n, p) or None
        Covariates, without an intercept column (one is added).
    response : array of shape (n,)
        Binary 0/1 outcome.
    weights : array of shape (n,), optional
        Nonnegative case weights, default all ones.
    start : ExposureModelFit, optional
        Warm start for the Newton iterations.
    """
    response = np.asarray(response, dtype=float)
    Z = _with_intercept(X, len(response))
    beta, gnorm, it, path = logistic_newton(
        Z, response, weights, tol=tol, max_iter=max_iter,
        start=None if start is None else start.params)
    return ExposureModelFit(float(beta[0]), beta[1:].copy(), True, gnorm, it,
                            tuple(path), tuple(covariate_names))


def fit_exposure_model(data, *, tol=TOL, max_iter=MAX_ITER, start=None) -> ExposureModelFit:
    """Propensity model ``A ~ X`` on a :class:`~sface.data.Dataset`."""
    return fit_logistic(data.covariates, data.exposure, data.weight, tol=tol,
                        max_iter=max_iter, start=start,
                        covariate_names=data.covariate_names)


def outcome_design(exposure, covariates):
    exposure = np.asarray(exposure, dtype=float)
    covariates = np.asarray(covariates, dtype=float).reshape(len(exposure), -1)
    return np.column_stack([np.ones(len(exposure)), exposure, covariates])


def fit_multinomial(data, *, tol=TOL, max_iter=MAX_ITER,
                    start: Optional[OutcomeModelFit] = None) -> OutcomeModelFit:
    """Multinomial outcome model ``Y ~ A + X`` with baseline category 0.

    Units with outcome code 9 (unknown subtype) must be removed beforehand.
    """
    y = np.asarray(data.outcome)
    if np.any((y != 0) & (y != 1) & (y != 2)):
        raise ValueError("outcome must be coded 0/1/2 for the multinomial fit; "
                         "apply missingness weighting first")
    Z = outcome_design(data.exposure, data.covariates)
    theta, gnorm, it, path = multinomial_newton(
        Z, y, data.weight, tol=tol, max_iter=max_iter,
        start=None if start is None else start.coef)
    return OutcomeModelFit(theta, True, gnorm, it, tuple(path), tuple(data.covariate_names))


def predict_pi(fit: OutcomeModelFit, a, x):
    """Category probabilities ``(pi0, pi1, pi2)`` at exposure ``a``.

    ``x`` may be a single covariate vector or an ``(n, p)`` matrix; the
    returned arrays follow its leading shape.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = np.atleast_2d(x)
    if X.shape[1] != fit.gamma.shape[1]:
        raise ValueError(f"covariate dimension {X.shape[1]} does not match "
                         f"fitted dimension {fit.gamma.shape[1]}")
    eta = fit.alpha[None, :] + fit.beta[None, :] * np.asarray(a, dtype=float).reshape(-1, 1) \
        + X @ fit.gamma.T
    p0, p1, p2 = _softmax2(eta)
    if single:
        return float(p0[0]), float(p1[0]), float(p2[0])
    return p0, p1, p2


def predict_e(fit: ExposureModelFit, x):
    """Propensity ``e(x)``; scalar for one vector, array for a matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = np.atleast_2d(x)
    if X.shape[1] != len(fit.coef):
        raise ValueError(f"covariate dimension {X.shape[1]} does not match "
                         f"fitted dimension {len(fit.coef)}")
    e = _expit(fit.intercept + X @ fit.coef)
    return float(e[0]) if single else e
