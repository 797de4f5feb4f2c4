"""Minimal regression core: Bernoulli logit, binomial logit, weighted least squares.

Logit families are fit by iteratively reweighted least squares with step
halving; no regularization. Perfect separation does not raise: coefficients are
capped at |b| <= 30 in the mean-centered parameterization and the fit is
flagged. (Centering keeps the cap about divergence, not about legitimately
large raw intercepts.) Rank-deficient designs raise RankDeficientError naming
the dependent columns.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr
from scipy.special import gammaln

from .errors import InputError, RankDeficientError

MAX_ITER = 100
SCORE_TOL = 1e-8
COEF_TOL = 1e-10
COEF_CAP = 30.0


@dataclass
class DesignMatrix:
    names: list
    X: np.ndarray
    row_weights: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise InputError("design matrix must be 2-dimensional")
        if len(self.names) != self.X.shape[1]:
            raise InputError("column names do not match matrix width")
        if len(set(self.names)) != len(self.names):
            raise InputError("duplicate column names in design matrix")
        if not np.all(np.isfinite(self.X)):
            raise InputError("design matrix contains non-finite entries")
        n = self.X.shape[0]
        if self.row_weights is not None:
            self.row_weights = np.asarray(self.row_weights, dtype=np.float64)
            if self.row_weights.shape != (n,):
                raise InputError("row_weights must have one entry per row")
            if np.any(self.row_weights < 0):
                raise InputError("row_weights must be nonnegative")

    @property
    def nrows(self):
        return self.X.shape[0]


def design(columns, row_weights=None):
    """Build a DesignMatrix from a name -> vector mapping (insertion order kept)."""
    names = list(columns)
    if not names:
        raise InputError("design matrix needs at least one column")
    X = np.column_stack([np.asarray(columns[c], dtype=np.float64) for c in names])
    return DesignMatrix(names, X, row_weights)


@dataclass
class GlmFit:
    family: str
    names: list
    coef: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float | None = None
    rss: float | None = None
    separated: bool = False
    ll_trace: list = field(default_factory=list)

    def coef_dict(self):
        return dict(zip(self.names, (float(b) for b in self.coef)))


def _check_rank(X, names, weights=None):
    A = X if weights is None else X * np.sqrt(weights)[:, None]
    if A.shape[0] < A.shape[1]:
        raise RankDeficientError(names)
    _, R, piv = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int((diag > tol).sum())
    if rank < A.shape[1]:
        raise RankDeficientError([names[j] for j in piv[rank:]])


def _sigmoid(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _log1p_exp(eta):
    # log(1 + exp(eta)) without overflow
    return np.where(eta > 30, eta, np.log1p(np.exp(np.minimum(eta, 30))))


def binomial_loglik(X, successes, trials, coef, row_weights=None):
    """Binomial log-likelihood at coef, including the combinatorial constant."""
    X = np.asarray(X, dtype=np.float64)
    s = np.asarray(successes, dtype=np.float64)
    m = np.asarray(trials, dtype=np.float64)
    w = np.ones(len(s)) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
    eta = X @ np.asarray(coef, dtype=np.float64)
    const = gammaln(m + 1) - gammaln(s + 1) - gammaln(m - s + 1)
    return float(np.sum(w * (s * eta - m * _log1p_exp(eta) + const)))


def binomial_score(X, successes, trials, coef, row_weights=None):
    """Gradient of the binomial log-likelihood at coef."""
    X = np.asarray(X, dtype=np.float64)
    s = np.asarray(successes, dtype=np.float64)
    m = np.asarray(trials, dtype=np.float64)
    w = np.ones(len(s)) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
    p = _sigmoid(X @ np.asarray(coef, dtype=np.float64))
    return X.T @ (w * (s - m * p))


def bernoulli_loglik(X, y, coef, row_weights=None):
    return binomial_loglik(X, y, np.ones(len(np.asarray(y))), coef, row_weights)


def bernoulli_score(X, y, coef, row_weights=None):
    return binomial_score(X, y, np.ones(len(np.asarray(y))), coef, row_weights)


def _irls(dm, successes, trials, family):
    X = dm.X
    s = np.asarray(successes, dtype=np.float64)
    m = np.asarray(trials, dtype=np.float64)
    w = np.ones(dm.nrows) if dm.row_weights is None else dm.row_weights
    if len(s) != dm.nrows or len(m) != dm.nrows:
        raise InputError("response length does not match design matrix")
    if np.any((s < 0) | (s > m)):
        raise InputError("need 0 <= successes <= trials")
    if np.any(m < 1):
        raise InputError("trials must be >= 1")
    zero_cols = [dm.names[j] for j in range(X.shape[1]) if np.all(X[:, j] == 0.0)]
    if zero_cols:
        raise InputError(f"constant-zero columns: {zero_cols}")
    _check_rank(X, dm.names, None if dm.row_weights is None else w)

    # Fit in a centered frame when a constant column can absorb the shift, so
    # the separation cap never binds on a large but well-identified intercept
    # (some generating logits have intercepts beyond the cap).
    spans = np.ptp(X, axis=0)
    const_j = next((j for j in range(X.shape[1])
                    if spans[j] == 0.0 and X[0, j] != 0.0), None)
    center = np.zeros(X.shape[1])
    if const_j is not None:
        center = np.where(spans > 0.0, X.mean(axis=0), 0.0)
        X = X - center

    beta = np.zeros(X.shape[1])
    ll = binomial_loglik(X, s, m, beta, w)
    trace = [ll]
    converged = False
    separated = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        p = _sigmoid(X @ beta)
        score = X.T @ (w * (s - m * p))
        weight = np.maximum(w * m * p * (1.0 - p), 1e-12)
        H = X.T @ (weight[:, None] * X)
        try:
            delta = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(H, score, rcond=None)[0]
        lam = 1.0
        beta_new = beta + delta
        ll_new = binomial_loglik(X, s, m, beta_new, w)
        while ll_new < ll - 1e-12 and lam > 1e-10:
            lam *= 0.5
            beta_new = beta + lam * delta
            ll_new = binomial_loglik(X, s, m, beta_new, w)
        if np.any(np.abs(beta_new) > COEF_CAP):
            separated = True
            beta_new = np.clip(beta_new, -COEF_CAP, COEF_CAP)
            ll_capped = binomial_loglik(X, s, m, beta_new, w)
            if ll_capped < ll - 1e-12:
                break  # cap binds and hurts the likelihood: keep previous beta
            ll_new = ll_capped
        rel_change = np.max(np.abs(beta_new - beta)) / max(1.0, np.max(np.abs(beta_new)))
        beta, ll = beta_new, ll_new
        trace.append(ll)
        score_now = X.T @ (w * (s - m * _sigmoid(X @ beta)))
        if np.max(np.abs(score_now)) < SCORE_TOL and rel_change < COEF_TOL:
            converged = True
            break
    if separated:
        converged = False
    if const_j is not None:
        beta = beta.copy()
        beta[const_j] -= (center @ beta) / dm.X[0, const_j]
    return GlmFit(
        family=family,
        names=list(dm.names),
        coef=beta,
        converged=converged,
        iterations=it,
        log_likelihood=ll,
        separated=separated,
        ll_trace=trace,
    )


def fit_bernoulli_logit(dm, y):
    """Logistic regression of a binary response on dm by maximum likelihood."""
    y = np.asarray(y, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise InputError("y entries must be 0 or 1")
    return _irls(dm, y, np.ones(len(y)), "bernoulli_logit")


def fit_binomial_logit(dm, successes, trials):
    """Binomial logistic regression; equals the Bernoulli fit on expanded rows."""
    s = np.asarray(successes, dtype=np.float64)
    m = np.asarray(trials, dtype=np.float64)
    if np.any(np.abs(m - np.round(m)) > 1e-9) or np.any(np.abs(s - np.round(s)) > 1e-9):
        raise InputError("successes and trials must be whole numbers")
    return _irls(dm, s, m, "binomial_logit")


def fit_wls(dm, y):
    """Weighted least squares via the normal equations."""
    y = np.asarray(y, dtype=np.float64)
    if len(y) != dm.nrows:
        raise InputError("response length does not match design matrix")
    w = np.ones(dm.nrows) if dm.row_weights is None else dm.row_weights
    _check_rank(dm.X, dm.names, w)
    Xw = dm.X * w[:, None]
    beta = np.linalg.solve(dm.X.T @ Xw, dm.X.T @ (w * y))
    resid = y - dm.X @ beta
    return GlmFit(
        family="gaussian_identity",
        names=list(dm.names),
        coef=beta,
        converged=True,
        iterations=1,
        rss=float(np.sum(w * resid**2)),
    )


def predict(fit, dm):
    """Inverse-link predictions of fit on the rows of dm (columns matched by name)."""
    if set(dm.names) != set(fit.names):
        raise InputError(
            f"design columns {sorted(dm.names)} do not match fit columns {sorted(fit.names)}"
        )
    order = [dm.names.index(c) for c in fit.names]
    eta = dm.X[:, order] @ fit.coef
    if fit.family in ("bernoulli_logit", "binomial_logit"):
        return _sigmoid(eta)
    return eta
