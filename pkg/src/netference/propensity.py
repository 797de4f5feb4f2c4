"""Individual, neighborhood, and joint propensity scores; subclassification; balance.

The individual score phi(z; x^z) is a Bernoulli logit for Z. The neighborhood
score lambda(g; z; x^g) is a binomial logit for the treated-neighbor count with
the unit's own trials; the joint score psi factorizes as lambda * phi.
"""

from dataclasses import dataclass
import warnings

import numpy as np
from scipy.stats import binom

from .data import StudyData, successes_from_exposure
from .errors import EstimationError, EstimationWarning, InputError
from .glm import design, fit_bernoulli_logit, fit_binomial_logit, predict

PHI_CLIP = 1e-6
LAMBDA_FLOOR = 1e-8
# |coef on z| beyond this in the neighborhood model flags quasi-separation:
# one z arm too thin to identify the shift, so the MLE runs away.
Z_COEF_BOUND = 10.0


def _with_intercept(cov, columns, extra=None):
    cols = {"intercept": np.ones(cov.n)}
    if extra:
        cols.update(extra)
    for c in columns:
        cols[c] = cov[c]
    return design(cols)


def drop_constant_columns(cov, columns):
    """Columns with any variation; constants are absorbed by the intercept.

    Meant for fits inside strata, where a covariate can be incidentally
    constant even though it varies in the full data.
    """
    return [c for c in columns if np.ptp(cov[c]) > 0]


def independent_columns(cov, columns):
    """Greedy subset of columns that stays linearly independent of the
    intercept and each other.

    Strata can collapse covariates onto each other (a two-cell population
    makes race an affine function of grade), which breaks a logit fit
    outright; earlier columns win ties.
    """
    n = cov.n
    basis = [np.full(n, 1.0 / np.sqrt(n))]
    keep = []
    for c in columns:
        v = cov[c].astype(np.float64)
        scale = np.linalg.norm(v)
        if scale == 0.0:
            continue
        v = v / scale
        for b in basis:
            v = v - (b @ v) * b
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            keep.append(c)
            basis.append(v / norm)
    return keep


@dataclass
class IndividualPS:
    fit: "GlmFit"
    phi: np.ndarray  # P(Z=1 | x^z) per unit, clipped away from 0 and 1
    x_z_columns: list

    def prob(self, z):
        """phi(z; x) for scalar or per-unit z."""
        z = np.asarray(z, dtype=np.float64)
        return z * self.phi + (1.0 - z) * (1.0 - self.phi)


def fit_individual_ps(data: StudyData, x_z_columns, drop_constant=False) -> IndividualPS:
    cols = list(x_z_columns)
    if drop_constant:
        cols = independent_columns(data.cov, cols)
    dm = _with_intercept(data.cov, cols)
    fit = fit_bernoulli_logit(dm, data.z)
    phi = np.clip(predict(fit, dm), PHI_CLIP, 1.0 - PHI_CLIP)
    return IndividualPS(fit=fit, phi=phi, x_z_columns=cols)


@dataclass
class NeighborhoodPS:
    fit: "GlmFit"
    x_g_columns: list
    spec: "ExposureSpec"

    def success_prob(self, z, cov):
        """pi(z, x^g): per-neighbor treated probability under the fitted model."""
        n = cov.n
        z = np.broadcast_to(np.asarray(z, dtype=np.float64), (n,))
        extra = {"z": z} if "z" in self.fit.names else None
        dm = _with_intercept(cov, self.x_g_columns, extra=extra)
        return predict(self.fit, dm)

    def pmf(self, g, z, cov, trials):
        """lambda(g; z; x^g) for every row of cov with the given trials.

        g and z may be scalars or per-row vectors. Rows for which g is not an
        attainable exposure (non-integral count, zero trials with g > 0) get
        probability 0; rows with zero trials have lambda = 1 at g = 0.
        """
        m = np.asarray(trials, dtype=np.int64)
        pi = self.success_prob(z, cov)
        g_vec = np.broadcast_to(np.asarray(g, dtype=np.float64), (cov.n,))
        raw = g_vec if self.spec.is_count else g_vec * m
        s = np.rint(raw)
        live = m > 0
        valid = live & (np.abs(raw - s) <= 1e-9) & (s >= 0) & (s <= m)
        out = np.zeros(cov.n)
        if valid.any():
            out[valid] = binom.pmf(s[valid].astype(np.int64), m[valid], pi[valid])
        zero_m = ~live
        out[zero_m] = (g_vec[zero_m] == 0.0).astype(np.float64)
        return out


def fit_neighborhood_ps(data: StudyData, x_g_columns, spec=None,
                        drop_constant=False) -> NeighborhoodPS:
    """Binomial logit of the treated-neighbor count on (z, x^g)."""
    spec = spec or data.spec
    if spec.kind == "weighted_sum":
        raise InputError("binomial neighborhood score requires count or proportion exposure")
    live = data.trials > 0
    if not live.any():
        raise EstimationError("no units with neighbors; neighborhood score undefined")
    cols = list(x_g_columns)
    if drop_constant:
        cols = independent_columns(data.cov, cols)
    s = successes_from_exposure(data.g[live], data.trials[live], spec)
    cov = data.cov.take(np.flatnonzero(live))
    dm = _with_intercept(cov, cols, extra={"z": data.z[live].astype(np.float64)})
    fit = fit_binomial_logit(dm, s, data.trials[live])
    z_coef = fit.coef[fit.names.index("z")]
    if abs(z_coef) > Z_COEF_BOUND:
        # nearly one-armed stratum: the z shift is unidentified, and a runaway
        # coefficient would poison every counterfactual lambda(g; z; x)
        warnings.warn(
            f"neighborhood score z coefficient {z_coef:.1f} unidentified; "
            "refitting without z", EstimationWarning)
        dm = _with_intercept(cov, cols)
        fit = fit_binomial_logit(dm, s, data.trials[live])
    return NeighborhoodPS(fit=fit, x_g_columns=cols, spec=spec)


@dataclass
class JointPS:
    individual: IndividualPS
    neighborhood: NeighborhoodPS


def joint_ps(jps: JointPS, z, g, data: StudyData):
    """psi(z; g; x) = lambda(g; z; x^g) * phi(z; x^z) per unit."""
    lam = jps.neighborhood.pmf(g, z, data.cov, data.trials)
    return lam * jps.individual.prob(z)


@dataclass
class SubclassPartition:
    boundaries: np.ndarray  # increasing cutpoints b_0 < ... < b_J
    assignment: np.ndarray  # subclass index per unit, 0-based
    counts: np.ndarray      # (J, 2) control/treated counts
    requested: int

    @property
    def J(self):
        return len(self.counts)

    def members(self, j):
        return np.flatnonzero(self.assignment == j)


def subclassify(ps, z, J=5, method="quantile", min_arm_count=5) -> SubclassPartition:
    """Subclasses on the individual score, merged until both arms hold.

    method="quantile" cuts at the J-quantiles of the score; method="distinct"
    starts from one subclass per distinct score value (exact blocking, the
    natural choice when the score takes few values). Adjacent subclasses are
    then merged until every subclass has at least min_arm_count units per
    treatment arm or a single subclass remains. An arm that is empty even then
    is an estimation error.
    """
    phi = ps.phi if isinstance(ps, IndividualPS) else np.asarray(ps, dtype=np.float64)
    z = np.asarray(z)
    if method == "quantile":
        if J < 1:
            raise InputError("J must be >= 1")
        if len(phi) < 2 * J:
            raise EstimationError(f"{len(phi)} units cannot fill {J} subclasses; use fewer")
        cuts = np.quantile(phi, np.linspace(0.0, 1.0, J + 1))
        interior = np.unique(cuts[1:-1])
        # a cut equal to the minimum would leave the bottom subclass empty
        # (ties go right); a cut at the maximum is fine and separates a top atom
        interior = interior[interior > phi.min()]
    elif method == "distinct":
        values = np.unique(phi)
        interior = (values[:-1] + values[1:]) / 2.0
        J = len(values)
    else:
        raise InputError(f"unknown subclassification method {method!r}")

    def build(interior_cuts):
        assign = np.searchsorted(interior_cuts, phi, side="right")
        k = len(interior_cuts) + 1
        counts = np.zeros((k, 2), dtype=np.int64)
        for j in range(k):
            mask = assign == j
            counts[j, 0] = int(((z == 0) & mask).sum())
            counts[j, 1] = int(((z == 1) & mask).sum())
        return assign, counts

    interior = list(interior)
    assign, counts = build(interior)
    while len(interior) > 0:
        bad = np.flatnonzero(counts.min(axis=1) < min_arm_count)
        if bad.size == 0:
            break
        j = int(bad[0])
        # drop the boundary on the side of the adjacent class (right unless last)
        drop = j if j < len(interior) else j - 1
        interior.pop(drop)
        assign, counts = build(interior)

    if counts.min() == 0:
        arm = "treated" if counts[:, 1].min() == 0 else "control"
        raise EstimationError(
            f"a subclass has no {arm} units even after merging; use fewer subclasses"
        )
    k = len(interior) + 1
    if k < J and method == "quantile":
        warnings.warn(
            f"merged to {k} subclasses (requested {J}) to keep both arms populated",
            EstimationWarning,
            stacklevel=2,
        )
    if counts.min() < min_arm_count:
        warnings.warn(
            f"a subclass arm has fewer than {min_arm_count} units",
            EstimationWarning,
            stacklevel=2,
        )
    boundaries = np.concatenate(([phi.min()], interior, [phi.max()]))
    return SubclassPartition(
        boundaries=boundaries, assignment=assign, counts=counts, requested=J
    )


def trivial_partition(n) -> SubclassPartition:
    """Single subclass holding every unit (used by the plain GPS estimator)."""
    return SubclassPartition(
        boundaries=np.array([0.0, 1.0]),
        assignment=np.zeros(n, dtype=np.int64),
        counts=np.array([[n, n]], dtype=np.int64),  # arm counts unused here
        requested=1,
    )


def standardized_difference(x_t, x_c):
    """(mean_T - mean_C) / sqrt((s_T^2 + s_C^2) / 2); 0 when means agree."""
    mt, mc = float(np.mean(x_t)), float(np.mean(x_c))
    if mt == mc:
        return 0.0
    vt = float(np.var(x_t, ddof=1)) if len(x_t) > 1 else 0.0
    vc = float(np.var(x_c, ddof=1)) if len(x_c) > 1 else 0.0
    denom = np.sqrt((vt + vc) / 2.0)
    if denom == 0.0:
        return float("nan")
    return (mt - mc) / denom


def balance_table(cov, z, columns, strata=None):
    """Per-column treated/control means and standardized differences.

    Returns a list of row dicts; stratum None is the pooled row. Strata with an
    empty arm report NaN rather than raising.
    """
    z = np.asarray(z)
    rows = []
    levels = [None] if strata is None else [None, *np.unique(np.asarray(strata)).tolist()]
    for column in columns:
        x = cov[column] if hasattr(cov, "columns") else np.asarray(cov[column])
        for level in levels:
            mask = np.ones(len(z), dtype=bool) if level is None else np.asarray(strata) == level
            t = x[mask & (z == 1)]
            c = x[mask & (z == 0)]
            if len(t) == 0 or len(c) == 0:
                rows.append(
                    dict(column=column, stratum=level, mean_treated=float("nan"),
                         mean_control=float("nan"), std_diff=float("nan"),
                         n_treated=len(t), n_control=len(c))
                )
                continue
            rows.append(
                dict(column=column, stratum=level,
                     mean_treated=float(np.mean(t)), mean_control=float(np.mean(c)),
                     std_diff=standardized_difference(t, c),
                     n_treated=len(t), n_control=len(c))
            )
    return rows


def write_balance_table(rows, path, delimiter="\t"):
    cols = ["column", "stratum", "mean_treated", "mean_control",
            "std_diff", "n_treated", "n_control"]
    with open(path, "w") as fh:
        fh.write(delimiter.join(cols) + "\n")
        for r in rows:
            vals = [
                str(r["column"]),
                "pooled" if r["stratum"] is None else str(r["stratum"]),
                f"{r['mean_treated']:.6f}", f"{r['mean_control']:.6f}",
                f"{r['std_diff']:.6f}", str(r["n_treated"]), str(r["n_control"]),
            ]
            fh.write(delimiter.join(vals) + "\n")


def max_pairwise_std_diff(x, labels):
    """Largest |standardized difference| over all pairs of arm labels."""
    labs = np.unique(labels)
    best = 0.0
    for a_idx in range(len(labs)):
        for b_idx in range(a_idx + 1, len(labs)):
            a = x[labels == labs[a_idx]]
            b = x[labels == labs[b_idx]]
            if len(a) == 0 or len(b) == 0:
                continue
            d = abs(standardized_difference(a, b))
            if np.isfinite(d):
                best = max(best, d)
    return best


def stratified_max_std_diff(x, labels, strata):
    """Arm-pair maximum of the stratum-share-weighted standardized difference.

    For each arm pair the within-stratum differences are averaged with weights
    proportional to stratum size (over strata where both arms appear); the
    absolute maximum over pairs is returned.
    """
    labs = np.unique(labels)
    strata = np.asarray(strata)
    levels = np.unique(strata)
    best = 0.0
    for a_idx in range(len(labs)):
        for b_idx in range(a_idx + 1, len(labs)):
            num, wsum = 0.0, 0.0
            for s in levels:
                mask = strata == s
                a = x[mask & (labels == labs[a_idx])]
                b = x[mask & (labels == labs[b_idx])]
                if len(a) == 0 or len(b) == 0:
                    continue
                d = standardized_difference(a, b)
                if not np.isfinite(d):
                    continue
                w = float(mask.sum())
                num += w * d
                wsum += w
            if wsum > 0:
                best = max(best, abs(num / wsum))
    return best
