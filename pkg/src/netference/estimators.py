"""Dose-response and effect estimation under neighborhood interference.

The main estimator stratifies on the individual propensity score, fits a
binomial neighborhood score within each stratum, regresses the outcome on
(z, g, zg, lambda, g*lambda), and averages model predictions over the units
for which each grid exposure is attainable. Naive baselines and the
conditional-effect estimators used for comparison live here too.
"""

from dataclasses import dataclass, field
import json
import warnings

import numpy as np

from .data import StudyData, admissible_mask
from .errors import ConfigError, EstimationError, EstimationWarning, InputError, RankDeficientError
from .glm import design, fit_bernoulli_logit, fit_wls, predict
from .propensity import (
    LAMBDA_FLOOR,
    drop_constant_columns,
    fit_individual_ps,
    fit_neighborhood_ps,
    subclassify,
    trivial_partition,
)

GRID_ATOL = 1e-9


def default_g_grid(spec, g_values=None):
    """Exposure grid implied by the exposure definition.

    Top-k proportions use multiples of 1/k; unrestricted proportions use steps
    of 0.2; counts run from 0 to the 95th percentile of the observed exposure.
    """
    if spec.kind == "proportion_top_k":
        return np.linspace(0.0, 1.0, spec.k + 1)
    if spec.kind == "proportion_all":
        return np.linspace(0.0, 1.0, 6)
    if spec.kind == "count_all":
        if g_values is None or len(g_values) == 0:
            raise ConfigError("count exposure needs observed values to build a grid")
        top = int(np.ceil(np.quantile(np.asarray(g_values, dtype=np.float64), 0.95)))
        return np.arange(0, max(top, 1) + 1, dtype=np.float64)
    raise ConfigError(f"no default grid for {spec.kind!r} exposure; pass g_grid explicitly")


def _match_grid(g_values, grid_value):
    return np.abs(np.asarray(g_values, dtype=np.float64) - grid_value) <= GRID_ATOL


@dataclass
class DoseResponseSurface:
    """mu-hat(z, g) on the grid, per subclass and marginal."""

    g_grid: np.ndarray
    mu: np.ndarray            # (2, nG); row z; NaN where no subclass contributes
    mu_sub: np.ndarray        # (2, J, nG); NaN for dropped (j, g) cells
    weights: np.ndarray       # (J, nG) renormalized pi_j^g; 0 for dropped cells
    g_marginal: np.ndarray    # (nG,) estimated P(G = g), sums to 1
    cell_counts: np.ndarray   # (J, nG) admissible-unit counts |B_j^g|
    partition: object = None
    diagnostics: dict = field(default_factory=dict)

    z_levels = (0, 1)

    @property
    def J(self):
        return self.mu_sub.shape[1]


@dataclass
class EffectReport:
    g_grid: np.ndarray
    tau_g: np.ndarray     # (nG,) main effect at each exposure level
    tau: float
    delta: np.ndarray     # (2, nG); delta[z, k] spillover of grid[k] vs 0 under z
    Delta: np.ndarray     # (2,) averaged spillover per treatment arm
    total: float          # overall effect tau + Delta(0)
    metadata: dict = field(default_factory=dict)


def _outcome_columns(model, z, g, lam, include_g_lam=True):
    cols = {"intercept": np.ones(len(z)), "z": z, "g": g, "zg": z * g, "lam": lam}
    if model == "cubic":
        cols["g2"] = g**2
        cols["g3"] = g**3
        cols["lam2"] = lam**2
        cols["lam3"] = lam**3
    if include_g_lam:
        cols["g_lam"] = g * lam
    return cols


def _identified_columns(d, columns):
    """Greedy subset of columns independent of (intercept, z) within d.

    Subclasses built from few discrete covariates can make covariates exactly
    collinear (for instance two atoms with grade + 2*race constant), so each
    stratum keeps only columns that raise the design rank.
    """
    live = d.trials > 0
    A = np.column_stack([np.ones(int(live.sum())), d.z[live].astype(np.float64)])
    rank = np.linalg.matrix_rank(A)
    keep = []
    for c in columns:
        cand = np.column_stack([A, d.cov[c][live]])
        r = np.linalg.matrix_rank(cand)
        if r > rank:
            keep.append(c)
            A, rank = cand, r
    return keep


class _SaturatedCells:
    """Per-(z, g) cell means; the regression-free saturated outcome model."""

    def __init__(self, z, g, y):
        self.means = {}
        for zv in (0, 1):
            arm = z == zv
            for gv in np.unique(g[arm]):
                cell = arm & _match_grid(g, gv)
                self.means[(zv, round(float(gv), 12))] = float(np.mean(y[cell]))

    def lookup(self, zv, gv):
        return self.means.get((zv, round(float(gv), 12)))


def _fit_subclass_outcome(z, g, y, lam, model):
    """Outcome regression for one subclass; prunes collinear regressors."""
    if model == "saturated":
        return _SaturatedCells(z, g, y), False
    cols = _outcome_columns(model, z, g, lam)
    try:
        fit = fit_wls(design(cols), y)
        return fit, False
    except RankDeficientError:
        pass
    # thin subclasses can pin g (or lambda) to a constant; keep the greedy
    # maximal independent subset in declaration order, intercept first
    names = list(cols)
    A = cols["intercept"][:, None]
    rank, keep = 1, ["intercept"]
    for c in names[1:]:
        cand = np.column_stack([A, cols[c]])
        r = np.linalg.matrix_rank(cand)
        if r > rank:
            keep.append(c)
            A, rank = cand, r
    warnings.warn(
        f"outcome design is rank deficient; keeping columns {keep}",
        EstimationWarning,
        stacklevel=3,
    )
    fit = fit_wls(design({c: cols[c] for c in keep}), y)
    return fit, True


def _estimate_with_partition(data, partition, x_g_columns, g_grid, outcome_model,
                             weight_mode):
    if data.y is None:
        raise InputError("outcome column is required for estimation")
    g_grid = np.asarray(sorted(set(float(v) for v in g_grid)), dtype=np.float64)
    nG = len(g_grid)
    J = partition.J
    n = data.n

    sub_rows = [partition.members(j) for j in range(J)]
    sub_data = [data.subset(rows) for rows in sub_rows]

    # per-subclass neighborhood scores and outcome fits
    use_lambda = outcome_model in ("linear", "cubic")
    nps = [None] * J
    fits = [None] * J
    dropped_interaction = []
    lam_converged = []
    reduced = []
    for j in range(J):
        d = sub_data[j]
        lam_hat = np.ones(d.n)
        if use_lambda:
            cols_j = _identified_columns(d, x_g_columns)
            if len(cols_j) < len(x_g_columns):
                reduced.append(j)
            nps[j] = fit_neighborhood_ps(d, cols_j)
            lam_converged.append(bool(nps[j].fit.converged))
            lam_hat = np.maximum(
                nps[j].pmf(d.g, d.z, d.cov, d.trials), LAMBDA_FLOOR
            )
        fit, dropped = _fit_subclass_outcome(
            d.z.astype(np.float64), d.g, d.y, lam_hat, outcome_model
        )
        fits[j] = fit
        if dropped:
            dropped_interaction.append(j)

    # admissible-unit counts |B_j^g|
    cell_counts = np.zeros((J, nG), dtype=np.int64)
    masks = []
    for j in range(J):
        d = sub_data[j]
        row = [admissible_mask(g_grid[k], d.trials, data.spec) for k in range(nG)]
        masks.append(row)
        cell_counts[j] = [int(m.sum()) for m in row]

    mu_sub = np.full((2, J, nG), np.nan)
    valid = cell_counts >= 2
    dropped_cells = [
        (j, float(g_grid[k])) for j in range(J) for k in range(nG)
        if not valid[j, k]
    ]
    for j in range(J):
        d = sub_data[j]
        for zv in (0, 1):
            lam_pred = None
            for k in range(nG):
                if not valid[j, k]:
                    continue
                gv = g_grid[k]
                if outcome_model == "saturated":
                    mean = fits[j].lookup(zv, gv)
                    if mean is None:
                        valid[j, k] = False
                        mu_sub[:, j, k] = np.nan
                        dropped_cells.append((j, float(gv)))
                        continue
                    mu_sub[zv, j, k] = mean
                    continue
                if use_lambda:
                    lam_pred = np.maximum(
                        nps[j].pmf(gv, zv, d.cov, d.trials), LAMBDA_FLOOR
                    )
                zvec = np.full(d.n, float(zv))
                gvec = np.full(d.n, gv)
                cols = _outcome_columns(outcome_model, zvec, gvec, lam_pred)
                pred = predict(
                    fits[j], design({c: cols[c] for c in fits[j].names})
                )
                mu_sub[zv, j, k] = float(np.mean(pred[masks[j][k]]))

    if dropped_cells:
        warnings.warn(
            f"{len(dropped_cells)} (subclass, g) cells dropped for having fewer "
            "than 2 usable units; weights renormalized",
            EstimationWarning,
            stacklevel=3,
        )

    # pi_j^g over contributing subclasses
    weights = np.zeros((J, nG))
    contributing = np.where(valid, cell_counts, 0).astype(np.float64)
    v_g = contributing.sum(axis=0)
    live_g = v_g > 0
    weights[:, live_g] = contributing[:, live_g] / v_g[live_g]

    mu = np.full((2, nG), np.nan)
    for zv in (0, 1):
        vals = np.where(np.isnan(mu_sub[zv]), 0.0, mu_sub[zv])
        mu[zv, live_g] = (vals * weights).sum(axis=0)[live_g]

    # estimated exposure distribution on the grid
    raw = np.zeros(nG)
    admissible_totals = np.where(v_g > 0, v_g, np.nan)
    for k in range(nG):
        hits = float(_match_grid(data.g, g_grid[k]).sum())
        if weight_mode == "population":
            raw[k] = hits / n
        elif weight_mode == "admissible":
            raw[k] = hits / admissible_totals[k] if v_g[k] > 0 else 0.0
        else:
            raise ConfigError(f"unknown weight_mode {weight_mode!r}")
    total_mass = raw.sum()
    if total_mass <= 0:
        raise EstimationError("no observed exposures fall on the requested grid")
    if weight_mode == "population" and total_mass < 1.0 - 1e-12:
        warnings.warn(
            f"grid covers {total_mass:.3f} of the observed exposure mass; "
            "weights renormalized",
            EstimationWarning,
            stacklevel=3,
        )
    g_marginal = raw / total_mass

    return DoseResponseSurface(
        g_grid=g_grid,
        mu=mu,
        mu_sub=mu_sub,
        weights=weights,
        g_marginal=g_marginal,
        cell_counts=cell_counts,
        partition=partition,
        diagnostics=dict(
            outcome_model=outcome_model,
            lambda_converged=lam_converged,
            dropped_g_lambda=dropped_interaction,
            dropped_cells=dropped_cells,
            reduced_score_models=reduced,
            score_columns=[None if f is None else f.x_g_columns for f in nps],
        ),
    )


def derive_effects(surface, metadata=None):
    """Main, spillover, and total effects from a dose-response surface.

    Grid values where either arm of mu is missing are excluded, with the
    exposure weights renormalized over the rest; g = 0 must survive.
    """
    grid = surface.g_grid
    at_zero = _match_grid(grid, 0.0)
    if not at_zero.any():
        raise ConfigError("effect derivation requires 0 in the exposure grid")
    k0 = int(np.flatnonzero(at_zero)[0])
    mu = surface.mu
    if np.isnan(mu[:, k0]).any():
        raise EstimationError("mu(z, 0) could not be estimated; effects undefined")

    ok = ~np.isnan(mu).any(axis=0)
    w = np.where(ok, surface.g_marginal, 0.0)
    lost = surface.g_marginal[~ok].sum()
    if lost > 0:
        warnings.warn(
            f"excluding {lost:.3f} exposure mass at grid points without estimates",
            EstimationWarning,
            stacklevel=2,
        )
    if w.sum() <= 0:
        raise EstimationError("no grid point has estimates in both arms")
    w = w / w.sum()

    tau_g = mu[1] - mu[0]
    delta = np.vstack([mu[0] - mu[0, k0], mu[1] - mu[1, k0]])
    tau = float(np.nansum(tau_g * w))
    Delta = np.array([float(np.nansum(delta[z] * w)) for z in (0, 1)])
    total = float(np.nansum(mu[1] * w) - mu[0, k0])
    return EffectReport(
        g_grid=grid.copy(),
        tau_g=tau_g,
        tau=tau,
        delta=delta,
        Delta=Delta,
        total=total,
        metadata=dict(metadata or {}),
    )


def estimate_subclass_gps(data: StudyData, x_z_columns, x_g_columns, J=5,
                          g_grid=None, outcome_model="linear", min_arm_count=5,
                          weight_mode="population"):
    """Subclassification on phi plus neighborhood-GPS outcome modelling."""
    if g_grid is None:
        g_grid = default_g_grid(data.spec, data.g)
    ips = fit_individual_ps(data, x_z_columns, drop_constant=True)
    partition = subclassify(ips, data.z, J=J, min_arm_count=min_arm_count)
    surface = _estimate_with_partition(
        data, partition, x_g_columns, g_grid, outcome_model, weight_mode
    )
    surface.diagnostics["phi_converged"] = bool(ips.fit.converged)
    report = derive_effects(
        surface,
        metadata=dict(
            estimator="subclass_gps",
            J=partition.J,
            x_z_columns=list(x_z_columns),
            x_g_columns=list(x_g_columns),
            outcome_model=outcome_model,
            weight_mode=weight_mode,
            exposure=data.spec.kind,
        ),
    )
    return surface, report


def estimate_gps_only(data: StudyData, x_g_columns, g_grid=None,
                      outcome_model="linear", weight_mode="population"):
    """Neighborhood-GPS regression with no individual-score stratification."""
    if g_grid is None:
        g_grid = default_g_grid(data.spec, data.g)
    partition = trivial_partition(data.n)
    surface = _estimate_with_partition(
        data, partition, x_g_columns, g_grid, outcome_model, weight_mode
    )
    report = derive_effects(
        surface,
        metadata=dict(
            estimator="gps_only",
            J=1,
            x_g_columns=list(x_g_columns),
            outcome_model=outcome_model,
            weight_mode=weight_mode,
            exposure=data.spec.kind,
        ),
    )
    return surface, report


def _weighted_arm_difference(y, z, assignment):
    """Sum over subclasses of (treated mean - control mean) * subclass share."""
    n = len(y)
    out = 0.0
    for j in np.unique(assignment):
        rows = assignment == j
        t = y[rows & (z == 1)]
        c = y[rows & (z == 0)]
        out += (float(np.mean(t)) - float(np.mean(c))) * (rows.sum() / n)
    return out


def estimate_naive(data: StudyData, variant="diff_means", columns=None, J=5,
                   min_arm_count=5):
    """Interference-naive estimates of the main effect."""
    if data.y is None:
        raise InputError("outcome column is required for estimation")
    y, z = data.y, data.z
    if variant == "diff_means":
        for arm, name in ((1, "treated"), (0, "control")):
            if not (z == arm).any():
                raise EstimationError(f"no {name} units; difference in means undefined")
        return float(np.mean(y[z == 1]) - np.mean(y[z == 0]))
    if variant == "ols":
        cols = {"intercept": np.ones(data.n), "z": z.astype(np.float64)}
        for c in columns or []:
            cols[c] = data.cov[c]
        fit = fit_wls(design(cols), y)
        return float(fit.coef_dict()["z"])
    if variant == "subclass_phi":
        ips = fit_individual_ps(data, columns or [])
        if J is None:
            # exact blocking on the score's distinct values; empty-arm blocks
            # merge into their score neighbor
            part = subclassify(ips, z, method="distinct", min_arm_count=1)
        else:
            part = subclassify(ips, z, J=J, min_arm_count=min_arm_count)
        return float(_weighted_arm_difference(y, z, part.assignment))
    raise InputError(f"unknown naive variant {variant!r}")


def _subclassified_contrast(y, t, score, J, what, arm_names=("reference", "exposed")):
    n = len(y)
    for arm, name in ((1, arm_names[1]), (0, arm_names[0])):
        if not (t == arm).any():
            raise EstimationError(f"no {name} units for {what}")
    J_used = J
    if n < 2 * J:
        J_used = 1
        warnings.warn(
            f"{n} units cannot support {J} subclasses for {what}; using 1",
            EstimationWarning,
            stacklevel=3,
        )
    part = subclassify(score, t, J=J_used)
    return float(_weighted_arm_difference(y, t, part.assignment))


def estimate_conditional_main(data: StudyData, g, x_columns, J=5):
    """Treated-vs-control contrast among units with exposure exactly g."""
    if data.y is None:
        raise InputError("outcome column is required for estimation")
    rows = np.flatnonzero(_match_grid(data.g, g))
    if rows.size == 0:
        raise EstimationError(f"no units with exposure {g}")
    d = data.subset(rows)
    what = f"the conditional main effect at g={g}"
    for arm, name in ((1, "treated"), (0, "control")):
        if not (d.z == arm).any():
            raise EstimationError(f"no {name} units for {what}")
    ips = fit_individual_ps(d, x_columns, drop_constant=True)
    return _subclassified_contrast(
        d.y, d.z, ips.phi, J, what, arm_names=("control", "treated")
    )


def estimate_conditional_spillover(data: StudyData, g, x_columns, J=5):
    """Exposure-g vs exposure-0 contrast among control units."""
    if data.y is None:
        raise InputError("outcome column is required for estimation")
    if abs(float(g)) <= GRID_ATOL:
        raise InputError("spillover contrast requires g != 0")
    at_g = _match_grid(data.g, g)
    at_0 = _match_grid(data.g, 0.0)
    rows = np.flatnonzero((data.z == 0) & (at_g | at_0))
    d = data.subset(rows)
    t = _match_grid(d.g, g).astype(np.int64)
    for arm, name in ((1, f"G={g}"), (0, "G=0")):
        if not (t == arm).any():
            raise EstimationError(f"no control units with {name}")
    cols = {"intercept": np.ones(d.n)}
    for c in drop_constant_columns(d.cov, x_columns):
        cols[c] = d.cov[c]
    fit = fit_bernoulli_logit(design(cols), t)
    score = np.clip(predict(fit, design(cols)), 1e-6, 1.0 - 1e-6)
    return _subclassified_contrast(
        d.y, t, score, J, f"the conditional spillover at g={g}"
    )


def _clean(value):
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else None
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    return value


def report_to_dict(report: EffectReport):
    return _clean(
        dict(
            g_grid=report.g_grid,
            tau_g=report.tau_g,
            tau=report.tau,
            delta=dict(z0=report.delta[0], z1=report.delta[1]),
            Delta=dict(z0=report.Delta[0], z1=report.Delta[1]),
            total=report.total,
            metadata=report.metadata,
        )
    )


def surface_to_dict(surface: DoseResponseSurface):
    return _clean(
        dict(
            g_grid=surface.g_grid,
            mu=dict(z0=surface.mu[0], z1=surface.mu[1]),
            mu_sub=dict(z0=surface.mu_sub[0], z1=surface.mu_sub[1]),
            weights=surface.weights,
            g_marginal=surface.g_marginal,
            cell_counts=surface.cell_counts,
            n_subclasses=surface.J,
            diagnostics=surface.diagnostics,
        )
    )


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_dose_response(surface, report, path, delimiter="\t"):
    """One row per (z, g): marginal mu, per-subclass mu, effect columns."""
    J = surface.J
    header = ["z", "g", "mu", "tau_g", "delta"] + [f"mu_sub{j + 1}" for j in range(J)]

    def fmt(v):
        return "nan" if v is None or (isinstance(v, float) and not np.isfinite(v)) else f"{v:.10g}"

    with open(path, "w") as fh:
        fh.write(delimiter.join(header) + "\n")
        for zv in (0, 1):
            for k, gv in enumerate(surface.g_grid):
                row = [
                    str(zv),
                    fmt(float(gv)),
                    fmt(float(surface.mu[zv, k])),
                    fmt(float(report.tau_g[k])),
                    fmt(float(report.delta[zv, k])),
                ]
                row += [fmt(float(surface.mu_sub[zv, j, k])) for j in range(J)]
                fh.write(delimiter.join(row) + "\n")
