"""Synthetic school networks and the four treatment-assignment scenarios.

The generator builds a multi-school friendship graph with grade/race homophily,
assigns treatments by one of four mechanisms of increasing entanglement between
Z and the neighborhood exposure G, draws outcomes from two structural models,
and computes the true effects those draws target.
"""

from dataclasses import dataclass, field, replace
import warnings

import numpy as np
from scipy.special import expit
from scipy.stats import binom

from .data import admissible_mask, build_study_data
from .errors import ConfigError, EstimationWarning, InputError
from .estimators import default_g_grid
from .glm import design, fit_binomial_logit, fit_wls
from .graph import (
    CovariateFrame,
    ExposureSpec,
    _flat_designated,
    _segment_sums,
    exposure,
    exposure_trials,
    load_network,
    neighborhood_covariates,
)
from .propensity import independent_columns

GRADES = np.arange(6, 13)

# assignment logits, from the study design being replicated
SCENARIO_LOGITS = {
    1: lambda c: -18.0 + 2.0 * c["grade"] + 3.0 * c["race"],
    2: lambda c: (-47.0 + 2.0 * c["grade"] + 4.0 * c["race"]
                  + 3.0 * c["friends.grade"] + 5.0 * c["friends.race"]),
    3: lambda c: -49.0 + 3.0 * c["grade"] + 4.0 * c["race"] + 4.0 * c["degree"],
    4: lambda c: -20.0 + 2.0 * c["grade"] + 3.0 * c["race"],  # + 4*G, iterated
}

DELTA_BY_LEVEL = {"low": -5.0, "medium": -8.0, "high": -10.0}
DELTA_BY_LEVEL_COUNTS = {"low": -0.3, "medium": -0.5, "high": -0.8}

X_G_COLUMNS = ["grade", "race", "friends.grade", "friends.race", "degree"]


def scenario_exposure(scenario):
    if scenario == 3:
        return ExposureSpec(kind="count_all")
    return ExposureSpec(kind="proportion_top_k", k=5)


def scenario_columns(scenario):
    """(x_z_columns, x_g_columns) the assignment mechanism makes sufficient."""
    if scenario == 2:
        return ["grade", "race", "friends.grade", "friends.race"], list(X_G_COLUMNS)
    if scenario == 3:
        return ["grade", "race", "degree"], list(X_G_COLUMNS)
    return ["grade", "race"], list(X_G_COLUMNS)


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int = 1
    interference: str = "low"
    outcome_model: str = "model1"
    exposure: ExposureSpec = None

    def __post_init__(self):
        if self.scenario not in (1, 2, 3, 4):
            raise ConfigError(f"scenario must be 1-4, got {self.scenario}")
        if self.interference not in DELTA_BY_LEVEL:
            raise ConfigError(f"unknown interference level {self.interference!r}")
        if self.outcome_model not in ("model1", "model2"):
            raise ConfigError(f"unknown outcome model {self.outcome_model!r}")
        if self.exposure is None:
            object.__setattr__(self, "exposure", scenario_exposure(self.scenario))
        if self.scenario == 3 and not self.exposure.is_count:
            raise ConfigError("scenario 3 assigns by treated-friend counts; "
                              "use a count exposure")

    @property
    def delta(self):
        table = DELTA_BY_LEVEL_COUNTS if self.scenario == 3 else DELTA_BY_LEVEL
        return table[self.interference]


@dataclass
class SyntheticPopulation:
    """Fixed network + covariates, optionally carrying one realized draw."""

    net: object
    cov: CovariateFrame
    z: np.ndarray = None
    g: np.ndarray = None
    y: np.ndarray = None
    truth: dict = None
    non_converged: bool = False
    sweeps: int = 0
    _q_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self):
        return self.net.num_nodes


def gen_network(n, clusters=None, homophily=(6.0, 6.0), degree_target=7.0,
                rank_k=5, degree_floor=2, degree_cap=None, seed=None,
                race_p=0.65, grade_weights=None, race_by_grade=None,
                cluster_tilt=0.15):
    """Multi-school network with grade/race homophily.

    Within-cluster edges are Bernoulli with log-odds
    base - w_grade*|grade_i - grade_j| + w_race*same_race, the base solved so
    the expected mean degree hits degree_target after flooring degrees at
    degree_floor.

    The default marginals put mass on grades 8-10 with race tied to grade and
    make friendships almost exclusively within (grade, race) cells. Under the
    four assignment mechanisms every populated cell then keeps both treatment
    arms occupied (the cell-level treated probabilities stay away from 0 and
    1) while the overall treated fraction lands near 0.74. Flatter marginals
    or weaker homophily are valid configurations, but they push the extreme
    cells into near-deterministic assignment where no subclassification
    estimator has data to compare arms.

    degree_floor below rank_k leaves a share of units with fewer friends
    than the exposure list holds. Those short lists vary the number of
    neighborhood trials per unit, which is what lets a within-subclass
    outcome fit separate the exposure level from its predicted probability
    when friend covariates are nearly constant. degree_cap prunes edges
    from over-cap nodes, confining degrees to a narrow band; mechanisms
    whose assignment odds scale with degree saturate outside one.
    """
    if n < 100:
        raise ConfigError("need at least 100 nodes")
    if clusters is None:
        clusters = max(1, round(n / 566))  # school-sized groups
    if clusters < 1 or clusters > n // 10:
        raise ConfigError("cluster count must be in [1, n/10]")
    w_grade, w_race = homophily
    rng = np.random.default_rng(seed)

    sizes = np.full(clusters, n // clusters, dtype=np.int64)
    sizes[: n % clusters] += 1
    if degree_target >= sizes.min() - 1 or rank_k >= sizes.min():
        raise ConfigError(
            f"mean degree {degree_target} infeasible for clusters of {sizes.min()}"
        )
    if not 1 <= degree_floor <= rank_k:
        raise ConfigError(f"degree_floor must be in [1, rank_k={rank_k}]")
    if degree_target <= degree_floor:
        raise ConfigError(
            f"mean degree {degree_target} must exceed the degree floor {degree_floor}"
        )
    if degree_cap is not None and not degree_floor < degree_cap >= degree_target:
        raise ConfigError("degree_cap must exceed the floor and cover the target")
    cluster_id = np.repeat(np.arange(clusters), sizes)

    if grade_weights is None:
        base_w = np.array([0.0, 0.0, 0.5, 0.17, 0.33, 0.0, 0.0])
    else:
        base_w = np.asarray(grade_weights, dtype=np.float64) / np.sum(grade_weights)
    if len(base_w) != len(GRADES) or (base_w < 0).any():
        raise ConfigError("grade_weights must be 7 nonnegative numbers")
    if race_by_grade is None and grade_weights is None:
        race_by_grade = (0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    if race_by_grade is not None:
        race_by_grade = np.asarray(race_by_grade, dtype=np.float64)
        if len(race_by_grade) != len(GRADES) or (race_by_grade < 0).any() \
                or (race_by_grade > 1).any():
            raise ConfigError("race_by_grade must be 7 probabilities")
    grade = np.empty(n, dtype=np.float64)
    race = np.empty(n, dtype=np.float64)
    start = 0
    for c in range(clusters):
        stop = start + sizes[c]
        tilt = rng.uniform(-1.0, 1.0)
        live = base_w > 0
        w = base_w * (1.0 + cluster_tilt * tilt * (GRADES - 9.0) / 3.0)
        w[live] = np.maximum(w[live], 1e-3)
        w /= w.sum()
        grade[start:stop] = rng.choice(GRADES, size=sizes[c], p=w)
        if race_by_grade is None:
            p_race = float(np.clip(race_p + 0.05 * rng.uniform(-1.0, 1.0), 0.05, 0.95))
            race[start:stop] = (rng.random(sizes[c]) < p_race).astype(np.float64)
        else:
            idx = (grade[start:stop] - GRADES[0]).astype(np.int64)
            race[start:stop] = (rng.random(sizes[c])
                                < race_by_grade[idx]).astype(np.float64)
        start = stop

    # pair-level logits per cluster, shifted by a shared base found by bisection
    pair_idx = []
    pair_logit0 = []
    start = 0
    for c in range(clusters):
        stop = start + sizes[c]
        ii, jj = np.triu_indices(sizes[c], k=1)
        ii = ii + start
        jj = jj + start
        logit0 = (-w_grade * np.abs(grade[ii] - grade[jj])
                  + w_race * (race[ii] == race[jj]).astype(np.float64))
        pair_idx.append((ii, jj))
        pair_logit0.append(logit0)
        start = stop

    def expected_mean(b):
        # raw Bernoulli mean plus a Poisson-approximate allowance for the
        # degree floor below: deficient nodes get topped up to degree_floor.
        # A top-up edge between two deficient nodes fills two deficits, one
        # to a saturated partner only one, so the degree added per unit of
        # deficit interpolates between 1 and 2 with the deficiency rate.
        mu = np.zeros(n)
        raw = 0.0
        for (ii, jj), l0 in zip(pair_idx, pair_logit0):
            p = expit(l0 + b)
            raw += 2.0 * float(p.sum())
            mu += np.bincount(ii, weights=p, minlength=n)
            mu += np.bincount(jj, weights=p, minlength=n)
        deficit = 0.0
        short = 0.0
        pois = np.exp(-mu)
        for d in range(degree_floor):
            deficit += float(((degree_floor - d) * pois).sum())
            short += float(pois.sum())
            pois = pois * mu / (d + 1)
        return (raw + (2.0 - short / n) * deficit) / n

    lo, hi = -30.0, 10.0
    if expected_mean(hi) < degree_target:
        raise ConfigError("degree target unreachable even with saturated edges")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if expected_mean(mid) < degree_target:
            lo = mid
        else:
            hi = mid
    base = 0.5 * (lo + hi)

    edges = []
    for (ii, jj), l0 in zip(pair_idx, pair_logit0):
        keep = rng.random(len(l0)) < expit(l0 + base)
        edges.append(np.column_stack([ii[keep], jj[keep]]))
    edge_arr = np.vstack(edges) if edges else np.empty((0, 2), dtype=np.int64)

    # floor degrees at degree_floor so no unit sits isolated; partners
    # sampled by the same homophily odds, deficient partners first
    nbr = [set() for _ in range(n)]
    for a, b in edge_arr:
        nbr[a].add(b)
        nbr[b].add(a)
    deg = np.array([len(s) for s in nbr], dtype=np.int64)
    extra = []
    start = 0
    for c in range(clusters):
        stop = start + sizes[c]
        members = np.arange(start, stop)
        for i in members[rng.permutation(sizes[c])]:
            need = degree_floor - len(nbr[i])
            if need <= 0:
                continue
            w = expit(-w_grade * np.abs(grade[i] - grade[members])
                      + w_race * (race[i] == race[members]) + base)
            w[i - start] = 0.0
            if nbr[i]:
                w[np.fromiter(nbr[i], dtype=np.int64, count=len(nbr[i])) - start] = 0.0
            short = deg[members] < degree_floor
            open_w = w > 0
            picked = []
            for mask in (short & open_w, ~short & open_w):
                pool, pw = members[mask], w[mask]
                if len(picked) >= need or pool.size == 0 or pw.sum() <= 0:
                    continue
                take = min(need - len(picked), pool.size)
                picked.extend(rng.choice(pool, size=take, replace=False,
                                         p=pw / pw.sum()).tolist())
            for j in picked:
                nbr[i].add(j)
                nbr[j].add(i)
                deg[i] += 1
                deg[j] += 1
                extra.append((i, j))
        start = stop
    if extra:
        edge_arr = np.vstack([edge_arr, np.asarray(extra, dtype=np.int64)])

    if degree_cap is not None:
        # shed edges from over-cap nodes, preferring partners that are also
        # over the cap (one drop then fixes two) and never pulling a partner
        # below the floor
        for i in np.argsort(-(deg + rng.random(n))):
            while deg[i] > degree_cap:
                part = np.fromiter(nbr[i], dtype=np.int64, count=len(nbr[i]))
                pool = part[deg[part] > degree_floor]
                if pool.size == 0:
                    break
                # shed from the most oversubscribed partner so nodes already
                # at the cap keep their edges
                j = int(pool[np.argmax(deg[pool] + rng.random(pool.size))])
                nbr[i].discard(j)
                nbr[j].discard(i)
                deg[i] -= 1
                deg[j] -= 1
        edge_arr = np.asarray(
            [(i, j) for i in range(n) for j in nbr[i] if i < j], dtype=np.int64
        ).reshape(-1, 2)

    realized = 2.0 * len(edge_arr) / n
    if abs(realized - degree_target) > 0.1 * degree_target:
        warnings.warn(
            f"realized mean degree {realized:.2f} misses target {degree_target}",
            EstimationWarning,
            stacklevel=2,
        )

    # ranked friend lists: a seeded preference order over each node's neighbors
    ranked = [rng.permutation(np.array(sorted(nbrs), dtype=np.int64))
              for nbrs in nbr]

    net = load_network([tuple(e) for e in edge_arr], n, clusters=cluster_id,
                       ranked=ranked)
    cov = CovariateFrame()
    cov.add("grade", grade)
    cov.add("race", race)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        cov = neighborhood_covariates(
            net, cov, [("grade", "mean"), ("race", "mean"), (None, "degree")]
        )
    return net, cov, ranked


def build_population(n, clusters=None, seed=None, **net_kwargs):
    net, cov, _ = gen_network(n, clusters=clusters, seed=seed, **net_kwargs)
    return SyntheticPopulation(net=net, cov=cov)


def _designated_mean(net, espec, values, fill=0.0):
    indices, indptr, sizes = _flat_designated(net, espec)
    out = np.full(net.num_nodes, fill)
    s = _segment_sums(values[indices], indptr)
    np.divide(s, sizes, out=out, where=sizes > 0)
    return out


def own_treated_probability(pop, spec, draws=200):
    """Each unit's true assignment probability under the scenario.

    Scenarios 1-3 are closed-form logits of realized covariates. Scenario 4
    has no closed form: its contagious assignment settles into a
    draw-dependent equilibrium whose marginal law on a sparse graph sits well
    below the mean-field fixed point, so the per-unit probabilities are
    averaged over simulated assignment draws (internally seeded, hence
    deterministic for a given population).
    """
    cov = pop.cov
    if spec.scenario in (1, 2, 3):
        return expit(SCENARIO_LOGITS[spec.scenario](cov))
    key = (spec.exposure.kind, spec.exposure.k, draws)
    if key not in pop._q_cache:
        acc = np.zeros(pop.n)
        for r in range(draws):
            rng = np.random.default_rng(np.random.SeedSequence((0x51C4, r)))
            acc += assign_treatments(pop, spec, rng).z
        pop._q_cache[key] = acc / draws
    return pop._q_cache[key]


def outcome_indicator(pop, spec):
    """I(phi(1; x^ind) >= 0.7) used by both outcome models.

    phi(1; x^ind) is the scenario's true treated probability given own grade
    and race only, so the indicator stays a deterministic function of the
    individual covariates even when assignment also depends on the network:
    per-unit probabilities are averaged within (grade, race) cells.
    """
    cov = pop.cov
    q = own_treated_probability(pop, spec)
    key = cov["grade"].astype(np.int64) * 2 + cov["race"].astype(np.int64)
    _, inverse = np.unique(key, return_inverse=True)
    cell_mean = np.bincount(inverse, weights=q) / np.bincount(inverse)
    return (cell_mean[inverse] >= 0.7).astype(np.float64)


def marginal_friend_probability(pop, spec):
    """Per-unit mean treated-probability over designated friends."""
    return _designated_mean(pop.net, spec.exposure,
                            own_treated_probability(pop, spec))


def lambda_star(g, trials, pi, espec):
    """Binomial neighborhood pmf Binom(m_i, pi_i) at exposure g (vector or scalar)."""
    m = np.asarray(trials, dtype=np.int64)
    g = np.broadcast_to(np.asarray(g, dtype=np.float64), m.shape)
    raw = g if espec.is_count else g * m
    s = np.rint(raw)
    live = m > 0
    ok = live & (np.abs(raw - s) <= 1e-9) & (s >= 0) & (s <= m)
    out = np.zeros(m.shape)
    if ok.any():
        out[ok] = binom.pmf(s[ok].astype(np.int64), m[ok], np.asarray(pi)[ok])
    out[~live] = (g[~live] == 0.0).astype(np.float64)
    return out


@dataclass
class LambdaModel:
    """Frozen logit-linear neighborhood propensity used by outcome model 2.

    The generating mechanism's exact treated-friend distribution is a
    per-unit Poisson-binomial; no estimator restricted to the neighborhood
    summaries can recover that unit-level detail. The outcome model therefore
    uses its best in-family summary: a binomial whose success probability is
    logit-linear in the five neighborhood columns, plus own treatment in
    scenario 4 where assignment feeds back on the neighbors.
    """

    names: list
    beta: np.ndarray
    espec: "ExposureSpec"

    def success_prob(self, z, cov):
        n = cov.n
        zv = np.broadcast_to(np.asarray(z, dtype=np.float64), (n,))
        eta = np.zeros(n)
        for name, b in zip(self.names, self.beta):
            if name == "intercept":
                eta += b
            elif name == "z":
                eta += b * zv
            elif name.startswith("z:"):
                eta += b * zv * cov[name[2:]]
            else:
                eta += b * cov[name]
        return expit(eta)

    def pmf(self, g, z, cov, trials):
        return lambda_star(g, trials, self.success_prob(z, cov), self.espec)


def neighborhood_model(pop, spec):
    """Calibrate the scenario's LambdaModel by projecting exact expected
    treated-friend counts onto the logit-linear binomial family."""
    cov, net, espec = pop.cov, pop.net, spec.exposure
    trials = exposure_trials(net, espec)
    rows = np.flatnonzero(trials > 0)
    sub = cov.take(rows)
    m = trials[rows].astype(np.float64)
    q = own_treated_probability(pop, spec)
    pi_exact = _designated_mean(net, espec, q)[rows]
    # collapsed covariates (single-cell or two-cell populations) would break
    # the logit fit
    keep = independent_columns(sub, X_G_COLUMNS)
    feats = {c: sub[c] for c in keep}

    # a fractional target E[s] = m * p is fitted exactly by two integer rows
    # (s = m weighted p, s = 0 weighted 1 - p), keeping the GLM contract whole
    if spec.scenario == 4:
        # contagious assignment correlates own z with the whole neighborhood
        # far beyond any single-edge adjustment, so the conditional law
        # P(G | z, x) is calibrated on pooled simulated draws; z interactions
        # let the feedback strength differ across covariate cells the way the
        # realized equilibrium does
        draws = 50
        zs, ss = [], []
        for r in range(draws):
            rng = np.random.default_rng(np.random.SeedSequence((0x51C5, r)))
            asg = assign_treatments(pop, spec, rng)
            zs.append(asg.z[rows].astype(np.float64))
            ss.append(np.rint(asg.g[rows] * m) if not espec.is_count
                      else asg.g[rows])
        z_col = np.concatenate(zs)
        cols = {"intercept": np.ones(draws * rows.size)}
        for c in keep:
            cols[c] = np.tile(feats[c], draws)
        cols["z"] = z_col
        for c in independent_columns(sub, ["grade", "race", "degree"]):
            cols["z:" + c] = z_col * np.tile(sub[c], draws)
        dm = design(cols)
        fit = fit_binomial_logit(dm, np.concatenate(ss), np.tile(m, draws))
    else:
        cols = {"intercept": np.ones(2 * rows.size)}
        for c in keep:
            cols[c] = np.tile(feats[c], 2)
        s = np.concatenate([m, np.zeros(rows.size)])
        w = np.concatenate([pi_exact, 1.0 - pi_exact])
        dm = design(cols, row_weights=w)
        fit = fit_binomial_logit(dm, s, np.tile(m, 2))
    if not fit.converged:
        warnings.warn("neighborhood propensity calibration did not converge",
                      EstimationWarning, stacklevel=2)
    return LambdaModel(names=list(cols), beta=fit.coef, espec=espec)


@dataclass
class AssignResult:
    z: np.ndarray
    g: np.ndarray
    defined: np.ndarray
    sweeps: int = 1
    non_converged: bool = False


def assign_treatments(pop, spec, rng, max_iters=50):
    """Draw Z by the scenario's mechanism and recompute G consistently.

    Scenario 4 solves z = 1[u < expit(base + 4 G(z))] by fixed-point sweeps
    with one shared uniform vector, so the iteration is deterministic given
    the draw and normally converges in a few sweeps.
    """
    cov, net, espec = pop.cov, pop.net, spec.exposure
    n = net.num_nodes
    u = rng.random(n)
    if spec.scenario != 4:
        z = (u < expit(SCENARIO_LOGITS[spec.scenario](cov))).astype(np.int64)
        g, defined = exposure(net, z, espec)
        return AssignResult(z=z, g=g, defined=defined)

    base = SCENARIO_LOGITS[4](cov)
    z = (u < expit(base)).astype(np.int64)
    sweeps, converged = 0, False
    for sweeps in range(1, max_iters + 1):
        g, defined = exposure(net, z, espec)
        g_eff = np.where(defined, g, 0.0)
        z_next = (u < expit(base + 4.0 * g_eff)).astype(np.int64)
        if np.array_equal(z_next, z):
            converged = True
            break
        z = z_next
    g, defined = exposure(net, z, espec)
    return AssignResult(z=z, g=g, defined=defined, sweeps=sweeps,
                        non_converged=not converged)


def structural_mean(pop, spec, z, g, lam_model=None, indicator=None,
                    trials=None):
    """mu(z, g, X) of the scenario's outcome model, elementwise over units.

    z and g may be scalars (counterfactual levels) or per-unit vectors.
    """
    cov = pop.cov
    n = pop.n
    ind = outcome_indicator(pop, spec) if indicator is None else indicator
    z = np.broadcast_to(np.asarray(z, dtype=np.float64), (n,))
    g = np.broadcast_to(np.asarray(g, dtype=np.float64), (n,))
    delta = spec.delta
    if spec.outcome_model == "model1":
        return 15.0 - 7.0 * ind - 15.0 * z + 3.0 * z * ind + delta * g
    if trials is None:
        trials = exposure_trials(pop.net, spec.exposure)
    if lam_model is None:
        lam_model = neighborhood_model(pop, spec)
    lam = lam_model.pmf(g, z, cov, trials)
    a_gi, a_zg = (0.5, 0.3) if spec.scenario == 3 else (5.0, 3.0)
    return (15.0 + cov["friends.grade"] + 7.0 * cov["friends.race"]
            - 10.0 * ind - 10.0 * z + delta * g - 10.0 * lam
            + a_gi * g * ind + a_zg * z * g)


def gen_outcomes(pop, spec, z, g, rng, lam_model=None, indicator=None):
    """y = mu(z, g, X) + N(0, 1) noise; undefined exposures enter as g = 0."""
    g_eff = np.where(np.isnan(g), 0.0, g)
    mu = structural_mean(pop, spec, z, g_eff, lam_model=lam_model,
                         indicator=indicator)
    return mu + rng.standard_normal(pop.n)


def true_effects(pop, spec, g=None, defined=None, g_grid=None,
                 weight_mode="population", lam_model=None):
    """Plug-in true effects matching the estimator's grid and weighting.

    For each grid value the structural contrasts are averaged over the units
    that can attain it; the exposure weights are the on-grid empirical masses
    of the realized G (renormalized), exactly as the estimator forms them.
    Closed-form population versions are included under "closed_form".
    """
    espec = spec.exposure
    if g is None:
        g, defined = pop.g, None
    if defined is None:
        defined = ~np.isnan(np.asarray(g, dtype=np.float64))
    rows = np.flatnonzero(defined)
    if rows.size == 0:
        raise InputError("no units with defined exposure")
    g_obs = np.asarray(g, dtype=np.float64)[rows]
    trials_all = exposure_trials(pop.net, espec)
    trials = trials_all[rows]
    if g_grid is None:
        g_grid = default_g_grid(espec, g_obs)
    g_grid = np.asarray(sorted(set(float(v) for v in g_grid)), dtype=np.float64)
    if not np.any(np.abs(g_grid) <= 1e-9):
        raise ConfigError("true-effect grid must include 0")

    ind = outcome_indicator(pop, spec)
    if spec.outcome_model == "model2" and lam_model is None:
        lam_model = neighborhood_model(pop, spec)

    def mu_vec(zv, gv):
        return structural_mean(pop, spec, zv, gv, lam_model=lam_model,
                               indicator=ind, trials=trials_all)[rows]

    nG = len(g_grid)
    tau_g = np.full(nG, np.nan)
    delta = np.full((2, nG), np.nan)
    v_g = np.zeros(nG)
    raw_w = np.zeros(nG)
    # mu(z, 0) is the ADRF value at g = 0, averaged over V_0; delta compares
    # each V_g mean against it rather than re-averaging mu(z, 0) within V_g
    mask0 = admissible_mask(0.0, trials, espec)
    mu0 = {zv: float(np.mean(mu_vec(zv, 0.0)[mask0])) for zv in (0, 1)}
    for k, gv in enumerate(g_grid):
        mask = admissible_mask(gv, trials, espec)
        v_g[k] = mask.sum()
        hits = float((np.abs(g_obs - gv) <= 1e-9).sum())
        if weight_mode == "population":
            raw_w[k] = hits / rows.size
        elif weight_mode == "admissible":
            raw_w[k] = hits / v_g[k] if v_g[k] > 0 else 0.0
        else:
            raise ConfigError(f"unknown weight_mode {weight_mode!r}")
        if v_g[k] == 0:
            continue
        mu_zg = {zv: mu_vec(zv, gv)[mask] for zv in (0, 1)}
        tau_g[k] = float(np.mean(mu_zg[1] - mu_zg[0]))
        for zv in (0, 1):
            delta[zv, k] = float(np.mean(mu_zg[zv]) - mu0[zv])
    if raw_w.sum() <= 0:
        raise InputError("no realized exposures fall on the grid")
    w = raw_w / raw_w.sum()
    ok = ~np.isnan(tau_g)
    w = np.where(ok, w, 0.0)
    w = w / w.sum()
    tau = float(np.nansum(tau_g * w))
    Delta = np.array([float(np.nansum(delta[zv] * w)) for zv in (0, 1)])

    g_eff = np.where(np.isnan(np.asarray(g, dtype=np.float64)), 0.0, g)
    closed = _closed_form_effects(pop, spec, g_eff, ind, lam_model, trials_all)
    return dict(
        g_grid=g_grid, tau_g=tau_g, delta=delta, weights=w,
        tau=tau, Delta0=float(Delta[0]), Delta1=float(Delta[1]),
        total=float(tau + Delta[0]), closed_form=closed,
    )


def _closed_form_effects(pop, spec, g_eff, ind, lam_model, trials):
    """Population-mean formulas for the two outcome models."""
    eg = float(np.mean(g_eff))
    if spec.outcome_model == "model1":
        tau = -15.0 + 3.0 * float(np.mean(ind))
        return dict(tau=tau, Delta0=spec.delta * eg, Delta1=spec.delta * eg)
    a_gi, a_zg = (0.5, 0.3) if spec.scenario == 3 else (5.0, 3.0)
    out = {"tau": -10.0 + a_zg * eg}
    for zv in (0, 1):
        lam_obs = lam_model.pmf(g_eff, zv, pop.cov, trials)
        lam0 = lam_model.pmf(0.0, zv, pop.cov, trials)
        lam_shift = -10.0 * float(np.mean(lam_obs - lam0))
        out[f"Delta{zv}"] = (spec.delta * eg + a_gi * eg * float(np.mean(ind))
                             + lam_shift + a_zg * zv * eg)
    return out


def simulate(spec, n=5000, clusters=None, seed=None, network_seed=None,
             max_iters=50, **net_kwargs):
    """One full draw: network, treatments, exposures, outcomes, and truths."""
    rng = np.random.default_rng(seed)
    net_seed = network_seed if network_seed is not None else rng.integers(2**63)
    pop = build_population(n, clusters=clusters, seed=net_seed, **net_kwargs)
    asg = assign_treatments(pop, spec, rng, max_iters=max_iters)
    lam_model = (neighborhood_model(pop, spec)
                 if spec.outcome_model == "model2" else None)
    y = gen_outcomes(pop, spec, asg.z, asg.g, rng, lam_model=lam_model)
    truth = true_effects(pop, spec, g=asg.g, defined=asg.defined,
                         lam_model=lam_model)
    return replace(
        pop, z=asg.z, g=asg.g, y=y, truth=truth,
        non_converged=asg.non_converged, sweeps=asg.sweeps,
    )


def study_data(pop, spec=None, z=None, g=None, y=None):
    """StudyData view of a realized population draw."""
    espec = spec.exposure if spec is not None else scenario_exposure(1)
    z = pop.z if z is None else z
    y = pop.y if y is None else y
    if z is None or y is None:
        raise InputError("population draw is missing z or y")
    return build_study_data(pop.net, pop.cov, z, espec, y=y)


def partial_correlation_zg(pop, x_columns, z=None, g=None):
    """Partial R-squared of Z for G given covariates: (R2_zx - R2_x) / (1 - R2_x)."""
    z = pop.z if z is None else z
    g = pop.g if g is None else g
    rows = ~np.isnan(np.asarray(g, dtype=np.float64))
    gv = np.asarray(g, dtype=np.float64)[rows]
    tss = float(np.sum((gv - gv.mean()) ** 2))
    if tss == 0:
        return float("nan")

    def r2(with_z):
        cols = {"intercept": np.ones(rows.sum())}
        if with_z:
            cols["z"] = np.asarray(z, dtype=np.float64)[rows]
        for c in x_columns:
            cols[c] = pop.cov[c][rows]
        fit = fit_wls(design(cols), gv)
        return 1.0 - fit.rss / tss

    r2_x = r2(False)
    if r2_x >= 1.0 - 1e-12:
        return float("nan")
    return (r2(True) - r2_x) / (1.0 - r2_x)
