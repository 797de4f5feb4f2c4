"""Flat per-unit study table: outcome, joint treatment, trials, covariates.

Estimators operate on StudyData rather than the Network directly. Exposure and
neighborhood covariates are computed once on the graph; after that each unit
carries them as attributes, which is also what makes unit-level resampling
meaningful.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError
from .graph import ExposureSpec, exposure, exposure_trials

INTEGRALITY_TOL = 1e-9


@dataclass
class StudyData:
    """One row per retained unit; all exposures defined."""

    z: np.ndarray
    g: np.ndarray
    trials: np.ndarray
    cov: "CovariateFrame"
    spec: ExposureSpec
    y: np.ndarray | None = None
    cluster_id: np.ndarray | None = None
    node_ids: np.ndarray | None = None

    @property
    def n(self):
        return len(self.z)

    def subset(self, idx):
        idx = np.asarray(idx)
        return replace(
            self,
            z=self.z[idx],
            g=self.g[idx],
            trials=self.trials[idx],
            cov=self.cov.take(idx),
            y=None if self.y is None else self.y[idx],
            cluster_id=None if self.cluster_id is None else self.cluster_id[idx],
            node_ids=None if self.node_ids is None else self.node_ids[idx],
        )


def build_study_data(net, cov, z, spec, y=None):
    """Assemble a StudyData from a network, covariates, and treatments.

    Nodes whose exposure is undefined (isolated nodes under the drop policy)
    are removed; node_ids keeps their original indices.
    """
    z = np.asarray(z)
    g, defined = exposure(net, z, spec)
    trials = exposure_trials(net, spec)
    keep = np.flatnonzero(defined)
    if keep.size == 0:
        raise InputError("no units with a defined exposure")
    return StudyData(
        z=z[keep].astype(np.int64),
        g=g[keep],
        trials=trials[keep],
        cov=cov.take(keep),
        spec=spec,
        y=None if y is None else np.asarray(y, dtype=np.float64)[keep],
        cluster_id=None if net.cluster_id is None else net.cluster_id[keep],
        node_ids=keep,
    )


def admissible_mask(g_value, trials, spec):
    """Which units admit exposure level g_value (i.e. are in V_g)."""
    m = np.asarray(trials, dtype=np.float64)
    if spec.kind == "count_all":
        whole = abs(g_value - round(g_value)) <= INTEGRALITY_TOL
        return (m >= g_value) & (g_value >= 0) & whole
    if spec.kind in ("proportion_top_k", "proportion_all"):
        if not (0.0 <= g_value <= 1.0):
            return np.zeros(len(m), dtype=bool)
        s = g_value * m
        return (m > 0) & (np.abs(s - np.round(s)) <= INTEGRALITY_TOL)
    return m > 0  # weighted_sum: continuous support, any level for connected units


def successes_from_exposure(g, trials, spec):
    """Treated-neighbor counts implied by (g, trials); errors on non-integers."""
    g = np.asarray(g, dtype=np.float64)
    m = np.asarray(trials, dtype=np.float64)
    s = g if spec.kind == "count_all" else g * m
    if np.any(np.abs(s - np.round(s)) > INTEGRALITY_TOL):
        bad = int(np.argmax(np.abs(s - np.round(s)) > INTEGRALITY_TOL))
        raise InputError(
            f"exposure {g[bad]!r} with {int(m[bad])} trials is not a whole count; "
            "exposure values do not match the declared exposure kind"
        )
    return np.round(s).astype(np.int64)
