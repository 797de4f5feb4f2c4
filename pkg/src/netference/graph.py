"""Undirected networks, node covariates, and neighborhood exposure mappings.

A Network is a fixed undirected graph stored as sorted adjacency lists.
A CovariateFrame holds named per-node columns tagged as individual or
neighborhood kind. An ExposureSpec turns a binary treatment vector into the
scalar neighborhood treatment G_i (proportion or count of treated neighbors,
optionally restricted to the first k ranked friends).
"""

from dataclasses import dataclass, field
import warnings

import numpy as np

from .errors import ConfigError, EstimationWarning, InputError


def _segment_sums(values, indptr):
    # row sums of a ragged array in CSR form; safe for empty rows
    cs = np.concatenate(([0.0], np.cumsum(values)))
    return cs[indptr[1:]] - cs[indptr[:-1]]


class Network:
    """Immutable undirected graph with optional edge weights, clusters, friend ranks.

    Parameters
    ----------
    num_nodes : int
        Number of nodes N; node ids are 0..N-1.
    adjacency : list of int arrays
        Sorted neighbor list per node.
    edge_weights : dict[(i, j), float] or None
        Weights keyed by ordered pair (i < j); only needed for weighted exposures.
    cluster_id : int array or None
        Cluster (school) label per node, used by the clustered bootstrap.
    ranked : list of int arrays or None
        Per-node ranked friend list (best friends first); used by top-k exposures.
    """

    __slots__ = (
        "num_nodes", "adjacency", "degrees", "edge_weights", "cluster_id", "ranked", "_flat",
    )

    def __init__(self, num_nodes, adjacency, edge_weights=None, cluster_id=None, ranked=None):
        self.num_nodes = int(num_nodes)
        self.adjacency = adjacency
        self.degrees = np.array([len(a) for a in adjacency], dtype=np.int64)
        self.edge_weights = edge_weights
        self.cluster_id = None if cluster_id is None else np.asarray(cluster_id, dtype=np.int64)
        self.ranked = ranked
        self._flat = {}

    @property
    def edges(self):
        """Set of unordered edges as (i, j) with i < j."""
        out = set()
        for i, nbrs in enumerate(self.adjacency):
            for j in nbrs:
                if i < j:
                    out.add((i, int(j)))
        return out

    def flat_adjacency(self):
        """Full adjacency in CSR form (indices, indptr), cached."""
        key = ("all",)
        if key not in self._flat:
            indptr = np.concatenate(([0], np.cumsum(self.degrees)))
            indices = (
                np.concatenate(self.adjacency)
                if self.num_nodes and indptr[-1] > 0
                else np.empty(0, dtype=np.int64)
            )
            self._flat[key] = (indices.astype(np.int64), indptr.astype(np.int64))
        return self._flat[key]

    def __repr__(self):
        m = int(self.degrees.sum()) // 2
        return f"Network(num_nodes={self.num_nodes}, num_edges={m})"


def load_network(edge_list, num_nodes, clusters=None, edge_weights=None, ranked=None):
    """Build a canonical Network from an iterable of (i, j) pairs.

    Pairs may appear in either order and may repeat; duplicates are dropped.
    Self-loops and out-of-range indices raise InputError.
    """
    n = int(num_nodes)
    if n <= 0:
        raise InputError("num_nodes must be positive")
    seen = set()
    for pair in edge_list:
        i, j = int(pair[0]), int(pair[1])
        if i == j:
            raise InputError(f"self-loop at node {i}")
        if not (0 <= i < n and 0 <= j < n):
            raise InputError(f"edge ({i},{j}) out of range for {n} nodes")
        seen.add((min(i, j), max(i, j)))
    nbrs = [[] for _ in range(n)]
    for i, j in seen:
        nbrs[i].append(j)
        nbrs[j].append(i)
    adjacency = [np.array(sorted(a), dtype=np.int64) for a in nbrs]
    if clusters is not None:
        clusters = np.asarray(clusters, dtype=np.int64)
        if clusters.shape != (n,):
            raise InputError("clusters must have one label per node")
    if ranked is not None:
        ranked = [np.asarray(r, dtype=np.int64) for r in ranked]
        if len(ranked) != n:
            raise InputError("ranked friend lists must cover every node")
    weights = None
    if edge_weights is not None:
        weights = {}
        for pair, w in edge_weights.items():
            i, j = min(pair), max(pair)
            if (i, j) not in seen:
                raise InputError(f"weight given for missing edge ({i},{j})")
            if w < 0:
                raise InputError("edge weights must be nonnegative")
            weights[(i, j)] = float(w)
    return Network(n, adjacency, edge_weights=weights, cluster_id=clusters, ranked=ranked)


@dataclass
class CovariateFrame:
    """Named per-node columns, each tagged individual or neighborhood kind."""

    columns: dict = field(default_factory=dict)
    kinds: dict = field(default_factory=dict)
    imputed: dict = field(default_factory=dict)  # column -> bool mask of imputed rows

    @property
    def n(self):
        for v in self.columns.values():
            return len(v)
        return 0

    def __getitem__(self, name):
        try:
            return self.columns[name]
        except KeyError:
            raise InputError(f"unknown covariate column {name!r}") from None

    def names(self):
        return list(self.columns)

    def add(self, name, values, kind="individual", imputed=None):
        values = np.asarray(values, dtype=np.float64)
        if self.columns and len(values) != self.n:
            raise InputError(f"column {name!r} has length {len(values)}, expected {self.n}")
        if not np.all(np.isfinite(values)):
            raise InputError(f"column {name!r} contains non-finite values")
        self.columns[name] = values
        self.kinds[name] = kind
        if imputed is not None:
            self.imputed[name] = np.asarray(imputed, dtype=bool)
        return self

    def matrix(self, names):
        """Stack the named columns as an (n, len(names)) float matrix."""
        return np.column_stack([self[c] for c in names]) if names else np.empty((self.n, 0))

    def take(self, idx):
        """Row subset (used by resampling); keeps kinds and imputation flags."""
        out = CovariateFrame()
        for name, vals in self.columns.items():
            out.columns[name] = vals[idx]
            out.kinds[name] = self.kinds[name]
            if name in self.imputed:
                out.imputed[name] = self.imputed[name][idx]
        return out

    def copy(self):
        return self.take(np.arange(self.n))


@dataclass(frozen=True)
class ExposureSpec:
    """How neighbor treatments collapse into the scalar exposure G_i.

    kind: proportion_top_k | count_all | proportion_all | weighted_sum
    k: designated-friend count for proportion_top_k
    tie_rule: top-k selection order; "ranked_else_index" uses the stored ranked
        friend list when present, ascending node index otherwise
    isolated_policy: "drop" leaves G undefined for isolated nodes, "treat_as_zero"
        sets it to 0
    """

    kind: str = "proportion_top_k"
    k: int = 5
    tie_rule: str = "ranked_else_index"
    isolated_policy: str = "drop"

    def __post_init__(self):
        if self.kind not in ("proportion_top_k", "count_all", "proportion_all", "weighted_sum"):
            raise ConfigError(f"unknown exposure kind {self.kind!r}")
        if self.kind == "proportion_top_k" and self.k < 1:
            raise ConfigError("proportion_top_k needs k >= 1")
        if self.isolated_policy not in ("drop", "treat_as_zero"):
            raise ConfigError(f"unknown isolated_policy {self.isolated_policy!r}")

    @property
    def is_count(self):
        return self.kind == "count_all"


def designated_neighbors(net, spec):
    """Per-node neighbor set the exposure depends on.

    For proportion_top_k this is the first min(k, N_i) friends under the tie
    rule; for the other kinds the full neighbor list.
    """
    if spec.kind != "proportion_top_k":
        return list(net.adjacency)
    out = []
    for i in range(net.num_nodes):
        nbrs = net.adjacency[i]
        m = min(spec.k, len(nbrs))
        if net.ranked is not None and spec.tie_rule == "ranked_else_index":
            have = set(nbrs.tolist())
            ranked = [j for j in net.ranked[i].tolist() if j in have]
            if len(ranked) < m:  # pad with remaining neighbors by index
                left = [j for j in nbrs.tolist() if j not in set(ranked)]
                ranked += left
            out.append(np.array(ranked[:m], dtype=np.int64))
        else:
            out.append(nbrs[:m])  # already sorted ascending
    return out


def _flat_designated(net, spec):
    key = (spec.kind, spec.k if spec.kind == "proportion_top_k" else None, spec.tie_rule)
    if key not in net._flat:
        sets = designated_neighbors(net, spec)
        sizes = np.array([len(s) for s in sets], dtype=np.int64)
        indptr = np.concatenate(([0], np.cumsum(sizes)))
        indices = (
            np.concatenate(sets) if indptr[-1] > 0 else np.empty(0, dtype=np.int64)
        )
        net._flat[key] = (indices.astype(np.int64), indptr, sizes)
    return net._flat[key]


def exposure_trials(net, spec):
    """Trial count m_i of the exposure's binomial support per node."""
    if spec.kind == "proportion_top_k":
        return np.minimum(net.degrees, spec.k).astype(np.int64)
    return net.degrees.copy()


def exposure(net, z, spec):
    """Compute (g, defined_mask) for the treatment vector z under spec."""
    z = np.asarray(z)
    if z.shape != (net.num_nodes,):
        raise InputError("z must have one entry per node")
    if not np.isin(z, (0, 1)).all():
        raise InputError("z entries must be 0 or 1")
    z = z.astype(np.float64)
    if spec.kind == "weighted_sum":
        if net.edge_weights is None:
            raise ConfigError("weighted_sum exposure requires edge weights on the network")
        indices, indptr = net.flat_adjacency()
        owners = np.repeat(np.arange(net.num_nodes), net.degrees)
        w = np.array(
            [net.edge_weights[(min(i, j), max(i, j))] for i, j in zip(owners, indices)]
        ) if len(indices) else np.empty(0)
        g = _segment_sums(w * z[indices], indptr)
    else:
        indices, indptr, sizes = _flat_designated(net, spec)
        treated = _segment_sums(z[indices], indptr)
        if spec.kind == "count_all":
            g = treated
        else:
            g = np.divide(treated, sizes, out=np.zeros(net.num_nodes), where=sizes > 0)
    defined = np.ones(net.num_nodes, dtype=bool)
    isolated = net.degrees == 0
    if spec.isolated_policy == "drop":
        defined[isolated] = False
        g = g.copy()
        g[isolated] = np.nan
    else:
        g[isolated] = 0.0
    return g, defined


_AGGREGATORS = ("mean", "sum", "count_equal_to_self", "degree")


def neighborhood_covariates(net, cov, aggregators):
    """Extend cov with neighborhood-kind columns from the given aggregators.

    aggregators: list of (source_column, function) with function in
    {mean, sum, count_equal_to_self, degree}. Isolated nodes get the population
    mean for mean aggregates (flagged in cov.imputed) and 0 for the others.
    """
    if cov.n != net.num_nodes:
        raise InputError("network and covariates disagree on the number of nodes")
    out = cov.copy()
    isolated = net.degrees == 0
    indices, indptr = net.flat_adjacency()
    for source, func in aggregators:
        if func not in _AGGREGATORS:
            raise InputError(f"unknown aggregator {func!r}")
        if func == "degree":
            out.add("degree", net.degrees.astype(np.float64), kind="neighborhood")
            continue
        if cov.kinds.get(source) != "individual":
            raise InputError(f"source column {source!r} missing or not individual-kind")
        vals = cov[source]
        if func == "count_equal_to_self":
            own = np.repeat(vals, net.degrees)
            agg = _segment_sums((vals[indices] == own).astype(np.float64), indptr)
        else:
            agg = _segment_sums(vals[indices], indptr)
            if func == "mean":
                agg = np.divide(
                    agg, net.degrees, out=np.zeros(net.num_nodes), where=net.degrees > 0
                )
        imputed = None
        if func == "mean" and isolated.any():
            agg[isolated] = vals.mean()
            imputed = isolated
            warnings.warn(
                f"isolated nodes got the population mean of {source!r}",
                EstimationWarning,
                stacklevel=2,
            )
        name = f"friends.{source}" if func == "mean" else f"friends.{func}.{source}"
        out.add(name, agg, kind="neighborhood", imputed=imputed)
    return out


# file formats: edge list "i j" or "i,j" per line with '#' comments; covariates
# as delimited text with a header row; ranked friends "i: j1 j2 ... jk"

def read_edges(path):
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise InputError(f"{path}:{lineno}: expected 'i j' or 'i,j'")
            edges.append((int(parts[0]), int(parts[1])))
    return edges


def write_edges(path, net):
    with open(path, "w") as fh:
        fh.write("# i j\n")
        for i, j in sorted(net.edges):
            fh.write(f"{i} {j}\n")


def read_covariates(path, delimiter=","):
    """Covariates file: header row of names, one row per node in index order."""
    with open(path) as fh:
        header = fh.readline().strip().split(delimiter)
        rows = [line.strip().split(delimiter) for line in fh if line.strip()]
    cov = CovariateFrame()
    data = np.array(rows, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InputError(f"{path}: rows do not match header width")
    for idx, name in enumerate(header):
        kind = "neighborhood" if name.startswith(("friends.", "degree")) else "individual"
        cov.add(name.strip(), data[:, idx], kind=kind)
    return cov


def write_covariates(path, cov, delimiter=","):
    names = cov.names()
    mat = cov.matrix(names)
    with open(path, "w") as fh:
        fh.write(delimiter.join(names) + "\n")
        for row in mat:
            fh.write(delimiter.join(repr(float(v)) for v in row) + "\n")


def read_ranked_friends(path, num_nodes):
    ranked = [np.empty(0, dtype=np.int64) for _ in range(num_nodes)]
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            head, _, tail = line.partition(":")
            try:
                i = int(head)
            except ValueError:
                raise InputError(f"{path}:{lineno}: expected 'i: j1 j2 ...'") from None
            if not (0 <= i < num_nodes):
                raise InputError(f"{path}:{lineno}: node {i} out of range")
            ranked[i] = np.array([int(t) for t in tail.split()], dtype=np.int64)
    return ranked


def write_ranked_friends(path, ranked):
    with open(path, "w") as fh:
        fh.write("# i: j1 j2 ...\n")
        for i, friends in enumerate(ranked):
            fh.write(f"{i}: " + " ".join(str(int(j)) for j in friends) + "\n")
