"""Synthetic instances (graph families, precision matrices, chained schemes, samplers) and simulation studies."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Optional, Sequence

import networkx as nx
import numpy as np
from scipy import stats

from .edges import EdgeSet
from .estimators import roc_auc, roc_points
from .gqlasso import SolverError, fit_path
from .madgq import PrecisionEstimate, madgq_complete
from .reco import band_levels, diag_maxima, subset_complements
from .scheme import (IndicatorData, ObservationScheme, PartialCovariance, SchemeError, build_scheme,
                     min_joint_sample_size, missingness_ratio, observed_covariance,
                     observed_covariance_from_moments)

log = logging.getLogger(__name__)

FAMILIES = ("chain", "loop", "star", "tree", "spatial", "erdos_renyi", "barabasi_albert", "spatial_random")
PD_RETRY_CAP = 20
SWEEP_SLACK = 1e-12  # relative magnitude below which a complement entry counts as a round-off zero


def make_rng(master: int, *keys: int) -> np.random.Generator:
    """Generator for one (cell, replicate, ...) key, independent of evaluation order."""
    return np.random.default_rng(np.random.SeedSequence([int(master) & 0xFFFFFFFF, *[int(k) for k in keys]]))


# ---------------------------------------------------------------- graphs

@dataclass(frozen=True)
class GraphModelSpec:
    family: str
    p: int
    prob: Optional[float] = None       # erdos_renyi
    p0: Optional[int] = None           # barabasi_albert
    radius: Optional[float] = None     # spatial
    decay: Optional[float] = None      # spatial_random, f(x) = exp(-decay * x)
    hubs: int = 1                      # star
    positions: Optional[tuple[tuple[float, float], ...]] = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.p < 2:
            raise ValueError("p must be at least 2")
        need = {"erdos_renyi": "prob", "barabasi_albert": "p0", "spatial": "radius", "spatial_random": "decay"}
        if self.family in need and getattr(self, need[self.family]) is None:
            raise ValueError(f"{self.family} needs parameter {need[self.family]!r}")
        if self.prob is not None and not 0 <= self.prob <= 1:
            raise ValueError("prob must lie in [0, 1]")
        if self.p0 is not None and not 1 <= self.p0 < self.p:
            raise ValueError("p0 must satisfy 1 <= p0 < p")
        if self.radius is not None and self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.decay is not None and self.decay <= 0:
            raise ValueError("decay must be positive")
        if not 1 <= self.hubs < self.p:
            raise ValueError("hubs must satisfy 1 <= hubs < p")
        if self.positions is not None and len(self.positions) != self.p:
            raise ValueError("need one position per node")

    @classmethod
    def from_dict(cls, d: dict) -> "GraphModelSpec":
        d = dict(d)
        if d.get("positions") is not None:
            d["positions"] = tuple(tuple(map(float, w)) for w in d["positions"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _positions(spec: GraphModelSpec, rng) -> np.ndarray:
    if spec.positions is not None:
        return np.asarray(spec.positions, dtype=float)
    return rng.uniform(size=(spec.p, 2))


def generate_graph(spec: GraphModelSpec) -> EdgeSet:
    p = spec.p
    rng = make_rng(spec.seed, 0)
    fam = spec.family
    if fam == "chain":
        pairs = [(i, i + 1) for i in range(p - 1)]
    elif fam == "loop":
        pairs = [(i, i + 1) for i in range(p - 1)] + ([(0, p - 1)] if p > 2 else [])
    elif fam == "star":
        pairs = [(h, j) for h in range(spec.hubs) for j in range(spec.hubs, p)]
    elif fam == "tree":
        pairs = [((i - 1) // 2, i) for i in range(1, p)]
    elif fam in ("spatial", "spatial_random"):
        w = _positions(spec, rng)
        dist = np.sqrt(((w[:, None, :] - w[None, :, :]) ** 2).sum(-1))
        if fam == "spatial":
            adj = dist < spec.radius
        else:
            adj = rng.uniform(size=(p, p)) < np.exp(-spec.decay * dist)
        i, j = np.nonzero(np.triu(adj, 1))
        pairs = zip(i.tolist(), j.tolist())
    elif fam == "erdos_renyi":
        pairs = nx.gnp_random_graph(p, spec.prob, seed=int(rng.integers(2 ** 31))).edges()
    else:  # barabasi_albert
        pairs = nx.barabasi_albert_graph(p, spec.p0, seed=int(rng.integers(2 ** 31))).edges()
    return EdgeSet.from_pairs(p, pairs)


# ---------------------------------------------------------------- precision matrices

@dataclass(frozen=True)
class PrecisionDraw:
    theta: PrecisionEstimate
    edges: EdgeSet             # support after the node permutation
    permutation: np.ndarray    # new index of old node i is permutation[i]
    n_positive: int
    attempts: int


def build_precision(edges: EdgeSet, seed: int, magnitude: Optional[float] = None, positive_share: float = 0.25,
                    permute: bool = True, max_retries: int = PD_RETRY_CAP) -> PrecisionDraw:
    """Unit diagonal, off-diagonals +-magnitude (default 1/p) with random signs, then a random relabelling."""
    p = edges.p
    if p < 2:
        raise ValueError("p must be at least 2")
    mag = 1.0 / p if magnitude is None else float(magnitude)
    pairs = np.array(sorted(edges.edges), dtype=int).reshape(-1, 2)
    for attempt in range(1, max_retries + 1):
        rng = make_rng(seed, attempt)
        pos = rng.uniform(size=len(pairs)) < positive_share
        theta = np.eye(p)
        vals = np.where(pos, mag, -mag)
        theta[pairs[:, 0], pairs[:, 1]] = vals
        theta[pairs[:, 1], pairs[:, 0]] = vals
        if np.linalg.eigvalsh(theta)[0] > 1e-10:
            break
    else:
        raise ArithmeticError(f"no positive definite draw in {max_retries} attempts; the graph is too dense")
    perm = rng.permutation(p) if permute else np.arange(p)
    out = np.empty_like(theta)
    out[np.ix_(perm, perm)] = theta
    new_edges = EdgeSet.from_pairs(p, ((perm[i], perm[j]) for i, j in pairs))
    return PrecisionDraw(PrecisionEstimate(out), new_edges, perm, int(pos.sum()), attempt)


def precision_from_graph(edges: EdgeSet, seed: int = 0, **kw) -> PrecisionEstimate:
    return build_precision(edges, seed, **kw).theta


# ---------------------------------------------------------------- observation schemes

def chained_scheme(p: int, K: int, q0: int) -> ObservationScheme:
    """K overlapping windows of about q0 consecutive nodes sweeping 1..p."""
    if K < 2:
        raise ValueError("K must be at least 2")
    if not (p / K < q0 < p):
        raise ValueError(f"need p/K < q0 < p (got p={p}, K={K}, q0={q0})")
    subsets = []
    for k in range(1, K + 1):
        shift = (k - 1) * (p - q0)
        lo = 1 + shift // (K - 1)
        hi = q0 + -(-shift // (K - 1))
        subsets.append(range(lo - 1, hi))
    return build_scheme(p, subsets)


def q0_for_eta(p: int, K: int, eta: float) -> int:
    """Window length whose chained scheme has missingness ratio closest to ``eta``."""
    cands = [q for q in range(math.floor(p / K) + 1, p) if q > p / K]
    if not cands:
        raise ValueError("no admissible q0")
    return min(cands, key=lambda q: (abs(missingness_ratio(chained_scheme(p, K, q)) - eta), -q))


def audit_instance(theta: PrecisionEstimate, scheme: ObservationScheme) -> dict:
    """Structural checks for a generated instance: coverage, missingness, degree."""
    covered = frozenset().union(*scheme.subsets) if scheme.has_subsets else frozenset(
        np.nonzero(np.diagonal(scheme.observed))[0].tolist())
    return {
        "pd": theta.is_pd(),
        "covered": covered == frozenset(range(scheme.p)),
        "eta": missingness_ratio(scheme),
        "max_degree": int(theta.support.degrees().max(initial=0)),
        "edges_in_Oc": sum(1 for e in theta.support if not scheme.observed[e]),
    }


# ---------------------------------------------------------------- samplers

def _allocation(n: int, K: int) -> np.ndarray:
    return np.arange(n) % K


def _allocation_counts(n: int, K: int) -> np.ndarray:
    """Rows per subset under round-robin assignment."""
    return np.array([n // K + (k < n % K) for k in range(K)], dtype=np.int64)


def sample_gaussian(theta: PrecisionEstimate, scheme: ObservationScheme, n: int, seed: int) -> IndicatorData:
    """n draws of N(0, Theta^{-1}); row r observes only V_{r mod K}."""
    if not scheme.has_subsets:
        raise SchemeError("sampling needs the subsets V_1..V_K")
    if frozenset().union(*scheme.subsets) != frozenset(range(scheme.p)):
        raise SchemeError("some variable belongs to no subset")
    t = theta.theta if isinstance(theta, PrecisionEstimate) else np.asarray(theta, dtype=float)
    c = np.linalg.cholesky(t)  # Theta = L L^T  =>  x = L^{-T} z has covariance Theta^{-1}
    z = make_rng(seed).standard_normal((n, scheme.p))
    x = np.linalg.solve(c.T, z.T).T
    ind = np.zeros((n, scheme.p), dtype=bool)
    for k, vk in enumerate(scheme.subsets):
        rows = _allocation(n, len(scheme.subsets)) == k
        ind[np.ix_(rows, sorted(vk))] = True
    return IndicatorData(np.where(ind, x, 0.0), ind)


def sample_covariance_moments(theta: PrecisionEstimate, scheme: ObservationScheme, n: int, seed: int
                              ) -> PartialCovariance:
    """Pairwise-complete covariance with the same law as for ``sample_gaussian`` output.

    Draws each subset's sample mean and scatter matrix directly (normal and
    Wishart), so the cost does not grow with n.
    """
    if not scheme.has_subsets:
        raise SchemeError("sampling needs the subsets V_1..V_K")
    t = theta.theta if isinstance(theta, PrecisionEstimate) else np.asarray(theta, dtype=float)
    sigma = np.linalg.inv(t)
    sigma = 0.5 * (sigma + sigma.T)
    rng = make_rng(seed)
    alloc = _allocation_counts(n, len(scheme.subsets))
    blocks = []
    for vk, nk in zip(scheme.subsets, alloc):
        idx = sorted(vk)
        if nk == 0:
            continue
        s = sigma[np.ix_(idx, idx)]
        mean = rng.multivariate_normal(np.zeros(len(idx)), s / nk)
        if nk - 1 >= len(idx):
            w = stats.wishart(df=int(nk - 1), scale=s).rvs(random_state=rng)
            w = np.atleast_2d(w)
        else:
            z = rng.multivariate_normal(np.zeros(len(idx)), s, size=int(nk - 1))
            w = z.T @ z
        blocks.append((idx, int(nk), nk * mean, w + nk * np.outer(mean, mean)))
    return observed_covariance_from_moments(scheme.p, blocks, scheme.subsets)


# ---------------------------------------------------------------- simulation studies

@dataclass(frozen=True)
class SimConfig:
    graph: GraphModelSpec
    p_grid: tuple[int, ...]
    n_grid: tuple[int, ...]
    eta_grid: tuple[float, ...] = (0.1,)
    K: int = 3
    replicates: int = 20
    lambda_multipliers: tuple[float, ...] = ()
    n_lambda: int = 30
    quantile: float = 90.0
    seed: int = 0
    sampler: str = "rows"
    families: tuple[GraphModelSpec, ...] = ()
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.p_grid or not self.n_grid or not self.eta_grid:
            raise ValueError("grids must be nonempty")
        if self.sampler not in ("rows", "moments"):
            raise ValueError("sampler must be 'rows' or 'moments'")
        if not 0 < self.quantile <= 100:
            raise ValueError("quantile must lie in (0, 100]")
        if self.K < 2:
            raise ValueError("K must be at least 2")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        graph = d.pop("graph")
        fams = d.pop("families", ())
        if isinstance(graph, dict):
            graph = GraphModelSpec.from_dict({"p": d["p_grid"][0], **graph})
        fams = tuple(f if isinstance(f, GraphModelSpec) else GraphModelSpec.from_dict({"p": d["p_grid"][0], **f})
                     for f in fams)
        for key in ("p_grid", "n_grid", "eta_grid", "lambda_multipliers"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(graph=graph, families=fams, **d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["graph"] = self.graph.to_dict()
        d["families"] = [f.to_dict() for f in self.families]
        return d


@dataclass(frozen=True)
class Instance:
    draw: PrecisionDraw
    scheme: ObservationScheme
    theta_tilde: PrecisionEstimate
    q0: int


def make_instance(graph: GraphModelSpec, p: int, eta: float, K: int, seed: int) -> Instance:
    spec = replace(graph, p=p, seed=seed)
    draw = build_precision(generate_graph(spec), seed)
    q0 = q0_for_eta(p, K, eta)
    scheme = chained_scheme(p, K, q0)
    sigma = np.linalg.inv(draw.theta.theta)
    tt = madgq_complete(PartialCovariance.from_population(sigma, scheme))
    return Instance(draw, scheme, tt, q0)


def _sample_cov(inst: Instance, n: int, seed: int, sampler: str) -> PartialCovariance:
    if sampler == "moments":
        return sample_covariance_moments(inst.draw.theta, inst.scheme, n, seed)
    return observed_covariance(sample_gaussian(inst.draw.theta, inst.scheme, n, seed), inst.scheme.subsets)


def default_lambda_grid(n_bar: int, p: int, multipliers: Sequence[float] = (), n_lambda: int = 30) -> np.ndarray:
    """Log grid of penalties around sqrt(log p / n_bar)."""
    base = math.sqrt(math.log(p) / n_bar)
    mult = np.asarray(multipliers, dtype=float) if len(multipliers) else np.geomspace(0.02, 5.0, n_lambda)
    return base * mult


def _rates_task(args):
    cfg, inst, p, eta, n, rep, cell = args
    seed = int(make_rng(cfg.seed, cell, rep, 1).integers(2 ** 31))
    cov = _sample_cov(inst, n, seed, cfg.sampler)
    n_bar = min_joint_sample_size(cov.scheme)
    grid = default_lambda_grid(n_bar, p, cfg.lambda_multipliers, cfg.n_lambda)
    ref = inst.theta_tilde.theta
    try:
        path = fit_path(cov, grid)
    except SolverError as exc:
        return {"p": p, "eta": eta, "n": n, "replicate": rep, "n_bar": n_bar, "lambda_star": "",
                "loss": "", "status": f"solver_failure: {exc}"}
    best = None
    for lam, est, _ in path:  # descending lambda; strict improvement breaks ties toward larger lambda
        loss = float(np.abs(est.theta - ref).max())
        if best is None or loss < best[1]:
            best = (lam, loss)
    return {"p": p, "eta": eta, "n": n, "replicate": rep, "n_bar": n_bar,
            "lambda_star": best[0], "loss": best[1], "status": "ok"}


def _run(tasks, fn, workers):
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


@dataclass
class SimResult:
    replicates: list[dict]
    summary: list[dict]
    fit: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    instances: list[dict] = field(default_factory=list)


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Least squares of log y on log x for y = C x^{-beta}; returns (C, beta)."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    if lx.size < 2:
        raise ValueError("need at least two points to fit")
    slope, icept = np.polyfit(lx, ly, 1)
    return float(math.exp(icept)), float(-slope)


def sim_rates(cfg: SimConfig) -> SimResult:
    """Oracle-lambda max-norm losses over (p, eta, n) cells and the power-law fit of their quantile."""
    t0 = time.perf_counter()
    tasks, instances = [], []
    cell = 0
    for p in cfg.p_grid:
        for eta in cfg.eta_grid:
            inst = make_instance(cfg.graph, p, eta, cfg.K, int(make_rng(cfg.seed, p, int(eta * 1e6)).integers(2 ** 31)))
            instances.append({"p": p, "eta_target": eta, "q0": inst.q0, **audit_instance(inst.draw.theta, inst.scheme)})
            for n in cfg.n_grid:
                cell += 1
                tasks += [(cfg, inst, p, eta, n, r, cell) for r in range(cfg.replicates)]
    rows = _run(tasks, _rates_task, cfg.workers)
    summary, fit = [], {}
    for p in cfg.p_grid:
        for eta in cfg.eta_grid:
            xs, ys = [], []
            for n in cfg.n_grid:
                sel = [r for r in rows if r["p"] == p and r["eta"] == eta and r["n"] == n]
                ok = [r["loss"] for r in sel if r["status"] == "ok"]
                lq = float(np.percentile(ok, cfg.quantile)) if ok else float("nan")
                n_bar = sel[0]["n_bar"]
                summary.append({"p": p, "eta": eta, "n": n, "n_bar": n_bar, "x": n_bar / math.log(p),
                                "loss_q": lq, "ok": len(ok), "failed": len(sel) - len(ok)})
                if ok:
                    xs.append(n_bar / math.log(p))
                    ys.append(lq)
            if len(xs) >= 2:
                c, beta = fit_power_law(xs, ys)
                fit[f"p={p},eta={eta}"] = {"C": c, "beta": beta}
    return SimResult(rows, summary, fit, {"seconds": time.perf_counter() - t0}, instances)


def _auc_task(args):
    cfg, inst, family, eta, n, rep, cell = args
    seed = int(make_rng(cfg.seed, cell, rep, 2).integers(2 ** 31))
    cov = _sample_cov(inst, n, seed, cfg.sampler)
    scheme = inst.scheme
    p = scheme.p
    n_bar = min_joint_sample_size(cov.scheme)
    truth = inst.draw.edges
    obs = scheme.observed
    oc = ~scheme.observed
    true_diag = np.diagonal(inst.draw.theta.theta)
    grid = default_lambda_grid(n_bar, p, cfg.lambda_multipliers, cfg.n_lambda)
    try:
        path = fit_path(cov, grid)
    except SolverError as exc:
        return {"family": family, "eta": eta, "n": n, "replicate": rep, "n_bar": n_bar, "auc_O": "",
                "auc_Oc_S": "", "auc_Oc_U": "", "status": f"solver_failure: {exc}"}
    pts_o, pts_s, pts_u = [], [], []
    upper = np.triu(np.ones((p, p), dtype=bool), 1)
    cells_o, cells_oc = upper & obs, upper & oc
    lab = truth.to_matrix()
    for _, est, _ in path:
        th = est.theta
        # thresholding |theta| at every level
        pts_o.append(roc_points(np.abs(th[cells_o]), lab[cells_o]))
        comps = subset_complements(th, scheme)
        # known diagonal: sweeping xi flags nodes in decreasing order of their gap,
        # and a pair of O^c enters the candidate set once both endpoints are flagged
        gaps = true_diag - diag_maxima(comps, scheme)
        pts_s.append(roc_points(np.minimum.outer(gaps, gaps)[cells_oc], lab[cells_oc]))
        # unknown diagonal, xi1 = 0: node i is flagged once xi2 exceeds h_i, and a
        # pair enters once either endpoint is flagged
        h = band_levels(comps, scheme, slack=SWEEP_SLACK * np.abs(th).max())
        pts_u.append(roc_points(-np.minimum.outer(h, h)[cells_oc], lab[cells_oc]))
    row = {"family": family, "eta": eta, "n": n, "replicate": rep, "n_bar": n_bar}
    for key, pts in (("auc_O", pts_o), ("auc_Oc_S", pts_s), ("auc_Oc_U", pts_u)):
        pts = np.vstack(pts)
        row[key] = roc_auc(pts) if len(pts) else ""
    row["status"] = "ok"
    return row


def sim_auc(cfg: SimConfig) -> SimResult:
    """AUC in O and in O^c (known- and unknown-diagonal RECO) over (family, eta, n) cells."""
    t0 = time.perf_counter()
    families = cfg.families or (cfg.graph,)
    tasks, instances = [], []
    cell = 0
    for fi, fam in enumerate(families):
        label = fam.family
        for p in cfg.p_grid:
            for eta in cfg.eta_grid:
                seed = int(make_rng(cfg.seed, fi, p, int(eta * 1e6)).integers(2 ** 31))
                inst = make_instance(fam, p, eta, cfg.K, seed)
                instances.append({"family": label, "p": p, "eta_target": eta, "q0": inst.q0,
                                  **audit_instance(inst.draw.theta, inst.scheme)})
                for n in cfg.n_grid:
                    cell += 1
                    tasks += [(cfg, inst, label, eta, n, r, cell) for r in range(cfg.replicates)]
    rows = _run(tasks, _auc_task, cfg.workers)
    summary = []
    seen = []
    for r in rows:
        key = (r["family"], r["eta"], r["n"])
        if key not in seen:
            seen.append(key)
    for fam, eta, n in seen:
        sel = [r for r in rows if (r["family"], r["eta"], r["n"]) == (fam, eta, n)]
        ok = [r for r in sel if r["status"] == "ok"]
        out: dict[str, Any] = {"family": fam, "eta": eta, "n": n, "n_bar": sel[0]["n_bar"]}
        for key in ("auc_O", "auc_Oc_S", "auc_Oc_U"):
            vals = [r[key] for r in ok if r[key] != ""]
            out[key] = float(np.mean(vals)) if vals else ""
        out["ok"] = len(ok)
        out["failed"] = len(sel) - len(ok)
        summary.append(out)
    return SimResult(rows, summary, {}, {"seconds": time.perf_counter() - t0}, instances)
