"""gquilt command-line interface."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import io
from .estimators import bootstrap_band, compare_graphs, threshold_edges
from .gqlasso import SolverError, fit_path, gqlasso_fit
from .madgq import NotCompletableError
from .reco import reco_known_diag, reco_unknown_diag
from .scheme import PartialCovariance, SchemeError, observed_covariance, scheme_from_mask
from .simlab import SimConfig, sim_auc, sim_rates

log = logging.getLogger("gquilt")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_INTERNAL = 0, 2, 3, 4


@dataclass
class RunManifest:
    command: list[str]
    version: str = __version__
    seed: Optional[int] = None
    config_digest: Optional[str] = None
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    status: str = "ok"

    def add_input(self, path) -> None:
        if path is not None:
            self.inputs[str(path)] = io.file_digest(path)

    def write(self, out_dir: Path) -> None:
        io.write_json(out_dir / "manifest.json", asdict(self))


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_cov(args, man: RunManifest) -> PartialCovariance:
    """Observed covariance from --data (pairwise-complete) or --cov (matrix with empty cells)."""
    scheme = io.read_scheme_json(args.scheme) if args.scheme else None
    man.add_input(args.scheme)
    if args.data:
        man.add_input(args.data)
        data = io.read_data_csv(args.data, header=args.header)
        return observed_covariance(data, scheme.subsets if scheme else None)
    if args.cov:
        man.add_input(args.cov)
        m = io.read_matrix_csv(args.cov)
        if scheme is None:
            scheme = scheme_from_mask(np.isfinite(m))
        elif scheme.p != m.shape[0]:
            raise SchemeError(f"scheme has p={scheme.p} but the covariance is {m.shape[0]}x{m.shape[0]}")
        if not np.isfinite(m[scheme.observed]).all():
            raise SchemeError("covariance has empty cells inside the observed set")
        return PartialCovariance(m, scheme)
    raise SchemeError("give --data or --cov")


# ---------------------------------------------------------------- commands

def cmd_cov(args, man: RunManifest) -> int:
    out = _out_dir(args)
    cov = _load_cov(args, man)
    io.write_matrix_csv(out / "cov.csv", cov.values, cov.mask)
    io.write_counts_json(out / "counts.json", cov)
    man.outputs += ["cov.csv", "counts.json"]
    return EXIT_OK


def cmd_fit(args, man: RunManifest) -> int:
    out = _out_dir(args)
    man.seed = args.seed
    cov = _load_cov(args, man)
    kw = {"tol": args.tol, "max_iter": args.max_iter, "strict": False}
    if args.lambda_grid:
        lams = [float(x) for x in args.lambda_grid.split(",") if x.strip()]
        path = fit_path(cov, lams, **kw)
    else:
        est, rep = gqlasso_fit(cov, args.lam, **kw)
        path = [(args.lam, est, rep)]
    reports, ok = [], True
    for k, (lam, est, rep) in enumerate(path):
        tag = "" if len(path) == 1 else f"_{k}"
        io.write_matrix_csv(out / f"theta{tag}.csv", est.theta)
        io.write_json(out / f"edges{tag}.json", io.edges_json(threshold_edges(est, args.tau)))
        reports.append({"lambda": lam, "files": [f"theta{tag}.csv", f"edges{tag}.json"], **rep.to_dict()})
        man.outputs += [f"theta{tag}.csv", f"edges{tag}.json"]
        ok &= rep.converged
    io.write_json(out / "report.json", reports if len(reports) > 1 else reports[0])
    man.outputs.append("report.json")
    if not ok:
        man.status = "not_converged"
        print("solver did not converge; see report.json", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_reco(args, man: RunManifest) -> int:
    out = _out_dir(args)
    man.seed = args.seed
    man.add_input(args.theta)
    man.add_input(args.scheme)
    theta = io.read_matrix_csv(args.theta)
    if not np.isfinite(theta).all():
        raise SchemeError("precision matrix has empty cells")
    scheme = io.read_scheme_json(args.scheme)
    if scheme.p != theta.shape[0]:
        raise SchemeError("scheme and precision matrix disagree on p")
    if args.diag:
        man.add_input(args.diag)
        res = reco_known_diag(theta, scheme, io.read_vector_csv(args.diag), args.xi, args.slack)
    else:
        if args.bootstrap:
            if not (args.data and args.lam is not None and args.nu is not None):
                raise SchemeError("--bootstrap needs --data, --lambda and --nu")
            man.add_input(args.data)
            data = io.read_data_csv(args.data, header=args.header)
            xi1, xi2 = bootstrap_band(data, scheme.subsets, args.lam, args.nu, args.bootstrap, args.seed, args.pcor)
        else:
            xi1 = args.xi1
            xi2 = args.xi2 if args.xi2 is not None else args.nu
            if xi2 is None:
                raise SchemeError("give --xi2 or --nu (or --diag for the known-diagonal variant)")
        res = reco_unknown_diag(theta, scheme, xi1, xi2, args.slack, args.pcor)
        res.info.update({"xi1": xi1, "xi2": xi2})
    io.write_json(out / "reco.json", res.to_dict(one_based=True))
    man.outputs.append("reco.json")
    return EXIT_OK


def cmd_evaluate(args, man: RunManifest) -> int:
    out = _out_dir(args)
    man.add_input(args.estimate)
    man.add_input(args.truth)
    est, truth = io.read_edges_json(args.estimate), io.read_edges_json(args.truth)
    restrict = None
    if args.scheme:
        man.add_input(args.scheme)
        scheme = io.read_scheme_json(args.scheme)
        restrict = {"O": scheme.observed, "Oc": ~scheme.observed, "all": None}[args.region]
    elif args.region != "all":
        raise SchemeError("--region needs --scheme")
    io.write_json(out / "metrics.json", compare_graphs(est, truth, restrict).to_dict())
    man.outputs.append("metrics.json")
    return EXIT_OK


def cmd_threshold(args, man: RunManifest) -> int:
    out = _out_dir(args)
    man.add_input(args.theta)
    theta = io.read_matrix_csv(args.theta)
    restrict = None
    if args.scheme:
        man.add_input(args.scheme)
        restrict = io.read_scheme_json(args.scheme).observed
    io.write_json(out / "edges.json", io.edges_json(threshold_edges(np.nan_to_num(theta), args.tau, restrict)))
    man.outputs.append("edges.json")
    return EXIT_OK


def cmd_simulate(args, man: RunManifest) -> int:
    out = _out_dir(args)
    man.add_input(args.config)
    raw = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    cfg = SimConfig.from_dict(raw)
    man.seed = cfg.seed
    man.config_digest = config_digest({k: v for k, v in cfg.to_dict().items() if k != "workers"})
    res = (sim_rates if args.study == "rates" else sim_auc)(cfg)
    io.write_table_csv(out / f"{args.study}_replicates.csv", res.replicates)
    io.write_table_csv(out / f"{args.study}_summary.csv", res.summary)
    io.write_table_csv(out / f"{args.study}_instances.csv", res.instances)
    man.outputs += [f"{args.study}_{s}.csv" for s in ("replicates", "summary", "instances")]
    if res.fit:
        io.write_table_csv(out / f"{args.study}_fit.csv",
                           [{"cell": k, **v} for k, v in res.fit.items()])
        man.outputs.append(f"{args.study}_fit.csv")
    man.timings.update(res.timings)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gquilt", description="Graph quilting: graphical models from partially "
                                 "co-observed variables.")
    ap.add_argument("--version", action="version", version=f"gquilt {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--out-dir", default=".", help="directory for outputs and manifest.json")
        if data:
            sp.add_argument("--data", help="sample CSV; empty cell = unobserved")
            sp.add_argument("--header", action="store_true", help="the data CSV has a header row")
        return sp

    sp = common(sub.add_parser("cov", help="pairwise-complete covariance and joint counts"))
    sp.add_argument("--scheme", help="scheme JSON {p, subsets} (1-based); inferred from empty cells if absent")
    sp.set_defaults(func=cmd_cov, cov=None)

    sp = common(sub.add_parser("fit", help="penalised log-det fit restricted to observed pairs"))
    sp.add_argument("--cov", help="covariance CSV with empty cells outside the observed set")
    sp.add_argument("--scheme", help="scheme JSON; inferred from missingness if absent")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--lambda", dest="lam", type=float, help="off-diagonal penalty")
    g.add_argument("--lambda-grid", help="comma-separated penalties, fitted with warm starts")
    sp.add_argument("--tau", type=float, default=0.0, help="edge threshold for edges.json (default 0)")
    sp.add_argument("--tol", type=float, default=1e-7, help="relative KKT tolerance")
    sp.add_argument("--max-iter", type=int, default=20000, help="iteration cap")
    sp.add_argument("--seed", type=int, default=0, help="recorded in the manifest; the fit is deterministic")
    sp.set_defaults(func=cmd_fit)

    sp = common(sub.add_parser("reco", help="candidate edges among never co-observed pairs"))
    sp.add_argument("theta", help="precision CSV")
    sp.add_argument("--scheme", required=True, help="scheme JSON with the observed subsets")
    sp.add_argument("--diag", help="CSV of the true diagonal; selects the known-diagonal algorithm")
    sp.add_argument("--xi", type=float, default=0.0, help="known-diagonal margin")
    sp.add_argument("--xi1", type=float, default=0.0, help="lower band edge (unknown diagonal)")
    sp.add_argument("--xi2", type=float, help="upper band edge (unknown diagonal); defaults to --nu")
    sp.add_argument("--nu", type=float, help="smallest edge magnitude in the observed set")
    sp.add_argument("--pcor", action="store_true", help="apply the band to partial correlations")
    sp.add_argument("--slack", type=float, default=0.0, help="absolute slack on strict inequalities")
    sp.add_argument("--bootstrap", type=int, metavar="B", help="set (xi1, xi2) from B bootstrap refits")
    sp.add_argument("--lambda", dest="lam", type=float, help="penalty for bootstrap refits")
    sp.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    sp.set_defaults(func=cmd_reco)

    sp = common(sub.add_parser("evaluate", help="compare an estimated edge list with the truth"), data=False)
    sp.add_argument("estimate", help="edge-list JSON {p, edges} (1-based)")
    sp.add_argument("truth", help="edge-list JSON")
    sp.add_argument("--scheme", help="scheme JSON used to restrict the comparison")
    sp.add_argument("--region", choices=("all", "O", "Oc"), default="all", help="pairs to compare")
    sp.set_defaults(func=cmd_evaluate)

    sp = common(sub.add_parser("threshold", help="edges with |theta_ij| > tau"), data=False)
    sp.add_argument("theta", help="precision CSV")
    sp.add_argument("--tau", type=float, required=True, help="threshold")
    sp.add_argument("--scheme", help="keep only observed pairs of this scheme")
    sp.set_defaults(func=cmd_threshold)

    sp = common(sub.add_parser("simulate", help="simulation studies"), data=False)
    sp.add_argument("study", choices=("rates", "auc"), help="convergence rates or graph-recovery AUC")
    sp.add_argument("--config", required=True, help="simulation config JSON")
    sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
    sp.add_argument("--workers", type=int, help="worker processes (does not change results)")
    sp.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    man = RunManifest(["gquilt", *argv])
    t0 = time.perf_counter()
    try:
        code = args.func(args, man)
    except (SchemeError, ValueError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        man.status, code = f"input_error: {exc}", EXIT_INPUT
    except (SolverError, NotCompletableError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        man.status, code = f"solver_error: {exc}", EXIT_SOLVER
    except Exception as exc:  # pragma: no cover - invariant breach
        log.exception("internal error")
        man.status, code = f"internal_error: {exc!r}", EXIT_INTERNAL
    man.timings["wall_seconds"] = time.perf_counter() - t0
    try:
        man.write(_out_dir(args))
    except OSError as exc:
        print(f"could not write manifest: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
