"""Command-line front end.

Subcommands::

    congenial sample      raw Double Geometric or Laplace releases of a table
    congenial condition   invariant-respecting releases via the MIS chain
    congenial project     post-process releases onto the invariants
    congenial audit       exact privacy audit of a small scenario
    congenial experiment  {twobin, table, sweep}

All stochastic commands require ``--seed``; every output file carries the
configuration it was produced with.
"""

import argparse
import csv
import os
import sys

import numpy as np

from .audit import BUILTIN_SCENARIOS
from .experiments import (
    ExperimentConfig,
    load_table_and_system,
    metadata,
    run_audit,
    run_sweep,
    run_table_experiment,
    run_twobin,
    write_csv,
    write_json,
)
from .invariants import load_system
from .mechanisms import DOUBLE_GEOMETRIC, KINDS, NoiseMechanism
from .postprocess import L1_CONVEX, L2, NNL2, InvariantProjector
from .sampler import ProposalSpec, mis_chain, mis_sample


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, required=True, help="seed for the random stream")
    p.add_argument("--out", default=".", help="output directory (default: current)")


def _table_args(p):
    p.add_argument("--table", help="table CSV (default: the packaged sex-by-age table)")
    p.add_argument("--invariants", help="invariant system JSON (default: table totals)")


def build_parser():
    parser = argparse.ArgumentParser(prog="congenial", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="unconstrained noisy releases of a table")
    _common(p)
    _table_args(p)
    p.add_argument("--eps", type=float, default=1.0, help="per-cell privacy budget")
    p.add_argument("--kind", choices=KINDS, default=DOUBLE_GEOMETRIC)
    p.add_argument("--n", type=int, default=1, help="number of releases")

    p = sub.add_parser("condition", help="releases conditioned on the invariants (MIS)")
    _common(p)
    _table_args(p)
    p.add_argument("--eps", type=float, default=0.5, help="budget of the base mechanism")
    p.add_argument("--eps-proposal", type=float, default=None, help="proposal dispersion")
    p.add_argument("--nsim", type=int, default=10**5, help="chain length per release")
    p.add_argument("--burn-in", type=int, default=None, help="recorded burn-in for traces")
    p.add_argument("--n", type=int, default=1, help="number of releases (independent chains)")
    p.add_argument("--trace", action="store_true", help="also write the full trace of one chain")

    p = sub.add_parser("project", help="post-process releases onto the invariants")
    _common(p, seed=False)
    _table_args(p)
    p.add_argument("--input", required=True, help="releases CSV (one release per row)")
    p.add_argument("--norm", choices=(NNL2, L2, L1_CONVEX), default=NNL2)
    p.add_argument("--beta", type=float, default=None, help="weight for l1_convex")

    p = sub.add_parser("audit", help="exact privacy audit of a scenario")
    _common(p)
    p.add_argument("--scenario", default="twobin",
                   help=f"built-in ({', '.join(sorted(BUILTIN_SCENARIOS))}) or JSON file")
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--posterior-eps", type=_floats, default=(0.5, 1.0, 2.0),
                   help="comma-separated budgets for the posterior checks")

    p = sub.add_parser("experiment", help="reproduce an experiment")
    esub = p.add_subparsers(dest="experiment", required=True)

    e = esub.add_parser("twobin", help="two-bin means and variances")
    _common(e)
    e.add_argument("--eps", type=float, default=1.0)
    e.add_argument("--replicates", type=int, default=10**6)
    e.add_argument("--betas", type=_floats, default=(0.0, 0.25, 0.5, 0.75, 1.0))

    e = esub.add_parser("table", help="distance comparison over synthetic tables")
    _common(e)
    e.add_argument("--eps", type=float, default=1.0, help="higher raw budget")
    e.add_argument("--eps-low", type=float, default=0.5, help="lower raw / conditional budget")
    e.add_argument("--eps-proposal", type=float, default=0.6)
    e.add_argument("--nsim", type=int, default=10**5)
    e.add_argument("--tables", type=int, default=20)
    e.add_argument("--releases", type=int, default=100)

    e = esub.add_parser("sweep", help="acceptance rate over proposal dispersions")
    _common(e)
    _table_args(e)
    e.add_argument("--eps", type=float, default=0.5, help="budget of the base mechanism")
    e.add_argument("--grid", type=_floats, default=(0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0))
    e.add_argument("--nsim", type=int, default=10**5)
    e.add_argument("--burn-in", type=int, default=None)
    return parser


def _read_releases(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    cols = [i for i, h in enumerate(header) if h.startswith("cell_")]
    if not cols:
        raise ValueError("releases CSV needs cell_<i> columns")
    return np.array([[float(r[i]) for i in cols] for r in body])


def _release_rows(R):
    return ([i] + list(row) for i, row in enumerate(R))


def _cmd_sample(args):
    cfg = ExperimentConfig("sample", args.seed, epsilon=args.eps, table=args.table,
                           invariants=args.invariants, n_releases=args.n, out=args.out)
    table, _, _ = load_table_and_system(cfg)
    s = table.ravel()
    mech = NoiseMechanism(args.kind, args.eps)
    R = s + mech.sample((args.n, s.size), np.random.default_rng(args.seed))
    meta = metadata(cfg, kind=args.kind)
    path = os.path.join(args.out, "releases.csv")
    write_csv(path, ["release"] + [f"cell_{i}" for i in range(s.size)], _release_rows(R), meta)
    return path


def _cmd_condition(args):
    cfg = ExperimentConfig("condition", args.seed, epsilon_low=args.eps,
                           epsilon_proposal=args.eps_proposal or args.eps, nsim=args.nsim,
                           burn_in=args.burn_in, table=args.table, invariants=args.invariants,
                           n_releases=args.n, out=args.out)
    table, sys_, I = load_table_and_system(cfg)
    s = table.ravel()
    mech = NoiseMechanism.double_geometric(args.eps)
    proposal = ProposalSpec.like(mech, cfg.epsilon_proposal)
    rng = np.random.default_rng(args.seed)
    states, rates = mis_sample(mech, s, sys_, I=I, proposal=proposal, nsim=args.nsim,
                               n_chains=args.n, rng=rng)
    meta = metadata(cfg)
    path = os.path.join(args.out, "conditioned.csv")
    write_csv(path, ["release"] + [f"cell_{i}" for i in range(s.size)] + ["acceptance_rate"],
              ([i] + list(row) + [r] for i, (row, r) in enumerate(zip(states, rates))), meta)
    summary = {"mean_acceptance_rate": float(np.mean(rates)),
               "all_satisfy": bool(np.all(sys_.contains(states)))}
    if args.trace:
        chain = mis_chain(mech, s, sys_, I=I, proposal=proposal, nsim=args.nsim, rng=rng,
                          burn_in=args.burn_in)
        trace_path = os.path.join(args.out, "trace.csv")
        write_csv(trace_path, ["iteration"] + [f"cell_{i}" for i in range(s.size)] + ["accepted"],
                  ([t + 1] + chain.draws[t].tolist() + [int(chain.accepted[t])]
                   for t in range(chain.nsim)), meta)
        summary["trace_acceptance_rate"] = chain.acceptance_rate
        summary["trace_burn_in"] = chain.burn_in
    write_json(os.path.join(args.out, "conditioned.json"), summary, meta)
    return path


def _cmd_project(args):
    cfg = ExperimentConfig("project", 0, table=args.table, invariants=args.invariants,
                           out=args.out, extra={"norm": args.norm, "beta": args.beta,
                                                "input": os.path.basename(args.input)})
    if args.invariants:
        sys_ = load_system(args.invariants)
    else:
        table, sys_, _ = load_table_and_system(cfg)
    R = _read_releases(args.input)
    P = InvariantProjector(sys_, norm=args.norm, beta=args.beta).fit_transform(R)
    meta = metadata(cfg)
    meta.pop("seed")
    path = os.path.join(args.out, "projected.csv")
    write_csv(path, ["release"] + [f"cell_{i}" for i in range(P.shape[1])], _release_rows(P),
              meta)
    return path


def _cmd_audit(args):
    cfg = ExperimentConfig("audit", args.seed, epsilon=args.eps, scenario=args.scenario,
                           posterior_epsilons=tuple(args.posterior_eps), out=args.out)
    report = run_audit(cfg)
    print(f"attained_epsilon={report.to_dict()['attained_epsilon']} "
          f"gamma_star={report.to_dict()['gamma_star']} k={report.k} "
          f"class={report.neighborhood_class}")
    return os.path.join(args.out, "audit.json")


def _cmd_experiment(args):
    if args.experiment == "twobin":
        cfg = ExperimentConfig("twobin", args.seed, replicates=args.replicates,
                               epsilon=args.eps, betas=tuple(args.betas), out=args.out)
        run_twobin(cfg)
        return os.path.join(args.out, "twobin.csv")
    if args.experiment == "table":
        cfg = ExperimentConfig("table", args.seed, epsilon=args.eps, epsilon_low=args.eps_low,
                               epsilon_proposal=args.eps_proposal, nsim=args.nsim,
                               n_tables=args.tables, n_releases=args.releases, out=args.out)
        report = run_table_experiment(cfg, progress=lambda t, _: print(
            f"table {t + 1}/{cfg.n_tables} done", file=sys.stderr))
        print(f"ordering_l1={report['ordering_l1_count']}/{report['n_tables']} "
              f"nnl2_rel_diff_L1={report['nnl2_rel_diff']['L1']:.4f}")
        return os.path.join(args.out, "table_distances.csv")
    cfg = ExperimentConfig("sweep", args.seed, epsilon_low=args.eps, eps_grid=tuple(args.grid),
                           nsim=args.nsim, burn_in=args.burn_in, table=args.table,
                           invariants=args.invariants, out=args.out)
    report = run_sweep(cfg)
    print(f"argmax={report['argmax_epsilon_proposal']} peak_rate={report['peak_rate']}")
    return os.path.join(args.out, "sweep.csv")


COMMANDS = {
    "sample": _cmd_sample,
    "condition": _cmd_condition,
    "project": _cmd_project,
    "audit": _cmd_audit,
    "experiment": _cmd_experiment,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    os.makedirs(args.out, exist_ok=True)
    try:
        path = COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"congenial: error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
