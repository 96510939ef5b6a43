"""Reproduction runners: two-bin variances, the 20-table comparison, the
proposal-dispersion sweep and the audit scenarios.

Each runner takes an :class:`ExperimentConfig`, returns a plain report dict
and, when ``config.out`` is set, writes CSV/JSON files whose first line (CSV)
or ``meta`` key (JSON) records the config, seed, version and tolerances.
Nothing time-dependent is written, so identical configs give identical bytes.
"""

from dataclasses import asdict, dataclass, field
import csv
import functools
import importlib.resources
import json
import math
import os
import subprocess

import numpy as np

from . import __version__
from ._validation import check_rng, spawn_rngs
from .audit import BUILTIN_SCENARIOS, DEFAULT_TAIL_MASS, audit, scenario_from_dict
from .invariants import (
    INTEGRALITY_TOL,
    REAL_TOL,
    contingency_index_set,
    contingency_invariants,
    load_system,
    read_table_csv,
)
from .mechanisms import NoiseMechanism
from .postprocess import nnl2_project
from .sampler import ProposalSpec, acceptance_sweep, mis_chain, mis_sample

TOLERANCES = {
    "integrality": INTEGRALITY_TOL,
    "real_equality": REAL_TOL,
    "audit_tail_mass": DEFAULT_TAIL_MASS,
}

# numpy's negative_binomial(n, p) counts failures before the n-th success:
# mean n(1-p)/p and variance n(1-p)/p^2, i.e. 5.26 and 5.54 at (100, 0.95)
NB_SIZE, NB_PROB = 100, 0.95
NB_CONVENTION = ("numpy negative_binomial(n=100, p=0.95), failures before the n-th "
                 "success; mean 5.263, variance 5.540")

TABLE_METHODS = ("raw_eps1", "nnl2_eps1", "conditional_eps0.5", "raw_eps0.5")


@dataclass
class ExperimentConfig:
    """Inputs of one reproducible run.

    ``epsilon`` is the per-cell budget of the base mechanism; for the table
    experiment ``epsilon`` and ``epsilon_low`` are the two raw budgets and the
    conditional mechanism is built on ``epsilon_low``.
    """

    experiment: str
    seed: int
    replicates: int = 10**6
    epsilon: float = 1.0
    epsilon_low: float = 0.5
    epsilon_proposal: float = 0.6
    eps_grid: tuple = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    betas: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    s: tuple = (40, 60)
    n_tables: int = 20
    n_releases: int = 100
    nsim: int = 10**5
    burn_in: int = None
    table: str = None
    invariants: str = None
    scenario: str = "twobin"
    posterior_epsilons: tuple = (0.5, 1.0, 2.0)
    out: str = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is required for every stochastic run")
        self.seed = int(self.seed)

    def to_dict(self):
        d = asdict(self)
        d.pop("out")
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


@functools.lru_cache(maxsize=1)
def version_string():
    """``git describe`` of the source tree when available, else the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5, check=True)
        return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return __version__


def metadata(config, **extra):
    meta = {"config": config.to_dict(), "seed": config.seed, "version": version_string(),
            "tolerances": TOLERANCES}
    meta.update(extra)
    return meta


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows, meta):
    """CSV with a leading ``# {json}`` metadata line."""
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True, allow_nan=False) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path, payload, meta):
    with open(path, "w") as fh:
        json.dump({"meta": meta, "report": payload}, fh, indent=2, sort_keys=True,
                  allow_nan=False, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _outdir(config):
    if config.out is None:
        return None
    os.makedirs(config.out, exist_ok=True)
    return config.out


# ----------------------------------------------------------------- two bins


def run_twobin(config):
    """Means and first-cell variances of M*, f_L2 and f_L1 for the two-bin histogram.

    Laplace noise of scale ``2/eps`` on each cell; M* draws its first cell
    from Laplace(1/eps) around ``s1`` (the conditional law given the total).
    """
    eps = float(config.epsilon)
    n_rep = int(config.replicates)
    s1, s2 = (float(v) for v in config.s)
    n = s1 + s2
    rng_star, rng_raw = spawn_rngs(config.seed, 2)
    u_star = rng_star.laplace(0.0, 1.0 / eps, n_rep)
    U = rng_raw.laplace(0.0, 2.0 / eps, (n_rep, 2))
    m1, m2 = s1 + U[:, 0], s2 + U[:, 1]

    rows = []

    def add(method, beta, first, analytic_var):
        mean = float(first.mean())
        var = float(first.var(ddof=1))
        se = math.sqrt(var / n_rep)
        rows.append({
            "method": method, "beta": beta,
            "mean_1": mean, "mean_2": float((n - first).mean()),
            "var_1": var, "analytic_mean_1": s1, "analytic_var_1": analytic_var,
            "mean_z": (mean - s1) / se,
            "var_rel_error": var / analytic_var - 1.0,
        })

    add("M*", "", s1 + u_star, 2.0 / eps**2)
    add("f_L2", "", m1 - (m1 + m2 - n) / 2.0, 4.0 / eps**2)
    for beta in config.betas:
        beta = float(beta)
        add("f_L1", beta, beta * m1 + (1.0 - beta) * (n - m2),
            (beta**2 + (1.0 - beta) ** 2) * 8.0 / eps**2)

    report = {"epsilon": eps, "replicates": n_rep, "s": [s1, s2], "rows": rows}
    out = _outdir(config)
    if out:
        meta = metadata(config)
        header = list(rows[0])
        write_csv(os.path.join(out, "twobin.csv"), header,
                  [[r[h] for h in header] for r in rows], meta)
        write_json(os.path.join(out, "twobin.json"), report, meta)
    return report


# ---------------------------------------------------------------- tables


def synthetic_table(rng, shape=(2, 23)):
    return check_rng(rng).negative_binomial(NB_SIZE, NB_PROB, size=shape).astype(np.int64)


def default_table_path():
    return str(importlib.resources.files("congenial").joinpath("data/sex_by_age.csv"))


def l1_distance(s, R):
    return np.abs(np.asarray(R, dtype=float) - s).sum(axis=-1)


def l2_distance(s, R):
    return np.sqrt(((np.asarray(R, dtype=float) - s) ** 2).sum(axis=-1))


def table_releases(table, config, rng):
    """The four methods' releases for one confidential table.

    Returns ``(system, {method: releases}, acceptance_rates)``.
    """
    s = np.asarray(table, dtype=np.int64).ravel()
    sys = contingency_invariants(np.asarray(table))
    I = contingency_index_set(np.asarray(table).shape)
    r_hi, r_cond, r_lo = spawn_rngs(rng, 3)
    n_rel = int(config.n_releases)
    hi = NoiseMechanism.double_geometric(config.epsilon)
    lo = NoiseMechanism.double_geometric(config.epsilon_low)
    raw_hi = s + hi.sample((n_rel, s.size), r_hi)
    nnl2 = np.vstack([nnl2_project(r, sys) for r in raw_hi])
    cond, rates = mis_sample(lo, s, sys, I=I, proposal=ProposalSpec.like(lo, config.epsilon_proposal),
                             nsim=config.nsim, n_chains=n_rel, rng=r_cond)
    raw_lo = s + lo.sample((n_rel, s.size), r_lo)
    releases = dict(zip(TABLE_METHODS, (raw_hi, nnl2, cond, raw_lo)))
    return sys, releases, rates


def run_table_experiment(config, progress=None):
    """Average L1/L2 distances of the four methods over synthetic tables."""
    rows, checks = [], []
    table_rngs = spawn_rngs(config.seed, int(config.n_tables))
    for t, trng in enumerate(table_rngs):
        gen_rng, rel_rng = spawn_rngs(trng, 2)
        table = synthetic_table(gen_rng)
        s = table.ravel()
        sys, releases, rates = table_releases(table, config, rel_rng)
        stats = {}
        for method, R in releases.items():
            d1, d2 = l1_distance(s, R), l2_distance(s, R)
            stats[method] = (float(d1.mean()), float(d2.mean()))
            rows.append([t, method, stats[method][0], stats[method][1]])
        checks.append({
            "table": t,
            "conditional_satisfy": bool(np.all(sys.contains(releases["conditional_eps0.5"]))),
            "nnl2_satisfy": bool(np.all(sys.contains(releases["nnl2_eps1"]))),
            "ordering_l1": stats["raw_eps1"][0] < stats["conditional_eps0.5"][0]
            < stats["raw_eps0.5"][0],
            "ordering_l2": stats["raw_eps1"][1] < stats["conditional_eps0.5"][1]
            < stats["raw_eps0.5"][1],
            "mean_acceptance": float(np.mean(rates)),
        })
        if progress:
            progress(t, stats)

    def overall(method, col):
        return float(np.mean([r[col] for r in rows if r[1] == method]))

    means = {m: {"L1": overall(m, 2), "L2": overall(m, 3)} for m in TABLE_METHODS}
    report = {
        "n_tables": int(config.n_tables),
        "n_releases": int(config.n_releases),
        "nsim": int(config.nsim),
        "method_means": means,
        "ordering_l1_count": int(sum(c["ordering_l1"] for c in checks)),
        "ordering_l2_count": int(sum(c["ordering_l2"] for c in checks)),
        "nnl2_rel_diff": {k: means["nnl2_eps1"][k] / means["raw_eps1"][k] - 1.0
                          for k in ("L1", "L2")},
        "all_constrained_satisfy": all(c["conditional_satisfy"] and c["nnl2_satisfy"]
                                       for c in checks),
        "tables": checks,
        "table_generator": NB_CONVENTION,
    }
    out = _outdir(config)
    if out:
        meta = metadata(config, table_generator=NB_CONVENTION)
        write_csv(os.path.join(out, "table_distances.csv"),
                  ["table", "method", "mean_L1", "mean_L2"], rows, meta)
        write_json(os.path.join(out, "table_summary.json"), report, meta)
    return report


# ----------------------------------------------------------------- sweep


def load_table_and_system(config):
    path = config.table or default_table_path()
    labels, row_labels, table = read_table_csv(path)
    if config.invariants:
        sys = load_system(config.invariants)
        I = sys.index_set
    else:
        sys = contingency_invariants(table)
        I = contingency_index_set(table.shape)
    return table, sys, I


TRACE_CELLS = (1, 0)


def run_sweep(config):
    """Acceptance rate over the proposal grid plus a trace at the best point."""
    table, sys, I = load_table_and_system(config)
    s = table.ravel()
    mech = NoiseMechanism.double_geometric(config.epsilon_low)
    sweep_rng, trace_rng = spawn_rngs(config.seed, 2)
    results = acceptance_sweep(mech, s, sys, I, config.eps_grid, config.nsim, sweep_rng)
    rates = [r for _, r in results]
    k = int(np.argmax(rates))
    best = results[k][0]
    chain = mis_chain(mech, s, sys, I=I, proposal=ProposalSpec.like(mech, best),
                      nsim=config.nsim, rng=trace_rng, burn_in=config.burn_in)
    I_used = chain.index_set
    report = {
        "epsilon": float(config.epsilon_low),
        "grid": [float(e) for e, _ in results],
        "acceptance_rate": rates,
        "argmax_epsilon_proposal": float(best),
        "peak_rate": float(rates[k]),
        "trace_cells": list(TRACE_CELLS),
        "trace_cells_in_index_set": [c in I_used for c in TRACE_CELLS],
        "trace_acceptance_rate": chain.acceptance_rate,
        "trace_burn_in": chain.burn_in,
        "all_trace_states_satisfy": bool(np.all(sys.contains(chain.draws))),
    }
    out = _outdir(config)
    if out:
        meta = metadata(config)
        write_csv(os.path.join(out, "sweep.csv"), ["epsilon_proposal", "acceptance_rate", "argmax"],
                  [[e, r, int(i == k)] for i, (e, r) in enumerate(results)], meta)
        cells = [c for c in TRACE_CELLS if c < chain.draws.shape[1]]
        trace_rows = ([t + 1] + chain.draws[t, cells].tolist() + [int(chain.accepted[t])]
                      for t in range(chain.nsim))
        write_csv(os.path.join(out, "trace.csv"),
                  ["iteration"] + [f"cell_{c}" for c in cells] + ["accepted"], trace_rows, meta)
        write_json(os.path.join(out, "sweep.json"), report, meta)
    return report


# ----------------------------------------------------------------- audit


def run_audit(config):
    """Audit a built-in scenario by name, or a JSON scenario file."""
    name = config.scenario
    if name in BUILTIN_SCENARIOS:
        space, mech = BUILTIN_SCENARIOS[name](config.epsilon)
    elif os.path.isfile(name):
        with open(name) as fh:
            doc = json.load(fh)
        space, mech = scenario_from_dict(doc)
        name = doc.get("name", os.path.basename(name))
    else:
        raise ValueError(f"unknown scenario {name!r}")
    report = audit(space, mech, name=name, posterior_epsilons=list(config.posterior_epsilons))
    out = _outdir(config)
    if out:
        with open(os.path.join(out, "audit.json"), "w") as fh:
            fh.write(report.to_json(meta=metadata(config)))
    return report


RUNNERS = {
    "twobin": run_twobin,
    "table": run_table_experiment,
    "sweep": run_sweep,
    "audit": run_audit,
}


def run(config):
    return RUNNERS[config.experiment](config)


__all__ = [
    "ExperimentConfig", "run", "run_twobin", "run_table_experiment", "run_sweep", "run_audit",
    "synthetic_table", "l1_distance", "l2_distance", "table_releases", "version_string",
]
