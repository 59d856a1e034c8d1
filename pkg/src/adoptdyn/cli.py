"""Command-line entry point: ``adoptdyn {pipeline,analyze,simulate,compare,sweep,synth}``.

Every command resolves a YAML config (flags override keys), then writes into
``<out>/<config-hash>/``. Exit codes: 0 success, 1 model/runtime error,
2 input/config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .clustering import cluster_sweep
from .config import DATA_DIR_ENV, RunConfig
from .control import ControlPolicy, Kind, Rule, budget_sweep, compare, control_for, standard_policies
from .dynamics import AGGREGATE_COLUMNS, simulate
from .errors import ConfigError, InputError, ModelError
from .network import build_similarity, in_degree_centrality, median_bandwidth, pagerank, write_centralities_csv, \
    write_matrix_csv
from .pipeline import CalibratedInputs, Schema, WeightSpec, build_model, calibrate, ingest, sample_opinion_weights, \
    sociodemographic_matrix
from .stability import classify

logger = logging.getLogger("adoptdyn")

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# output helpers


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(u) for k, u in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(u) for u in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer, np.bool_)):
        return v.item()
    return v


def write_json(path: Path, doc: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, **_plain(doc)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_trace_csv(path: Path, trace, per_community: bool = False) -> None:
    header = ["t", *AGGREGATE_COLUMNS]
    n = trace.a.shape[1]
    if per_community:
        header += [f"{v}_{j}" for v in ("a", "d", "x") for j in range(n)]
    rows = []
    for k in range(len(trace)):
        row = [trace.t0 + k, *trace.aggregates[k]]
        if per_community:
            row += [*trace.a[k], *trace.d[k], *trace.x[k]]
        rows.append(row)
    write_csv(path, header, rows)


def convergence_step(trace, tol: float):
    """First step whose sup-norm change is below ``tol``, or ``None``."""
    if len(trace) < 2:
        return None
    change = np.maximum.reduce([np.abs(np.diff(v, axis=0)).max(axis=1) for v in (trace.a, trace.d, trace.x)])
    hits = np.flatnonzero(change < tol)
    return int(trace.t0 + hits[0] + 1) if hits.size else None


# ---------------------------------------------------------------------------
# assembly


@dataclasses.dataclass
class Experiment:
    inputs: CalibratedInputs
    graph: object
    model: object
    x0: np.ndarray
    initial: object


def _run_dir(cfg: RunConfig) -> Path:
    run = cfg.run_dir()
    run.mkdir(parents=True, exist_ok=True)
    write_json(run / "config.json", {"kind": "run_config", "fingerprint": cfg.fingerprint()})
    return run


def _schema(cfg: RunConfig) -> Schema:
    path = cfg.resolve_path(cfg["data"]["schema"])
    return Schema.default() if path is None else Schema.load(path)


def _table(cfg: RunConfig):
    survey = cfg.resolve_path(cfg["data"]["survey"])
    if survey is None:
        raise ConfigError("data.survey is required for this command")
    return ingest(survey, _schema(cfg), cfg["country"])


def _inputs(cfg: RunConfig) -> CalibratedInputs:
    path = cfg.resolve_path(cfg["data"]["calibrated"])
    if path is not None:
        return CalibratedInputs.load(path)
    return calibrate(_table(cfg), cfg["model"]["initial_adoption"])


def _vector(value, n, name):
    arr = np.full(n, float(value)) if np.isscalar(value) else np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ConfigError(f"model.{name} must be a scalar or a list of {n} values")
    return arr


def similarity_graph(cfg: RunConfig, inputs: CalibratedInputs):
    ncfg = cfg["network"]
    sigma = ncfg["sigma"] if ncfg["sigma"] is not None else median_bandwidth(inputs.profiles)
    return build_similarity(inputs.profiles, float(sigma), float(ncfg["cutoff"]))


def assemble(cfg: RunConfig, inputs: CalibratedInputs = None) -> Experiment:
    inputs = inputs or _inputs(cfg)
    mcfg = cfg["model"]
    if mcfg["delta"] is not None:
        inputs = dataclasses.replace(inputs, delta=_vector(mcfg["delta"], inputs.n, "delta"))
    graph = similarity_graph(cfg, inputs)
    try:
        spec = WeightSpec(**cfg["weights"])
    except TypeError as exc:
        raise ConfigError(f"weights: {exc}") from exc
    lam, xi = sample_opinion_weights(cfg["seed"], spec, inputs.n)
    if mcfg["lam"] is not None:
        lam = _vector(mcfg["lam"], inputs.n, "lam")
    if mcfg["xi"] is not None:
        xi = _vector(mcfg["xi"], inputs.n, "xi")
    model = build_model(inputs, graph.W, lam, xi, beta=float(mcfg["beta"]), gamma=float(mcfg["gamma"]),
                        mobility=mcfg["mobility"], weighted_influence=bool(mcfg["weighted_influence"]),
                        strict_step_bound=bool(mcfg["strict_step_bound"]))
    return Experiment(inputs, graph, model, inputs.x0, inputs.initial_state())


def _default_budget(kind: Kind, n: int) -> float:
    return {Kind.OPINION: float(n), Kind.DISSATISFACTION: 0.75 * n, Kind.NONE: 0.0}[kind]


def _policy(spec: dict, n: int) -> ControlPolicy:
    try:
        kind = Kind(spec.get("kind", "none"))
        rule = Rule(spec.get("rule") or "size")
        budget = spec.get("budget")
        return ControlPolicy(kind, rule, _default_budget(kind, n) if budget is None else float(budget))
    except (ValueError, TypeError, AttributeError) as exc:
        raise ConfigError(f"invalid policy {spec!r}: {exc}") from exc


def _policies(cfg: RunConfig, args, n: int) -> list:
    if args.kind is not None:
        kind = Kind(args.kind)
        rules = [Rule(args.rule)] if args.rule else list(Rule)
        budget = _default_budget(kind, n) if args.budget is None else args.budget
        chosen = [] if kind is Kind.NONE else [ControlPolicy(kind, r, budget) for r in rules]
    elif cfg["policies"] is not None:
        chosen = [_policy(p, n) for p in cfg["policies"]]
    else:
        chosen = standard_policies(n)
    if args.kind is None:
        if args.rule:
            chosen = [p for p in chosen if p.rule is Rule(args.rule)]
        if args.budget is not None:
            chosen = [dataclasses.replace(p, budget=args.budget) for p in chosen]
    return [ControlPolicy()] + [p for p in chosen if p.kind is not Kind.NONE]


# ---------------------------------------------------------------------------
# commands


def cmd_pipeline(cfg: RunConfig, args) -> Path:
    run = _run_dir(cfg)
    table = _table(cfg)
    inputs = calibrate(table, cfg["model"]["initial_adoption"])
    inputs.dump(run / "calibrated.json")

    ccfg = cfg["clustering"]
    X = sociodemographic_matrix(table)
    distinct = np.unique(X, axis=0).shape[0]
    ks = [k for k in range(int(ccfg["k_min"]), int(ccfg["k_max"]) + 1) if k <= distinct]
    if len(ks) < int(ccfg["k_max"]) - int(ccfg["k_min"]) + 1:
        logger.warning("only %d distinct socio-demographic profiles; k limited to %s", distinct, ks)
    chosen = min(int(ccfg["chosen_k"]), distinct)
    diag = cluster_sweep(X, ks, seed=cfg["seed"], restarts=int(ccfg["restarts"]), chosen_k=chosen)
    write_csv(run / "clusters.csv", ["k", "wcss", "silhouette"], diag.rows())

    graph = similarity_graph(cfg, inputs)
    ids = list(range(inputs.n))
    write_matrix_csv(run / "W.csv", graph.W, ids)
    raw, _ = in_degree_centrality(graph)
    write_centralities_csv(run / "centralities.csv", raw, pagerank(graph, float(cfg["network"]["damping"])), ids)
    print(f"calibrated {inputs.n} communities from {inputs.n_respondents} respondents "
          f"(a0={inputs.report['aggregate_a0']:.4f}, mean x0={inputs.report['mean_x0']:.4f}, "
          f"best silhouette k={diag.best_silhouette_k() if diag.silhouette else 'n/a'})")
    return run


def cmd_analyze(cfg: RunConfig, args) -> Path:
    run = _run_dir(cfg)
    exp = assemble(cfg)
    tol = cfg["tolerances"]
    report = classify(exp.model, exp.x0, tol=float(tol["convergence"]), max_steps=int(tol["max_steps"]))
    write_json(run / "stability.json", {"kind": "stability_report", "country": exp.inputs.country,
                                        "seed": cfg["seed"], "n": exp.model.n, **report.to_dict()})
    print(f"r0(x*)={report.r0_at_xstar:.4f} r0_max={report.r0_max:.4f} -> {report.classification.value}")
    return run


def cmd_simulate(cfg: RunConfig, args) -> Path:
    run = _run_dir(cfg)
    exp = assemble(cfg)
    policy = _policy(cfg["simulate"]["policy"], exp.model.n)
    control = control_for(policy, exp.model, exp.x0, exp.graph)
    trace = simulate(exp.initial, exp.model, cfg["horizon"], control=control, x0=exp.x0,
                     tol=float(cfg["tolerances"]["convergence"]))
    write_trace_csv(run / "trace.csv", trace, bool(cfg["simulate"]["per_community"]))
    s, a, d, x = trace.final_aggregates
    write_json(run / "summary.json", {
        "kind": "simulation_summary", "policy": policy.to_dict(), "horizon": cfg["horizon"],
        "final": {"susceptible": s, "adopters": a, "dissatisfied": d, "mean_opinion": x},
        "converged": trace.converged, "convergence_step": convergence_step(trace, float(cfg["tolerances"]["convergence"])),
        "last_change": trace.last_change,
        "clipped_mass": 0.0 if control is None else control.clipped_mass,
        "stranded_budget": 0.0 if control is None else control.stranded_budget,
    })
    print(f"t={cfg['horizon']}: adopters={a:.4f} dissatisfied={d:.4f} mean opinion={x:.4f}")
    return run


RANKING_COLUMNS = ("rank", "label", "kind", "rule", "budget", "final_susceptible", "final_adopters",
                   "final_dissatisfied", "final_mean_opinion", "clipped_mass", "stranded_budget", "converged", "error")


def cmd_compare(cfg: RunConfig, args) -> Path:
    run = _run_dir(cfg)
    exp = assemble(cfg)
    policies = _policies(cfg, args, exp.model.n)
    outcomes = compare(exp.model, exp.x0, exp.initial, cfg["horizon"], policies, exp.graph)
    traces = run / "traces"
    traces.mkdir(exist_ok=True)
    rows, summaries = [], []
    for rank, o in enumerate(outcomes, start=1):
        summ = {"rank": rank, **o.summary()}
        summaries.append(summ)
        rows.append([summ[c] for c in RANKING_COLUMNS])
        if o.trace is not None:
            write_trace_csv(traces / f"{o.policy.label}.csv", o.trace, bool(cfg["simulate"]["per_community"]))
    write_csv(run / "ranking.csv", RANKING_COLUMNS, rows)
    write_json(run / "compare.json", {"kind": "policy_comparison", "horizon": cfg["horizon"], "outcomes": summaries})
    for s in summaries:
        shown = "failed: " + s["error"] if s["error"] else f"adopters={s['final_adopters']:.4f}"
        print(f"{s['rank']:>2} {s['label']:<28} {shown}")
    return run


def cmd_sweep(cfg: RunConfig, args) -> Path:
    run = _run_dir(cfg)
    exp = assemble(cfg)
    scfg = cfg["sweep"]
    kind = Kind(args.kind or scfg["kind"])
    if kind is Kind.NONE:
        raise ConfigError("sweep needs an intervention kind (opinion or dissatisfaction)")
    rules = [Rule(args.rule)] if args.rule else [Rule(r) for r in (scfg["rules"] or list(Rule))]
    budgets = [exp.model.n * float(q) for q in scfg["fractions"]]
    res = budget_sweep(exp.model, exp.x0, exp.initial, cfg["horizon"], kind, budgets, rules, exp.graph)
    rows = [[r.value, b, v, e] for r in res.adopters
            for b, v, e in zip(res.budgets, res.adopters[r], res.errors[r])]
    write_csv(run / "sweep.csv", ["rule", "budget", "final_adopters", "error"], rows)
    write_json(run / "sweep.json", {"kind": "budget_sweep", "horizon": cfg["horizon"], **res.to_dict()})
    print(f"{kind.value} sweep over {len(budgets)} budgets: " + ("monotone" if res.monotone else
                                                             f"NOT monotone for {sorted(r.value for r in res.violations())}"))
    return run


def cmd_synth(args) -> Path:
    from .synthetic import write_synthetic_csv

    out = Path(args.out or "synthetic")
    out.mkdir(parents=True, exist_ok=True)
    write_synthetic_csv(out / "survey.csv", n=args.respondents, seed=args.seed or 0)
    cfg = {"data": {"survey": "survey.csv"}, "country": "Germany", "seed": args.seed or 0,
           "out": str((out / "runs").resolve()), "horizon": 5000, "model": {"weighted_influence": True}}
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    print(out / "config.yaml")
    return out


COMMANDS = {"pipeline": cmd_pipeline, "analyze": cmd_analyze, "simulate": cmd_simulate,
            "compare": cmd_compare, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--country", help="country filter applied to the survey")
    common.add_argument("--seed", type=int, help="seed for the sampled opinion weights and clustering")
    common.add_argument("--out", help="root of the per-run output directories")
    common.add_argument("--horizon", type=int, help="number of simulated steps")
    common.add_argument("--per-community", action="store_true", default=None,
                        help="add per-community a/d/x columns to trace CSVs")
    common.add_argument("--budget", type=float, help="intervention budget U")
    common.add_argument("--rule", choices=[r.value for r in Rule], help="budget allocation rule")
    common.add_argument("--kind", choices=[k.value for k in Kind], help="intervention kind")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    ap = argparse.ArgumentParser(prog="adoptdyn", description=(
        "Coupled EV adoption and opinion dynamics on survey-calibrated communities. "
        f"Relative data paths are also looked up under ${DATA_DIR_ENV}."))
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {"pipeline": "calibrate model inputs, cluster diagnostics, W and centralities from the survey",
             "analyze": "reproduction numbers, classification, diffused equilibrium and its certificate",
             "simulate": "simulate one (optionally controlled) run and write its trace",
             "compare": "rank interventions by final adopters",
             "sweep": "final adopters over a budget grid, with a monotonicity report"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    synth = sub.add_parser("synth", help="write a synthetic survey and a matching config")
    synth.add_argument("--out", help="target directory (default ./synthetic)")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--respondents", type=int, default=1500, help="respondents per country")
    synth.add_argument("-v", "--verbose", action="store_true")
    return ap


def _overrides(args) -> dict:
    sim_policy = {}
    if args.command == "simulate":
        sim_policy = {"simulate.policy.kind": args.kind, "simulate.policy.rule": args.rule,
                      "simulate.policy.budget": args.budget}
    return {"country": args.country, "seed": args.seed, "out": args.out, "horizon": args.horizon,
            "simulate.per_community": args.per_community, **sim_policy}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "synth":
            cmd_synth(args)
            return 0
        cfg = RunConfig.load(args.config, _overrides(args))
        run = COMMANDS[args.command](cfg, args)
        print(run)
        return 0
    except InputError as exc:
        print(f"adoptdyn {args.command}: input error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ModelError as exc:
        print(f"adoptdyn {args.command}: model error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"adoptdyn {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
