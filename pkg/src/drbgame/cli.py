"""Command-line experiment runner.

    drbgame <command> [--config FILE] [--seed N] [--out DIR] [--threads N] [--set key=value ...]

Commands: table, dynamics, perturb, welfare, routing, learning, geo.  The
config is a YAML mapping; keys not listed in a command's defaults are
rejected.  Every output file starts with a header carrying the config hash
and the seed.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import dynamics as dyn
from . import equilibrium as eq
from . import geo
from . import learning as lrn
from . import routing as rt
from .errors import ConvergenceError, DRBError, InputError
from .lattice import GeoPopulation, TorusGrid
from .payoff import (RoutingCost, RoutingNeg, StrategyProfile, StrategySet, TorusPayoffContext,
                     routing_payoff_curve)

SCHEMA_VERSION = 1
log = logging.getLogger("drbgame")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED = 0, 2, 3

_GRID = {"k": 2, "n": 100}

DEFAULTS = {
    "table": {
        "grid": _GRID, "gamma": 0.1, "r_max": 10.0, "s_grid": [0.0, 0.5, 1.0, 2.0, 3.0],
        "model": {"kind": "drb", "samples": 5, "q": 10, "p": 1, "targets": 200, "lam": [0.0],
                  "estimator": "direct"},
        "node": 0,
    },
    "dynamics": {
        "grid": _GRID, "gamma": 0.1, "r_max": 10.0, "runs": 1,
        "init": "random", "init_high": None,
        "mode": "sync", "order": "random", "max_steps": 100,
        "perturbation": None, "fatal_nonconvergence": False,
        "sweep": None,  # {"ns": [...], "gammas": [...], "dynamics_limit": 40000}
    },
    "perturb": {
        "grid": _GRID, "gamma": 0.1, "r_max": 10.0, "runs": 10,
        "start": "navigable", "probability": 1.0, "low": 0.0, "high": None, "choices": None,
        "mode": "sync", "max_steps": 100, "fatal_nonconvergence": False,
    },
    "welfare": {"ns": [20, 40, 80], "gamma": 0.1, "k": 2, "r_max": 10.0},
    "routing": {"k": 2, "ns": [50, 100, 200], "rs": [0.0, 2.0, 4.0], "p": 1, "q": 1,
                "pairs": 1000, "graphs": 1},
    "learning": {
        "grid": _GRID, "gamma": 0.1, "r_max": 10.0, "scenario": 2, "q": 30, "noise": 0.0,
        "steps": 500, "runs": 1, "record_every": 1,
    },
    "geo": {
        "population": {"generate": "core-periphery", "csv": None, "metric": "planar",
                       "distance_floor": None, "params": {}},
        "edges": {"csv": None, "wire_mean_degree": 3.0},
        "gamma": 0.1, "r_max": 5.0, "nbins": 32, "mode": "async", "max_steps": 100,
        "settle_fraction": 0.01, "fit_bins": 20, "min_users": 100,
        "radii": [10.0, 25.0, 50.0, 100.0, 200.0, 400.0, 800.0], "fatal_nonconvergence": False,
    },
}


class UsageError(DRBError):
    pass


# -- config handling ---------------------------------------------------------

def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise UsageError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict) and key not in ("params",):
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def _apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise UsageError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise UsageError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node and node is not cfg.get("population", {}).get("params"):
        raise UsageError(f"unknown config key {key!r}")
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(command: str, path=None, overrides=()) -> dict:
    user = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as e:
            raise UsageError(f"cannot read config: {e}") from None
        except yaml.YAMLError as e:
            raise UsageError(f"config is not valid YAML: {e}") from None
        if not isinstance(user, dict):
            raise UsageError("config must be a mapping")
        version = user.pop("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise UsageError(f"unsupported config version {version}")
        user = user.get(command, user)
    cfg = _merge(DEFAULTS[command], user)
    for item in overrides:
        _apply_override(cfg, item)
    return cfg


def config_hash(command: str, cfg: dict, seed) -> str:
    blob = json.dumps({"command": command, "config": cfg, "seed": seed,
                       "version": SCHEMA_VERSION}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


class Output:
    """Writes headed artifacts into one directory."""

    def __init__(self, out_dir, command, cfg, seed):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.header = {"command": command, "config_sha256": config_hash(command, cfg, seed),
                       "seed": seed, "version": SCHEMA_VERSION, "config": cfg}
        self.written = []

    def header_lines(self):
        h = self.header
        return [f"command={h['command']} config_sha256={h['config_sha256']} seed={h['seed']}",
                "config=" + json.dumps(h["config"], sort_keys=True)]

    def open(self, name):
        self.written.append(name)
        return open(self.dir / name, "w", newline="", encoding="utf-8")

    def csv(self, name, columns, rows):
        with self.open(name) as fh:
            for line in self.header_lines():
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(x) for x in row])

    def jsonl(self, name, records):
        with self.open(name) as fh:
            fh.write(json.dumps({"header": self.header}, sort_keys=True) + "\n")
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _grid(cfg):
    g = cfg["grid"]
    return TorusGrid(int(g["k"]), int(g["n"]))


def _sset(cfg):
    return StrategySet.from_gamma(float(cfg["gamma"]), float(cfg["r_max"]))


def _sub_seed(seed, *keys):
    return None if seed is None else [int(seed), *keys]


# -- commands ----------------------------------------------------------------

def cmd_table(cfg, seed, out: Output) -> int:
    s_grid = list(cfg["s_grid"] or [])
    if not s_grid:
        raise UsageError("s_grid must list at least one opponent strategy")
    grid, sset = _grid(cfg), _sset(cfg)
    ctx = TorusPayoffContext(grid, sset)
    m = cfg["model"]
    kind = m["kind"]
    if kind not in ("drb", "routing", "routing-cost"):
        raise UsageError(f"unknown payoff model {kind!r}")
    lams = m["lam"] if isinstance(m["lam"], list) else [m["lam"]]
    rows, curves = [], []
    for lam in (lams if kind == "routing-cost" else [0.0]):
        for s in s_grid:
            if kind == "drb":
                br = dyn.uniform_best_response(ctx, s)
                curve = ctx.uniform_payoffs(sset.index_of(s))
                err = np.zeros_like(curve)
            else:
                model = RoutingNeg(m["samples"], m["q"], m["p"], m["targets"], m["estimator"]) \
                    if kind == "routing" else \
                    RoutingCost(m["samples"], m["q"], m["p"], m["targets"], m["estimator"], lam=float(lam))
                ctx.bind(StrategyProfile.uniform(sset, grid.size, s))
                br = dyn.best_response(ctx, cfg["node"], model=model, seed=seed)
                curve, err = routing_payoff_curve(ctx, cfg["node"], ctx.profile, model, seed=seed)
            rows.append([kind, lam, s, br.strategy, br.unique, br.payoff])
            curves += [[kind, lam, s, r, v, e] for r, v, e in zip(sset.values, curve, err)]
    out.csv("best_response.csv", ["model", "lam", "s", "best_response", "strict", "payoff"], rows)
    out.csv("payoff_curves.csv", ["model", "lam", "s", "r", "payoff", "stderr"], curves)
    return EXIT_OK


def _initial(cfg, sset, size, rng):
    init = cfg["init"]
    if init == "random":
        return StrategyProfile.random(sset, size, rng, cfg.get("init_high"))
    try:
        return StrategyProfile.uniform(sset, size, float(init))
    except (TypeError, ValueError):
        raise UsageError(f"init must be 'random' or a strategy value, got {init!r}") from None


def _perturbation(spec):
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise UsageError("perturbation must be a mapping")
    allowed = {"probability", "low", "high", "choices"}
    if "probability" not in spec:
        raise UsageError("perturbation needs a probability")
    if set(spec) - allowed:
        raise UsageError(f"unknown perturbation keys {sorted(set(spec) - allowed)}")
    return dyn.PerturbationSpec(float(spec["probability"]), float(spec.get("low", 0.0)),
                                spec.get("high"), spec.get("choices"))


def cmd_dynamics(cfg, seed, out: Output) -> int:
    if cfg["sweep"]:
        return _equilibrium_sweep(cfg, seed, out)
    grid, sset = _grid(cfg), _sset(cfg)
    ctx = TorusPayoffContext(grid, sset)
    pert = _perturbation(cfg["perturbation"])
    records, summary = [], []
    status = EXIT_OK
    final = None
    for run in range(int(cfg["runs"])):
        rng = np.random.default_rng(_sub_seed(seed, run))
        prof = _initial(cfg, sset, grid.size, rng)
        perturbed = 0
        if pert is not None:
            prof, mask = dyn.perturb(prof, pert, rng)
            perturbed = int(mask.sum())
        conf = dyn.DynamicsConfig(cfg["mode"], cfg["order"], _sub_seed(seed, run, 1), int(cfg["max_steps"]))
        traj = dyn.run_until_converged(dyn.DynamicsState.start(ctx, prof, _sub_seed(seed, run, 2)), conf)
        records += [{"run": run, **r} for r in traj.records]
        summary.append([run, perturbed, traj.converged, traj.steps, traj.ties,
                        dyn.uniform_value(traj.final)])
        final = traj.final
        if not traj.converged and cfg["fatal_nonconvergence"]:
            status = EXIT_NONCONVERGED
    out.jsonl("trajectory.jsonl", records)
    out.csv("summary.csv", ["run", "perturbed", "converged", "steps", "ties", "uniform_value"], summary)
    out.csv("final_profile.csv", ["id", "strategy"], enumerate(final.values))
    return status


def _equilibrium_sweep(cfg, seed, out: Output) -> int:
    sw = cfg["sweep"]
    if not isinstance(sw, dict) or not sw.get("ns") or not sw.get("gammas"):
        raise UsageError("sweep needs non-empty ns and gammas")
    k = int(cfg["grid"]["k"])
    limit = int(sw.get("dynamics_limit", 40000))
    rows = []
    for gamma in sw["gammas"]:
        sset = StrategySet.from_gamma(float(gamma), float(cfg["r_max"]))
        for n in sw["ns"]:
            grid = TorusGrid(k, int(n))
            ctx = TorusPayoffContext(grid, sset)
            use_dyn = grid.size <= limit
            r = eq.find_navigable_equilibrium(ctx, seed=_sub_seed(seed, int(n)), use_dynamics=use_dyn)
            rows.append([int(n), float(gamma), r, "dynamics" if use_dyn else "uniform-map"])
    out.csv("equilibrium_sweep.csv", ["n", "gamma", "equilibrium", "method"], rows)
    return EXIT_OK


def cmd_perturb(cfg, seed, out: Output) -> int:
    grid, sset = _grid(cfg), _sset(cfg)
    ctx = TorusPayoffContext(grid, sset)
    start = cfg["start"]
    if start == "navigable":
        orbit = dyn.uniform_orbit(ctx, float(grid.k))
        if orbit[-1] != orbit[-2]:
            raise UsageError("uniform best-response map has no fixed point near k")
        start = orbit[-1]
    start = float(start)
    target = start
    if start == 0.0:
        orbit = dyn.uniform_orbit(ctx, float(grid.k))
        target = orbit[-1]
    spec = dyn.PerturbationSpec(float(cfg["probability"]), float(cfg["low"]), cfg["high"], cfg["choices"])
    rows, records = [], []
    status = EXIT_OK
    for run in range(int(cfg["runs"])):
        rng = np.random.default_rng(_sub_seed(seed, run))
        prof, mask = dyn.perturb(StrategyProfile.uniform(sset, grid.size, start), spec, rng)
        conf = dyn.DynamicsConfig(cfg["mode"], "random", _sub_seed(seed, run, 1), int(cfg["max_steps"]))
        traj = dyn.run_until_converged(dyn.DynamicsState.start(ctx, prof), conf)
        records += [{"run": run, **r} for r in traj.records]
        final = dyn.uniform_value(traj.final)
        rows.append([run, int(mask.sum()), traj.converged, traj.steps, final, final == target])
        if not traj.converged and cfg["fatal_nonconvergence"]:
            status = EXIT_NONCONVERGED
    out.jsonl("trajectory.jsonl", records)
    out.csv("perturbation.csv", ["run", "perturbed", "converged", "steps", "uniform_value",
                                 "reached_navigable"], rows)
    return status


def cmd_welfare(cfg, seed, out: Output) -> int:
    try:
        rep = eq.poa_pos_series(cfg["ns"], float(cfg["gamma"]), int(cfg["k"]), float(cfg["r_max"]))
    except InputError as e:
        raise UsageError(str(e)) from None
    with out.open("welfare.csv") as fh:
        rep.write_csv(fh, out.header_lines())
    out.csv("welfare_slopes.csv", ["poa_loglog_slope", "pos_slope_vs_log_n", "pos_loglog_slope"],
            [[rep.poa_loglog_slope, rep.pos_slope_vs_log_n, rep.pos_loglog_slope]])
    return EXIT_OK


def cmd_routing(cfg, seed, out: Output) -> int:
    ns, rs = list(cfg["ns"]), list(cfg["rs"])
    if not ns or not rs:
        raise UsageError("ns and rs must be non-empty")
    rows = []
    for n in ns:
        grid = TorusGrid(int(cfg["k"]), int(n))
        for r in rs:
            vals = np.full(grid.size, float(r))
            mean, err = rt.expected_delivery_time(grid, vals, int(cfg["p"]), int(cfg["q"]),
                                                  int(cfg["pairs"]), int(cfg["graphs"]),
                                                  seed=_sub_seed(seed, int(n), int(round(r * 1000))))
            rows.append([int(n), float(r), mean, err])
    out.csv("delivery_time.csv", ["n", "r", "mean_hops", "stderr"], rows)
    fits = []
    if len(ns) >= 2:
        for r in rs:
            hops = [row[2] for row in rows if row[1] == float(r)]
            a, r2 = rt.fit_log_squared(ns, hops)
            slope = float(np.polyfit(np.log(ns), np.log(hops), 1)[0])
            fits.append([float(r), a, r2, slope])
    out.csv("delivery_fit.csv", ["r", "a_log2n", "r2", "loglog_slope"], fits)
    return EXIT_OK


def cmd_learning(cfg, seed, out: Output) -> int:
    grid, sset = _grid(cfg), _sset(cfg)
    ctx = TorusPayoffContext(grid, sset)
    scenario = int(cfg["scenario"])
    if scenario not in (1, 2):
        raise UsageError("scenario must be 1 or 2")
    records, rows = [], []
    for run in range(int(cfg["runs"])):
        rng = np.random.default_rng(_sub_seed(seed, run))
        prof = StrategyProfile.random(sset, grid.size, rng)
        state = lrn.LearningState.start(ctx, prof, _sub_seed(seed, run, 1))
        if scenario == 1:
            traj = lrn.run_friend_dynamics(state, lrn.FriendEstimationConfig(int(cfg["q"]), float(cfg["noise"])),
                                           int(cfg["steps"]))
        else:
            traj = lrn.run_feedback_search(state, lrn.FeedbackSearchConfig(int(cfg["q"])), int(cfg["steps"]),
                                           int(cfg["record_every"]))
        records += [{"run": run, **r} for r in traj.records]
        v = traj.final.values
        rows.append([run, float(np.median(v)), float(np.mean((v >= 1.8 - 1e-9) & (v <= 2.4 + 1e-9))),
                     dyn.uniform_value(traj.final)])
    out.jsonl("trajectory.jsonl", records)
    out.csv("learning_summary.csv", ["run", "median", "fraction_in_1.8_2.4", "uniform_value"], rows)
    return EXIT_OK


def _population(pcfg, seed) -> GeoPopulation:
    if pcfg["csv"]:
        return GeoPopulation.from_csv(pcfg["csv"], pcfg["metric"], pcfg["distance_floor"])
    kind, params = pcfg["generate"], dict(pcfg["params"] or {})
    gens = {"disc": geo.uniform_disc, "mixture": geo.city_mixture, "core-periphery": geo.core_periphery_world}
    if kind not in gens:
        raise UsageError(f"unknown population generator {kind!r}")
    try:
        return gens[kind](**params, seed=seed)
    except TypeError as e:
        raise UsageError(f"bad generator parameters: {e}") from None


def cmd_geo(cfg, seed, out: Output) -> int:
    pop = _population(cfg["population"], _sub_seed(seed, 0))
    sset = _sset(cfg)
    conf = dyn.DynamicsConfig(cfg["mode"], "random", _sub_seed(seed, 1), int(cfg["max_steps"]))
    try:
        res = geo.geo_game(pop, sset, conf, nbins=int(cfg["nbins"]), fatal=bool(cfg["fatal_nonconvergence"]),
                           settle_fraction=cfg["settle_fraction"])
    except ConvergenceError as e:
        log.error("%s", e)
        return EXIT_NONCONVERGED
    res.write_csv(out.dir / "equilibrium.csv", pop, out.header_lines())
    out.written.append("equilibrium.csv")
    out.jsonl("trajectory.jsonl", res.trajectory.records)
    if cfg["edges"]["csv"]:
        edges = geo.EdgeList.from_csv(cfg["edges"]["csv"], pop)
    else:
        edges = geo.wire_power_law(pop, res.values, float(cfg["edges"]["wire_mean_degree"]), seed=_sub_seed(seed, 2))
    fits = {"global": geo.empirical_exponent(pop, edges, int(cfg["fit_bins"]))}
    city_fits, game_means = {}, {}
    if pop.cities is not None:
        city_fits = geo.city_exponents(pop, edges, int(cfg["fit_bins"]), int(cfg["min_users"]))
        fits.update(city_fits)
        game_means = {c: v for c, v in res.city_means(pop).items() if c in city_fits}
    geo.write_fits_csv(out.dir / "fits.csv", fits, out.header_lines())
    out.written.append("fits.csv")
    rows = []
    for radius in cfg["radii"]:
        for source, values in (("game", game_means), ("fit", city_fits)):
            if len(values) < 3:
                continue
            try:
                rho = geo.density_correlation(values, pop, float(radius))
            except DRBError:
                rho = float("nan")
            rows.append([source, float(radius), rho])
    out.csv("density_correlation.csv", ["source", "radius", "pearson"], rows)
    return EXIT_OK


COMMANDS = {"table": cmd_table, "dynamics": cmd_dynamics, "perturb": cmd_perturb, "welfare": cmd_welfare,
            "routing": cmd_routing, "learning": cmd_learning, "geo": cmd_geo}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drbgame", description="Small-world formation game experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None, help="cap on BLAS/FFT worker threads")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (dotted key, YAML value)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config, args.set)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        out = Output(args.out, args.command, cfg, args.seed)
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                status = COMMANDS[args.command](cfg, args.seed, out)
        else:
            status = COMMANDS[args.command](cfg, args.seed, out)
    except (UsageError, InputError) as e:
        print(f"drbgame {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    for name in out.written:
        log.info("wrote %s", out.dir / name)
    return status


if __name__ == "__main__":
    sys.exit(main())
