"""Command-line front end.

Every subcommand resolves its settings from built-in defaults, an optional
TOML file (``--config``) and command-line flags, in that order of
precedence, and writes the resolved settings to ``manifest.toml`` next to
its artifacts. Passing that manifest back through ``--config`` reproduces
every artifact byte for byte, for any ``--threads`` value.

Exit codes: 0 ran (verdicts are inside the reports), 2 configuration
error, 3 data error, 4 anything else.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import dumps_toml, merge, read_toml
from .data import ColumnThreshold, Constant, Schema, load_csv, write_csv
from .errors import AllRoundsFailed, ConfigError, DataError, FairImproveError
from .improvement import DeltaTriple
from .milpcheck import check_csv, run_milp_check
from .procedure import (
    ProcedureConfig,
    delta_sweep,
    render_report,
    render_sweep_csv,
    render_sweep_text,
    run_procedure,
)
from .selection import rule_from_mapping
from .simulation import (
    SCORE_COLUMN,
    GameSimConfig,
    PowerSimConfig,
    SyntheticConfig,
    game_csv,
    game_summary,
    gen_synthetic,
    power_csv,
    run_game,
    run_power_curve,
    verify_bounds,
)
from .utility import UtilitySpec, utility_from_name

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
MAX_SEED = 2**64 - 1

DEFAULTS = {
    "procedure": {"K": 7, "alpha": 0.05, "beta": 0.5, "Q": 10_000,
                  "delta_r": 0.0, "delta_b": 0.0, "delta_f": 0.0},
    "utility": {"accuracy": "calibration"},
    "rule": {"rule": "ols", "kappa": 0.1},
    "status_quo": {"kind": "column", "column": SCORE_COLUMN, "quantile": 0.9},
    "sweep": {"delta_a": [0.0, 0.1, 0.2], "delta_f": [0.0, 0.25, 0.5]},
    "power": {k: v for k, v in PowerSimConfig().to_mapping().items() if k != "seed"},
    "game": {k: v for k, v in GameSimConfig().to_mapping().items() if k != "seed"},
    "bounds": {"alpha": 0.05, "K": 7},
    "data": {k: v for k, v in SyntheticConfig().to_mapping().items() if k != "seed"},
    "milp_check": {"instances": 50},
}

# Config sections each subcommand reads, and whether it needs input data.
SECTIONS = {
    "test": (("procedure", "utility", "rule", "status_quo"), True),
    "sweep": (("procedure", "utility", "rule", "status_quo", "sweep"), True),
    "simulate-power": (("power",), False),
    "simulate-game": (("game",), False),
    "verify-bounds": (("bounds",), False),
    "gen-data": (("data",), False),
    "milp-check": (("milp_check",), False),
}


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64 - 1]")
    return value


def _positive(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="fairimprove", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"fairimprove {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML settings file (a previous manifest works)")
    common.add_argument("--seed", type=_seed, help="master seed, overrides the config file")
    common.add_argument("--threads", type=_positive, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text)

    for name, text in (("test", "run the K-split improvement test"),
                       ("sweep", "median p-values over a grid of improvement margins")):
        p = add(name, text)
        p.add_argument("--data", type=Path, help="input CSV file")
        p.add_argument("--schema", type=Path, help="TOML file naming the CSV column roles")
        p.add_argument("--K", type=_positive, help="number of sample splits")
        p.add_argument("--Q", type=_positive, help="bootstrap replicates per split")
    p = add("simulate-power", "rejection rates of the fairness test on the bivariate normal design")
    p.add_argument("--reps", type=_positive, help="Monte Carlo replicates per grid point")
    p = add("simulate-game", "rerun game between an analyst and the two testing procedures")
    p.add_argument("--reps", type=_positive, help="simulated worlds per procedure")
    p = add("verify-bounds", "Hoeffding bound on the size of the median-of-K procedure")
    p.add_argument("--alpha", type=float)
    p.add_argument("--K", type=_positive)
    p = add("gen-data", "write a synthetic screening dataset and its schema")
    p.add_argument("--n", type=_positive, help="number of rows")
    p = add("milp-check", "compare the MILP selection programs with brute-force enumeration")
    p.add_argument("--instances", type=_positive, help="random instances per program")
    return parser


def resolve_config(args):
    """Defaults, then ``--config``, then flags; returns the manifest mapping."""
    sections, needs_data = SECTIONS[args.command]
    raw = read_toml(args.config) if args.config is not None else {}
    if "command" in raw and raw["command"] != args.command:
        raise ConfigError(f"config was written by {raw['command']!r}, not {args.command!r}")
    unknown = set(raw) - {"command", "version", "seed", "data", "schema", *DEFAULTS}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = {"command": args.command, "version": __version__,
           "seed": args.seed if args.seed is not None else int(raw.get("seed", 0))}
    if not 0 <= cfg["seed"] <= MAX_SEED:
        raise ConfigError("seed must lie in [0, 2^64 - 1]")
    if needs_data:
        base = args.config.parent if args.config is not None else Path(".")
        for key in ("data", "schema"):
            flag = getattr(args, key)
            value = flag if flag is not None else raw.get(key)
            if value is None:
                raise ConfigError(f"no {key} file given; pass --{key} PATH or set {key!r} in --config")
            path = Path(value)
            if flag is None and not path.is_absolute():
                path = base / path
            cfg[key] = str(path.resolve())
    for name in sections:
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        if name == "rule" and section.get("rule", "ols") != DEFAULTS["rule"]["rule"]:
            cfg[name] = dict(section)
        elif name == "status_quo" and section.get("kind", "column") != "column":
            cfg[name] = dict(section)
        else:
            cfg[name] = merge(DEFAULTS[name], section)
    overrides = {
        "procedure": {"K": getattr(args, "K", None), "Q": getattr(args, "Q", None)},
        "power": {"reps": getattr(args, "reps", None)},
        "game": {"reps": getattr(args, "reps", None)},
        "bounds": {"alpha": getattr(args, "alpha", None), "K": getattr(args, "K", None)},
        "data": {"n": getattr(args, "n", None)},
        "milp_check": {"instances": getattr(args, "instances", None)},
    }
    for name in sections:
        cfg[name] = merge(cfg[name], overrides.get(name, {}))
    if "rule" in cfg:
        # Record every rule setting, including the rule's own defaults.
        cfg["rule"] = rule_from_mapping(cfg["rule"]).to_mapping()
    return cfg


# -- builders ---------------------------------------------------------------


def _procedure_config(cfg, threads):
    p = dict(cfg["procedure"])
    try:
        delta = DeltaTriple(float(p.pop("delta_r")), float(p.pop("delta_b")), float(p.pop("delta_f")))
        return ProcedureConfig(delta=delta, seed=cfg["seed"], threads=threads, **p)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad [procedure] settings: {exc}") from None


def _utility_spec(section):
    section = dict(section)
    price = section.pop("price", None)
    accuracy = section.pop("accuracy", "calibration")
    fairness = section.pop("fairness", None)
    if section:
        raise ConfigError(f"unknown [utility] keys: {sorted(section)}")

    def make(name):
        return utility_from_name(name, price=price) if name == "profit" and price is not None \
            else utility_from_name(name)

    return UtilitySpec(make(accuracy), make(fairness) if fairness is not None else None)


def _status_quo(section, data):
    kind = section.get("kind", "column")
    if kind == "column":
        column = section.get("column", SCORE_COLUMN)
        if "threshold" in section:
            return ColumnThreshold(column, float(section["threshold"]))
        return ColumnThreshold.at_quantile(data, column, float(section.get("quantile", 0.9)))
    if kind == "constant":
        return Constant(int(section.get("value", 0)))
    raise ConfigError(f"unknown status quo kind {kind!r}; choose 'column' or 'constant'")


def _load_inputs(cfg):
    schema = Schema.from_toml(cfg["schema"])
    try:
        data = load_csv(cfg["data"], schema)
    except FileNotFoundError:
        raise DataError(f"data file not found: {cfg['data']}") from None
    return data, _status_quo(cfg["status_quo"], data)


# -- commands ---------------------------------------------------------------


def cmd_test(cfg, out, threads):
    data, a0 = _load_inputs(cfg)
    pcfg = _procedure_config(cfg, threads)
    result = run_procedure(data, a0, rule_from_mapping(cfg["rule"]), _utility_spec(cfg["utility"]), pcfg)
    table, text = render_report(result, title=f"improvement test: {data.n} rows, K = {pcfg.K}")
    _write(out, "report.csv", table)
    _write(out, "report.txt", text)
    return text


def cmd_sweep(cfg, out, threads):
    data, a0 = _load_inputs(cfg)
    grid = delta_sweep(data, a0, rule_from_mapping(cfg["rule"]), _utility_spec(cfg["utility"]),
                       _procedure_config(cfg, threads), cfg["sweep"]["delta_a"], cfg["sweep"]["delta_f"])
    text = render_sweep_text(grid)
    _write(out, "sweep.csv", render_sweep_csv(grid))
    _write(out, "sweep.txt", text)
    return text


def cmd_simulate_power(cfg, out, threads):
    p = dict(cfg["power"])
    try:
        sim = PowerSimConfig(
            etas=tuple(p.pop("etas")), ells=tuple(p.pop("ells")),
            cov=tuple(tuple(r) for r in p.pop("cov")), seed=cfg["seed"], **p,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad [power] settings: {exc}") from None
    rows = run_power_curve(sim, threads)
    lines = [f"fairness-test rejection rates, {sim.reps} replicates per point, Q = {sim.Q}", ""]
    lines += [f"eta = {r.eta:<5g} ell = {r.ell:<5d} rate = {r.rate:.4f} (MC s.e. {r.mc_se:.4f})" for r in rows]
    text = "\n".join(lines) + "\n"
    _write(out, "power.csv", power_csv(rows))
    _write(out, "power.txt", text)
    return text


def cmd_simulate_game(cfg, out, threads):
    g = dict(cfg["game"])
    for key in ("cost1", "cost2"):
        if key in g:
            g[key] = tuple(g[key])
    try:
        sim = GameSimConfig(seed=cfg["seed"], **g)
    except TypeError as exc:
        raise ConfigError(f"bad [game] settings: {exc}") from None
    result = run_game(sim, threads)
    text = game_summary(result)
    _write(out, "game.csv", game_csv(result))
    _write(out, "game.txt", text)
    return text


def cmd_verify_bounds(cfg, out, threads):
    b = cfg["bounds"]
    check = verify_bounds(float(b["alpha"]), int(b["K"]))
    text = (
        f"alpha = {check.alpha:g}, K = {check.K}\n"
        f"Hoeffding bound exp(-K (1 - alpha)^2 / 2) = {check.hoeffding:.10f}\n"
        f"bound < alpha iff K > {check.threshold:.8f}\n"
        f"minimal K = {check.min_K}\n"
        f"satisfied at K = {check.K}: {'yes' if check.satisfied else 'no'}\n"
    )
    _write(out, "bounds.txt", text)
    return text


def cmd_gen_data(cfg, out, threads):
    d = cfg["data"]
    try:
        data = gen_synthetic(seed=cfg["seed"], **d)
    except TypeError as exc:
        raise ConfigError(f"bad [data] settings: {exc}") from None
    out.mkdir(parents=True, exist_ok=True)
    write_csv(data, out / "data.csv")
    _write(out, "schema.toml", dumps_toml(Schema.for_dataset(data).to_mapping()))
    return f"wrote {data.n} rows ({data.n_b} in group b) to {out / 'data.csv'}\n"


def cmd_milp_check(cfg, out, threads):
    rows = run_milp_check(int(cfg["milp_check"]["instances"]), cfg["seed"], threads)
    worst = max(r.deviation for r in rows)
    feasible = sum(1 for r in rows if r.milp == r.milp)
    text = (
        f"{len(rows)} programs, {feasible} feasible\n"
        f"max deviation: {worst:.3e}\n"
        f"agreement within 1e-6: {'yes' if worst <= 1e-6 else 'no'}\n"
    )
    _write(out, "milp_check.csv", check_csv(rows))
    _write(out, "milp_check.txt", text)
    return text


COMMANDS = {
    "test": cmd_test,
    "sweep": cmd_sweep,
    "simulate-power": cmd_simulate_power,
    "simulate-game": cmd_simulate_game,
    "verify-bounds": cmd_verify_bounds,
    "gen-data": cmd_gen_data,
    "milp-check": cmd_milp_check,
}


def _write(out, name, text):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8", newline="\n")


def run(argv=None):
    """Parse ``argv``, run the subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = args.out.resolve()
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from None
        text = COMMANDS[args.command](cfg, out, args.threads)
        _write(out, "manifest.toml", dumps_toml(cfg))
    except ConfigError as exc:
        print(f"fairimprove: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, AllRoundsFailed) as exc:
        print(f"fairimprove: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FairImproveError as exc:
        print(f"fairimprove: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error code
        print(f"fairimprove: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    sys.stdout.write(text)
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
