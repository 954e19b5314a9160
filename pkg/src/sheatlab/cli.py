"""Command line entry point: ``sheatlab <experiment> [--config PATH] ...``."""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .errors import ConfigError, NonFinite, SheatlabError
from .experiments import EXPERIMENTS, PARAM_COLUMN, RUNNERS, ExperimentConfig, ExperimentResult
from .noise import GridSpec
from .sigma import SigmaSpec
from .solver import Integrator, write_snapshot

logger = logging.getLogger("sheatlab")

DEFAULT_SEED = 20111
SEED_ENV = "SHEATLAB_SEED"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONFINITE = 3

TOP_KEYS = {
    "experiment", "seed", "replicates", "workers", "out", "boundary", "grid", "sigma",
    "lambdas", "radii", "betas", "times", "orders", "spacing", "u0_hi", "u0_lo",
    "alpha", "independence_beta", "oracle", "snapshots",
}
SECTION_KEYS = {
    "grid": {"kappa", "dt", "dx", "t_end", "x_min", "x_max", "half_width"},
    "sigma": {"kind", "eps0", "c", "gamma", "b"},
    "oracle": {"coeff", "n_steps", "points"},
}
# keys that never influence results and so stay out of the config hash
_UNHASHED = {"workers", "out"}

_BASE = {
    "seed": None,
    "replicates": 1000,
    "workers": 1,
    "out": "results",
    "boundary": "periodic",
    "grid": {"kappa": 1.0, "dt": 0.005, "dx": 0.1, "t_end": 1.0},
    "sigma": {"kind": "bounded", "eps0": 1.0, "b": 1.0},
    "snapshots": [],
}

DEFAULTS = {
    "tails": {
        "replicates": 10000,
        "grid": {"half_width": 20.0},
        "lambdas": [1.0, 2.0, 3.0, 4.0, 5.0],
        "spacing": 2.5,
    },
    "supscaling": {
        "replicates": 100,
        "grid": {"dt": 0.0025},
        "radii": [16 * 0.1 * 2 ** i for i in range(9)],
    },
    "moments": {
        "replicates": 10000,
        "grid": {"dx": 0.05, "dt": math.pi / 3142, "t_end": math.pi},
        "sigma": {"kind": "constant", "eps0": 1.0},
        "orders": [1, 2, 3, 4],
    },
    "coupling": {
        "replicates": 200,
        "betas": [4.0, 8.0, 16.0, 32.0, 64.0],
    },
    "comparison": {
        "replicates": 100,
        "grid": {"dx": 0.05, "dt": 0.001},
        "sigma": {"kind": "linear", "c": 1.0},
        "u0_hi": 2.0,
        "u0_lo": 1.0,
        "times": [0.25, 0.5, 0.75, 1.0],
    },
    "lyapunov": {
        "replicates": 64,
        "grid": {"dx": 0.05, "dt": 0.001, "t_end": 20.0},
        "sigma": {"kind": "linear", "c": 1.0},
        "times": [float(t) for t in range(1, 21)],
        "spacing": 4.0,
    },
    "oracle": {
        "grid": {"t_end": 1.0},
        "oracle": {"coeff": 2.0, "n_steps": 1000, "points": 101},
    },
}


def _deep_merge(base, update):
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def _load_yaml(path):
    """Parse a YAML mapping, returning (data, {dotted_key: line})."""
    text = Path(path).read_text()
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"cannot parse {path}: {exc}", line=mark.line + 1 if mark else None)
    if node is None:
        return {}, {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{path} must contain a mapping", line=node.start_mark.line + 1)
    lines = {}

    def walk(n, prefix):
        for knode, vnode in n.value:
            key = prefix + str(knode.value)
            lines[key] = knode.start_mark.line + 1
            if isinstance(vnode, yaml.MappingNode):
                walk(vnode, key + ".")

    walk(node, "")
    return yaml.safe_load(text) or {}, lines


def _check_keys(data, lines):
    for key, value in data.items():
        if key not in TOP_KEYS:
            raise ConfigError("unknown key", key=key, line=lines.get(key))
        if key in SECTION_KEYS:
            if not isinstance(value, dict):
                raise ConfigError("expected a mapping", key=key, line=lines.get(key))
            for sub in value:
                if sub not in SECTION_KEYS[key]:
                    dotted = f"{key}.{sub}"
                    raise ConfigError("unknown key", key=dotted, line=lines.get(dotted))


def _set_dotted(d, dotted, value):
    parts = dotted.split(".")
    cur = d
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value


def _get_dotted(d, dotted):
    cur = d
    for p in dotted.split("."):
        if not isinstance(cur, dict) or p not in cur:
            return None
        cur = cur[p]
    return cur


def _auto_half_width(exp, resolved):
    g = resolved["grid"]
    spread = math.sqrt(g["kappa"] * g["t_end"])
    if exp == "supscaling":
        return max(resolved["radii"]) + 4.0 * spread
    if exp == "coupling":
        w = math.sqrt(g["t_end"])
        betas = resolved["betas"]
        return max(max(betas) * w, 4.0 * min(betas) * w)
    return max(4.0 * spread, 2.0 * g["dx"])


def _hash(resolved) -> str:
    payload = {k: v for k, v in resolved.items() if k not in _UNHASHED}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def parse_config(experiment, path=None, flags=None) -> ExperimentConfig:
    """Resolve defaults, an optional YAML file and command-line flags.

    ``flags`` maps dotted keys to values; they override the file, and each
    override of a file value is logged.
    """
    flags = dict(flags or {})
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}", key="experiment")
    file_data, lines = ({}, {})
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} does not exist")
        file_data, lines = _load_yaml(path)
        _check_keys(file_data, lines)
        file_exp = file_data.get("experiment")
        if file_exp is not None and file_exp != experiment:
            logger.info("experiment: subcommand %r overrides file value %r", experiment, file_exp)
    for key in flags:
        head = key.split(".")[0]
        if head not in TOP_KEYS or ("." in key and key.split(".", 1)[1] not in SECTION_KEYS.get(head, ())):
            raise ConfigError("unknown key", key=key)

    resolved = _deep_merge(_BASE, DEFAULTS[experiment])
    resolved = _deep_merge(resolved, file_data)
    for key, value in flags.items():
        old = _get_dotted(file_data, key)
        if old is not None and old != value:
            logger.info("%s: flag value %r overrides file value %r (line %s)", key, value, old, lines.get(key))
        _set_dotted(resolved, key, value)
    resolved["experiment"] = experiment

    if resolved.get("seed") is None:
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                resolved["seed"] = int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}", key="seed")
            logger.info("seed taken from %s", SEED_ENV)
        else:
            resolved["seed"] = DEFAULT_SEED
    return _build(resolved, lines)


def _build(resolved, lines) -> ExperimentConfig:
    exp = resolved["experiment"]

    def fail(msg, key):
        raise ConfigError(msg, key=key, line=lines.get(key))

    try:
        seed = int(resolved["seed"])
    except (TypeError, ValueError):
        fail("seed must be an integer", "seed")
    if not 0 <= seed < 2 ** 64:
        fail("seed must fit in an unsigned 64-bit integer", "seed")
    n_rep = resolved.get("replicates")
    if not isinstance(n_rep, int) or n_rep < 1:
        fail("replicates must be an integer >= 1", "replicates")
    workers = resolved.get("workers")
    if not isinstance(workers, int) or workers < 1:
        fail("workers must be an integer >= 1", "workers")

    needs = {"tails": "lambdas", "supscaling": "radii", "coupling": "betas",
             "comparison": "times", "lyapunov": "times", "moments": "orders"}
    if exp in needs:
        key = needs[exp]
        val = resolved.get(key)
        if not isinstance(val, list) or not val:
            fail(f"{key} must be a nonempty list", key)
        resolved[key] = [float(v) if key != "orders" else int(v) for v in val]
        if key in ("radii", "betas", "times") and any(v <= 0 for v in resolved[key]):
            fail(f"{key} must be positive", key)

    g = resolved["grid"]
    for k in ("kappa", "dt", "dx", "t_end"):
        if not isinstance(g.get(k), (int, float)):
            fail(f"grid.{k} must be a number", f"grid.{k}")
    if g["kappa"] * g["dt"] / g["dx"] ** 2 > 1.0 + 1e-12:
        fail(f"stability requires kappa*dt/dx^2 <= 1, got {g['kappa'] * g['dt'] / g['dx'] ** 2:.6g}", "grid.dt")
    if exp in ("comparison", "lyapunov") and max(resolved["times"]) > g["t_end"] + 1e-12:
        g["t_end"] = max(resolved["times"])
    if ("x_min" in g) != ("x_max" in g):
        fail("give both x_min and x_max, or neither", "grid.x_min")
    if "x_min" not in g and exp != "oracle":
        hw = g.get("half_width")
        if hw is None:
            hw = _auto_half_width(exp, resolved)
            g["half_width"] = hw
        n = math.ceil(hw / g["dx"] - 1e-9)
        g["x_min"], g["x_max"] = -n * g["dx"], n * g["dx"]
    grid = None
    if exp != "oracle":
        try:
            grid = GridSpec(float(g["kappa"]), float(g["dt"]), float(g["dx"]),
                            float(g["x_min"]), float(g["x_max"]), float(g["t_end"]))
        except ConfigError as exc:
            raise ConfigError(str(exc).split(" [key")[0], key=exc.key, line=lines.get(exc.key))
    else:
        if g["t_end"] <= 0 or g["kappa"] <= 0:
            fail("oracle needs kappa > 0 and t_end > 0", "grid.t_end")
        grid = None

    s = resolved["sigma"]
    try:
        sigma = SigmaSpec(s.get("kind", "bounded"), eps0=float(s.get("eps0", 0.0)), c=float(s.get("c", 0.0)),
                          gamma=float(s.get("gamma", 0.1)), b=float(s.get("b", 0.0)))
    except ValueError as exc:
        fail(str(exc), "sigma.kind")
    if exp == "comparison" and resolved["u0_hi"] < resolved["u0_lo"]:
        fail("u0_hi must be >= u0_lo", "u0_hi")
    if exp == "moments" and any(k > 8 or k < 1 for k in resolved["orders"]):
        fail("moment orders must lie in 1..8", "orders")
    if resolved.get("boundary") not in ("periodic", "dirichlet"):
        fail("boundary must be 'periodic' or 'dirichlet'", "boundary")

    orc = resolved.get("oracle", {}) or {}
    cfg = ExperimentConfig(
        experiment=exp,
        grid=grid,
        sigma=sigma,
        n_replicates=n_rep,
        master_seed=seed,
        workers=workers,
        out=str(resolved.get("out", "results")),
        boundary=resolved["boundary"],
        lambdas=resolved.get("lambdas", []) or [],
        radii=resolved.get("radii", []) or [],
        betas=resolved.get("betas", []) or [],
        times=resolved.get("times", []) or [],
        orders=resolved.get("orders", []) or [],
        spacing=float(resolved.get("spacing", 2.5)),
        u0_hi=float(resolved.get("u0_hi", 2.0)),
        u0_lo=float(resolved.get("u0_lo", 1.0)),
        alpha=resolved.get("alpha"),
        independence_beta=resolved.get("independence_beta"),
        coeff=float(orc.get("coeff", 2.0)),
        n_steps=int(orc.get("n_steps", 1000)),
        points=int(orc.get("points", 101)),
        snapshots=[float(t) for t in resolved.get("snapshots", []) or []],
        resolved=resolved,
    )
    cfg.resolved["version"] = __version__
    cfg.config_hash = _hash(cfg.resolved)
    return cfg


# -------------------------------------------------------------------- output

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _header(cfg: ExperimentConfig):
    return [
        f"# sheatlab {__version__}",
        f"# master_seed={cfg.master_seed}",
        f"# config={json.dumps(cfg.resolved, sort_keys=True)}",
        f"# config_hash={cfg.config_hash}",
        f"# generated={_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}",
    ]


def csv_body(cfg: ExperimentConfig, result: ExperimentResult) -> str:
    if result.experiment == "oracle":
        lines = ["t,f"] + [f"{_fmt(t)},{_fmt(f)}" for t, f in result.rows]
    else:
        lines = [f"experiment,{result.param},estimate,ci_lo,ci_hi,n,seed,config_hash"]
        for p, e, lo, hi, n in result.rows:
            lines.append(",".join([result.experiment, _fmt(float(p)), _fmt(float(e)), _fmt(float(lo)),
                                   _fmt(float(hi)), str(int(n)), str(cfg.master_seed), cfg.config_hash]))
    return "\n".join(lines) + "\n"


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(type(o))


def write_outputs(cfg: ExperimentConfig, result: ExperimentResult):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{result.experiment}.csv"
    json_path = out / f"{result.experiment}.json"
    _atomic_write(csv_path, "\n".join(_header(cfg)) + "\n" + csv_body(cfg, result))
    summary = {
        "experiment": result.experiment,
        "version": __version__,
        "master_seed": cfg.master_seed,
        "config_hash": cfg.config_hash,
        "config": cfg.resolved,
        "summary": result.summary,
    }
    _atomic_write(json_path, json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    return csv_path, json_path


def _write_snapshots(cfg: ExperimentConfig):
    if not cfg.snapshots or cfg.grid is None:
        return []
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    integ = Integrator(cfg.run_config(0))
    header = {"sheatlab": __version__, "master_seed": cfg.master_seed, "config_hash": cfg.config_hash,
              "replicate": 0}
    paths = []
    for t in sorted(cfg.snapshots):
        integ.advance_to(int(round(t / cfg.grid.dt)))
        paths.append(write_snapshot(integ.field(), out / f"snapshot_t{t:g}.csv", header))
    return paths


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run, write outputs, and return the process exit code."""
    try:
        result = RUNNERS[cfg.experiment](cfg)
        write_outputs(cfg, result)
        _write_snapshots(cfg)
    except NonFinite as exc:
        logger.error("solver failure: %s", exc)
        return EXIT_NONFINITE
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    logger.info("wrote %s/%s.csv", cfg.out, cfg.experiment)
    return EXIT_OK


def _parse_set(items):
    flags = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flags[k.strip()] = yaml.safe_load(v)
    return flags


def build_parser():
    p = argparse.ArgumentParser(prog="sheatlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", type=str)
        sp.add_argument("--replicates", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. --set grid.dx=0.05")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        flags = _parse_set(args.set)
        for key in ("seed", "workers", "out", "replicates"):
            val = getattr(args, key)
            if val is not None:
                flags[key] = val
        cfg = parse_config(args.experiment, args.config, flags)
    except ConfigError as exc:
        print(f"sheatlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = run_experiment(cfg)
    if code == EXIT_OK:
        print(Path(cfg.out) / f"{cfg.experiment}.csv")
    return code


if __name__ == "__main__":
    sys.exit(main())
