"""Command-line runner: resolve an experiment config, estimate, write a report.

Configuration is a flat JSON object (``--config``) overridden by flags.
Exit status: 0 success, 2 configuration error, 3 unreliable estimate,
4 engine error.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError, InsufficientRows, SVGreeksError
from .greeks import GREEKS, METHODS, PAYOFF_KINDS, GreekEstimate, Payoff, estimate
from .malliavin import BACKENDS, REGIONS, du_functionals, write_weights_csv
from .model import CONVENTIONS, DEFAULT_PARAMS, ModelSpec, model_from_dict
from .paths import build_grid, simulate_paths, write_paths_csv

EXIT_OK, EXIT_CONFIG, EXIT_UNRELIABLE, EXIT_ENGINE = 0, 2, 3, 4
MODES = ("corrected", "paper-literal")
FORMATS = ("csv", "json")
CSV_COLUMNS = ("greek", "method", "payoff", "strike", "model", "n_paths", "n_steps", "seed",
               "discounted", "value", "stderr", "n_excluded", "runtime_ms")
DUMP_LIMIT = 1000


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=lambda: {"kind": "bs_constant",
                                                 **DEFAULT_PARAMS["bs_constant"]})
    payoff: str = "call"
    strike: float = 100.0
    greeks: list = field(default_factory=lambda: ["delta"])
    methods: list = field(default_factory=lambda: ["malliavin"])
    backend: str = "discrete-exact"
    mode: str = "corrected"
    region: str = "full-square"
    convention: str = "chain-rule"
    n_paths: int = 100_000
    n_steps: int = 64
    seed: int = 0
    workers: int = 1
    discount: bool = True
    antithetic: bool = False
    fd_bump: float | None = None
    output: str | None = None
    format: str = "csv"
    timing: bool = False
    dump_paths: str | None = None
    dump_weights: str | None = None

    def build_model(self) -> ModelSpec:
        return model_from_dict(self.model)

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name for f in fields(ExperimentConfig)}


def _resolve_model(value, base_dir="."):
    """Name, JSON file path, inline JSON text or dict -> fully populated model dict."""
    if isinstance(value, str):
        text = value.strip()
        if text in DEFAULT_PARAMS:
            value = {"kind": text}
        elif text.startswith("{"):
            try:
                value = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError("model", f"invalid inline JSON: {exc}") from None
        else:
            path = text if os.path.isabs(text) else os.path.join(base_dir, text)
            try:
                with open(path) as fh:
                    value = json.load(fh)
            except OSError as exc:
                raise ConfigError("model", f"not a built-in model name or readable file: {exc}") \
                    from None
            except json.JSONDecodeError as exc:
                raise ConfigError("model", f"invalid JSON in {path}: {exc}") from None
    m = model_from_dict(value)
    return {"kind": m.name, **{k: float(v) for k, v in m.params.items()}}


def _as_list(name, value):
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if not isinstance(value, list) or not value:
        raise ConfigError(name, "expected a non-empty list")
    return value


def _as_int(name, value, minimum):
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    try:
        v = int(value)
    except ValueError:
        raise ConfigError(name, f"expected an integer, got {value!r}") from None
    if isinstance(value, float) and v != value:
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if v < minimum:
        raise ConfigError(name, f"must be at least {minimum}, got {v}")
    return v


def _choice(name, value, allowed):
    if value not in allowed:
        raise ConfigError(name, f"{value!r} is not one of {list(allowed)}")
    return value


def resolve_config(doc: dict | None = None, overrides: dict | None = None,
                   base_dir: str = ".") -> ExperimentConfig:
    """Merge defaults < ``doc`` < ``overrides`` and validate every field."""
    merged = {}
    for src in (doc or {}), (overrides or {}):
        for key, value in src.items():
            if key not in _FIELDS:
                raise ConfigError(key, "unknown configuration key")
            if value is not None:
                merged[key] = value
    cfg = ExperimentConfig(**merged)
    cfg.model = _resolve_model(cfg.model, base_dir)
    cfg.payoff = _choice("payoff", cfg.payoff, PAYOFF_KINDS)
    try:
        cfg.strike = float(cfg.strike)
    except (TypeError, ValueError):
        raise ConfigError("strike", f"expected a number, got {cfg.strike!r}") from None
    if not cfg.strike > 0:
        raise ConfigError("strike", "must be positive")
    cfg.greeks = [_choice("greeks", g, GREEKS) for g in _as_list("greeks", cfg.greeks)]
    cfg.methods = [_choice("methods", m, METHODS) for m in _as_list("methods", cfg.methods)]
    cfg.backend = _choice("backend", cfg.backend, BACKENDS)
    cfg.mode = _choice("mode", cfg.mode, MODES)
    cfg.region = _choice("region", cfg.region, REGIONS)
    cfg.convention = _choice("convention", cfg.convention, CONVENTIONS)
    cfg.n_paths = _as_int("n_paths", cfg.n_paths, 1)
    cfg.n_steps = _as_int("n_steps", cfg.n_steps, 1)
    cfg.seed = _as_int("seed", cfg.seed, 0)
    cfg.workers = _as_int("workers", cfg.workers, 1)
    cfg.format = _choice("format", cfg.format, FORMATS)
    for flag in ("discount", "antithetic", "timing"):
        if not isinstance(getattr(cfg, flag), bool):
            raise ConfigError(flag, "expected true or false")
    if cfg.fd_bump is not None:
        try:
            cfg.fd_bump = float(cfg.fd_bump)
        except (TypeError, ValueError):
            raise ConfigError("fd_bump", f"expected a number, got {cfg.fd_bump!r}") from None
        if not cfg.fd_bump > 0:
            raise ConfigError("fd_bump", "must be positive")
    return cfg


# --- running -----------------------------------------------------------------------

def _method_for(cfg: ExperimentConfig, method: str) -> str:
    # --mode paper-literal switches the Malliavin rows to the printed weights
    if method == "malliavin" and cfg.mode == "paper-literal":
        return "malliavin-paper-literal"
    return method


def run_estimates(cfg: ExperimentConfig) -> list[GreekEstimate]:
    model = cfg.build_model()
    payoff = Payoff(cfg.payoff, cfg.strike)
    rows = []
    for greek, method in itertools.product(cfg.greeks, cfg.methods):
        est = estimate(model, payoff, greek, _method_for(cfg, method), n_paths=cfg.n_paths,
                       n_steps=cfg.n_steps, seed=cfg.seed, discount=cfg.discount,
                       backend=cfg.backend, region=cfg.region, convention=cfg.convention,
                       antithetic=cfg.antithetic, fd_bump=cfg.fd_bump, workers=cfg.workers)
        if not cfg.timing:
            est.runtime_ms = 0
        rows.append(est)
    return rows


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        d = r.as_dict()
        w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def compare_report(rows) -> list[dict]:
    """Pairwise differences of rows sharing (greek, payoff, strike), with z-scores.

    A pair is flagged when |z| > 3.  Pairs of exact rows (zero combined
    stderr) get z = 0 when equal and infinity otherwise.
    """
    groups = {}
    for r in rows:
        groups.setdefault((r.greek, r.payoff, r.strike), []).append(r)
    out = []
    for (greek, payoff, strike), members in groups.items():
        for a, b in itertools.combinations(members, 2):
            diff = a.value - b.value
            se = math.hypot(a.stderr, b.stderr)
            if se > 0:
                z = diff / se
            else:
                z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
            out.append({"greek": greek, "payoff": payoff, "strike": strike,
                        "a": a.method, "b": b.method, "diff": diff, "combined_stderr": se,
                        "z": z, "flagged": abs(z) > 3})
    if not out:
        raise InsufficientRows("need at least two rows sharing greek and payoff")
    return out


def format_json(cfg: ExperimentConfig, rows) -> str:
    doc = {"config": cfg.to_dict(), "results": [r.as_dict() for r in rows]}
    try:
        doc["comparison"] = compare_report(rows)
    except InsufficientRows:
        doc["comparison"] = []
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _dumps(cfg: ExperimentConfig):
    model = cfg.build_model()
    grid = build_grid(model.maturity, cfg.n_steps)
    idx = list(range(min(cfg.n_paths, DUMP_LIMIT)))
    bundle = simulate_paths(model, grid, cfg.seed, idx)
    if cfg.dump_paths:
        with open(cfg.dump_paths, "w", newline="") as fh:
            write_paths_csv(bundle, fh)
    if cfg.dump_weights:
        cache = du_functionals(bundle, backend=cfg.backend, region=cfg.region,
                               convention=cfg.convention)
        with open(cfg.dump_weights, "w", newline="") as fh:
            write_weights_csv(cache, idx, fh)


def run(cfg: ExperimentConfig, stdout=None) -> int:
    """Execute ``cfg``; write the report to ``cfg.output`` or ``stdout``."""
    stdout = stdout or sys.stdout
    rows = run_estimates(cfg)
    if cfg.dump_paths or cfg.dump_weights:
        _dumps(cfg)
    text = format_csv(rows) if cfg.format == "csv" else format_json(cfg, rows)
    if cfg.output:
        with open(cfg.output, "w", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return EXIT_OK if all(r.reliable for r in rows) else EXIT_UNRELIABLE


# --- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="svgreeks",
        description="Monte Carlo Greeks under two-factor stochastic volatility.")
    p.add_argument("--config", metavar="PATH", help="flat JSON experiment configuration")
    p.add_argument("--model", metavar="NAME|PATH", help="bs_constant, scott_exp or a JSON file")
    p.add_argument("--payoff", choices=PAYOFF_KINDS)
    p.add_argument("--strike", type=float)
    p.add_argument("--greek", dest="greeks", metavar="LIST", help="comma-separated Greeks")
    p.add_argument("--method", dest="methods", metavar="LIST", help="comma-separated methods")
    p.add_argument("--paths", dest="n_paths", type=int)
    p.add_argument("--steps", dest="n_steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--region", choices=REGIONS)
    p.add_argument("--convention", choices=CONVENTIONS)
    p.add_argument("--backend", choices=BACKENDS)
    p.add_argument("--no-discount", dest="discount", action="store_const", const=False)
    p.add_argument("--antithetic", action="store_const", const=True)
    p.add_argument("--fd-bump", dest="fd_bump", type=float)
    p.add_argument("--out", dest="output", metavar="PATH")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--timing", action="store_const", const=True,
                   help="record wall-clock runtime (reports are then not byte-reproducible)")
    p.add_argument("--dump-paths", metavar="PATH", help=f"CSV of the first {DUMP_LIMIT} paths")
    p.add_argument("--dump-weights", metavar="PATH",
                   help=f"CSV of per-path Malliavin functionals for the first {DUMP_LIMIT} paths")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved configuration and exit")
    return p


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout, stderr = stdout or sys.stdout, stderr or sys.stderr
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "print_config")}
    try:
        doc, base = {}, "."
        if args.config:
            try:
                with open(args.config) as fh:
                    doc = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError("config", str(exc)) from None
            if not isinstance(doc, dict):
                raise ConfigError("config", "configuration must be a JSON object")
            base = os.path.dirname(os.path.abspath(args.config))
        cfg = resolve_config(doc, overrides, base)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    if args.print_config:
        stdout.write(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        return EXIT_OK
    try:
        status = run(cfg, stdout)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except (SVGreeksError, ValueError, FloatingPointError) as exc:
        print(f"engine error (model={cfg.model['kind']}, seed={cfg.seed}, "
              f"n_steps={cfg.n_steps}): {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_ENGINE
    if status == EXIT_UNRELIABLE:
        print("warning: at least one estimate excluded more than 0.1% of paths", file=stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
