"""``sface`` command-line interface.

Commands: ``estimate``, ``sensitivity``, ``simulate`` and ``profiles``.
Every flag can also be given in an INI config file (``--config``), in a
``[sface]`` section or a section named after the command; keys are the flag
names without the leading dashes (``lambda1-0`` or ``lambda1_0``). Flags on
the command line override the file.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 fit or
estimation failure.
"""
from __future__ import annotations

import argparse
import configparser
import io
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .data import DataError, MissingnessModelSpec, Schema, load_csv
from .estimators import Method
from .glm import FitError
from .identification import IdentificationError, SensitivityParams, validate_against
from .inference import BootstrapError, BootstrapPlan, default_threads
from .pipeline import SCALES, AnalysisConfig, run_estimation
from .profiles import ALL_COMBOS, PROFILES, AssumptionCombo, compatible_profiles, feasible_profiles

log = logging.getLogger("sface")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_FIT = 0, 2, 3, 4
FIXTURE = "cohort200.csv"
FIXTURE_SCHEMA = "exposure=A,outcome=Y,covariates=X1+X2"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Flag registry: one entry per flag, with the commands that consume it.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Flag:
    name: str
    commands: Tuple[str, ...]
    help: str
    default: object = None
    type: Callable = str
    choices: Optional[Tuple[str, ...]] = None
    is_switch: bool = False

    @property
    def dest(self):
        return self.name.replace("-", "_")


EST = ("estimate",)
SENS = ("sensitivity",)
DATA_CMDS = ("estimate", "sensitivity")
ALL = ("estimate", "sensitivity", "simulate", "profiles")

FLAGS: Tuple[Flag, ...] = (
    Flag("config", ALL, "INI config file; command-line flags override its values"),
    Flag("data", DATA_CMDS, "input CSV (default: the bundled 200-row example cohort)"),
    Flag("schema", DATA_CMDS, "column mapping, e.g. 'exposure=A,outcome=Y,covariates=X1+X2,"
         "weight=w,case_covariates=Z' (default matches the bundled cohort)"),
    Flag("missingness-covariates", DATA_CMDS, "'+'-separated predictors of subtype availability "
         "(default: covariates and case covariates)"),
    Flag("truncation", DATA_CMDS, "quantile at which missing-subtype weights are capped",
         0.99, float),
    Flag("refit-missingness", DATA_CMDS, "refit the missing-subtype model in every bootstrap "
         "replicate (yes/no)", "yes", str, ("yes", "no")),
    Flag("combo", ("estimate", "sensitivity", "profiles"), "monotonicity assumption per subtype, "
         "e.g. s,s or d,n (s: S-Monotonicity, d: D-Monotonicity, n: none)"),
    Flag("method", DATA_CMDS, "estimation method(s), comma separated for estimate",
         None, str),
    Flag("scale", DATA_CMDS, "effect scale(s): diff, rr (comma separated for estimate)"),
    Flag("augmentation", ("estimate", "sensitivity", "simulate"), "DR augmentation: unit (per-unit "
         "outcome predictions) or mean (sample-mean predictions)", "unit", str, ("unit", "mean")),
    Flag("lambda1", DATA_CMDS, "switching probability subtype 1 -> 2: value, or lo:hi:step "
         "for sensitivity", "0"),
    Flag("lambda2", DATA_CMDS, "switching probability subtype 2 -> 1: value, or lo:hi:step "
         "for sensitivity", "0"),
    Flag("lambda1-0", DATA_CMDS, "probability subtype-1 cases become disease-free when exposed",
         0.0, float),
    Flag("lambda2-0", DATA_CMDS, "probability subtype-2 cases become disease-free when exposed",
         0.0, float),
    Flag("clip-bounds", SENS, "truncate the grid at the data-driven lambda bounds (yes/no)",
         "yes", str, ("yes", "no")),
    Flag("alpha", SENS, "significance level for grid cells", 0.05, float),
    Flag("boundary", SENS, "also write the significance boundary as JSON to this path"),
    Flag("boot", ("estimate", "sensitivity", "simulate"), "bootstrap replicates", None, int),
    Flag("seed", ("estimate", "sensitivity", "simulate"), "master random seed", 1, int),
    Flag("threads", ("estimate", "sensitivity", "simulate"), "worker count (default: "
         "$SFACE_THREADS or 1); results do not depend on it", None, int),
    Flag("out", ALL, "output path (default: standard output)"),
    Flag("format", ALL, "output format", None, str, ("json", "csv", "text")),
    Flag("study", ("simulate",), "simulation study", "I", str, ("I", "II", "III")),
    Flag("n", ("simulate",), "sample size per simulated dataset", 10_000, int),
    Flag("sims", ("simulate",), "number of simulated datasets", 500, int),
    Flag("misspec", ("simulate",), "Study III misspecification", "none", str,
         ("none", "exposure", "outcome", "both")),
    Flag("truth-mc", ("simulate",), "Monte-Carlo population size for the true effects",
         1_000_000, int),
    Flag("observed", ("profiles",), "observed (A,Y1,Y2), e.g. 0,1,0: list compatible profiles"),
    Flag("verbose", ALL, "log progress to standard error", False, bool, None, True),
)


def flags_for(command):
    return [f for f in FLAGS if command in f.commands]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sface", description="Subtype-free average causal effects: estimation, "
        "sensitivity grids, simulation studies and profile tables.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    helps = {"estimate": "estimate effects with bootstrap CIs (JSON report)",
             "sensitivity": "effects over a grid of switching probabilities (CSV)",
             "simulate": "run a simulation study (metrics CSV)",
             "profiles": "potential-outcome profile tables"}
    for cmd in ALL:
        p = sub.add_parser(cmd, help=helps[cmd], description=helps[cmd])
        for f in flags_for(cmd):
            if f.is_switch:
                p.add_argument(f"--{f.name}", dest=f.dest, action="store_true", default=None,
                               help=f.help)
            else:
                p.add_argument(f"--{f.name}", dest=f.dest, default=None, choices=f.choices,
                               help=f.help + (f" (default: {f.default})" if f.default not in
                                              (None, False) else ""))
    return parser


def _read_config(path, command):
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    allowed = {f.dest: f for f in flags_for(command)}
    values = {}
    for section in ("sface", command):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in allowed or dest == "config":
                raise ConfigError(f"config key {key!r} in [{section}] is not a "
                                  f"{command} option")
            values[dest] = raw
    unknown = [s for s in cp.sections() if s not in ("sface", *ALL)]
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return values


def resolve(args: argparse.Namespace) -> Dict[str, object]:
    """Merge defaults < config file < command-line flags and convert types."""
    command = args.command
    from_file = _read_config(args.config, command) if args.config else {}
    out = {}
    for f in flags_for(command):
        cli_value = getattr(args, f.dest)
        raw = cli_value if cli_value is not None else from_file.get(f.dest, f.default)
        if f.is_switch:
            out[f.dest] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "yes", "true")
            continue
        if raw is None:
            out[f.dest] = None
            continue
        try:
            val = f.type(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"--{f.name}: cannot interpret {raw!r}") from None
        if f.choices and val not in f.choices:
            raise ConfigError(f"--{f.name}: {val!r} is not one of {', '.join(f.choices)}")
        out[f.dest] = val
    return out


# ---------------------------------------------------------------------------
# Shared option parsing
# ---------------------------------------------------------------------------

def parse_schema(text: str) -> Schema:
    fields = {}
    for part in text.split(","):
        if not part.strip():
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise ConfigError(f"schema entry {part!r} is not key=value")
        fields[key.strip()] = value.strip()
    unknown = set(fields) - {"exposure", "outcome", "covariates", "weight", "case_covariates"}
    if unknown:
        raise ConfigError(f"unknown schema key(s): {', '.join(sorted(unknown))}")
    if "exposure" not in fields or "outcome" not in fields:
        raise ConfigError("schema needs exposure= and outcome=")
    split = lambda v: tuple(c for c in v.split("+") if c) if v else ()
    return Schema(fields["exposure"], fields["outcome"], split(fields.get("covariates", "")),
                  fields.get("weight") or None, split(fields.get("case_covariates", "")))


def _combo(opts, default="s,s"):
    try:
        return AssumptionCombo.parse(opts.get("combo") or default)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _list(value, allowed, what):
    items = [v.strip().lower() for v in str(value).split(",") if v.strip()]
    bad = [v for v in items if v not in allowed]
    if bad or not items:
        raise ConfigError(f"--{what}: expected a comma-separated subset of {', '.join(allowed)}")
    return list(dict.fromkeys(items))


def _load(opts):
    schema = parse_schema(opts.get("schema") or FIXTURE_SCHEMA)
    if opts.get("data"):
        path = opts["data"]
        try:
            return load_csv(path, schema), schema, path
        except FileNotFoundError as exc:
            raise DataError(f"data file not found: {path}") from exc
    with resources.as_file(resources.files("sface.fixtures") / FIXTURE) as path:
        return load_csv(path, schema), schema, f"<bundled {FIXTURE}>"


def _analysis_config(opts, schema, data, methods):
    methods = [Method.parse(m) for m in methods]
    if any(m.needs_exposure_model for m in methods) and not schema.covariates:
        raise ConfigError("IPTW and DR need covariates for the propensity model "
                          "(schema covariates=...)")
    missing = None
    if (data.outcome == 9).any():
        names = opts.get("missingness_covariates")
        names = (tuple(c for c in names.split("+") if c) if names
                 else schema.covariates + schema.case_covariates)
        absent = [c for c in names if c not in schema.covariates + schema.case_covariates]
        if absent:
            raise ConfigError(f"missingness covariates not in the schema: {', '.join(absent)}")
        try:
            missing = MissingnessModelSpec(names, opts["truncation"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return AnalysisConfig(methods=tuple(methods), augmentation=opts["augmentation"],
                          missingness=missing)


def _fixed_lambda(opts, name):
    try:
        v = float(opts[name])
    except ValueError:
        raise ConfigError(f"--{name.replace('_', '-')} must be a single value for estimate") from None
    return v


def _threads(opts):
    try:
        n = opts.get("threads") or default_threads()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if n < 1:
        raise ConfigError("--threads must be positive")
    return n


def _emit(text, opts):
    path = opts.get("out")
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _clean(x):
    """JSON-safe float (NaN becomes null)."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_estimate(opts) -> int:
    combo = _combo(opts)
    methods = _list(opts.get("method") or "stand,iptw,dr", ("stand", "iptw", "dr"), "method")
    scales = _list(opts.get("scale") or "diff,rr", SCALES, "scale")
    fmt = opts.get("format") or "json"
    if fmt == "text":
        raise ConfigError("estimate writes json or csv")
    try:
        params = validate_against(SensitivityParams(
            _fixed_lambda(opts, "lambda1"), _fixed_lambda(opts, "lambda2"),
            opts["lambda1_0"], opts["lambda2_0"]), combo)
        plan = BootstrapPlan(opts.get("boot") or 200, opts["seed"],
                             opts["refit_missingness"] == "yes")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data, schema, source = _load(opts)
    data.require_both_arms()
    config = _analysis_config(opts, schema, data, methods)
    rep = run_estimation(data, config, plan, params, tuple(scales), threads=_threads(opts))
    a = rep.analysis
    if fmt == "csv":
        buf = io.StringIO()
        keys = ("estimand", "scale", "method", "point", "se", "ci_low", "ci_high", "n_boot", "seed")
        buf.write(",".join(keys) + ",point_per100k,p_value\n")
        for e in rep.estimates:
            d = e.to_dict()
            row = [str(d[k]) if not isinstance(d[k], float) else repr(d[k]) for k in keys]
            row.append(repr(d["point_per100k"]) if "point_per100k" in d else "")
            p = rep.theta_p.get((e.scale, e.method)) if e.estimand == "Theta" else None
            row.append("" if p is None else repr(p))
            buf.write(",".join(row) + "\n")
        _emit(buf.getvalue(), opts)
        return EXIT_OK
    report = {
        "command": "estimate",
        "version": __version__,
        "settings": {
            "data": source, "combo": str(combo), "methods": methods, "scales": scales,
            "lambda1": params.lambda1, "lambda2": params.lambda2,
            "lambda1_0": params.lambda1_0, "lambda2_0": params.lambda2_0,
            "augmentation": config.augmentation, "boot": plan.n_reps, "seed": plan.seed,
            "refit_missingness": plan.refit_missingness,
        },
        "data": {"n_rows": int(data.n + data.dropped_rows), "n_dropped_missing": data.dropped_rows,
                 "n_analysed": a.n_analysed},
        "diagnostics": {
            "outcome_model": a.fit_y.to_dict() if a.fit_y else None,
            "exposure_model": a.fit_a.to_dict() if a.fit_a else None,
            "n_clipped_propensity": a.n_clipped,
            "missingness": a.missingness.to_dict() if a.missingness else None,
            "bootstrap_failures": rep.n_boot_failed,
        },
        "estimates": [{k: _clean(v) for k, v in e.to_dict().items()} for e in rep.estimates],
        "theta_tests": [{"scale": s, "method": m, "p_value": _clean(p)}
                        for (s, m), p in sorted(rep.theta_p.items())],
    }
    _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", opts)
    return EXIT_OK


def cmd_sensitivity(opts) -> int:
    from .sensitivity import (GridSpec, GridWarning, boundary_json, parse_axis, run_grid,
                              write_grid_csv)

    combo = _combo(opts, "d,d")
    method = _list(opts.get("method") or "dr", ("stand", "iptw", "dr"), "method")
    scale = _list(opts.get("scale") or "diff", SCALES, "scale")
    if len(method) != 1 or len(scale) != 1:
        raise ConfigError("sensitivity takes a single --method and --scale")
    if (opts.get("format") or "csv") != "csv":
        raise ConfigError("sensitivity writes csv (use --boundary for the JSON boundary)")
    try:
        spec = GridSpec(parse_axis(opts["lambda1"]), parse_axis(opts["lambda2"]), combo,
                        scale[0], method[0], opts["alpha"], opts["lambda1_0"], opts["lambda2_0"],
                        opts["clip_bounds"] == "yes")
        plan = BootstrapPlan(opts.get("boot") or 200, opts["seed"],
                             opts["refit_missingness"] == "yes")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data, schema, _ = _load(opts)
    data.require_both_arms()
    config = _analysis_config(opts, schema, data, method)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", GridWarning)
        try:
            result = run_grid(data, spec, plan, config=config, threads=_threads(opts))
        except ValueError as exc:
            if isinstance(exc, (DataError, IdentificationError)):
                raise
            raise ConfigError(str(exc)) from None
    for w in caught:
        if issubclass(w.category, GridWarning):
            print(f"warning: {w.message}", file=sys.stderr)
    buf = io.StringIO()
    write_grid_csv(result, buf)
    _emit(buf.getvalue(), opts)
    if opts.get("boundary"):
        with open(opts["boundary"], "w") as fh:
            fh.write(boundary_json(result) + "\n")
    return EXIT_OK


def cmd_simulate(opts) -> int:
    from .pipeline import AnalysisConfig
    from .simulation import STUDY_I, StudySpec, run_study, write_metrics_csv

    if (opts.get("format") or "csv") != "csv":
        raise ConfigError("simulate writes csv")
    try:
        boot = 200 if opts.get("boot") is None else opts["boot"]
        spec = StudySpec(opts["study"], opts["n"], opts["sims"], boot, opts["seed"],
                         misspec=opts["misspec"], n_mc=opts["truth_mc"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = run_study(spec, STUDY_I, config=AnalysisConfig(augmentation=opts["augmentation"]),
                       threads=_threads(opts))
    if result.n_failed:
        print(f"warning: {result.n_failed} simulated datasets failed and were dropped",
              file=sys.stderr)
    buf = io.StringIO()
    write_metrics_csv(result.rows, buf)
    _emit(buf.getvalue(), opts)
    return EXIT_OK


def _profile_str(p):
    return "(" + ",".join(map(str, p.values)) + ")"


def cmd_profiles(opts) -> int:
    fmt = opts.get("format") or "text"
    combos = [_combo(opts)] if opts.get("combo") else list(ALL_COMBOS)
    observed = None
    if opts.get("observed"):
        try:
            observed = tuple(int(v) for v in opts["observed"].split(","))
            if len(observed) != 3:
                raise ValueError
            compatible_profiles(observed, combos[0])
        except ValueError:
            raise ConfigError("--observed must be three binary values A,Y1,Y2 "
                              "(not both subtypes 1)") from None
    rows = []
    for c in combos:
        ids = (sorted(compatible_profiles(observed, c)) if observed
               else sorted(p.id for p in feasible_profiles(c)))
        rows.append((str(c), ids))
    if fmt == "json":
        out = {"observed": list(observed) if observed else None,
               "profiles": {str(p.id): list(p.values) for p in PROFILES},
               "combos": {c: ids for c, ids in rows}}
        text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        text = "combo,profile_ids\n" + "".join(
            f"\"{c}\",{' '.join(map(str, ids))}\n" for c, ids in rows)
    else:
        lines = ["profile (Y1(0),Y1(1),Y2(0),Y2(1)): " + "  ".join(
            f"{p.id}={_profile_str(p)}" for p in PROFILES)]
        what = f"compatible with observed (A,Y1,Y2)=({opts['observed']})" if observed \
            else "feasible"
        for c, ids in rows:
            lines.append(f"{c}: {what}: {{{', '.join(map(str, ids))}}}")
        text = "\n".join(lines) + "\n"
    _emit(text, opts)
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "sensitivity": cmd_sensitivity,
            "simulate": cmd_simulate, "profiles": cmd_profiles}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    try:
        opts = resolve(args)
        logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](opts)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, BootstrapError, IdentificationError) as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
