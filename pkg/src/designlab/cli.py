"""Command-line front end.

Subcommands: ``summarize``, ``enumerate``, ``study``, ``frt``, ``bound``.
Exit status: 0 when every check passes, 1 when a check fails, 2 for
usage, parse and configuration errors (including an enumeration that
would exceed ``--cap``).

Run configuration is an INI file::

    [designlab]
    version = 1

    [design]
    kind = stratified          ; complete | stratified | matched-pairs | cluster
    n1.a = 1                   ; per-stratum treated counts
    n1.b = 2

    [model]
    kind = bivariate-gaussian  ; or constant-effect, two-point
    var1 = 1
    var0 = 1
    rho = 0
    ; two-point: atoms = 1:0:0.25, 0:0:0.25, ...   (y1:y0:mass; omit for the default table)

    [study]
    mode = decomposition       ; or unbiasedness, coverage
    n = 8
    n1 = 4
    replications = 10000
    alpha = 0.05
    target = tau               ; or tau_S
    band = 3

    [run]
    seed = 42
    cap = 10000000
    threads = 1

Command-line flags override file values.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__, _arith
from .design import DEFAULT_CAP, Design, DesignError, SupportTooLarge
from .estimator import EstimationError, estimate, read_observed_csv, sharp_Stau2_lower_bound
from .oracle import enumerate_moments, frt_exact, frt_monte_carlo
from .population import PopulationError, SuperPopulationModel, read_population_csv, summarize
from .study import StudyConfig, StudyError, run_study

CONFIG_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved inputs of one invocation, embedded in every report."""

    command: str
    input: str | None = None
    design: Design | None = None
    model: SuperPopulationModel | None = None
    study: dict = field(default_factory=dict)
    seed: int | None = None
    cap: int = DEFAULT_CAP
    threads: int = 1
    out: str | None = None
    fmt: str = "json"

    def describe(self) -> dict:
        # threads is left out: results do not depend on it, and reports
        # must be byte-identical across worker counts
        out = {"command": self.command, "config_version": CONFIG_VERSION,
               "cap": self.cap, "seed": self.seed}
        if self.input is not None:
            out["input"] = self.input
        if self.design is not None:
            out["design"] = self.design.describe()
        if self.model is not None:
            out["model"] = self.model.describe()
        if self.study:
            out["study"] = self.study
        return out


# -- config parsing -----------------------------------------------------------


def _read_ini(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is None:
        return cp
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config {path}: {exc}") from None
    if cp.has_section("designlab"):
        version = cp.get("designlab", "version", fallback=str(CONFIG_VERSION))
        if version.strip() != str(CONFIG_VERSION):
            raise ConfigError(f"config version {version} not supported (expected {CONFIG_VERSION})")
    return cp


def _int(text, name: str) -> int:
    try:
        return int(str(text).strip())
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {text!r}") from None


def _float(text, name: str) -> float:
    try:
        return float(str(text).strip())
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {text!r}") from None


def _design_from(cp, args) -> Design | None:
    sec = cp["design"] if cp.has_section("design") else {}
    kind = getattr(args, "design", None) or sec.get("kind")
    if kind is None:
        return None
    if kind == "complete":
        n1 = getattr(args, "n1", None)
        if n1 is None:
            if "n1" not in sec:
                return None  # caller may infer
            n1 = _int(sec["n1"], "design.n1")
        return Design.complete(n1)
    if kind == "stratified":
        table = {}
        flag = getattr(args, "n1_by_stratum", None)
        if flag:
            for part in flag.split(","):
                label, _, val = part.partition("=")
                table[label.strip()] = _int(val, f"n1 for stratum {label.strip()!r}")
        else:
            for key, val in sec.items():
                if key.startswith("n1."):
                    table[key[3:]] = _int(val, f"design.{key}")
        if not table:
            raise ConfigError("stratified design needs per-stratum n1 (n1.<label> = k)")
        return Design.stratified(table)
    if kind == "matched-pairs":
        return Design.matched_pairs()
    if kind == "cluster":
        m1 = getattr(args, "m1", None)
        if m1 is None:
            if "m1" not in sec:
                raise ConfigError("cluster design needs m1")
            m1 = _int(sec["m1"], "design.m1")
        return Design.cluster(m1)
    raise ConfigError(f"unknown design kind {kind!r}")


def _model_from(cp) -> SuperPopulationModel:
    if not cp.has_section("model"):
        raise ConfigError("missing [model] section")
    sec = cp["model"]
    kind = sec.get("kind", "bivariate-gaussian").strip()
    num = lambda key, default: _float(sec.get(key, default), f"model.{key}")  # noqa: E731
    if kind == "bivariate-gaussian":
        return SuperPopulationModel.gaussian(var1=num("var1", 1), var0=num("var0", 1), rho=num("rho", 0),
                                             mean1=num("mean1", 0), mean0=num("mean0", 0))
    if kind == "constant-effect":
        try:
            tau = _arith.parse_decimal(sec.get("tau", "0"))
        except ValueError as exc:
            raise ConfigError(f"model.tau: {exc}") from None
        return SuperPopulationModel.constant_effect(tau=tau, var0=num("var0", 1), mean0=num("mean0", 0))
    if kind == "two-point":
        table = {}
        for atom in sec.get("atoms", "").split(","):
            if not atom.strip():
                continue
            parts = atom.strip().split(":")
            if len(parts) != 3:
                raise ConfigError(f"model.atoms entry {atom.strip()!r} is not y1:y0:mass")
            try:
                a, b, p = (_arith.parse_decimal(x) for x in parts)
            except ValueError as exc:
                raise ConfigError(f"model.atoms: {exc}") from None
            table[(a, b)] = table.get((a, b), 0) + p
        return SuperPopulationModel.two_point(table or None)
    raise ConfigError(f"unknown model kind {kind!r}")


def _run_settings(cfg: RunConfig, cp, args):
    sec = cp["run"] if cp.has_section("run") else {}
    seed = args.seed if args.seed is not None else sec.get("seed")
    cfg.seed = None if seed is None else _int(seed, "seed")
    cap = args.cap if args.cap is not None else sec.get("cap")
    cfg.cap = DEFAULT_CAP if cap is None else _int(cap, "cap")
    threads = args.threads if args.threads is not None else sec.get("threads")
    cfg.threads = 1 if threads is None else max(1, _int(threads, "threads"))
    cfg.out = args.out
    cfg.fmt = args.format


# -- output -------------------------------------------------------------------


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and set(v) >= {"exact", "float"}:
            out[key] = v["exact"] if v["exact"] is not None else v["float"]
        elif isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            out[key] = json.dumps(v)
        else:
            out[key] = v
    return out


def _emit(cfg: RunConfig, payload: dict) -> None:
    payload = dict(payload)
    payload["config"] = cfg.describe()
    if cfg.fmt == "csv":
        flat = _flatten(payload)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(flat))
        w.writerow(["" if v is None else v for v in flat.values()])
        text = buf.getvalue()
    else:
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- subcommands --------------------------------------------------------------


def cmd_summarize(args) -> int:
    cp = _read_ini(args.config)
    cfg = RunConfig("summarize", input=args.input)
    _run_settings(cfg, cp, args)
    pop = read_population_csv(args.input)
    _emit(cfg, {"summary": summarize(pop).to_dict(), "passed": True})
    return EXIT_OK


def cmd_enumerate(args) -> int:
    cp = _read_ini(args.config)
    cfg = RunConfig("enumerate", input=args.input)
    _run_settings(cfg, cp, args)
    pop = read_population_csv(args.input)
    design = _design_from(cp, args)
    if design is None:
        raise ConfigError("enumerate needs a design (--design/--n1 or [design] in --config)")
    cfg.design = design
    report = enumerate_moments(pop, design, cap=cfg.cap, workers=cfg.threads)
    body = report.to_dict()
    _emit(cfg, {"report": body, "passed": report.ok})
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_study(args) -> int:
    cp = _read_ini(args.config)
    cfg = RunConfig("study")
    _run_settings(cfg, cp, args)
    if cfg.seed is None:
        raise ConfigError("study needs a seed (--seed or [run] seed)")
    model = _model_from(cp)
    cfg.model = model
    sec = cp["study"] if cp.has_section("study") else {}
    if args.mode:
        mode = args.mode
    else:
        mode = sec.get("mode", "decomposition").strip()
    params = {
        "mode": mode,
        "n": _int(sec.get("n", "8"), "study.n"),
        "n1": _int(sec.get("n1", "4"), "study.n1"),
        "replications": _int(args.replications or sec.get("replications", "10000"), "study.replications"),
        "alpha": _float(sec.get("alpha", "0.05"), "study.alpha"),
        "target": sec.get("target", "tau").strip(),
        "band": _float(sec.get("band", "3"), "study.band"),
    }
    cfg.study = params
    study_cfg = StudyConfig(model=model, master_seed=cfg.seed, workers=cfg.threads,
                            keep_rows=bool(args.rows_out), **params)
    report = run_study(study_cfg)
    if args.rows_out:
        with open(args.rows_out, "w", encoding="utf-8", newline="") as fh:
            fh.write(report.rows_csv())
    _emit(cfg, {"study": report.summary(), "passed": report.passed})
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_frt(args) -> int:
    cp = _read_ini(args.config)
    cfg = RunConfig("frt", input=args.input)
    _run_settings(cfg, cp, args)
    design = _design_from(cp, args)
    data = read_observed_csv(args.input, design)
    cfg.design = data.design
    try:
        res = frt_exact(data, cap=cfg.cap)
    except SupportTooLarge:
        if cfg.seed is None:
            raise ConfigError("support exceeds the cap; the Monte Carlo test needs --seed") from None
        res = frt_monte_carlo(data, np.random.default_rng(cfg.seed), draws=args.draws)
    if args.draws_check:
        if cfg.seed is None:
            raise ConfigError("--draws-check needs --seed")
        mc = frt_monte_carlo(data, np.random.default_rng(cfg.seed), draws=args.draws)
    payload = {"frt": res.to_dict(), "passed": True}
    if args.draws_check:
        payload["frt_monte_carlo"] = mc.to_dict()
        agree = abs(float(res.p_value) - mc.p_value) <= 3 * mc.se
        payload["checks"] = {"monte_carlo_within_3se": agree}
        payload["passed"] = agree
    try:
        payload["estimate"] = estimate(data).to_record()
    except EstimationError:
        pass
    _emit(cfg, payload)
    return EXIT_OK if payload["passed"] else EXIT_FAIL


def _read_marginal(path: str) -> list[Fraction]:
    vals = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            cell = line.strip().split(",")[0].strip()
            if not cell:
                continue
            try:
                vals.append(_arith.parse_decimal(cell))
            except ValueError as exc:
                if lineno == 1 and not vals:
                    continue  # header
                raise PopulationError(f"{path} line {lineno}: {exc}") from None
    return vals


def cmd_bound(args) -> int:
    cp = _read_ini(args.config)
    cfg = RunConfig("bound")
    _run_settings(cfg, cp, args)
    y1, y0 = _read_marginal(args.y1_file), _read_marginal(args.y0_file)
    bound = sharp_Stau2_lower_bound(y1, y0)
    _emit(cfg, {"Stausq_lower_bound": _arith.rational_record(bound), "n": len(y1), "passed": True})
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="designlab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"designlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--cap", type=int, help=f"enumeration cap (default {DEFAULT_CAP})")
        sp.add_argument("--threads", type=int, help="worker processes")
        sp.add_argument("--out", help="write the report here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default="json")

    def design_flags(sp):
        sp.add_argument("--design", choices=("complete", "stratified", "matched-pairs", "cluster"))
        sp.add_argument("--n1", type=int)
        sp.add_argument("--m1", type=int)
        sp.add_argument("--n1-by-stratum", help="e.g. a=1,b=2")

    sp = sub.add_parser("summarize", help="finite-population means and variances")
    sp.add_argument("--input", required=True, help="population CSV")
    common(sp)
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("enumerate", help="exact moments over every assignment")
    sp.add_argument("--input", required=True, help="population CSV")
    design_flags(sp)
    common(sp)
    sp.set_defaults(func=cmd_enumerate)

    sp = sub.add_parser("study", help="Monte Carlo study over super-population draws")
    sp.add_argument("--mode", choices=("decomposition", "unbiasedness", "coverage"))
    sp.add_argument("--replications", type=int)
    sp.add_argument("--rows-out", help="per-replication CSV")
    common(sp)
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("frt", help="randomization test of the sharp null")
    sp.add_argument("--input", required=True, help="observed CSV: unit_id,z,yobs[,stratum][,cluster]")
    sp.add_argument("--draws", type=int, default=100_000)
    sp.add_argument("--draws-check", action="store_true",
                    help="also run the Monte Carlo test and compare with the exact p-value")
    design_flags(sp)
    common(sp)
    sp.set_defaults(func=cmd_frt)

    sp = sub.add_parser("bound", help="sharp lower bound on the effect variance")
    sp.add_argument("--y1-file", required=True)
    sp.add_argument("--y0-file", required=True)
    common(sp)
    sp.set_defaults(func=cmd_bound)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SupportTooLarge as exc:
        print(f"designlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, PopulationError, DesignError, EstimationError, StudyError, OSError) as exc:
        print(f"designlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
