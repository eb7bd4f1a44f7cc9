"""Command-line front end.

Every subcommand writes its outputs plus ``manifest.json`` into ``--out``.
Exit status: 0 on success, 1 on invalid input or usage, 2 when a numerical
routine fails to converge.

Options can also come from a TOML file given with ``--config``; keys are the
long option names with ``_`` for ``-`` (a ``[<subcommand>]`` table, if present,
is used instead of the top level). Flags on the command line win.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from ensoconflict import __version__, estimator, inference, ingest, panel, synth, teleconnection
from ensoconflict.errors import ConvergenceError, EnsoConflictError, InputError, SpecError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

logger = logging.getLogger("ensoconflict")

DEFAULT_WINDOW = "1997-06:2024-05"
PREVIEW_ROWS = 1000


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------- option groups


def _add_inputs(p, *, events=True, weather_required=False):
    g = p.add_argument_group("inputs")
    g.add_argument("--cells", required=True)
    g.add_argument("--weather", required=weather_required)
    g.add_argument("--oni", required=True)
    if events:
        g.add_argument("--events", help="events.csv (count outcomes)")
        g.add_argument("--outcome-file", help="cell_id,year,month,y real-valued outcome instead of events")
    g.add_argument("--profiles", help="teleconnections.csv; estimated from --weather when omitted")
    g.add_argument("--weather-window", help="window for the teleconnection fits (default: all weather)")
    g.add_argument("--window", default=DEFAULT_WINDOW, help="conflict window YYYY-MM:YYYY-MM")


def _add_spec(p, spec_default="eq2"):
    g = p.add_argument_group("design")
    g.add_argument("--spec", default=spec_default, choices=list(panel.EQUATIONS) + ["yield"])
    g.add_argument("--outcome", default="count", choices=panel.OUTCOMES)
    g.add_argument("--kind", default="one_sided", choices=ingest.KINDS)
    g.add_argument("--area-form", default="cont", help="cont or ind:<hectares>")
    g.add_argument("--tc-form", default="cont", help="cont or ind:<share>")
    g.add_argument("--tc-var", default="both", choices=panel.TC_VARIABLES)
    g.add_argument("--fe", default="cell+cym", choices=panel.FE_SCHEMES)
    g.add_argument("--no-weather-controls", action="store_true")
    g.add_argument("--enso-lag", type=int, choices=(0, 1), default=None)


def _add_inference(p):
    g = p.add_argument_group("estimation and inference")
    g.add_argument("--estimator", default="ols", choices=("ols", "ppml"))
    g.add_argument("--cutoff-km", type=float, default=500.0)
    g.add_argument("--kernel", default="uniform", choices=("uniform", "bartlett"))
    g.add_argument("--time-lags", type=int, default=0)
    g.add_argument("--yields", help="yields.csv for --spec yield")


def _add_common(p):
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", help="TOML file with option defaults")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog="ensoconflict", description="ENSO teleconnection and conflict panel pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, _Parser] = {}

    p = subs["teleconnect"] = sub.add_parser("teleconnect", help="fit cell-month teleconnections")
    p.add_argument("--cells", required=True)
    p.add_argument("--weather", required=True)
    p.add_argument("--oni", required=True)
    p.add_argument("--weather-window")
    p.add_argument("--alpha", type=float, default=teleconnection.ALPHA)
    p.add_argument("--dist", default="t", choices=("t", "normal"))
    p.add_argument("--se-type", default="classical", choices=("classical", "hc1"))
    p.add_argument("--min-years", type=int, default=teleconnection.MIN_YEARS)
    p.add_argument("--dump-fits", action="store_true", help="also write fits.csv")
    _add_common(p)

    p = subs["build-panel"] = sub.add_parser("build-panel", help="assemble and cache a design")
    _add_inputs(p)
    _add_spec(p)
    _add_common(p)

    for name, spec_default, help_ in (
        ("estimate", "eq2", "estimate a specification"),
        ("event-study", "eq4", "event-study estimates by month relative to harvest"),
    ):
        p = subs[name] = sub.add_parser(name, help=help_)
        _add_inputs(p)
        _add_spec(p, spec_default)
        _add_inference(p)
        p.add_argument("--panel", help="design cache from build-panel (skips rebuilding)")
        _add_common(p)
    for a in subs["event-study"]._actions:
        if a.dest == "spec":
            a.choices = ["eq4"]
    # the yield regression needs no cells/oni from the conflict side
    for a in subs["estimate"]._actions:
        if a.dest in ("cells", "oni"):
            a.required = False

    p = subs["effects"] = sub.add_parser("effects", help="percent effects from results or raw numbers")
    p.add_argument("--results", help="results.csv")
    p.add_argument("--vcov", help="vcov.csv")
    p.add_argument("--summary", help="summary.csv (effect labels, terms and means)")
    p.add_argument("--betas", help="comma-separated coefficients to sum (direct mode)")
    p.add_argument("--se-sum", type=float, default=None, help="standard error of the coefficient sum")
    p.add_argument("--mean-tc", type=float)
    p.add_argument("--mean-area", type=float)
    p.add_argument("--mean-conflict", type=float)
    p.add_argument("--link", default="linear", choices=("linear", "poisson"))
    p.add_argument("--no-tc-factor", action="store_true")
    p.add_argument("--no-area-factor", action="store_true")
    p.add_argument("--reported", type=float, help="published percent effect to compare against")
    p.add_argument("--label", default="effect")
    _add_common(p)

    p = subs["synth"] = sub.add_parser("synth", help="synthetic worlds and Monte Carlo")
    ssub = p.add_subparsers(dest="synth_command", required=True)
    for name in ("gen", "mc"):
        q = subs[f"synth {name}"] = ssub.add_parser(name)
        q.add_argument("--rep", type=int, default=0, help="outcome replication to draw (gen)")
        q.add_argument("--reps", type=int, default=200, help="replications (mc)")
        q.add_argument("--cutoff-km", type=float, default=500.0)
        q.add_argument("--kernel", default="uniform", choices=("uniform", "bartlett"))
        _add_common(q)

    p = subs["report"] = sub.add_parser("report", help="render a text results table")
    p.add_argument("--results", required=True)
    p.add_argument("--effects")
    p.add_argument("--stats", help="fit_stats.csv")
    p.add_argument("--summary", help="summary.csv")
    p.add_argument("--title", default="")
    _add_common(p)
    return parser, subs


def _command_key(args) -> str:
    return f"synth {args.synth_command}" if args.command == "synth" else args.command


def parse_args(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) and args.command != "synth":
        with open(args.config, "rb") as fh:
            cfg = tomllib.load(fh)
        cfg = cfg.get(args.command, cfg)
        sp = subs[_command_key(args)]
        known = {a.dest for a in sp._actions}
        bad = sorted(k for k in cfg if k.replace("-", "_") not in known and not isinstance(cfg[k], dict))
        if bad:
            raise SpecError(f"unknown option(s) in {args.config}: {', '.join(bad)}")
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)})
        args = parser.parse_args(argv)
    return args


# --------------------------------------------------------------------------- helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _form(text: str, what: str) -> float | None:
    text = str(text).strip()
    if text == "cont":
        return None
    if text.startswith("ind:"):
        try:
            return float(text[4:])
        except ValueError:
            pass
    raise SpecError(f"{what} must be 'cont' or 'ind:<number>', got {text!r}")


def spec_from_args(args) -> panel.DesignSpec:
    kw = dict(
        outcome=args.outcome,
        kind=args.kind,
        area_threshold_ha=_form(args.area_form, "--area-form"),
        tc_threshold=_form(args.tc_form, "--tc-form"),
        tc_variable=args.tc_var,
        fe_scheme=args.fe,
        weather_controls=not args.no_weather_controls,
    )
    if args.enso_lag is not None:
        kw["enso_lag"] = args.enso_lag
    return panel.DesignSpec.for_equation(args.spec, **kw)


def effect_plan(spec: panel.DesignSpec) -> list[tuple[str, list[str], str]]:
    """``(label, terms, cell subset)`` for every percent effect a specification reports."""
    if spec.equation == "eq3":
        return [("NEG", ["main_neg", "postharvest_neg"], "NEG"), ("AMB", ["main_amb", "postharvest_amb"], "AMB")]
    return [("+".join(terms), terms, "all") for terms in spec.effect_terms]


class Run:
    """Collects inputs and outputs for the manifest."""

    def __init__(self, args, out: Path):
        self.args = args
        self.out = out
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.start = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def input(self, path):
        if path:
            self.inputs[str(path)] = _sha256(path)
        return path

    def csv(self, df: pd.DataFrame, name: str) -> Path:
        path = self.out / name
        ingest.write_csv(df, path)
        self.outputs.append(path)
        return path

    def file(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    def manifest(self, command: str) -> None:
        options = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("out", "verbose")}
        digest = hashlib.sha256(json.dumps(options, sort_keys=True, default=str).encode()).hexdigest()
        doc = {
            "subcommand": command,
            "config_digest": digest,
            "options": options,
            "inputs": self.inputs,
            "software_version": __version__,
            "wall_time_s": round(time.perf_counter() - self.start, 3),
            "outputs": {p.name: _sha256(p) for p in sorted(set(self.outputs))},
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _load_profiles(run: Run, args, cells, weather, oni) -> pd.DataFrame:
    if args.profiles:
        return teleconnection.read_profiles(run.input(args.profiles))
    if weather is None:
        raise InputError("need --profiles or --weather to obtain teleconnection profiles")
    win = ingest.MonthWindow.parse(args.weather_window) if args.weather_window else None
    return teleconnection.profiles(cells, weather, oni, window=win)[0]


def _load_conflict_side(run: Run, args, spec: panel.DesignSpec):
    """Read inputs and return ``(design, summaries)`` for a conflict specification."""
    window = ingest.MonthWindow.parse(args.window)
    cells = ingest.read_cells(run.input(args.cells))
    oni = ingest.read_oni(run.input(args.oni))
    weather = ingest.read_weather(run.input(args.weather)) if args.weather else None
    prof = _load_profiles(run, args, cells, weather, oni)
    conflict, outcome = None, None
    if args.outcome_file:
        outcome = ingest.read_outcome(run.input(args.outcome_file), cells, window)
    elif args.events:
        events = ingest.read_events(run.input(args.events))
        conflict, report = ingest.aggregate_events(events, cells, window)
        run.csv(report, "discards.csv")
        outcome = panel.outcome_matrix(conflict, spec)
    else:
        raise InputError("need --events or --outcome-file")
    design = panel.build_design(spec, cells, prof, conflict, weather, oni, window=window, outcome=outcome)
    summaries = []
    for label, terms, subset in effect_plan(spec):
        try:
            s = panel.cropland_summary(cells, prof, None, spec, subset, outcome=outcome)
        except SpecError as exc:
            logger.warning("no summary for %s: %s", label, exc)
            continue
        summaries.append(
            {
                "label": label,
                "terms": ";".join(terms),
                "subset": subset,
                "mean_tc": s.mean_tc,
                "mean_area": s.mean_area,
                "mean_conflict": s.mean_conflict,
                "n_cells": s.n_cells,
                "use_tc": spec.tc_threshold is None,
                "use_area": spec.area_threshold_ha is None,
                "cell_filter": s.cell_filter,
            }
        )
    design.meta["summaries"] = summaries
    design.meta["n_cells"] = len(cells)
    return design, summaries


# --------------------------------------------------------------------------- subcommands


def cmd_teleconnect(args, run: Run) -> None:
    cells = ingest.read_cells(run.input(args.cells))
    weather = ingest.read_weather(run.input(args.weather))
    oni = ingest.read_oni(run.input(args.oni))
    win = ingest.MonthWindow.parse(args.weather_window) if args.weather_window else None
    prof, fp, ft = teleconnection.profiles(
        cells, weather, oni, window=win, alpha=args.alpha, dist=args.dist, se_type=args.se_type, min_years=args.min_years
    )
    run.csv(teleconnection.profiles_to_csv_frame(prof), "teleconnections.csv")
    if args.dump_fits:
        run.csv(teleconnection.fit_dump(cells, fp, ft), "fits.csv")


def cmd_build_panel(args, run: Run) -> None:
    spec = spec_from_args(args)
    design, summaries = _load_conflict_side(run, args, spec)
    path = run.out / "panel.bin"
    panel.write_cache(design, path)
    run.file(path)
    run.csv(design.preview(PREVIEW_ROWS), "panel_preview.csv")
    if summaries:
        run.csv(pd.DataFrame(summaries), "summary.csv")


def _fit_and_cov(args, design: panel.DesignMatrix, method: str):
    fit = estimator.estimate(design, method)
    cov = inference.conley_cov(fit, cutoff_km=args.cutoff_km, kernel=args.kernel, time_lags=args.time_lags)
    return fit, cov


def _effects(fit, cov, summaries, link: str) -> list[inference.EffectEstimate]:
    out = []
    for s in summaries:
        terms = s["terms"].split(";")
        if link == "ppml":
            out.append(inference.poisson_effect_pct(fit, cov, terms, label=s["label"]))
        else:
            out.append(
                inference.linear_effect_pct(
                    fit, cov, terms, _Means(s), use_tc=bool(s["use_tc"]), use_area=bool(s["use_area"]), label=s["label"]
                )
            )
    return out


class _Means:
    def __init__(self, row):
        self.mean_tc = float(row["mean_tc"])
        self.mean_area = float(row["mean_area"])
        self.mean_conflict = float(row["mean_conflict"])


def _stats_frame(fit: estimator.RegressionFit, design: panel.DesignMatrix, cov_method: dict) -> pd.DataFrame:
    rows = [
        ("estimator", fit.method),
        ("observations", design.n),
        ("effective_observations", fit.n_effective),
        ("dropped_rows", len(fit.dropped_rows)),
        ("cells", design.meta.get("n_cells", "")),
        ("converged", fit.converged),
        ("iterations", fit.iterations),
        ("absorb_iterations", fit.absorb_iterations),
    ]
    rows += [(f"dropped_groups_{k}", v) for k, v in fit.dropped_groups.items()]
    rows += [(f"vcov_{k}", v) for k, v in cov_method.items()]
    return pd.DataFrame(rows, columns=["key", "value"])


def _estimate_yield(args, run: Run) -> None:
    if not (args.yields and args.cells and args.oni and (args.profiles or args.weather)):
        raise InputError("--spec yield needs --yields, --cells, --oni and --profiles or --weather")
    yields = ingest.read_yields(run.input(args.yields))
    cells = ingest.read_cells(run.input(args.cells))
    oni = ingest.read_oni(run.input(args.oni))
    weather = ingest.read_weather(run.input(args.weather)) if args.weather else None
    prof = _load_profiles(run, args, cells, weather, oni)
    years = sorted(yields["year"].unique())
    tc, enso = panel.country_aggregates(cells, prof, oni, years)
    yields = yields[yields["country"].isin(tc)]
    design = panel.build_yield_design(yields, tc, enso)
    fit = estimator.ols_fe_trend(design)
    cov = inference.cluster_cov(fit)
    run.csv(inference.coef_table(fit, cov), "results.csv")
    run.csv(cov.to_frame().reset_index(names="term"), "vcov.csv")
    run.csv(_stats_frame(fit, design, cov.method), "fit_stats.csv")


def cmd_estimate(args, run: Run) -> None:
    if args.spec == "yield":
        _estimate_yield(args, run)
        return
    if args.panel:
        design = panel.read_cache(run.input(args.panel))
        summaries = design.meta.get("summaries", [])
    else:
        if not (args.cells and args.oni):
            raise InputError("need --cells and --oni (or --panel)")
        spec = spec_from_args(args)
        if args.estimator == "ppml" and args.outcome_file:
            raise InputError("PPML needs count outcomes from --events")
        design, summaries = _load_conflict_side(run, args, spec)
    fit, cov = _fit_and_cov(args, design, args.estimator)
    run.csv(inference.coef_table(fit, cov), "results.csv")
    run.csv(cov.to_frame().reset_index(names="term"), "vcov.csv")
    run.csv(_stats_frame(fit, design, cov.method), "fit_stats.csv")
    if summaries:
        run.csv(pd.DataFrame(summaries), "summary.csv")
    effects = _effects(fit, cov, summaries, args.estimator)
    run.csv(_effects_frame(effects), "effects.csv")
    return fit, cov, effects


def _effects_frame(effects) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "label": [e.label for e in effects],
            "pct": [e.pct for e in effects],
            "se_pct": [e.se_pct for e in effects],
            "stars": [e.stars for e in effects],
        }
    )


def cmd_event_study(args, run: Run) -> None:
    args.spec = "eq4"
    _, _, effects = cmd_estimate(args, run)
    rows = []
    for e in effects:
        lo, hi = e.ci
        rows.append({"j": int(e.label.split("=")[1]), "pct": e.pct, "ci_lo": lo, "ci_hi": hi})
    run.csv(pd.DataFrame(rows).sort_values("j"), "event_study.csv")


def cmd_effects(args, run: Run) -> None:
    if args.betas:
        betas = [float(b) for b in args.betas.split(",")]
        names = [f"b{k}" for k in range(len(betas))]
        coef = dict(zip(names, betas))
        cov = None
        if args.se_sum is not None:
            # variance of the sum placed on a single term keeps 1'V1 = se_sum^2
            V = np.zeros((len(names), len(names)))
            V[0, 0] = args.se_sum**2
            cov = inference.CovarianceResult(names, V)
        if args.link == "poisson":
            e = inference.poisson_effect_pct(coef, cov, names, label=args.label)
        else:
            if args.mean_conflict is None:
                raise InputError("linear effects need --mean-conflict")
            means = _Means(
                {"mean_tc": args.mean_tc or 1.0, "mean_area": args.mean_area or 1.0, "mean_conflict": args.mean_conflict}
            )
            e = inference.linear_effect_pct(
                coef,
                cov,
                names,
                means,
                use_tc=not args.no_tc_factor and args.mean_tc is not None,
                use_area=not args.no_area_factor and args.mean_area is not None,
                label=args.label,
            )
        effects = [e]
    else:
        if not (args.results and args.vcov and args.summary):
            raise InputError("need --betas, or all of --results, --vcov and --summary")
        res = pd.read_csv(run.input(args.results))
        V = pd.read_csv(run.input(args.vcov)).set_index("term")
        summaries = pd.read_csv(run.input(args.summary)).to_dict("records")
        coef = dict(zip(res["term"], res["beta"]))
        cov = inference.CovarianceResult(list(V.index), V.loc[list(V.index), list(V.index)].to_numpy())
        effects = _effects(coef, cov, summaries, "ppml" if args.link == "poisson" else "ols")
    df = _effects_frame(effects)
    if args.reported is not None:
        df["reported"] = args.reported
        df["discrepancy"] = [inference.reported_discrepancy(e.pct, args.reported) for e in effects]
    run.csv(df, "effects.csv")


def _synth_config(args) -> synth.SynthConfig:
    over = {} if args.seed is None else {"seed": args.seed}
    if args.config:
        return synth.SynthConfig.from_toml(args.config, **over)
    return synth.SynthConfig(**over)


def cmd_synth_gen(args, run: Run) -> None:
    cfg = _synth_config(args)
    if args.config:
        run.input(args.config)
    world = synth.gen_world(cfg)
    for path in synth.write_world(world, run.out, rep=args.rep).values():
        run.file(path)


def cmd_synth_mc(args, run: Run) -> None:
    cfg = _synth_config(args)
    if args.config:
        run.input(args.config)
    rep = synth.monte_carlo(cfg, args.reps, cutoff_km=args.cutoff_km, kernel=args.kernel)
    run.csv(rep.table, "mc_report.csv")


def _fmt_coef(beta: float, stars: int) -> str:
    return f"{beta:.4f}" + "*" * int(stars)


def render_report(results: pd.DataFrame, effects=None, stats=None, summary=None, title: str = "") -> str:
    width = 28
    lines = []
    if title:
        lines.append(title)
    lines.append("-" * (width + 16))
    for r in results.itertuples(index=False):
        lines.append(f"{r.term:<{width}}{_fmt_coef(r.beta, r.stars):>16}")
        lines.append(f"{'':<{width}}{'(' + format(r.se, '.4f') + ')':>16}")
    lines.append("-" * (width + 16))
    if stats is not None:
        kv = dict(zip(stats["key"], stats["value"]))
        for key in ("observations", "effective_observations", "cells"):
            if key in kv and str(kv[key]) not in ("", "nan"):
                lines.append(f"{key.replace('_', ' ').capitalize():<{width}}{int(float(kv[key])):>16,}")
    if summary is not None:
        for r in summary.itertuples(index=False):
            tag = "" if len(summary) == 1 else f" [{r.label}]"
            lines.append(f"{'Mean TC' + tag:<{width}}{r.mean_tc:>16.3f}")
            lines.append(f"{'Mean area (10,000 ha)' + tag:<{width}}{r.mean_area:>16.3f}")
            lines.append(f"{'Mean conflict' + tag:<{width}}{r.mean_conflict:>16.3f}")
    if effects is not None:
        for r in effects.itertuples(index=False):
            lines.append(f"{'Effect (%) ' + str(r.label):<{width}}{format(r.pct, '.1f') + '*' * int(r.stars):>16}")
            lines.append(f"{'':<{width}}{'(' + format(r.se_pct, '.1f') + ')':>16}")
    lines.append("-" * (width + 16))
    lines.append("Standard errors in parentheses. *** p<0.01, ** p<0.05, * p<0.10.")
    return "\n".join(lines) + "\n"


def cmd_report(args, run: Run) -> None:
    read = lambda p: None if not p else pd.read_csv(run.input(p))  # noqa: E731
    text = render_report(read(args.results), read(args.effects), read(args.stats), read(args.summary), args.title)
    path = run.out / "report.txt"
    path.write_text(text)
    run.file(path)
    sys.stdout.write(text)


COMMANDS = {
    "teleconnect": cmd_teleconnect,
    "build-panel": cmd_build_panel,
    "estimate": cmd_estimate,
    "event-study": cmd_event_study,
    "effects": cmd_effects,
    "synth gen": cmd_synth_gen,
    "synth mc": cmd_synth_mc,
    "report": cmd_report,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (EnsoConflictError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"ensoconflict: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    key = _command_key(args)
    try:
        r = Run(args, Path(args.out))
        COMMANDS[key](args, r)
        r.manifest(key)
    except ConvergenceError as exc:
        print(f"ensoconflict: not converged: {exc}", file=sys.stderr)
        return 2
    except (EnsoConflictError, OSError) as exc:
        print(f"ensoconflict: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
