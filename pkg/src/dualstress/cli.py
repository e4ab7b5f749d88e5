"""Command-line entry point.

Each subcommand writes ``report.json``, ``report.txt``, any CSV tables and a
``manifest.json`` into ``--out-dir``. Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical failure.
"""
import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import pandas as pd

from . import reports
from .dml import DmlConfig, dml_fit
from .errors import DataError, NumericalError
from .glm import fit_lag_profile
from .panel import (
    assemble_panel, model_rows, read_cpi_csv, read_enrollment_csv, read_panel_csv, read_strikes_csv,
    validate_leakage, write_cpi_csv, write_enrollment_csv, write_panel_csv, write_strikes_csv,
)
from .robustness import PlaceboSpec, default_seeds, placebo_test, seed_sweep
from .shapley import (
    PREDICTIVE_FEATURES, PREDICTIVE_FEATURES_WITH_PRODUCT, dependence_data, fit_predictive_model, global_importance,
)
from .synth import PRESETS, ScenarioGrid, calibrate_gamma, generate_inputs, preset, run_scenarios
from .trees import BoostingConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
COMMANDS = ("build-panel", "fit-lags", "fit-dml", "placebo", "seed-sweep", "predict-shap", "synth", "scenarios")
# flags that never affect outputs and so stay out of the manifest
_UNRECORDED = {"out_dir", "threads", "command"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _learner_flags(p):
    d = BoostingConfig()
    p.add_argument("--trees", type=int, default=d.n_trees, help="boosting rounds")
    p.add_argument("--depth", type=int, default=d.max_depth, help="maximum tree depth")
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--subsample", type=float, default=d.subsample, help="row fraction per tree")


def build_parser():
    parser = _Parser(prog="dualstress", description="Dual-stressor dropout analysis toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text, panel=True, seed=True, learner=False):
        p = sub.add_parser(name, help=help_text, description=help_text)
        if panel:
            p.add_argument("--panel", required=True, help="assembled panel CSV")
        p.add_argument("--out-dir", required=True, help="directory for reports and manifest")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="master seed")
        if learner:
            _learner_flags(p)
        p.add_argument("--threads", type=int, default=1, help="worker cap; outputs do not depend on it")
        return p

    p = command("build-panel", "Assemble the student-semester panel from raw inputs.", panel=False, seed=False)
    p.add_argument("--enrollment", required=True)
    p.add_argument("--cpi", required=True)
    p.add_argument("--strikes", required=True)

    command("fit-lags", "Lagged logit profile of strike exposure.", seed=False)

    for name, text in (("fit-dml", "Cross-fitted DML estimates of the strike and interaction effects."),
                       ("placebo", "DML with a placebo strike treatment."),
                       ("seed-sweep", "Re-estimate DML under a sequence of seeds.")):
        p = command(name, text, learner=True)
        p.add_argument("--folds", type=int, default=5)
        if name == "placebo":
            p.add_argument("--placebo-mode", choices=["permute", "gaussian"], default="permute")
            p.add_argument("--within", choices=["global", "cohort"], default="global",
                           help="permute across all rows or inside each entry cohort")
        if name == "seed-sweep":
            p.add_argument("--seeds", type=int, default=30, help="number of seeds (sequence starts at 1000 + seed)")

    p = command("predict-shap", "Predictive model, AUC and exact Shapley attributions.", learner=True)
    p.add_argument("--include-product", action="store_true",
                   help="also feed the precomputed interaction column to the model")

    p = command("synth", "Write a synthetic dataset with known effects.", panel=False)
    p.add_argument("--preset", choices=sorted(PRESETS), default="dual-stressor")
    p.add_argument("--students", type=int, default=None, help="override the preset's student count")

    p = command("scenarios", "Stress scenarios and the amplification metric.", panel=False)
    p.add_argument("--preset", choices=sorted(PRESETS), default="scenarios")
    p.add_argument("--students", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None, help="interaction strength (default: the preset's)")
    p.add_argument("--calibrate", action="store_true", help="bisect gamma to the target amplification")
    p.add_argument("--target", type=float, default=0.205)
    p.add_argument("--horizon", type=int, default=3)
    return parser


def _learner(args):
    return BoostingConfig(n_trees=args.trees, max_depth=args.depth, learning_rate=args.learning_rate,
                          subsample=args.subsample)


def _dml_config(args):
    return DmlConfig(folds=args.folds, seed=args.seed, learner=_learner(args), threads=max(1, args.threads))


def _load_panel(args, inputs):
    inputs["panel"] = _digest(args.panel)
    return read_panel_csv(args.panel)


def _digest(path):
    if not Path(path).is_file():
        raise DataError(f"input file not found: {path}")
    return {"path": str(path), "sha256": reports.sha256_file(path)}


def _run_build_panel(args, out, inputs):
    for name in ("enrollment", "cpi", "strikes"):
        inputs[name] = _digest(getattr(args, name))
    records = read_enrollment_csv(args.enrollment)
    cpi = read_cpi_csv(args.cpi)
    calendar = read_strikes_csv(args.strikes)
    panel, report = assemble_panel(records, cpi, calendar)
    violations = validate_leakage(panel, records, cpi, calendar)
    write_panel_csv(panel, out / "panel.csv")
    payload = {"assembly": report.to_dict(), "leakage_violations": len(violations)}
    reports.write_json(out / "report.json", payload)
    text = reports.format_table(["Quantity", "Value"], [
        ["input rows", report.n_input_rows], ["retained rows", report.n_retained_rows],
        ["students", report.n_students], ["rows with all lags", report.n_rows_complete_lags],
        ["work status imputed", report.n_work_status_imputed], ["leakage violations", len(violations)],
    ], title="Panel assembly")
    reports.write_text(out / "report.txt", text)
    return {}


def _run_fit_lags(args, out, inputs):
    panel = _load_panel(args, inputs)
    rep = fit_lag_profile(panel)
    reports.write_json(out / "report.json", rep.to_dict())
    reports.write_text(out / "report.txt", reports.table1_text(rep))
    reports.write_frame(out / "lag_profile.csv", pd.DataFrame([r.to_dict() for r in rep.rows]))
    return {"controls": rep.controls}


def _run_fit_dml(args, out, inputs):
    panel = _load_panel(args, inputs)
    cfg = _dml_config(args)
    est = dml_fit(panel, cfg)
    reports.write_json(out / "report.json", est.to_dict())
    reports.write_text(out / "report.txt", reports.table4_text(est))
    reports.write_frame(out / "residuals.csv", est.residuals.to_frame())
    return cfg.to_dict()


def _run_placebo(args, out, inputs):
    panel = _load_panel(args, inputs)
    cfg = _dml_config(args)
    spec = PlaceboSpec(mode=args.placebo_mode, seed=args.seed, within=args.within)
    rep = placebo_test(panel, cfg, spec)
    reports.write_json(out / "report.json", rep.to_dict())
    reports.write_text(out / "report.txt", reports.table5_text(rep))
    return cfg.to_dict()


def _run_seed_sweep(args, out, inputs):
    panel = _load_panel(args, inputs)
    cfg = _dml_config(args)
    res = seed_sweep(panel, cfg, default_seeds(args.seeds, 1000 + args.seed))
    reports.write_json(out / "report.json", res.to_dict())
    reports.write_text(out / "report.txt", reports.sweep_text(res))
    reports.write_frame(out / "seed_sweep.csv", res.frame())
    return {**cfg.to_dict(), "seeds": default_seeds(args.seeds, 1000 + args.seed)}


def _run_predict_shap(args, out, inputs):
    panel = _load_panel(args, inputs)
    features = PREDICTIVE_FEATURES_WITH_PRODUCT if args.include_product else PREDICTIVE_FEATURES
    model = fit_predictive_model(panel, features=features, seed=args.seed, config=_learner(args))
    data = panel.loc[model_rows(panel, features)]
    X = data[features].to_numpy(dtype=float)[model.test_index]
    imp = global_importance(model.ensemble, X, model.background)
    reports.write_frame(out / "importance.csv", imp)
    for feature, color, name in (("strikes_lag2", "inflation_at_entry", "dependence_strikes_lag2.csv"),
                                 ("inflation_at_entry", "strikes_lag2", "dependence_inflation_at_entry.csv")):
        reports.write_frame(out / name, dependence_data(model.ensemble, X, model.background, feature, color))
    payload = {"auc_report": model.report,
               "importance": [{"feature": f, "mean_abs_shap": v} for f, v in zip(imp["feature"], imp["mean_abs_shap"])]}
    reports.write_json(out / "report.json", payload)
    reports.write_text(out / "report.txt", reports.importance_text(imp, model.report["auc"]))
    return {"learner": asdict(model.ensemble.config), "features": features}


def _synth_config(args):
    overrides = {"seed": args.seed}
    if args.students is not None:
        overrides["n_students"] = args.students
    return preset(args.preset, **overrides)


def _run_synth(args, out, inputs):
    cfg = _synth_config(args)
    data = generate_inputs(cfg)
    write_enrollment_csv(data.records, out / "enrollment.csv")
    write_cpi_csv(data.cpi, out / "cpi.csv")
    write_strikes_csv(data.calendar, out / "strikes.csv")
    panel, report = assemble_panel(data.records, data.cpi, data.calendar)
    write_panel_csv(panel, out / "panel.csv")
    truth = data.truth.to_dict()
    reports.write_json(out / "truth.json", truth)
    reports.write_json(out / "report.json", {"truth": truth, "assembly": report.to_dict()})
    text = reports.format_table(["Parameter", "Value"], [
        ["tau", reports.fmt(cfg.tau)], ["gamma", reports.fmt(cfg.gamma)], ["alpha", reports.fmt(cfg.alpha)],
        ["students", cfg.n_students], ["panel rows", len(panel)],
        ["mean dropout probability", reports.fmt(truth["mean_probability"])],
    ], title=f"Synthetic dataset (preset {args.preset})")
    reports.write_text(out / "report.txt", text)
    return cfg.to_dict()


def _run_scenarios(args, out, inputs):
    cfg = _synth_config(args)
    grid = ScenarioGrid()
    extra = {}
    if args.calibrate:
        gamma, _ = calibrate_gamma(grid, cfg, target=args.target, horizon=args.horizon)
        cfg = cfg.replace(gamma=gamma)
        extra = {"calibrated_gamma": gamma, "target": args.target}
    elif args.gamma is not None:
        cfg = cfg.replace(gamma=args.gamma)
    res = run_scenarios(grid, cfg, horizon=args.horizon)
    reports.write_frame(out / "attrition_curves.csv", res.curve_frame())
    reports.write_json(out / "report.json", {**res.report.to_dict(), **extra, "gamma": cfg.gamma,
                                             "grid": grid.settings()})
    reports.write_text(out / "report.txt", reports.scenario_text(res.report))
    return cfg.to_dict()


_HANDLERS = {
    "build-panel": _run_build_panel, "fit-lags": _run_fit_lags, "fit-dml": _run_fit_dml, "placebo": _run_placebo,
    "seed-sweep": _run_seed_sweep, "predict-shap": _run_predict_shap, "synth": _run_synth,
    "scenarios": _run_scenarios,
}


def _arguments(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}


def run(argv):
    """Parse and execute; returns the exit code instead of exiting."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        inputs = {}
        config = _HANDLERS[args.command](args, out, inputs)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    produced = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = reports.RunManifest(
        command=args.command, arguments=_arguments(args), seed=getattr(args, "seed", None), config=config,
        inputs=inputs, outputs={name: reports.sha256_file(out / name) for name in produced})
    manifest.write(out)
    return EXIT_OK


def manifest_argv(manifest, out_dir, threads=1):
    """Command line that reproduces a manifest's run into ``out_dir``."""
    argv = [manifest.command]
    for key, value in manifest.arguments.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        elif value is not None:
            argv += [flag, str(value)]
    return argv + ["--out-dir", str(out_dir), "--threads", str(threads)]


def replay(manifest_path, out_dir, threads=1):
    """Re-run a manifest and list outputs whose digests differ (empty when reproduced)."""
    manifest = reports.RunManifest.from_dict(json.loads(Path(manifest_path).read_text()))
    for name, info in manifest.inputs.items():
        if reports.sha256_file(info["path"]) != info["sha256"]:
            raise DataError(f"input {name} ({info['path']}) changed since the manifest was written")
    code = run(manifest_argv(manifest, out_dir, threads))
    if code != EXIT_OK:
        raise RuntimeError(f"replay exited with code {code}")
    out = Path(out_dir)
    return sorted(name for name, digest in manifest.outputs.items()
                  if not (out / name).is_file() or reports.sha256_file(out / name) != digest)


def main(argv=None):
    sys.exit(run(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
