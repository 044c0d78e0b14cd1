"""Command-line pipeline: simulate -> estimate (mle|mos) -> clean -> report.

Exit codes: 0 success, 1 unexpected error, 2 usage error, 3 MLE did not
converge (result still written), 4 data invariant violated.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .baselines import mos_estimate
from .cleaning import CleaningConfig, CleaningConfigError, filter_dataset, flag_subjects
from .dataset import DataError, load_csv, write_csv
from .jnd_model import make_generative_params
from .mle import FitConfig, fit, params_from_dict
from .report import series_from_result, write_report
from .simulator import (MODES, SimulationConfig, plant_bias, planted_subjects,
                        simulate_dataset)

log = logging.getLogger("jndvqa")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_DATA = 0, 1, 2, 3, 4

_GEN_FLAGS = ("gamma", "alpha", "beta", "content_mu", "content_sigma",
              "subject_sigma", "subject_mu_spread", "mode", "contents", "subjects")


class UsageError(Exception):
    pass


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _manifest_path(args, primary) -> Path:
    return Path(args.manifest) if args.manifest else Path(f"{primary}.manifest.json")


def _write_manifest(args, command, inputs, outputs, config, seed, started, t0, primary):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "config": config,
        "seed": seed,
        "runtime": {
            "started_utc": started,
            "duration_seconds": round(time.perf_counter() - t0, 6),
        },
    }
    _dump_json(manifest, _manifest_path(args, primary))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_simulate(args) -> int:
    started, t0 = _now(), time.perf_counter()
    if args.config:
        explicit = [f for f in _GEN_FLAGS if getattr(args, f) is not None]
        if explicit or args.seed is not None:
            flags = ", ".join("--" + f.replace("_", "-") for f in explicit)
            raise UsageError(f"--config cannot be combined with inline model flags ({flags or '--seed'})")
        with open(args.config, encoding="utf-8") as fh:
            try:
                config = SimulationConfig.from_dict(json.load(fh))
            except (KeyError, TypeError, ValueError) as exc:
                raise UsageError(f"invalid simulation config: {exc}") from exc
    else:
        n_c = 15 if args.contents is None else args.contents
        n_s = 37 if args.subjects is None else args.subjects
        if n_c < 2 or n_s < 2:
            raise UsageError("--contents and --subjects must be at least 2")

        def opt(name, default):
            value = getattr(args, name)
            return default if value is None else value

        try:
            gen = make_generative_params(
                n_c, n_s, gamma=opt("gamma", 0.7), alpha=opt("alpha", 1.0),
                beta=opt("beta", 1.0), content_mu=opt("content_mu", 0.0),
                content_sigma=opt("content_sigma", 0.0),
                subject_sigma=opt("subject_sigma", 0.0),
                subject_mu_spread=opt("subject_mu_spread", 0.0))
            config = SimulationConfig(gen, n_c, n_s, opt("seed", 0), opt("mode", "continuous"))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    obs, truth = simulate_dataset(config)
    truth_doc = truth.to_dict()
    truth_doc["config"] = config.to_dict()
    if args.plant_outliers:
        planted = planted_subjects(obs.subjects, args.plant_outliers)
        obs = plant_bias(obs, planted, args.plant_bias)
        truth_doc["planted"] = {"subjects": list(planted), "shift": args.plant_bias}

    write_csv(obs, args.output)
    _dump_json(truth_doc, args.truth)
    _write_manifest(args, "simulate", {"config": args.config} if args.config else {},
                    {"observations": args.output, "truth": args.truth},
                    {**config.to_dict(), "plant_outliers": args.plant_outliers,
                     "plant_bias": args.plant_bias},
                    int(config.seed), started, t0, args.output)
    log.info("simulated %d cells", obs.n_cells)
    return EXIT_OK


def cmd_estimate(args) -> int:
    started, t0 = _now(), time.perf_counter()
    fit_flags = ("max_iterations", "tolerance", "variance_floor", "restarts", "restart_seed")
    if args.method == "mos" and (any(getattr(args, f) is not None for f in fit_flags)
                                 or args.no_backtracking):
        raise UsageError("MLE fit options are not valid with --method mos")
    obs = load_csv(args.input)
    if args.method == "mos":
        doc = mos_estimate(obs).to_dict()
        config, seed, code = {"method": "mos"}, None, EXIT_OK
    else:
        defaults = FitConfig()
        try:
            fc = FitConfig(
                max_iterations=args.max_iterations or defaults.max_iterations,
                tolerance=args.tolerance if args.tolerance is not None else defaults.tolerance,
                variance_floor=(args.variance_floor if args.variance_floor is not None
                                else defaults.variance_floor),
                backtracking=not args.no_backtracking,
                restarts=args.restarts or defaults.restarts,
                seed=args.restart_seed if args.restart_seed is not None else defaults.seed,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        result = fit(obs, fc)
        doc = result.to_dict()
        config = {"method": "mle", "max_iterations": fc.max_iterations,
                  "tolerance": fc.tolerance, "variance_floor": fc.variance_floor,
                  "backtracking": fc.backtracking, "restarts": fc.restarts}
        seed = fc.seed
        code = EXIT_OK if result.converged else EXIT_NOT_CONVERGED
        if not result.converged:
            log.error("MLE did not converge within %d iterations", fc.max_iterations)
    _dump_json(doc, args.output)
    _write_manifest(args, "estimate", {"observations": args.input}, {"result": args.output},
                    config, seed, started, t0, args.output)
    return code


def cmd_clean(args) -> int:
    started, t0 = _now(), time.perf_counter()
    try:
        cfg = CleaningConfig(args.bias_mode, args.bias_threshold,
                             args.inconsistency_mode, args.inconsistency_threshold)
    except CleaningConfigError as exc:
        raise UsageError(str(exc)) from exc
    obs = load_csv(args.input)
    with open(args.fit, encoding="utf-8") as fh:
        params = params_from_dict(json.load(fh))
    if set(params.subjects) != set(obs.subjects) or set(params.contents) != set(obs.contents):
        raise DataError("fit result does not match the observations' contents/subjects")
    try:
        report = flag_subjects(params, cfg, obs=obs)
    except CleaningConfigError as exc:
        raise UsageError(str(exc)) from exc
    cleaned = filter_dataset(obs, report)
    write_csv(cleaned, args.output)
    _dump_json(report.to_dict(), args.report)
    _write_manifest(args, "clean", {"observations": args.input, "fit": args.fit},
                    {"observations": args.output, "report": args.report},
                    {"bias_mode": cfg.bias_mode, "bias_threshold": cfg.bias_threshold,
                     "inconsistency_mode": cfg.inconsistency_mode,
                     "inconsistency_threshold": cfg.inconsistency_threshold},
                    None, started, t0, args.output)
    return EXIT_OK


def cmd_report(args) -> int:
    started, t0 = _now(), time.perf_counter()
    if len(args.result) > 2:
        raise UsageError("at most two --result files")
    labels = args.label or []
    if labels and len(labels) != len(args.result):
        raise UsageError("give one --label per --result")
    series = []
    for k, path in enumerate(args.result):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        label = labels[k] if labels else f"{doc.get('method', 'result')}{k + 1 if len(args.result) > 1 else ''}"
        try:
            series.append(series_from_result(doc, label))
        except (KeyError, ValueError) as exc:
            raise UsageError(f"{path}: not an estimate result ({exc})") from exc
    written = write_report(series, args.out_dir)
    manifest_primary = Path(args.out_dir) / "report"
    _write_manifest(args, "report", {f"result{k + 1}": p for k, p in enumerate(args.result)},
                    {p.name: p for p in written}, {"labels": [s.label for s in series]},
                    None, started, t0, manifest_primary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jndvqa", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--manifest", help="manifest path (default: next to the main output)")

    s = sub.add_parser("simulate", help="simulate a JND dataset with known ground truth")
    s.add_argument("--config", help="SimulationConfig JSON (exclusive with inline model flags)")
    s.add_argument("--contents", type=int)
    s.add_argument("--subjects", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--gamma", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--content-mu", type=float)
    s.add_argument("--content-sigma", type=float)
    s.add_argument("--subject-sigma", type=float)
    s.add_argument("--subject-mu-spread", type=float,
                   help="std of subject bias means, confidence units")
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--plant-outliers", type=int, default=0, metavar="N",
                   help="shift N evenly spaced subjects by --plant-bias QP")
    s.add_argument("--plant-bias", type=float, default=-10.0)
    s.add_argument("--output", required=True, help="observations CSV")
    s.add_argument("--truth", required=True, help="ground-truth JSON sidecar")
    common(s)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="fit MLE model or compute MOS")
    e.add_argument("--method", choices=("mle", "mos"), required=True)
    e.add_argument("--input", required=True)
    e.add_argument("--output", required=True)
    e.add_argument("--max-iterations", type=int)
    e.add_argument("--tolerance", type=float)
    e.add_argument("--variance-floor", type=float)
    e.add_argument("--no-backtracking", action="store_true")
    e.add_argument("--restarts", type=int)
    e.add_argument("--restart-seed", type=int)
    common(e)
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("clean", help="flag and remove unreliable subjects")
    c.add_argument("--input", required=True)
    c.add_argument("--fit", required=True, help="MLE result JSON from 'estimate'")
    c.add_argument("--output", required=True, help="cleaned observations CSV")
    c.add_argument("--report", required=True, help="cleaning report JSON")
    c.add_argument("--bias-mode", choices=("absolute", "robust"), default="robust")
    c.add_argument("--bias-threshold", type=float)
    c.add_argument("--inconsistency-mode", choices=("absolute", "robust"), default="robust")
    c.add_argument("--inconsistency-threshold", type=float)
    common(c)
    c.set_defaults(func=cmd_clean)

    r = sub.add_parser("report", help="CSV + SVG error-bar charts from one or two results")
    r.add_argument("--result", action="append", required=True)
    r.add_argument("--label", action="append")
    r.add_argument("--out-dir", required=True)
    common(r)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"{parser.prog}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"{parser.prog}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception:
        log.exception("unexpected failure")
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
