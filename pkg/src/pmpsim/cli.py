"""Command-line pipeline: synth -> ingest -> typology -> calibrate -> baseline -> simulate -> report.

Every stage writes into its own folder under ``--out`` together with a
``manifest.json`` describing how it was produced.  Exit codes: 0 success,
1 I/O or missing upstream stage, 2 validation diagnostics.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from ._accel import backend_name

log = logging.getLogger("pmpsim")

STAGES = {
    "synth": "survey",
    "ingest": "model",
    "typology": "typology",
    "calibrate": "calibration",
    "baseline": "baseline",
    "simulate": "scenarios",
    "report": "report",
}
DEFAULT_SCENARIOS = ("Abol", "Univ", "Cibl")


class StageMissing(RuntimeError):
    def __init__(self, stage: str, detail: str = ""):
        super().__init__(f"run {stage} first" + (f" ({detail})" if detail else ""))


def _versions() -> dict:
    import numpy
    import scipy
    out = {"pmpsim": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        pass
    return out


def _version_string() -> str:
    return json.dumps(_versions(), sort_keys=True)


def _timestamp() -> str:
    """UTC time of the run; honours SOURCE_DATE_EPOCH for reproducible outputs."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
         else _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0))
    return t.isoformat().replace("+00:00", "Z")


def _rel(path: Path, root: Path) -> str:
    try:
        return Path(os.path.relpath(Path(path).resolve(), root.resolve())).as_posix()
    except ValueError:  # different drive
        return str(path)


def _write_manifest(directory: Path, args, command: str, inputs=(), extra: dict | None = None,
                    fresh: bool = False) -> None:
    root = Path(args.out)
    cfg = None
    if args.config:
        data = Path(args.config).read_bytes()
        cfg = {"file": Path(args.config).name, "sha256": hashlib.sha256(data).hexdigest()}
    manifest = {
        "command": command,
        "config": cfg,
        "inputs": [_rel(Path(p), root) for p in inputs],
        "output": _rel(directory, root),
        "seed": args.seed,
        "timestamp": _timestamp(),
        "versions": _versions(),
        "backend": backend_name(),
    }
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    if path.exists() and not fresh:  # keep what the stage's own writer recorded (e.g. schema version)
        manifest = {**json.loads(path.read_text(encoding="utf-8")), **manifest}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _config(args) -> dict:
    if not args.config:
        return {}
    from .scenario import read_config
    data = read_config(args.config)
    if not isinstance(data, dict):
        raise ValueError("config must be an object at top level")
    return data


def _stage_dir(args, command: str) -> Path:
    return Path(args.out) / STAGES[command]


def _require(path: Path, stage: str) -> Path:
    if not (path / "manifest.json").exists():
        raise StageMissing(stage, f"{path} not found")
    return path


def _write_diagnostics(path: Path, diags) -> None:
    from .core import write_csv
    write_csv(path, ["subject", "message"],
              ([getattr(d, "subject", None) or d.household, d.message] for d in diags))


# ------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    from .synth import generate_survey, profile, write_survey
    cfg = _config(args).get("synth", {})
    n = args.n if args.n is not None else int(cfg.get("n", 500))
    name = args.profile or cfg.get("profile", "Sénégal")
    if n < 1:
        raise ValueError("n must be >= 1")
    prof = profile(name)
    seed = 1 if args.seed is None else args.seed
    args.seed = seed
    households, plots = generate_survey(seed, n, prof.name)
    out = _stage_dir(args, "synth")
    write_survey(households, plots, out)
    _write_manifest(out, args, "synth", extra={"n": n, "profile": prof.name})
    print(f"wrote {len(households)} households and {len(plots)} plots to {out}")
    return 0


def cmd_ingest(args) -> int:
    from .core import validate_model, write_model
    from .ingest import (CleaningPolicy, build_households, load_survey, practice_observations,
                         write_cleaning_report)
    from .typology import classify_all_practices
    cfg = _config(args)
    src = Path(args.input) if args.input else _stage_dir(args, "synth")
    dataset = load_survey(src)
    cleaning = CleaningPolicy(**cfg.get("cleaning", {}))
    labels, pdiags = classify_all_practices(practice_observations(dataset))
    res = build_households(dataset, cleaning, labels, **cfg.get("ingest", {}))
    out = _stage_dir(args, "ingest")
    write_model(res.model, out)
    write_cleaning_report(res.records, out / "cleaning_report.csv")
    from .core import write_csv
    write_csv(out / "practices.csv", ["plot", "practice"], sorted(labels.items()))
    problems = validate_model(res.model.households, res.model.activities, res.model.prices,
                              res.model.products)
    _write_diagnostics(out / "diagnostics.csv", list(pdiags) + list(res.diagnostics) + problems)
    _write_manifest(out, args, "ingest", inputs=[src], extra={"cleaning": cleaning.__dict__})
    print(f"model: {len(res.model.households)} households, {len(res.model.activities)} activities; "
          f"{len(res.records)} cleaning actions")
    for d in problems:
        print(f"invalid: {d}", file=sys.stderr)
    return 2 if problems else 0


def cmd_typology(args) -> int:
    from .core import read_model, write_csv
    from .typology import classify_farms
    src = _require(_stage_dir(args, "ingest"), "ingest")
    model = read_model(src)
    classes, diags = classify_farms(model)
    out = _stage_dir(args, "typology")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "farms.csv", ["household", "region", "size", "specialization", "production_value"], (
        [hid, model.household(hid).region, c.size, c.specialization, float(c.value)]
        for hid, c in sorted(classes.items())))
    _write_diagnostics(out / "diagnostics.csv", diags)
    _write_manifest(out, args, "typology", inputs=[src])
    print(f"classified {len(classes)} farms")
    return 0


def _read_classes(args):
    from .core import read_csv
    from .typology import FarmClass
    src = _require(_stage_dir(args, "typology"), "typology")
    return {r["household"]: FarmClass(r["size"], r["specialization"], float(r["production_value"]))
            for r in read_csv(src / "farms.csv", ["household", "size", "specialization",
                                                 "production_value"])}


def cmd_calibrate(args) -> int:
    from .calibration import ElasticityTargets, calibrate_all, write_calibration
    from .core import read_model
    cfg = _config(args).get("elasticities", {})
    src = _require(_stage_dir(args, "ingest"), "ingest")
    model = read_model(src)
    classes = _read_classes(args)
    groups = {h.id: (h.region, classes[h.id].specialization) for h in model.households}
    targets = ElasticityTargets(dict(cfg.get("values", {})), float(cfg.get("default", 0.8)))
    cset = calibrate_all(model, targets, groups=groups, jobs=args.jobs)
    out = _stage_dir(args, "calibrate")
    write_calibration(cset, out)
    _write_manifest(out, args, "calibrate", inputs=[src, _stage_dir(args, "typology")],
                    extra={"elasticity_default": targets.default})
    failed = len(model.households) - len(cset.results)
    worst = max((r.max_residual for r in cset.results.values()), default=0.0)
    print(f"calibrated {len(cset.results)} households ({failed} failed); max residual {worst:.3g}")
    return 2 if failed else 0


def _baseline_spec(args):
    from .scenario import BaselineSpec
    return BaselineSpec.from_dict(_config(args).get("baseline", {}))


def cmd_baseline(args) -> int:
    from .calibration import read_calibration, write_calibration
    from .core import read_model, write_model
    from .scenario import PRESETS, project_baseline, run_scenario, write_solutions
    msrc = _require(_stage_dir(args, "ingest"), "ingest")
    csrc = _require(_stage_dir(args, "calibrate"), "calibrate")
    model = read_model(msrc)
    cset = read_calibration(csrc)
    spec = _baseline_spec(args)
    pmodel, pcal = project_baseline(model, spec, cset.results)
    out = _stage_dir(args, "baseline")
    write_model(pmodel, out / "model")
    cset.results = pcal
    write_calibration(cset, out / "calibration")
    res = run_scenario(pmodel, pcal, PRESETS["baseline"], jobs=args.jobs)
    write_solutions(res.solutions, out / "results")
    _write_diagnostics(out / "failures.csv", res.failures)
    _write_manifest(out, args, "baseline", inputs=[msrc, csrc], extra={"baseline": spec.to_dict()})
    print(f"baseline solved for {len(res.solutions)} households ({len(res.failures)} failures)")
    return 2 if res.failures else 0


def cmd_simulate(args) -> int:
    from .calibration import read_calibration
    from .core import read_model
    from .scenario import PRESETS, parse_scenarios, run_scenario, write_solutions
    _require(_stage_dir(args, "calibrate"), "calibrate")
    bdir = _require(_stage_dir(args, "baseline"), "baseline")
    model = read_model(bdir / "model")
    cal = read_calibration(bdir / "calibration").results
    cfg = _config(args)
    if args.scenario:
        specs = parse_scenarios(list(args.scenario))
    elif "scenarios" in cfg:
        specs = parse_scenarios(cfg)
    else:
        specs = [PRESETS[n] for n in DEFAULT_SCENARIOS]
    out = _stage_dir(args, "simulate")
    failures = 0
    for spec in specs:
        res = run_scenario(model, cal, spec, jobs=args.jobs)
        d = out / spec.name
        write_solutions(res.solutions, d)
        _write_diagnostics(d / "failures.csv", res.failures)
        totals = res.totals(model.households)
        (d / "policy.json").write_text(json.dumps(
            {"scenario": spec.to_dict(), "policy": {"rate": res.policy.rate, "quota_kg": res.policy.quota_kg,
                                                    "eligibility": res.policy.eligibility.to_dict()},
             "totals": totals}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        _write_manifest(d, args, "simulate", inputs=[bdir], extra={"scenario": spec.name})
        failures += len(res.failures)
        print(f"{spec.name}: outlay {totals['subsidy_outlay']:.6g} FCFA, "
              f"income {totals['total_income']:.6g} FCFA, {len(res.failures)} failures")
    _write_manifest(out, args, "simulate", inputs=[bdir],
                    extra={"scenarios": [s.name for s in specs]}, fresh=True)
    return 2 if failures else 0


def cmd_report(args) -> int:
    from .core import read_model
    from .report import (GROUPINGS, aggregate, compare, cost_benefit, income_distribution,
                         write_comparison, write_cost_benefit, write_distribution, write_plot_data,
                         write_table)
    from .scenario import read_solutions
    bdir = _require(_stage_dir(args, "baseline"), "baseline")
    sdir = _require(_stage_dir(args, "simulate"), "simulate")
    model = read_model(bdir / "model")
    classes = _read_classes(args)
    runs = {"baseline": read_solutions(bdir / "results")}
    for d in sorted(p for p in sdir.iterdir() if p.is_dir()):
        runs[d.name] = read_solutions(d)
    groupings = args.group_by or list(GROUPINGS)
    bad = [g for g in groupings if g not in GROUPINGS]
    if bad:
        raise ValueError(f"unknown grouping {bad[0]!r}")
    out = _stage_dir(args, "report")
    out.mkdir(parents=True, exist_ok=True)
    weights = {h.id: h.weight for h in model.households}
    levels, changes, curves = {}, {}, {}
    cb = {}
    for g in groupings:
        base = aggregate(runs["baseline"], model, g, classes)
        for name, sols in runs.items():
            t = aggregate(sols, model, g, classes)
            write_table(t, out / f"indicators_{name}_{g}.csv")
            levels[f"{name}:{g}"] = t
            if name != "baseline":
                c = compare(t, base)
                write_comparison(c, out / f"compare_{name}_{g}.csv")
                changes[f"{name}:{g}"] = c
    if "Abol" in runs:
        ab = runs["Abol"]
        for name, sols in runs.items():
            if name == "Abol":
                continue
            curve = income_distribution(sols, ab, weights)
            write_distribution(curve, out / f"distribution_{name}.csv")
            curves[name] = curve
            entry = {"national": cost_benefit(sols, ab, weights).to_dict()}
            for g in ("size", "specialization"):
                if g in groupings:
                    members: dict[str, list] = {}
                    for hid in sorted(sols):
                        c = classes[hid]
                        members.setdefault(c.size if g == "size" else c.specialization, []).append(hid)
                    entry[g] = {k: cost_benefit(sols, ab, weights, ids).to_dict()
                                for k, ids in sorted(members.items())}
            cb[name] = entry
        (out / "cost_benefit.json").write_text(json.dumps(cb, indent=2, sort_keys=True) + "\n",
                                               encoding="utf-8")
    else:
        print("no Abol run; skipping distribution and cost-benefit", file=sys.stderr)
    if args.plot_data:
        write_plot_data(levels, changes, curves, out / "plot_")
    _write_manifest(out, args, "report", inputs=[bdir, sdir], extra={"group_by": groupings})
    print(f"report written to {out}")
    return 0


# ------------------------------------------------------------ parser

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON or TOML configuration file")
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                   help="worker processes for household solves (default: all cores)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for synthetic data")
    p.add_argument("--out", default=argparse.SUPPRESS, help="run directory (default: run)")
    p.add_argument("--version", action="version", version=_version_string())
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="pmpsim", parents=[common],
                                     description="Farm-household fertilizer subsidy microsimulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic survey")
    p.add_argument("--n", type=int, default=None, help="number of households (default 500)")
    p.add_argument("--profile", default=None, help="regional profile (default: national)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="clean a survey and build the model")
    p.add_argument("--input", default=None, help="survey directory (default: <out>/survey)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("typology", parents=[common], help="classify farms by size and specialization")
    p.set_defaults(func=cmd_typology)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate household models")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("baseline", parents=[common], help="project to the baseline and solve it")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("simulate", parents=[common], help="run policy scenarios")
    p.add_argument("--scenario", action="append", choices=["baseline", "Abol", "Univ", "Cibl"],
                   help="preset to run (repeatable); overrides the config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="aggregate and compare scenario results")
    p.add_argument("--group-by", action="append", dest="group_by",
                   help="national, region, size, specialization or crop (repeatable)")
    p.add_argument("--plot-data", action="store_true", help="also write long-format plot data")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("jobs", None), ("seed", None), ("out", "run")):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.jobs is None:
        args.jobs = os.cpu_count() or 1
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
