from __future__ import annotations

import functools
import sys
from pathlib import Path
from types import SimpleNamespace

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pmpsim.calibration import calibrate_all  # noqa: E402
from pmpsim.ingest import SurveyDataset, build_households, practice_observations  # noqa: E402
from pmpsim.scenario import PRESETS, project_baseline, run_scenario  # noqa: E402
from pmpsim.synth import generate_survey  # noqa: E402
from pmpsim.typology import classify_all_practices, classify_farms  # noqa: E402


@functools.lru_cache(maxsize=None)
def synthetic_pipeline(n: int, seed: int = 1, profile: str = "Sénégal", scenarios: bool = True):
    """synth -> ingest -> typology -> calibrate (-> baseline -> scenarios), timed per stage."""
    import time
    t0 = time.perf_counter()
    hh, plots = generate_survey(seed, n, profile)
    ds = SurveyDataset(plots, hh)
    labels, _ = classify_all_practices(practice_observations(ds))
    model = build_households(ds, practice_labels=labels).model
    classes, _ = classify_farms(model)
    groups = {h.id: (h.region, classes[h.id].specialization) for h in model.households}
    t1 = time.perf_counter()
    cset = calibrate_all(model, groups=groups)
    t2 = time.perf_counter()
    out = SimpleNamespace(model=model, classes=classes, groups=groups, cset=cset,
                          calibrate_seconds=t2 - t1, prepare_seconds=t1 - t0)
    if scenarios:
        pm, pc = project_baseline(model, calibrations=cset.results)
        out.projected, out.projected_cal = pm, pc
        out.runs = {name: run_scenario(pm, pc, spec) for name, spec in PRESETS.items()}
    return out


@pytest.fixture(scope="session")
def national500():
    return synthetic_pipeline(500)


@pytest.fixture(scope="session")
def small_run():
    return synthetic_pipeline(60, seed=3)


PIPELINE_STAGES = ("synth", "ingest", "typology", "calibrate", "baseline", "simulate", "report")


def run_cli_pipeline(out: Path, *, n: int = 60, seed: int = 5, jobs: int = 1, extra_report=()):
    """Run every CLI stage into ``out``; returns the exit codes by stage."""
    import os
    from pmpsim.cli import main
    codes = {}
    old = os.environ.get("SOURCE_DATE_EPOCH")
    os.environ["SOURCE_DATE_EPOCH"] = "1700000000"
    try:
        for stage in PIPELINE_STAGES:
            argv = [stage, "--out", str(out), "--jobs", str(jobs), "--seed", str(seed)]
            if stage == "synth":
                argv += ["--n", str(n)]
            if stage == "report":
                argv += list(extra_report)
            codes[stage] = main(argv)
    finally:
        if old is None:
            del os.environ["SOURCE_DATE_EPOCH"]
        else:
            os.environ["SOURCE_DATE_EPOCH"] = old
    return codes


def tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="session")
def cli_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    codes = run_cli_pipeline(out, extra_report=["--plot-data"])
    return SimpleNamespace(out=out, codes=codes)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
