"""Time the dual active-set kernel compiled with numba against its plain-numpy source.

Usage::

    python benchmarks/bench_qp.py [--problems 2000] [--n 12] [--m 20] [--households 0]

Kernel timings use identical inputs for both paths, so the results are also
checked to agree.  ``--households N`` additionally times ``solve_all`` on a
synthetic model in two subprocesses, one with ``PMPSIM_DISABLE_NUMBA=1``.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from pmpsim._accel import USE_NUMBA
from pmpsim.qp import dual_active_set


def random_problems(count: int, n: int, m: int, seed: int = 0):
    """Strictly convex QPs with a feasible box plus random rows (scaled like the household ones)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        q = rng.uniform(0.5, 2.0, n)
        H = np.diag(q)
        g = -rng.uniform(0.5, 2.0, n)
        A = rng.uniform(0.0, 1.0, (m, n))
        x_feas = rng.uniform(0.0, 0.5, n)
        rhs = A @ x_feas + rng.uniform(0.0, 0.2, m)
        # C x >= b  with rows  -A x >= -rhs  and  x >= 0
        C = np.ascontiguousarray(np.vstack([-A, np.eye(n)]))
        b = np.ascontiguousarray(np.concatenate([-rhs, np.zeros(n)]))
        out.append((H, g, C, b))
    return out


def time_kernel(fn, problems, repeat: int = 3) -> tuple[float, list]:
    best, sols = np.inf, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        sols = [fn(H, g, C, b, 0, 500, 1e-11)[0] for H, g, C, b in problems]
        best = min(best, time.perf_counter() - t0)
    return best, sols


def time_households(n: int) -> dict[str, float]:
    code = (
        "import time\n"
        "from pmpsim.synth import generate_survey\n"
        "from pmpsim.ingest import SurveyDataset, build_households, practice_observations\n"
        "from pmpsim.typology import classify_all_practices\n"
        "from pmpsim.calibration import calibrate_all\n"
        "from pmpsim.household import solve_all\n"
        f"h, p = generate_survey(1, {n})\n"
        "ds = SurveyDataset(p, h)\n"
        "labels, _ = classify_all_practices(practice_observations(ds))\n"
        "m = build_households(ds, practice_labels=labels).model\n"
        "cs = calibrate_all(m, attach=False)\n"
        "solve_all(m.households[:2], cs.results, m, m.base_policy())\n"
        "t = time.perf_counter()\n"
        "solve_all(m.households, cs.results, m, m.base_policy())\n"
        "print(time.perf_counter() - t)\n"
    )
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, PMPSIM_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                             check=True)
        out[label] = float(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--problems", type=int, default=2000)
    ap.add_argument("--n", type=int, default=12, help="variables per problem")
    ap.add_argument("--m", type=int, default=20, help="general inequality rows per problem")
    ap.add_argument("--households", type=int, default=0)
    args = ap.parse_args(argv)

    problems = random_problems(args.problems, args.n, args.m)
    print(f"{args.problems} problems, n={args.n}, m={args.m + args.n} inequality rows")
    if USE_NUMBA:
        dual_active_set(*problems[0], 0, 500, 1e-11)  # compile outside the timing
        t_jit, x_jit = time_kernel(dual_active_set, problems)
        print(f"numba : {t_jit:8.3f} s  ({1e6 * t_jit / len(problems):8.1f} us/problem)")
    else:
        print("numba : disabled (PMPSIM_DISABLE_NUMBA is set or numba is missing)")
        t_jit, x_jit = None, None
    t_py, x_py = time_kernel(dual_active_set.py_func, problems, repeat=1)
    print(f"numpy : {t_py:8.3f} s  ({1e6 * t_py / len(problems):8.1f} us/problem)")
    if t_jit:
        gap = max(float(np.abs(a - b).max()) for a, b in zip(x_jit, x_py))
        print(f"speedup {t_py / t_jit:.1f}x; max |x_numba - x_numpy| = {gap:.2e}")
    if args.households:
        t = time_households(args.households)
        print(f"solve_all on {args.households} households: numba {t['numba']:.2f} s, "
              f"numpy {t['numpy']:.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
