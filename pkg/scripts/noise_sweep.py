#!/usr/bin/env python3
"""Terminal error against noise level under a-priori stopping.

Usage: python scripts/noise_sweep.py [config.json] [out_dir]
"""

import sys
import time
from pathlib import Path

from sdbli.config import ExperimentConfig
from sdbli.diagnostics import noise_sweep
from sdbli.experiment import build_experiment, sweep_problem_builder

HERE = Path(__file__).parent


def main(argv):
    cfg_path = Path(argv[1]) if len(argv) > 1 else HERE / "configs" / "sweep.json"
    xc = ExperimentConfig.load(cfg_path)
    if not xc.noise.sweep:
        sys.exit("config has no noise.sweep list")
    out = Path(argv[2]) if len(argv) > 2 else Path(xc.output.directory)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    exp = build_experiment(xc)
    table = noise_sweep(exp.u0, sweep_problem_builder(exp, xc), exp.solver, xc.noise.sweep,
                        xc.diagnostics.R, consts=exp.consts)
    (out / f"{xc.output.prefix}_sweep.csv").write_text(table.to_csv())
    for r in table.rows:
        print(f"delta={r.delta:<8g} k={r.k_delta:<7d} err={r.terminal_mean_sq_err:.4e} +- {r.stderr:.1e}")
    print(f"non-increasing within 3 stderr: {table.ok}; {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main(sys.argv)
