#!/usr/bin/env python3
"""Terminal error with and without the data-driven term, and with the truth in the training set.

Usage: python scripts/data_driven_comparison.py [config.json]
"""

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from sdbli.config import ExperimentConfig
from sdbli.diagnostics import monte_carlo
from sdbli.experiment import build_experiment

HERE = Path(__file__).parent


def terminal(exp, cfg, R):
    s = monte_carlo(exp.u0, exp.problem, cfg, R, record_full_residual_every=100, consts=exp.consts)
    return float(s.mean_sq_err[-1]), float(s.stderr_err[-1])


def main(argv):
    cfg_path = Path(argv[1]) if len(argv) > 1 else HERE / "configs" / "acceptance.json"
    xc = ExperimentConfig.load(cfg_path)
    R = xc.diagnostics.R
    rows = []
    for include in (False, True):
        xc.training.include_truth = include
        exp = build_experiment(xc)
        for label, cfg in (("c_lambda=0", replace(exp.solver, c_lambda=0.0)),
                           (f"c_lambda={exp.solver.c_lambda:.3g}", exp.solver)):
            m, se = terminal(exp, cfg, R)
            rows.append((include, label, m, se))
            print(f"truth in training={include!s:<5} {label:<18} err={m:.5e} +- {se:.1e}")
    base = {inc: (m, se) for inc, lab, m, se in rows if lab == "c_lambda=0"}
    for inc, lab, m, se in rows:
        if lab != "c_lambda=0":
            m0, se0 = base[inc]
            print(f"benefit (truth in training={inc}): {m <= m0 + 3 * np.hypot(se, se0)}")


if __name__ == "__main__":
    main(sys.argv)
