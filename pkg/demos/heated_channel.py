"""Heated channel with a sliding lid: watch the control functional and the minimum-principle bounds.

    python3 demos/heated_channel.py [--M 3.0]

With the default automatic threshold the run reaches t_end; a small ``--M``
shows the monitor stopping at the hitting time.
"""

import argparse
from pathlib import Path

from nsflab import Monitor, load_config, run
from nsflab.harness import build_problem

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "heated_channel.yaml"

ap = argparse.ArgumentParser()
ap.add_argument("--M", type=float, default=None, help="hitting threshold (default: automatic)")
ap.add_argument("--t-end", type=float, default=0.2)
args = ap.parse_args()

cfg = load_config(CONFIG)
cfg.stepper["t_end"] = args.t_end
if args.M is not None:
    cfg.monitor.M = args.M
prob = build_problem(cfg)
mon = Monitor(prob.params, prob.bd, cfg.monitor)
res = run(prob.initial, prob.params, prob.bd, prob.stepper, monitor=mon, store_every=None)

print(f"{'step':>5} {'t':>7} {'F':>9} {'rho_min':>9} {'rho_bound':>9} {'theta_min':>9} {'theta_bound':>11}")
every = max(1, len(res.records) // 10)
for r in res.records[::every] + ([res.records[-1]] if (len(res.records) - 1) % every else []):
    print(f"{r.step:5d} {r.t:7.4f} {r.control_F:9.4f} {r.rho_min:9.5f} {r.rho_bound:9.5f} "
          f"{r.theta_min:9.5f} {r.theta_bound:11.5f}")
print(f"status {res.status} after {res.steps} steps, M = {mon.M:.4g}, T_M = {res.T_M}")
