"""
Trading as risk mitigation
==========================

Unwinding toxic inventory is not only about expected cost: holding the
absorbed flow leaves the desk exposed to the mid-price. Comparing the
total P&L of the optimal unwind against the P&L of never trading shows
the variance collapse, path by path, on shared noise.
"""

from pathlib import Path

import numpy as np

from toxflow import default_grid, run_montecarlo, scenario_preset, write_histogram_csv

spec = scenario_preset("reversion")
partial, no_trade = run_montecarlo(
    spec, ["partial", "no_trade"], 1000, 99,
    grid=default_grid(spec), workers=1, bins=40,
)

tot = partial.total_pnl_paths
nt = partial.pnl_no_trade_paths  # identical draws for every agent

print(f"{'':>12} {'mean':>10} {'std':>10} {'5% tail':>10}")
print(f"{'no trade':>12} {nt.mean():>+10.4f} {nt.std(ddof=1):>10.4f} "
      f"{np.quantile(nt, 0.05):>+10.4f}")
print(f"{'optimal':>12} {tot.mean():>+10.4f} {tot.std(ddof=1):>10.4f} "
      f"{np.quantile(tot, 0.05):>+10.4f}")
print(f"\nvariance ratio no-trade/optimal: "
      f"{nt.var(ddof=1) / tot.var(ddof=1):.1f}x")

out = Path("demo_output")
out.mkdir(exist_ok=True)
for quantity in ("total_pnl", "pnl_no_trade"):
    write_histogram_csv(partial, quantity, out / f"hist_{quantity}.csv")
print(f"histograms written to {out}/hist_total_pnl.csv and hist_pnl_no_trade.csv")
