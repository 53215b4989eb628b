"""Forecast error against panel length on the AR(1) design.

A reduced version of the acceptance experiment: mean MSFE per T for the
factor forecaster and two naive baselines, the log-log decay slope, and the
one-sided signed-rank tests against each baseline.  With 10 trials per cell
the means are noisy (errors scale with the last factor value squared), so
they need not fall monotonically in T; the baseline comparisons are robust.
"""
from panelcast.sim import ExperimentGrid, run_experiment

grid = ExperimentGrid(t_values=(32, 64, 128), kinds=("dgp1",), trials=10, n_units=48, seed=1)
result = run_experiment(grid, methods=("focus", "persistence", "mean"))

wide = result.summary.pivot(index="n_times", columns="method", values="mean_msfe")
print(wide.round(5))
print()
print(result.slopes.round(3).to_string(index=False))
print()
print(result.wilcoxon[["n_times", "baseline", "n_nonzero", "p_value"]].to_string(index=False))
