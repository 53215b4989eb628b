"""Fit the bundled toy panel and print forecasts with intervals.

Run with ``python3 demos/quickstart.py``.
"""
import numpy as np

from panelcast import FocusOptions, fit_focus
from panelcast.cli import toy_panel_path
from panelcast.panel import read_wide_csv

panel = read_wide_csv(toy_panel_path())
print(f"panel: {panel.n_units} units x {panel.n_times} periods, "
      f"{panel.mask.mean():.0%} observed")

model = fit_focus(panel, FocusOptions(rank_method=1))
print(f"rank {model.fit.rank}, VAR coefficient {model.dyn.A[0, 0]:.3f}, "
      f"stable={model.dyn.stable}")

table = model.forecast_table(horizons=(1, 2))
table.insert(1, "label", np.asarray(panel.unit_labels)[table["unit"]])
print(table.round(4).to_string(index=False))
