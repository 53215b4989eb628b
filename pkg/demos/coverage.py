"""Empirical coverage of nominal 95% intervals under random missingness.

The acceptance suite uses 500 trials at N=T=200; this runs 100 to stay quick.
"""
from panelcast.sim import coverage_study

frame = coverage_study(trials=100, n_units=200, n_times=200, p=0.7, seed=2)
width = (frame["upper"] - frame["lower"]).median()
print(f"coverage {frame['hit'].mean():.3f} over {len(frame)} trials, median width {width:.4f}")
