"""Command-line front end.

Subcommands::

    panelcast fit       --panel Y.csv [--mask W.csv] --out DIR
    panelcast forecast  --panel Y.csv --horizons 1,2,3 --alpha 0.05 --out DIR
    panelcast simulate  --kinds dgp1 --t-values 32,64,128,256 --trials 30 --out DIR
    panelcast eval      --table DIR/results.csv --out DIR
    panelcast eval      --forecasts F.csv --actuals A.csv

Every key can also come from an INI file (``--config run.ini``); command-line
flags win.  ``--panel toy`` selects the bundled 8 x 16 example panel.  Each
output directory gets a ``manifest.json`` holding the resolved configuration,
the library version and the seed; ``--from-manifest`` replays it.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import NumericalError, PanelcastError, ValidationError
from .inference import estimate_variance_pieces, variance_pieces_frame
from .panel import read_long_csv, read_wide_csv
from .pipeline import FocusOptions, fit_focus
from .sim import METHODS, ExperimentGrid, msfe, msrpe, run_experiment

__all__ = ["ExperimentConfig", "main", "cmd_fit", "cmd_forecast", "cmd_simulate", "cmd_eval"]

log = logging.getLogger("panelcast")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _version():
    from . import __version__

    return __version__


def _ints(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)


def _strs(text):
    if isinstance(text, (list, tuple)):
        return tuple(str(x) for x in text)
    return tuple(x for x in str(text).replace(" ", "").split(",") if x)


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text in (None, "", "none", "None") else int(text)


@dataclass
class ExperimentConfig:
    """Resolved settings of one CLI run.  INI sections are ``[panel]``,
    ``[model]``, ``[forecast]``, ``[simulate]`` and ``[run]``; the key names
    are the field names below."""

    # [panel]
    panel: str = None
    mask: str = None
    format: str = "wide"
    unit_col: str = "unit"
    time_col: str = "time"
    value_col: str = "value"
    observed_col: str = "observed"
    # [model]
    rank: str = "1"
    transpose: bool = False
    detrend: bool = False
    order: int = 1
    max_order: int = None
    hac: bool = False
    # [forecast]
    horizons: tuple = (1,)
    alpha: float = 0.05
    variance_unit: int = None
    # [simulate]
    kinds: tuple = ("dgp1",)
    t_values: tuple = (32, 64, 128, 256)
    n_units: int = 64
    trials: int = 30
    methods: tuple = ("focus", "persistence", "mean")
    eval_units: int = 32
    # [run]
    out: str = "panelcast_out"
    seed: int = 0
    workers: int = 1
    # eval inputs
    table: str = None
    forecasts: str = None
    actuals: str = None

    SECTIONS = {
        "panel": ("panel", "mask", "format", "unit_col", "time_col", "value_col", "observed_col"),
        "model": ("rank", "transpose", "detrend", "order", "max_order", "hac"),
        "forecast": ("horizons", "alpha", "variance_unit"),
        "simulate": ("kinds", "t_values", "n_units", "trials", "methods", "eval_units"),
        "run": ("out", "seed", "workers", "table", "forecasts", "actuals"),
    }
    CASTS = {
        "transpose": _bool, "detrend": _bool, "hac": _bool,
        "order": int, "max_order": _opt_int, "variance_unit": _opt_int,
        "horizons": _ints, "t_values": _ints, "kinds": _strs, "methods": _strs,
        "alpha": float, "n_units": int, "trials": int, "eval_units": int,
        "seed": int, "workers": int, "rank": str,
    }

    def update(self, values):
        names = {f.name for f in fields(self)}
        for key, value in values.items():
            if key not in names:
                raise ValidationError(f"unknown configuration key {key!r}")
            if value is None:
                continue
            setattr(self, key, self.CASTS.get(key, lambda x: x)(value))
        return self

    @classmethod
    def from_ini(cls, path):
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(f"cannot read config file {path}")
        cfg = cls()
        for section in parser.sections():
            if section not in cls.SECTIONS:
                raise ValidationError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in cls.SECTIONS[section]:
                    raise ValidationError(f"key {key!r} does not belong in [{section}]")
                cfg.update({key: value})
        return cfg

    def to_dict(self):
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    def validate(self, needs_panel=False):
        if needs_panel:
            if self.panel is None:
                raise ValidationError("no input panel given (--panel)")
            if self.panel != "toy" and not Path(self.panel).is_file():
                raise FileNotFoundError(f"panel file not found: {self.panel}")
            if self.mask is not None and not Path(self.mask).is_file():
                raise FileNotFoundError(f"mask file not found: {self.mask}")
        if self.format not in ("wide", "long"):
            raise ValidationError("format must be 'wide' or 'long'")
        if not self.horizons or min(self.horizons) < 1:
            raise ValidationError("horizons must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        return self

    def focus_options(self):
        return FocusOptions(rank_method=self.rank, transpose=self.transpose,
                            detrend=self.detrend, order=self.order,
                            max_order=self.max_order, alpha=self.alpha, hac=self.hac)


def toy_panel_path():
    return resources.files("panelcast") / "data" / "toy_panel.csv"


def load_panel(cfg):
    path = toy_panel_path() if cfg.panel == "toy" else cfg.panel
    if cfg.format == "long":
        return read_long_csv(path, cfg.unit_col, cfg.time_col, cfg.value_col, cfg.observed_col)
    return read_wide_csv(path, cfg.mask)


def _write_manifest(out, command, cfg, outputs, extra=None):
    manifest = {
        "command": command,
        "version": _version(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "outputs": sorted(outputs),
    }
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(cfg):
    """Fit factors and dynamics; write the estimates and a manifest."""
    cfg.validate(needs_panel=True)
    panel = load_panel(cfg)
    model = fit_focus(panel, cfg.focus_options())
    out = _out_dir(cfg)
    fit = model.fit
    cols = [f"factor_{k + 1}" for k in range(fit.rank)]
    pd.DataFrame(fit.factors, index=pd.Index(panel.time_labels, name="time"),
                 columns=cols).to_csv(out / "factors.csv")
    loadings = pd.DataFrame(fit.loadings, index=pd.Index(panel.unit_labels, name="unit"),
                            columns=cols)
    loadings["loading_ok"] = fit.loading_ok.astype(int)
    loadings.to_csv(out / "loadings.csv")
    pd.DataFrame({"index": np.arange(1, fit.eigenvalues.size + 1),
                  "eigenvalue": fit.eigenvalues}).to_csv(out / "eigenvalues.csv", index=False)
    (out / "dynamics.json").write_text(json.dumps(model.dyn.to_dict(), indent=2))
    outputs = ["factors.csv", "loadings.csv", "eigenvalues.csv", "dynamics.json"]
    return _write_manifest(out, "fit", cfg, outputs, {
        "rank": fit.rank,
        "transposed": fit.transposed,
        "var_order": model.dyn.order,
        "spectral_radius": model.dyn.spectral_radius,
        "n_units": panel.n_units,
        "n_times": panel.n_times,
    })


def cmd_forecast(cfg):
    """Fit end to end and write one row per (unit, horizon) to forecasts.csv."""
    cfg.validate(needs_panel=True)
    panel = load_panel(cfg)
    model = fit_focus(panel, cfg.focus_options())
    table = model.forecast_table(cfg.horizons, cfg.alpha)
    table.insert(1, "unit_label", [panel.unit_labels[i] for i in table["unit"]])
    out = _out_dir(cfg)
    table.to_csv(out / "forecasts.csv", index=False, na_rep="")
    outputs = ["forecasts.csv"]
    if cfg.variance_unit is not None:
        i = cfg.variance_unit
        pieces = estimate_variance_pieces(panel, model.fit, model.dyn, model.stats, i,
                                          hac=cfg.hac, factors=model.dyn_factors)
        frame = variance_pieces_frame(pieces, model.dyn_factors[-1], model.fit.loadings[i])
        frame.to_csv(out / "variance_pieces.csv", index=False)
        outputs.append("variance_pieces.csv")
    return _write_manifest(out, "forecast", cfg, outputs, {
        "rank": model.fit.rank, "transposed": model.fit.transposed,
        "var_order": model.dyn.order, "rows": int(len(table)),
    })


def cmd_simulate(cfg):
    """Run the Monte Carlo grid; write the tidy table and its summaries."""
    cfg.validate()
    unknown = set(cfg.methods) - set(METHODS)
    if unknown:
        raise ValidationError(f"unknown methods {sorted(unknown)}")
    grid = ExperimentGrid(t_values=cfg.t_values, kinds=cfg.kinds, trials=cfg.trials,
                          n_units=cfg.n_units, horizon=cfg.horizons[0],
                          eval_units=cfg.eval_units, seed=cfg.seed)
    result = run_experiment(grid, cfg.methods, cfg.focus_options(), workers=cfg.workers,
                            reference=cfg.methods[0])
    out = _out_dir(cfg)
    result.table.to_csv(out / "results.csv", index=False)
    result.summary.to_csv(out / "summary.csv", index=False)
    result.slopes.to_csv(out / "slopes.csv", index=False)
    result.wilcoxon.to_csv(out / "wilcoxon.csv", index=False)
    outputs = ["results.csv", "summary.csv", "slopes.csv", "wilcoxon.csv"]
    return _write_manifest(out, "simulate", cfg, outputs,
                           {"failed_trials": int(result.table["failed"].sum())})


def cmd_eval(cfg):
    """Summarise a results table, or score forecasts against actuals."""
    from .sim import _summaries

    out = _out_dir(cfg)
    if cfg.table is not None:
        table = pd.read_csv(cfg.table, keep_default_na=True)
        table["error"] = table["error"].fillna("")
        methods = list(dict.fromkeys(table["method"]))
        summary, slopes, wilcoxon = _summaries(table, methods[0])
        summary.to_csv(out / "summary.csv", index=False)
        slopes.to_csv(out / "slopes.csv", index=False)
        wilcoxon.to_csv(out / "wilcoxon.csv", index=False)
        return _write_manifest(out, "eval", cfg, ["summary.csv", "slopes.csv", "wilcoxon.csv"])
    if cfg.forecasts is None or cfg.actuals is None:
        raise ValidationError("eval needs --table, or both --forecasts and --actuals")
    fc = pd.read_csv(cfg.forecasts)
    act = pd.read_csv(cfg.actuals)
    for col in ("unit", "horizon", "actual"):
        if col not in act:
            raise ValidationError(f"actuals file lacks column {col!r}")
    merged = fc.merge(act[["unit", "horizon", "actual"]], on=["unit", "horizon"], how="inner")
    merged = merged[np.isfinite(merged["point"])]
    rows = []
    for h, sub in merged.groupby("horizon"):
        inside = (sub["ci_lower"] <= sub["actual"]) & (sub["actual"] <= sub["ci_upper"])
        try:
            rel = msrpe(sub["point"], sub["actual"])
        except ValidationError:
            rel = float("nan")
        rows.append([h, len(sub), msfe(sub["point"], sub["actual"]), rel, float(inside.mean())])
    scores = pd.DataFrame(rows, columns=["horizon", "n", "msfe", "msrpe", "coverage"])
    scores.to_csv(out / "scores.csv", index=False)
    return _write_manifest(out, "eval", cfg, ["scores.csv"])


COMMANDS = {"fit": cmd_fit, "forecast": cmd_forecast, "simulate": cmd_simulate, "eval": cmd_eval}


def build_parser():
    parser = argparse.ArgumentParser(prog="panelcast", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__doc__.split("\n")[0])
        p.add_argument("--config", help="INI file with [panel]/[model]/[forecast]/[simulate]/[run]")
        p.add_argument("--from-manifest", help="replay the configuration stored in a manifest.json")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("fit", "forecast"):
            p.add_argument("--panel", help="wide or long CSV, or 'toy' for the bundled example")
            p.add_argument("--mask")
            p.add_argument("--format", choices=("wide", "long"))
            p.add_argument("--rank", help="integer, explained_variance:0.8 or eigen_ratio")
            p.add_argument("--transpose", action="store_const", const=True)
            p.add_argument("--detrend", action="store_const", const=True)
            p.add_argument("--order", type=int)
            p.add_argument("--max-order", type=int)
            p.add_argument("--hac", action="store_const", const=True)
        if name == "forecast":
            p.add_argument("--horizons")
            p.add_argument("--alpha", type=float)
            p.add_argument("--variance-unit", type=int,
                           help="also dump the variance pieces of this unit (0-based)")
        if name == "simulate":
            p.add_argument("--kinds")
            p.add_argument("--t-values")
            p.add_argument("--n-units", type=int)
            p.add_argument("--trials", type=int)
            p.add_argument("--methods")
            p.add_argument("--horizons")
            p.add_argument("--eval-units", type=int)
            p.add_argument("--workers", type=int)
            p.add_argument("--detrend", action="store_const", const=True)
            p.add_argument("--max-order", type=int)
        if name == "eval":
            p.add_argument("--table")
            p.add_argument("--forecasts")
            p.add_argument("--actuals")
    return parser


def resolve_config(args):
    cfg = ExperimentConfig()
    if args.from_manifest:
        stored = json.loads(Path(args.from_manifest).read_text())["config"]
        cfg.update(stored)
    if args.config:
        cfg.update({k: v for k, v in asdict(ExperimentConfig.from_ini(args.config)).items()
                    if v != getattr(ExperimentConfig(), k)})
    skip = {"command", "config", "from_manifest", "verbose"}
    cfg.update({k: v for k, v in vars(args).items() if k not in skip})
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        manifest = COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"numerical error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PanelcastError, ValueError, KeyError) as exc:
        print(f"invalid input ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        print(f"I/O error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("wrote %s", ", ".join(manifest["outputs"]))
    print(json.dumps({"out": cfg.out, "outputs": manifest["outputs"]}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
