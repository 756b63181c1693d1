"""Command-line scenario runner.

Usage::

    simulate CONFIG [--seed N] [--out DIR] [--format csv|json]

Exit status is 0 on success, 1 for an invalid configuration or parameters and
2 when a solver fails numerically.  ``CAVSQUEEZE_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from . import exact_dicke, gaussian, singlepass
from .checks import scalar_checks
from .config import ScenarioConfig, load_config
from .errors import CapacityError, ConfigError, IntegrationError, InvalidParameterError, SqueezingError
from .io import write_summary, write_table
from .params import derive_couplings
from .stochastic import NoiseStream, TimeGrid

log = logging.getLogger("cavsqueeze")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
DEFAULT_CAVITY_T_END = 1e-3
MOMENT_COLUMNS = ("t", "mean_jz", "var_jz", "mean_jy", "var_jy", "mean_xph", "var_xph", "var_pph")


def _header(cfg: ScenarioConfig):
    return [
        f"tool cavsqueeze {__version__}",
        f"config_sha256 {cfg.digest()}",
        f"seed {cfg.seed if cfg.seed is not None else 'none'}",
        f"scenario {cfg.scenario}",
    ]


def _opt(cfg, section, key, default, cast=float):
    raw = cfg.options.get(section, {}).get(key)
    if raw is None:
        return default
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def _moment_rows(times, moments):
    for t, m in zip(times, moments):
        yield (t, m.mean_jz, m.var_jz, m.mean_jy, m.var_jy, m.mean_xph, m.var_xph, m.var_pph)


def run_fig2(cfg: ScenarioConfig):
    p = cfg.params
    head = _header(cfg)
    out = cfg.output_dir
    t_cav = _opt(cfg, "fig2", "cavity_t_end", DEFAULT_CAVITY_T_END)
    cav_lossy = gaussian.propagate(p, t_cav, lossy=True, source="cavity_lossy")
    cav_lossless = gaussian.propagate(p, t_cav, lossy=False, source="cavity_lossless")
    sp_grid = singlepass.default_grid(p) if p.spont_rate > 0 else TimeGrid.span(0.0, 20.0, 1e-3)
    if "singlepass_t_end" in cfg.options.get("fig2", {}):
        t_sp = _opt(cfg, "fig2", "singlepass_t_end", 20.0)
        sp_grid = TimeGrid.span(0.0, t_sp, _opt(cfg, "fig2", "singlepass_dt", t_sp / 20000))
    sp_lossy = singlepass.singlepass_decay_integrate(p, sp_grid)
    sp_lossless = singlepass.singlepass_lossless_series(p, sp_grid)
    files = []
    summary = {}
    for name, series in (("cavity_lossy", cav_lossy), ("cavity_lossless", cav_lossless),
                         ("singlepass_lossy", sp_lossy), ("singlepass_lossless", sp_lossless)):
        files.append(series.to_csv(out / name, head, cfg.format))
        value, when = series.minimum()
        summary[name] = {"min_dp_at": value, "t_min": when, "t_end": float(series.t[-1])}
    pred = gaussian.predicted_min_uncertainty(p)
    summary["predicted"] = {"cavity": pred.cavity, "singlepass": pred.singlepass, "finite": pred.finite}
    files.append(write_summary(out / "summary", head, summary))
    return files


def run_checks(cfg: ScenarioConfig):
    results = scalar_checks(cfg.params)
    doc = {"checks": [r.as_dict() for r in results], "all_passed": all(r.passed for r in results)}
    for r in results:
        log.info("%-26s %-4s value=%.6g target=%.6g", r.name, "PASS" if r.passed else "FAIL", r.value, r.target)
    return [write_summary(cfg.output_dir / "checks", _header(cfg), doc)]


def run_trajectory(cfg: ScenarioConfig):
    p, grid = cfg.params, cfg.grid
    steady = _opt(cfg, "trajectory", "steady", False, bool)
    n_atoms = int(p.n_atoms)
    # build every state first so a capacity error leaves no partial output
    states = [exact_dicke.init_css(n_atoms, p, steady=steady) for _ in range(cfg.n_trajectories)]
    head = _header(cfg)
    files, finals = [], []
    for j, state in enumerate(states):
        record, moments = exact_dicke.run_trajectory(p, state, grid, NoiseStream(cfg.seed, j))
        files.append(write_table(cfg.output_dir / f"trajectory_{j:04d}_record", ("t", "dy_s"),
                                 zip(record.t, record.dy), head, cfg.format))
        files.append(write_table(cfg.output_dir / f"trajectory_{j:04d}_moments", MOMENT_COLUMNS,
                                 _moment_rows(grid.times, moments), head, cfg.format))
        m = moments[-1]
        finals.append({"trajectory": j, "mean_jz": m.mean_jz, "var_jz": m.var_jz, "var_jy": m.var_jy,
                       "integrated_signal": record.integrated})
    files.append(write_summary(cfg.output_dir / "summary", head, {"final": finals}))
    return files


def run_exact_vs_gaussian(cfg: ScenarioConfig):
    p, grid = cfg.params, cfg.grid
    n_atoms = int(p.n_atoms)
    state = exact_dicke.init_css(n_atoms, p, steady=False)
    record, moments = exact_dicke.run_trajectory(p, state, grid, NoiseStream(cfg.seed, 0))
    _, means, vs, _ = gaussian.propagate_conditional(p, grid, record=record)
    half = n_atoms / 2
    d_mean = np.array([m.mean_jz for m in moments])
    d_var = np.array([m.var_jz for m in moments]) / half
    d_vary = np.array([m.var_jy for m in moments]) / half
    g_mean = means[:, 1] * math.sqrt(half)
    g_var = vs[:, 1, 1] / 2
    g_vary = vs[:, 0, 0] / 2
    columns = ("t", "dicke_mean_jz", "gauss_mean_jz", "dicke_var_jz_scaled", "gauss_var_jz_scaled",
               "dicke_var_jy_scaled", "gauss_var_jy_scaled")
    head = _header(cfg)
    files = [write_table(cfg.output_dir / "exact_vs_gaussian", columns,
                         zip(grid.times, d_mean, g_mean, d_var, g_var, d_vary, g_vary), head, cfg.format)]
    summary = {
        "max_rel_dev_var_jz": float(np.max(np.abs(g_var / d_var - 1))),
        "max_rel_dev_var_jy": float(np.max(np.abs(g_vary / d_vary - 1))),
        "max_abs_dev_mean_jz_over_sd": float(np.max(np.abs(g_mean - d_mean) / np.sqrt(d_var * half))),
    }
    files.append(write_summary(cfg.output_dir / "summary", head, summary))
    return files


def run_signal_pdf(cfg: ScenarioConfig):
    p = cfg.params
    t = _opt(cfg, "signal_pdf", "t", cfg.grid.t1 if cfg.grid is not None else None)
    if t is None or not t > 0:
        raise ConfigError("signal_pdf needs a positive [signal_pdf] t or a [grid] t_end")
    state = exact_dicke.init_css(int(p.n_atoms), p, steady=True)
    alpha = derive_couplings(p).alpha_steady
    reach = 2 * math.sqrt(p.measurement_rate) * alpha * t * p.n_atoms / 2 + 8 * math.sqrt(t)
    y_min = _opt(cfg, "signal_pdf", "y_min", -reach)
    y_max = _opt(cfg, "signal_pdf", "y_max", reach)
    n_points = _opt(cfg, "signal_pdf", "n_points", 2001, int)
    ys = np.linspace(y_min, y_max, n_points)
    dens = exact_dicke.signal_pdf(state, p, t, ys)
    head = _header(cfg)
    return [
        write_table(cfg.output_dir / "signal_pdf", ("y_s", "pdf"), zip(ys, dens), head, cfg.format),
        write_summary(cfg.output_dir / "summary", head,
                      {"t": t, "integral": float(np.trapezoid(dens, ys)), "n_points": n_points}),
    ]


def run_sweep(cfg: ScenarioConfig):
    section = cfg.options.get("sweep", {})
    name = section.get("parameter", "n_atoms").strip()
    if not hasattr(cfg.params, name) or name in ("detection_port", "flux_table"):
        raise ConfigError(f"cannot sweep parameter {name!r}")
    try:
        values = [float(v) for v in section.get("values", "").split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"[sweep] values: {exc}") from exc
    if not values:
        raise ConfigError("[sweep] needs a non-empty values list")
    cavity_numeric = _opt(cfg, "sweep", "cavity_numeric", False, bool)
    t_cav = _opt(cfg, "sweep", "cavity_t_end", DEFAULT_CAVITY_T_END)
    rows = []
    for v in values:
        try:
            p = cfg.params.replace(**{name: v})
        except InvalidParameterError as exc:
            raise ConfigError(f"sweep value {name}={v}: {exc}") from exc
        pred = gaussian.predicted_min_uncertainty(p)
        sp_min = sp_t = cav_min = cav_t = math.nan
        if pred.finite:
            sp_min, sp_t = singlepass.singlepass_decay_integrate(p, singlepass.default_grid(p)).minimum()
        if cavity_numeric:
            cav_min, cav_t = gaussian.propagate(p, t_cav, lossy=True, record_every=10).minimum()
        rows.append((v, pred.cavity, pred.singlepass, sp_min, sp_t, cav_min, cav_t))
    columns = (name, "cavity_predicted", "singlepass_predicted", "singlepass_min", "singlepass_t_min",
               "cavity_min", "cavity_t_min")
    return [write_table(cfg.output_dir / "sweep", columns, rows, _header(cfg), cfg.format)]


SCENARIO_RUNNERS = {
    "fig2": run_fig2,
    "checks": run_checks,
    "trajectory": run_trajectory,
    "exact_vs_gaussian": run_exact_vs_gaussian,
    "signal_pdf": run_signal_pdf,
    "sweep": run_sweep,
}


def run_scenario(cfg: ScenarioConfig):
    """Run a validated scenario and return the written paths."""
    cfg.validate()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    files = SCENARIO_RUNNERS[cfg.scenario](cfg)
    log.info("wrote %d files to %s", len(files), cfg.output_dir)
    return files


def build_parser():
    ap = argparse.ArgumentParser(prog="simulate", description="Cavity spin-squeezing scenario runner")
    ap.add_argument("config", help="INI scenario file")
    ap.add_argument("--seed", type=int, default=None, help="override the configured seed")
    ap.add_argument("--out", default=None, help="override the output directory")
    ap.add_argument("--format", choices=("csv", "json"), default=None)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CAVSQUEEZE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out, fmt=args.format)
        run_scenario(cfg)
    except (ConfigError, InvalidParameterError, CapacityError) as exc:
        print(f"simulate: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"simulate: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (IntegrationError, SqueezingError, ArithmeticError) as exc:
        print(f"simulate: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
