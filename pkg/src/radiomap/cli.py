"""``radiomap`` command line: generate, estimate, evaluate, apps.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical/conditioning error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import analytics, plotting, scenario as scen, sensing, temporal
from .estimate import METHODS, ConditioningError, EstimationError, estimate_map
from .estimate.kriging import OrdinaryKriging
from .estimate.pathloss import ModelBased
from .field import DB, LINEAR, BandGrid, Grid2D, GeometryMismatch, RasterFormatError, \
    export_band, export_raster, from_db, import_band, import_raster
from .seeding import substream

log = logging.getLogger("radiomap")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_STORAGE_ROW = {"area_km2": 400, "cell_m": 20, "band_mhz": 120, "chan_mhz": 3,
                     "duration_h": 24, "step_min": 10, "bits_per_px": 8}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class RunConfig:
    path: str
    scenario: scen.Scenario
    seed: int
    out_dir: str
    sensing: dict = field(default_factory=dict)
    estimators: list = field(default_factory=list)
    temporal: dict = field(default_factory=dict)
    analytics: dict = field(default_factory=dict)
    figures: bool = True


def load_run_config(path, seed=None, out_dir=None) -> RunConfig:
    """Parse a run config; ``scenario`` is either inline or a path relative to the file."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping")
    base = os.path.dirname(os.path.abspath(path))
    sc = d.get("scenario")
    if sc is None:
        raise ConfigError("config has no scenario")
    if isinstance(sc, str):
        sc_path = sc if os.path.isabs(sc) else os.path.join(base, sc)
        if not os.path.isfile(sc_path):
            raise ConfigError(f"scenario file not found: {sc_path}")
        with open(sc_path, "r", encoding="utf-8") as fh:
            sc = yaml.safe_load(fh)
        if not isinstance(sc, dict):
            raise ConfigError(f"{sc_path}: expected a mapping")
    if seed is None:
        seed = d.get("seed", sc.get("seed", 0))
    try:
        seed = int(seed)
        scenario = scen.scenario_from_dict(sc, seed=seed)
    except (scen.ScenarioError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    estimators = d.get("estimators") or [{"method": "kriging"}]
    for e in estimators:
        if not isinstance(e, dict) or e.get("method") not in METHODS:
            raise ConfigError(f"unknown estimator block {e!r}; methods are {', '.join(METHODS)}")
    out = out_dir or d.get("output") or "out"
    if not os.path.isabs(out) and out_dir is None:
        out = os.path.join(base, out)
    return RunConfig(path=path, scenario=scenario, seed=seed, out_dir=out,
                     sensing=dict(d.get("sensing") or {}), estimators=list(estimators),
                     temporal=dict(d.get("temporal") or {}), analytics=dict(d.get("analytics") or {}),
                     figures=bool(d.get("figures", True)))


def _dump_yaml(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(obj, fh, sort_keys=False, default_flow_style=None)


def _write_tsv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def _save(cfg, fig, name):
    if not cfg.figures:
        return
    d = os.path.join(cfg.out_dir, "figures")
    os.makedirs(d, exist_ok=True)
    plotting.save_figure(fig, os.path.join(d, name))


def _load_truth(cfg) -> BandGrid:
    d = os.path.join(cfg.out_dir, "truth")
    if not os.path.isdir(d):
        raise DataError(f"missing truth rasters in {d}; run 'radiomap generate' first")
    s = cfg.scenario
    truth = import_band(d, s.channel_centers, s.channel_width)
    truth.geometry.check_same(s.geometry)
    return truth


def _load_gains(cfg):
    d = os.path.join(cfg.out_dir, "gain")
    out = {}
    for t in cfg.scenario.transmitters:
        p = os.path.join(d, f"tx_{t.id}.rmk")
        if not os.path.isfile(p):
            raise DataError(f"missing gain raster {p}; run 'radiomap generate' first")
        out[t.id] = import_raster(p)
    return out


def run_sensing(cfg, truth, time_index=0, seed_tag=()):
    """Sensors + measurements per the sensing block (placement, noise, quantization, filter)."""
    sc = cfg.sensing
    geom = cfg.scenario.geometry
    n = int(sc.get("n_sensors", 200))
    mode = sc.get("mode", "uniform_grid")
    sensors = sensing.place_sensors(geom, n, mode, cfg.seed, positions=sc.get("positions"))
    if not sensors:
        raise sensing.MeasurementError("no sensors placed")
    ms = sensing.synthesize_measurements(truth, sensors, float(sc.get("noise_sigma_db", 1.0)),
                                         seed=substream_seed(cfg.seed, *seed_tag), time_index=time_index)
    q = sc.get("quantization")
    if q:
        ms = sensing.quantize_measurements(ms, int(q["n_bits"]), float(q["db_min"]), float(q["db_max"]))
    f = sc.get("filter")
    if f:
        ms = sensing.filter_bad_data(ms, float(f.get("k_mad", 6.0)), int(f.get("neighbor_count", 8)),
                                     float(f.get("min_scale_db", sensing.MIN_SCALE_DB)))
    return ms


def substream_seed(seed, *names):
    if not names:
        return seed
    return int(substream(seed, *names).integers(0, 2 ** 63 - 1))


def _selected(cfg, methods):
    if not methods:
        return cfg.estimators
    wanted = [m.strip() for m in methods.split(",") if m.strip()]
    unknown = [m for m in wanted if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s) {unknown}")
    blocks = [e for e in cfg.estimators if e["method"] in wanted]
    have = {e["method"] for e in blocks}
    return blocks + [{"method": m} for m in wanted if m not in have]


def cmd_generate(cfg, args):
    s = cfg.scenario
    os.makedirs(cfg.out_dir, exist_ok=True)
    truth = scen.generate_ground_truth(s)
    export_band(truth, os.path.join(cfg.out_dir, "truth"))
    gdir = os.path.join(cfg.out_dir, "gain")
    os.makedirs(gdir, exist_ok=True)
    rows = []
    for t in s.transmitters:
        g = scen.channel_gain_map(s, t.id)
        export_raster(g, os.path.join(gdir, f"tx_{t.id}.rmk"))
        rows.append([t.id, t.position[0], t.position[1], t.tx_power, t.channel_index, t.reference_gain_db])
    _dump_yaml(scen.scenario_to_dict(s), os.path.join(cfg.out_dir, "scenario_resolved.yaml"))
    _write_tsv(os.path.join(cfg.out_dir, "transmitters.tsv"),
               ["tx_id", "x_m", "y_m", "tx_power_w", "channel", "reference_gain_db"], rows)
    _save(cfg, plotting.truth_figure(truth, s), "truth.png")
    log.info("generated %d-channel truth on %dx%d grid with %d transmitters, %d obstacles",
             truth.n_channels, s.geometry.n_rows, s.geometry.n_cols, len(s.transmitters), len(s.obstacles))


def _plain(v):
    """YAML-safe copy: numpy scalars and arrays become Python values."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if v is None or isinstance(v, (bool, int, float, str)):
        return v
    return repr(v)


def _fit_summary(fits):
    out = []
    for k, est in enumerate(fits):
        entry = {"channel": k, "method": est.method, "params": _plain(est.params)}
        if isinstance(est, OrdinaryKriging):
            entry["variogram"] = est.variogram.as_dict()
        if isinstance(est, ModelBased):
            entry["transmitters"] = [f.as_dict() for f in est.fits]
            entry["excluded_after_subtraction"] = int(est.clamped)
        out.append(entry)
    return out


def cmd_estimate(cfg, args):
    blocks = _selected(cfg, args.methods)
    truth = _load_truth(cfg)
    ms = run_sensing(cfg, truth)
    sensing.write_measurements_csv(ms, os.path.join(cfg.out_dir, "measurements.csv"))
    s = cfg.scenario
    estimates = {}
    for block in blocks:
        method = block["method"]
        block = dict(block)
        if method == "model_based":
            block.setdefault("n_tx", sum(1 for t in s.transmitters if t.channel_index == 0) or 1)
        try:
            band, fits = estimate_map(ms, block, geometry=s.geometry, channel_centers=s.channel_centers,
                                      channel_width=s.channel_width, return_fits=True)
        except (EstimationError, ConditioningError) as exc:
            raise type(exc)(f"{method}: {exc}") from None
        d = os.path.join(cfg.out_dir, "estimates", method)
        export_band(band, d)
        _dump_yaml({"method": method, "n_measurements": len(ms.select()),
                    "n_rejected": sum(m.rejected for m in ms.measurements), "fits": _fit_summary(fits)},
                   os.path.join(d, "fit.yaml"))
        estimates[method] = band
        log.info("%s: estimated %d channel(s)", method, band.n_channels)
    xy = np.array([x.position for x in ms.sensors])
    _save(cfg, plotting.comparison_figure(truth, estimates, xy), "estimates.png")


def _estimate_methods(cfg):
    d = os.path.join(cfg.out_dir, "estimates")
    if not os.path.isdir(d):
        raise DataError(f"missing estimate rasters in {d}; run 'radiomap estimate' first")
    return [m for m in METHODS if os.path.isdir(os.path.join(d, m))]


def cmd_evaluate(cfg, args):
    truth = _load_truth(cfg)
    s = cfg.scenario
    methods = _estimate_methods(cfg)
    if args.methods:
        methods = [m for m in methods if m in args.methods.split(",")]
    if not methods:
        raise DataError("no estimate rasters to evaluate")
    meas_path = os.path.join(cfg.out_dir, "measurements.csv")
    n_sensors = len(sensing.read_measurements_csv(meas_path, s.geometry).sensors) \
        if os.path.isfile(meas_path) else 0
    radius = float(cfg.analytics.get("exclusion_radius_cells", 0))
    tx_xy = [t.position for t in s.transmitters]
    rows, report, errors, estimates = [], {}, {}, {}
    for m in methods:
        try:
            est = import_band(os.path.join(cfg.out_dir, "estimates", m), s.channel_centers, s.channel_width)
        except FileNotFoundError as exc:
            raise DataError(f"{m}: missing raster {exc.filename}") from None
        r = analytics.compare_maps(est, truth, radius, tx_xy)
        export_band(r.errors, os.path.join(cfg.out_dir, "errors", m))
        rows.append([m, r.rmse_db, r.mae_db, r.max_abs_db, r.n_cells, n_sensors, cfg.seed])
        report[m] = r.as_dict()
        errors[m] = r.errors
        estimates[m] = est
    _write_tsv(os.path.join(cfg.out_dir, "evaluation.tsv"),
               ["method", "rmse_db", "mae_db", "max_abs_db", "n_cells", "n_sensors", "seed"], rows)
    _dump_yaml({"seed": cfg.seed, "n_sensors": n_sensors, "exclusion_radius_cells": radius,
                "methods": report}, os.path.join(cfg.out_dir, "evaluation.yaml"))
    _save(cfg, plotting.error_figure(errors), "errors.png")
    if not args.quiet:
        print("method\trmse_db\tmae_db\tmax_abs_db")
        for r in rows:
            print("\t".join(_fmt(v) for v in r[:4]))


def _storage_rows(cfg):
    entries = cfg.analytics.get("storage", [DEFAULT_STORAGE_ROW])
    rows = []
    for e in entries:
        e = {**DEFAULT_STORAGE_ROW, **e}
        bits = temporal.storage_size_bits(e["area_km2"], e["cell_m"], e["band_mhz"], e["chan_mhz"],
                                          e["duration_h"], e["step_min"], e["bits_per_px"])
        rows.append([e["area_km2"], e["cell_m"], e["band_mhz"], e["chan_mhz"], e["duration_h"],
                     e["step_min"], e["bits_per_px"], bits, f"{bits / 1e9:.2f}"])
    return rows


def _apps_dead_zones(cfg, truth, gains, powers, noise):
    dz = cfg.analytics.get("dead_zones") or {}
    thr = float(dz.get("sinr_threshold_db", 0.0))
    mask, comps, sinr = analytics.dead_zones(gains, truth[0], powers, noise, thr)
    export_raster(mask, os.path.join(cfg.out_dir, "apps", "dead_mask.rmk"))
    geom = mask.geometry
    rows = []
    for i, c in enumerate(comps):
        xs, ys = geom.cell_center(c[:, 0], c[:, 1])
        rows.append([i, len(c), float(xs.mean()), float(ys.mean())])
    _write_tsv(os.path.join(cfg.out_dir, "apps", "dead_zones.tsv"),
               ["component", "n_cells", "centroid_x_m", "centroid_y_m"], rows)
    _save(cfg, plotting.dead_zone_figure(sinr, mask, thr), "dead_zones.png")
    return thr, int(mask.values.sum())


def _apps_routes(cfg, truth, gains, powers, noise, thr):
    traces = {}
    for i, r in enumerate(cfg.analytics.get("routes") or []):
        route = analytics.Route(tuple(tuple(p) for p in r["waypoints"]), tuple(r["serving"]))
        sinr = analytics.sinr_along_route(route, gains, truth[0], powers, noise)
        rows = [[j, x, y, route.server_at(j), v, v < thr]
                for j, ((x, y), v) in enumerate(zip(route.waypoints, sinr))]
        _write_tsv(os.path.join(cfg.out_dir, "apps", f"route_{i}.tsv"),
                   ["waypoint", "x_m", "y_m", "server", "sinr_db", "below_threshold"], rows)
        traces[r.get("name", f"route_{i}")] = sinr
    if traces:
        _save(cfg, plotting.route_figure(traces, thr), "routes.png")


def _apps_anomaly(cfg, truth):
    """History from repeated noisy surveys, then a survey with an injected rogue."""
    an = cfg.analytics.get("anomaly")
    if not an:
        return
    s = cfg.scenario
    tcfg = cfg.temporal
    method = dict(tcfg.get("estimator") or {"method": "idw", "d_exp": 2.0})
    series = temporal.MapSeries(s.geometry, int(tcfg.get("window_length", 1)), s.channel_centers,
                                s.channel_width, int(tcfg.get("n_bits", 8)), int(tcfg.get("tile_size", 16)))
    n_hist = int(an.get("history_epochs", 10))
    thr = float(tcfg.get("change_threshold_db", 1.0))
    tile_rows = []
    for t in range(n_hist):
        ms = run_sensing(cfg, truth, time_index=t, seed_tag=("epoch", t))
        temporal.window_update(series, ms, method)
        upd, frac = temporal.incremental_update(series, series.archive[t], thr, epoch=t)
        tile_rows.append([t, len(upd), frac])

    rogue_cfg = an.get("rogue") or {}
    rogue = scen.Transmitter("rogue", tuple(rogue_cfg.get("position", s.geometry.cell_center(
        s.geometry.n_rows // 2, s.geometry.n_cols // 2))), float(rogue_cfg.get("tx_power", 1.0)),
        int(rogue_cfg.get("channel_index", 0)), float(rogue_cfg.get("reference_gain_db", -30.0)))
    xs, ys = s.geometry.mesh()
    rogue_lin = rogue.tx_power * from_db(scen.pathloss_gain_db(s.propagation, rogue, xs, ys,
                                                               s.geometry.cell_size / 2.0))
    lin = [g.values + (rogue_lin if k == rogue.channel_index else 0.0) for k, g in enumerate(truth)]
    attacked = BandGrid(tuple(Grid2D(s.geometry, v, LINEAR) for v in lin), s.channel_centers, s.channel_width)

    history = series.estimates()
    current_ms = run_sensing(cfg, attacked, time_index=n_hist, seed_tag=("epoch", n_hist))
    temporal.window_update(series, current_ms, method)
    current = series.archive[n_hist]
    upd, frac = temporal.incremental_update(series, current, thr, epoch=n_hist)
    tile_rows.append([n_hist, len(upd), frac])
    temporal.write_tile_store(list(series.tiles.values()), os.path.join(cfg.out_dir, "apps", "tiles"))
    _write_tsv(os.path.join(cfg.out_dir, "apps", "tile_updates.tsv"),
               ["epoch", "tiles_updated", "fraction_changed"], tile_rows)

    k_sigma = float(an.get("k_sigma", 5.0))
    rep = analytics.detect_anomaly(history, current, k_sigma)
    out = {"k_sigma": k_sigma, "history_epochs": n_hist, "estimator": method,
           "true_rogue_position": list(rogue.position), **rep.as_dict()}
    found = None
    try:
        found = analytics.locate_rogue(rep, current)
        out["rogue_estimate"] = {"position": list(found.position), "excess_power_w_m2": found.excess_power,
                                 "channel": found.channel, "cluster_cells": found.cluster_cells,
                                 "position_error_m": float(np.hypot(found.position[0] - rogue.position[0],
                                                                    found.position[1] - rogue.position[1]))}
    except analytics.AnalyticsError as exc:
        out["rogue_estimate"] = None
        out["note"] = str(exc)
    _dump_yaml(_plain(out), os.path.join(cfg.out_dir, "apps", "anomaly.yaml"))
    g = s.geometry
    export_raster(Grid2D(g, rep.flags[0].astype(float), DB), os.path.join(cfg.out_dir, "apps", "anomaly_mask.rmk"))
    _save(cfg, plotting.anomaly_figure(Grid2D(g, rep.z[0], DB), Grid2D(g, rep.flags[0].astype(float), DB),
                                       rep.clusters, found, rogue.position), "anomaly.png")


def cmd_apps(cfg, args):
    truth = _load_truth(cfg)
    gains = _load_gains(cfg)
    s = cfg.scenario
    os.makedirs(os.path.join(cfg.out_dir, "apps"), exist_ok=True)
    _write_tsv(os.path.join(cfg.out_dir, "apps", "storage.tsv"),
               ["area_km2", "cell_m", "band_mhz", "chan_mhz", "duration_h", "step_min", "bits_per_px",
                "bits", "gigabits"], _storage_rows(cfg))
    powers = {t.id: t.tx_power for t in s.transmitters}
    chan0 = {t.id: gains[t.id] for t in s.transmitters if t.channel_index == 0}
    noise = float((cfg.analytics.get("dead_zones") or {}).get("noise_dbw", s.propagation.noise_floor))
    thr, n_dead = _apps_dead_zones(cfg, truth, chan0, powers, noise)
    _apps_routes(cfg, truth, chan0, powers, noise, thr)
    _apps_anomaly(cfg, truth)
    log.info("apps: %d dead cells", n_dead)


COMMANDS = {"generate": cmd_generate, "estimate": cmd_estimate, "evaluate": cmd_evaluate, "apps": cmd_apps}


def build_parser():
    p = argparse.ArgumentParser(prog="radiomap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="run config (YAML)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="global seed (overrides the config)")
        sp.add_argument("--methods", help="comma-separated estimator subset")
        sp.add_argument("--quiet", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config, seed=args.seed, out_dir=args.out)
        os.makedirs(cfg.out_dir, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"radiomap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConditioningError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"radiomap: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, EstimationError, sensing.MeasurementError, RasterFormatError, GeometryMismatch,
            analytics.AnalyticsError, temporal.TemporalError) as exc:
        print(f"radiomap: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
