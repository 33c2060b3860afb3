"""Command-line pipeline: synth, fit, baseline, compare, refit.

Configuration is one JSON file; command-line flags override it.  Every
command is deterministic given its config and seed, and emits no timestamps.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import baselines, svgplot
from .data import (RainfallDataset, SyntheticSpec, compute_spatial_weights,
                   discretize_by_mean, generate_synthetic, load_dataset,
                   save_dataset, write_ground_truth)
from .errors import NumericError, ValidationError
from .inference import SamplerConfig, refit_frozen, run_gibbs
from .metrics import (MetricsReport, build_report, distance_report,
                      read_metrics_csv, spatial_coherence)
from .model import (HIGH, LOW, LatentState, ModelParams, PatternSet,
                    extract_patterns, patterns_to_rows)

EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

DEFAULT_CONFIG = {
    "paths": {"locations": "locations.csv", "rainfall": "rainfall.csv",
              "out": "out"},
    "model": {"gamma": 1.0, "lambda": 1.0, "f": 2.0, "eta": 9.0, "zeta": 3.0,
              "sigma": None},
    "sampler": {"burnin": 200, "samples": 300, "seed": 0,
                "schedule": "checkerboard", "init": "data"},
    "baseline": {"k": 10, "tau": None, "lasso_reg": 1.0},
    "metrics": {"min_years": 5},
    "synth": {"S": 64, "T": 400, "K": 4, "L": 6, "wet_shape": 8.0,
              "wet_rate": 0.5, "dry_shape": 0.5, "dry_rate": 2.0,
              "noise": 0.1, "seed": 0, "years": 8},
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None, seed: int | None, out: str | None) -> dict:
    cfg = DEFAULT_CONFIG
    if path is not None:
        with open(path) as fh:
            try:
                cfg = _merge(cfg, json.load(fh))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if seed is not None:
        cfg = _merge(cfg, {"sampler": {"seed": seed}, "synth": {"seed": seed}})
    if out is not None:
        cfg = _merge(cfg, {"paths": {"out": out}})
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _fmt_cell(v):
    return repr(float(v)) if isinstance(v, float) else v


def _model_params(cfg: dict, data: RainfallDataset) -> ModelParams:
    m = cfg["model"]
    sigma = m.get("sigma")
    if sigma is None:
        sigma = float(data.aggregate.std())
        if sigma <= 0:
            sigma = 1.0
    return ModelParams(day_concentration=float(m["gamma"]),
                       loc_concentration=float(m["lambda"]),
                       temporal_factor=float(m["f"]),
                       day_align=float(m["eta"]),
                       loc_align=float(m["zeta"]),
                       aggregate_sd=float(sigma))


def _sampler_config(cfg: dict) -> SamplerConfig:
    s = cfg["sampler"]
    return SamplerConfig(n_burnin=int(s["burnin"]), n_samples=int(s["samples"]),
                         seed=int(s["seed"]), schedule=s["schedule"],
                         init=s["init"])


def _dump_config(cfg: dict, out: Path, extra: dict | None = None) -> None:
    resolved = dict(cfg)
    if extra:
        resolved = _merge(resolved, extra)
    with open(out / "config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_patterns(out: Path, patterns: PatternSet) -> None:
    spatial, temporal, summary = patterns_to_rows(patterns)
    _write_csv(out / "patterns_spatial.csv",
               ["cluster_id", "loc_id", "crp_value", "cdp_state"],
               ([u, s, repr(v), z] for u, s, v, z in spatial))
    _write_csv(out / "patterns_temporal.csv",
               ["cluster_id", "day_index", "cts_value", "cds_state"],
               ([v, t, repr(x), z] for v, t, x, z in temporal))
    _write_csv(out / "cluster_summary.csv",
               ["cluster_id", "n_days", "n_years", "aggregate_mm"],
               ([u, n, y, repr(a)] for u, n, y, a in summary))


def _write_assignments(out: Path, states, day_labels, loc_labels) -> None:
    _write_csv(out / "assign_u.csv", ["day_index", "u_mode"],
               ([t, int(u)] for t, u in enumerate(day_labels)))
    _write_csv(out / "assign_v.csv", ["loc_id", "v_mode"],
               ([s, int(v)] for s, v in enumerate(loc_labels)))
    S, T = states.shape
    _write_csv(out / "assign_z.csv", ["loc_id", "day_index", "z_mode"],
               ([s, t, int(states[s, t])] for s in range(S) for t in range(T)))


def _write_params(out: Path, params: ModelParams) -> None:
    doc = {
        "gamma": params.day_concentration,
        "lambda": params.loc_concentration,
        "f": params.temporal_factor,
        "eta": params.day_align,
        "zeta": params.loc_align,
        "sigma": params.aggregate_sd,
        "gamma_shape": params.gamma_shape.tolist(),
        "gamma_rate": params.gamma_rate.tolist(),
        "aggregate_mean": params.aggregate_mean.tolist(),
    }
    with open(out / "params.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_params(path) -> tuple[ModelParams, np.ndarray]:
    with open(path) as fh:
        doc = json.load(fh)
    params = ModelParams(day_concentration=doc["gamma"],
                         loc_concentration=doc["lambda"],
                         temporal_factor=doc["f"],
                         day_align=doc["eta"],
                         loc_align=doc["zeta"],
                         aggregate_sd=doc["sigma"],
                         gamma_shape=np.array(doc["gamma_shape"]),
                         gamma_rate=np.array(doc["gamma_rate"]),
                         aggregate_mean=np.array(doc["aggregate_mean"]))
    return params, np.array(doc["aggregate_mean"])


def _load_patterns(run_dir: Path) -> PatternSet:
    spatial: dict[int, dict[int, tuple[float, int]]] = {}
    with open(run_dir / "patterns_spatial.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for u, s, v, z in reader:
            spatial.setdefault(int(u), {})[int(s)] = (float(v), int(z))
    temporal: dict[int, dict[int, tuple[float, int]]] = {}
    with open(run_dir / "patterns_temporal.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for v, t, x, z in reader:
            temporal.setdefault(int(v), {})[int(t)] = (float(x), int(z))
    summary = {}
    with open(run_dir / "cluster_summary.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for u, n, y, a in reader:
            summary[int(u)] = (int(n), int(y), float(a))
    K = len(spatial)
    S = len(spatial[1])
    L = len(temporal)
    T = len(temporal[1])
    crp = np.array([[spatial[u][s][0] for s in range(S)]
                    for u in range(1, K + 1)])
    cdp = np.array([[spatial[u][s][1] for s in range(S)]
                    for u in range(1, K + 1)], dtype=np.int8)
    cts = np.array([[temporal[v][t][0] for t in range(T)]
                    for v in range(1, L + 1)])
    cds = np.array([[temporal[v][t][1] for t in range(T)]
                    for v in range(1, L + 1)], dtype=np.int8)
    return PatternSet(
        rain_patterns=crp, state_patterns=cdp, rain_series=cts,
        state_series=cds,
        day_counts=np.array([summary[u][0] for u in range(1, K + 1)]),
        year_counts=np.array([summary[u][1] for u in range(1, K + 1)]),
        loc_counts=np.zeros(L, dtype=np.int64),
        pattern_volume=np.array([summary[u][2] for u in range(1, K + 1)]))


def _write_report(out: Path, report: MetricsReport) -> None:
    report.write_csv(out / "metrics.csv")
    with open(out / "metrics.txt", "w") as fh:
        fh.write(report.format_table())


def cmd_synth(cfg: dict) -> int:
    sy = cfg["synth"]
    spec = SyntheticSpec(n_locations=int(sy["S"]), n_days=int(sy["T"]),
                         n_day_patterns=int(sy["K"]), n_loc_groups=int(sy["L"]),
                         wet_shape=float(sy["wet_shape"]),
                         wet_rate=float(sy["wet_rate"]),
                         dry_shape=float(sy["dry_shape"]),
                         dry_rate=float(sy["dry_rate"]),
                         flip_noise=float(sy["noise"]), seed=int(sy["seed"]),
                         n_years=int(sy["years"]))
    data, truth = generate_synthetic(spec)
    out = _out_dir(cfg)
    save_dataset(data, out / "locations.csv", out / "rainfall.csv")
    write_ground_truth(truth, out / "truth_u.csv", out / "truth_v.csv",
                       out / "truth_z.csv")
    _dump_config(cfg, out, {"method": "synth"})
    print(f"wrote synthetic dataset ({spec.n_locations} locations, "
          f"{spec.n_days} days) to {out}")
    return 0


def cmd_fit(cfg: dict) -> int:
    data = load_dataset(cfg["paths"]["locations"], cfg["paths"]["rainfall"])
    weights = compute_spatial_weights(data)
    params = _model_params(cfg, data)
    sampler = _sampler_config(cfg)
    summary, patterns, fitted = run_gibbs(data, weights, params, sampler)

    out = _out_dir(cfg)
    _write_assignments(out, summary.z_mode, summary.u_mode, summary.v_mode)
    _write_patterns(out, patterns)
    _write_params(out, fitted)
    _write_csv(out / "trace.csv", ["sweep", "logp"],
               ([i, repr(float(v))] for i, v in
                enumerate(summary.log_density_trace)))
    report = build_report(data, summary.z_mode, summary.u_mode, patterns,
                          method="mrf",
                          min_years=int(cfg["metrics"]["min_years"]))
    _write_report(out, report)
    _dump_config(cfg, out, {"method": "mrf",
                            "model": {"sigma": params.aggregate_sd}})
    print(f"fit: {patterns.n_day_patterns} day clusters, "
          f"{int(report.global_values['n_prominent'])} prominent; "
          f"outputs in {out}")
    return 0


def _baseline_clustering(cfg: dict, data: RainfallDataset, method: str):
    k = int(cfg["baseline"]["k"])
    if k > data.n_days:
        raise ValidationError(f"k={k} exceeds the number of days {data.n_days}")
    seed = int(cfg["sampler"]["seed"])
    drvs = data.rain.T  # (T, S)
    if method == "kmeans":
        result = baselines.kmeans(drvs, k, seed=seed)
    elif method == "spect1":
        tau = cfg["baseline"]["tau"]
        sim = baselines.similarity_euclidean(
            drvs, None if tau is None else float(tau))
        result = baselines.spectral_cluster(sim, k, seed=seed)
    elif method == "spect2":
        sim = baselines.similarity_hamming(discretize_by_mean(data).T)
        result = baselines.spectral_cluster(sim, k, seed=seed)
    else:
        raise ValidationError(f"unknown baseline method {method!r}")
    if result.centers is None:
        result.centers = baselines.cluster_means(drvs, result.labels)
    result.state_patterns = baselines.derive_state_patterns(
        result.centers, data.rain.mean(axis=1))
    return result


def baseline_patterns(data: RainfallDataset,
                      result: baselines.ClusteringResult) -> PatternSet:
    """Package a day clustering as a pattern set (all locations one series)."""
    state = LatentState(states=discretize_by_mean(data),
                        day_labels=np.asarray(result.labels, dtype=np.int64),
                        loc_labels=np.ones(data.n_locations, dtype=np.int64))
    patterns = extract_patterns(data, state)
    # baseline patterns come from the method's own centers, not the state mode
    return PatternSet(rain_patterns=result.centers,
                      state_patterns=result.state_patterns,
                      rain_series=patterns.rain_series,
                      state_series=patterns.state_series,
                      day_counts=patterns.day_counts,
                      year_counts=patterns.year_counts,
                      loc_counts=patterns.loc_counts,
                      pattern_volume=result.centers.sum(axis=1))


def cmd_baseline(cfg: dict, method: str) -> int:
    data = load_dataset(cfg["paths"]["locations"], cfg["paths"]["rainfall"])
    out = _out_dir(cfg)
    if method == "eof":
        return _cmd_baseline_eof(cfg, data, out)
    result = _baseline_clustering(cfg, data, method)
    patterns = baseline_patterns(data, result)
    _write_csv(out / "assign_u.csv", ["day_index", "u_mode"],
               ([t, int(u)] for t, u in enumerate(result.labels)))
    _write_patterns(out, patterns)
    report = build_report(data, discretize_by_mean(data), result.labels,
                          patterns, method=method,
                          min_years=int(cfg["metrics"]["min_years"]))
    _write_report(out, report)
    _dump_config(cfg, out, {"method": method})
    print(f"{method}: {patterns.n_day_patterns} clusters, "
          f"{int(report.global_values['n_prominent'])} prominent; "
          f"outputs in {out}")
    return 0


def _cmd_baseline_eof(cfg: dict, data: RainfallDataset, out: Path) -> int:
    basis = baselines.eof_decompose(data.rain)
    k = int(cfg["baseline"]["k"])
    reg = float(cfg["baseline"]["lasso_reg"])
    S = data.n_locations
    _write_csv(out / "eof_eigenvalues.csv", ["mode_id", "eigenvalue"],
               ([j, repr(float(basis.eigenvalues[j]))] for j in range(S)))
    _write_csv(out / "eof_vectors.csv", ["mode_id", "loc_id", "value"],
               ([j, s, repr(float(basis.vectors[s, j]))]
                for j in range(S) for s in range(S)))
    _write_csv(out / "eof_mean.csv", ["loc_id", "mean_mm"],
               ([s, repr(float(basis.mean[s]))] for s in range(S)))

    coefs = np.empty((data.n_days, S))
    resid = np.empty(data.n_days)
    for t in range(data.n_days):
        c = baselines.lasso_fit(data.rain[:, t], basis, reg)
        coefs[t] = c
        resid[t] = float(np.linalg.norm(
            data.rain[:, t] - basis.mean - basis.vectors @ c))
    _write_csv(out / "lasso_coefs.csv", ["day_index", "mode_id", "coef"],
               ([t, j, repr(float(coefs[t, j]))]
                for t in range(data.n_days) for j in range(S)
                if coefs[t, j] != 0.0))

    # leading modes, binarised by sign, stand in as the method's patterns
    lead = basis.vectors[:, :k].T
    cdp = np.where(lead > 0, HIGH, LOW).astype(np.int8)
    pat = PatternSet(rain_patterns=lead, state_patterns=cdp,
                     rain_series=np.zeros((1, data.n_days)),
                     state_series=np.full((1, data.n_days), LOW, dtype=np.int8),
                     day_counts=np.zeros(k, dtype=np.int64),
                     year_counts=np.zeros(k, dtype=np.int64),
                     loc_counts=np.array([S]),
                     pattern_volume=lead.sum(axis=1))
    spch_state, spch_rain = spatial_coherence(pat, data.neighborhoods)
    explained = (float(basis.eigenvalues[:k].sum() / basis.eigenvalues.sum())
                 if basis.eigenvalues.sum() > 0 else 1.0)
    report = MetricsReport(method="eof", n_clusters=k)
    report.global_values = {
        "n_clusters": float(k),
        "mean_l2": float(resid.mean()),
        "mean_sparsity": float((coefs != 0).sum(axis=1).mean()),
        "variance_explained": explained,
        "spch_cdp": spch_state,
        "spch_crp": spch_rain,
    }
    _write_report(out, report)
    _dump_config(cfg, out, {"method": "eof"})
    print(f"eof: {k} leading modes, variance explained {explained:.3f}; "
          f"outputs in {out}")
    return 0


def cmd_compare(cfg: dict, run_dirs: list[str]) -> int:
    out = _out_dir(cfg)
    methods = []
    reports = []
    patterns = []
    for rd in run_dirs:
        rdp = Path(rd)
        try:
            with open(rdp / "config.json") as fh:
                method = json.load(fh).get("method", rdp.name)
        except FileNotFoundError:
            method = rdp.name
        g, per = read_metrics_csv(rdp / "metrics.csv")
        methods.append(method)
        reports.append((g, per))
        if (rdp / "patterns_spatial.csv").exists():
            patterns.append(_load_patterns(rdp))
        else:
            patterns.append(None)

    metric_names = sorted({name for g, _ in reports for name in g})
    rows = []
    for name in metric_names:
        row = [name]
        for g, _ in reports:
            row.append(repr(g[name]) if name in g else "")
        rows.append(row)
    _write_csv(out / "comparison.csv", ["metric"] + methods, rows)
    with open(out / "comparison.txt", "w") as fh:
        widths = [max(len(r[0]) for r in rows)] + [18] * len(methods)
        fh.write("  ".join(["metric".ljust(widths[0])]
                           + [m.rjust(18) for m in methods]) + "\n")
        for row in rows:
            cells = [row[0].ljust(widths[0])]
            for v in row[1:]:
                cells.append((f"{float(v):.6g}" if v else "-").rjust(18))
            fh.write("  ".join(cells) + "\n")

    # charts over per-cluster quantities, one series per method
    for metric, fname, title in [
            ("mean_y", "mean_y_per_cluster.svg", "mean daily total per cluster"),
            ("wet_fraction", "wet_fraction.svg", "wet fraction per pattern"),
            ("spells_per_year", "spells_per_year.svg", "spells per year"),
            ("mean_spell_length", "mean_spell_length.svg", "mean spell length")]:
        series = []
        n_max = 0
        for method, (_, per) in zip(methods, reports):
            if metric in per:
                vals = [per[metric][u] for u in sorted(per[metric])]
                series.append((method, np.array(vals)))
                n_max = max(n_max, len(vals))
        if series:
            svgplot.grouped_bar_chart(out / fname, title,
                                      [str(u + 1) for u in range(n_max)],
                                      series)

    locations = cfg["paths"].get("locations")
    if locations and os.path.exists(locations):
        coords = _load_coords(locations)
        for method, pat in zip(methods, patterns):
            if pat is None:
                continue
            ann = [f"{v:.1f} mm/day" for v in pat.pattern_volume]
            svgplot.pattern_grid(out / f"cdp_{method}.svg",
                                 f"state patterns: {method}", coords,
                                 pat.state_patterns, "state", ann)
            svgplot.pattern_grid(out / f"crp_{method}.svg",
                                 f"rain patterns: {method}", coords,
                                 pat.rain_patterns, "rain", ann)
    print(f"compared {len(methods)} runs into {out}")
    return 0


def _load_coords(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = sorted((int(r[0]), int(r[1]), int(r[2])) for r in reader)
    return np.array([[gx, gy] for _, gx, gy in rows])


def cmd_refit(cfg: dict, frozen_dir: str) -> int:
    frozen = Path(frozen_dir)
    patterns = _load_patterns(frozen)
    params, _ = _load_params(frozen / "params.json")
    data = load_dataset(cfg["paths"]["locations"], cfg["paths"]["rainfall"])
    weights = compute_spatial_weights(data)
    sampler = _sampler_config(cfg)
    summary = refit_frozen(data, weights, patterns, params, sampler)

    out = _out_dir(cfg)
    _write_assignments(out, summary.z_mode, summary.u_mode, summary.v_mode)
    dist = distance_report(data.rain, summary.z_mode, summary.u_mode, patterns)
    overflow = int((summary.u_mode > patterns.n_day_patterns).sum())
    report = MetricsReport(method="refit", n_clusters=patterns.n_day_patterns)
    report.global_values = {
        "n_clusters": float(patterns.n_day_patterns),
        "mean_l2": dist.mean_l2,
        "mean_hamming": dist.mean_hamming,
        "mean_agg": dist.mean_agg,
        "n_days_scored": float(dist.n_days_scored),
        "n_overflow_days": float(overflow),
    }
    _write_report(out, report)
    _dump_config(cfg, out, {"method": "refit", "frozen_run": str(frozen)})
    print(f"refit: {dist.n_days_scored} days scored against "
          f"{patterns.n_day_patterns} frozen patterns, {overflow} overflow; "
          f"outputs in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--threads", type=int, default=0,
                        help="worker hint for array libraries (0 = auto)")

    parser = argparse.ArgumentParser(
        prog="rainpatterns",
        description="Discover canonical spatio-temporal rainfall patterns.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common],
                   help="generate a synthetic dataset with planted patterns")
    sub.add_parser("fit", parents=[common],
                   help="fit the coupled state/cluster model")
    p = sub.add_parser("baseline", parents=[common],
                       help="run a reference method")
    p.add_argument("--method", required=True,
                   choices=["kmeans", "spect1", "spect2", "eof"])
    p = sub.add_parser("compare", parents=[common],
                       help="join run metrics into one table plus charts")
    p.add_argument("runs", nargs="+", help="run directories to compare")
    p = sub.add_parser("refit", parents=[common],
                       help="re-infer new data against frozen patterns")
    p.add_argument("--frozen", required=True,
                   help="run directory holding the frozen patterns")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
        try:
            import threadpoolctl
            threadpoolctl.threadpool_limits(args.threads)
        except ImportError:
            pass
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "baseline":
            return cmd_baseline(cfg, args.method)
        if args.command == "compare":
            return cmd_compare(cfg, args.runs)
        if args.command == "refit":
            return cmd_refit(cfg, args.frozen)
        raise ValidationError(f"unknown command {args.command!r}")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
