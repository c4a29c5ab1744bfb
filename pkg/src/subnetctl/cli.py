"""Command-line front end: train / eval / compare.

Configs are YAML key-value trees validated against a flat schema (unknown keys
are rejected, defaults fill the gaps); every run writes a manifest with the
resolved config, the master seed, the package version, and a SHA-256 of each
output file, so a re-run can be audited for bit-exact reproduction.  Timing
goes to a sidecar file that is deliberately not part of the manifest.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, motpe as motpe_mod, radio, scenario
from .linksim import RadioParams
from .plant import PlantModel
from .radio import ChannelParams

# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

_SCHEMA = {
    "scenario": {
        "n_subnetworks": int, "horizon": int, "episodes": int, "seed": int,
        "sigma_w": float, "x0_half_width": float,
        "control_period_ttis": int, "source_period_ttis": int,
        "packet_bits": float, "buffer_capacity": int,
        "eta_cap": float, "state_clip": float, "rebase_age_limit": int,
        "area": list, "subnetwork_radius": float,
    },
    "radio": {
        "bandwidth_hz": float, "p_max_w": float, "noise_figure_db": float,
        "temperature_k": float, "tti_s": float, "carrier_ghz": float,
    },
    "channel": {
        "clutter_density": float, "clutter_size_m": float, "corr_distance_m": float,
        "sigma_los_db": float, "sigma_nlos_db": float, "distance_floor_m": float,
        "include_shadowing": bool, "include_fading": bool,
    },
    "plant": {"A": list, "B": list, "Q": list, "R": list},
    "policy": {
        "name": str, "k": float, "eta0": float, "rr_slots": int,
        "rr_randomize": bool, "fixed_p": float, "params_file": str,
    },
    "training": {
        "trials": int, "startup": int, "candidates": int, "theta": float,
        "train_episodes": int, "validation_episodes": int,
    },
    "compare": {"densities": list, "policies": list},
}


class ConfigError(Exception):
    pass


def load_config(path: str | None) -> dict:
    """Parse + validate a YAML config; returns {section: {key: value}}."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"config parse error in {path}: {e}")
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    out = {}
    for section, body in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section '{section}' "
                              f"(known: {', '.join(_SCHEMA)})")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: section '{section}' must be a mapping")
        out[section] = {}
        for key, value in body.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key '{section}.{key}' "
                                  f"(known: {', '.join(_SCHEMA[section])})")
            want = _SCHEMA[section][key]
            try:
                if want is bool:
                    if not isinstance(value, bool):
                        raise ValueError("expected true/false")
                    coerced = value
                elif want is list:
                    if not isinstance(value, list):
                        raise ValueError("expected a list")
                    coerced = value
                else:
                    coerced = want(value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{path}: bad value for '{section}.{key}': {e}")
            out[section][key] = coerced
    return out


def build_scenario_config(doc: dict, seed=None, episodes=None,
                          horizon=None, density=None) -> scenario.ScenarioConfig:
    radio_params = RadioParams(**doc.get("radio", {}))
    chan_kwargs = dict(doc.get("channel", {}))
    chan = ChannelParams(carrier_ghz=radio_params.carrier_ghz, **chan_kwargs)
    sc = dict(doc.get("scenario", {}))
    if "area" in sc:
        sc["area"] = tuple(float(v) for v in sc["area"])
    plant_model = None
    if "plant" in doc and doc["plant"]:
        p = doc["plant"]
        missing = [k for k in ("A", "B", "Q", "R") if k not in p]
        if missing:
            raise ConfigError(f"plant section missing field(s): {', '.join(missing)}")
        sigma = sc.get("sigma_w", scenario.ScenarioConfig.sigma_w)
        qdim = len(p["A"])
        plant_model = PlantModel(A=p["A"], B=p["B"], Q=p["Q"], R=p["R"],
                                 noise_cov=(float(sigma) ** 2) * np.eye(qdim))
    cfg = scenario.ScenarioConfig(radio=radio_params, channel=chan,
                                  plant_model=plant_model, **sc)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if episodes is not None:
        cfg = dataclasses.replace(cfg, episodes=episodes)
    if horizon is not None:
        cfg = dataclasses.replace(cfg, horizon=horizon)
    if density is not None:
        cfg = dataclasses.replace(cfg, n_subnetworks=density)
    return cfg


_POLICY_ALIASES = {"rr5": ("rr", 5), "rr10": ("rr", 10)}


def build_policy_spec(name: str, doc: dict, params_file: str | None) -> scenario.PolicySpec:
    pol = dict(doc.get("policy", {}))
    rr_slots = pol.get("rr_slots")
    if name in _POLICY_ALIASES:
        name, rr_slots = _POLICY_ALIASES[name]
    k, eta0 = pol.get("k"), pol.get("eta0")
    params_file = params_file or pol.get("params_file")
    if name == "cica" and params_file:
        try:
            with open(params_file) as fh:
                loaded = yaml.safe_load(fh)
            k, eta0 = float(loaded["k"]), float(loaded["eta0"])
        except FileNotFoundError:
            raise ConfigError(f"trained-params file not found: {params_file}")
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad trained-params file {params_file}: {e}")
    if name == "cica" and (k is None or eta0 is None):
        raise ConfigError("cica policy needs trained parameters: pass --params FILE "
                          "(from `subnetctl train`) or set policy.k / policy.eta0")
    try:
        return scenario.PolicySpec(name=name, cica_k=k, cica_eta0=eta0,
                                   rr_slots=rr_slots,
                                   rr_randomize=bool(pol.get("rr_randomize", False)),
                                   fixed_p=pol.get("fixed_p"))
    except ValueError as e:
        raise ConfigError(str(e))


# ---------------------------------------------------------------------------
# output plumbing
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _config_snapshot(cfg: scenario.ScenarioConfig) -> dict:
    def clean(obj):
        if dataclasses.is_dataclass(obj):
            return {k: clean(v) for k, v in dataclasses.asdict(obj).items()}
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.floating, np.integer)):
            return obj.item()
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        return obj
    return clean(cfg)


def write_manifest(out_dir: Path, command: str, cfg_snapshot, extra: dict,
                   outputs: list, timings: dict) -> None:
    manifest = {
        "tool": "subnetctl",
        "version": __version__,
        "command": command,
        "master_seed": cfg_snapshot.get("seed") if isinstance(cfg_snapshot, dict) else None,
        "config": cfg_snapshot,
        **extra,
        "outputs": {name: _sha256(out_dir / name) for name in sorted(outputs)},
    }
    with open(out_dir / "manifest.yaml", "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)
    # wall-clock sidecar, intentionally outside the manifest's output hashes
    with open(out_dir / "timings.txt", "w") as fh:
        for phase, secs in timings.items():
            fh.write(f"{phase}\t{secs:.3f}\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_summary_files(out_dir: Path, label: str, results, summary) -> list:
    files = []
    name = f"summary_{label}.csv"
    _write_csv(out_dir / name,
               ["policy", "episodes", "p99_mean_lqr", "mean_of_means", "max_of_means",
                "failure_rate", "fr_x", "fr_theta", "diverged_fraction"],
               [[label, summary.n_episodes, summary.p99_mean_lqr, summary.mean_of_means,
                 summary.max_of_means, summary.failure_rate, summary.fr_x,
                 summary.fr_theta, summary.diverged_fraction]])
    files.append(name)
    name = f"mean_lqr_{label}.csv"
    _write_csv(out_dir / name, ["episode", "plant", "mean_lqr"],
               [[e, p, float(r.mean_lqr[p])]
                for e, r in enumerate(results) for p in range(r.n_plants)])
    files.append(name)
    for var, curve, th in (("x", summary.ccdf_x, scenario.X_THRESHOLD),
                           ("theta", summary.ccdf_theta, scenario.THETA_THRESHOLD)):
        name = f"ccdf_{var}_{label}.csv"
        _write_csv(out_dir / name, ["edge", "ccdf", "threshold"],
                   [[float(e), float(c), th]
                    for e, c in zip(summary.ccdf_edges, curve)])
        files.append(name)
    name = f"delay_hist_{label}.csv"
    pooled = np.sum([r.delay_hist for r in results], axis=0)
    _write_csv(out_dir / name, ["age_ttis", "deliveries"],
               [[i, int(c)] for i, c in enumerate(pooled) if c])
    files.append(name)
    return files


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    doc = load_config(args.config)
    cfg = build_scenario_config(doc, seed=args.seed, episodes=args.episodes,
                                horizon=args.horizon)
    tr = doc.get("training", {})
    train_eps = args.episodes if args.episodes is not None else tr.get("train_episodes", 20)
    motpe_cfg = scenario.MotpeConfig(
        trials=args.trials if args.trials is not None else tr.get("trials", 200),
        startup=args.startup if args.startup is not None else tr.get("startup", 10),
        candidates=tr.get("candidates", 24),
        theta=tr.get("theta", 0.5),
        train_episodes=train_eps,
        validation_episodes=tr.get("validation_episodes", train_eps),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    def progress(obs):
        print(f"trial {obs.trial:4d}: k={obs.k:.4f} eta0={obs.eta0:8.3f} "
              f"f1={obs.f[0]:.6g} f2={obs.f[1]:.6g}", flush=True)

    k_star, eta0_star, front, history = scenario.train_cica(
        cfg, motpe_cfg, jobs=args.jobs, on_trial=progress if args.verbose else None)
    t_train = time.perf_counter() - t0

    cols = ["trial", "k", "eta0", "f1", "f2"]
    as_rows = lambda obs: [[o.trial, o.k, o.eta0, o.f[0], o.f[1]] for o in obs]
    _write_csv(out_dir / "trial_history.csv", cols, as_rows(history))
    _write_csv(out_dir / "pareto_front.csv", cols, as_rows(front))
    with open(out_dir / "selected_params.yaml", "w") as fh:
        yaml.safe_dump({"k": float(k_star), "eta0": float(eta0_star)}, fh)
    outputs = ["trial_history.csv", "pareto_front.csv", "selected_params.yaml"]
    write_manifest(out_dir, "train", _config_snapshot(cfg),
                   {"motpe": dataclasses.asdict(motpe_cfg) | {"space": None}},
                   outputs, {"train": t_train})
    print(f"selected k={k_star:.6g} eta0={eta0_star:.6g} "
          f"({len(front)} front members, {len(history)} trials) -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    doc = load_config(args.config)
    cfg = build_scenario_config(doc, seed=args.seed, episodes=args.episodes,
                                horizon=args.horizon, density=args.density)
    spec = build_policy_spec(args.policy, doc, args.params)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    results = scenario.run_episodes(cfg, spec, jobs=args.jobs)
    summary = scenario.summarize(results)
    t_run = time.perf_counter() - t0
    outputs = _write_summary_files(out_dir, spec.label, results, summary)
    write_manifest(out_dir, "eval", _config_snapshot(cfg),
                   {"policy": spec.label}, outputs, {"eval": t_run})
    print(f"{spec.label} N={cfg.n_subnetworks} episodes={summary.n_episodes}: "
          f"p99={summary.p99_mean_lqr:.6g} FR={summary.failure_rate:.4g}")
    return 0


def cmd_compare(args) -> int:
    doc = load_config(args.config)
    cfg = build_scenario_config(doc, seed=args.seed, episodes=args.episodes,
                                horizon=args.horizon)
    comp = doc.get("compare", {})
    densities = [int(d) for d in comp.get("densities", [25, 30, 35])]
    policy_names = comp.get("policies",
                            ["nointerf", "rr10", "rr5", "fixed", "mpr", "cica"])
    specs = [build_policy_spec(name, doc, args.params) for name in policy_names]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def on_cell(row):
        if row.get("error"):
            print(f"{row['policy']:10s} N={row['density']}: FAILED: {row['error']}",
                  flush=True)
        else:
            print(f"{row['policy']:10s} N={row['density']}: p99={row['p99_mean_lqr']:.6g} "
                  f"FR={row['failure_rate']:.4g} [{row['_seconds']:.0f}s]", flush=True)

    t0 = time.perf_counter()
    rows = scenario.compare(cfg, specs, densities, jobs=args.jobs, on_cell=on_cell)
    t_all = time.perf_counter() - t0

    table_cols = ["policy", "density", "p99_mean_lqr", "mean_of_means", "max_of_means",
                  "failure_rate", "fr_x", "fr_theta", "diverged_fraction",
                  "episodes", "error"]
    _write_csv(out_dir / "table.csv", table_cols,
               [[row.get(c, "") for c in table_cols] for row in rows])
    curve_rows = []
    for row in rows:
        summary = row.get("_summary")
        if summary is None:
            continue
        for var, curve, th in (("x", summary.ccdf_x, scenario.X_THRESHOLD),
                               ("theta", summary.ccdf_theta, scenario.THETA_THRESHOLD)):
            curve_rows.extend([[row["policy"], row["density"], var, float(e),
                                float(c), th]
                               for e, c in zip(summary.ccdf_edges, curve)])
    _write_csv(out_dir / "ccdf_curves.csv",
               ["policy", "density", "variable", "edge", "ccdf", "threshold"],
               curve_rows)
    outputs = ["table.csv", "ccdf_curves.csv"]
    write_manifest(out_dir, "compare", _config_snapshot(cfg),
                   {"densities": densities, "policies": [s.label for s in specs]},
                   outputs, {"compare": t_all})
    print(f"wrote {len(rows)} cells -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subnetctl",
                                 description="In-factory subnetwork control co-simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="parallel episode workers")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--episodes", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None)

    p_train = sub.add_parser("train", help="search (k, eta0) with the multi-objective TPE")
    common(p_train)
    p_train.add_argument("--trials", type=int, default=None,
                         help="guided trials after startup")
    p_train.add_argument("--startup", type=int, default=None,
                         help="uniform-random startup trials")
    p_train.add_argument("--verbose", action="store_true", help="per-trial progress")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate one policy at one density")
    common(p_eval)
    p_eval.add_argument("--policy", required=True,
                        choices=["cica", "fixed", "mpr", "rr5", "rr10", "rr", "nointerf"])
    p_eval.add_argument("--density", type=int, default=None, help="number of subnetworks")
    p_eval.add_argument("--params", default=None,
                        help="trained-params YAML from `subnetctl train`")
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="policy x density benchmark table")
    common(p_cmp)
    p_cmp.add_argument("--params", default=None,
                       help="trained-params YAML from `subnetctl train`")
    p_cmp.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
