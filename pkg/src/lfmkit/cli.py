"""Command-line driver.

    lfm-kit <subcommand> --config <path> [--out <dir>] [--seed <u64>]
            [--reps <n>] [--threads <n>]

Subcommands ``tf``, ``ballistic`` and ``orbit`` run the full experiments;
``simulate``, ``filter``, ``smooth``, ``fit`` and ``mcmc`` are composable
pipeline stages over the same CSV/JSON formats.  Exit codes: 0 success,
1 divergence, 2 configuration error.  The LFM_KIT_OUT environment variable
sets the default output directory.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import cdgauss, experiments
from .cdgauss import DivergenceError
from .models import tf as tf_model
from .ssm import augment, initial_state
from .gp_sde import MaternSpec, matern_to_sde

__all__ = ["ConfigError", "main"]


class ConfigError(Exception):
    pass


_EXPERIMENT_KINDS = ("tf", "ballistic", "orbit", "custom")
_CONFIG_CLASSES = {
    "tf": experiments.TfConfig,
    "ballistic": experiments.BallisticConfig,
    "orbit": experiments.OrbitConfig,
    "custom": experiments.CustomConfig,
}


def _parse_tf_rows(text: str):
    rows = []
    for tok in text.replace(",", " ").split():
        if ":" in tok:
            link, gamma = tok.split(":", 1)
            rows.append((link.strip(), float(gamma)))
        else:
            rows.append((tok.strip(), 1.0))
    if not rows:
        raise ConfigError("tf rows must list at least one link[:gamma] entry")
    for link, _ in rows:
        if link not in tf_model.LINKS:
            raise ConfigError(f"unknown tf link {link!r}")
    return tuple(rows)


def _coerce(kind: str, name: str, ftype, raw: str):
    try:
        if name == "rows":
            return _parse_tf_rows(raw)
        if name == "harmonics":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if ftype is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{kind}] {name}: {exc}") from exc


def load_config(path: Path):
    """Parse the INI experiment config into (kind, config dataclass, files)."""
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if "experiment" not in parser or "kind" not in parser["experiment"]:
        raise ConfigError(f"{path}: missing [experiment] kind = ...")
    kind = parser["experiment"]["kind"].strip()
    if kind not in _EXPERIMENT_KINDS:
        raise ConfigError(f"{path}: unknown experiment kind {kind!r}")
    cls = _CONFIG_CLASSES[kind]
    section = parser[kind] if kind in parser else {}
    known = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {}
    for key in section:
        if key not in known:
            raise ConfigError(f"{path}: [{kind}] unknown option {key!r}")
        pytype = {"int": int, "float": float, "bool": bool, "str": str}.get(
            str(known[key]).replace("builtins.", ""), str)
        kwargs[key] = _coerce(kind, key, pytype, section[key])
    try:
        cfg = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    files = {}
    if "files" in parser:
        for key, value in parser["files"].items():
            p = Path(value)
            if not p.is_absolute():
                p = path.parent / p
            files[key] = p
    return kind, cfg, files


def _apply_overrides(cfg, args):
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.reps is not None:
        key = "scenarios" if hasattr(cfg, "scenarios") else "replications"
        updates[key] = args.reps
    if args.threads is not None:
        updates["threads"] = args.threads
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _outdir(args) -> Path:
    out = args.out or os.environ.get("LFM_KIT_OUT") or "out"
    return Path(out)


def _require_file(files: dict, key: str) -> Path:
    if key not in files:
        raise ConfigError(f"config needs [files] {key} = <path> for this subcommand")
    if not files[key].exists():
        raise ConfigError(f"referenced file does not exist: {files[key]}")
    return files[key]


def _build_for_pipeline(kind: str, cfg, files: dict):
    """(model, measurement, prior) for the pipeline stages."""
    if kind == "custom":
        return experiments._custom_build(cfg)
    if kind == "ballistic":
        return experiments._ballistic_build(cfg)
    if kind == "orbit":
        env, model, meas, x0 = experiments.build_orbit_model(cfg)
        return model, meas, x0
    if kind == "tf":
        params_path = _require_file(files, "params")
        with open(params_path) as fh:
            raw = json.load(fh)
        params = tf_model.TfParams(
            basal=np.array(raw["basal"]), decay=np.array(raw["decay"]),
            sensitivity=np.array(raw["sensitivity"]),
            init_levels=np.array(raw["init_levels"]),
            link=raw["link"], gamma=float(raw["gamma"]))
        force = matern_to_sde(MaternSpec(cfg.nu, cfg.sigma_m, cfg.ell))
        model = augment(tf_model.mechanistic(params), [force])
        meas = tf_model.measurement(params, cfg.noise_std)
        x0 = initial_state(model, params.init_levels,
                           cfg.mech_prior_var * np.eye(cfg.n_genes))
        return model, meas, x0
    raise ConfigError(f"subcommand not supported for kind {kind!r}")


def _load_data(files: dict):
    data_path = _require_file(files, "data")
    try:
        data = experiments.read_data_csv(data_path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    times = [t for t, _ in data]
    if any(t1 >= t2 for t1, t2 in zip(times, times[1:])):
        raise ConfigError(f"{data_path}: time column is not strictly increasing")
    return data


def cmd_simulate(kind, cfg, files, outdir: Path) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    if kind == "tf":
        experiments.write_tf_artifacts(cfg, 0, 0, outdir)
    elif kind == "ballistic":
        model, meas, x0, data, traj = experiments.make_ballistic_dataset(cfg, 0)
        traj.to_csv(outdir / "truth.csv")
        experiments._write_data_csv(outdir / "data.csv", data, meas.dim)
    elif kind == "custom":
        model, meas, x0, data, traj = experiments.make_custom_dataset(cfg, 0)
        traj.to_csv(outdir / "truth.csv")
        experiments._write_data_csv(outdir / "data.csv", data, meas.dim)
    else:
        raise ConfigError("simulate supports kinds: tf, ballistic, custom")
    return 0


def cmd_filter(kind, cfg, files, outdir: Path, do_smooth: bool) -> int:
    model, meas, x0 = _build_for_pipeline(kind, cfg, files)
    data = _load_data(files)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        fr = cdgauss.filter(model, meas, data, x0, substeps=cfg.substeps)
    except DivergenceError as exc:
        cdgauss.write_summary_json(outdir / "filter_summary.json",
                                   {"loglik": None, "n_steps": 0, "diverged": True,
                                    "error": str(exc)})
        print(f"divergence: {exc}", file=sys.stderr)
        return 1
    fr.to_csv(outdir / "filter.csv")
    cdgauss.write_summary_json(outdir / "filter_summary.json", fr.summary())
    if do_smooth:
        sr = cdgauss.smooth(model, fr, substeps=cfg.substeps)
        sr.to_csv(outdir / "smooth.csv")
    return 0


def cmd_fit(kind, cfg, files, outdir: Path) -> int:
    data = _load_data(files)
    if kind == "custom":
        res = experiments.custom_fit(cfg, data)
        names = ["sigma_m", "ell", "noise_std"]
    elif kind == "ballistic":
        res = experiments.ballistic_fit(cfg, data)
        names = ["alpha", "sigma_m", "ell"]
    else:
        raise ConfigError("fit supports kinds: custom, ballistic")
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "fit.json", "w") as fh:
        json.dump({"names": names, "theta": [float(v) for v in res.theta],
                   "value": res.value, "converged": res.converged,
                   "on_boundary": res.on_boundary, "n_evals": res.n_evals},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_mcmc(kind, cfg, files, outdir: Path) -> int:
    data = _load_data(files)
    if kind == "custom":
        chain = experiments.custom_mcmc(cfg, data)
    elif kind == "ballistic":
        chain = experiments.ballistic_mcmc(cfg, data)
    else:
        raise ConfigError("mcmc supports kinds: custom, ballistic")
    outdir.mkdir(parents=True, exist_ok=True)
    chain.to_csv(outdir / "chain.csv")
    chain.summary_json(outdir / "chain_summary.json")
    return 0


def cmd_experiment(kind, cfg, outdir: Path) -> int:
    if kind == "tf":
        report = experiments.run_tf_experiment(cfg, outdir)
        for row in report.summary["table"]:
            print(f"{row['link']} gamma={row['gamma']}: "
                  f"mean RMSE {row['mean_rmse']:.4f} ({row['n_div']} diverged)")
    elif kind == "ballistic":
        report = experiments.run_ballistic_experiment(cfg, outdir)
        s = report.summary
        print(f"reps {s['n_reps']}, diverged {s['n_div']}, "
              f"u coverage {s['pooled_coverage_u']:.3f}, "
              f"mean u RMSE {s['mean_rmse_u']:.3f}")
    elif kind == "orbit":
        report = experiments.run_orbit_experiment(cfg, outdir)
        s = report.summary
        print(f"LFM wins {s['n_lfm_wins']}/{s['n_scenarios']}; "
              f"error ratios: {', '.join(f'{r:.3f}' for r in s['ratios'])}")
    else:
        raise ConfigError(f"no experiment driver for kind {kind!r}")
    if report.wall_clock_s is not None:
        print(f"wall clock: {report.wall_clock_s:.1f} s", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lfm-kit",
        description="Continuous-discrete Gaussian filtering for latent force models")
    parser.add_argument("subcommand",
                        choices=["simulate", "filter", "smooth", "fit", "mcmc",
                                 "tf", "ballistic", "orbit"])
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--reps", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        kind, cfg, files = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        outdir = _outdir(args)
        sub = args.subcommand
        if sub in ("tf", "ballistic", "orbit"):
            if sub != kind:
                raise ConfigError(
                    f"subcommand {sub!r} needs a config with kind = {sub}")
            return cmd_experiment(kind, cfg, outdir)
        if sub == "simulate":
            return cmd_simulate(kind, cfg, files, outdir)
        if sub in ("filter", "smooth"):
            return cmd_filter(kind, cfg, files, outdir, do_smooth=(sub == "smooth"))
        if sub == "fit":
            return cmd_fit(kind, cfg, files, outdir)
        if sub == "mcmc":
            return cmd_mcmc(kind, cfg, files, outdir)
        raise ConfigError(f"unknown subcommand {sub!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
