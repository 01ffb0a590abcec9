"""Command-line surface: configuration, persistence, run metadata.

Each command reads a flat sectioned key-value config (INI syntax, keys
addressed as ``section.key``), applies command-line overrides, runs one
stage of a study, and drops plot-ready CSV artifacts plus a JSON
manifest into the output directory.  All floats are serialised with 17
significant digits so files round-trip exactly, and every artifact is
listed in the manifest with a content checksum.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import errno
import hashlib
import json
import os
import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DivergenceError, PcuqError
from .experiments import (
    PredictiveSummary,
    Scenario,
    calibrate_lambda,
    coverage_metrics,
    fit_bayes,
    fit_mmd_bayes,
    fit_pcuq,
    generate_dataset,
    get_scenario,
    scenario_predictive,
    true_trajectory,
)
from .flow import run_flow
from .oracle import solve_fixed_point

__all__ = ["RunConfig", "RunManifest", "main"]

_METHODS = ("bayes", "mmd-bayes", "pcuq", "oracle")
_ENGINES = ("mala", "ula")

EX_OK = 0
EX_CONFIG = 2
EX_NUMERIC = 3
EX_IO = 4


# ---------------------------------------------------------------------------
# Config schema

def _parse_str(raw: str) -> str:
    if not raw.strip():
        raise ValueError("must not be empty")
    return raw.strip()


def _parse_choice(*choices):
    def parse(raw: str) -> str:
        v = raw.strip()
        if v not in choices:
            raise ValueError(f"must be one of {', '.join(choices)}")
        return v
    return parse


def _parse_seed(raw: str) -> int:
    v = int(raw, 0)
    if not 0 <= v < 2 ** 64:
        raise ValueError("must fit in an unsigned 64-bit integer")
    return v


def _parse_pos_int(raw: str) -> int:
    v = int(raw, 0)
    if v <= 0:
        raise ValueError("must be a positive integer")
    return v


def _parse_pos_float(raw: str) -> float:
    v = float(raw)
    if not np.isfinite(v) or v <= 0:
        raise ValueError("must be a positive finite number")
    return v


def _parse_unit_float(raw: str) -> float:
    v = float(raw)
    if not 0 < v <= 1:
        raise ValueError("must lie in (0, 1]")
    return v


def _parse_word_or_pos_float(word: str):
    def parse(raw: str):
        v = raw.strip()
        if v == word:
            return word
        return _parse_pos_float(v)
    return parse


def _parse_float_list(raw: str) -> tuple:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("must hold at least one value")
    return tuple(_parse_pos_float(p) for p in parts)


def _parse_str_list(raw: str) -> tuple:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("must hold at least one entry")
    return tuple(parts)


_SCHEMA = {
    "run": {
        "scenario": _parse_str,
        "method": _parse_choice(*_METHODS),
        "seed": _parse_seed,
        "out": _parse_str,
        "data": _parse_str,
        "threads": _parse_pos_int,
    },
    "kernel": {
        "ell_y": _parse_word_or_pos_float("sigma"),
        "ell_x": _parse_word_or_pos_float("zero"),
        "gradients": _parse_choice("analytic", "score", "reparam"),
        "n_mc": _parse_pos_int,
    },
    "flow": {
        "lambda": _parse_pos_float,
        "particles": _parse_pos_int,
        "engine": _parse_choice(*_ENGINES),
        "steps": _parse_pos_int,
        "step": _parse_pos_float,
    },
    "chain": {
        "iters": _parse_pos_int,
        "chains": _parse_pos_int,
        "step": _parse_pos_float,
        "log_beta": _parse_word_or_pos_float("np"),
    },
    "predict": {
        "intervention": _parse_word_or_pos_float("none"),
        "draws": _parse_pos_int,
        "source": _parse_str,
    },
    "calibrate": {
        "ladder": _parse_float_list,
        "iters": _parse_pos_int,
    },
    "report": {
        "runs": _parse_str_list,
        "truth": _parse_str,
    },
    "oracle": {
        "points": _parse_pos_int,
        "span": _parse_pos_float,
        "damping": _parse_unit_float,
        "tol": _parse_pos_float,
        "max_iter": _parse_pos_int,
    },
}


@dataclass
class RunConfig:
    """Validated configuration: file values merged with overrides."""

    values: dict = field(default_factory=dict)   # (section, key) -> parsed

    @classmethod
    def load(cls, config_path=None, overrides=(), *, seed=None, out=None,
             threads=None) -> "RunConfig":
        cfg = cls()
        if config_path is not None:
            parser = configparser.ConfigParser(
                interpolation=None, delimiters=("=",),
            )
            parser.optionxform = str
            with open(config_path, "r", encoding="utf-8") as fh:
                try:
                    parser.read_file(fh, source=str(config_path))
                except configparser.Error as exc:
                    raise ConfigError(f"config: {exc}") from exc
            for section in parser.sections():
                for key, raw in parser.items(section):
                    cfg._set(section, key, raw)
        for item in overrides:
            head, eq, raw = item.partition("=")
            if not eq or "." not in head:
                raise ConfigError(
                    f"override {item!r} is not of the form section.key=value"
                )
            section, _, key = head.partition(".")
            cfg._set(section.strip(), key.strip(), raw)
        if seed is not None:
            cfg._set("run", "seed", str(seed))
        if out is not None:
            cfg._set("run", "out", str(out))
        if threads is not None:
            cfg._set("run", "threads", str(threads))
        return cfg

    def _set(self, section: str, key: str, raw: str) -> None:
        try:
            parse = _SCHEMA[section][key]
        except KeyError:
            raise ConfigError(f"{section}.{key}: unknown configuration key")
        try:
            self.values[(section, key)] = parse(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from exc

    def get(self, section: str, key: str, default=None):
        return self.values.get((section, key), default)

    def require(self, section: str, key: str):
        try:
            return self.values[(section, key)]
        except KeyError:
            raise ConfigError(f"{section}.{key}: required but not set")

    @property
    def seed(self) -> int:
        return self.get("run", "seed", 0)

    @property
    def out(self) -> str:
        return self.get("run", "out", ".")

    def scenario(self) -> Scenario:
        name = self.require("run", "scenario")
        try:
            return get_scenario(name)
        except ConfigError as exc:
            raise ConfigError(f"run.scenario: {exc}") from exc

    def kernel_kw(self) -> dict:
        kw = {}
        ell_y = self.get("kernel", "ell_y")
        if ell_y is not None and ell_y != "sigma":
            kw["ell_y"] = ell_y
        ell_x = self.get("kernel", "ell_x")
        if ell_x is not None:
            kw["ell_x"] = ell_x
        grad = self.get("kernel", "gradients")
        if grad is not None:
            kw["gradient_strategy"] = grad
        n_mc = self.get("kernel", "n_mc")
        if n_mc is not None:
            kw["n_mc"] = n_mc
        return kw


# ---------------------------------------------------------------------------
# Persistence

def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _read_table(path: str, expect_cols=None) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(
            errno.ENOENT, "expected input file is missing", path,
        )
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=float)
    if expect_cols is not None and data.shape[1] != expect_cols:
        raise ConfigError(
            f"{path}: expected {expect_cols} columns, found {data.shape[1]}"
        )
    return data


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Run metadata written atomically next to the artifacts."""

    command: str
    config: dict
    versions: dict
    wall_clock_s: float
    stages: dict
    warnings: list
    outputs: dict     # filename -> sha256 of content

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, "manifest.json")
        payload = {
            "command": self.command,
            "config": dict(sorted(self.config.items())),
            "versions": self.versions,
            "wall_clock_s": self.wall_clock_s,
            "stages": self.stages,
            "warnings": self.warnings,
            "outputs": dict(sorted(self.outputs.items())),
        }
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=False)
            fh.write("\n")
        os.replace(tmp, path)
        return path


def _versions() -> dict:
    import platform

    import scipy

    try:
        from importlib.metadata import version
        own = version("pcuq")
    except Exception:
        own = "unknown"
    return {
        "pcuq": own,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _probe_writable(out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    probe = os.path.join(out_dir, f".write-probe.{os.getpid()}")
    with open(probe, "w", encoding="utf-8") as fh:
        fh.write("")
    os.remove(probe)


# ---------------------------------------------------------------------------
# Commands

def _load_dataset(cfg: RunConfig, scenario: Scenario,
                  resolved: dict) -> Dataset:
    path = cfg.get("run", "data", os.path.join(cfg.out, "dataset.csv"))
    resolved["run.data"] = path
    table = _read_table(path, expect_cols=1 + scenario.obs_dim)
    return Dataset(table[:, 0], table[:, 1:])


def _theta_header(p: int):
    return [f"theta_{i + 1}" for i in range(p)]


def cmd_generate_data(cfg: RunConfig, resolved: dict, notes: list) -> dict:
    scenario = cfg.scenario()
    resolved["run.scenario"] = scenario.name
    resolved["run.seed"] = str(cfg.seed)

    dataset = generate_dataset(scenario, cfg.seed)
    truth = true_trajectory(scenario, cfg.seed)

    outputs = {}
    d = scenario.obs_dim
    path = os.path.join(cfg.out, "dataset.csv")
    _write_csv(path, ["x"] + [f"y_{i + 1}" for i in range(d)],
               ([x, *row] for x, row in zip(dataset.x, dataset.y)))
    outputs["dataset.csv"] = path

    path = os.path.join(cfg.out, "truth.csv")
    _write_csv(path, ["x"] + [f"u_{i + 1}" for i in range(d)],
               ([x, *row] for x, row in zip(scenario.predict_times, truth)))
    outputs["truth.csv"] = path

    gamma = cfg.get("predict", "intervention")
    if gamma is not None and gamma != "none":
        if scenario.kind != "erk":
            raise ConfigError(
                "predict.intervention: no intervention is defined for "
                f"scenario {scenario.name!r}"
            )
        resolved["predict.intervention"] = _fmt(gamma)
        treated = true_trajectory(scenario, cfg.seed, intervention=gamma)
        path = os.path.join(cfg.out, "truth_meki.csv")
        _write_csv(path, ["x"] + [f"u_{i + 1}" for i in range(d)],
                   ([x, *row] for x, row in
                    zip(scenario.predict_times, treated)))
        outputs["truth_meki.csv"] = path
    return outputs


def _chain_rows(chains: np.ndarray):
    for c in range(chains.shape[0]):
        for t in range(chains.shape[1]):
            yield (t, c, *chains[c, t])


def _particle_rows(steps, ensembles):
    for t, ens in zip(steps, ensembles):
        for i in range(ens.shape[0]):
            yield (int(t), i, *ens[i])


def _write_fit(out_dir: str, p: int, trace_rows, samples: np.ndarray) -> dict:
    outputs = {}
    path = os.path.join(out_dir, "trace.csv")
    _write_csv(path, ["iter", "chain_or_particle"] + _theta_header(p),
               trace_rows)
    outputs["trace.csv"] = path
    path = os.path.join(out_dir, "samples.csv")
    _write_csv(path, _theta_header(p), samples)
    outputs["samples.csv"] = path
    return outputs


def cmd_fit(cfg: RunConfig, resolved: dict, notes: list) -> dict:
    scenario = cfg.scenario()
    method = cfg.require("run", "method")
    resolved["run.scenario"] = scenario.name
    resolved["run.method"] = method
    resolved["run.seed"] = str(cfg.seed)
    if method == "oracle":
        return _run_oracle(cfg, scenario, resolved)

    dataset = _load_dataset(cfg, scenario, resolved)
    p = scenario.param_dim
    n_iter = cfg.get("chain", "iters", scenario.mala_iters)
    n_chains = cfg.get("chain", "chains", scenario.mala_chains)
    step = cfg.get("chain", "step")

    if method == "bayes":
        resolved["chain.iters"] = str(n_iter)
        resolved["chain.chains"] = str(n_chains)
        res = fit_bayes(scenario, dataset, seed=cfg.seed, n_iter=n_iter,
                        n_chains=n_chains, step=step)
        resolved["chain.step"] = _fmt(res.step)
        return _write_fit(cfg.out, p, _chain_rows(res.chains), res.samples)

    if method == "mmd-bayes":
        resolved["chain.iters"] = str(n_iter)
        resolved["chain.chains"] = str(n_chains)
        log_beta = cfg.get("chain", "log_beta", "np")
        if log_beta == "np":
            log_beta = None
            value = dataset.n * p
            notes.append(
                f"mmd-bayes: defaulting the loss weight to exp(n*p) "
                f"(log beta = {value})"
            )
            resolved["chain.log_beta"] = f"np ({value})"
        else:
            resolved["chain.log_beta"] = _fmt(log_beta)
        res = fit_mmd_bayes(scenario, dataset, seed=cfg.seed, n_iter=n_iter,
                            n_chains=n_chains, step=step,
                            log_beta=log_beta, kernel_kw=cfg.kernel_kw())
        resolved["chain.step"] = _fmt(res.step)
        return _write_fit(cfg.out, p, _chain_rows(res.chains), res.samples)

    # method == "pcuq"
    lam = cfg.get("flow", "lambda", scenario.lambda_star)
    n_particles = cfg.get("flow", "particles", scenario.n_particles)
    engine = cfg.get("flow", "engine", "mala")
    resolved["flow.lambda"] = _fmt(lam)
    resolved["flow.particles"] = str(n_particles)
    resolved["flow.engine"] = engine

    if engine == "mala":
        resolved["chain.iters"] = str(n_iter)
        res = fit_pcuq(scenario, dataset, seed=cfg.seed, lam=lam,
                       n_iter=n_iter, n_particles=n_particles, step=step,
                       kernel_kw=cfg.kernel_kw())
        resolved["chain.step"] = _fmt(res.joint.step)
        full = res.joint.chains[0].reshape(-1, n_particles, p)
        return _write_fit(
            cfg.out, p,
            _particle_rows(range(full.shape[0]), full),
            res.atoms,
        )

    n_steps = cfg.get("flow", "steps", scenario.flow_steps)
    step_size = cfg.get("flow", "step", scenario.flow_step_size)
    resolved["flow.steps"] = str(n_steps)
    resolved["flow.step"] = _fmt(step_size)
    kernel = scenario.kernel_for(dataset, seed=cfg.seed, **cfg.kernel_kw())
    init = np.tile(scenario.theta_true, (n_particles, 1))
    try:
        res = run_flow(kernel, scenario.prior(), lam, n_steps=n_steps,
                       n_particles=n_particles, step_size=step_size,
                       init=init, seed=cfg.seed)
    except DivergenceError as exc:
        if exc.last_ensemble is not None:
            # preserve the final finite ensemble for post-mortem
            _write_csv(
                os.path.join(cfg.out, "trace.csv"),
                ["iter", "chain_or_particle"] + _theta_header(p),
                _particle_rows([-1], [np.atleast_2d(exc.last_ensemble)]),
            )
        raise
    return _write_fit(
        cfg.out, p,
        _particle_rows(res.snapshot_steps, res.history),
        res.atoms,
    )


def _run_oracle(cfg: RunConfig, scenario: Scenario, resolved: dict) -> dict:
    if scenario.param_dim > 2:
        raise ConfigError(
            "run.method: the grid oracle supports only one- and "
            f"two-dimensional parameter spaces, not {scenario.param_dim}"
        )
    dataset = _load_dataset(cfg, scenario, resolved)
    lam = cfg.get("flow", "lambda", scenario.lambda_star)
    resolved["flow.lambda"] = _fmt(lam)
    kw = {}
    for key, name in (("points", "n_points"), ("span", "span"),
                      ("damping", "damping"), ("tol", "tol"),
                      ("max_iter", "max_iter")):
        v = cfg.get("oracle", key)
        if v is not None:
            kw[name] = v
            resolved[f"oracle.{key}"] = _fmt(v)
    kernel = scenario.kernel_for(dataset, seed=cfg.seed, **cfg.kernel_kw())
    res = solve_fixed_point(kernel, scenario.prior(), lam, **kw)
    path = os.path.join(cfg.out, "density.csv")
    _write_csv(
        path,
        _theta_header(scenario.param_dim) + ["weight"],
        ([*pt, w] for pt, w in
         zip(res.measure.points, res.measure.weights)),
    )
    resolved["oracle.residual"] = _fmt(res.residual)
    return {"density.csv": path}


def cmd_predict(cfg: RunConfig, resolved: dict, notes: list) -> dict:
    scenario = cfg.scenario()
    resolved["run.scenario"] = scenario.name
    resolved["run.seed"] = str(cfg.seed)
    source = cfg.get("predict", "source",
                     os.path.join(cfg.out, "samples.csv"))
    params = _read_table(source, expect_cols=scenario.param_dim)
    draws = cfg.get("predict", "draws", 10_000)
    gamma = cfg.get("predict", "intervention", "none")
    intervention = None if gamma == "none" else gamma
    if intervention is not None and scenario.kind != "erk":
        raise ConfigError(
            "predict.intervention: no intervention is defined for "
            f"scenario {scenario.name!r}"
        )
    method = cfg.get("run", "method")
    if method is not None:
        resolved["run.method"] = method
    resolved["predict.source"] = source
    resolved["predict.draws"] = str(draws)
    resolved["predict.intervention"] = (
        "none" if intervention is None else _fmt(intervention)
    )
    summary = scenario_predictive(
        scenario, params, seed=cfg.seed,
        intervention=intervention, draws=draws,
    )
    path = os.path.join(cfg.out, "predictive.csv")
    _write_csv(
        path,
        ["x", "dim", "mean", "q25", "q50", "q75"],
        ((summary.times[t], d + 1, summary.mean[t, d], summary.q25[t, d],
          summary.q50[t, d], summary.q75[t, d])
         for t in range(summary.times.shape[0])
         for d in range(summary.mean.shape[1])),
    )
    return {"predictive.csv": path}


def cmd_calibrate(cfg: RunConfig, resolved: dict, notes: list) -> dict:
    scenario = cfg.scenario()
    resolved["run.scenario"] = scenario.name
    resolved["run.seed"] = str(cfg.seed)
    ladder = cfg.get("calibrate", "ladder")
    iters = cfg.get("calibrate", "iters")
    if iters is not None:
        resolved["calibrate.iters"] = str(iters)
    res = calibrate_lambda(
        scenario, seed=cfg.seed, ladder=ladder, mala_iters=iters,
        n_particles=cfg.get("flow", "particles"),
    )
    resolved["calibrate.ladder"] = " ".join(_fmt(v) for v in res.ladder)
    resolved["calibrate.lambda_star"] = _fmt(res.lambda_star)
    path = os.path.join(cfg.out, "calibration.csv")
    _write_csv(
        path,
        ["lambda", "pcuq_spread", "bayes_spread", "selected"],
        ((lam, spread, res.bayes_spread,
          int(lam == res.lambda_star))
         for lam, spread in zip(res.ladder, res.pcuq_spread)),
    )
    return {"calibration.csv": path}


def _read_predictive(path: str) -> PredictiveSummary:
    table = _read_table(path, expect_cols=6)
    dims = table[:, 1].astype(int)
    d = dims.max()
    if d < 1 or table.shape[0] % d:
        raise ConfigError(f"{path}: malformed dimension column")
    T = table.shape[0] // d
    def grid(col):
        return table[:, col].reshape(T, d)
    times = grid(0)[:, 0]
    return PredictiveSummary(times=times, mean=grid(2), q25=grid(3),
                             q50=grid(4), q75=grid(5))


def cmd_report(cfg: RunConfig, resolved: dict, notes: list) -> dict:
    run_dirs = cfg.get("report", "runs", (cfg.out,))
    truth_path = cfg.get("report", "truth",
                         os.path.join(cfg.out, "truth.csv"))
    resolved["report.runs"] = ",".join(run_dirs)
    resolved["report.truth"] = truth_path
    truth_table = _read_table(truth_path)
    truth_x, truth = truth_table[:, 0], truth_table[:, 1:]

    rows = []
    for run_dir in run_dirs:
        summary = _read_predictive(os.path.join(run_dir, "predictive.csv"))
        if (summary.times.shape != truth_x.shape
                or not np.array_equal(summary.times, truth_x)):
            raise ConfigError(
                "report: prediction grid does not match the truth grid; "
                f"predictive x = {np.array2string(summary.times, threshold=8)} "
                f"vs truth x = {np.array2string(truth_x, threshold=8)}"
            )
        method = os.path.basename(os.path.normpath(run_dir)) or "run"
        manifest_path = os.path.join(run_dir, "manifest.json")
        if os.path.exists(manifest_path):
            with open(manifest_path, "r", encoding="utf-8") as fh:
                meta = json.load(fh)
            method = meta.get("config", {}).get("run.method", method)
        metrics = coverage_metrics(summary, truth)
        for d in range(truth.shape[1]):
            rows.append((method, d + 1, metrics.coverage[d],
                         metrics.width[d]))

    path = os.path.join(cfg.out, "metrics.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,dim,coverage,width\n")
        for method, d, cov, width in rows:
            fh.write(f"{method},{d},{_fmt(cov)},{_fmt(width)}\n")
    return {"metrics.csv": path}


_COMMANDS = {
    "generate-data": cmd_generate_data,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "calibrate-lambda": cmd_calibrate,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------
# Entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcuq",
        description="Prediction-centric uncertainty quantification studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    names = list(_COMMANDS) + ["oracle"]
    for name in names:
        cp = sub.add_parser(name)
        cp.add_argument("--config", default=None)
        cp.add_argument("--seed", type=int, default=None)
        cp.add_argument("--out", default=None)
        cp.add_argument("--threads", type=int, default=None)
        cp.add_argument("overrides", nargs="*", metavar="section.key=value")
    return parser


def _set_threads(n) -> None:
    if n is None:
        return
    try:
        import numba
        numba.set_num_threads(n)
    except (ImportError, ValueError):
        pass


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    command = args.command
    overrides = list(args.overrides)
    if command == "oracle":
        # alias: a fit restricted to the grid oracle
        command = "fit"
        overrides.append("run.method=oracle")

    t_start = time.perf_counter()
    stages = {}
    try:
        t0 = time.perf_counter()
        cfg = RunConfig.load(
            args.config, overrides,
            seed=args.seed, out=args.out, threads=args.threads,
        )
        _set_threads(cfg.get("run", "threads"))
        _probe_writable(cfg.out)
        stages["setup"] = round(time.perf_counter() - t0, 6)

        resolved = {"run.out": cfg.out}
        notes = []
        t0 = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            outputs = _COMMANDS[command](cfg, resolved, notes)
        stages["compute"] = round(time.perf_counter() - t0, 6)
        seen = {}
        for w in caught:
            seen[str(w.message)] = seen.get(str(w.message), 0) + 1
        for message, count in seen.items():
            if count > 1:
                message = f"{message} ({count} times)"
            print(f"pcuq: warning: {message}", file=sys.stderr)
            notes.append(message)

        manifest = RunManifest(
            command=args.command,
            config=resolved,
            versions=_versions(),
            wall_clock_s=round(time.perf_counter() - t_start, 6),
            stages=stages,
            warnings=notes,
            outputs={name: _sha256(path) for name, path in outputs.items()},
        )
        manifest.write(cfg.out)
    except ConfigError as exc:
        print(f"pcuq: config error: {exc}", file=sys.stderr)
        return EX_CONFIG
    except (PcuqError, FloatingPointError) as exc:
        print(f"pcuq: numerical failure: {exc}", file=sys.stderr)
        return EX_NUMERIC
    except OSError as exc:
        print(f"pcuq: i/o error: {exc}", file=sys.stderr)
        return EX_IO
    return EX_OK


if __name__ == "__main__":
    sys.exit(main())
