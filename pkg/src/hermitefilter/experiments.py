"""Experiment drivers behind the CLI.

Each ``run_*`` function writes its CSV/binary artifacts into ``out`` and
returns a :class:`Report`. Files hold only deterministic content; wall
times live in ``Report.timings`` and are printed, never written, so two
runs with the same config produce byte-identical files.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import serialize
from .baseline import SimConfig, rmse, run_pf, simulate_path
from .basis import (
    AsymptoticProfile,
    BasisSpec,
    Translated,
    choose_scaling,
    gauss_hermite_rule,
    l2_error,
    project,
    truncation_error,
)
from .config import ConfigError
from .errors import HermiteFilterError
from .fke import CanonicalFke, Scheme, StepperConfig, solve
from .nlf import ObservationModel, additive_noise_model, build_window_bank, run_online

log = logging.getLogger(__name__)


@dataclass
class Report:
    experiment: str
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def _out(cfg):
    out = FsPath(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stepper(cfg):
    try:
        scheme = Scheme(cfg["scheme"])
    except ValueError:
        raise ConfigError(f"unknown scheme {cfg['scheme']!r}") from None
    return StepperConfig(scheme=scheme, dt=cfg["dt"])


# -- basis experiments ------------------------------------------------------

def scaling_test_function(x):
    return np.cos(x / 10.0) * np.exp(-5.0 * x * x)


def run_scaling_demo(cfg):
    """Truncation error of cos(x/10) exp(-5x^2) against N for several alpha."""
    out = _out(cfg)
    ref = gauss_hermite_rule(cfg["ref_nodes"])
    ns = list(range(cfg["n_min"], cfg["n_max"] + 1, cfg["n_step"]))
    rows_n, rows_a, rows_e = [], [], []
    for a in cfg["alphas"]:
        for n in ns:
            rows_n.append(n)
            rows_a.append(a)
            rows_e.append(truncation_error(scaling_test_function, BasisSpec(a, cfg["beta"], n), ref))
    path = out / "scaling_demo.csv"
    serialize.write_csv(path, ["n_modes", "alpha", "error"], [rows_n, rows_a, rows_e])
    guide = out / "scaling_guideline.csv"
    cases = [(5.0, 2.0), (0.5, 2.0), (0.25, 4.0)]
    choices = [choose_scaling(AsymptoticProfile(p, k)) for p, k in cases]
    serialize.write_csv(
        guide,
        ["p", "k", "alpha", "half_width", "n_modes"],
        [[c[0] for c in cases], [c[1] for c in cases], [c.alpha for c in choices],
         [c.half_width for c in choices], [c.n_modes for c in choices]],
    )
    return Report("scaling_demo", [path, guide], {"rows": len(rows_n)})


def convergence_problem():
    """u_t = u_xx - x^2 u + (sin t + cos t + 3x) e^{-x^2/2}, exact (x + sin t) e^{-x^2/2}."""

    def source(x, t):
        return (np.sin(t) + np.cos(t) + 3.0 * x) * np.exp(-0.5 * x * x)

    def exact(x, t):
        return (x + np.sin(t)) * np.exp(-0.5 * x * x)

    fke = CanonicalFke(nu=1.0, potential=lambda x, t: -x * x, source=source)
    return fke, (lambda x: exact(x, 0.0)), exact


def run_convergence(cfg):
    out = _out(cfg)
    fke, u0, exact = convergence_problem()
    stepper = _stepper(cfg)
    T = cfg["horizon"]
    ref = gauss_hermite_rule(cfg["ref_nodes"])
    ns, errs, timings = [], [], {}
    for n in (int(v) for v in cfg["n_modes"]):
        spec = BasisSpec(cfg["alpha"], cfg["beta"], n)
        t0 = time.perf_counter()
        try:
            coeffs = solve(fke, project(u0, spec), (0.0, T), stepper)
        except HermiteFilterError as exc:
            exc.args = (f"{exc.args[0]} (convergence run with N={n})",) + exc.args[1:]
            raise
        timings[f"solve_N{n}_seconds"] = time.perf_counter() - t0
        ns.append(n)
        errs.append(l2_error(lambda x: exact(x, T), coeffs, ref))
    path = out / "convergence.csv"
    serialize.write_csv(path, ["n_modes", "l2_error"], [ns, errs])
    return Report("convergence", [path], {"errors": dict(zip(ns, errs))}, timings)


def run_translate_table(cfg):
    """error_beta(p0) for exp(-(x-p0)^2/2) in H^{alpha,beta}, Table layout."""
    out = _out(cfg)
    ref = gauss_hermite_rule(cfg["ref_nodes"])
    shape = AsymptoticProfile(0.5, 2.0)
    cols = [list(cfg["peaks"])]
    header = ["p0"]
    for b in cfg["betas"]:
        spec = BasisSpec(cfg["alpha"], b, cfg["n_modes"])
        cols.append([truncation_error(Translated(shape, p0), spec, ref) for p0 in cfg["peaks"]])
        header.append(f"error_{b:g}")
    path = out / "translate_table.csv"
    serialize.write_csv(path, header, cols)
    return Report("translate_table", [path], {"rows": len(cols[0])})


# -- filtering experiments --------------------------------------------------

def almost_linear_model():
    def h(x, t):
        return x * (1.0 + 0.25 * np.cos(x))

    return additive_noise_model(h=h, sigma0=lambda x: np.exp(-0.5 * x * x))


def cubic_model():
    return additive_noise_model(h=lambda x, t: x ** 3, sigma0=lambda x: np.exp(-0.25 * x ** 4))


def custom_model(f, g, h, sigma0, Q=1.0, S=1.0):
    """Model from sympy expressions in x (and t for f, g, h)."""
    import sympy

    x, t = sympy.symbols("x t", real=True)
    env = {"x": x, "t": t}
    try:
        fe, ge, he, se = (sympy.sympify(e, locals=env) for e in (f, g, h, sigma0))
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse model expression: {exc}") from None
    extra = (fe.free_symbols | ge.free_symbols | he.free_symbols) - {x, t}
    if extra or se.free_symbols - {x}:
        raise ConfigError("model expressions may only use x (and t, except sigma0)")

    def fn(expr):
        raw = sympy.lambdify((x, t), expr, "numpy")
        return lambda xx, tt: np.broadcast_to(np.asarray(raw(xx, tt), dtype=float), np.shape(xx))

    s_raw = sympy.lambdify(x, se, "numpy")
    varying = any(t in e.free_symbols for e in (fe, ge, he))
    return ObservationModel(
        f=fn(fe), g=fn(ge), h=fn(he),
        sigma0=lambda xx: np.broadcast_to(np.asarray(s_raw(xx), dtype=float), np.shape(xx)),
        Q=Q, S=S,
        f_x=fn(sympy.diff(fe, x)), g_x=fn(sympy.diff(ge, x)), g_xx=fn(sympy.diff(ge, x, 2)),
        time_dependent=varying,
    )


def model_for(cfg):
    name = cfg.experiment
    if name == "filter_almost_linear":
        return almost_linear_model()
    if name == "filter_cubic":
        return cubic_model()
    if name == "filter_custom":
        return custom_model(cfg["f"], cfg["g"], cfg["h"], cfg["sigma0"], cfg["Q"], cfg["S"])
    raise ConfigError(f"{name} does not define a model")


def _n_obs(cfg):
    n = cfg["horizon"] / cfg["dt_obs"]
    if abs(n - round(n)) > 1e-6 * n:
        raise ConfigError("dt_obs must divide horizon")
    return int(round(n))


def simulate_truth(cfg, model, seed=None):
    """Path at dt_obs / sim_substeps, returned subsampled to dt_obs."""
    sub = cfg["sim_substeps"]
    if sub < 1:
        raise ConfigError("sim_substeps must be at least 1")
    reflect = cfg["reflect"]
    sim = SimConfig(
        model,
        dt=cfg["dt_obs"] / sub,
        horizon=cfg["dt_obs"] * _n_obs(cfg),
        seed=cfg["seed"] if seed is None else seed,
        x0="sigma0",
        reflect=(-reflect, reflect) if reflect > 0 else None,
    )
    return simulate_path(sim).every(sub)


def bank_for(cfg, model, workers=None):
    profile = AsymptoticProfile(cfg["profile_p"], cfg["profile_k"])
    L = cfg["domain"]
    return build_window_bank(
        model,
        profile,
        (-L, L),
        cfg["tolerance"],
        cfg["dt_obs"],
        stepper=_stepper(cfg),
        overlap=cfg["overlap"],
        offset_step=cfg["offset_step"],
        n_modes=cfg["n_modes"] or None,
        alpha=cfg["alpha"] or None,
        n_intervals=_n_obs(cfg) if model.time_dependent else None,
        workers=workers,
        betas=[0.0] if cfg["single_window"] else None,
        killing=cfg["killing"],
    )


def _filter_run(cfg, model, out, prefix="", workers=None, pf_seed=None):
    files, summary, timings = [], {}, {}
    t0 = time.perf_counter()
    bank = bank_for(cfg, model, workers)
    timings["offline_seconds"] = time.perf_counter() - t0
    path = simulate_truth(cfg, model)

    every = max(int(round(cfg["snapshot_every"] / cfg["dt_obs"])), 1)
    lo, hi = bank.covered
    grid = np.linspace(lo, hi, cfg["snapshot_points"])
    t0 = time.perf_counter()
    res = run_online(bank, model, path.y, recover_density=True, snapshot_every=every, grid=grid)
    online = time.perf_counter() - t0
    k = len(path.y) - 1
    timings["online_seconds"] = online
    timings["online_seconds_per_step"] = online / k

    n1 = bank.spec.size
    summary.update(
        n_windows=bank.n_windows,
        half_width=bank.half_width,
        alpha=bank.spec.alpha,
        n_modes=bank.spec.n_modes,
        storage=bank.storage,
        steps=k,
        shifts=res.shifts,
        flops=res.flops,
        matvec_size=n1 * n1,
        rmse_spectral=rmse(res.mean, path.x[1:]),
    )
    names = {
        "path": out / f"{prefix}path.csv",
        "estimates": out / f"{prefix}estimates.csv",
        "snapshots": out / f"{prefix}snapshots.csv",
        "bank": out / f"{prefix}bank.hfke",
    }
    serialize.path_to_csv(path, names["path"])
    serialize.estimates_to_csv(res, names["estimates"])
    serialize.snapshots_to_csv(res, names["snapshots"])
    files += [names["path"], names["estimates"], names["snapshots"]]
    files += list(serialize.save_bank(bank, names["bank"]))

    for n in (int(v) for v in cfg["n_particles"]):
        t0 = time.perf_counter()
        pf = run_pf(model, path, n, cfg["dt_obs"], cfg["seed"] if pf_seed is None else pf_seed)
        timings[f"pf{n}_seconds"] = time.perf_counter() - t0
        f = out / f"{prefix}pf_{n}.csv"
        serialize.pf_to_csv(pf, f)
        files.append(f)
        summary[f"rmse_pf_{n}"] = rmse(pf.mean, path.x[1:])
        summary[f"resamples_pf_{n}"] = pf.n_resamples

    s = out / f"{prefix}summary.csv"
    keys = sorted(summary)
    serialize.write_csv(s, ["key", "value"], [keys, [float(summary[k]) for k in keys]])
    files.append(s)
    return files, summary, timings


def run_filter(cfg, workers=None):
    out = _out(cfg)
    model = model_for(cfg)
    files, summary, timings = _filter_run(cfg, model, out, workers=workers)
    return Report(cfg.experiment, files, summary, timings)


def run_compare(cfg, model_cfg, workers=None):
    """Spectral filter against particle filters on one path of ``model_cfg``'s model."""
    out = _out(cfg)
    model = model_for(model_cfg)
    shared = {k: cfg[k] for k in cfg.params if k in model_cfg.params and k != "n_particles"}
    merged = model_cfg.with_overrides(**shared, n_particles=cfg["n_particles"])
    files, summary, timings = _filter_run(merged, model, out, prefix="compare_", workers=workers, pf_seed=cfg["pf_seed"])
    for n in (int(v) for v in cfg["n_particles"]):
        summary[f"rmse_ratio_pf_{n}"] = summary["rmse_spectral"] / summary[f"rmse_pf_{n}"]
    return Report("compare_pf", files, summary, timings)


RUNNERS = {
    "scaling_demo": run_scaling_demo,
    "convergence": run_convergence,
    "translate_table": run_translate_table,
    "filter_almost_linear": run_filter,
    "filter_cubic": run_filter,
    "filter_custom": run_filter,
}
