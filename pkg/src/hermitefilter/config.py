"""Experiment configuration: INI files with one section per experiment.

Every parameter has a documented default in ``DEFAULTS``; a config file
only lists what it changes. Values are typed by their default: ints,
floats, strings, booleans, and comma-separated float lists.
"""

import configparser
import io
from dataclasses import dataclass, field

EXPERIMENTS = (
    "scaling_demo",
    "convergence",
    "translate_table",
    "filter_almost_linear",
    "filter_cubic",
    "filter_custom",
    "compare_pf",
)

_FILTER_COMMON = {
    "dt_obs": 0.01,
    "horizon": 50.0,
    "sim_substeps": 10,
    "tolerance": 1e-5,
    "overlap": 0.5,
    "offset_step": 0.5,
    "dt": 1e-4,
    "scheme": "crank_nicolson",
    "killing": "correction",
    "seed": 1,
    "n_particles": (50.0,),
    "snapshot_every": 1.0,
    "snapshot_points": 301,
}

DEFAULTS = {
    "scaling_demo": {
        "alphas": (1.0, 3.1, 4.0),
        "n_min": 2,
        "n_max": 40,
        "n_step": 2,
        "beta": 0.0,
        "ref_nodes": 400,
    },
    "convergence": {
        "alpha": 1.4,
        "beta": 0.0,
        "n_modes": (5.0, 15.0, 25.0, 35.0, 45.0),
        "horizon": 0.1,
        "dt": 1e-4,
        "scheme": "crank_nicolson",
        "ref_nodes": 400,
    },
    "translate_table": {
        "alpha": 1.0,
        "n_modes": 24,
        "peaks": (-1.0, 0.0, 1.0, 2.0, 3.0, 4.0),
        "betas": (0.0, 3.0),
        "ref_nodes": 400,
    },
    "filter_almost_linear": dict(
        _FILTER_COMMON,
        alpha=1.0,
        n_modes=25,
        domain=17.0,
        profile_p=0.5,
        profile_k=2.0,
        n_particles=(10.0, 50.0),
        single_window=False,
        reflect=0.0,
    ),
    "filter_cubic": dict(
        _FILTER_COMMON,
        alpha=2.4637,
        n_modes=45,
        domain=3.0,
        profile_p=0.25,
        profile_k=4.0,
        single_window=True,
        reflect=3.0,
    ),
    "filter_custom": dict(
        _FILTER_COMMON,
        f="0",
        g="1",
        h="x",
        sigma0="exp(-x**2/2)",
        Q=1.0,
        S=1.0,
        alpha=0.0,
        n_modes=0,
        domain=10.0,
        profile_p=0.5,
        profile_k=2.0,
        single_window=False,
        reflect=0.0,
        horizon=5.0,
    ),
    # Basis and model settings come from the section of ``model``
    # (filter_almost_linear, filter_cubic or filter_custom).
    "compare_pf": dict(
        _FILTER_COMMON,
        model="cubic",
        n_particles=(500.0,),
        pf_seed=2,
    ),
}

# Positive-duration parameters checked on load.
_POSITIVE = ("dt_obs", "horizon", "dt", "tolerance")


class ConfigError(ValueError):
    kind = "config"


def _parse_value(text, default, key):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    out: str = "out"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        merged = dict(DEFAULTS[self.experiment])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ConfigError(f"unknown parameters for {self.experiment}: {sorted(unknown)}")
        for k, v in self.params.items():
            d = merged[k]
            if isinstance(v, str) and not isinstance(d, str):
                v = _parse_value(v, d, k)
            elif isinstance(d, tuple) and not isinstance(v, tuple):
                v = tuple(float(x) for x in (v if hasattr(v, "__iter__") else [v]))
            elif isinstance(d, float) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            merged[k] = v
        for k in _POSITIVE:
            if k in merged and not merged[k] > 0:
                raise ConfigError(f"{k} must be positive, got {merged[k]}")
        object.__setattr__(self, "params", merged)

    def __getitem__(self, key):
        return self.params[key]

    def with_overrides(self, **kw):
        return ExperimentConfig(self.experiment, dict(self.params, **kw), self.out)


def dumps(cfg):
    """INI text holding every parameter of ``cfg`` (defaults included)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser[cfg.experiment] = {k: _format_value(v) for k, v in sorted(cfg.params.items())}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads(text, experiment, out="out"):
    """Parse the ``[experiment]`` section; a missing section means all defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    params = dict(parser[experiment]) if parser.has_section(experiment) else {}
    return ExperimentConfig(experiment, params, out)


def load(path, experiment, out="out"):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, experiment, out)
