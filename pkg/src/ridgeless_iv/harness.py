"""Named experiment setups, Monte Carlo orchestration, and file emission.

Nine named setups cover the simulation study: six projected-RMSE setups on
two spectrum families (orthogonal, non-orthogonal, and sparse-coefficient
variants) and three estimator-comparison setups where an explicit window of
coordinates is endogenous.  A config object selects the setup, grid, seeds,
and estimators; runs are deterministic given the base seed no matter how
many workers execute the repetitions.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from .covariance import (
    CovarianceModel,
    DimensionRule,
    EndogenousModel,
    ExpPlusNoiseSpectrum,
    ExplicitSpectrum,
    LogPolySpectrum,
    assemble_model,
    build_covariance,
    spectrum,
    truncation_level,
)
from .estimators import min_norm_interpolator, split_sample_lasso_iv
from .metrics import projected_rmse
from .sampling import sample_dataset


class UnknownSetup(ValueError):
    """Setup id is not one of the nine named setups."""


class InvalidConfig(ValueError):
    """Config field fails validation."""


class OutputError(OSError):
    """Output directory or file cannot be written."""


SETUP_IDS = ("i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix")
ESTIMATOR_NAMES = ("ridgeless", "lasso_iv")

OUTPUT_DIR_ENV = "RIDGELESS_IV_OUTPUT_DIR"

RUNS_HEADER = ("setup", "n", "rep", "estimator", "projected_rmse")
PLOT_HEADER = ("n", "mean", "stderr")

# slowly decaying spectrum, p proportional to n
_LOG_POLY = LogPolySpectrum(
    scale=300.0, beta=2.0, log_factor=math.e / 2, p_rule=DimensionRule("multiple", 5.0)
)
# fast exponential decay plus an n-dependent floor, p = n^{3/2}
_EXP_NOISE = ExpPlusNoiseSpectrum(tau=2.0, scale=10.0)
# leakage exponent shared by every non-orthogonal setup
_LEAK_ALPHA = 1.01


# --------------------------------------------------------------------------
# coefficient and endogeneity rules


def _coef_dense(i: np.ndarray) -> np.ndarray:
    return 20.0 / np.sqrt(i)


def _coef_sparse(i: np.ndarray) -> np.ndarray:
    # support: every fifth index starting at 1, capped at 100
    keep = (i <= 100) & ((i.astype(int) + 4) % 5 == 0)
    return np.where(keep, 20.0 / np.sqrt(i), 0.0)


def _rho_inverse(i: np.ndarray) -> np.ndarray:
    return 2.0 / i


def _rho_exp(i: np.ndarray) -> np.ndarray:
    return 3.0 * np.exp(-i / 4.0)


def _spectrum_setup(profile, split_kind, alpha, coef_rule, rho_rule):
    """Factory for the projected-RMSE setups: whitened endogeneity through
    the pattern rotation, shared eigenbasis split."""

    def build(n: int):
        cov = build_covariance(
            profile, n, split_kind=split_kind, alpha=alpha, rotation="pattern"
        )
        i = np.arange(1, cov.p + 1, dtype=float)
        model = assemble_model(cov, coef_rule(i), whitened_cross=rho_rule(i))
        return model, None

    return build


def _window_setup(head_coef: bool = False, shifted: bool = False):
    """Factory for the comparison setups: an n/10-wide window of coordinates
    carries covariate-error correlation 2/i, given directly in natural
    coordinates (no rotation).

    The shifted variant moves the first fifth of the window past the
    truncation level; the latent block is extended to cover it, since a
    factor model can only realize correlation inside the latent block's
    range.  head_coef truncates the coefficient vector at 0.8 n.
    """

    def build(n: int):
        k = n // 10
        shift = k // 5 if shifted else 0
        if k < 1 or (shifted and shift < 1):
            raise InvalidConfig(f"endogenous window is empty at n={n}")
        p, eigs = spectrum(_LOG_POLY, n)
        kstar = truncation_level(eigs, n)
        if kstar is None or k > kstar:
            raise InvalidConfig(f"endogenous window exceeds the latent block at n={n}")
        block = kstar + shift
        scale = 1.0 - float(n) ** (-_LEAK_ALPHA)
        endo = np.zeros(p)
        endo[:block] = scale * eigs[:block]
        cov = CovarianceModel(
            p=p,
            endo_eigs=endo,
            signal_eigs=eigs - endo,
            trunc_level=kstar,
            split_kind="nonorthogonal",
            alpha=_LEAK_ALPHA,
        )
        i = np.arange(1, p + 1, dtype=float)
        theta = _coef_dense(i)
        if head_coef:
            theta = np.where(i <= 0.8 * n, theta, 0.0)
        window = np.zeros(p, dtype=bool)
        window[shift:k] = True
        window[kstar : kstar + shift] = True
        omega = np.where(window, 2.0 / i, 0.0)
        model = assemble_model(cov, theta, cross_cov=omega)
        return model, np.flatnonzero(window)

    return build


_SETUPS = {
    "i": _spectrum_setup(_LOG_POLY, "orthogonal", None, _coef_dense, _rho_inverse),
    "ii": _spectrum_setup(_EXP_NOISE, "orthogonal", None, _coef_dense, _rho_exp),
    "iii": _spectrum_setup(_LOG_POLY, "nonorthogonal", _LEAK_ALPHA, _coef_dense, _rho_inverse),
    "iv": _spectrum_setup(_EXP_NOISE, "nonorthogonal", _LEAK_ALPHA, _coef_dense, _rho_exp),
    "v": _spectrum_setup(_LOG_POLY, "orthogonal", None, _coef_sparse, _rho_inverse),
    "vi": _spectrum_setup(_LOG_POLY, "nonorthogonal", _LEAK_ALPHA, _coef_sparse, _rho_inverse),
    "vii": _window_setup(),
    "viii": _window_setup(head_coef=True),
    "ix": _window_setup(shifted=True),
}

_SETUP_MODES = {
    "i": "orthogonal",
    "ii": "orthogonal",
    "iii": "nonorthogonal",
    "iv": "nonorthogonal",
    "v": "orthogonal",
    "vi": "nonorthogonal",
    "vii": "nonorthogonal",
    "viii": "nonorthogonal",
    "ix": "nonorthogonal",
}

# comparison setups declare which columns the two-stage baseline instruments
_WINDOW_SETUPS = ("vii", "viii", "ix")


def setup_model(setup_id: str, n: int) -> tuple[EndogenousModel, np.ndarray | None]:
    """Assembled model for a named setup, plus its endogenous column indices.

    The index array is None for setups without a designated endogenous
    window (the projected-RMSE setups spread endogeneity over the whole
    latent block through the rotation).
    """
    if setup_id not in _SETUPS:
        raise UnknownSetup(f"unknown setup {setup_id!r}; expected one of {SETUP_IDS}")
    return _SETUPS[setup_id](n)


def setup_mode(setup_id: str) -> str:
    """Condition-report mode matching the setup's split kind."""
    if setup_id not in _SETUP_MODES:
        raise UnknownSetup(f"unknown setup {setup_id!r}; expected one of {SETUP_IDS}")
    return _SETUP_MODES[setup_id]


def default_grid(setup_id: str, full_scale: bool = False) -> tuple[int, ...]:
    """Sample-size grid: a desk-scale default, or the full-study grid.

    Desk runs keep p at a few thousand so a full sweep stays in minutes.
    The full-scale grid runs to n=1000; the comparison setups start at 100,
    the projected-RMSE setups at 200.
    """
    if setup_id not in _SETUPS:
        raise UnknownSetup(f"unknown setup {setup_id!r}; expected one of {SETUP_IDS}")
    if not full_scale:
        return (100, 200, 300, 400)
    start = 100 if setup_id in _WINDOW_SETUPS else 200
    return tuple(range(start, 1001, 100))


# --------------------------------------------------------------------------
# custom profiles

_COEF_KINDS = ("inverse_sqrt", "sparse_inverse_sqrt")
_CROSS_KINDS = ("inverse", "exp_decay", "none")
_PROFILE_KEYS = {
    "family",
    "scale",
    "beta",
    "log_factor",
    "tau",
    "noise",
    "values",
    "dim",
    "split",
    "alpha",
    "rotation",
    "coef",
    "cross",
    "noise_sd",
}


def _profile_spectrum(profile: dict):
    family = profile.get("family")
    dim = profile.get("dim")
    rule = DimensionRule(**dim) if dim is not None else None
    try:
        if family == "log_poly":
            kw = {"scale": profile["scale"], "beta": profile["beta"]}
            kw["log_factor"] = profile.get("log_factor", 1.0)
            if rule is not None:
                kw["p_rule"] = rule
            return LogPolySpectrum(**kw)
        if family == "exp_plus_noise":
            kw = {"tau": profile["tau"], "scale": profile["scale"]}
            kw["noise"] = profile.get("noise", "exp_sqrt_decay")
            if rule is not None:
                kw["p_rule"] = rule
            return ExpPlusNoiseSpectrum(**kw)
        if family == "explicit":
            return ExplicitSpectrum(values=tuple(profile["values"]))
    except KeyError as err:
        raise InvalidConfig(f"custom profile missing key {err}") from err
    raise InvalidConfig(f"unknown profile family {family!r}")


def _profile_vector(rule: dict | None, kind_set, default_kind, p: int):
    rule = dict(rule or {"kind": default_kind})
    kind = rule.pop("kind", default_kind)
    if kind not in kind_set:
        raise InvalidConfig(f"unknown rule kind {kind!r}; expected one of {kind_set}")
    scale = float(rule.pop("scale", 1.0))
    tau = float(rule.pop("tau", 4.0))
    if rule:
        raise InvalidConfig(f"unknown rule keys {sorted(rule)}")
    i = np.arange(1, p + 1, dtype=float)
    if kind == "inverse_sqrt":
        return scale / np.sqrt(i)
    if kind == "sparse_inverse_sqrt":
        keep = (i <= 100) & ((i.astype(int) + 4) % 5 == 0)
        return np.where(keep, scale / np.sqrt(i), 0.0)
    if kind == "inverse":
        return scale / i
    if kind == "exp_decay":
        return scale * np.exp(-i / tau)
    return None  # "none"


def _custom_model(profile: dict, n: int) -> tuple[EndogenousModel, None]:
    if not isinstance(profile, dict):
        raise InvalidConfig("custom setup needs a profile mapping")
    extra = set(profile) - _PROFILE_KEYS
    if extra:
        raise InvalidConfig(f"unknown profile keys {sorted(extra)}")
    prof = _profile_spectrum(profile)
    split = profile.get("split", "orthogonal")
    if split not in ("orthogonal", "nonorthogonal"):
        raise InvalidConfig(f"unknown split {split!r}")
    rotation = profile.get("rotation", "pattern")
    if rotation not in ("pattern", None):
        raise InvalidConfig(f"unknown rotation {rotation!r}")
    cov = build_covariance(
        prof, n, split_kind=split, alpha=profile.get("alpha"), rotation=rotation
    )
    theta = _profile_vector(profile.get("coef"), _COEF_KINDS, "inverse_sqrt", cov.p)
    rho = _profile_vector(profile.get("cross"), _CROSS_KINDS, "none", cov.p)
    noise_sd = profile.get("noise_sd")
    model = assemble_model(
        cov,
        theta,
        whitened_cross=rho,
        noise_sd=float(noise_sd) if noise_sd is not None else None,
    )
    return model, None


# --------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a setup, a sample-size grid, and execution knobs.

    The JSON document form mirrors these fields one to one.  dof only
    applies to the student_t instrument law; profile only to setup
    "custom"; output_dir None defers to the output-dir environment
    variable, then the working directory.
    """

    setup: str
    n_grid: tuple
    repetitions: int = 30
    base_seed: int = 0
    instrument_dist: str = "gaussian"
    dof: float | None = None
    estimators: tuple = ("ridgeless",)
    profile: dict | None = None
    output_dir: str | None = None

    def __post_init__(self):
        if self.setup not in SETUP_IDS and self.setup != "custom":
            raise UnknownSetup(f"unknown setup {self.setup!r}")
        if self.setup == "custom" and self.profile is None:
            raise InvalidConfig("custom setup needs a profile")
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if not self.n_grid:
            raise InvalidConfig("n_grid must be nonempty")
        if any(n < 1 for n in self.n_grid):
            raise InvalidConfig("n_grid entries must be positive")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise InvalidConfig("n_grid must be strictly ascending")
        if int(self.repetitions) < 1:
            raise InvalidConfig("repetitions must be at least 1")
        object.__setattr__(self, "repetitions", int(self.repetitions))
        if int(self.base_seed) < 0:
            raise InvalidConfig("base_seed must be nonnegative")
        object.__setattr__(self, "base_seed", int(self.base_seed))
        if self.instrument_dist not in ("gaussian", "student_t"):
            raise InvalidConfig(f"unknown instrument law {self.instrument_dist!r}")
        if self.instrument_dist == "student_t":
            if self.dof is None or float(self.dof) <= 2:
                raise InvalidConfig("student_t instrument needs dof > 2")
            object.__setattr__(self, "dof", float(self.dof))
        est = tuple(self.estimators)
        if not est:
            raise InvalidConfig("estimator list must be nonempty")
        if len(set(est)) != len(est):
            raise InvalidConfig("estimator list has duplicates")
        unknown = [e for e in est if e not in ESTIMATOR_NAMES]
        if unknown:
            raise InvalidConfig(f"unknown estimators {unknown}")
        if "lasso_iv" in est and self.setup not in _WINDOW_SETUPS:
            raise InvalidConfig(
                "lasso_iv needs a setup with a designated endogenous window (vii, viii, ix)"
            )
        object.__setattr__(self, "estimators", est)


_CONFIG_FIELDS = (
    "setup",
    "n_grid",
    "repetitions",
    "base_seed",
    "instrument_dist",
    "dof",
    "estimators",
    "profile",
    "output_dir",
)


def config_to_json(cfg: ExperimentConfig) -> str:
    doc = {
        "setup": cfg.setup,
        "n_grid": list(cfg.n_grid),
        "repetitions": cfg.repetitions,
        "base_seed": cfg.base_seed,
        "instrument_dist": cfg.instrument_dist,
        "dof": cfg.dof,
        "estimators": list(cfg.estimators),
        "profile": cfg.profile,
        "output_dir": cfg.output_dir,
    }
    return json.dumps(doc, indent=2) + "\n"


def config_from_json(text: str) -> ExperimentConfig:
    """Parse the JSON mirror; a missing or null n_grid takes the setup's
    desk-scale default grid."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise InvalidConfig(f"config is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise InvalidConfig("config document must be a JSON object")
    unknown = set(doc) - set(_CONFIG_FIELDS)
    if unknown:
        raise InvalidConfig(f"unknown config keys {sorted(unknown)}")
    if "setup" not in doc:
        raise InvalidConfig("config needs a setup id")
    kwargs = {k: doc[k] for k in _CONFIG_FIELDS[2:] if k in doc and doc[k] is not None}
    grid = doc.get("n_grid")
    if grid is None:
        if doc["setup"] == "custom":
            raise InvalidConfig("custom setup needs an explicit n_grid")
        grid = default_grid(doc["setup"])
    return ExperimentConfig(setup=doc["setup"], n_grid=grid, **kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_json(fh.read())


# --------------------------------------------------------------------------
# runs


@dataclass(frozen=True)
class RunRecord:
    setup: str
    n: int
    repetition: int
    estimator: str
    projected_rmse: float
    seed: int


@dataclass(frozen=True)
class AggregateRow:
    setup: str
    n: int
    estimator: str
    mean: float
    stdev: float
    stderr: float
    repetitions: int


@dataclass(frozen=True)
class ExperimentResult:
    """Per-repetition records plus recomputable aggregates.

    records are ordered by (n, repetition, estimator-order in the config),
    so identical configs produce identical record tuples no matter the
    worker count.  started/elapsed_seconds are metadata only and never
    reach the emitted files.
    """

    config: ExperimentConfig
    records: tuple
    aggregates: tuple
    started: str
    elapsed_seconds: float

    def mean_rmse(self, n: int, estimator: str) -> float:
        for row in self.aggregates:
            if row.n == n and row.estimator == estimator:
                return row.mean
        raise KeyError(f"no aggregate for n={n}, estimator={estimator!r}")


def repetition_seed(base_seed: int, n: int, rep: int) -> int:
    """Stable per-repetition seed, independent of execution order."""
    ss = np.random.SeedSequence([int(base_seed), int(n), int(rep)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def aggregate_records(records, estimator_order) -> tuple:
    """Mean/stdev/stderr per (n, estimator), recomputed from the records.

    stdev is the sample standard deviation (ddof=1), zero for a single
    repetition; stderr = stdev / sqrt(repetitions).
    """
    by_key: dict[tuple, list] = {}
    for rec in records:
        by_key.setdefault((rec.n, rec.estimator), []).append(rec.projected_rmse)
    order = {name: pos for pos, name in enumerate(estimator_order)}
    rows = []
    for (n, est) in sorted(by_key, key=lambda k: (k[0], order.get(k[1], len(order)))):
        vals = np.asarray(by_key[(n, est)], dtype=float)
        stdev = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        rows.append(
            AggregateRow(
                setup=records[0].setup,
                n=n,
                estimator=est,
                mean=float(vals.mean()),
                stdev=stdev,
                stderr=stdev / math.sqrt(vals.size),
                repetitions=int(vals.size),
            )
        )
    return tuple(rows)


def _model_for(cfg: ExperimentConfig, n: int):
    try:
        if cfg.setup == "custom":
            return _custom_model(cfg.profile, n)
        return setup_model(cfg.setup, n)
    except ValueError as err:
        raise type(err)(f"setup {cfg.setup!r} at n={n}: {err}") from err


def _signal_metric(model: EndogenousModel):
    cov = model.cov
    return cov.signal_eigs if cov.basis is None else cov.signal_cov()


def _run_repetition(cfg: ExperimentConfig, n: int, model, endo_idx, rep: int):
    seed = repetition_seed(cfg.base_seed, n, rep)
    data = sample_dataset(model, n, seed, cfg.instrument_dist, cfg.dof)
    metric = _signal_metric(model)
    out = []
    for name in cfg.estimators:
        if name == "ridgeless":
            fit = min_norm_interpolator(data.X, data.Y)
        else:
            fit = split_sample_lasso_iv(data, endo_idx)
        out.append(
            RunRecord(
                setup=cfg.setup,
                n=n,
                repetition=rep,
                estimator=name,
                projected_rmse=projected_rmse(fit.theta_hat, model.true_coef, metric),
                seed=seed,
            )
        )
    return out


def run_setup(cfg: ExperimentConfig, max_workers: int | None = None) -> ExperimentResult:
    """Execute the configured experiment.

    Repetitions run independently on derived seeds, optionally across a
    thread pool; the result is identical bytes for any worker count because
    every record is a pure function of (base_seed, n, repetition) and the
    output order is fixed up front.
    """
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    if "lasso_iv" in cfg.estimators and cfg.setup not in _WINDOW_SETUPS:
        raise InvalidConfig("lasso_iv needs an endogenous window setup")
    tasks = []
    for n in cfg.n_grid:
        model, endo_idx = _model_for(cfg, n)
        tasks.extend((n, model, endo_idx, rep) for rep in range(cfg.repetitions))

    def run_one(task):
        n, model, endo_idx, rep = task
        return _run_repetition(cfg, n, model, endo_idx, rep)

    workers = int(max_workers) if max_workers else 1
    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_one, tasks))
    else:
        chunks = [run_one(task) for task in tasks]
    records = tuple(rec for chunk in chunks for rec in chunk)
    return ExperimentResult(
        config=cfg,
        records=records,
        aggregates=aggregate_records(records, cfg.estimators),
        started=started,
        elapsed_seconds=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# emission


def resolve_output_dir(explicit: str | None = None) -> str:
    """Explicit argument, then the environment variable, then cwd."""
    if explicit:
        return explicit
    return os.environ.get(OUTPUT_DIR_ENV) or "."


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_outputs(result: ExperimentResult, kind: str, output_dir: str | None = None):
    """Write run records (kind="csv") or per-estimator plot data
    (kind="plotdata"); returns the written paths.

    The runs file is one long-format row per (setup, n, rep, estimator);
    plot data is one file per estimator with (n, mean, stderr) columns.
    """
    if kind not in ("csv", "plotdata"):
        raise ValueError(f"unknown output kind {kind!r}")
    if not result.records:
        raise ValueError("result has no records to emit")
    out = resolve_output_dir(output_dir or result.config.output_dir)
    try:
        os.makedirs(out, exist_ok=True)
        if kind == "csv":
            path = os.path.join(out, f"runs_{result.config.setup}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(RUNS_HEADER)
                for rec in result.records:
                    writer.writerow(
                        [rec.setup, rec.n, rec.repetition, rec.estimator, _fmt(rec.projected_rmse)]
                    )
            return [path]
        paths = []
        for name in result.config.estimators:
            path = os.path.join(out, f"plot_{result.config.setup}_{name}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(PLOT_HEADER)
                for row in result.aggregates:
                    if row.estimator == name:
                        writer.writerow([row.n, _fmt(row.mean), _fmt(row.stderr)])
            paths.append(path)
        return paths
    except OSError as err:
        raise OutputError(f"cannot write outputs under {out!r}: {err}") from err


def parse_runs_csv(path) -> tuple:
    """Read a runs file back into RunRecord tuples (seed column absent: 0)."""
    records = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(RUNS_HEADER):
            raise ValueError(f"unexpected runs header {reader.fieldnames}")
        for row in reader:
            records.append(
                RunRecord(
                    setup=row["setup"],
                    n=int(row["n"]),
                    repetition=int(row["rep"]),
                    estimator=row["estimator"],
                    projected_rmse=float(row["projected_rmse"]),
                    seed=0,
                )
            )
    return tuple(records)


# --------------------------------------------------------------------------
# condition-checker families

_CONDITION_GRID = tuple(range(100, 801, 100))


def _family_logpoly_orthogonal(n: int) -> EndogenousModel:
    return _SETUPS["i"](n)[0]


def _family_expnoise_orthogonal(n: int) -> EndogenousModel:
    return _SETUPS["ii"](n)[0]


def _family_logpoly_nonorthogonal(n: int) -> EndogenousModel:
    # steeper leakage than the simulation setups: n^-2 per top eigenvalue
    cov = build_covariance(_LOG_POLY, n, split_kind="nonorthogonal", alpha=2.0)
    i = np.arange(1, cov.p + 1, dtype=float)
    return assemble_model(cov, _coef_dense(i), whitened_cross=_rho_inverse(i))


def _family_fixed_p_identity(n: int) -> EndogenousModel:
    # fixed dimension: the signal block cannot absorb a growing sample
    cov = CovarianceModel(
        p=50,
        endo_eigs=np.zeros(50),
        signal_eigs=np.ones(50),
        trunc_level=0,
        split_kind="orthogonal",
    )
    return assemble_model(cov, np.full(50, 0.5), noise_sd=1.0)


CONDITION_FAMILIES = {
    "logpoly_orthogonal": (_family_logpoly_orthogonal, "orthogonal"),
    "expnoise_orthogonal": (_family_expnoise_orthogonal, "orthogonal"),
    "logpoly_nonorthogonal": (_family_logpoly_nonorthogonal, "nonorthogonal"),
    "fixed_p_identity": (_family_fixed_p_identity, "exogenous"),
}


def condition_family(name: str):
    """(model factory, condition mode) for a named family, accepting either
    a family name or a named setup id."""
    if name in CONDITION_FAMILIES:
        return CONDITION_FAMILIES[name]
    if name in SETUP_IDS:
        return (lambda n: setup_model(name, n)[0]), setup_mode(name)
    raise UnknownSetup(
        f"unknown family {name!r}; expected a setup id or one of {sorted(CONDITION_FAMILIES)}"
    )
