"""Command line experiment runner.

Every run resolves its parameters as ``defaults < --config file < flags`` and
embeds the resolved config plus the package version in the output, so any
output file can be passed back through ``--config`` to reproduce itself.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import math
import os
import sys
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import numpy as np
from scipy import stats

from . import __version__
from .core import FrictionLaw, PhysicalParams, ReflectionModel, Regime, fit_friction_law
from .core import friction_force_asymptotic, friction_force_integral, gamma_coefficient, relaxation_time
from .errors import EXIT_CODES, ConfigInvalidError, ThermometryError
from .estimators import Estimator, Protocol, mc_experiment, predict_error_kinetic, predict_error_momentum
from .fisher import (
    AsymptoticCase,
    general_fisher,
    fi_asymptotic,
    fi_gaussian,
    fi_general_closed,
    fi_numeric,
    fisher_matrix_two_bath,
    gaussian_fisher,
)
from .propagator import (
    BathStage,
    GaussianMomentumState,
    default_grid,
    evolve_fdm,
    evolve_gaussian,
    evolve_spectral,
    gaussian_grid,
    sample_trajectories,
)

OUTDIR_ENV = "IMPURITY_THERMO_OUTDIR"
COMMANDS = ("friction", "propagate", "sample", "fisher", "estimate", "two-bath", "figure1", "sweep")
TWO_BATH_CONSTANT = 6.89625

_PHYSICAL = {"M": 1.0, "m": 1.0, "v": 1.0, "G": 1.0, "hbar": 1.0, "kB": 1.0}
_LAW = {"Gamma": None, "n": None, "regime": None}
_STATE = {"P0": 1.0, "Delta": 0.0}

DEFAULTS = {
    "friction": {**_PHYSICAL, "regime": "strong-high", "reflection": "calibrated", "c": None,
                 "sweep": ["T", "1e-3:1e-1:50log"], "rtol": 1e-8, "workers": 1, "format": "csv"},
    "propagate": {**_PHYSICAL, **_LAW, "P0": 1.0, "Delta": 0.4, "T": 1.0, "t": "tau", "method": "all",
                  "n_points": 2048, "n_modes": 64, "steps_per_tau": 2000, "format": "csv"},
    "sample": {**_PHYSICAL, **_LAW, **_STATE, "T": 0.5, "t": "tau", "n_traj": 100000, "seed": 0,
               "format": "json"},
    "fisher": {**_PHYSICAL, **_LAW, "P0": 1.0, "Delta": 0.2, "T": [0.5], "t": "tau", "format": "json"},
    "estimate": {**_PHYSICAL, **_LAW, **_STATE, "estimator": "momentum-mean", "T": 0.1, "t": "tau",
                 "trials": 10000, "samples_per_trial": 1000, "seed": 0, "dump_estimates": None,
                 "format": "json"},
    "two-bath": {**_PHYSICAL, **_LAW, **_STATE, "T": [1e-2, 1e-3], "T2": None, "Gamma2": None, "t": "tau",
                 "crosscheck": False, "format": "json"},
    "figure1": {**_PHYSICAL, **_LAW, **_STATE, "T": [0.3, 0.2, 0.1], "points": 500, "t_max": 5.0,
                "format": "csv"},
    "sweep": {**_PHYSICAL, **_LAW, **_STATE, "subject": "fisher", "sweep": ["T", "1e-3:1e-1:41log"],
              "t": "tau", "workers": 1, "format": "csv"},
}


# --- value coercion ------------------------------------------------------------


def _float(value, field):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigInvalidError(f"expected a number, got {value!r}", field=field) from None
    if not math.isfinite(out):
        raise ConfigInvalidError(f"expected a finite number, got {value!r}", field=field)
    return out


def _positive(value, field):
    out = _float(value, field)
    if out <= 0:
        raise ConfigInvalidError(f"must be positive, got {value!r}", field=field)
    return out


def _int(value, field, minimum=None):
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ConfigInvalidError(f"expected an integer, got {value!r}", field=field) from None
    if isinstance(value, float) and value != out:
        raise ConfigInvalidError(f"expected an integer, got {value!r}", field=field)
    if minimum is not None and out < minimum:
        raise ConfigInvalidError(f"must be >= {minimum}, got {value!r}", field=field)
    return out


def _float_list(value, field):
    if isinstance(value, str):
        value = [v for v in value.replace(" ", "").split(",") if v]
    elif not isinstance(value, (list, tuple)):
        value = [value]
    if not value:
        raise ConfigInvalidError("empty list", field=field)
    return [_positive(v, f"{field}[{i}]") for i, v in enumerate(value)]


def parse_grid(spec, field="sweep") -> np.ndarray:
    """``a:b:N`` (linear) or ``a:b:Nlog`` (log-spaced), or an explicit comma list."""
    if isinstance(spec, (list, tuple)):
        return np.array(_float_list(spec, field))
    text = str(spec).strip()
    if ":" not in text:
        return np.array(_float_list(text, field))
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigInvalidError(f"grid must look like a:b:N or a:b:Nlog, got {spec!r}", field=field)
    lo, hi = _float(parts[0], field), _float(parts[1], field)
    count = parts[2].strip()
    log = count.endswith("log")
    n = _int(count[:-3] if log else count, field)
    if n < 1:
        raise ConfigInvalidError("grid is empty", field=field)
    if log:
        if lo <= 0 or hi <= 0:
            raise ConfigInvalidError("log grid needs positive bounds", field=field)
        return np.geomspace(lo, hi, n)
    return np.linspace(lo, hi, n)


def resolve_time(spec, law: FrictionLaw, T: float, field="t") -> float:
    """``"tau"``, ``"<k>tau"`` or a plain number."""
    if isinstance(spec, str):
        text = spec.strip().lower()
        if text.endswith("tau"):
            k = text[:-3].rstrip("*") or "1"
            return _float(k, field) * relaxation_time(law, T)
    out = _float(spec, field)
    if out < 0:
        raise ConfigInvalidError("time must be >= 0", field=field)
    return out


def _is_tau(spec) -> bool:
    return isinstance(spec, str) and spec.strip().lower() == "tau"


def _params(cfg) -> PhysicalParams:
    return PhysicalParams(**{k: _positive(cfg[k], k) for k in _PHYSICAL})


def _law(cfg, gamma_key="Gamma") -> FrictionLaw:
    gamma, n, regime = cfg.get(gamma_key), cfg.get("n"), cfg.get("regime")
    if regime is not None:
        try:
            base = gamma_coefficient(_params(cfg), Regime.parse(regime))
        except ThermometryError as exc:
            raise ConfigInvalidError(str(exc), field="regime") from None
        gamma = base.Gamma if gamma is None else gamma
        n = base.n if n is None else n
    gamma = 1.0 if gamma is None else _positive(gamma, gamma_key)
    n = 4 if n is None else _int(n, "n")
    if n not in (2, 4):
        raise ConfigInvalidError("friction exponent must be 2 or 4", field="n")
    return FrictionLaw(Gamma=gamma, n=n, provenance="regime" if regime else "user")


def _state(cfg) -> GaussianMomentumState:
    Delta = _float(cfg["Delta"], "Delta")
    if Delta < 0:
        raise ConfigInvalidError("must be >= 0", field="Delta")
    return GaussianMomentumState.from_delta(_float(cfg["P0"], "P0"), Delta)


# --- output ----------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _header(command, cfg) -> list[str]:
    return [
        f"# impurity-thermometry {__version__}",
        "# config: " + json.dumps({"command": command, "params": _clean(cfg)}, sort_keys=True),
    ]


def render_csv(command, cfg, columns, rows, footer=None) -> str:
    buf = io.StringIO()
    for line in _header(command, cfg):
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    for key, value in (footer or {}).items():
        buf.write(f"# {key}: {json.dumps(_clean(value), sort_keys=True)}\n")
    return buf.getvalue()


def render_json(command, cfg, results) -> str:
    doc = {"version": __version__, "command": command, "config": _clean(cfg), "results": _clean(results)}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_atomic(path, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.splitext(path)[1])
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("schemas/outputs.json").read_text())


def read_embedded_config(path) -> dict:
    """Config dict from a config file or from the header of an earlier output."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("#"):
        for line in text.splitlines():
            if line.startswith("# config: "):
                return json.loads(line[len("# config: "):])
        raise ConfigInvalidError("no embedded config in CSV header", field="config")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalidError(f"not valid JSON ({exc})", field="config") from None
    if not isinstance(doc, dict):
        raise ConfigInvalidError("config must be a JSON object", field="config")
    if "config" in doc and "results" in doc:
        return {"command": doc.get("command"), "params": doc["config"]}
    return doc


def validate_output(path) -> None:
    """Check an output file against the shipped schema; raises ``ValueError`` on mismatch."""
    import jsonschema

    schema = load_schema()
    with open(path) as fh:
        text = fh.read()
    if not text.startswith("#"):
        jsonschema.validate(json.loads(text), schema["json"])
        return
    lines = text.splitlines()
    cfg = json.loads(next(l for l in lines if l.startswith("# config: "))[len("# config: "):])
    header = next(l for l in lines if not l.startswith("#")).split(",")
    command = cfg["command"]
    params = cfg["params"]
    key = command
    if command == "propagate" and params.get("method") == "all":
        key = "propagate-all"
    elif command == "sweep":
        key = f"sweep-{params['subject']}"
    elif command == "estimate":
        key = "estimate-dump"
    expected = schema["csv_columns"][key]
    if expected[-1].endswith("*"):
        prefix = expected[-1][:-1]
        if header[: len(expected) - 1] != expected[:-1] or not all(h.startswith(prefix) for h in header[len(expected) - 1:]):
            raise ValueError(f"columns {header} do not match {expected}")
    elif header != expected:
        raise ValueError(f"columns {header} do not match {expected}")


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))  # ordered by grid index
    return [fn(x) for x in items]


# --- subcommands -----------------------------------------------------------------


def run_friction(cfg):
    params = _params(cfg)
    regime = Regime.parse(cfg["regime"])
    law = gamma_coefficient(params, regime)
    kind = str(cfg["reflection"]).lower()
    if kind == "calibrated":
        refl = ReflectionModel.calibrated(regime, params)
    elif kind == "unit":
        refl = ReflectionModel.unit()
    elif kind == "quadratic":
        if cfg["c"] is None:
            raise ConfigInvalidError("quadratic reflection needs c", field="c")
        refl = ReflectionModel.quadratic(_positive(cfg["c"], "c"))
    else:
        raise ConfigInvalidError(f"unknown reflection model {cfg['reflection']!r}", field="reflection")
    var, spec = cfg["sweep"]
    if var != "T":
        raise ConfigInvalidError("friction sweeps only over T", field="sweep")
    T = parse_grid(spec)
    rtol = _positive(cfg["rtol"], "rtol")

    def point(Ti):
        exact = -friction_force_integral(1.0, params, refl, Ti, rtol=rtol)
        asym = -friction_force_asymptotic(1.0, law, Ti)
        return [Ti, float(params.T_tilde(Ti)), -exact, -asym, abs(exact - asym) / asym]

    rows = _map(point, T, _int(cfg["workers"], "workers", 1))
    footer = {}
    if T.size >= 2:
        fit = fit_friction_law(params, refl, T, rtol=rtol)
        footer["fit"] = {"slope": fit.slope, "prefactor": fit.prefactor, "n": fit.law.n, "Gamma": fit.law.Gamma,
                         "asymptotic_Gamma": law.Gamma}
    return "csv", (["T", "T_tilde", "F_over_P", "F_over_P_asymptotic", "rel_error"], rows, footer)


def run_propagate(cfg):
    law = _law(cfg)
    state = _state(cfg)
    T = _positive(cfg["T"], "T")
    M = _positive(cfg["M"], "M")
    bath = BathStage(T=T, law=law, duration=resolve_time(cfg["t"], law, T), M=M)
    P = default_grid(state, bath, _int(cfg["n_points"], "n_points", 3))
    method = str(cfg["method"]).lower()
    if method not in ("gaussian", "spectral", "fdm", "all"):
        raise ConfigInvalidError(f"unknown method {method!r}", field="method")
    out = {}
    if method in ("gaussian", "all"):
        out["gaussian"] = gaussian_grid(evolve_gaussian(state, bath), P)
    if method in ("spectral", "all"):
        out["spectral"] = evolve_spectral(state, bath, _int(cfg["n_modes"], "n_modes", 8), grid=P)
    if method in ("fdm", "all"):
        out["fdm"] = evolve_fdm(gaussian_grid(state, P), bath, dt=bath.tau / _int(cfg["steps_per_tau"], "steps_per_tau", 1))
    footer = {name: {"mass": g.mass(), "mean": g.mean(), "variance": g.variance()} for name, g in out.items()}
    if method == "all":
        ref = out["gaussian"]
        footer["agreement"] = {"spectral_sup": out["spectral"].sup_distance(ref), "fdm_l1": out["fdm"].l1_distance(ref)}
        cols = ["P", "f_gaussian", "f_spectral", "f_fdm"]
        rows = zip(P, out["gaussian"].f, out["spectral"].f, out["fdm"].f)
    else:
        cols = ["P", "f"]
        rows = zip(P, out[method].f)
    return "csv", (cols, [list(r) for r in rows], footer)


def run_sample(cfg):
    law = _law(cfg)
    state = _state(cfg)
    T = _positive(cfg["T"], "T")
    bath = BathStage(T=T, law=law, duration=resolve_time(cfg["t"], law, T), M=_positive(cfg["M"], "M"))
    n = _int(cfg["n_traj"], "n_traj", 1)
    samples = sample_trajectories(state, bath, n, _int(cfg["seed"], "seed", 0))
    if cfg["format"] == "csv":
        return "csv", (["P"], [[p] for p in samples], {})
    final = evolve_gaussian(state, bath)
    if final.variance > 0:
        ks = stats.kstest(samples, "norm", args=(final.mean, final.std))
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    else:
        ks_stat, ks_p = None, None
    return "json", {
        "n_traj": n,
        "mean": float(samples.mean()),
        "variance": float(samples.var(ddof=1)) if n > 1 else 0.0,
        "predicted_mean": final.mean,
        "predicted_variance": final.variance,
        "ks_statistic": ks_stat,
        "ks_pvalue": ks_p,
    }


def _asymptotic_case(t_spec, state: GaussianMomentumState) -> AsymptoticCase:
    if _is_tau(t_spec):
        if state.variance > 0:
            return AsymptoticCase.TAU_DELTA_POS
        return AsymptoticCase.TAU_DELTA_ZERO if state.mean != 0 else AsymptoticCase.TAU_P0_ZERO
    return AsymptoticCase.LOWT_DELTA_POS if state.variance > 0 else AsymptoticCase.LOWT_DELTA_ZERO


def _asymptotic_value(case, T, law, state, M, t):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = fi_asymptotic(case, T, law.n, P0=state.mean, Delta=state.Delta, M=M, Gamma=law.Gamma, t=t)
    return rep, (str(caught[-1].message) if caught else None)


def run_fisher(cfg):
    law = _law(cfg)
    state = _state(cfg)
    M = _positive(cfg["M"], "M")
    results = []
    for T in _float_list(cfg["T"], "T"):
        bath = BathStage(T=T, law=law, duration=resolve_time(cfg["t"], law, T), M=M)
        for rep in (fi_numeric(state, bath), fi_gaussian(state, bath), fi_general_closed(state, bath)):
            results.append({**rep.to_dict(), "warning": None})
        rep, warning = _asymptotic_value(_asymptotic_case(cfg["t"], state), T, law, state, M, bath.duration)
        results.append({**rep.to_dict(), "warning": warning})
    return "json", results


def run_estimate(cfg):
    law = _law(cfg)
    state = _state(cfg)
    T = _positive(cfg["T"], "T")
    M = _positive(cfg["M"], "M")
    protocol = Protocol(state=state, law=law, t=resolve_time(cfg["t"], law, T), M=M)
    report, T_hat = mc_experiment(
        Estimator.parse(cfg["estimator"]),
        protocol,
        T,
        _int(cfg["trials"], "trials", 100),
        _int(cfg["samples_per_trial"], "samples_per_trial", 1),
        _int(cfg["seed"], "seed", 0),
        return_estimates=True,
    )
    extra = None
    if cfg.get("dump_estimates"):
        extra = (cfg["dump_estimates"], (["trial", "T_hat"], [[i, v] for i, v in enumerate(T_hat)], {}))
    return "json", report.to_dict(), extra


def run_two_bath(cfg):
    law1 = _law(cfg)
    law2 = _law(cfg, "Gamma2") if cfg.get("Gamma2") is not None else law1
    state = _state(cfg)
    M = _positive(cfg["M"], "M")
    T1s = _float_list(cfg["T"], "T")
    T2s = _float_list(cfg["T2"], "T2") if cfg.get("T2") is not None else T1s
    if len(T2s) != len(T1s):
        raise ConfigInvalidError("T2 must have as many entries as T", field="T2")
    results = []
    for T1, T2 in zip(T1s, T2s):
        s1 = BathStage(T=T1, law=law1, duration=resolve_time(cfg["t"], law1, T1), M=M)
        s2 = BathStage(T=T2, law=law2, duration=resolve_time(cfg["t"], law2, T2), M=M)
        chi = fisher_matrix_two_bath(state, s1, s2, crosscheck=bool(cfg["crosscheck"]))
        results.append({
            "T1": T1, "T2": T2, "t1": s1.duration, "t2": s2.duration,
            **chi.to_dict(),
            "trace_bound_over_T2": chi.trace_bound / (T1 * T2),
            "reference_constant": TWO_BATH_CONSTANT,
        })
    return "json", results


def figure1_curves(T_values, P0=1.0, M=1.0, n=4, Gamma=1.0, points=500, t_max=5.0, Delta=0.0):
    """Ratio of the fixed-time Fisher information to its fixed-momentum, ``t = tau`` limit.

    Returns the ``t/tau`` grid and one ratio curve per temperature.
    """
    s = np.linspace(0.0, t_max, points)
    curves = {}
    for T in T_values:
        tau = 1.0 / (Gamma * T**n)
        ref = n**2 * P0**2 / (M * T**3 * (math.e**2 - 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            fi = gaussian_fisher(T, s * tau, P0, Delta / 2, M, Gamma, n)
        fi = np.where(s == 0, 0.0, fi)  # t = 0 carries no information
        curves[T] = fi / ref
    return s, curves


def run_figure1(cfg):
    law = _law(cfg)
    T_values = _float_list(cfg["T"], "T")
    s, curves = figure1_curves(
        T_values, P0=_float(cfg["P0"], "P0"), M=_positive(cfg["M"], "M"), n=law.n, Gamma=law.Gamma,
        points=_int(cfg["points"], "points", 2), t_max=_positive(cfg["t_max"], "t_max"),
        Delta=_float(cfg["Delta"], "Delta"),
    )
    cols = ["t_over_tau"] + [f"gamma_T={T:g}" for T in T_values]
    rows = [[s[i]] + [curves[T][i] for T in T_values] for i in range(s.size)]
    footer = {"max_gamma": {f"{T:g}": float(curves[T].max()) for T in T_values},
              "argmax_t_over_tau": {f"{T:g}": float(s[int(curves[T].argmax())]) for T in T_values}}
    return "csv", (cols, rows, footer)


def emit_sweep(subject, grid, law: FrictionLaw, state: GaussianMomentumState, M=1.0, t_spec="tau", workers=1):
    """Side-by-side method variants over a temperature grid, plus a log-log slope fit.

    Returns ``(columns, rows, footer)``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigInvalidError("sweep grid is empty", field="sweep")
    case = _asymptotic_case(t_spec, state)

    def rel(a, b):
        return abs(a - b) / abs(b) if b else math.nan

    def fisher_row(T):
        bath = BathStage(T=T, law=law, duration=resolve_time(t_spec, law, T), M=M)
        num = fi_numeric(state, bath).value
        gau = fi_gaussian(state, bath).value
        gen = float(general_fisher(T, bath.duration, state.mean, state.Delta, M, law.Gamma, law.n))
        asy = _asymptotic_value(case, T, law, state, M, bath.duration)[0].value
        return [T, num, gau, gen, asy, rel(num, gau), rel(gen, gau), rel(asy, gau)]

    def error_row(T):
        t = resolve_time(t_spec, law, T)
        protocol = Protocol(state=state, law=law, t=t, M=M)
        fi = float(gaussian_fisher(T, t, state.mean, state.variance, M, law.Gamma, law.n))
        if subject == "error-momentum":
            pred = predict_error_momentum(protocol, T)
            asy_case = case
        else:
            pred = predict_error_kinetic(protocol, T)
            asy_case = (AsymptoticCase.TAU_DELTA_POS if state.variance > 0 else AsymptoticCase.TAU_P0_ZERO) \
                if _is_tau(t_spec) else case
        asy = 1.0 / _asymptotic_value(asy_case, T, law, state, M, t)[0].value
        return [T, pred, 1.0 / fi, asy, rel(pred, 1.0 / fi), rel(asy, pred)]

    if subject == "fisher":
        cols = ["T", "fi_numeric", "fi_gaussian", "fi_general", "fi_asymptotic",
                "dev_numeric_gaussian", "dev_general_gaussian", "dev_asymptotic_gaussian"]
        rows = _map(fisher_row, grid, workers)
        fit_col = 2
    elif subject in ("error-momentum", "error-kinetic"):
        cols = ["T", "predicted", "crb", "asymptotic", "dev_predicted_crb", "dev_asymptotic_predicted"]
        rows = _map(error_row, grid, workers)
        fit_col = 1
    else:
        raise ConfigInvalidError(f"unknown sweep subject {subject!r}", field="subject")
    footer = {}
    if grid.size >= 2:
        y = np.array([r[fit_col] for r in rows])
        slope, intercept = np.polyfit(np.log(grid), np.log(y), 1)
        footer["fit"] = {"column": cols[fit_col], "slope": slope, "prefactor": math.exp(intercept)}
    return cols, rows, footer


def run_sweep(cfg):
    var, spec = cfg["sweep"]
    if var != "T":
        raise ConfigInvalidError("sweeps run over T", field="sweep")
    cols, rows, footer = emit_sweep(
        str(cfg["subject"]), parse_grid(spec), _law(cfg), _state(cfg), M=_positive(cfg["M"], "M"),
        t_spec=cfg["t"], workers=_int(cfg["workers"], "workers", 1),
    )
    return "csv", (cols, rows, footer)


RUNNERS = {
    "friction": run_friction,
    "propagate": run_propagate,
    "sample": run_sample,
    "fisher": run_fisher,
    "estimate": run_estimate,
    "two-bath": run_two_bath,
    "figure1": run_figure1,
    "sweep": run_sweep,
}


# --- argument handling -----------------------------------------------------------

_S = argparse.SUPPRESS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impurity-thermo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, physical=True, law=True, state=True):
        p.add_argument("--config", default=_S, help="JSON config or an earlier output file")
        p.add_argument("--out", default=_S, help=f"output path ('-' for stdout; default dir ${OUTDIR_ENV})")
        p.add_argument("--format", choices=["csv", "json"], default=_S)
        p.add_argument("--seed", type=int, default=_S)
        if physical:
            for name in _PHYSICAL:
                p.add_argument(f"--{name}", default=_S)
        if law:
            p.add_argument("--Gamma", default=_S)
            p.add_argument("--n", default=_S)
            p.add_argument("--regime", default=_S, choices=[r.value for r in Regime])
        if state:
            p.add_argument("--P0", default=_S)
            p.add_argument("--Delta", default=_S)

    p = sub.add_parser("friction", help="integral vs asymptotic friction over a T sweep")
    common(p, law=False, state=False)
    p.add_argument("--regime", default=_S, choices=[r.value for r in Regime])
    p.add_argument("--reflection", default=_S, choices=["calibrated", "unit", "quadratic"])
    p.add_argument("--c", default=_S)
    p.add_argument("--sweep", nargs=2, metavar=("VAR", "GRID"), default=_S)
    p.add_argument("--rtol", default=_S)
    p.add_argument("--workers", default=_S)

    p = sub.add_parser("propagate", help="momentum density on a grid by each propagator")
    common(p)
    p.add_argument("--T", default=_S)
    p.add_argument("--t", default=_S)
    p.add_argument("--method", default=_S, choices=["gaussian", "spectral", "fdm", "all"])
    p.add_argument("--n-points", dest="n_points", default=_S)
    p.add_argument("--n-modes", dest="n_modes", default=_S)
    p.add_argument("--steps-per-tau", dest="steps_per_tau", default=_S)

    p = sub.add_parser("sample", help="exact Ornstein-Uhlenbeck momentum samples")
    common(p)
    p.add_argument("--T", default=_S)
    p.add_argument("--t", default=_S)
    p.add_argument("--n-traj", dest="n_traj", default=_S)

    p = sub.add_parser("fisher", help="Fisher information by every method")
    common(p)
    p.add_argument("--T", default=_S)
    p.add_argument("--t", default=_S)

    p = sub.add_parser("estimate", help="Monte Carlo estimator experiment")
    common(p)
    p.add_argument("--estimator", default=_S, choices=[e.value for e in Estimator])
    p.add_argument("--T", default=_S)
    p.add_argument("--t", default=_S)
    p.add_argument("--trials", default=_S)
    p.add_argument("--samples-per-trial", dest="samples_per_trial", default=_S)
    p.add_argument("--dump-estimates", dest="dump_estimates", default=_S)

    p = sub.add_parser("two-bath", help="two-temperature Fisher matrix and trace bound")
    common(p)
    p.add_argument("--T", default=_S, help="comma list; T1 = T2 = T unless --T2 is given")
    p.add_argument("--T2", default=_S)
    p.add_argument("--Gamma2", default=_S)
    p.add_argument("--t", default=_S)
    p.add_argument("--crosscheck", action="store_true", default=_S)

    p = sub.add_parser("figure1", help="Fisher-information ratio curves versus t/tau")
    common(p)
    p.add_argument("--T", default=_S)
    p.add_argument("--points", default=_S)
    p.add_argument("--t-max", dest="t_max", default=_S)

    p = sub.add_parser("sweep", help="method comparison over a temperature sweep")
    common(p)
    p.add_argument("--subject", default=_S, choices=["fisher", "error-momentum", "error-kinetic"])
    p.add_argument("--sweep", nargs=2, metavar=("VAR", "GRID"), default=_S)
    p.add_argument("--t", default=_S)
    p.add_argument("--workers", default=_S)
    return parser


def resolve_config(command: str, file_cfg: dict, flags: dict) -> dict:
    if file_cfg.get("command") not in (None, command):
        raise ConfigInvalidError(f"config is for {file_cfg['command']!r}, not {command!r}", field="command")
    file_params = file_cfg.get("params", file_cfg)
    file_params = {k: v for k, v in file_params.items() if k != "command"}
    defaults = DEFAULTS[command]
    unknown = sorted(set(file_params) - set(defaults))
    if unknown:
        raise ConfigInvalidError(f"unknown keys {unknown}", field="config")
    cfg = {**defaults, **file_params, **flags}
    if cfg.get("format") not in ("csv", "json"):
        raise ConfigInvalidError("must be csv or json", field="format")
    return cfg


def run(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    out = args.pop("out", None)
    try:
        file_cfg = read_embedded_config(config_path) if config_path else {}
        cfg = resolve_config(command, file_cfg, args)
        result = RUNNERS[command](cfg)
        kind, payload = result[0], result[1]
        extra = result[2] if len(result) > 2 else None
        if kind == "csv" and cfg["format"] == "json":
            cols, rows, footer = payload
            payload = {"columns": cols, "rows": rows, "footer": footer}
            kind = "json"
        elif kind == "json" and cfg["format"] == "csv":
            raise ConfigInvalidError(f"{command} produces JSON only", field="format")
        text = render_json(command, cfg, payload) if kind == "json" else render_csv(command, cfg, *payload)
        if out is None:
            out = os.path.join(os.environ.get(OUTDIR_ENV, "."), f"{command}.{kind}")
        write_atomic(out, text)
        if extra is not None:
            path, (cols, rows, footer) = extra
            write_atomic(path, render_csv(command, cfg, cols, rows, footer))
    except ThermometryError as exc:
        print(f"impurity-thermo {command}: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.kind, 1)
    except OSError as exc:
        print(f"impurity-thermo {command}: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
