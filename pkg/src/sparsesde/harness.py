"""Experiment harness: config file in, reproducible artifacts out.

A single JSON config drives every subcommand.  The schema is versioned and
strict: unknown keys anywhere are rejected so that typos fail loudly rather
than silently running defaults.  All randomness descends from one master
seed through named SeedSequence children, which makes every artifact
byte-reproducible for a fixed (config, seed) pair.

Models may live on any finite span; estimation always happens on [0, 1].
A model on [t0, t1] is affinely rescaled, which multiplies the drift by the
span length L, the diffusion by sqrt(L) (Brownian scaling) and the jump
activity by L; the manifest records this map whenever it is not the
identity.  A Gaussian driver with covariance c*min(s,t) is simulated as
sqrt(c)-scaled Brownian motion, which has exactly that covariance; the
manifest notes the equivalence when c != 1.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .covfit import (
    CovEstimate,
    default_bandwidth_cov,
    fit_cov_grid,
    fit_diag,
    noise_variance_estimate,
    pair_scatter,
)
from .errors import (
    ConfigError,
    EstimationFailedError,
    SparseSdeError,
    ValidationError,
)
from .kernels import kernel_by_name
from .meanfit import (
    MeanEstimate,
    default_bandwidth_mean,
    fit_mean_at,
    fit_mean_curve,
)
from .model import (
    CoefficientSet,
    GaussianInitial,
    LevyConfig,
    PointMass,
    constant_model,
    expression_function,
    rescale_to_unit,
    sinusoid_model,
)
from .moments import (
    H_value,
    MomentSolution,
    cov_value,
    solve_moments,
)
from .observe import (
    ClippedLinearDesign,
    DesignConfig,
    SparseObservations,
    UniformDesign,
    export_observations_csv,
    observe,
)
from .recover import (
    CoefficientEstimate,
    SeparationPolicy,
    estimate_drift,
    estimate_total_noise,
    separate,
)
from .simulate import PathGrid, SamplePathSet, export_paths_csv, simulate_ensemble

SCHEMA_VERSION = 1

# SeedSequence tags reserved by the harness (simulate/observe use 0..3)
_STREAM_REPLICATION = 10
_STREAM_BOOTSTRAP = 20

_DEFAULTS = {
    "model": {
        "kind": "builtin",
        "name": "sinusoid",
        "params": {},
        "span": [0.0, 1.0],
        "nu_K": 1.0,
        "jump_size_law": "uniform[-1,1]",
        "driver_variance_scale": 1.0,
        "x0": {"kind": "point", "value": 1.0},
        "mu": None,
        "sigma": None,
        "xi": None,
    },
    "design": {
        "n": 100,
        "r": 10,
        "noise_sd": 0.1,
        "design_law": {"kind": "uniform"},
        "noise_law": "gaussian",
    },
    "estimation": {
        "d_mean": 2,
        "d_cov": 1,
        "h_m": "auto",
        "h_G": "auto",
        "epsilon": 0.1,
        "kernel": "epanechnikov",
        "eval_points": 51,
        "mu_threshold": "auto",
        "separation_source": "tri",
        "policy": None,
    },
    "experiment": {
        "master_seed": 20260818,
        "sim_steps": 1000,
        "replications": 20,
        "track": ["mu"],
        "B": 1000,
        "t_star": 0.5,
        "mc_paths": 10000,
        "negative_control": False,
    },
    "output": {"directory": "out"},
}


def _merge_strict(section: str, given: dict, defaults: dict) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    out = dict(defaults)
    out.update(given)
    return out


@dataclass
class ExperimentConfig:
    """Validated configuration with raw dict retained for hashing."""

    model: dict
    design: dict
    estimation: dict
    experiment: dict
    output: dict
    raw: dict = field(repr=False, default_factory=dict)

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    unknown = set(data) - {"schema_version", *_DEFAULTS}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    sections = {}
    for name, defaults in _DEFAULTS.items():
        given = data.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section '{name}' must be an object")
        sections[name] = _merge_strict(name, given, defaults)
    cfg = ExperimentConfig(**sections, raw=data)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(data)


def _validate(cfg: ExperimentConfig) -> None:
    m = cfg.model
    if m["kind"] not in ("builtin", "expressions"):
        raise ConfigError(f"model.kind must be builtin|expressions, got {m['kind']!r}")
    if m["kind"] == "builtin" and m["name"] not in ("sinusoid", "constant"):
        raise ConfigError(f"unknown builtin model {m['name']!r}")
    if m["kind"] == "builtin" and m["name"] == "constant":
        missing = {"mu", "sigma2", "xi2"} - set(m["params"])
        if missing:
            raise ConfigError(f"constant model params missing {sorted(missing)}")
    if m["kind"] == "expressions":
        for key in ("mu", "sigma", "xi"):
            if not isinstance(m[key], str):
                raise ConfigError(f"model.{key} expression required")
    span = m["span"]
    if not (isinstance(span, (list, tuple)) and len(span) == 2 and span[1] > span[0]):
        raise ConfigError(f"model.span must be [t0, t1] with t1 > t0, got {span}")
    if not (isinstance(m["nu_K"], (int, float)) and m["nu_K"] > 0):
        raise ConfigError("model.nu_K must be a positive number")
    if not (isinstance(m["driver_variance_scale"], (int, float)) and m["driver_variance_scale"] > 0):
        raise ConfigError("model.driver_variance_scale must be positive")
    x0 = m["x0"]
    if not isinstance(x0, dict) or x0.get("kind") not in ("point", "normal"):
        raise ConfigError("model.x0 must have kind point|normal")

    d = cfg.design
    n = d["n"]
    if isinstance(n, list):
        if not n or not all(isinstance(v, int) and v >= 1 for v in n):
            raise ConfigError("design.n list must hold positive integers")
    elif not (isinstance(n, int) and n >= 1):
        raise ConfigError("design.n must be a positive integer or list")
    if not (isinstance(d["r"], int) and d["r"] >= 2):
        raise ConfigError("design.r must be an integer >= 2")
    if not (isinstance(d["noise_sd"], (int, float)) and d["noise_sd"] >= 0):
        raise ConfigError("design.noise_sd must be >= 0")
    law = d["design_law"]
    if not isinstance(law, dict) or law.get("kind") not in ("uniform", "clipped-linear"):
        raise ConfigError("design.design_law.kind must be uniform|clipped-linear")
    if d["noise_law"] not in ("gaussian", "uniform"):
        raise ConfigError("design.noise_law must be gaussian|uniform")

    e = cfg.estimation
    if e["d_mean"] < 1 or e["d_cov"] < 1:
        raise ConfigError("polynomial degrees must be >= 1")
    for key in ("h_m", "h_G"):
        v = e[key]
        ok = v == "auto" or (isinstance(v, (int, float)) and v > 0)
        if not ok:
            raise ConfigError(f"estimation.{key} must be 'auto' or a positive number")
    if not (0 < e["epsilon"] < 1):
        raise ConfigError("estimation.epsilon must lie in (0, 1)")
    if e["kernel"] not in ("epanechnikov", "gaussian-truncated"):
        raise ConfigError("estimation.kernel must be epanechnikov|gaussian-truncated")
    if not (isinstance(e["eval_points"], int) and e["eval_points"] >= 5):
        raise ConfigError("estimation.eval_points must be an integer >= 5")
    thr = e["mu_threshold"]
    if not (thr == "auto" or (isinstance(thr, (int, float)) and thr > 0)):
        raise ConfigError("estimation.mu_threshold must be 'auto' or positive")
    if e["separation_source"] not in ("tri", "diag"):
        raise ConfigError("estimation.separation_source must be tri|diag")
    pol = e["policy"]
    if pol is not None:
        if not isinstance(pol, dict) or pol.get("kind") not in (
            "known-sigma",
            "known-xi",
            "known-fraction",
        ):
            raise ConfigError("estimation.policy.kind must be a known separation kind")
        if not isinstance(pol.get("expr"), str):
            raise ConfigError("estimation.policy.expr (in t) is required")

    x = cfg.experiment
    if not (isinstance(x["master_seed"], int) and x["master_seed"] >= 0):
        raise ConfigError("experiment.master_seed must be a nonnegative integer")
    if not (isinstance(x["sim_steps"], int) and x["sim_steps"] >= 1):
        raise ConfigError("experiment.sim_steps must be a positive integer")
    if not (isinstance(x["replications"], int) and x["replications"] >= 1):
        raise ConfigError("experiment.replications must be >= 1")
    if not (isinstance(x["B"], int) and x["B"] >= 2):
        raise ConfigError("experiment.B must be >= 2")
    if not (0.0 < x["t_star"] < 1.0):
        raise ConfigError("experiment.t_star must lie in (0, 1)")
    bad = set(x["track"]) - {"mu", "xi2", "s"}
    if bad:
        raise ConfigError(f"experiment.track entries unknown: {sorted(bad)}")
    if "xi2" in x["track"] and cfg.estimation["policy"] is None:
        raise ConfigError("tracking xi2 requires estimation.policy")


@dataclass
class ModelBundle:
    """Everything the pipeline needs, on native and unit time scales."""

    coeffs: CoefficientSet        # native span, driver scale folded into sigma
    levy: LevyConfig
    x0_law: object
    unit_coeffs: CoefficientSet   # affinely rescaled to [0, 1]
    unit_levy: LevyConfig
    m0: float
    D0: float
    notes: list[str]


def build_model(cfg: ExperimentConfig) -> ModelBundle:
    m = cfg.model
    span = (float(m["span"][0]), float(m["span"][1]))
    if m["kind"] == "builtin":
        if m["name"] == "sinusoid":
            base = sinusoid_model(span)
        else:
            p = m["params"]
            base = constant_model(p["mu"], p["sigma2"], p["xi2"], span)
    else:
        base = CoefficientSet(
            mu=expression_function(m["mu"]),
            sigma=expression_function(m["sigma"]),
            xi=expression_function(m["xi"]),
            span=span,
            coeff_id="expr",
        )
    notes: list[str] = []
    scale = float(m["driver_variance_scale"])
    if scale != 1.0:
        root = math.sqrt(scale)
        base_sigma = base.sigma
        base = CoefficientSet(
            mu=base.mu,
            sigma=lambda t, _f=base_sigma: root * _f(t),
            xi=base.xi,
            span=base.span,
            coeff_id=base.coeff_id + f"*driver{scale:g}",
        )
        notes.append(
            f"gaussian driver with covariance {scale:g}*min(s,t) simulated as "
            f"sqrt({scale:g})-scaled brownian motion (equal in law)"
        )
    base.validate()
    levy = LevyConfig(nu_K=float(m["nu_K"]), jump_size_law=m["jump_size_law"])
    unit_coeffs, unit_levy = rescale_to_unit(base, levy)
    if base.span != (0.0, 1.0):
        L = base.span[1] - base.span[0]
        notes.append(
            f"model span [{base.span[0]:g}, {base.span[1]:g}] rescaled to [0, 1]: "
            f"drift *{L:g}, diffusion *sqrt({L:g}), jump activity *{L:g}"
        )
    x0 = m["x0"]
    if x0["kind"] == "point":
        law = PointMass(float(x0["value"]))
        m0, D0 = law.value, law.value**2
    else:
        law = GaussianInitial(float(x0["mean"]), float(x0["sd"]))
        m0, D0 = law.mean, law.mean**2 + law.sd**2
    return ModelBundle(
        coeffs=base,
        levy=levy,
        x0_law=law,
        unit_coeffs=unit_coeffs,
        unit_levy=unit_levy,
        m0=m0,
        D0=D0,
        notes=notes,
    )


def build_design(cfg: ExperimentConfig) -> DesignConfig:
    d = cfg.design
    law_cfg = d["design_law"]
    if law_cfg["kind"] == "uniform":
        extra = set(law_cfg) - {"kind"}
        if extra:
            raise ConfigError(f"uniform design law takes no keys {sorted(extra)}")
        law = UniformDesign()
    else:
        extra = set(law_cfg) - {"kind", "floor"}
        if extra:
            raise ConfigError(f"unknown design law keys {sorted(extra)}")
        law = ClippedLinearDesign(float(law_cfg.get("floor", 0.1)))
    return DesignConfig(
        r=d["r"], noise_sd=float(d["noise_sd"]), design_law=law, noise_law=d["noise_law"]
    )


def build_policy(cfg: ExperimentConfig) -> SeparationPolicy | None:
    pol = cfg.estimation["policy"]
    if pol is None:
        return None
    return SeparationPolicy(
        kind=pol["kind"], value=expression_function(pol["expr"]), label=pol["expr"]
    )


def _single_n(cfg: ExperimentConfig) -> int:
    n = cfg.design["n"]
    if isinstance(n, list):
        raise ConfigError("this command needs a single design.n, not a list")
    return n


def simulate_paths(cfg: ExperimentConfig, bundle: ModelBundle, seed: int, n: int) -> SamplePathSet:
    grid = PathGrid(bundle.coeffs.span[0], bundle.coeffs.span[1], cfg.experiment["sim_steps"])
    return simulate_ensemble(bundle.coeffs, bundle.levy, grid, bundle.x0_law, n, seed)


@dataclass
class EstimateResult:
    mean_est: MeanEstimate
    cov_est: CovEstimate
    coeffs: CoefficientEstimate
    rho2_hat: float
    rho2_floored: bool
    h_m: float
    h_G: float


def run_estimate(
    cfg: ExperimentConfig,
    obs: SparseObservations,
    with_noise_variance: bool = True,
) -> EstimateResult:
    """Full pipeline on one observation set: mean, surface, coefficients."""
    e = cfg.estimation
    kernel = kernel_by_name(e["kernel"])
    grid = np.linspace(0.0, 1.0, e["eval_points"])
    h_m = default_bandwidth_mean(obs, e["d_mean"]) if e["h_m"] == "auto" else float(e["h_m"])
    h_G = default_bandwidth_cov(obs, e["d_cov"]) if e["h_G"] == "auto" else float(e["h_G"])

    mean_est = fit_mean_curve(obs, grid, e["d_mean"], h_m, kernel)
    thr = None if e["mu_threshold"] == "auto" else float(e["mu_threshold"])
    mu_hat, region_A, thr_used = estimate_drift(mean_est, thr)

    scatter = pair_scatter(obs)
    cov_est = fit_cov_grid(obs, grid, e["d_cov"], h_G, kernel, scatter=scatter)
    eps = float(e["epsilon"])
    s_diag, s_tri, noise_flags = estimate_total_noise(grid, mu_hat, cov_est, eps)

    nu_K = _unit_nu_K(cfg)
    policy = build_policy(cfg)
    sigma2 = xi2 = None
    flags = {"excluded": ~region_A, **noise_flags}
    if policy is not None:
        source = s_tri if e["separation_source"] == "tri" else s_diag
        sigma2, xi2, sep_flags = separate(grid, source, policy, nu_K)
        flags.update(sep_flags)

    coeffs = CoefficientEstimate(
        eval_grid=grid,
        mu_hat=mu_hat,
        region_A=region_A,
        s_diag=s_diag,
        s_tri=s_tri,
        sigma2_hat=sigma2,
        xi2_hat=xi2,
        epsilon=eps,
        nu_K=nu_K,
        flags=flags,
        policy=policy,
        mu_threshold=thr_used,
    )
    if with_noise_variance:
        rho2, floored = noise_variance_estimate(obs, cov_est, kernel)
    else:
        rho2, floored = float("nan"), False
    return EstimateResult(
        mean_est=mean_est,
        cov_est=cov_est,
        coeffs=coeffs,
        rho2_hat=rho2,
        rho2_floored=floored,
        h_m=h_m,
        h_G=h_G,
    )


def _unit_nu_K(cfg: ExperimentConfig) -> float:
    span = cfg.model["span"]
    return float(cfg.model["nu_K"]) * (float(span[1]) - float(span[0]))


def unit_truth(bundle: ModelBundle):
    """Truth functions on the unit scale for scoring simulated studies."""
    c = bundle.unit_coeffs
    nu = bundle.unit_levy.nu_K

    def mu(t):
        return c.mu(np.asarray(t, dtype=float))

    def sigma2(t):
        return c.sigma(np.asarray(t, dtype=float)) ** 2

    def xi2(t):
        return c.xi(np.asarray(t, dtype=float)) ** 2

    def s(t):
        return sigma2(t) + nu * xi2(t)

    return mu, sigma2, xi2, s


@dataclass
class EmseResult:
    n_values: list[int]
    rows: list[dict]           # one per (n, replication)
    medians: dict[int, dict]   # n -> {metric: median over successful reps}
    failures: dict[int, int]


def run_emse(cfg: ExperimentConfig) -> EmseResult:
    """Replicated simulate/observe/estimate study across sample sizes.

    Per-replication failures are recorded and skipped; a sample size whose
    failure share exceeds one half aborts the study.
    """
    n_cfg = cfg.design["n"]
    n_values = n_cfg if isinstance(n_cfg, list) else [n_cfg]
    reps = cfg.experiment["replications"]
    track = cfg.experiment["track"]
    master = cfg.experiment["master_seed"]
    bundle = build_model(cfg)
    design = build_design(cfg)
    mu_true, _, xi2_true, s_true = unit_truth(bundle)
    need_surface = bool({"xi2", "s"} & set(track))

    rows: list[dict] = []
    medians: dict[int, dict] = {}
    failures: dict[int, int] = {}
    for ni, n in enumerate(n_values):
        ok_rows = []
        for rep in range(reps):
            seed = int(
                np.random.SeedSequence([master, _STREAM_REPLICATION, ni, rep]).generate_state(1)[0]
            )
            row = {"n": n, "replication": rep, "status": "ok"}
            try:
                paths = simulate_paths(cfg, bundle, seed, n)
                obs = observe(paths, design, seed)
                res = _emse_single(cfg, obs, bundle, mu_true, xi2_true, s_true, need_surface)
                row.update(res)
                ok_rows.append(row)
            except SparseSdeError as exc:
                row["status"] = f"failed: {type(exc).__name__}"
            rows.append(row)
        failures[n] = reps - len(ok_rows)
        if failures[n] > 0.5 * reps:
            raise EstimationFailedError(
                f"{failures[n]}/{reps} replications failed at n={n}"
            )
        medians[n] = {
            key: float(np.median([r[key] for r in ok_rows]))
            for key in ok_rows[0]
            if key not in ("n", "replication", "status")
        }
    return EmseResult(n_values=n_values, rows=rows, medians=medians, failures=failures)


def _emse_single(cfg, obs, bundle, mu_true, xi2_true, s_true, need_surface) -> dict:
    e = cfg.estimation
    kernel = kernel_by_name(e["kernel"])
    grid = np.linspace(0.0, 1.0, e["eval_points"])
    h_m = default_bandwidth_mean(obs, e["d_mean"]) if e["h_m"] == "auto" else float(e["h_m"])
    mean_est = fit_mean_curve(obs, grid, e["d_mean"], h_m, kernel)
    thr = None if e["mu_threshold"] == "auto" else float(e["mu_threshold"])
    mu_hat, region_A, _ = estimate_drift(mean_est, thr)
    err2 = np.where(region_A, (mu_hat - mu_true(grid)) ** 2, 0.0)
    out = {
        "emse_mu": float(np.trapezoid(err2, grid)),
        "excluded_points": int((~region_A).sum()),
    }
    if not need_surface:
        return out
    h_G = default_bandwidth_cov(obs, e["d_cov"]) if e["h_G"] == "auto" else float(e["h_G"])
    cov_est = fit_cov_grid(obs, grid, e["d_cov"], h_G, kernel)
    eps = float(e["epsilon"])
    s_diag, s_tri, _ = estimate_total_noise(grid, mu_hat, cov_est, eps)
    source = s_tri if e["separation_source"] == "tri" else s_diag
    if "s" in cfg.experiment["track"]:
        valid = np.isfinite(source)
        err2 = np.where(valid, (np.where(valid, source, 0.0) - s_true(grid)) ** 2, 0.0)
        out["emse_s"] = float(np.trapezoid(err2, grid))
    if "xi2" in cfg.experiment["track"]:
        policy = build_policy(cfg)
        _, xi2_hat, _ = separate(grid, source, policy, _unit_nu_K(cfg))
        sel = (grid <= 0.8 + 1e-12) & np.isfinite(xi2_hat)
        if not sel.any():
            raise EstimationFailedError("no usable xi2 values on [0, 0.8]")
        out["sup_xi2"] = float(np.max(np.abs(xi2_hat[sel] - xi2_true(grid[sel]))))
    return out


@dataclass
class BootstrapResult:
    t_star: float
    B: int
    n_success: int
    point: dict[str, float]
    bmse: dict[str, float]


def run_bootstrap(
    cfg: ExperimentConfig,
    obs: SparseObservations,
    t_star: float | None = None,
    B: int | None = None,
) -> BootstrapResult:
    """Curve-level bootstrap of the pointwise estimators at t_star.

    Resamples whole curves with replacement (same n), re-runs the pointwise
    estimation per resample, and reports BMSE(q) = mean (q_b - q_orig)^2
    against the original point estimate.  Requires at least 80% of
    resamples to succeed.
    """
    e = cfg.estimation
    if t_star is None:
        t_star = float(cfg.experiment["t_star"])
    if B is None:
        B = int(cfg.experiment["B"])
    policy = build_policy(cfg)
    if policy is None:
        raise ConfigError("bootstrap needs estimation.policy to report sigma2 and xi2")
    kernel = kernel_by_name(e["kernel"])
    nu_K = _unit_nu_K(cfg)
    eps = float(e["epsilon"])
    if t_star > 1.0 - eps + 1e-12:
        raise ValidationError(f"t_star={t_star} must satisfy t <= 1 - epsilon")

    # bandwidths and drift threshold resolved once on the original data
    h_m = default_bandwidth_mean(obs, e["d_mean"]) if e["h_m"] == "auto" else float(e["h_m"])
    h_G = default_bandwidth_cov(obs, e["d_cov"]) if e["h_G"] == "auto" else float(e["h_G"])
    grid = np.linspace(0.0, 1.0, e["eval_points"])
    mean_full = fit_mean_curve(obs, grid, e["d_mean"], h_m, kernel)
    thr = None if e["mu_threshold"] == "auto" else float(e["mu_threshold"])
    _, _, thr_used = estimate_drift(mean_full, thr)

    def point_estimates(data: SparseObservations) -> dict[str, float]:
        m, dm = fit_mean_at(data, t_star, e["d_mean"], h_m, kernel)
        if abs(m) < thr_used:
            raise EstimationFailedError(f"|m_hat({t_star})| below drift threshold")
        mu = dm / m
        D, dD = fit_diag(pair_scatter(data), t_star, e["d_cov"], h_G, kernel)
        s_val = max(dD - 2.0 * mu * D, 0.0)
        tg = np.asarray([t_star])
        sigma2, xi2, _ = separate(tg, np.asarray([s_val]), policy, nu_K)
        return {"mu": float(mu), "sigma2": float(sigma2[0]), "xi2": float(xi2[0])}

    point = point_estimates(obs)
    n = obs.n
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.experiment["master_seed"], _STREAM_BOOTSTRAP])
    )
    draws = rng.integers(0, n, size=(B, n))
    reps: dict[str, list[float]] = {"mu": [], "sigma2": [], "xi2": []}
    n_success = 0
    for b in range(B):
        sample = obs.subset(draws[b])
        try:
            est = point_estimates(sample)
        except SparseSdeError:
            continue
        n_success += 1
        for key in reps:
            reps[key].append(est[key])
    if n_success < 0.8 * B:
        raise EstimationFailedError(
            f"only {n_success}/{B} bootstrap resamples produced estimates"
        )
    bmse = {
        key: float(np.mean((np.asarray(vals) - point[key]) ** 2))
        for key, vals in reps.items()
    }
    return BootstrapResult(
        t_star=t_star, B=B, n_success=n_success, point=point, bmse=bmse
    )


@dataclass
class OracleReport:
    checks: list[tuple[str, float, float, bool]]  # (name, value, tolerance, passed)
    solution: MomentSolution

    @property
    def passed(self) -> bool:
        return all(ok for _, _, _, ok in self.checks)


def _fd_first(f, x: float, h: float, lo: float, hi: float, h_edge: float | None = None) -> float:
    """Second-order first derivative, one-sided at the domain edges.

    One-sided stencils use ``h_edge`` (default ``h``); callers working on a
    piecewise-linear interpolant should pass a multiple of its cell width
    so the stencil sees curvature rather than a single linear segment.
    """
    if x - h < lo:
        he = h if h_edge is None else h_edge
        return (-3.0 * f(x) + 4.0 * f(x + he) - f(x + 2 * he)) / (2.0 * he)
    if x + h > hi:
        he = h if h_edge is None else h_edge
        return (3.0 * f(x) - 4.0 * f(x - he) + f(x - 2 * he)) / (2.0 * he)
    return (f(x + h) - f(x - h)) / (2.0 * h)


def run_oracle_check(cfg: ExperimentConfig, mc: bool = True) -> OracleReport:
    """Identity web on the moment solver, plus a Monte Carlo cross-check.

    Three routes to the noise sum sigma^2 + nu_K xi^2 are compared on
    [0, 0.9]: the diagonal route D' - 2 mu D, the triangular route
    exp(-int mu) dG/ds - mu D at a strictly interior tau, and the averaged
    route.  With the negative-control flag the web is scored against a
    deliberately wrong jump activity and must fail.
    """
    bundle = build_model(cfg)
    nu_K = bundle.unit_levy.nu_K
    sol = solve_moments(bundle.unit_coeffs, bundle.unit_levy, bundle.m0, bundle.D0)
    grid = sol.grid
    _, _, _, s_true = unit_truth(bundle)
    nu_for_target = nu_K if not cfg.experiment["negative_control"] else 2.0 * nu_K + 1.0

    def target(t):
        base = bundle.unit_coeffs.sigma(np.asarray(t, dtype=float)) ** 2
        return float(base + nu_for_target * bundle.unit_coeffs.xi(np.asarray(t, dtype=float)) ** 2)

    checks: list[tuple[str, float, float, bool]] = []
    fd = 1e-4
    fd_edge = 2.0 * float(grid[1] - grid[0])
    ts = np.round(np.arange(0.0, 0.9 + 1e-9, 0.05), 10)
    tol = 1e-4
    worst = {"diag_vs_tri": 0.0, "diag_vs_avg": 0.0, "tri_vs_avg": 0.0, "web_vs_target": 0.0}
    for t in ts:
        t = float(t)
        diag = _fd_first(
            lambda x: float(sol.second_moment_at(x)), t, fd, grid[0], grid[-1], fd_edge
        )
        diag -= 2.0 * float(sol.coeffs.mu(np.asarray([t]))[0]) * float(sol.second_moment_at(t))
        tau = min(t + 0.05, 1.0)
        dsG = _fd_first(lambda x: float(cov_value(sol, x, tau)), t, fd, grid[0], tau, fd_edge)
        tri = math.exp(-float(sol.drift_integral(t, tau))) * dsG - float(
            sol.coeffs.mu(np.asarray([t]))[0]
        ) * float(sol.second_moment_at(t))
        avg = H_value(sol, t, fd)
        worst["diag_vs_tri"] = max(worst["diag_vs_tri"], abs(diag - tri))
        worst["diag_vs_avg"] = max(worst["diag_vs_avg"], abs(diag - avg))
        worst["tri_vs_avg"] = max(worst["tri_vs_avg"], abs(tri - avg))
        worst["web_vs_target"] = max(worst["web_vs_target"], abs(avg - target(t)))
    for name, val in worst.items():
        checks.append((f"identity web {name} sup on [0,0.9]", val, tol, val <= tol))

    if mc:
        n_mc = int(cfg.experiment["mc_paths"])
        paths = simulate_paths(cfg, bundle, cfg.experiment["master_seed"], n_mc)
        pts = np.linspace(0.0, 1.0, 11)
        g = paths.grid
        abs_t = g.t0 + (g.t1 - g.t0) * pts
        idx = np.rint((abs_t - g.t0) / g.dt).astype(int)
        X = paths.values[:, idx]
        worst_m = worst_D = 0.0
        for col, u in enumerate(pts):
            xs = X[:, col]
            se_m = float(xs.std(ddof=1) / math.sqrt(n_mc))
            se_D = float((xs**2).std(ddof=1) / math.sqrt(n_mc))
            dev_m = abs(float(xs.mean()) - float(sol.mean_at(u)))
            dev_D = abs(float(np.mean(xs**2)) - float(sol.second_moment_at(u)))
            if se_m > 0:
                worst_m = max(worst_m, dev_m / (4.0 * se_m))
            if se_D > 0:
                worst_D = max(worst_D, dev_D / (4.0 * se_D))
        checks.append(("monte carlo mean within 4 SE (max ratio)", worst_m, 1.0, worst_m <= 1.0))
        checks.append(
            ("monte carlo second moment within 4 SE (max ratio)", worst_D, 1.0, worst_D <= 1.0)
        )
    return OracleReport(checks=checks, solution=sol)


# ---------------------------------------------------------------- exports


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_manifest(
    dest_dir: Path,
    command: str,
    cfg: ExperimentConfig,
    seed: int,
    notes: list[str],
    results: dict | None = None,
) -> None:
    import scipy

    manifest = {
        "command": command,
        "schema_version": SCHEMA_VERSION,
        "config": cfg.raw,
        "config_sha256": cfg.sha256(),
        "master_seed": seed,
        "package": {"name": "sparsesde", "version": __version__},
        "library_versions": {"numpy": np.__version__, "scipy": scipy.__version__},
        "notes": notes,
    }
    if results:
        manifest["results"] = results
    with open(dest_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def export_mean_csv(mean_est: MeanEstimate, dest) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "m_hat", "dm_hat", "flag"])
        for i, t in enumerate(mean_est.eval_grid):
            w.writerow(
                [_fmt(t), _fmt(mean_est.m_hat[i]), _fmt(mean_est.dm_hat[i]), int(mean_est.flags[i])]
            )


def export_surface_csv(cov_est: CovEstimate, dest) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "t", "G_hat", "dsG_hat", "dtG_hat", "flag"])
        nt = cov_est.eval_times.size
        for i in range(nt):
            for j in range(i, nt):
                w.writerow(
                    [
                        _fmt(cov_est.eval_times[i]),
                        _fmt(cov_est.eval_times[j]),
                        _fmt(cov_est.G2[i, j]),
                        _fmt(cov_est.ds2[i, j]),
                        _fmt(cov_est.dt2[i, j]),
                        int(cov_est.pair_flags[i, j]),
                    ]
                )


def export_surface_diag_csv(cov_est: CovEstimate, dest) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "D_hat", "dD_hat"])
        for i, t in enumerate(cov_est.eval_times):
            w.writerow([_fmt(t), _fmt(cov_est.D_hat[i]), _fmt(cov_est.dD_hat[i])])


def export_coefficients_csv(est: CoefficientEstimate, dest) -> None:
    flag_names = sorted(est.flags)
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mu_hat", "s_diag", "s_tri", "sigma2_hat", "xi2_hat", "flags"])
        for i, t in enumerate(est.eval_grid):
            tokens = [name for name in flag_names if est.flags[name][i]]
            sigma2 = est.sigma2_hat[i] if est.sigma2_hat is not None else float("nan")
            xi2 = est.xi2_hat[i] if est.xi2_hat is not None else float("nan")
            w.writerow(
                [
                    _fmt(t),
                    _fmt(est.mu_hat[i]),
                    _fmt(est.s_diag[i]),
                    _fmt(est.s_tri[i]),
                    _fmt(sigma2),
                    _fmt(xi2),
                    "|".join(tokens),
                ]
            )


def export_oracle_csvs(sol: MomentSolution, dest_dir: Path, grid_step: float = 0.05) -> None:
    pts = np.round(np.arange(0.0, 1.0 + 1e-9, grid_step), 10)
    with open(dest_dir / "oracle_m_D.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "m", "D"])
        for t in pts:
            w.writerow([_fmt(t), _fmt(float(sol.mean_at(t))), _fmt(float(sol.second_moment_at(t)))])
    with open(dest_dir / "oracle_G.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "t", "G"])
        for i, s in enumerate(pts):
            for t in pts[i:]:
                w.writerow([_fmt(s), _fmt(t), _fmt(float(cov_value(sol, s, t)))])


def export_emse_csv(result: EmseResult, dest_dir: Path) -> None:
    metrics = sorted(
        {k for r in result.rows for k in r if k not in ("n", "replication", "status")}
    )
    with open(dest_dir / "emse.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "replication", "status", *metrics])
        for r in result.rows:
            w.writerow(
                [r["n"], r["replication"], r["status"]]
                + [_fmt(r[k]) if k in r else "" for k in metrics]
            )
    with open(dest_dir / "emse_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "failures", *[f"median_{k}" for k in metrics]])
        for n in result.n_values:
            meds = result.medians[n]
            w.writerow(
                [n, result.failures[n]]
                + [_fmt(meds[k]) if k in meds else "" for k in metrics]
            )


def export_bootstrap_csv(result: BootstrapResult, dest_dir: Path) -> None:
    with open(dest_dir / "bootstrap_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "point_estimate", "bmse", "t_star", "B", "resamples_used"])
        for key in ("mu", "sigma2", "xi2"):
            w.writerow(
                [
                    key,
                    _fmt(result.point[key]),
                    _fmt(result.bmse[key]),
                    _fmt(result.t_star),
                    result.B,
                    result.n_success,
                ]
            )


def export_oracle_report(report: OracleReport, dest) -> None:
    with open(dest, "w") as fh:
        for name, value, tol, ok in report.checks:
            fh.write(f"{'PASS' if ok else 'FAIL'} {name}: {value:.6g} (tolerance {tol:g})\n")
        fh.write(f"{'PASS' if report.passed else 'FAIL'} overall\n")
