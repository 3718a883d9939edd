"""Experiment orchestration: simulation grids, bias summaries, bootstrap
confidence intervals and selection-score overlap diagnostics."""

from __future__ import annotations

import configparser
import time
from dataclasses import dataclass, field

import numpy as np

from .amputation import AmputationSpec
from .data import MaskedMatrix, StackedSample, stack
from .dgp import SimulationConfig, simulate
from .errors import (
    DegenerateSampleError,
    InfeasibleCalibrationError,
    NumericalError,
    PoolExhaustedError,
    SchemaError,
    SpecError,
)
from .estimators import MethodSpec, _membership_scores, _stratified_resample

NON_CONVERGED = "non-converged"
FAILED = "failed"


@dataclass(frozen=True)
class Scenario:
    name: str
    config: SimulationConfig


@dataclass
class ReplicationResult:
    scenario: str
    replication: int
    seed: int
    estimates: dict[str, float] = field(default_factory=dict)
    flags: dict[str, str] = field(default_factory=dict)
    wall_time: float = 0.0


@dataclass(frozen=True)
class BiasSummary:
    scenario: str
    method: str
    handler: str
    bias: float
    mc_se: float | None
    ci_low: float | None
    ci_high: float | None
    n_converged: int


@dataclass(frozen=True)
class GridConfig:
    scenarios: tuple[Scenario, ...]
    methods: tuple[MethodSpec, ...]
    reps: int = 100
    master_seed: int = 0


def _full_mask_variant(s: StackedSample) -> StackedSample:
    """Rebuild the stacked sample with every covariate marked observed.

    This is a DGP-side operation: the simulator keeps the true values under
    the mask, so exposing them yields the pre-amputation data for the
    full-data reference cells. Estimator code never does this.
    """
    cov = s.covariates
    full = MaskedMatrix(cov.values, np.ones_like(cov.mask), cov.column_names)
    return StackedSample(full, s.source, s.treatment, s.outcome)


def method_key(spec: MethodSpec) -> str:
    return f"{spec.estimator}:{spec.missing_handler}:{spec.engine}"


def run_replication(
    cfg: SimulationConfig,
    methods,
    rng: np.random.Generator,
) -> tuple[dict[str, float], dict[str, str], float]:
    trial, target, _truth = simulate(cfg, rng)
    s = stack(trial, target)
    full = _full_mask_variant(s)
    estimates: dict[str, float] = {}
    flags: dict[str, str] = {}
    for spec in methods:
        key = method_key(spec)
        data = full if spec.missing_handler == "none" else s
        try:
            from .estimators import estimate

            report = estimate(data, spec, rng)
        except (
            DegenerateSampleError,
            NumericalError,
            InfeasibleCalibrationError,
            SchemaError,
        ) as exc:
            flags[key] = f"{FAILED}: {type(exc).__name__}"
            continue
        if not report.converged:
            flags[key] = NON_CONVERGED
            continue
        estimates[key] = report.estimate
    return estimates, flags, 0.0


def run_grid(grid: GridConfig) -> list[ReplicationResult]:
    """All (scenario, replication) cells; failures become flags, never aborts."""
    results = []
    root = np.random.SeedSequence(grid.master_seed)
    scenario_seeds = root.spawn(len(grid.scenarios))
    for scenario, sseq in zip(grid.scenarios, scenario_seeds):
        rep_seeds = sseq.spawn(grid.reps)
        for rep, rseq in enumerate(rep_seeds):
            rng = np.random.default_rng(rseq)
            t0 = time.perf_counter()
            try:
                estimates, flags, _ = run_replication(scenario.config, grid.methods, rng)
            except PoolExhaustedError:
                estimates, flags = {}, {"*": f"{FAILED}: PoolExhaustedError"}
            results.append(
                ReplicationResult(
                    scenario.name,
                    rep,
                    rseq.entropy if isinstance(rseq.entropy, int) else 0,
                    estimates,
                    flags,
                    time.perf_counter() - t0,
                )
            )
    return results


def summarize_bias(results, truth: float) -> list[BiasSummary]:
    """Monte-Carlo bias and its standard error per (scenario, method) cell."""
    cells: dict[tuple[str, str], list[float]] = {}
    for r in results:
        for key, value in r.estimates.items():
            cells.setdefault((r.scenario, key), []).append(value)
    out = []
    for (scenario, key), values in sorted(cells.items()):
        est, handler, _engine = key.split(":")
        arr = np.asarray(values)
        nsim = len(arr)
        bias = float(arr.mean() - truth)
        if nsim >= 2:
            mc_se = float(np.sqrt(np.sum((arr - arr.mean()) ** 2) / (nsim * (nsim - 1))))
            ci_low, ci_high = bias - 1.96 * mc_se, bias + 1.96 * mc_se
        else:
            mc_se = ci_low = ci_high = None
        out.append(BiasSummary(scenario, est, handler, bias, mc_se, ci_low, ci_high, nsim))
    return out


def bootstrap_ci(
    s: StackedSample,
    spec: MethodSpec,
    b: int = 100,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Percentile interval from a stratified nonparametric bootstrap.

    Trial and target rows are resampled independently with replacement,
    preserving the study-specific sample sizes, and the full pipeline
    (imputation / EM / forest refits included) is rerun on each resample.
    """
    if b < 2:
        raise SpecError("need at least 2 bootstrap resamples")
    if rng is None:
        rng = np.random.default_rng(0)
    from .estimators import estimate

    points = []
    failures = 0
    for _ in range(b):
        resampled = _stratified_resample(s, rng)
        try:
            report = estimate(resampled, spec, rng)
            if not report.converged:
                raise NumericalError("non-converged resample")
            points.append(report.estimate)
        except (
            DegenerateSampleError,
            NumericalError,
            InfeasibleCalibrationError,
            SchemaError,
        ):
            failures += 1
    if failures > 0.2 * b:
        raise NumericalError(f"{failures}/{b} bootstrap resamples failed")
    lo, hi = np.percentile(points, [2.5, 97.5])
    return float(lo), float(hi)


@dataclass(frozen=True)
class OverlapReport:
    scores: np.ndarray  # membership score per stacked row
    source: np.ndarray
    bin_edges: np.ndarray
    trial_hist: np.ndarray  # bin masses, sum to 1
    target_hist: np.ndarray
    overlap_coefficient: float


def overlap_diagnostics(
    s: StackedSample,
    engine: str = "parametric",
    handler: str = "none",
    spec: MethodSpec | None = None,
    rng: np.random.Generator | None = None,
    bins: int = 50,
) -> OverlapReport:
    """Fitted selection scores per row plus shared-histogram-mass overlap."""
    spec = spec or MethodSpec(estimator="ipsw", engine=engine, missing_handler=handler)
    scores, _ = _membership_scores(s, engine, handler, spec, rng or np.random.default_rng(0))
    edges = np.linspace(0.0, 1.0, bins + 1)
    trial_scores = scores[: s.n_trial]
    target_scores = scores[s.n_trial :]
    th, _ = np.histogram(trial_scores, bins=edges)
    oh, _ = np.histogram(target_scores, bins=edges)
    th = th / max(1, th.sum())
    oh = oh / max(1, oh.sum())
    coef = float(np.minimum(th, oh).sum())
    return OverlapReport(scores, s.source.copy(), edges, th, oh, coef)


# ---------------------------------------------------------------------------
# Config file parsing ([dgp], [missingness], [methods], [run] sections).

_DGP_KEYS = {
    "n_trial": int,
    "m": int,
    "covariate_dim": int,
    "covariate_mean": float,
    "covariate_correlation": float,
    "selection_model": str,
    "outcome_model": str,
    "assumption": str,
    "pool_size": int,
}
_MISS_KEYS = {
    "mechanism": str,
    "proportion": float,
    "trial_proportion": float,
    "target_proportion": float,
    "columns": str,
}
_METHOD_KEYS = {
    "estimators": str,
    "handlers": str,
    "engine": str,
    "stabilized": bool,
    "moments": str,
    "m_imputations": int,
    "chain_iters": int,
    "mc_draws": int,
    "num_trees": int,
    "min_leaf": int,
    "subsample": float,
}
_RUN_KEYS = {"reps": int, "seed": int}


def _parse_section(parser, name, schema) -> dict:
    if name not in parser:
        return {}
    out = {}
    for key, raw in parser[name].items():
        if key not in schema:
            raise SpecError(f"unknown key {key!r} in section [{name}]")
        typ = schema[key]
        if typ is bool:
            out[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            out[key] = typ(raw.strip())
    return out


def load_grid_config(path) -> GridConfig:
    """Parse the structured config file into a one-scenario grid."""
    parser = configparser.ConfigParser()
    with open(path) as f:
        parser.read_file(f)
    for section in parser.sections():
        if section not in ("dgp", "missingness", "methods", "run"):
            raise SpecError(f"unknown section [{section}]")

    dgp_kw = _parse_section(parser, "dgp", _DGP_KEYS)
    miss = _parse_section(parser, "missingness", _MISS_KEYS)
    meth = _parse_section(parser, "methods", _METHOD_KEYS)
    run = _parse_section(parser, "run", _RUN_KEYS)

    trial_spec = target_spec = None
    if miss:
        mechanism = miss.get("mechanism", "MCAR")
        columns = None
        if "columns" in miss:
            columns = tuple(int(c) for c in miss["columns"].split(","))
        base = miss.get("proportion", 0.2)
        trial_spec = AmputationSpec(
            mechanism, miss.get("trial_proportion", base), columns
        )
        target_spec = AmputationSpec(
            mechanism, miss.get("target_proportion", base), columns
        )
    cfg = SimulationConfig(
        trial_amputation=trial_spec, target_amputation=target_spec, **dgp_kw
    )

    from .forest import MiaForestParams

    estimators = [e.strip() for e in meth.get("estimators", "aipsw").split(",")]
    handlers = [h.strip() for h in meth.get("handlers", "none").split(",")]
    forest_params = MiaForestParams(
        num_trees=meth.get("num_trees", 500),
        min_leaf=meth.get("min_leaf", 5),
        subsample=meth.get("subsample", 0.5),
    )
    methods = []
    for handler in handlers:
        for est in estimators:
            engine = meth.get("engine", "forest" if handler == "mia" else "parametric")
            if handler == "mia":
                engine = "forest"
            if handler == "em":
                engine = "parametric"
            if est == "cw" and handler in ("em", "mia"):
                continue
            methods.append(
                MethodSpec(
                    estimator=est,
                    engine=engine,
                    missing_handler=handler,
                    stabilized=meth.get("stabilized", False),
                    moments=meth.get("moments", "first"),
                    m_imputations=meth.get("m_imputations", 10),
                    chain_iters=meth.get("chain_iters", 10),
                    mc_draws=meth.get("mc_draws", 50),
                    forest_params=forest_params,
                )
            )
    scenario = Scenario("config", cfg)
    return GridConfig((scenario,), tuple(methods), run.get("reps", 100), run.get("seed", 0))


# ---------------------------------------------------------------------------
# Named presets mirroring the main simulation grids.

PRESETS = ("fig2", "fig3", "fig4", "fig9", "fig10")

_MECHANISMS = ("MCAR", "MAR", "MNAR")


def _preset_forest_params():
    from .forest import MiaForestParams

    # fewer trees than the library default to keep 100-replication grids
    # tractable; the bias ordering is insensitive to this
    return MiaForestParams(num_trees=100)


def _standard_methods(include_forest_full: bool = False) -> tuple[MethodSpec, ...]:
    fp = _preset_forest_params()
    methods = []
    for handler in ("none", "cc", "wi-mi", "ah-mi", "fe-mi"):
        for est in ("ipsw", "co", "aipsw", "cw"):
            methods.append(MethodSpec(estimator=est, missing_handler=handler))
    for est in ("ipsw", "co", "aipsw"):
        methods.append(MethodSpec(estimator=est, missing_handler="em"))
        methods.append(
            MethodSpec(estimator=est, engine="forest", missing_handler="mia", forest_params=fp)
        )
        if include_forest_full:
            methods.append(
                MethodSpec(estimator=est, engine="forest", missing_handler="none", forest_params=fp)
            )
    return tuple(methods)


def _mechanism_scenarios(selection, outcome, assumption, proportion=0.2, **kw):
    scenarios = []
    for mech in _MECHANISMS:
        spec = AmputationSpec(mech, proportion)
        cfg = SimulationConfig(
            selection_model=selection,
            outcome_model=outcome,
            assumption=assumption,
            trial_amputation=spec,
            target_amputation=spec,
            **kw,
        )
        scenarios.append(Scenario(mech.lower(), cfg))
    return tuple(scenarios)


def preset_grid(name: str, reps: int | None = None, master_seed: int = 0) -> GridConfig:
    """Scenario/method grid for each named figure preset."""
    if name == "fig2":
        scenarios = _mechanism_scenarios("StdLinear", "Linear", "Standard")
        methods = _standard_methods(include_forest_full=True)
    elif name == "fig3":
        scenarios = _mechanism_scenarios("CisLinear", "Linear", "CIS")
        methods = _standard_methods()
    elif name == "fig4":
        # study-wise MCAR: the two studies miss at different rates
        scenarios = []
        for case, (p_trial, p_target) in (("a", (0.1, 0.5)), ("b", (0.05, 0.22))):
            cfg = SimulationConfig(
                trial_amputation=AmputationSpec("MCAR", p_trial),
                target_amputation=AmputationSpec("MCAR", p_target),
            )
            scenarios.append(Scenario(f"case-{case}", cfg))
        scenarios = tuple(scenarios)
        methods = tuple(
            MethodSpec(estimator=est, missing_handler=h)
            for h in ("none", "cc", "wi-mi", "ah-mi", "fe-mi")
            for est in ("ipsw", "co", "aipsw", "cw")
        )
    elif name in ("fig9", "fig10"):
        selection = "StdNonlinear" if name == "fig9" else "CisNonlinear"
        assumption = "Standard" if name == "fig9" else "CIS"
        scenarios = _mechanism_scenarios(
            selection, "Nonlinear", assumption, n_trial=2000, m=20000
        )
        methods = _standard_methods(include_forest_full=True)
    else:
        raise SpecError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if reps is None:
        reps = 100
    return GridConfig(scenarios, methods, reps, master_seed)
