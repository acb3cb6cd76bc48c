"""Synthetic contaminated-source data, Monte-Carlo replication and error metrics.

Replication ``k`` of an experiment with master seed ``s`` draws everything
(target data, external data, Poisson subsamples) from
``np.random.default_rng(np.random.SeedSequence(s, spawn_key=(k,)))``, the
same stream ``SeedSequence(s).spawn(...)[k]`` would give.  Results are folded
in replication order, so serial and parallel runs agree exactly.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .datamodel import PenaltySpec, RegressionDataset, SubsampleSelection, assemble_problem
from .errors import DimensionMismatch, EmptyInput, SubtransferError, ValidationError
from .estimator import SolverSettings, combine_estimators, fit_ols, predict, weighted_gram
from .sampling import (
    leverage_norms,
    merge_selections,
    osmac_probabilities,
    poisson_sample,
    target_guided_select,
    uniform_probabilities,
    water_fill,
    SamplingProbabilities,
)
from .tuning import tune

CASES = ("SP", "HT", "HL")
TAILS = ("normal", "t3")
ESTIMATORS = ("target", "full", "uniform", "leverage", "tg", "comb_data", "comb_est", "osmac")
# estimators whose result does not depend on the sampling rate
RATE_FREE = ("target", "full")
RESULT_COLUMNS = ("case", "covariate_tail", "estimator", "rate", "K_effective",
                  "emse", "ebias2", "evar", "failures")


@dataclass(frozen=True)
class ScenarioConfig:
    """Data-generating design.

    Defaults reproduce the large-scale design (AR(1) covariates with
    correlation 0.5, intercept 1, all-ones slopes).  The SP case draws a
    shift ``sp_shift + Gamma(sp_gamma_shape, scale=sp_gamma_scale)`` for a
    random ``sp_fraction`` of rows.
    """

    n_S: int = 150
    n_B: int = 20000
    d_covariates: int = 100
    covariate_tail: str = "normal"
    case: str = "SP"
    sp_fraction: float = 0.7
    intercept: float = 1.0
    coef: float | tuple = 1.0
    noise_sd: float = 1.0
    master_seed: int = 0
    include_intercept: bool = True
    covariance: str = "ar1"
    ar_rho: float = 0.5
    covariate_var: float = 1.0
    sp_shift: float = 2.0
    sp_gamma_shape: float = 1.0
    sp_gamma_scale: float = 1.0

    def __post_init__(self):
        for name in ("n_S", "n_B", "d_covariates"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.case not in CASES:
            raise ValidationError(f"unknown case {self.case!r}")
        if self.covariate_tail not in TAILS:
            raise ValidationError(f"unknown covariate_tail {self.covariate_tail!r}")
        if self.covariance not in ("ar1", "identity"):
            raise ValidationError(f"unknown covariance {self.covariance!r}")
        if not 0.0 <= self.sp_fraction <= 1.0:
            raise ValidationError("sp_fraction must lie in [0, 1]")
        if self.noise_sd < 0 or self.covariate_var <= 0:
            raise ValidationError("noise_sd must be >= 0 and covariate_var > 0")
        if not isinstance(self.coef, (int, float)):
            coef = tuple(float(c) for c in self.coef)
            if len(coef) != self.d_covariates:
                raise ValidationError("coef must have d_covariates entries")
            object.__setattr__(self, "coef", coef)

    @property
    def d(self) -> int:
        return self.d_covariates + int(self.include_intercept)

    @property
    def beta_true(self) -> np.ndarray:
        theta = np.broadcast_to(np.asarray(self.coef, dtype=float), (self.d_covariates,))
        if self.include_intercept:
            return np.concatenate(([self.intercept], theta))
        return np.array(theta)

    def covariance_matrix(self) -> np.ndarray:
        if self.covariance == "identity":
            return self.covariate_var * np.eye(self.d_covariates)
        return self.covariate_var * ar1_covariance(self.d_covariates, self.ar_rho)


def toy_osmac_scenario(master_seed: int = 0) -> ScenarioConfig:
    """Small design showing how residual-driven subsampling picks outliers.

    20 target rows, 2000 external rows, an intercept plus nine independent
    covariates with variance 4, a quarter of external rows shifted by
    Gamma(shape 3, scale 3).
    """
    return ScenarioConfig(
        n_S=20, n_B=2000, d_covariates=9, case="SP", sp_fraction=0.25,
        include_intercept=True, covariance="identity", covariate_var=4.0,
        sp_shift=0.0, sp_gamma_shape=3.0, sp_gamma_scale=3.0, master_seed=master_seed,
    )


def replication_rng(master_seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(k,)))


def ar1_covariance(dim: int, rho: float = 0.5) -> np.ndarray:
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    i = np.arange(dim)
    return rho ** np.abs(i[:, None] - i[None, :])


def gen_covariates(n: int, config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """``n`` rows of covariates, prefixed with a ones column if the design has an intercept.

    Heavy tails use the multivariate t with 3 degrees of freedom:
    ``g / sqrt(w / 3)``, ``g ~ N(0, Sigma)``, ``w ~ chi2(3)``.
    """
    L = np.linalg.cholesky(config.covariance_matrix())
    Z = rng.standard_normal((n, config.d_covariates)) @ L.T
    if config.covariate_tail == "t3":
        w = rng.chisquare(3, size=n)
        Z = Z / np.sqrt(w / 3.0)[:, None]
    if config.include_intercept:
        return np.hstack([np.ones((n, 1)), Z])
    return Z


def gen_target(config: ScenarioConfig, rng: np.random.Generator) -> RegressionDataset:
    X = gen_covariates(config.n_S, config, rng)
    y = X @ config.beta_true + config.noise_sd * rng.standard_normal(config.n_S)
    return RegressionDataset(X, y)


def gen_shifts(X: np.ndarray, config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    if config.case == "SP":
        hit = rng.random(n) < config.sp_fraction
        draws = config.sp_shift + rng.gamma(config.sp_gamma_shape, config.sp_gamma_scale, size=n)
        return np.where(hit, draws, 0.0)
    if config.case == "HT":
        # |t_2| = |N(0,1)| / sqrt(chi2_2 / 2)
        return np.abs(rng.standard_normal(n) / np.sqrt(rng.chisquare(2, size=n) / 2.0))
    d = X.shape[1]
    lev = leverage_norms(X) ** 2
    xi = rng.gamma(1.0, 1.0, size=n)
    return (n / (d - 1)) * xi * lev


def gen_external(config: ScenarioConfig, rng: np.random.Generator
                 ) -> tuple[RegressionDataset, np.ndarray]:
    X = gen_covariates(config.n_B, config, rng)
    gamma = gen_shifts(X, config, rng)
    y = X @ config.beta_true + gamma + config.noise_sd * rng.standard_normal(config.n_B)
    return RegressionDataset(X, y), gamma


# -- metrics -----------------------------------------------------------------

def _trim_bounds(K: int, alpha: float) -> tuple[int, int]:
    lo = max(1, math.floor(alpha * K + 1e-9))
    hi = math.floor((1 - alpha) * K + 1e-9)
    return lo, hi


def trimmed_mean(values, alpha: float = 0.1) -> float:
    """``sum_{i=lo}^{hi} v_(i) / ((1 - 2 alpha) K)`` with ``lo = max(1, floor(alpha K))``
    and ``hi = floor((1 - alpha) K)`` (1-based order statistics)."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    K = v.size
    if K == 0:
        raise EmptyInput("trimmed mean of an empty set")
    if not 0 <= alpha < 0.5:
        raise ValidationError(f"alpha {alpha} outside [0, 0.5)")
    lo, hi = _trim_bounds(K, alpha)
    return float(math.fsum(v[lo - 1:hi]) / ((1 - 2 * alpha) * K))


@dataclass(frozen=True)
class MetricsSummary:
    emse: float
    ebias2: float
    evar: float
    K: int
    # |mean sq. error - bias^2 - mean sq. spread|, zero up to rounding for untrimmed means
    identity_residual: float = 0.0


def evaluate_estimates(estimates, beta_true, alpha: float = 0.1) -> MetricsSummary:
    B = np.atleast_2d(np.asarray(estimates, dtype=float))
    if B.size == 0 or B.shape[0] == 0:
        raise EmptyInput("no estimates")
    b0 = np.asarray(beta_true, dtype=float)
    if B.shape[1] != b0.shape[0]:
        raise DimensionMismatch("estimates and beta_true differ in length")
    mean = B.mean(axis=0)
    err = np.sum((B - b0) ** 2, axis=1)
    spread = np.sum((B - mean) ** 2, axis=1)
    bias2 = float(np.sum((mean - b0) ** 2))
    gap = abs(err.mean() - bias2 - spread.mean())
    return MetricsSummary(
        emse=trimmed_mean(err, alpha),
        ebias2=bias2,
        evar=trimmed_mean(spread, alpha),
        K=B.shape[0],
        identity_residual=float(gap),
    )


def emspe(fits, test_sets, alpha: float = 0.1) -> float:
    """Trimmed mean over replications of the mean squared prediction error."""
    fits, test_sets = list(fits), list(test_sets)
    if not fits:
        raise EmptyInput("no fits")
    if len(fits) != len(test_sets):
        raise DimensionMismatch(f"{len(fits)} fits but {len(test_sets)} test sets")
    errs = []
    for beta, data in zip(fits, test_sets):
        r = data.y - predict(getattr(beta, "beta", beta), data.X)
        errs.append(float(np.mean(r * r)))
    return trimmed_mean(errs, alpha)


# -- experiments -------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    replications: int = 500
    rates: tuple = (0.0075, 0.03, 0.12, 0.48)
    estimators: tuple = ESTIMATORS
    penalty: str = "L1"
    criterion: str = "bic"
    grid_size: int = 20
    lambda_span: float = 1e4
    combined_fraction: float = 0.5
    alpha: float = 0.1
    tol: float = 1e-8
    max_iter: int = 1000
    osmac_pilot: str = "target"
    output: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if not self.rates or any(not 0 < r <= 1 for r in self.rates):
            raise ValidationError("rates must lie in (0, 1]")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown or not self.estimators:
            raise ValidationError(f"unknown estimators {unknown}")
        if str(self.criterion).lower() not in ("aic", "bic"):
            raise ValidationError(f"unknown criterion {self.criterion!r}")
        if str(self.penalty).upper() not in ("L1", "L2"):
            raise ValidationError(f"unknown penalty {self.penalty!r}")
        if self.grid_size < 2:
            raise ValidationError("grid_size must be >= 2")
        if not 0 <= self.combined_fraction <= 1:
            raise ValidationError("combined_fraction must lie in [0, 1]")
        if not 0 <= self.alpha < 0.5:
            raise ValidationError("alpha must lie in [0, 0.5)")
        if self.osmac_pilot not in ("target", "external", "true"):
            raise ValidationError(f"unknown osmac_pilot {self.osmac_pilot!r}")

    @property
    def master_seed(self) -> int:
        return self.scenario.master_seed


@dataclass
class ReplicationOutcome:
    """Per-replication estimates keyed by ``(estimator, rate)``.

    ``contaminated`` holds the fraction of selected external rows with a
    nonzero true shift; ``sizes`` the realised subsample size.
    """

    k: int
    betas: dict = field(default_factory=dict)
    contaminated: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)


def _tuned_fit(target, external, selection, exp: ExperimentConfig):
    pen = PenaltySpec(exp.penalty, 1.0)
    problem = assemble_problem(target, external, selection, pen)
    settings = SolverSettings(tol=exp.tol, max_iter=exp.max_iter)
    fit, _ = tune(problem, exp.criterion, exp.grid_size, settings, exp.lambda_span)
    return fit


def run_replication(exp: ExperimentConfig, k: int) -> ReplicationOutcome:
    """One replication: fresh data from stream ``k``, then every estimator at every rate."""
    rng = replication_rng(exp.master_seed, k)
    sc = exp.scenario
    target = gen_target(sc, rng)
    external, gamma_true = gen_external(sc, rng)
    out = ReplicationOutcome(k)
    n_B = external.n
    dirty = gamma_true != 0
    wanted = set(exp.estimators)

    def record(name, rate, fn):
        try:
            res = fn()
        except SubtransferError as err:
            out.errors[(name, rate)] = f"{type(err).__name__}: {err}"
            return
        beta, sel = res if isinstance(res, tuple) else (res, None)
        out.betas[(name, rate)] = np.asarray(beta)
        if sel is not None:
            out.sizes[(name, rate)] = len(sel)
            out.contaminated[(name, rate)] = float(dirty[sel.indices].mean()) if len(sel) else 0.0

    beta_T = fit_ols(target)
    for name in RATE_FREE:
        if name not in wanted:
            continue
        if name == "target":
            res = (beta_T, None)
        else:
            try:
                sel = SubsampleSelection.unit(np.arange(n_B), n_B)
                res = (_tuned_fit(target, external, sel, exp).beta, sel)
            except SubtransferError as err:
                res = err
        for rate in exp.rates:
            record(name, rate, (lambda res=res: _raise_or(res)))

    t_lev = None
    if wanted & {"leverage", "comb_data", "comb_est"}:
        t_lev = leverage_norms(external.X)
    c = exp.combined_fraction
    V_T = weighted_gram(target.X)

    for rate in exp.rates:
        r = rate * n_B
        r_int = max(1, min(n_B, int(round(r))))
        if "uniform" in wanted:
            def _uniform():
                sel = poisson_sample(uniform_probabilities(n_B, r), rng)
                return _tuned_fit(target, external, sel, exp).beta, sel
            record("uniform", rate, _uniform)
        if "leverage" in wanted:
            def _leverage():
                pi, _, _ = water_fill(t_lev, r)
                sel = poisson_sample(SamplingProbabilities(pi, r, scores=t_lev), rng)
                return _tuned_fit(target, external, sel, exp).beta, sel
            record("leverage", rate, _leverage)
        if "tg" in wanted:
            def _tg():
                sel = target_guided_select(external, beta_T, r_int)
                return _tuned_fit(target, external, sel, exp).beta, sel
            record("tg", rate, _tg)
        if wanted & {"comb_data", "comb_est"}:
            parts = _split_draw(external, beta_T, t_lev, r, c, rng)
            if "comb_data" in wanted:
                def _cd():
                    sel = merge_selections(parts[0], parts[1], n_B, r)
                    return _tuned_fit(target, external, sel, exp).beta, sel
                record("comb_data", rate, _cd)
            if "comb_est" in wanted:
                def _ce():
                    tg, rs = parts
                    betas = []
                    for sel in (rs, tg):
                        betas.append(_tuned_fit(target, external, sel, exp).beta if sel is not None else None)
                    b_rs, b_tg = betas
                    if b_rs is None:
                        return b_tg, tg
                    if b_tg is None:
                        return b_rs, rs
                    V_rs = weighted_gram(external.X[rs.indices], rs.weights)
                    V_tg = weighted_gram(external.X[tg.indices])
                    beta = combine_estimators(b_rs, b_tg, V_T, V_rs, V_tg)
                    return beta, merge_selections(tg, rs, n_B, r)
                record("comb_est", rate, _ce)
        if "osmac" in wanted:
            def _osmac():
                pilot = {"target": lambda: beta_T, "external": lambda: fit_ols(external),
                         "true": lambda: sc.beta_true}[exp.osmac_pilot]()
                probs = osmac_probabilities(external.X, external.y, pilot, r)
                sel = poisson_sample(probs, rng)
                return _tuned_fit(target, external, sel, exp).beta, sel
            record("osmac", rate, _osmac)
    return out


def _raise_or(res):
    if isinstance(res, Exception):
        raise res
    return res


def _split_draw(external, beta_T, t_lev, r_total, c, rng):
    """Target-guided part of size ``ceil(c r)`` and leverage Poisson part of nominal ``(1-c) r``."""
    r_tg = math.ceil(c * r_total - 1e-9) if c > 0 else 0
    tg = target_guided_select(external, beta_T, min(r_tg, external.n)) if r_tg else None
    rs = None
    if c < 1:
        r_rs = (1 - c) * r_total
        pi, _, _ = water_fill(t_lev, r_rs)
        rs = poisson_sample(SamplingProbabilities(pi, r_rs, scores=t_lev), rng)
    return tg, rs


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    outcomes: list
    rows: list

    def estimates(self, estimator: str, rate: float) -> np.ndarray:
        return np.array([o.betas[(estimator, rate)] for o in self.outcomes
                         if (estimator, rate) in o.betas])

    def contamination(self, estimator: str, rate: float) -> np.ndarray:
        return np.array([o.contaminated[(estimator, rate)] for o in self.outcomes
                         if (estimator, rate) in o.contaminated])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _replicate(args):
    exp, k = args
    return run_replication(exp, k)


def run_experiment(exp: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Run all replications and summarise each (estimator, rate) pair."""
    jobs = [(exp, k) for k in range(exp.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replicate, jobs, chunksize=1))
    else:
        outcomes = [_replicate(j) for j in jobs]
    beta0 = exp.scenario.beta_true
    rows = []
    for name in exp.estimators:
        for rate in exp.rates:
            est = [o.betas[(name, rate)] for o in outcomes if (name, rate) in o.betas]
            failures = exp.replications - len(est)
            if est:
                m = evaluate_estimates(est, beta0, exp.alpha)
                vals = (m.emse, m.ebias2, m.evar)
            else:
                vals = (math.nan,) * 3
            rows.append({
                "case": exp.scenario.case,
                "covariate_tail": exp.scenario.covariate_tail,
                "estimator": name,
                "rate": rate,
                "K_effective": len(est),
                "emse": vals[0],
                "ebias2": vals[1],
                "evar": vals[2],
                "failures": failures,
            })
    return ExperimentResult(exp, outcomes, rows)


def scenario_to_dict(sc: ScenarioConfig) -> dict:
    d = asdict(sc)
    if isinstance(d["coef"], tuple):
        d["coef"] = list(d["coef"])
    return d
