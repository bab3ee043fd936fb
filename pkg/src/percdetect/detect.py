"""Maximum cluster tests, rejection thresholds and detectability bounds.

The single test rejects "no signal" when the largest cluster of a level set
reaches ``phi``. ``phi`` comes either from the closed-form floor
``K0 log N`` (``theory``) or from simulated null quantiles
(``calibrated``). :func:`multi_test` runs the test over the dyadic
threshold ladder ``a_k = r / 2**k``.
"""

from dataclasses import asdict, dataclass, field
import math
from typing import Callable, Dict, List, Optional, Tuple
import warnings

import mpmath
import numpy as np
from scipy import optimize

from . import kernels
from ._replicates import run_replicates
from .noise import P_CRITICAL, NoiseModel, ObservedImage

SCHEMA_VERSION = 1
SIDES = ("plus", "minus", "both")
DEFAULT_K0_FACTOR = 2.0


# ------------------------------------------------------------ closed forms


def error_probability(model: NoiseModel, sigma: float, a: float) -> float:
    """Null probability that a site lands in the super level set at ``a``."""
    return float(model.sf(a / sigma))


def _check_pE(p_E):
    if not 0 < p_E < P_CRITICAL:
        raise ValueError(f"p_E must lie in (0, 1/2) (subcritical), got {p_E}")


def phi_theory(N: int, p_E: float, factor: float = DEFAULT_K0_FACTOR) -> Tuple[float, float]:
    """``(K0, phi)`` with ``K0 = factor / log(1 + 18 (1/2 - p_E))`` and ``phi = K0 log N``.

    This is the smallest K0 compatible with the lower bound on the inverse
    Aizenman-Newman exponent; it is a floor, not a guarantee of consistency.
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    _check_pE(p_E)
    K0 = factor / math.log1p(18.0 * (P_CRITICAL - p_E))
    return K0, K0 * math.log(N)


def phi_theory_mp(N: int, p_E, factor=DEFAULT_K0_FACTOR, dps: int = 60):
    """:func:`phi_theory` in ``dps``-digit arithmetic; returns mpmath numbers."""
    with mpmath.workdps(dps):
        p_E = mpmath.mpf(p_E)
        if N < 2:
            raise ValueError(f"N must be >= 2, got {N}")
        if not 0 < p_E < mpmath.mpf(1) / 2:
            raise ValueError(f"p_E must lie in (0, 1/2), got {p_E}")
        K0 = mpmath.mpf(factor) / mpmath.log1p(18 * (mpmath.mpf(1) / 2 - p_E))
        return +K0, K0 * mpmath.log(N)


def _lattice_factor(N: int) -> float:
    # (N^2)^(1/N^2) - 1 without cancellation
    return math.expm1(math.log(N * N) / (N * N))


def never_reject_bound(N: int) -> float:
    """Distance ``|p_E - 1/2|`` below which ``phi_theory(N, p_E) > N**2``."""
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    return _lattice_factor(N) / 18.0


def never_reject_bound_mp(N: int, dps: int = 60):
    with mpmath.workdps(dps):
        n2 = mpmath.mpf(N) ** 2
        return mpmath.expm1(mpmath.log(n2) / n2) / 18


def s_function(x):
    """``(exp(-x ln x) - 1) / 18`` on ``(0, 1]``."""
    x = np.asarray(x, dtype=float)
    if np.any((x <= 0) | (x > 1)):
        raise ValueError("s(x) is defined for 0 < x <= 1")
    out = np.expm1(-x * np.log(x)) / 18.0
    return float(out) if out.ndim == 0 else out


def _maximize(fun, grid_size=100_001):
    xs = np.linspace(1e-9, 1.0, grid_size)
    ys = fun(xs)
    i = int(np.argmax(ys))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, grid_size - 1)]
    res = optimize.minimize_scalar(lambda t: -fun(np.array(t)), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-14})
    return float(res.x), float(-res.fun)


def s_max() -> Tuple[float, float]:
    """Numerical ``(argmax, max)`` of :func:`s_function`; the maximizer is ``1/e``."""
    return _maximize(s_function)


def weak_bound_constant() -> Tuple[float, float]:
    """``(argmax, M)`` with ``M = max s(x)/sqrt(x)`` over ``(0, 1]``."""
    return _maximize(lambda x: s_function(x) / np.sqrt(x))


def weak_uncertainty_bound(model: NoiseModel, N: int) -> float:
    """Minimal SNR ``rho`` allowed by ``N rho > M / f(0)``."""
    f0 = model.density_at_zero()
    if not f0 > 0:
        raise ValueError(f"{model.family} has zero density at 0")
    return weak_bound_constant()[1] / (f0 * N)


@dataclass(frozen=True)
class UncertaintyReport:
    rho: float
    N: int
    lhs: float
    rhs: float
    detectable: bool
    sufficient_constant: float
    weak_bound_M: float

    def to_dict(self):
        return asdict(self)


def _require_continuous_at_zero(model: NoiseModel):
    if model.atom(0.0) > 0:
        raise ValueError(
            f"{model.descriptor()} has an atom at 0; the detectability bound needs a CDF continuous at zero"
        )


def _uncertainty_lhs(model: NoiseModel, rho: float) -> float:
    # P(0 < eps < rho)
    return float(model.cdf_left(rho) - model.cdf(0.0))


def uncertainty_check(model: NoiseModel, rho: float, N: int) -> UncertaintyReport:
    """Necessary condition for detectability at SNR ``rho`` on ``T^(N)``."""
    _require_continuous_at_zero(model)
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    factor = _lattice_factor(N)
    lhs = _uncertainty_lhs(model, rho) if rho > 0 else 0.0
    return UncertaintyReport(
        rho=float(rho),
        N=int(N),
        lhs=lhs,
        rhs=factor / 18.0,
        detectable=bool(18.0 * lhs > factor),
        sufficient_constant=s_max()[1],
        weak_bound_M=weak_bound_constant()[1],
    )


def tau0_from_uncertainty(model: NoiseModel, sigma: float, N: int) -> float:
    """``sigma * rho*`` where ``rho*`` is the smallest SNR passing :func:`uncertainty_check`."""
    _require_continuous_at_zero(model)
    factor = _lattice_factor(N)

    def ok(rho):
        return 18.0 * _uncertainty_lhs(model, rho) > factor

    lo, hi = 0.0, 1.0
    while not ok(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise ValueError(f"{model.descriptor()} never satisfies the bound on T^({N})")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return sigma * hi


# ------------------------------------------------------------ single test


@dataclass(frozen=True)
class TestConfig:
    N: int
    tau: float
    phi: float
    phi_mode: str
    K0: Optional[float] = None
    alpha_target: Optional[float] = None
    side: str = "both"

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.tau < 0 or self.phi < 0:
            raise ValueError("tau and phi must be >= 0")
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")
        if self.phi_mode == "theory":
            if self.K0 is None or self.alpha_target is not None:
                raise ValueError("theory mode takes K0 and no alpha_target")
        elif self.phi_mode == "calibrated":
            if self.alpha_target is None or self.K0 is not None:
                raise ValueError("calibrated mode takes alpha_target and no K0")
        else:
            raise ValueError(f"phi_mode must be 'theory' or 'calibrated', got {self.phi_mode!r}")

    @classmethod
    def theory(cls, N, tau, model=None, sigma=1.0, K0=None, factor=DEFAULT_K0_FACTOR, side="both"):
        """``phi = K0 log N``; ``K0`` defaults to the floor for ``p_E`` at ``tau``."""
        if K0 is None:
            K0, _ = phi_theory(N, error_probability(model, sigma, tau), factor)
        return cls(N, tau, K0 * math.log(N), "theory", K0=K0, side=side)

    @classmethod
    def calibrated(cls, entry: "CalibrationEntry", alpha=None, side="both"):
        alpha = entry.alpha_target if alpha is None else alpha
        return cls(entry.N, entry.tau, entry.phi_at(alpha), "calibrated", alpha_target=alpha, side=side)


@dataclass(frozen=True)
class TestResult:
    statistic: int
    phi: float
    reject: bool
    side: str
    tau: float
    T_plus: Optional[int] = None
    T_minus: Optional[int] = None

    __test__ = False


def _side_stats(values, a, side):
    t_plus = t_minus = None
    ops = 0
    if side in ("plus", "both"):
        t_plus, k = kernels.max_cluster(values >= a)
        ops += k
    if side in ("minus", "both"):
        t_minus, k = kernels.max_cluster(values <= -a)
        ops += k
    return t_plus, t_minus, ops


def max_cluster_test(image: ObservedImage, config: TestConfig) -> TestResult:
    if image.N != config.N:
        raise ValueError(f"config is for N={config.N} but the image has N={image.N}")
    t_plus, t_minus, _ = _side_stats(image.values, config.tau, config.side)
    T = max(t for t in (t_plus, t_minus) if t is not None)
    return TestResult(T, config.phi, bool(T >= config.phi), config.side, config.tau, t_plus, t_minus)


# ------------------------------------------------------------ calibration


def null_statistics(N, taus, model, sigma, replicates, seed, workers=1):
    """``(M, len(taus))`` array of ``max(T_plus, T_minus)`` on simulated null images."""
    taus = [float(t) for t in taus]

    def one(rng):
        y = sigma * model.sample(rng, (N, N))
        return [max(kernels.max_cluster(y >= t)[0], kernels.max_cluster(y <= -t)[0]) for t in taus]

    return np.asarray(run_replicates(one, replicates, seed, workers), dtype=np.int64).reshape(replicates, len(taus))


def quantile_phi(samples, alpha: float) -> float:
    """Empirical ``(1 - alpha)`` quantile plus one, so that ``T >= phi`` has frequency <= alpha."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(np.quantile(np.asarray(samples), 1.0 - alpha, method="inverted_cdf") + 1)


STANDARD_ALPHAS = (0.5, 0.1, 0.05, 0.01)


@dataclass
class CalibrationEntry:
    N: int
    noise: str
    family: str
    params: Dict[str, object]
    sigma: float
    tau: float
    M: int
    seed: int
    alpha_target: float
    phi: float
    quantiles: List[Tuple[float, float]]
    null_histogram: List[Tuple[int, int]]
    warnings: List[str] = field(default_factory=list)

    def samples(self) -> np.ndarray:
        return np.repeat([v for v, _ in self.null_histogram], [c for _, c in self.null_histogram])

    def phi_at(self, alpha: float) -> float:
        return quantile_phi(self.samples(), alpha)

    def to_dict(self):
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        d["quantiles"] = [list(q) for q in self.quantiles]
        d["null_histogram"] = [list(h) for h in self.null_histogram]
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported calibration schema_version {d.get('schema_version')!r}")
        d = {k: v for k, v in d.items() if k != "schema_version"}
        d["quantiles"] = [tuple(q) for q in d["quantiles"]]
        d["null_histogram"] = [tuple(h) for h in d["null_histogram"]]
        return cls(**d)


def _noise_params(model: NoiseModel):
    if model.is_discrete:
        return {"support": list(model.support), "weights": list(model.weights)}
    return dict(model.params)


def _entry(N, tau, model, sigma, alpha_target, M, seed, samples, extra_alphas=()):
    msgs = []
    for a in sorted({alpha_target, *extra_alphas}):
        if M * a < 5:
            msgs.append(f"M*alpha = {M * a:g} < 5: the {1 - a:g}-quantile at alpha={a:g} is poorly resolved")
    for m in msgs:
        warnings.warn(m, RuntimeWarning, stacklevel=3)
    values, counts = np.unique(samples, return_counts=True)
    alphas = sorted({*STANDARD_ALPHAS, alpha_target, *extra_alphas}, reverse=True)
    return CalibrationEntry(
        N=int(N),
        noise=model.descriptor(),
        family=model.family,
        params=_noise_params(model),
        sigma=float(sigma),
        tau=float(tau),
        M=int(M),
        seed=int(seed),
        alpha_target=float(alpha_target),
        phi=quantile_phi(samples, alpha_target),
        quantiles=[(float(a), quantile_phi(samples, a)) for a in alphas],
        null_histogram=[(int(v), int(c)) for v, c in zip(values, counts)],
        warnings=msgs,
    )


def _check_calibration_args(replicates, alpha_target):
    if replicates < 100:
        raise ValueError(f"calibration needs at least 100 replicates, got {replicates}")
    if not 0 < alpha_target <= 0.5:
        raise ValueError(f"alpha_target must lie in (0, 0.5], got {alpha_target}")


def calibrate_phi(N, tau, model, sigma, alpha_target, replicates, seed, workers=1) -> CalibrationEntry:
    """Null-quantile threshold for the two-sided statistic at ``tau``."""
    _check_calibration_args(replicates, alpha_target)
    samples = null_statistics(N, [tau], model, sigma, replicates, seed, workers)[:, 0]
    return _entry(N, tau, model, sigma, alpha_target, replicates, seed, samples)


@dataclass
class CalibrationTable:
    entries: List[CalibrationEntry]

    def lookup(self, tau: float) -> CalibrationEntry:
        for e in self.entries:
            if math.isclose(e.tau, tau, rel_tol=1e-9, abs_tol=1e-12):
                return e
        raise KeyError(f"no calibration entry for tau={tau}")

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "calibration_table",
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported calibration schema_version {d.get('schema_version')!r}")
        return cls([CalibrationEntry.from_dict(e) for e in d["entries"]])


def calibrate_schedule(N, taus, model, sigma, alpha_target, replicates, seed, levels=(), workers=1):
    """One entry per threshold, all computed from the same null batch."""
    _check_calibration_args(replicates, alpha_target)
    stats = null_statistics(N, taus, model, sigma, replicates, seed, workers)
    return CalibrationTable([
        _entry(N, t, model, sigma, alpha_target, replicates, seed, stats[:, j], levels)
        for j, t in enumerate(taus)
    ])


# ------------------------------------------------------------ multiple testing


def dyadic_schedule(r: float, tau0: float, N: Optional[int] = None) -> List[float]:
    """``[r/2, r/4, ..., r/2**k_max]`` with ``k_max = ceil(log2(r/tau0))``, capped at ``N``."""
    if not tau0 > 0:
        raise ValueError(f"tau0 must be > 0, got {tau0}")
    if not tau0 < r:
        raise ValueError(f"tau0 must be < r, got tau0={tau0}, r={r}")
    k_max = max(1, math.ceil(math.log2(r / tau0)))
    if N is not None:
        k_max = min(k_max, N)
    return [r * 2.0 ** -k for k in range(1, k_max + 1)]


class TheoryPhi:
    """``phi(a) = K0(p_E(a)) log N``; ignores the level (the floor has none)."""

    def __init__(self, model: NoiseModel, sigma: float, N: int, factor: float = DEFAULT_K0_FACTOR):
        self.model, self.sigma, self.N, self.factor = model, sigma, N, factor

    def __call__(self, a: float, level: float) -> float:
        return phi_theory(self.N, error_probability(self.model, self.sigma, a), self.factor)[1]


class CalibratedPhi:
    def __init__(self, table: CalibrationTable):
        self.table = table

    def __call__(self, a: float, level: float) -> float:
        return self.table.lookup(a).phi_at(level)


@dataclass(frozen=True)
class StepDecision:
    k: int
    a: float
    T_plus: Optional[int]
    T_minus: Optional[int]
    phi: Optional[float]
    reject: bool
    skipped: bool = False


@dataclass(frozen=True)
class MultiTestResult:
    decisions: List[StepDecision]
    overall_reject: bool
    first_rejecting_k: Optional[int]
    k_max: int
    per_test_level: float
    family_size: int
    crossing_levels: Tuple[float, float]
    op_count: int

    def to_dict(self):
        return asdict(self)


def multi_test(
    image: ObservedImage,
    r: float,
    tau0: float,
    phi_provider: Callable[[float, float], float],
    level_adjust: str = "bonferroni",
    alpha: float = 0.05,
    skip_crossing: bool = True,
) -> MultiTestResult:
    """Dyadic threshold scan with early stopping.

    Thresholds at which both level sets already hold a crossing cluster are
    recorded as skipped and leave the Bonferroni family. They are found in
    one sorted sweep per side, before any test runs, so the per-test level
    is fixed up front. ``skip_crossing=False`` tests every threshold.
    """
    if level_adjust not in ("bonferroni", "none"):
        raise ValueError(f"level_adjust must be 'bonferroni' or 'none', got {level_adjust!r}")
    schedule = dyadic_schedule(r, tau0, image.N)
    y = image.values
    if np.any(np.abs(y) > r * (1 + 1e-12)):
        raise ValueError("image values exceed the detector range r; apply detector_truncate first")
    cross_plus, ops_p = kernels.crossing_level(y)
    cross_minus, ops_m = kernels.crossing_level(-y)
    ops = ops_p + ops_m
    skipped = [skip_crossing and a <= cross_plus and a <= cross_minus for a in schedule]
    family = sum(not s for s in skipped)
    level = alpha / family if (level_adjust == "bonferroni" and family) else alpha

    decisions = []
    first = None
    for k, (a, skip) in enumerate(zip(schedule, skipped), start=1):
        if skip:
            decisions.append(StepDecision(k, a, None, None, None, False, True))
            continue
        t_plus, t_minus, n_ops = _side_stats(y, a, "both")
        ops += n_ops
        phi = float(phi_provider(a, level))
        reject = max(t_plus, t_minus) >= phi
        decisions.append(StepDecision(k, a, t_plus, t_minus, phi, bool(reject)))
        if reject:
            first = k
            break
    return MultiTestResult(
        decisions=decisions,
        overall_reject=first is not None,
        first_rejecting_k=first,
        k_max=len(schedule),
        per_test_level=level,
        family_size=family,
        crossing_levels=(cross_plus, cross_minus),
        op_count=ops,
    )
