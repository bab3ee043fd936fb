"""Monte Carlo site percolation on T^(N).

Cluster-size tails at the central site, the resulting estimates of the mean
cluster size and of the subcritical decay exponent, empirical error rates of
the maximum cluster test, crossing frequencies and a complexity probe.
"""

from dataclasses import asdict, dataclass, field
import math
import time
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import kernels
from ._replicates import run_replicates
from .cluster import SiteMask
from .detect import (
    calibrate_phi,
    max_cluster_test,
    multi_test,
    tau0_from_uncertainty,
    TestConfig,
)
from .lattice import Lattice, square_indicator
from .noise import P_CRITICAL, NoiseModel, ObservedImage, gaussian, replicate_rng


@dataclass(frozen=True)
class PercolationSample:
    lattice: Lattice
    p: float
    mask: SiteMask
    seed: int


def sample_configuration(N: int, p: float, seed: int) -> PercolationSample:
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    lattice = Lattice(N)
    marked = np.random.default_rng(int(seed)).random(lattice.shape) < p
    return PercolationSample(lattice, p, SiteMask(lattice, marked), int(seed))


@dataclass
class ClusterStats:
    p: float
    N: int
    M: int
    seed: int
    sizes: np.ndarray = field(repr=False)
    tail: np.ndarray  # tail[n-1] = P(|C| >= n), n = 1..max observed size
    chi_hat: float
    lambda_hat: float
    chi_stderr: float
    lambda_stderr: float
    occupied_centers: int
    notes: List[str] = field(default_factory=list)

    def summary(self):
        d = asdict(self)
        d.pop("sizes")
        d["tail"] = [float(t) for t in self.tail]
        return d


def _tail(sizes: np.ndarray) -> np.ndarray:
    if sizes.size == 0 or sizes.max() == 0:
        return np.zeros(0)
    counts = np.bincount(sizes)
    # number of replicates with |C| >= n, for n = 1..max
    ge = np.cumsum(counts[::-1])[::-1][1:]
    return ge / sizes.size


def chi_from_tail(tail) -> float:
    return math.fsum(tail)


def lambda_from_tail(tail) -> float:
    """Largest ``lam`` with ``tail(n) <= exp(-n lam)`` at every observed ``n``."""
    tail = np.asarray(tail)
    if tail.size == 0:
        return math.inf
    n = np.arange(1, tail.size + 1)
    pos = tail > 0
    return float(np.min(-np.log(tail[pos]) / n[pos]))


def center_cluster_sizes(N: int, p: float, M: int, seed: int, workers: int = 1) -> np.ndarray:
    c = N // 2

    def one(rng):
        return kernels.cluster_size_at(rng.random((N, N)) < p, c, c)

    return np.asarray(run_replicates(one, M, seed, workers), dtype=np.int64)


def estimate_cluster_stats(
    N: int,
    p: float,
    M: int,
    seed: int,
    bootstrap: int = 500,
    allow_supercritical: bool = False,
    workers: int = 1,
) -> ClusterStats:
    """Tail of the size of the cluster at the central site (0 when unoccupied)."""
    if p >= P_CRITICAL and not allow_supercritical:
        raise ValueError(f"p={p} is not subcritical; pass allow_supercritical=True")
    sizes = center_cluster_sizes(N, p, M, seed, workers)
    tail = _tail(sizes)
    notes = []
    occupied = int(np.count_nonzero(sizes))
    if occupied == 0:
        notes.append("no occupied center site in any replicate; tail is empty")
    if p >= P_CRITICAL:
        lam = math.nan
        notes.append("supercritical run: lambda fit disabled")
    else:
        lam = lambda_from_tail(tail)
    if N // 2 + int(sizes.max(initial=0)) >= N:
        notes.append("clusters may reach the boundary: finite-size bias in chi_hat")

    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2**32,)))
    chis, lams = [], []
    for _ in range(bootstrap):
        t = _tail(sizes[rng.integers(0, M, M)])
        chis.append(chi_from_tail(t))
        if p < P_CRITICAL:
            lams.append(lambda_from_tail(t))
    lams = [v for v in lams if math.isfinite(v)]
    return ClusterStats(
        p=float(p),
        N=int(N),
        M=int(M),
        seed=int(seed),
        sizes=sizes,
        tail=tail,
        chi_hat=chi_from_tail(tail),
        lambda_hat=lam,
        chi_stderr=float(np.std(chis, ddof=1)) if bootstrap > 1 else math.nan,
        lambda_stderr=float(np.std(lams, ddof=1)) if len(lams) > 1 else math.nan,
        occupied_centers=occupied,
        notes=notes,
    )


def log_tail_r2(stats: ClusterStats, min_count: int = 50) -> float:
    """R^2 of a straight-line fit to ``log tail(n)`` over ``n`` with ``tail(n) >= min_count/M``."""
    tail = stats.tail
    n = np.arange(1, tail.size + 1)
    keep = tail >= min_count / stats.M
    if keep.sum() < 3:
        return math.nan
    x, y = n[keep].astype(float), np.log(tail[keep])
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    return float(1.0 - resid.var() / y.var())


@dataclass(frozen=True)
class LambdaBoundReport:
    p: float
    lambda_hat: float
    chi_hat: float
    geometric_sum: float
    definitional_ok: bool
    lambda_upper: float
    lambda_bound_ok: bool
    lambda_margin: float
    lambda_ci: tuple
    chi_lower: float
    chi_lower_z: float
    chi_upper: float
    chi_upper_ok: bool

    def to_dict(self):
        return asdict(self)


def verify_lambda_bound(stats: ClusterStats) -> LambdaBoundReport:
    """Checks the estimates against the percolation bounds.

    (i) ``chi_hat <= e^-lam / (1 - e^-lam)``, forced by how ``lambda_hat`` is
    built; (ii) ``lambda_hat <= log(1 + 18 |p - 1/2|)``. Both directions of
    the mean-cluster-size bound ``1/(18 |p - 1/2|)`` are reported; the lower
    one is what the decay-exponent bound relies on.
    """
    if not stats.p < P_CRITICAL:
        raise ValueError("lambda bounds apply to subcritical p only")
    lam, chi = stats.lambda_hat, stats.chi_hat
    geo = math.exp(-lam) / -math.expm1(-lam) if lam > 0 else math.inf
    delta = P_CRITICAL - stats.p
    upper = math.log1p(18 * delta)
    z = 1.959963984540054
    ci = (lam - z * stats.lambda_stderr, lam + z * stats.lambda_stderr)
    chi_bound = 1.0 / (18 * delta)
    return LambdaBoundReport(
        p=stats.p,
        lambda_hat=lam,
        chi_hat=chi,
        geometric_sum=geo,
        definitional_ok=bool(chi <= geo),
        lambda_upper=upper,
        lambda_bound_ok=bool(lam <= upper),
        lambda_margin=upper - lam,
        lambda_ci=ci,
        chi_lower=chi_bound,
        chi_lower_z=(chi - chi_bound) / stats.chi_stderr if stats.chi_stderr > 0 else math.inf,
        chi_upper=chi_bound,
        chi_upper_ok=bool(chi <= chi_bound),
    )


def crossing_frequency(N: int, p: float, M: int, seed: int, workers: int = 1) -> float:
    def one(rng):
        return kernels.crossing(rng.random((N, N)) < p)[0]

    return float(np.mean(run_replicates(one, M, seed, workers)))


# ------------------------------------------------------------ error rates


@dataclass(frozen=True)
class SquareSignal:
    """Centered axial square of side ``round(side_fraction * N)`` at ``intensity``."""

    side_fraction: float = 0.25
    intensity: float = 1.0

    def side(self, N: int) -> int:
        return max(1, int(round(self.side_fraction * N)))

    def picture(self, N: int):
        return square_indicator(N, self.side(N), self.intensity)


@dataclass
class ErrorRateFit:
    Ns: List[int]
    phi: List[float]
    side: List[int]
    alpha_hat: List[float]
    beta_hat: List[float]
    alpha_slope: Optional[float]
    beta_slope: Optional[float]
    alpha_r2: Optional[float]
    beta_r2: Optional[float]
    alpha_nonincreasing: bool
    beta_nonincreasing: bool
    censored_alpha: List[int]
    censored_beta: List[int]
    flags: List[str]
    config: Dict[str, object]

    def to_dict(self):
        return asdict(self)


def _fit(xs, rates):
    pts = [(x, r) for x, r in zip(xs, rates) if r > 0]
    if len(pts) < 2:
        return None, None
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.log([p[1] for p in pts])
    slope, icept = np.polyfit(x, y, 1)
    if len(pts) == 2 or y.var() == 0:
        return float(slope), 1.0
    resid = y - (slope * x + icept)
    return float(slope), float(1.0 - resid.var() / y.var())


def _nonincreasing(v):
    return all(b <= a for a, b in zip(v, v[1:]))


def estimate_error_rates(
    Ns: Sequence[int],
    signal: SquareSignal,
    model: NoiseModel,
    sigma: float,
    tau: float,
    phi_mode: str = "theory",
    M: int = 500,
    seed: int = 0,
    K0: Optional[float] = None,
    alpha_target: float = 0.05,
    calibration_replicates: int = 1000,
    workers: int = 1,
) -> ErrorRateFit:
    """Empirical type I (``alpha_hat``) and type II (``beta_hat``) rates per lattice size.

    ``log alpha_hat`` is regressed on ``phi(N)`` and ``log beta_hat`` on the
    square side; zero rates are censored and left out of the fits.
    """
    flags = []
    if signal.intensity == 0:
        flags.append("signal intensity is 0: beta_hat is meaningless")
    phis, sides, alphas, betas = [], [], [], []
    for j, N in enumerate(Ns):
        if N < 8:
            raise ValueError(f"lattice sides must be >= 8, got {N}")
        if phi_mode == "theory":
            config = TestConfig.theory(N, tau, model, sigma, K0=K0)
        elif phi_mode == "calibrated":
            entry = calibrate_phi(N, tau, model, sigma, alpha_target, calibration_replicates,
                                  _child_seed(seed, 3 * j), workers)
            config = TestConfig.calibrated(entry)
        else:
            raise ValueError(f"phi_mode must be 'theory' or 'calibrated', got {phi_mode!r}")
        side = signal.side(N)
        if phi_mode == "theory" and side < config.K0 * math.log(N):
            flags.append(f"N={N}: square side {side} < K0 log N; outside the bulk-condition regime")
        f = signal.picture(N).values

        def null_run(rng):
            img = ObservedImage(Lattice(N), sigma * model.sample(rng, (N, N)), sigma)
            return max_cluster_test(img, config).reject

        def alt_run(rng):
            img = ObservedImage(Lattice(N), f + sigma * model.sample(rng, (N, N)), sigma)
            return not max_cluster_test(img, config).reject

        alphas.append(float(np.mean(run_replicates(null_run, M, _child_seed(seed, 3 * j + 1), workers))))
        betas.append(float(np.mean(run_replicates(alt_run, M, _child_seed(seed, 3 * j + 2), workers))))
        phis.append(config.phi)
        sides.append(side)
    a_slope, a_r2 = _fit(phis, alphas)
    b_slope, b_r2 = _fit(sides, betas)
    return ErrorRateFit(
        Ns=list(Ns),
        phi=phis,
        side=sides,
        alpha_hat=alphas,
        beta_hat=betas,
        alpha_slope=a_slope,
        beta_slope=b_slope,
        alpha_r2=a_r2,
        beta_r2=b_r2,
        alpha_nonincreasing=_nonincreasing(alphas),
        beta_nonincreasing=_nonincreasing(betas),
        censored_alpha=[N for N, a in zip(Ns, alphas) if a == 0],
        censored_beta=[N for N, b in zip(Ns, betas) if b == 0],
        flags=flags,
        config=dict(noise=model.descriptor(), sigma=sigma, tau=tau, phi_mode=phi_mode, M=M, seed=seed,
                    K0=K0, side_fraction=signal.side_fraction, intensity=signal.intensity),
    )


def _child_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(k,)).generate_state(2, np.uint32).view(np.uint64)[0])


# ------------------------------------------------------------ complexity


@dataclass
class ComplexityTable:
    mode: str
    rows: List[Dict[str, float]]
    time_slope: Optional[float]  # d log(time) / d log(N^2)
    ops_constant: Optional[float]  # headroom * ops / (N^2 log2 N) at the smallest N
    ops_within_bound: Optional[bool]
    backend: str

    def to_dict(self):
        return asdict(self)


def _loglog_slope(xs, ys):
    if len(xs) < 2:
        return None
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def _time_call(fn, min_total=0.2, repeats=5):
    fn()  # warm-up (JIT, caches)
    number = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        dt = time.perf_counter() - t0
        if dt >= min_total / repeats:
            break
        number *= 2
    best = dt / number
    for _ in range(repeats - 1):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def complexity_probe(
    Ns: Sequence[int], mode: str = "single", seed: int = 0, r: float = 1.0, ops_headroom: float = 1.25
) -> ComplexityTable:
    """Wall time and operation counts for the single test or the full multi-test scan.

    The multi-test runs on a null image with an unreachable ``phi`` and the
    crossing skip disabled, so it walks the whole schedule down to the
    uncertainty floor ``tau0`` (the worst case).

    The constant ``c`` in ``ops <= c N^2 log2 N`` is fitted at the smallest
    ``N`` and widened by ``ops_headroom`` for lower-order terms; larger
    lattices must then stay under it.
    """
    if list(Ns) != sorted(Ns):
        raise ValueError("Ns must be increasing")
    model = gaussian()
    rows = []
    for N in Ns:
        y = np.clip(model.sample(replicate_rng(seed, N), (N, N)), -r, r)
        img = ObservedImage(Lattice(N), y, 1.0, True, r)
        if mode == "single":
            config = TestConfig(N, 0.5, float(N * N + 1), "theory", K0=1.0)
            elapsed = _time_call(lambda: max_cluster_test(img, config))
            ops = kernels.max_cluster(y >= 0.5)[1] + kernels.max_cluster(y <= -0.5)[1]
            rows.append(dict(N=N, elapsed=elapsed, op_count=ops))
        elif mode == "multi":
            tau0 = tau0_from_uncertainty(model, 1.0, N)
            never = lambda a, level: float(N * N + 1)
            res = multi_test(img, r, tau0, never, skip_crossing=False)
            elapsed = _time_call(lambda: multi_test(img, r, tau0, never, skip_crossing=False),
                                 min_total=0.1, repeats=3)
            rows.append(dict(N=N, elapsed=elapsed, op_count=res.op_count, tests=len(res.decisions),
                             k_max=res.k_max))
        else:
            raise ValueError(f"mode must be 'single' or 'multi', got {mode!r}")
    n2 = [row["N"] ** 2 for row in rows]
    slope = _loglog_slope(n2, [row["elapsed"] for row in rows])
    ratios = [row["op_count"] / (row["N"] ** 2 * math.log2(row["N"])) for row in rows]
    c = ops_headroom * ratios[0] if len(rows) >= 2 else None
    within = None if c is None else all(x <= c for x in ratios)
    for row, x in zip(rows, ratios):
        row["ops_per_N2log2N"] = x
    return ComplexityTable(mode, rows, slope, c, within, kernels.BACKEND)
