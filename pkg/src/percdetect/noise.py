"""Noise models, the additive observation model and the bounded detector."""

from dataclasses import dataclass, field
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .lattice import DiscretizedPicture, Lattice

P_CRITICAL = 0.5
FAMILIES = ("gaussian", "laplace", "uniform", "student_t", "discrete_symmetric")

_VAR_TOL = 1e-6


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Generator for replicate ``replicate`` of a run seeded with ``seed``.

    The stream depends only on ``(seed, replicate)`` (numpy ``SeedSequence``
    with ``spawn_key=(replicate,)``), so serial and parallel runs agree.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(replicate),)))


@dataclass(frozen=True)
class NoiseModel:
    """Symmetric, mean-zero, unit-variance noise.

    Build through the ``gaussian()``/``laplace()``/... constructors or
    :func:`parse_noise`; scale parameters are derived so that the variance
    is exactly one.
    """

    family: str
    params: Tuple[Tuple[str, float], ...] = ()
    support: Optional[Tuple[float, ...]] = None
    weights: Optional[Tuple[float, ...]] = None
    _dist: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "discrete_symmetric":
            self._init_discrete()
        else:
            object.__setattr__(self, "_dist", self._continuous())
        mean, var = self.moments()
        if abs(mean) > _VAR_TOL or abs(var - 1.0) > _VAR_TOL:
            raise ValueError(f"{self.family}: mean {mean:g}, variance {var:g}; expected 0 and 1")

    # construction ---------------------------------------------------------

    @property
    def nu(self) -> float:
        return dict(self.params)["nu"]

    def _continuous(self):
        if self.family == "gaussian":
            return stats.norm()
        if self.family == "laplace":
            return stats.laplace(scale=1.0 / math.sqrt(2.0))
        if self.family == "uniform":
            h = math.sqrt(3.0)
            return stats.uniform(loc=-h, scale=2 * h)
        nu = self.nu
        if not nu > 2:
            raise ValueError(f"student_t needs nu > 2 for finite variance, got {nu}")
        return stats.t(df=nu, scale=math.sqrt((nu - 2.0) / nu))

    def _init_discrete(self):
        if self.support is None or self.weights is None:
            raise ValueError("discrete_symmetric needs support and weights")
        x = np.asarray(self.support, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if x.shape != w.shape or x.ndim != 1 or x.size == 0:
            raise ValueError("support and weights must be equal-length 1-d sequences")
        if np.any(w <= 0) or not np.all(np.isfinite(x)):
            raise ValueError("weights must be positive and support finite")
        order = np.argsort(x)
        x, w = x[order], w[order] / math.fsum(w)
        if np.unique(x).size != x.size:
            raise ValueError("support points must be distinct")
        if not (np.allclose(x, -x[::-1], rtol=0, atol=1e-12) and np.allclose(w, w[::-1], rtol=0, atol=1e-12)):
            raise ValueError("discrete noise must be symmetric: mirrored support with mirrored weights")
        var = math.fsum(w * x * x)
        if var <= 0:
            raise ValueError("discrete noise is degenerate at 0 (zero variance)")
        if abs(var - 1.0) > 4 * np.finfo(float).eps:  # leave normalized input bit-exact
            x = x / math.sqrt(var)
        x = 0.5 * (x - x[::-1])  # exact mirror after rescaling
        w = 0.5 * (w + w[::-1])
        object.__setattr__(self, "support", tuple(float(v) for v in x))
        object.__setattr__(self, "weights", tuple(float(v) for v in w))

    # distribution access --------------------------------------------------

    @property
    def is_discrete(self) -> bool:
        return self.family == "discrete_symmetric"

    def moments(self) -> Tuple[float, float]:
        if self.is_discrete:
            x = np.asarray(self.support)
            w = np.asarray(self.weights)
            return math.fsum(w * x), math.fsum(w * x * x)
        return float(self._dist.mean()), float(self._dist.var())

    def cdf(self, x):
        """``P(eps <= x)`` (right-continuous)."""
        if self.is_discrete:
            cum = np.concatenate([[0.0], np.cumsum(self.weights)])
            return cum[np.searchsorted(self.support, x, side="right")].clip(0.0, 1.0)
        return self._dist.cdf(x)

    def cdf_left(self, x):
        """``P(eps < x)``."""
        if self.is_discrete:
            cum = np.concatenate([[0.0], np.cumsum(self.weights)])
            return cum[np.searchsorted(self.support, x, side="left")].clip(0.0, 1.0)
        return self._dist.cdf(x)

    def sf(self, x):
        """``P(eps >= x)``; by symmetry also ``P(eps <= -x)``."""
        return 1.0 - self.cdf_left(x)

    def quantile(self, u):
        if self.is_discrete:
            cum = np.cumsum(self.weights)
            idx = np.searchsorted(cum, u, side="left").clip(0, len(cum) - 1)
            return np.asarray(self.support)[idx]
        return self._dist.ppf(u)

    def pdf(self, x):
        if self.is_discrete:
            raise ValueError("discrete noise has no density")
        return self._dist.pdf(x)

    def atom(self, x: float) -> float:
        """Point mass ``P(eps = x)``."""
        return float(self.cdf(x) - self.cdf_left(x))

    def density_at_zero(self) -> float:
        if self.is_discrete:
            raise ValueError("discrete_symmetric noise has no density at 0")
        return float(self._dist.pdf(0.0))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == "gaussian":
            return rng.standard_normal(size)
        if self.family == "laplace":
            return rng.laplace(0.0, 1.0 / math.sqrt(2.0), size)
        if self.family == "uniform":
            h = math.sqrt(3.0)
            return rng.uniform(-h, h, size)
        if self.family == "student_t":
            nu = self.nu
            return rng.standard_t(nu, size) * math.sqrt((nu - 2.0) / nu)
        return rng.choice(np.asarray(self.support), size=size, p=np.asarray(self.weights))

    def descriptor(self) -> str:
        """Inverse of :func:`parse_noise` (after normalization)."""
        if self.family == "student_t":
            return f"student_t:nu={self.nu:g}"
        if self.is_discrete:
            sup = ",".join(repr(v) for v in self.support)
            wts = ",".join(repr(v) for v in self.weights)
            return f"discrete_symmetric:support={sup};weights={wts}"
        return self.family


def gaussian() -> NoiseModel:
    return NoiseModel("gaussian")


def laplace() -> NoiseModel:
    return NoiseModel("laplace")


def uniform() -> NoiseModel:
    return NoiseModel("uniform")


def student_t(nu: float) -> NoiseModel:
    return NoiseModel("student_t", params=(("nu", float(nu)),))


def discrete_symmetric(support: Sequence[float], weights: Sequence[float]) -> NoiseModel:
    """Discrete noise; the support is rescaled to unit variance on construction."""
    return NoiseModel("discrete_symmetric", support=tuple(support), weights=tuple(weights))


def parse_noise(text: str) -> NoiseModel:
    """Parse ``family[:key=value[;key=value...]]``.

    Examples: ``gaussian``, ``student_t:nu=5``,
    ``discrete_symmetric:support=-1,0,1;weights=1,2,1``. Values are
    normalized to mean 0 and variance 1 on load.
    """
    family, _, rest = text.strip().partition(":")
    family = {"normal": "gaussian", "t": "student_t", "discrete": "discrete_symmetric"}.get(family, family)
    kv = {}
    for part in filter(None, (p.strip() for p in rest.split(";"))):
        key, sep, value = part.partition("=")
        if not sep:
            raise ValueError(f"malformed noise parameter {part!r} in {text!r}")
        kv[key.strip()] = value.strip()
    if family == "student_t":
        if "nu" not in kv:
            raise ValueError("student_t requires nu=<value>")
        return student_t(float(kv.pop("nu")))
    if family == "discrete_symmetric":
        try:
            support = [float(v) for v in kv.pop("support").split(",")]
            weights = [float(v) for v in kv.pop("weights").split(",")]
        except KeyError as exc:
            raise ValueError(f"discrete_symmetric requires {exc.args[0]}=...") from None
        return discrete_symmetric(support, weights)
    if kv:
        raise ValueError(f"{family} takes no parameters, got {sorted(kv)}")
    return NoiseModel(family)


@dataclass(frozen=True)
class NondegeneracyReport:
    m: float
    mode: str  # "jump", "density" or "none"
    ok: bool
    m_plus: float
    m_minus: float
    reason: str = ""


def validate_nondegeneracy(model: NoiseModel, p_c: float = P_CRITICAL) -> NondegeneracyReport:
    """Check that the CDF crosses ``1 - p_c`` at a single point, by a jump or with positive slope."""
    level = 1.0 - p_c
    if model.is_discrete:
        x = np.asarray(model.support)
        cum = np.cumsum(model.weights)
        eps = 1e-12
        # inf{F >= level} is the first atom reaching the level; sup{F <= level}
        # is the first atom strictly above it (F is flat in between).
        m_plus = float(x[np.argmax(cum >= level - eps)])
        m_minus = float(x[np.argmax(cum > level + eps)])
        if m_plus != m_minus:
            return NondegeneracyReport(
                math.nan, "none", False, m_plus, m_minus,
                f"CDF is flat at level {level} on [{m_plus:g}, {m_minus:g})",
            )
        return NondegeneracyReport(m_plus, "jump", model.atom(m_plus) > 0, m_plus, m_minus)
    m = float(model.quantile(level))
    if model.pdf(m) > 0:
        return NondegeneracyReport(m, "density", True, m, m)
    return NondegeneracyReport(m, "none", False, m, m, f"zero density at the median {m:g}")


@dataclass(frozen=True)
class ObservedImage:
    """Noisy intensities ``Y[r, c]`` on the lattice."""

    lattice: Lattice
    values: np.ndarray
    sigma: float
    truncated: bool = False
    detector_range: Optional[float] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.lattice.shape:
            raise ValueError(f"values shape {values.shape} != lattice shape {self.lattice.shape}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.truncated:
            if self.detector_range is None or not self.detector_range > 0:
                raise ValueError("a truncated image needs a positive detector range")
            if np.any(np.abs(values) > self.detector_range):
                raise ValueError("truncated image has values outside [-r, r]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def N(self) -> int:
        return self.lattice.side_length

    def negated(self) -> "ObservedImage":
        return ObservedImage(self.lattice, -self.values, self.sigma, self.truncated, self.detector_range)

    @classmethod
    def from_array(cls, values, sigma: float = 1.0) -> "ObservedImage":
        values = np.asarray(values, dtype=float)
        return cls(Lattice(values.shape[0]), values, sigma)


@dataclass(frozen=True)
class DetectorDevice:
    range: float

    def __post_init__(self):
        if not (math.isfinite(self.range) and self.range > 0):
            raise ValueError(f"detector range must be finite and positive, got {self.range}")


def _check_sigma(sigma):
    if not (math.isfinite(sigma) and sigma > 0):
        raise ValueError(f"sigma must be finite and positive, got {sigma}")


def apply_noise(picture: DiscretizedPicture, sigma: float, model: NoiseModel, seed: int) -> ObservedImage:
    """``Y = f + sigma * eps`` with i.i.d. noise drawn from ``np.random.default_rng(seed)``."""
    _check_sigma(sigma)
    rng = np.random.default_rng(int(seed))
    eps = model.sample(rng, picture.lattice.shape)
    return ObservedImage(picture.lattice, picture.values + sigma * eps, sigma)


def noisy_values(picture_values: np.ndarray, sigma: float, model: NoiseModel, rng) -> np.ndarray:
    return picture_values + sigma * model.sample(rng, picture_values.shape)


def detector_truncate(image: ObservedImage, device: DetectorDevice) -> ObservedImage:
    r = device.range
    return ObservedImage(image.lattice, np.clip(image.values, -r, r), image.sigma, True, r)


@dataclass(frozen=True)
class PiDEstimate:
    estimate: float
    stderr: float
    replicates: int


def estimate_pi_D(
    picture: DiscretizedPicture,
    sigma: float,
    model: NoiseModel,
    device: DetectorDevice,
    replicates: int,
    seed: int,
) -> PiDEstimate:
    """Monte Carlo estimate of the probability that the clamp leaves every site untouched."""
    _check_sigma(sigma)
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    hits = 0
    for i in range(replicates):
        y = noisy_values(picture.values, sigma, model, replicate_rng(seed, i))
        hits += bool(np.all(np.abs(y) <= device.range))
    p = hits / replicates
    return PiDEstimate(p, math.sqrt(p * (1 - p) / replicates), replicates)
