"""Monte-Carlo protocol: sparse mean vectors, five dependence structures and
replicated bias / standard deviation summaries."""

from __future__ import annotations

import enum
import math
import os
import traceback
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .cppls import McpConfig
from .errors import ValidationError
from .ftm import PhaseConfig
from .pipeline import benjamini_pi, estimate_pi
from .spectral import SymmetricSpectrum, eigh_sym

BLOCK_LOADING = 0.2
EQUAL_CORR_RHO = 0.5
THREE_FACTOR_LOADINGS = (-0.25, 0.2, -0.125)
UNSTRUCTURED_WEIGHT = 0.4
UNSTRUCTURED_COLUMNS = 4

ESTIMATORS = ("New", "Benjamini")


class DependenceKind(str, enum.Enum):
    BLOCK = "Block"
    EQUAL_CORR = "EqualCorr"
    THREE_FACTORS = "ThreeFactors"
    TWO_COMPONENTS = "TwoComponents"
    UNSTRUCTURED = "Unstructured"

    @classmethod
    def parse(cls, value) -> "DependenceKind":
        if isinstance(value, cls):
            return value
        key = str(value).replace(" ", "").replace("_", "").replace(".", "").lower()
        for kind in cls:
            if kind.value.lower() == key or kind.name.replace("_", "").lower() == key:
                return kind
        raise ValidationError(f"unknown dependence kind {value!r}; expected one of {[k.value for k in cls]}")

    @property
    def structured(self) -> bool:
        return self is not DependenceKind.UNSTRUCTURED


@dataclass(frozen=True)
class SimScenario:
    kind: DependenceKind
    pi: float
    mu_star: float
    m: int = 2000
    replications: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DependenceKind.parse(self.kind))
        if not 0.0 <= self.pi <= 1.0:
            raise ValidationError(f"pi must lie in [0, 1], got {self.pi}")
        if not self.mu_star > 0:
            raise ValidationError(f"mu_star must be positive, got {self.mu_star}")
        if int(self.m) != self.m or self.m < 2:
            raise ValidationError(f"m must be an integer >= 2, got {self.m}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ValidationError(f"replications must be a positive integer, got {self.replications}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        check_dimension(self.kind, int(self.m))


@dataclass
class SimSummary:
    scenario: SimScenario
    estimates: dict  # estimator name -> array of per-replication estimates (NaN on failure)
    k_counts: Counter = field(default_factory=Counter)
    failures: list = field(default_factory=list)  # (replication, message)

    def bias(self, estimator: str) -> float:
        vals = self._ok(estimator)
        return float(np.mean(vals) - self.scenario.pi) if vals.size else math.nan

    def std_dev(self, estimator: str) -> float:
        vals = self._ok(estimator)
        return float(np.std(vals, ddof=1)) if vals.size >= 2 else math.nan

    def _ok(self, estimator: str) -> np.ndarray:
        vals = np.asarray(self.estimates[estimator], dtype=float)
        return vals[np.isfinite(vals)]

    def rows(self) -> list:
        s = self.scenario
        return [
            {
                "kind": s.kind.value,
                "pi": s.pi,
                "mu_star": s.mu_star,
                "m": s.m,
                "reps": s.replications,
                "seed": s.seed,
                "estimator": name,
                "bias": self.bias(name),
                "std_dev": self.std_dev(name),
            }
            for name in self.estimates
        ]


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Counter-based stream for one replication, derived from ``(seed, replication)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication),))
    return np.random.Generator(np.random.Philox(ss))


def n_nonzero(m: int, pi: float) -> int:
    """``m - round_half_up(m (1 - pi))``."""
    m0 = int(math.floor(m * (1.0 - pi) + 0.5 + 1e-9))
    return m - min(max(m0, 0), m)


def gen_mu(m: int, pi: float, mu_star: float, rng: np.random.Generator) -> np.ndarray:
    """Zeros followed by ``m pi`` entries with magnitude ``U[mu*, mu* + 1]`` and random sign."""
    if not 0.0 <= pi <= 1.0:
        raise ValidationError(f"pi must lie in [0, 1], got {pi}")
    if not mu_star > 0:
        raise ValidationError(f"mu_star must be positive, got {mu_star}")
    m1 = n_nonzero(m, pi)
    mu = np.zeros(m)
    mags = rng.uniform(mu_star, mu_star + 1.0, size=m1)
    signs = np.where(rng.random(m1) < 0.5, -1.0, 1.0)
    mu[m - m1:] = signs * mags
    return mu


def _block_sizes(m: int) -> tuple[int, int]:
    # (number of independent leading coordinates, number of shared factors c0)
    lead, c0 = 0.95 * m, 0.01 * m
    if abs(lead - round(lead)) > 1e-9 or abs(c0 - round(c0)) > 1e-9:
        raise ValidationError(f"Block dependence needs 0.95m and 0.01m integral, got m={m}")
    lead, c0 = int(round(lead)), int(round(c0))
    if c0 < 1 or BLOCK_LOADING**2 * c0 > 1.0 or c0 > lead:
        raise ValidationError(f"Block dependence is not a valid construction for m={m}")
    return lead, c0


def check_dimension(kind: DependenceKind, m: int) -> None:
    kind = DependenceKind.parse(kind)
    if kind is DependenceKind.BLOCK:
        _block_sizes(m)
    elif m < 2:
        raise ValidationError(f"m must be >= 2, got {m}")


def _block_sigma(m: int) -> np.ndarray:
    lead, c0 = _block_sizes(m)
    load = BLOCK_LOADING * np.array([(-1.0) ** j for j in range(c0)])  # (-1)^(j+1), j = 1..c0
    sigma = np.eye(m)
    tail = slice(lead, m)
    sigma[:c0, tail] = load[:, None]
    sigma[tail, :c0] = load[None, :]
    shared = BLOCK_LOADING**2 * c0
    sigma[tail, tail] = shared
    sigma[range(lead, m), range(lead, m)] = 1.0
    return sigma


def _three_factor_sigma(m: int) -> np.ndarray:
    common = sum(c * c for c in THREE_FACTOR_LOADINGS)
    off = common / (1.0 + common)
    sigma = np.full((m, m), off)
    np.fill_diagonal(sigma, 1.0)
    return sigma


def _two_component_sigma(m: int) -> np.ndarray:
    sigma = np.full((m, m), 0.5)
    sigma[0, 1:] = sigma[1:, 0] = -math.sqrt(0.5)
    np.fill_diagonal(sigma, 1.0)
    return sigma


def _equal_corr_sigma(m: int) -> np.ndarray:
    sigma = np.full((m, m), 1.0 - EQUAL_CORR_RHO)
    np.fill_diagonal(sigma, 1.0)
    return sigma


_STRUCTURED_SIGMA = {
    DependenceKind.BLOCK: _block_sigma,
    DependenceKind.EQUAL_CORR: _equal_corr_sigma,
    DependenceKind.THREE_FACTORS: _three_factor_sigma,
    DependenceKind.TWO_COMPONENTS: _two_component_sigma,
}


def structured_sigma(kind, m: int) -> np.ndarray:
    """Exact correlation matrix of a fixed (non-random) dependence structure."""
    kind = DependenceKind.parse(kind)
    if not kind.structured:
        raise ValidationError("the unstructured correlation matrix is random; use gen_dependence")
    return _STRUCTURED_SIGMA[kind](m)


@lru_cache(maxsize=8)
def structured_spectrum(kind: DependenceKind, m: int) -> SymmetricSpectrum:
    """Cached decomposition of a structured correlation matrix."""
    return eigh_sym(structured_sigma(kind, m))


def unstructured_sigma(m: int, rng: np.random.Generator) -> np.ndarray:
    """``0.4 H + 0.6 I`` with ``H`` the correlation across the columns of an m x 4 Gaussian matrix.

    ``H`` is the uncentred (cosine) correlation of the rows of ``Q``, which has
    rank 4 and hence gives four dominant eigenvalues.
    """
    q = rng.standard_normal((m, UNSTRUCTURED_COLUMNS))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    h = q @ q.T
    h = 0.5 * (h + h.T)
    sigma = UNSTRUCTURED_WEIGHT * h + (1.0 - UNSTRUCTURED_WEIGHT) * np.eye(m)
    np.fill_diagonal(sigma, 1.0)
    return sigma


def _draw_structured(kind: DependenceKind, m: int, rng: np.random.Generator) -> np.ndarray:
    if kind is DependenceKind.BLOCK:
        lead, c0 = _block_sizes(m)
        eps = rng.standard_normal(m)
        z = eps.copy()
        load = BLOCK_LOADING * np.array([(-1.0) ** j for j in range(c0)])
        z[lead:] = load @ eps[:c0] + math.sqrt(1.0 - BLOCK_LOADING**2 * c0) * eps[lead:]
        return z
    if kind is DependenceKind.EQUAL_CORR:
        eps = rng.standard_normal(m + 1)
        # shared factor sqrt(1 - rho) eps_0 plus idiosyncratic sqrt(rho) eps_i
        return math.sqrt(1.0 - EQUAL_CORR_RHO) * eps[0] + math.sqrt(EQUAL_CORR_RHO) * eps[1:]
    if kind is DependenceKind.THREE_FACTORS:
        eps = rng.standard_normal(m + 3)
        raw = np.dot(THREE_FACTOR_LOADINGS, eps[:3]) + eps[3:]
        return raw / math.sqrt(1.0 + sum(c * c for c in THREE_FACTOR_LOADINGS))
    if kind is DependenceKind.TWO_COMPONENTS:
        eps = rng.standard_normal(m)
        z = np.empty(m)
        z[0] = eps[0]
        z[1:] = math.sqrt(0.5) * (-eps[0] + eps[1:])
        return z
    raise ValidationError(f"{kind} is not a structured kind")


def symmetric_sqrt_draw(spectrum: SymmetricSpectrum, rng: np.random.Generator) -> np.ndarray:
    """One ``N(0, Sigma)`` draw as ``V diag(sqrt(lambda)) V^T eps``."""
    eps = rng.standard_normal(spectrum.m)
    v = spectrum.eigenvectors
    return v @ (np.sqrt(spectrum.clamped) * (v.T @ eps))


def draw_dependence(kind, m: int, rng: np.random.Generator):
    """``(z_star, sigma, spectrum)``; the spectrum is ``None`` for structured kinds."""
    kind = DependenceKind.parse(kind)
    check_dimension(kind, m)
    if kind.structured:
        return _draw_structured(kind, m, rng), structured_sigma(kind, m), None
    sigma = unstructured_sigma(m, rng)
    spectrum = eigh_sym(sigma)
    return symmetric_sqrt_draw(spectrum, rng), sigma, spectrum


def gen_dependence(kind, m: int, rng: np.random.Generator):
    """One draw of the zero-mean noise vector and its exact correlation matrix."""
    z_star, sigma, _ = draw_dependence(kind, m, rng)
    return z_star, sigma


def run_replication(
    scenario: SimScenario,
    replication: int,
    delta: float = 0.5,
    mcp_cfg: McpConfig = McpConfig(),
    phase_cfg: PhaseConfig = PhaseConfig(),
) -> dict:
    """Run one replication in isolation; returns the estimates and ``k``."""
    s = scenario
    rng = replication_rng(s.seed, replication)
    mu = gen_mu(s.m, s.pi, s.mu_star, rng)
    z_star, sigma, spectrum = draw_dependence(s.kind, s.m, rng)
    if spectrum is None:
        spectrum = structured_spectrum(s.kind, s.m)
    z = mu + z_star
    est = estimate_pi(z, sigma, delta, mcp_cfg, phase_cfg, spectrum=spectrum)
    return {"New": est.pi_tilde, "Benjamini": benjamini_pi(z), "k": est.k_used}


def default_threads() -> int:
    value = os.environ.get("PHASEPI_THREADS", "1")
    if value == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError as exc:
        raise ValidationError(f"PHASEPI_THREADS must be an integer or 'auto', got {value!r}") from exc
    return max(n, 1)


def run_scenario(
    scenario: SimScenario,
    delta: float = 0.5,
    mcp_cfg: McpConfig = McpConfig(),
    phase_cfg: PhaseConfig = PhaseConfig(),
    threads: int = 1,
) -> SimSummary:
    """Replicate the estimation protocol and summarise bias and sample std.

    Replication ``r`` draws from a stream keyed by ``(scenario.seed, r)``,
    so the summary does not depend on ``threads``.
    """
    n = scenario.replications
    if scenario.kind.structured:
        structured_spectrum(scenario.kind, scenario.m)  # decompose once before fanning out

    def one(r):
        try:
            return run_replication(scenario, r, delta, mcp_cfg, phase_cfg)
        except Exception as exc:  # recorded per replication, scenario keeps going
            return {"error": f"{type(exc).__name__}: {exc}", "trace": traceback.format_exc()}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n)))
    else:
        results = [one(r) for r in range(n)]

    estimates = {name: np.full(n, np.nan) for name in ESTIMATORS}
    k_counts = Counter()
    failures = []
    for r, res in enumerate(results):
        if "error" in res:
            failures.append((r, res["error"]))
            continue
        for name in ESTIMATORS:
            estimates[name][r] = res[name]
        k_counts[res["k"]] += 1
    return SimSummary(scenario, estimates, k_counts, failures)
