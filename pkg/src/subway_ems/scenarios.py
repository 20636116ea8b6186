"""Noise scenarios: braking generator, log-AR(1) noise model, forecasts, quantization.

Only the braking power ``b`` is random. Demand ``d``, train arrivals ``n``
and outdoor PM10 ``c_o`` are deterministic profiles shared by every
scenario of a set.

Optimization and assessment sets are sealed: fitting and quantization
refuse assessment sets, and the Monte Carlo harness refuses optimization
sets.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter
from sklearn.cluster import KMeans

from .model import NoiseVector, TimeGrid

OPTIMIZATION = "optimization"
ASSESSMENT = "assessment"
ROLES = (OPTIMIZATION, ASSESSMENT)
_ROLE_CODE = {OPTIMIZATION: 1, ASSESSMENT: 2}

EPS_LOG = 0.1  # kW


class SealingError(ValueError):
    """A scenario set was used outside the phase its role allows."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def _schedule(hours: np.ndarray, windows) -> np.ndarray:
    """Piecewise-constant clock schedule; ``windows`` are (start_h, end_h, value)."""
    h = np.mod(hours, 24.0)
    out = np.zeros_like(h)
    for lo, hi, value in windows:
        out[(h >= lo) & (h < hi)] = value
    return out


# -- deterministic profiles --------------------------------------------------

TRAIN_SCHEDULE = (
    (0.0, 1.0, 15.0),
    (1.0, 5.5, 0.0),
    (5.5, 7.0, 20.0),
    (7.0, 9.5, 30.0),
    (9.5, 16.5, 24.0),
    (16.5, 19.5, 30.0),
    (19.5, 22.0, 22.0),
    (22.0, 24.0, 16.0),
)
DEMAND_SCHEDULE = (
    (0.0, 1.0, 56.0),
    (1.0, 5.5, 36.0),
    (5.5, 7.0, 60.0),
    (7.0, 9.5, 70.0),
    (9.5, 16.5, 62.0),
    (16.5, 19.5, 70.0),
    (19.5, 24.0, 58.0),
)
OUTDOOR_SCHEDULE = (
    (0.0, 6.0, 25.0),
    (6.0, 7.0, 32.0),
    (7.0, 10.0, 45.0),
    (10.0, 17.0, 38.0),
    (17.0, 20.0, 45.0),
    (20.0, 24.0, 32.0),
)


@dataclass(frozen=True)
class ProfileConfig:
    trains: tuple = TRAIN_SCHEDULE
    demand: tuple = DEMAND_SCHEDULE
    outdoor: tuple = OUTDOOR_SCHEDULE
    demand_scale: float = 1.0

    def to_dict(self) -> dict:
        return {k: [list(w) for w in v] if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ProfileConfig":
        kw = {k: tuple(tuple(w) for w in v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class DeterministicProfiles:
    d: np.ndarray
    n: np.ndarray
    c_o: np.ndarray

    def __post_init__(self):
        for name in ("d", "n", "c_o"):
            arr = _frozen(getattr(self, name))
            if np.any(arr < 0):
                raise ValueError(f"profile {name} must be nonnegative")
            object.__setattr__(self, name, arr)
        if not (len(self.d) == len(self.n) == len(self.c_o)):
            raise ValueError("profiles must share one length")

    def __len__(self):
        return len(self.d)

    @property
    def T(self) -> int:
        return len(self.d) - 1

    @classmethod
    def build(cls, g: TimeGrid, cfg: ProfileConfig = ProfileConfig()) -> "DeterministicProfiles":
        hours = g.hours()
        return cls(
            d=cfg.demand_scale * _schedule(hours, cfg.demand),
            n=_schedule(hours, cfg.trains),
            c_o=_schedule(hours, cfg.outdoor),
        )

    @classmethod
    def constant(cls, T: int, d=0.0, n=0.0, c_o=0.0) -> "DeterministicProfiles":
        return cls(np.full(T + 1, float(d)), np.full(T + 1, float(n)), np.full(T + 1, float(c_o)))

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.d, self.n, self.c_o):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


def arrival_counts(g: TimeGrid, n: np.ndarray, phase: float = 0.5) -> np.ndarray:
    """Deterministic number of train arrivals during each step ending at t.

    Entry 0 is always zero; arrivals during (t-1, t] follow the headway
    implied by ``n[t]`` trains per hour.
    """
    cum = np.concatenate([[0.0], np.cumsum(n[1:] * g.delta_hours)]) + phase
    counts = np.diff(np.floor(cum + 1e-12), prepend=np.floor(phase + 1e-12))
    return counts.astype(int)


# -- scenario sets ------------------------------------------------------------


@dataclass(frozen=True)
class BrakingProfile:
    """Recoverable braking pulses, one possible pulse per train arrival.

    A pulse happens with probability ``q_t = recovery_prob * (1 -
    congestion * n_t / max(n))`` and lasts one step. Its magnitude is
    lognormal around ``magnitude_median`` with log-sd ``magnitude_sigma``,
    modulated by a latent AR(1) log-factor (persistence ``persistence``,
    stationary log-sd ``latent_sigma``) shared by consecutive steps.
    """

    recovery_prob: float = 0.6
    congestion: float = 0.3
    magnitude_median: float = 220.0
    magnitude_sigma: float = 0.35
    persistence: float = 0.97
    latent_sigma: float = 0.4
    profile: ProfileConfig = field(default_factory=ProfileConfig)

    def __post_init__(self):
        if not 0 <= self.recovery_prob <= 1:
            raise ValueError("recovery_prob must lie in [0, 1]")
        if not 0 <= self.congestion <= 1:
            raise ValueError("congestion must lie in [0, 1]")
        if self.magnitude_median < 0 or self.magnitude_sigma < 0 or self.latent_sigma < 0:
            raise ValueError("magnitudes and spreads must be nonnegative")
        if not -1 < self.persistence < 1:
            raise ValueError("persistence must lie in (-1, 1)")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["profile"] = self.profile.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BrakingProfile":
        data = dict(data)
        data["profile"] = ProfileConfig.from_dict(data["profile"])
        return cls(**data)

    def profile_id(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


class Scenario:
    """One realization w_0..w_T; ``noise(t)`` returns the NoiseVector at t."""

    def __init__(self, b: np.ndarray, profiles: DeterministicProfiles):
        if len(b) != len(profiles):
            raise ValueError("braking path and profiles differ in length")
        self.b = b
        self.profiles = profiles

    def __len__(self):
        return len(self.b)

    def noise(self, t: int) -> NoiseVector:
        p = self.profiles
        return NoiseVector(float(p.d[t]), float(self.b[t]), float(p.n[t]), float(p.c_o[t]))

    def __getitem__(self, t: int) -> NoiseVector:
        return self.noise(t)


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    b: np.ndarray  # (count, T+1) braking power
    profiles: DeterministicProfiles
    role: str
    seed: int
    profile_id: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        b = _frozen(self.b)
        if b.ndim != 2 or b.shape[1] != len(self.profiles):
            raise ValueError("braking array must be (count, T+1)")
        if np.any(b < 0):
            raise ValueError("braking power must be nonnegative")
        object.__setattr__(self, "b", b)

    @property
    def count(self) -> int:
        return self.b.shape[0]

    @property
    def T(self) -> int:
        return self.b.shape[1] - 1

    def __len__(self):
        return self.count

    def scenario(self, i: int) -> Scenario:
        return Scenario(self.b[i], self.profiles)

    def subset(self, idx) -> "ScenarioSet":
        return ScenarioSet(self.b[idx], self.profiles, self.role, self.seed, self.profile_id)

    def manifest(self) -> dict:
        return {
            "role": self.role,
            "seed": self.seed,
            "profile": self.profile_id,
            "count": self.count,
            "T": self.T,
            "profiles_digest": self.profiles.digest(),
            "data_digest": hashlib.sha256(np.ascontiguousarray(self.b).tobytes()).hexdigest()[:16],
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.manifest(), sort_keys=True).encode()).hexdigest()[:16]


def require_role(s: ScenarioSet, role: str, what: str) -> None:
    if s.role != role:
        raise SealingError(f"{what} accepts only {role} scenarios, got a {s.role} set")


def scenario_rng(seed: int, role: str, index: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, role, scenario index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _ROLE_CODE[role], index])))


def _one_braking_path(bp: BrakingProfile, arrivals, q, seed, role, index) -> np.ndarray:
    rng = scenario_rng(seed, role, index)
    T1 = len(arrivals)
    eps = rng.standard_normal(T1)
    drive = bp.latent_sigma * np.sqrt(1.0 - bp.persistence**2) * eps
    drive[0] = bp.latent_sigma * eps[0]
    latent = lfilter([1.0], [1.0, -bp.persistence], drive)
    kmax = int(arrivals.max(initial=0))
    b = np.zeros(T1)
    for k in range(kmax):
        hit = rng.random(T1) < q
        xi = rng.standard_normal(T1)
        mag = bp.magnitude_median * np.exp(bp.magnitude_sigma * xi + latent)
        b += np.where(hit & (arrivals > k), mag, 0.0)
    return b


def generate_braking(
    bp: BrakingProfile,
    g: TimeGrid,
    seed: int,
    count: int,
    role: str = OPTIMIZATION,
    threads: int = 1,
) -> ScenarioSet:
    """Draw ``count`` braking scenarios; reproducible from (profile, seed, role)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    profiles = DeterministicProfiles.build(g, bp.profile)
    arrivals = arrival_counts(g, profiles.n)
    n_max = profiles.n.max()
    crowd = profiles.n / n_max if n_max > 0 else np.zeros_like(profiles.n)
    q = bp.recovery_prob * (1.0 - bp.congestion * crowd)

    def work(i):
        return _one_braking_path(bp, arrivals, q, seed, role, i)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(work, range(count)))
    else:
        rows = [work(i) for i in range(count)]
    return ScenarioSet(np.vstack(rows), profiles, role, seed, bp.profile_id())


# -- log-AR(1) noise model ---------------------------------------------------


def braking_transition(b, z, a: float, eps_log: float = EPS_LOG):
    """f^w(b, z) = exp(a log(b + eps) + z) - eps, floored at zero."""
    return np.maximum(np.exp(a * np.log(b + eps_log) + z) - eps_log, 0.0)


@dataclass(frozen=True, eq=False)
class LogAR1Model:
    a: float
    residuals: np.ndarray  # (T+1, S); row t holds samples of z_t, row 0 unused
    profiles: DeterministicProfiles
    eps_log: float = EPS_LOG

    def __post_init__(self):
        if self.eps_log <= 0:
            raise ValueError("eps_log must be positive")
        r = _frozen(self.residuals)
        if r.ndim != 2 or r.shape[1] == 0:
            raise ValueError("need at least one residual sample per step")
        if r.shape[0] != len(self.profiles):
            raise ValueError("residual rows must match profile length")
        object.__setattr__(self, "residuals", r)

    @property
    def T(self) -> int:
        return self.residuals.shape[0] - 1

    def drift(self, mean_correction: bool = True) -> np.ndarray:
        """Per-step log drift used by point forecasts.

        With ``mean_correction`` the drift is log E[exp(z_t)], so a one step
        forecast is the conditional mean rather than the conditional median.
        """
        z = self.residuals
        if not mean_correction:
            return z.mean(axis=1)
        zmax = z.max(axis=1, keepdims=True)
        return zmax[:, 0] + np.log(np.mean(np.exp(z - zmax), axis=1))

    def save(self, path) -> None:
        """``<path>.npy`` residuals plus ``<path>.json`` coefficients and profiles."""
        path = Path(path)
        np.save(path.with_suffix(".npy"), np.ascontiguousarray(self.residuals))
        p = self.profiles
        header = {"a": self.a, "eps_log": self.eps_log, "d": p.d.tolist(), "n": p.n.tolist(), "c_o": p.c_o.tolist()}
        path.with_suffix(".json").write_text(json.dumps(header))

    @classmethod
    def load(cls, path) -> "LogAR1Model":
        path = Path(path)
        h = json.loads(path.with_suffix(".json").read_text())
        prof = DeterministicProfiles(np.array(h["d"]), np.array(h["n"]), np.array(h["c_o"]))
        return cls(float(h["a"]), np.load(path.with_suffix(".npy")), prof, float(h["eps_log"]))


def fit_log_ar1(s: ScenarioSet, eps_log: float = EPS_LOG) -> LogAR1Model:
    """Pooled least-squares fit of log(b_{t+1}+eps) = a log(b_t+eps) + z_{t+1}.

    The slope is estimated after removing per-step means, so the residual
    distribution of every step keeps its own location. Residuals are
    stored per step.
    """
    require_role(s, OPTIMIZATION, "fit_log_ar1")
    lw = np.log(s.b + eps_log)
    x, y = lw[:, :-1], lw[:, 1:]
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    den = float(np.sum(xc * xc))
    if den <= 1e-12 * max(x.size, 1):
        warnings.warn("log-AR(1) regressor has no variance; using a = 1", RuntimeWarning, stacklevel=2)
        a = 1.0
    else:
        a = float(np.sum(xc * yc) / den)
    z = y - a * x
    residuals = np.vstack([np.zeros((1, s.count)), z.T])
    if den <= 1e-12 * max(x.size, 1):
        residuals = np.zeros_like(residuals)
    return LogAR1Model(a, residuals, s.profiles, eps_log)


def forecast_braking(model: LogAR1Model, t: int, b_t, h: int, mean_correction: bool = True) -> np.ndarray:
    """Point forecast b̂_{t+1..t+h}; vectorized over ``b_t`` (last axis is time)."""
    if h < 1:
        raise ValueError("forecast horizon must be >= 1")
    if t + h > model.T:
        raise ValueError(f"forecast beyond the horizon: t={t}, h={h}, T={model.T}")
    drift = model.drift(mean_correction)
    b = np.asarray(b_t, dtype=float)
    out = np.empty(b.shape + (h,))
    for j in range(h):
        b = braking_transition(b, drift[t + 1 + j], model.a, model.eps_log)
        out[..., j] = b
    return out


def forecast(model: LogAR1Model, t: int, w_t: NoiseVector, h: int, mean_correction: bool = True) -> list[NoiseVector]:
    """Forecast w_{t+1..t+h}; deterministic components come from the profiles."""
    bh = forecast_braking(model, t, w_t.b, h, mean_correction)
    p = model.profiles
    return [
        NoiseVector(float(p.d[t + 1 + j]), float(bh[j]), float(p.n[t + 1 + j]), float(p.c_o[t + 1 + j]))
        for j in range(h)
    ]


# -- quantization -------------------------------------------------------------


def kmeans_1d(values, k: int, seed: int = 0, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Quantize samples to at most ``k`` atoms; returns sorted (support, probabilities).

    Atoms are the means of their clusters, so the quantized mean equals the
    sample mean. ``k`` shrinks (with a warning) when fewer distinct values exist.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot quantize an empty sample")
    if k < 1:
        raise ValueError("k must be >= 1")
    distinct = np.unique(x)
    if len(distinct) <= k:
        if len(distinct) < k:
            warnings.warn(
                f"only {len(distinct)} distinct values, reducing k from {k}", RuntimeWarning, stacklevel=2
            )
        counts = np.array([np.count_nonzero(x == v) for v in distinct], dtype=float)
        return distinct.copy(), counts / x.size
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=max_iter, random_state=seed)
    labels = km.fit_predict(x[:, None])
    support, probs = [], []
    for c in range(k):
        sel = labels == c
        if np.any(sel):
            support.append(x[sel].mean())
            probs.append(np.count_nonzero(sel) / x.size)
    order = np.argsort(support)
    return np.asarray(support)[order], np.asarray(probs)[order]


@dataclass(frozen=True, eq=False)
class QuantizedMarginal:
    support: np.ndarray  # (T+1, K) kW; unused atoms carry probability 0
    probs: np.ndarray  # (T+1, K)
    profiles: DeterministicProfiles

    def __post_init__(self):
        s, p = _frozen(self.support), _frozen(self.probs)
        if s.shape != p.shape or s.ndim != 2:
            raise ValueError("support and probs must share a (T+1, K) shape")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("probabilities must be nonnegative and sum to 1")
        if np.any(s < 0):
            raise ValueError("support points must be nonnegative")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probs", p)

    @property
    def T(self) -> int:
        return self.support.shape[0] - 1

    def mean(self) -> np.ndarray:
        return np.sum(self.support * self.probs, axis=1)

    def sample(self, count: int, seed: int, role: str = OPTIMIZATION) -> ScenarioSet:
        """Stagewise-independent braking paths drawn from the atoms."""
        rows = []
        cdf = np.cumsum(self.probs, axis=1)
        for i in range(count):
            u = scenario_rng(seed, role, i).random(self.support.shape[0])
            idx = np.minimum((u[:, None] >= cdf).sum(axis=1), self.support.shape[1] - 1)
            rows.append(self.support[np.arange(len(idx)), idx])
        return ScenarioSet(np.vstack(rows), self.profiles, role, seed, "quantized-marginal")


def _pad(rows: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s, _ in rows)
    S = np.zeros((len(rows), width))
    P = np.zeros((len(rows), width))
    for t, (s, p) in enumerate(rows):
        S[t, : len(s)] = s
        P[t, : len(p)] = p
    return S, P


def quantize_marginals(s: ScenarioSet, k: int, seed: int = 0) -> QuantizedMarginal:
    """Per-step k-means of the braking values across scenarios."""
    require_role(s, OPTIMIZATION, "quantize_marginals")
    if not 1 <= k <= s.count:
        raise ValueError("need 1 <= k <= scenario count")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rows = [kmeans_1d(s.b[:, t], k, seed) for t in range(s.T + 1)]
    S, P = _pad(rows)
    return QuantizedMarginal(S, P, s.profiles)


@dataclass(frozen=True, eq=False)
class ConditionalDistribution:
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-9 or np.any(self.support < 0):
            raise ValueError("weights must sum to 1 over a nonnegative support")

    def mean(self) -> float:
        return float(np.dot(self.support, self.weights))


def conditional_distribution(
    model: LogAR1Model, t: int, w_prev: NoiseVector | float, k_online: int | None = None, seed: int = 0
) -> ConditionalDistribution:
    """Law of b_t given b_{t-1}: push every stored residual z_t through f^w."""
    if not 1 <= t <= model.T:
        raise ValueError(f"no residuals stored for t={t}")
    b_prev = w_prev.b if isinstance(w_prev, NoiseVector) else float(w_prev)
    if b_prev < 0:
        raise ValueError("previous braking must be nonnegative")
    support = braking_transition(b_prev, model.residuals[t], model.a, model.eps_log)
    if k_online is None:
        return ConditionalDistribution(support, np.full(len(support), 1.0 / len(support)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s, p = kmeans_1d(support, k_online, seed)
    return ConditionalDistribution(s, p)


class MarginalConditional:
    """Online law that ignores the past: μ^on = μ^of."""

    def __init__(self, marginals: QuantizedMarginal):
        self.marginals = marginals

    def atoms(self, t: int, b_prev) -> tuple[np.ndarray, np.ndarray]:
        b_prev = np.atleast_1d(np.asarray(b_prev, dtype=float))
        s = np.broadcast_to(self.marginals.support[t], (len(b_prev), self.marginals.support.shape[1]))
        return s, self.marginals.probs[t]


class LogAR1Conditional:
    """Fast batched μ^on for the log-AR(1) model.

    k-means commutes with scaling and shifting, so quantizing exp(z_t)
    once per step and mapping the atoms through s -> (b+eps)^a s - eps
    reproduces the quantized conditional law for any b_{t-1}. Only the
    floor at zero breaks the equivalence, and it is applied per atom.
    """

    def __init__(self, model: LogAR1Model, k_online: int = 20, seed: int = 0):
        self.model = model
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rows = [(np.zeros(1), np.ones(1))] + [
                kmeans_1d(np.exp(model.residuals[t]), k_online, seed) for t in range(1, model.T + 1)
            ]
        self.scaled, self.probs = _pad(rows)

    def atoms(self, t: int, b_prev) -> tuple[np.ndarray, np.ndarray]:
        m = self.model
        b_prev = np.atleast_1d(np.asarray(b_prev, dtype=float))
        scale = np.exp(m.a * np.log(b_prev + m.eps_log))
        s = np.maximum(scale[:, None] * self.scaled[t][None, :] - m.eps_log, 0.0)
        return s, self.probs[t]


@dataclass(frozen=True, eq=False)
class ResidualAtoms:
    z: np.ndarray  # (T+1, K) residual atoms; row 0 unused
    probs: np.ndarray

    @property
    def T(self) -> int:
        return self.z.shape[0] - 1


def residual_atoms(model: LogAR1Model, k: int, seed: int = 0) -> ResidualAtoms:
    """Per-step k-means of the stored residuals z_t."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rows = [(np.zeros(1), np.ones(1))] + [kmeans_1d(model.residuals[t], k, seed) for t in range(1, model.T + 1)]
    Z, P = _pad(rows)
    return ResidualAtoms(_frozen(Z), _frozen(P))


def generate_log_ar1(
    a: float,
    residual_mean,
    residual_std,
    profiles: DeterministicProfiles,
    count: int,
    seed: int,
    role: str = OPTIMIZATION,
    b0: float = 1.0,
    eps_log: float = EPS_LOG,
) -> ScenarioSet:
    """Synthetic paths from a known log-AR(1) with Gaussian residuals."""
    T1 = len(profiles)
    mu = np.broadcast_to(np.asarray(residual_mean, dtype=float), (T1,))
    sd = np.broadcast_to(np.asarray(residual_std, dtype=float), (T1,))
    rows = []
    for i in range(count):
        rng = scenario_rng(seed, role, i)
        z = mu + sd * rng.standard_normal(T1)
        b = np.empty(T1)
        b[0] = b0
        for t in range(1, T1):
            b[t] = braking_transition(b[t - 1], z[t], a, eps_log)
        rows.append(b)
    return ScenarioSet(np.vstack(rows), profiles, role, seed, f"log-ar1:a={a}")


def sample_fitted_log_ar1(
    model: LogAR1Model,
    count: int,
    seed: int,
    role: str = OPTIMIZATION,
    b0: float = 0.0,
    atoms: ResidualAtoms | None = None,
) -> ScenarioSet:
    """Paths from a fitted log-AR(1); residuals resampled per step.

    With ``atoms`` the residuals are drawn from the quantized atoms
    instead of the stored empirical samples.
    """
    T1 = model.T + 1
    rows = []
    for i in range(count):
        rng = scenario_rng(seed, role, i)
        u = rng.random(T1)
        b = np.empty(T1)
        b[0] = b0
        for t in range(1, T1):
            if atoms is None:
                zs = model.residuals[t]
                z = zs[min(int(u[t] * len(zs)), len(zs) - 1)]
            else:
                cdf = np.cumsum(atoms.probs[t])
                z = atoms.z[t, min(int(np.searchsorted(cdf, u[t], side="right")), len(cdf) - 1)]
            b[t] = braking_transition(b[t - 1], z, model.a, model.eps_log)
        rows.append(b)
    return ScenarioSet(np.vstack(rows), model.profiles, role, seed, "fitted-log-ar1")


# -- persistence --------------------------------------------------------------


def save_scenarios(s: ScenarioSet, path) -> Path:
    """Write ``<path>.csv`` (one row per (scenario, t)) and ``<path>.json`` manifest."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    p = s.profiles
    fixed = [f"{d!r},{{}},{n!r},{c!r}\n" for d, n, c in zip(p.d.tolist(), p.n.tolist(), p.c_o.tolist())]
    with open(csv_path, "w", newline="") as fh:
        fh.write("scenario,t,d,b,n,c_o\n")
        for i, row in enumerate(s.b.tolist()):
            fh.write("".join(f"{i},{t}," + fixed[t].format(repr(v)) for t, v in enumerate(row)))
    manifest = s.manifest()
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return csv_path


def load_scenarios(path) -> ScenarioSet:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    count, T = manifest["count"], manifest["T"]
    b = np.empty((count, T + 1))
    d = np.empty(T + 1)
    n = np.empty(T + 1)
    c_o = np.empty(T + 1)
    with open(path.with_suffix(".csv"), newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            i, t = int(row[0]), int(row[1])
            b[i, t] = float(row[3])
            if i == 0:
                d[t], n[t], c_o[t] = float(row[2]), float(row[4]), float(row[5])
    s = ScenarioSet(b, DeterministicProfiles(d, n, c_o), manifest["role"], manifest["seed"], manifest["profile"])
    if s.manifest()["data_digest"] != manifest["data_digest"]:
        raise ValueError(f"scenario file {path} does not match its manifest")
    return s
