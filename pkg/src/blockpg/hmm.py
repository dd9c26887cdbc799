"""Hidden Markov model types, exact joint-smoothing density, mixing constants.

Conventions used throughout the package:

* Site/time indices are 1-based in public APIs and error messages (matching
  the blocking notation); numpy arrays are 0-based internally.
* Tabular models store the transition matrix as conditional probabilities.
  Transition *densities* are taken against the uniform dominating measure on
  the K states, i.e. density = K * probability.  This convention only matters
  for the strong-mixing constants (sigma-, sigma+) and is stated wherever
  they are reported.
* All probability arithmetic is carried out in log space; weights are
  log-weights (T can reach hundreds, products underflow).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ModelError
from .rng import Stream, categorical_index

_LOG_2PI = math.log(2.0 * math.pi)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Emission families
# ---------------------------------------------------------------------------


class TableEmission:
    """Finite-alphabet emission g(x, y) stored as a K x V table.

    Rows need not be normalized: g is any nonnegative function, the joint
    density absorbs constants.
    """

    kind = "table"

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ModelError("emission table must be two-dimensional (states x symbols)")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ModelError("emission table entries must be finite and nonnegative")
        self.probs = _readonly(probs)
        self.num_symbols = probs.shape[1]

    def check_observations(self, values: np.ndarray) -> None:
        if not np.issubdtype(values.dtype, np.integer):
            raise ModelError("table emission requires integer observations")
        if values.min(initial=0) < 0 or values.max(initial=0) >= self.num_symbols:
            bad = int(np.argmax((values < 0) | (values >= self.num_symbols))) + 1
            raise ModelError(f"observation at time {bad} outside the emission alphabet")

    def log_g_matrix(self, values: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            log_table = np.log(self.probs)
        return np.ascontiguousarray(log_table[:, values].T)

    def g_column(self, y) -> np.ndarray:
        return self.probs[:, int(y)]

    def sample(self, state: int, stream: Stream):
        row = self.probs[state]
        return categorical_index(row, float(row.sum()), stream.uniform())

    def to_config(self) -> dict:
        return {"kind": "table", "probs": self.probs.tolist()}


class GaussianEmission:
    """Per-state Gaussian emission density g(x, y) = N(y; mean_x, sd_x^2)."""

    kind = "gaussian"

    def __init__(self, means, sds):
        means = np.asarray(means, dtype=np.float64)
        sds = np.asarray(sds, dtype=np.float64)
        if means.shape != sds.shape or means.ndim != 1:
            raise ModelError("gaussian emission needs matching 1-d means and sds")
        if np.any(sds <= 0):
            raise ModelError("gaussian emission sds must be positive")
        self.means = _readonly(means)
        self.sds = _readonly(sds)

    def check_observations(self, values: np.ndarray) -> None:
        if not np.all(np.isfinite(values)):
            bad = int(np.argmax(~np.isfinite(values))) + 1
            raise ModelError(f"observation at time {bad} is not finite")

    def log_g_matrix(self, values: np.ndarray) -> np.ndarray:
        z = (values[:, None] - self.means[None, :]) / self.sds[None, :]
        return np.ascontiguousarray(
            -0.5 * z * z - np.log(self.sds)[None, :] - 0.5 * _LOG_2PI
        )

    def g_column(self, y) -> np.ndarray:
        z = (float(y) - self.means) / self.sds
        return np.exp(-0.5 * z * z) / (self.sds * math.sqrt(2.0 * math.pi))

    def sample(self, state: int, stream: Stream):
        u1 = 1.0 - stream.uniform()
        u2 = stream.uniform()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return self.means[state] + self.sds[state] * z

    def to_config(self) -> dict:
        return {
            "kind": "gaussian",
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
        }


def emission_from_config(cfg: dict):
    kind = cfg.get("kind")
    if kind == "table":
        return TableEmission(cfg["probs"])
    if kind == "gaussian":
        return GaussianEmission(cfg["means"], cfg["sds"])
    raise ModelError(f"unknown emission kind {kind!r} (expected 'table' or 'gaussian')")


# ---------------------------------------------------------------------------
# Models and observations
# ---------------------------------------------------------------------------

ROW_SUM_TOL = 1e-12


class TabularHmm:
    """Finite-state HMM: initial law mu, row-stochastic transition, emission.

    Immutable after construction; safe to share across concurrent block
    updates.
    """

    def __init__(self, initial, transition, emission):
        initial = np.asarray(initial, dtype=np.float64)
        transition = np.asarray(transition, dtype=np.float64)
        if initial.ndim != 1:
            raise ModelError("initial law must be a vector")
        k = initial.shape[0]
        if k < 1:
            raise ModelError("need at least one state")
        if np.any(initial < 0) or abs(float(initial.sum()) - 1.0) > ROW_SUM_TOL:
            raise ModelError("initial law must be nonnegative and sum to 1 (tol 1e-12)")
        if transition.shape != (k, k):
            raise ModelError(f"transition matrix must be {k}x{k}")
        if np.any(transition < 0):
            raise ModelError("transition probabilities must be nonnegative")
        rowsums = transition.sum(axis=1)
        bad = np.nonzero(np.abs(rowsums - 1.0) > ROW_SUM_TOL)[0]
        if bad.size:
            raise ModelError(
                f"transition row {int(bad[0]) + 1} sums to {rowsums[bad[0]]!r}, not 1 (tol 1e-12)"
            )
        self.num_states = k
        self.initial = _readonly(initial)
        self.transition = _readonly(transition)
        self.emission = emission

    def to_config(self) -> dict:
        return {
            "num_states": self.num_states,
            "initial": self.initial.tolist(),
            "transition": self.transition.tolist(),
            "emission": self.emission.to_config(),
        }


@dataclass(frozen=True)
class GenericHmm:
    """General-state-space HMM defined by user callbacks.

    Supports the sampling paths only (bootstrap PG); exact inference and
    mixing constants require a `TabularHmm`.
    """

    sample_initial: Callable[[Stream], object]
    sample_transition: Callable[[object, Stream], object]
    log_transition: Callable[[object, object], float]
    log_emission: Callable[[object, object], float]


class ObservationRecord:
    """A fixed observation sequence y_{1:T}; immutable once loaded."""

    def __init__(self, values):
        values = np.asarray(values)
        if values.ndim != 1 or values.shape[0] < 1:
            raise ModelError("observations must be a nonempty 1-d sequence")
        if np.issubdtype(values.dtype, np.integer):
            values = values.astype(np.int64)
        else:
            values = values.astype(np.float64)
        self.values = _readonly(values)

    @property
    def T(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.T


@dataclass(frozen=True)
class MixingProfile:
    """Strong-mixing constants of a tabular model against uniform nu.

    sigma_plus bounds the one-step transition density, sigma_minus lower
    bounds the h-step composite, delta bounds the emission sup/inf ratio to
    the power h.
    """

    sigma_minus: float
    sigma_plus: float
    delta: float
    h: int

    def __post_init__(self):
        if self.h < 1:
            raise ModelError("h must be a positive integer")
        if not (0 < self.sigma_minus <= self.sigma_plus):
            raise ModelError("need 0 < sigma_minus <= sigma_plus")
        if self.delta < 1.0:
            raise ModelError("delta must be >= 1")


def validate_trajectory(model: TabularHmm, obs: ObservationRecord, x: np.ndarray) -> np.ndarray:
    """Check that x is a length-T int trajectory over the model's states."""
    x = np.asarray(x)
    if x.shape != (obs.T,):
        raise ModelError(f"trajectory length {x.shape} does not match T={obs.T}")
    if not np.issubdtype(x.dtype, np.integer):
        raise ModelError("trajectory entries must be integer states")
    if x.min() < 0 or x.max() >= model.num_states:
        raise ModelError("trajectory entry outside the state space")
    return x.astype(np.int64)


# ---------------------------------------------------------------------------
# Precomputed log-domain tables (shared by samplers and exact inference)
# ---------------------------------------------------------------------------


class LogTables:
    """Log/cumulative tables for one (model, observations) pair.

    logg[t - 1, x] = log g(x, y_t); logp/cump/rowtot index transition rows;
    cummu/mutot cover the initial law.  Contiguous float64/int64 arrays in
    exactly the layout the kernels consume.
    """

    def __init__(self, model: TabularHmm, obs: ObservationRecord):
        model.emission.check_observations(obs.values)
        with np.errstate(divide="ignore"):
            self.logp = _readonly(np.log(model.transition))
            self.logmu = _readonly(np.log(model.initial))
        self.cump = _readonly(np.cumsum(model.transition, axis=1))
        self.rowtot = _readonly(self.cump[:, -1].copy())
        self.cummu = _readonly(np.cumsum(model.initial))
        self.mutot = float(self.cummu[-1])
        self.logg = _readonly(model.emission.log_g_matrix(obs.values))
        self.num_states = model.num_states
        self.T = obs.T
        self.model = model
        self.obs = obs


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _forward_log_evidence(tables: LogTables) -> float:
    """log p(y_{1:T}) by the forward algorithm in log space."""
    a = tables.logmu + tables.logg[0]
    for t in range(1, tables.T):
        m = a.max()
        if m == -np.inf:
            raise ModelError(f"forward pass vanished at time {t}; zero-probability observations")
        a = m + np.log(np.exp(a - m) @ tables.model.transition) + tables.logg[t]
    m = a.max()
    if m == -np.inf:
        raise ModelError(f"forward pass vanished at time {tables.T}")
    return float(m + np.log(np.exp(a - m).sum()))


def log_evidence(model: TabularHmm, obs: ObservationRecord) -> float:
    return _forward_log_evidence(LogTables(model, obs))


def jsd_log_density(model: TabularHmm, obs: ObservationRecord, x, tables: Optional[LogTables] = None) -> float:
    """Log density of the joint smoothing distribution at trajectory x.

    Normalized against counting measure on the K^T trajectories: the values
    exp(jsd_log_density) sum to 1 over all trajectories.  The normalizer
    log p(y_{1:T}) comes from the forward algorithm.
    """
    if not isinstance(model, TabularHmm):
        raise ModelError("jsd_log_density is defined for tabular models only")
    x = validate_trajectory(model, obs, x)
    if tables is None:
        tables = LogTables(model, obs)
    log_joint = float(tables.logmu[x[0]])
    for t in range(obs.T):
        g = float(tables.logg[t, x[t]])
        if g == -math.inf:
            raise ModelError(
                f"emission probability g(x_{t + 1}, y_{t + 1}) is zero at time {t + 1}"
            )
        log_joint += g
        if t > 0:
            log_joint += float(tables.logp[x[t - 1], x[t]])
    return log_joint - _forward_log_evidence(tables)


def mixing_profile(model: TabularHmm, obs: ObservationRecord, h: int = 1) -> MixingProfile:
    """Compute (sigma-, sigma+, delta, h) for a tabular model.

    Densities are taken against the uniform dominating measure on the K
    states (density = K * probability): sigma+ is the max one-step density,
    sigma- the min entry of the h-step composite density, and delta the h-th
    power of the worst per-observation emission ratio sup_x g / inf_x g.
    """
    if not isinstance(model, TabularHmm):
        raise ModelError("mixing_profile is defined for tabular models only")
    if h < 1 or int(h) != h:
        raise ModelError("h must be a positive integer")
    h = int(h)
    k = model.num_states
    sigma_plus = float(k * model.transition.max())
    step_h = np.linalg.matrix_power(model.transition, h)
    sigma_minus = float(k * step_h.min())
    if sigma_minus <= 0:
        raise ModelError(f"h-step transition density has a zero entry at h={h}; S1(ii) fails")

    worst = 1.0
    for t, y in enumerate(obs.values):
        col = model.emission.g_column(y)
        lo = float(col.min())
        hi = float(col.max())
        if lo <= 0:
            raise ModelError(
                f"inf_x g(x, y_{t + 1}) = 0 at time {t + 1}; emission ratio bound unverifiable"
            )
        worst = max(worst, hi / lo)
    delta = worst**h
    return MixingProfile(sigma_minus=sigma_minus, sigma_plus=sigma_plus, delta=delta, h=h)


def simulate(model: TabularHmm, T: int, stream: Stream):
    """Forward-simulate (x_{1:T}, y_{1:T}) from the model."""
    x = np.empty(T, dtype=np.int64)
    ys = []
    mu = model.initial
    x[0] = categorical_index(mu, float(mu.sum()), stream.uniform())
    for t in range(1, T):
        row = model.transition[x[t - 1]]
        x[t] = categorical_index(row, float(row.sum()), stream.uniform())
    for t in range(T):
        ys.append(model.emission.sample(int(x[t]), stream))
    values = np.asarray(ys)
    return x, ObservationRecord(values)


# ---------------------------------------------------------------------------
# Model file format
# ---------------------------------------------------------------------------
#
# A model file is a single JSON document:
#
#   {
#     "num_states": K,
#     "initial": [...K floats summing to 1...],
#     "transition": [[...], ...]          # K x K row-stochastic
#     "emission": {"kind": "table", "probs": [[...K x V...]]}
#                 | {"kind": "gaussian", "means": [...], "sds": [...]},
#     "observations": [...]               # ints for table, floats for gaussian
#   }
#
# "observations" may be omitted when the caller synthesizes observations
# (e.g. the stability experiment).  The loader validates invariants and
# reports the first violated one.


def model_from_config(cfg: dict):
    try:
        k = cfg["num_states"]
        initial = cfg["initial"]
        transition = cfg["transition"]
        emission_cfg = cfg["emission"]
    except KeyError as exc:
        raise ModelError(f"model config missing field {exc}") from exc
    emission = emission_from_config(emission_cfg)
    model = TabularHmm(initial, transition, emission)
    if model.num_states != k:
        raise ModelError(f"num_states={k} does not match initial law of length {model.num_states}")
    obs = None
    if cfg.get("observations") is not None:
        values = np.asarray(cfg["observations"])
        if isinstance(emission, TableEmission):
            if values.dtype.kind == "f" and np.all(values == np.floor(values)):
                values = values.astype(np.int64)
        obs = ObservationRecord(values)
        emission.check_observations(obs.values)
    return model, obs


def load_model(path):
    """Load (model, observations-or-None) from a JSON model file."""
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    return model_from_config(cfg)


def save_model(path, model: TabularHmm, obs: Optional[ObservationRecord] = None) -> None:
    cfg = model.to_config()
    if obs is not None:
        cfg["observations"] = obs.values.tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=1)
        fh.write("\n")
