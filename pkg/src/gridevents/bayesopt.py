"""Sequential model-based hyperparameter search.

A Gaussian-process surrogate (Matern-5/2 kernel, per-dimension length
scales) is fit to all evaluated points in a unit-cube encoding of the
mixed continuous/integer/categorical search space; the next point is the
expected-improvement maximizer over a random candidate set with local
refinement. The objective is maximized.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import ndtr
from scipy.stats import qmc

from .seeding import generator, subseed

HISTORY_HEADER = [
    "call_index", "learning_rate", "n_hidden_layers", "nodes_per_layer",
    "input_dropout", "hidden_dropout", "activation", "objective",
]


class OutOfBounds(ValueError):
    """Parameter value outside its search-space dimension."""


class SingularKernel(RuntimeError):
    """Kernel matrix stayed non-positive-definite after jitter escalation."""


class NegativeStd(ValueError):
    """Expected improvement got a negative standard deviation."""


@dataclass(frozen=True)
class ContinuousDim:
    name: str
    lo: float
    hi: float
    scale: str = "linear"  # "linear" or "log10"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi")
        if self.scale not in ("linear", "log10"):
            raise ValueError(f"{self.name}: scale must be linear or log10")
        if self.scale == "log10" and self.lo <= 0:
            raise ValueError(f"{self.name}: log10 scale needs lo > 0")

    @property
    def width(self) -> int:
        return 1

    def encode(self, value: float) -> np.ndarray:
        v = float(value)
        if not self.lo <= v <= self.hi:
            raise OutOfBounds(f"{self.name}={v} outside [{self.lo}, {self.hi}]")
        if self.scale == "log10":
            t = (math.log10(v) - math.log10(self.lo)) / (math.log10(self.hi) - math.log10(self.lo))
        else:
            t = (v - self.lo) / (self.hi - self.lo)
        return np.array([t])

    def decode(self, x: np.ndarray) -> float:
        t = float(np.clip(x[0], 0.0, 1.0))
        if self.scale == "log10":
            return 10.0 ** (math.log10(self.lo) + t * (math.log10(self.hi) - math.log10(self.lo)))
        return self.lo + t * (self.hi - self.lo)


@dataclass(frozen=True)
class IntegerDim:
    name: str
    lo: int
    hi: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi")

    @property
    def width(self) -> int:
        return 1

    def encode(self, value: int) -> np.ndarray:
        v = int(value)
        if not self.lo <= v <= self.hi:
            raise OutOfBounds(f"{self.name}={v} outside [{self.lo}, {self.hi}]")
        return np.array([(v - self.lo) / (self.hi - self.lo)])

    def decode(self, x: np.ndarray) -> int:
        t = float(np.clip(x[0], 0.0, 1.0))
        return int(self.lo + round(t * (self.hi - self.lo)))


@dataclass(frozen=True)
class CategoricalDim:
    name: str
    values: tuple

    def __post_init__(self):
        if len(self.values) < 2:
            raise ValueError(f"{self.name}: need >= 2 categories")

    @property
    def width(self) -> int:
        return len(self.values)

    def encode(self, value) -> np.ndarray:
        try:
            i = self.values.index(value)
        except ValueError:
            raise OutOfBounds(f"{self.name}={value!r} not in {self.values}") from None
        out = np.zeros(len(self.values))
        out[i] = 1.0
        return out

    def decode(self, x: np.ndarray):
        return self.values[int(np.argmax(x))]


Dimension = ContinuousDim | IntegerDim | CategoricalDim


@dataclass(frozen=True)
class SearchSpace:
    """Ordered mixed-type search space with a unit-cube encoding.

    Continuous dimensions min-max map (after log10 for log-scaled ones),
    integers min-max map with round-to-nearest decoding, categoricals are
    one-hot with argmax decoding; decode(encode(p)) recovers p.
    """

    dimensions: tuple[Dimension, ...]

    @property
    def encoded_dim(self) -> int:
        return sum(d.width for d in self.dimensions)

    def encode(self, params: Mapping[str, object]) -> np.ndarray:
        parts = []
        for dim in self.dimensions:
            if dim.name not in params:
                raise OutOfBounds(f"missing parameter {dim.name!r}")
            parts.append(dim.encode(params[dim.name]))
        return np.concatenate(parts)

    def decode(self, x: np.ndarray) -> dict:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.encoded_dim,):
            raise ValueError(f"encoded point must have shape ({self.encoded_dim},)")
        out = {}
        k = 0
        for dim in self.dimensions:
            out[dim.name] = dim.decode(x[k:k + dim.width])
            k += dim.width
        return out


def default_search_space() -> SearchSpace:
    """The classifier's six-hyperparameter space."""
    return SearchSpace((
        ContinuousDim("learning_rate", 1e-5, 1e-1, scale="log10"),
        IntegerDim("n_hidden_layers", 1, 8),
        IntegerDim("nodes_per_layer", 20, 500),
        ContinuousDim("input_dropout", 0.4, 0.9),
        ContinuousDim("hidden_dropout", 0.2, 0.7),
        CategoricalDim("activation", ("sigmoid", "relu")),
    ))


@dataclass(frozen=True)
class Trial:
    """One objective evaluation in a search campaign."""

    params: dict
    objective: float
    call_index: int


# ---------------------------------------------------------------------------
# Gaussian-process surrogate

NOISE_FLOOR = 1e-10
_DEFAULT_LENGTHSCALE = 0.5
_DEFAULT_SIGNAL_VAR = 1.0
_DEFAULT_NOISE_VAR = 1e-6
_MIN_TRIALS_FOR_HYPER_OPT = 5


def _matern52(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray,
              signal_var: float) -> np.ndarray:
    diff = (X1[:, None, :] - X2[None, :, :]) / lengthscales
    r = np.sqrt((diff * diff).sum(axis=-1))
    s5r = math.sqrt(5.0) * r
    return signal_var * (1.0 + s5r + 5.0 * r * r / 3.0) * np.exp(-s5r)


def _chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of K, escalating jitter 1e-10 -> 1e-6 on failure."""
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(len(K)))
            return L, jitter
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-6:
                raise SingularKernel(
                    "kernel matrix not positive definite at jitter 1e-6") from None


@dataclass
class GpSurrogate:
    """Gaussian-process posterior over the encoded unit cube.

    Targets are standardized internally; the cached Cholesky factor of
    K + noise*I serves every posterior query.
    """

    X: np.ndarray
    y: np.ndarray
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    y_mean: float
    y_std: float
    L: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)


def _log_marginal_likelihood(X: np.ndarray, y_std: np.ndarray,
                             lengthscales: np.ndarray, signal_var: float,
                             noise_var: float) -> float:
    n = len(X)
    K = _matern52(X, X, lengthscales, signal_var) + noise_var * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = cho_solve((L, True), y_std)
    return float(-0.5 * y_std @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi))


def _fit_kernel_hypers(X: np.ndarray, y_std: np.ndarray, seed: int) -> tuple[np.ndarray, float, float]:
    """Maximize log marginal likelihood over log kernel parameters with a
    small multi-start Nelder-Mead search (gradient-free)."""
    d = X.shape[1]

    def unpack(theta):
        ls = np.exp(np.clip(theta[:d], math.log(0.02), math.log(20.0)))
        sv = math.exp(min(max(theta[d], math.log(1e-4)), math.log(1e3)))
        nv = math.exp(min(max(theta[d + 1], math.log(NOISE_FLOOR)), math.log(1.0)))
        return ls, sv, nv

    def negative_lml(theta):
        ls, sv, nv = unpack(theta)
        return -_log_marginal_likelihood(X, y_std, ls, sv, nv)

    base = np.concatenate([
        np.full(d, math.log(_DEFAULT_LENGTHSCALE)),
        [math.log(_DEFAULT_SIGNAL_VAR), math.log(_DEFAULT_NOISE_VAR)],
    ])
    rng = np.random.default_rng(seed)
    starts = [base]
    for _ in range(2):
        starts.append(base + rng.normal(0.0, 1.0, size=d + 2))

    best_theta, best_val = base, negative_lml(base)
    for start in starts:
        res = minimize(negative_lml, start, method="Nelder-Mead",
                       options={"maxiter": 120 * (d + 2), "xatol": 1e-3, "fatol": 1e-4})
        if res.fun < best_val:
            best_theta, best_val = res.x, res.fun
    return unpack(best_theta)


def gp_fit(
    trials_X: np.ndarray,
    trials_y: np.ndarray,
    *,
    seed: int = 0,
    lengthscales: np.ndarray | None = None,
    signal_var: float | None = None,
    noise_var: float | None = None,
) -> GpSurrogate:
    """Fit the surrogate to encoded observations.

    Targets are standardized to zero mean / unit variance internally.
    Kernel parameters are taken as given when supplied; otherwise they are
    set by marginal-likelihood maximization, or to fixed defaults when
    there are fewer than 5 observations. Near-duplicate inputs are handled
    by jitter escalation; a matrix that stays indefinite raises
    SingularKernel.
    """
    X = np.atleast_2d(np.asarray(trials_X, dtype=float))
    y = np.asarray(trials_y, dtype=float).ravel()
    if len(X) < 2:
        raise ValueError("gp_fit needs at least 2 observations")
    if len(X) != len(y):
        raise ValueError("X and y length mismatch")

    y_mean = float(y.mean())
    y_std_scale = float(y.std())
    if y_std_scale <= 0.0:
        y_std_scale = 1.0
    y_standardized = (y - y_mean) / y_std_scale

    given = lengthscales is not None and signal_var is not None and noise_var is not None
    if given:
        ls = np.asarray(lengthscales, dtype=float)
        sv, nv = float(signal_var), float(noise_var)
    elif len(X) < _MIN_TRIALS_FOR_HYPER_OPT:
        ls = np.full(X.shape[1], _DEFAULT_LENGTHSCALE)
        sv, nv = _DEFAULT_SIGNAL_VAR, _DEFAULT_NOISE_VAR
    else:
        ls, sv, nv = _fit_kernel_hypers(X, y_standardized, seed)
    nv = max(nv, NOISE_FLOOR)

    K = _matern52(X, X, ls, sv) + nv * np.eye(len(X))
    L, _ = _chol_with_jitter(K)
    alpha = cho_solve((L, True), y_standardized)
    return GpSurrogate(X=X, y=y, lengthscales=ls, signal_var=sv, noise_var=nv,
                       y_mean=y_mean, y_std=y_std_scale, L=L, alpha=alpha)


def gp_posterior(gp: GpSurrogate, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation at encoded query point(s).

    Variance is clamped at zero against round-off before the square root.
    """
    Xq = np.atleast_2d(np.asarray(x, dtype=float))
    Ks = _matern52(Xq, gp.X, gp.lengthscales, gp.signal_var)
    mean = Ks @ gp.alpha
    v = solve_triangular(gp.L, Ks.T, lower=True)
    var = gp.signal_var - (v * v).sum(axis=0)
    std = np.sqrt(np.maximum(var, 0.0))
    mean = mean * gp.y_std + gp.y_mean
    std = std * gp.y_std
    if np.asarray(x).ndim == 1:
        return float(mean[0]), float(std[0])
    return mean, std


_SQRT_2PI = math.sqrt(2.0 * math.pi)


def expected_improvement(mean, std, best_so_far: float, xi: float = 0.0):
    """Closed-form expected improvement for a maximized objective.

    With z = (mean - best - xi) / std:
    EI = (mean - best - xi) * Phi(z) + std * phi(z) when std > 0, and
    max(mean - best - xi, 0) at std = 0. Always >= 0.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std < 0.0):
        raise NegativeStd("std must be >= 0")
    improve = mean - best_so_far - xi
    ei = np.maximum(improve, 0.0)
    pos = std > 0.0
    if np.any(pos):
        z = np.divide(improve, std, out=np.zeros_like(std), where=pos)
        phi = np.exp(-0.5 * z * z) / _SQRT_2PI
        ei = np.where(pos, improve * ndtr(z) + std * phi, ei)
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def suggest(
    gp: GpSurrogate,
    space: SearchSpace,
    rng: np.random.Generator,
    *,
    xi: float = 0.01,
    n_candidates: int = 10_000,
    climb_rounds: int = 50,
    initial_step: float = 0.01,
) -> dict:
    """Pick the next parameters to evaluate.

    Scores expected improvement on a uniform candidate set, then refines
    the best candidate by coordinate-wise hill climbing (accepting only
    improvements, halving the step after a failed sweep). Deterministic
    per rng state.
    """
    best_so_far = float(gp.y.max())
    d = space.encoded_dim
    candidates = rng.random((n_candidates, d))
    mean, std = gp_posterior(gp, candidates)
    ei = expected_improvement(mean, std, best_so_far, xi)
    x = candidates[int(np.argmax(ei))].copy()
    best_ei = float(ei.max())

    step = initial_step
    for _ in range(climb_rounds):
        improved = False
        for k in range(d):
            trials = []
            for delta in (step, -step):
                cand = x.copy()
                cand[k] = min(max(cand[k] + delta, 0.0), 1.0)
                trials.append(cand)
            m, s = gp_posterior(gp, np.array(trials))
            e = expected_improvement(m, s, best_so_far, xi)
            j = int(np.argmax(e))
            if e[j] > best_ei:
                x = trials[j]
                best_ei = float(e[j])
                improved = True
        if not improved:
            step *= 0.5
    return space.decode(x)


class ObjectiveFailure(RuntimeError):
    """Raised by objectives; optimize records the trial as 0 and continues."""


def optimize(
    objective: Callable[[dict], float],
    space: SearchSpace,
    n_calls: int = 100,
    n_init: int = 10,
    seed: int = 0,
    xi: float = 0.01,
    initial_trials: Sequence[Trial] = (),
    on_trial: Callable[[Trial], None] | None = None,
) -> tuple[Trial, list[Trial]]:
    """Run a sequential search campaign and return (best trial, history).

    The first n_init points come from seeded Latin-hypercube sampling; each
    later call refits the surrogate to all previous trials and evaluates
    the suggestion. An objective that raises is recorded as objective 0.0
    and the campaign continues. Passing initial_trials resumes a campaign:
    those count toward n_calls. Deterministic per seed for a deterministic
    objective.
    """
    if n_init < 2:
        raise ValueError("n_init must be >= 2")
    if n_calls < n_init:
        raise ValueError("n_calls must be >= n_init")

    history: list[Trial] = list(initial_trials)

    def run_trial(params: dict, call_index: int) -> None:
        try:
            value = float(objective(params))
        except Exception:
            value = 0.0
        trial = Trial(params=params, objective=value, call_index=call_index)
        history.append(trial)
        if on_trial is not None:
            on_trial(trial)

    lhs = qmc.LatinHypercube(d=space.encoded_dim, seed=subseed(seed, "lhs"))
    init_points = lhs.random(n=n_init)
    suggest_rng = generator(seed, "suggest")

    while len(history) < n_calls:
        i = len(history)
        if i < n_init:
            run_trial(space.decode(init_points[i]), i)
        else:
            X = np.array([space.encode(t.params) for t in history])
            y = np.array([t.objective for t in history])
            gp = gp_fit(X, y, seed=subseed(seed, "gp", i))
            run_trial(suggest(gp, space, suggest_rng, xi=xi), i)

    best = max(history, key=lambda t: (t.objective, -t.call_index))
    return best, history


def save_history(trials: Sequence[Trial], path: str | Path) -> None:
    """Persist a campaign over the classifier's space as CSV."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        for t in trials:
            p = t.params
            writer.writerow([
                t.call_index,
                repr(float(p["learning_rate"])),
                int(p["n_hidden_layers"]),
                int(p["nodes_per_layer"]),
                repr(float(p["input_dropout"])),
                repr(float(p["hidden_dropout"])),
                str(p["activation"]),
                repr(float(t.objective)),
            ])


def load_history(path: str | Path) -> list[Trial]:
    trials = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != HISTORY_HEADER:
            raise ValueError(f"{path}: expected header {HISTORY_HEADER}")
        for row in reader:
            if not row:
                continue
            params = {
                "learning_rate": float(row[1]),
                "n_hidden_layers": int(row[2]),
                "nodes_per_layer": int(row[3]),
                "input_dropout": float(row[4]),
                "hidden_dropout": float(row[5]),
                "activation": row[6],
            }
            trials.append(Trial(params=params, objective=float(row[7]),
                                call_index=int(row[0])))
    return trials
