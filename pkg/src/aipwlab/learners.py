"""Online regression learners with regret accounting.

Two loss modes are supported.  ``weighted`` uses the importance-weighted loss
``(g/pi)^2 (y - mu(x, a))^2``; ``plain`` drops the weight.  A learner emits a
full outcome table before each round, then is updated with that round.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .instance import ConfigurationError, Paths, as_table

MODES = ("weighted", "plain")


def loss_weight(g_value, pi, mode: str = "weighted"):
    if mode == "weighted":
        return (np.asarray(g_value, dtype=float) / np.asarray(pi, dtype=float)) ** 2
    if mode == "plain":
        return np.ones_like(np.asarray(pi, dtype=float))
    raise ConfigurationError(f"unknown loss mode {mode!r}")


def weighted_sq_loss(x, a, y, pi, g_value, mu, mode: str = "weighted") -> float:
    """Round loss of the outcome table ``mu``."""
    if pi <= 0:
        raise ValueError("propensity must be positive")
    w = float(loss_weight(g_value, pi, mode))
    return w * (y - float(mu[x, a])) ** 2


def loss_gradient_table(x, a, y, pi, g_value, mu, mode: str = "weighted") -> np.ndarray:
    """Gradient of the round loss in the table ``mu``: a point mass at ``(x, a)``."""
    grad = np.zeros_like(np.asarray(mu, dtype=float))
    grad[x, a] = 2.0 * float(loss_weight(g_value, pi, mode)) * (mu[x, a] - y)
    return grad


def linear_loss(theta, phi, x, a, y, pi, g_value, mode: str = "weighted") -> float:
    """Round loss of the linear model ``theta`` with features ``phi``."""
    return float(loss_weight(g_value, pi, mode)) * (y - float(phi[x, a] @ theta)) ** 2


def linear_loss_gradient(theta, phi, x, a, y, pi, g_value, mode: str = "weighted") -> np.ndarray:
    w = float(loss_weight(g_value, pi, mode))
    return 2.0 * w * (float(phi[x, a] @ theta) - y) * phi[x, a]


def project_box(mu, L: float) -> np.ndarray:
    return np.clip(mu, -L, L)


def project_ball(theta, R: float) -> np.ndarray:
    """Radial projection; norms within a few ulps of ``R`` count as inside so the map is idempotent."""
    theta = np.asarray(theta, dtype=float)
    nrm = float(np.linalg.norm(theta))
    return theta if nrm <= R * (1.0 + 8 * np.finfo(float).eps) else theta * (R / nrm)


def ogd_tabular_step(state, x, a, y, pi, g_value, eta, L, mode: str = "weighted") -> np.ndarray:
    """One projected gradient step on the box; only ``(x, a)`` moves."""
    out = np.array(state, dtype=float)
    r = out[x, a] - y
    out[x, a] = min(max(out[x, a] - eta * 2.0 * float(loss_weight(g_value, pi, mode)) * r, -L), L)
    return out


@dataclass(frozen=True)
class LinearModel:
    """``mu(x, a) = phi(x, a) . theta`` with ``||theta|| <= R`` and ``||phi|| <= 1``."""

    phi: np.ndarray
    theta: np.ndarray
    R: float

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 3:
            raise ConfigurationError("features must be (contexts, actions, d)")
        if np.any(np.linalg.norm(phi, axis=2) > 1 + 1e-12):
            raise ConfigurationError("feature norms must be at most 1")
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (phi.shape[2],):
            raise ConfigurationError("theta dimension does not match features")
        if np.linalg.norm(theta) > self.R * (1 + 1e-12):
            raise ConfigurationError("theta outside the ball")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "theta", theta)

    def table(self) -> np.ndarray:
        return self.phi @ self.theta


def ogd_linear_step(model: LinearModel, x, a, y, pi, g_value, eta, mode: str = "weighted") -> LinearModel:
    """One projected gradient step on the parameter ball."""
    r = float(model.phi[x, a] @ model.theta) - y
    w = float(loss_weight(g_value, pi, mode))
    theta = project_ball(model.theta - eta * 2.0 * w * r * model.phi[x, a], model.R)
    return LinearModel(model.phi, theta, model.R)


def default_learning_rate(kind: str, i: int, L: float, B: float, diam_or_R: float) -> float:
    """Step sizes ``diam / (4 L B^2 sqrt(i))`` (tabular) and ``R / (B^2 (L + R) sqrt(i))`` (linear)."""
    if i < 1:
        raise ValueError("rounds are numbered from 1")
    if kind == "tabular":
        return diam_or_R / (4.0 * L * B * B * math.sqrt(i))
    if kind == "linear":
        return diam_or_R / (B * B * (L + diam_or_R) * math.sqrt(i))
    raise ValueError(f"unknown schedule kind {kind!r}")


def box_diameter(n_contexts: int, n_actions: int, L: float) -> float:
    """Largest Euclidean norm in the box ``[-L, L]^(X x A)``."""
    return L * math.sqrt(n_contexts * n_actions)


def aggregating_step(weights, x, a, y, experts, L: float):
    """Predict at ``(x, a)`` by the mixability substitution rule, then reweight on ``y``.

    Returns ``(prediction, new_weights)`` with ``eta = 1 / (8 L^2)``.
    """
    experts = np.asarray(experts, dtype=float)
    w = np.asarray(weights, dtype=float)
    if experts.shape[0] == 0:
        raise ConfigurationError("empty expert class")
    eta = 1.0 / (8.0 * L * L)
    e = experts[:, x, a]
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    g_lo = -_lse(logw - eta * (-L - e) ** 2) / eta
    g_hi = -_lse(logw - eta * (L - e) ** 2) / eta
    pred = min(max((g_lo - g_hi) / (4.0 * L), -L), L)
    new = logw - eta * (y - e) ** 2
    new = np.exp(new - _lse(new))
    return pred, new / new.sum()


def _lse(v) -> float:
    v = np.asarray(v, dtype=float)
    m = np.max(v)
    if not np.isfinite(m):
        return m
    return float(m + np.log(np.sum(np.exp(v - m))))


# --------------------------------------------------------------------------
# relaxations and the generic forecaster


class ExpWeightsRelaxation:
    """Exponential-weights potential over a finite class.

    ``Rel(points, ys) = ln|F|/eta + (1/eta) ln mean_f exp(-eta * loss_f)`` with
    ``eta = 1 / (8 L^2)``; admissible for squared loss on ``[-L, L]``.
    """

    def __init__(self, experts, L: float):
        self.experts = np.asarray(experts, dtype=float)
        self.L = float(L)
        self.eta = 1.0 / (8.0 * L * L)

    def __call__(self, points: Sequence, ys: Sequence) -> float:
        m = self.experts.shape[0]
        loss = np.zeros(m)
        for (x, a), y in zip(points, ys):
            loss += (y - self.experts[:, x, a]) ** 2
        return math.log(m) / self.eta + (_lse(-self.eta * loss) - math.log(m)) / self.eta


class ConstantRelaxation:
    """``Rel == c``; not admissible, used as a negative control."""

    def __init__(self, c: float = 0.0):
        self.c = float(c)

    def __call__(self, points, ys) -> float:
        return self.c


def generic_forecaster_predict(relaxation: Callable, history: Sequence, x, a, L: float) -> float:
    """``clip((Rel(.., +L) - Rel(.., -L)) / (4L))`` for the query ``(x, a)``.

    ``history`` is a sequence of ``((x, a), y)`` pairs.
    """
    pts = [p for p, _ in history] + [(x, a)]
    ys = [y for _, y in history]
    hi = relaxation(pts, ys + [L])
    lo = relaxation(pts, ys + [-L])
    return min(max((hi - lo) / (4.0 * L), -L), L)


@dataclass
class AdmissibilityReport:
    initial_ok: bool
    recursive_ok: bool
    worst_recursive_excess: float
    worst_initial_excess: float

    @property
    def admissible(self) -> bool:
        return self.initial_ok and self.recursive_ok


def check_admissibility(relaxation, experts, L: float, streams, y_grid=None, tol: float = 1e-9):
    """Grid check of the two relaxation conditions along given streams.

    ``streams`` is an iterable of lists of ``((x, a), y)``.  The recursive
    condition is tested with the generic forecaster's prediction against every
    ``y`` in ``y_grid``; the initial condition compares the full-stream value
    with the negated best loss in the class.
    """
    experts = np.asarray(experts, dtype=float)
    y_grid = np.linspace(-L, L, 21) if y_grid is None else np.asarray(y_grid)
    worst_rec = -np.inf
    worst_init = -np.inf
    for stream in streams:
        for t in range(len(stream)):
            hist = stream[:t]
            (x, a), _ = stream[t]
            pred = generic_forecaster_predict(relaxation, hist, x, a, L)
            base = relaxation([p for p, _ in hist], [y for _, y in hist])
            pts = [p for p, _ in hist] + [(x, a)]
            ys = [y for _, y in hist]
            for y in y_grid:
                excess = (pred - y) ** 2 + relaxation(pts, ys + [float(y)]) - base
                worst_rec = max(worst_rec, excess)
        pts = [p for p, _ in stream]
        ys = np.array([y for _, y in stream])
        best = min(float(np.sum((ys - experts[f][tuple(np.array(pts).T)]) ** 2)) for f in range(len(experts)))
        worst_init = max(worst_init, -best - relaxation(pts, list(ys)))
    return AdmissibilityReport(worst_init <= tol, worst_rec <= tol, float(worst_rec), float(worst_init))


# --------------------------------------------------------------------------
# regret ledger and comparator classes


@dataclass
class RegretLedger:
    """Realized losses plus the round tuples needed for hindsight evaluation."""

    mode: str = "weighted"
    x: list = field(default_factory=list)
    a: list = field(default_factory=list)
    y: list = field(default_factory=list)
    pi: list = field(default_factory=list)
    g: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    def record(self, x, a, y, pi, g_value, loss):
        if loss < 0:
            raise ValueError("negative loss")
        self.x.append(int(x))
        self.a.append(int(a))
        self.y.append(float(y))
        self.pi.append(float(pi))
        self.g.append(float(g_value))
        self.losses.append(float(loss))

    def __len__(self):
        return len(self.losses)

    def arrays(self):
        return (np.array(self.x, dtype=np.int64), np.array(self.a, dtype=np.int64),
                np.array(self.y), np.array(self.pi), np.array(self.g))

    def weights(self) -> np.ndarray:
        _, _, _, pi, g = self.arrays()
        return loss_weight(g, pi, self.mode)

    def prefix(self, k: int) -> "RegretLedger":
        return RegretLedger(self.mode, self.x[:k], self.a[:k], self.y[:k], self.pi[:k], self.g[:k],
                            self.losses[:k])


@dataclass
class HindsightResult:
    comparator: np.ndarray
    total: float
    gap: float = 0.0


class TabularBox:
    """All tables with entries in ``[-L, L]``."""

    kind = "tabular"

    def __init__(self, n_contexts: int, n_actions: int, L: float):
        self.shape = (n_contexts, n_actions)
        self.L = float(L)

    @property
    def diameter(self) -> float:
        return box_diameter(*self.shape, self.L)

    def fit(self, X, A, Y, W):
        """Batched hindsight over paths; returns ``(comparators, totals, gaps)``."""
        X, A, Y, W = (np.atleast_2d(v) for v in (X, A, Y, W))
        N = X.shape[0]
        k = self.shape[0] * self.shape[1]
        cell = X * self.shape[1] + A + k * np.arange(N)[:, None]
        sw = np.bincount(cell.ravel(), W.ravel(), N * k)
        swy = np.bincount(cell.ravel(), (W * Y).ravel(), N * k)
        mean = np.where(sw > 0, swy / np.where(sw > 0, sw, 1.0), 0.0)
        comp = np.clip(mean, -self.L, self.L)
        totals = np.sum(W * (Y - comp[cell]) ** 2, axis=1)
        return comp.reshape((N,) + self.shape), totals, np.zeros(N)

    def approximation_error(self, weight_table, target):
        return float(np.sum(weight_table * (target - np.clip(target, -self.L, self.L)) ** 2)), 0.0


class LinearClass:
    """``phi . theta`` over the ball ``||theta|| <= R``."""

    kind = "linear"

    def __init__(self, phi, R: float, max_iter: int = 10_000, tol: float = 1e-10):
        LinearModel(phi, np.zeros(np.asarray(phi).shape[2]), R)
        self.phi = np.asarray(phi, dtype=float)
        self.R = float(R)
        self.max_iter = max_iter
        self.tol = tol

    def _solve(self, F, Y, W):
        H = np.einsum("nt,ntj,ntl->njl", W, F, F)
        b = np.einsum("nt,nt,ntj->nj", W, Y, F)
        c = np.sum(W * Y * Y, axis=1)
        return kernels.ball_lsq(H, b, c, self.R, self.max_iter, self.tol)

    def fit(self, X, A, Y, W):
        X, A, Y, W = (np.atleast_2d(v) for v in (X, A, Y, W))
        theta, obj, gap, _ = self._solve(self.phi[X, A], Y, W)
        return np.einsum("xak,nk->nxa", self.phi, theta), obj, gap

    def approximation_error(self, weight_table, target):
        F = self.phi.reshape(1, -1, self.phi.shape[2])
        _, obj, gap, _ = self._solve(F, target.reshape(1, -1), weight_table.reshape(1, -1))
        return float(obj[0]), float(gap[0])


class FiniteClass:
    """A finite set of tables; hindsight is an exhaustive scan."""

    kind = "finite"

    def __init__(self, experts, L: Optional[float] = None):
        self.experts = np.asarray(experts, dtype=float)
        if self.experts.ndim != 3 or self.experts.shape[0] == 0:
            raise ConfigurationError("finite class must be a non-empty stack of tables")
        self.L = float(np.max(np.abs(self.experts))) if L is None else float(L)
        if np.any(np.abs(self.experts) > self.L):
            raise ConfigurationError("expert values exceed L")

    def fit(self, X, A, Y, W):
        X, A, Y, W = (np.atleast_2d(v) for v in (X, A, Y, W))
        vals = self.experts[:, X, A]  # (m, N, n)
        tot = np.sum(W[None] * (Y[None] - vals) ** 2, axis=2)
        best = np.argmin(tot, axis=0)
        return self.experts[best], tot[best, np.arange(X.shape[0])], np.zeros(X.shape[0])

    def approximation_error(self, weight_table, target):
        errs = np.sum(weight_table[None] * (self.experts - target[None]) ** 2, axis=(1, 2))
        return float(errs.min()), 0.0


def best_in_hindsight(ledger: RegretLedger, cls) -> HindsightResult:
    """Best fixed member of ``cls`` on the ledger's losses."""
    if len(ledger) == 0:
        raise ValueError("empty ledger")
    x, a, y, _, _ = ledger.arrays()
    comp, tot, gap = cls.fit(x, a, y, ledger.weights())
    return HindsightResult(comp[0], float(tot[0]), float(gap[0]))


def regret_of(ledger: RegretLedger, cls) -> float:
    """Realized loss minus the best-in-hindsight loss."""
    return float(np.sum(ledger.losses)) - best_in_hindsight(ledger, cls).total


def regret_trace(ledger: RegretLedger, cls):
    """Rows ``(i, loss, cum_loss, cum_hindsight)`` with hindsight refit on each prefix."""
    x, a, y, _, _ = ledger.arrays()
    w = ledger.weights()
    k = len(ledger)
    tri = np.tril(np.ones((k, k)))
    _, tot, _ = cls.fit(np.tile(x, (k, 1)), np.tile(a, (k, 1)), np.tile(y, (k, 1)), tri * w[None])
    cum = np.cumsum(ledger.losses)
    return [(i + 1, ledger.losses[i], float(cum[i]), float(tot[i])) for i in range(k)]


def write_regret_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "loss", "cum_loss", "cum_hindsight"])
        for i, loss, cl, ch in rows:
            w.writerow([i, repr(loss), repr(cl), repr(ch)])


# --------------------------------------------------------------------------
# stateful learners


class OnlineLearner:
    """Base learner: ``predict()`` then ``update(...)`` once per round."""

    mode = "weighted"

    def __init__(self, mode: str = "weighted"):
        if mode not in MODES:
            raise ConfigurationError(f"unknown loss mode {mode!r}")
        self.mode = mode
        self.ledger = RegretLedger(mode)
        self.rounds = 0

    def predict(self) -> np.ndarray:
        raise NotImplementedError

    def _step(self, x, a, y, pi, g_value):
        raise NotImplementedError

    def update(self, x, a, y, pi, g_value):
        loss = weighted_sq_loss(x, a, y, pi, g_value, self.predict(), self.mode)
        self.ledger.record(x, a, y, pi, g_value, loss)
        self.rounds += 1
        self._step(x, a, y, pi, g_value)


class FrozenLearner(OnlineLearner):
    def __init__(self, table, mode: str = "weighted"):
        super().__init__(mode)
        self.table = np.array(table, dtype=float)

    def predict(self):
        return self.table.copy()

    def _step(self, *args):
        pass


class OGDTabular(OnlineLearner):
    """Projected OGD on the box with step ``eta(i)`` after round ``i``."""

    def __init__(self, n_contexts, n_actions, L, eta: Callable[[int], float], mode="weighted"):
        super().__init__(mode)
        self.L = float(L)
        self.eta = eta
        self.state = np.zeros((n_contexts, n_actions))

    def predict(self):
        return self.state.copy()

    def _step(self, x, a, y, pi, g_value):
        self.state = ogd_tabular_step(self.state, x, a, y, pi, g_value, self.eta(self.rounds), self.L, self.mode)


class OGDLinear(OnlineLearner):
    def __init__(self, phi, R, eta: Callable[[int], float], mode="weighted"):
        super().__init__(mode)
        self.model = LinearModel(phi, np.zeros(np.asarray(phi).shape[2]), R)
        self.eta = eta

    def predict(self):
        return self.model.table()

    def _step(self, x, a, y, pi, g_value):
        self.model = ogd_linear_step(self.model, x, a, y, pi, g_value, self.eta(self.rounds), self.mode)


class AggregatingForecaster(OnlineLearner):
    """Finite-class forecaster on the plain loss."""

    def __init__(self, experts, L):
        super().__init__("plain")
        self.cls = FiniteClass(experts, L)
        self.L = float(L)
        m = self.cls.experts.shape[0]
        self.weights = np.full(m, 1.0 / m)

    def predict(self):
        e = self.cls.experts
        eta = 1.0 / (8.0 * self.L ** 2)
        logw = np.log(self.weights)[:, None, None]
        g_lo = -_lse_axis0(logw - eta * (-self.L - e) ** 2) / eta
        g_hi = -_lse_axis0(logw - eta * (self.L - e) ** 2) / eta
        return np.clip((g_lo - g_hi) / (4.0 * self.L), -self.L, self.L)

    def _step(self, x, a, y, pi, g_value):
        _, self.weights = aggregating_step(self.weights, x, a, y, self.cls.experts, self.L)


def _lse_axis0(v):
    m = np.max(v, axis=0)
    return m + np.log(np.sum(np.exp(v - m), axis=0))


class GenericForecaster(OnlineLearner):
    """Relaxation-driven forecaster; predicts every cell from the relaxation."""

    def __init__(self, relaxation, n_contexts, n_actions, L):
        super().__init__("plain")
        self.relaxation = relaxation
        self.shape = (n_contexts, n_actions)
        self.L = float(L)
        self.history = []

    def predict(self):
        out = np.empty(self.shape)
        for x, a in itertools.product(range(self.shape[0]), range(self.shape[1])):
            out[x, a] = generic_forecaster_predict(self.relaxation, self.history, x, a, self.L)
        return out

    def _step(self, x, a, y, pi, g_value):
        self.history.append(((x, a), y))


# --------------------------------------------------------------------------
# configuration and batched execution


@dataclass
class LearnerSpec:
    """``{type, eta_schedule, L, R, features, class, mode, table}``."""

    type: str = "ogd_tabular"
    eta_schedule: object = "theorem"
    mode: str = "weighted"
    L: Optional[float] = None
    R: Optional[float] = None
    features: Optional[list] = None
    experts: Optional[list] = None
    table: object = "zero"

    @classmethod
    def from_config(cls, cfg: Optional[dict]) -> "LearnerSpec":
        cfg = dict(cfg or {})
        if "class" in cfg:
            cfg["experts"] = cfg.pop("class")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigurationError(f"unknown learner fields {sorted(unknown)}")
        spec = cls(**cfg)
        if spec.type not in ("ogd_tabular", "ogd_linear", "aggregating", "frozen"):
            raise ConfigurationError(f"unknown learner type {spec.type!r}")
        if spec.mode not in MODES:
            raise ConfigurationError(f"unknown loss mode {spec.mode!r}")
        if spec.type == "aggregating" and spec.mode != "plain":
            raise ConfigurationError("aggregating learner runs on the plain loss only")
        if spec.type == "ogd_linear" and (spec.features is None or spec.R is None):
            raise ConfigurationError("ogd_linear needs features and R")
        if spec.type == "aggregating" and not spec.experts:
            raise ConfigurationError("aggregating learner needs a class")
        return spec

    def bound_L(self, instance) -> float:
        return float(self.L) if self.L is not None else float(instance.L)

    def function_class(self, instance):
        L = self.bound_L(instance)
        if self.type == "ogd_linear":
            return LinearClass(np.asarray(self.features, dtype=float), float(self.R))
        if self.type == "aggregating":
            return FiniteClass(self.experts, L)
        return TabularBox(instance.n_contexts, instance.n_actions, L)

    def schedule(self, instance, B: float, n: int) -> np.ndarray:
        """Step sizes ``eta_1 .. eta_n`` (``eta_i`` is applied after round ``i``)."""
        if not isinstance(self.eta_schedule, str):
            eta = np.asarray(self.eta_schedule, dtype=float)
            if eta.size < n:
                raise ConfigurationError("custom schedule shorter than the horizon")
            return eta[:n]
        if self.eta_schedule != "theorem":
            raise ConfigurationError(f"unknown schedule {self.eta_schedule!r}")
        b = B if self.mode == "weighted" else 1.0
        L = self.bound_L(instance)
        if self.type == "ogd_linear":
            return np.array([default_learning_rate("linear", i, L, b, float(self.R)) for i in range(1, n + 1)])
        diam = box_diameter(instance.n_contexts, instance.n_actions, L)
        return np.array([default_learning_rate("tabular", i, L, b, diam) for i in range(1, n + 1)])

    def frozen_table(self, instance) -> np.ndarray:
        if isinstance(self.table, str):
            if self.table == "mu_star":
                return np.array(instance.mu_star)
            if self.table == "zero":
                return np.zeros((instance.n_contexts, instance.n_actions))
            raise ConfigurationError(f"unknown frozen table {self.table!r}")
        return np.asarray(self.table, dtype=float)

    def build(self, instance, B: float, n: int) -> OnlineLearner:
        L = self.bound_L(instance)
        if self.type == "frozen":
            return FrozenLearner(self.frozen_table(instance), self.mode)
        if self.type == "aggregating":
            return AggregatingForecaster(self.experts, L)
        eta = self.schedule(instance, B, n)
        step = lambda i: float(eta[i - 1])  # noqa: E731
        if self.type == "ogd_linear":
            return OGDLinear(np.asarray(self.features, dtype=float), float(self.R), step, self.mode)
        return OGDTabular(instance.n_contexts, instance.n_actions, L, step, self.mode)

    def run_paths(self, instance, g, paths: Paths, B: float):
        """Run one learner per path; returns ``(preds, losses)``.

        ``preds[p, i]`` is the prediction row at the round's context, made
        from rounds ``< i`` only; ``losses`` uses this spec's loss mode.
        """
        gt = as_table(g)
        rows = np.arange(paths.N)[:, None]
        gv = gt[paths.X, paths.A]
        W = loss_weight(gv, paths.PI, self.mode)
        n = paths.n
        L = self.bound_L(instance)
        if self.type == "frozen":
            tab = self.frozen_table(instance)
            preds = tab[paths.X]
            r = preds[rows, np.arange(n)[None], paths.A] - paths.Y
            return preds, W * r * r
        if self.type == "aggregating":
            experts = FiniteClass(self.experts, L).experts
            preds, losses, _ = kernels.aggregating(paths.X, paths.A, paths.Y, experts, L, 1.0 / (8.0 * L * L))
            return preds, losses
        eta = self.schedule(instance, B, n)
        if self.type == "ogd_linear":
            phi = np.asarray(self.features, dtype=float)
            preds, losses, _ = kernels.ogd_linear(paths.X, paths.A, paths.Y, W, eta, float(self.R), phi,
                                                  np.zeros(phi.shape[2]))
            return preds, losses
        init = np.zeros((instance.n_contexts, instance.n_actions))
        preds, losses, _ = kernels.ogd_tabular(paths.X, paths.A, paths.Y, W, eta, L, init)
        return preds, losses


def offset_rademacher_root_estimate(experts, n: int, samples: int, tree_search_budget: int,
                                    L: Optional[float] = None, seed: int = 0) -> float:
    """Random-search lower estimate of the root offset Rademacher complexity.

    Trees assign a point ``z`` and a label ``m`` to every sign prefix.  For each
    candidate tree the value is ``E_eps sup_f sum_t [4 L eps_t (f(z_t) - m_t) -
    (f(z_t) - m_t)^2]``; the expectation is exact over all ``2^n`` sign
    sequences when ``samples >= 2^n``, otherwise it is sampled.  The returned
    maximum over candidates can only under-shoot the supremum over trees.
    """
    if tree_search_budget < 1 or samples < 1:
        raise ValueError("budget and samples must be positive")
    experts = np.asarray(experts, dtype=float)
    m_cls, n_x, n_a = experts.shape
    L = float(np.max(np.abs(experts))) if L is None else float(L)
    if L == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    if samples >= 2 ** n:
        eps = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
        eps_w = np.full(len(eps), 1.0 / len(eps))
    else:
        eps = rng.choice((-1.0, 1.0), size=(samples, n))
        eps_w = np.full(samples, 1.0 / samples)
    # node index of the prefix eps_{1:t-1} in a heap layout
    bits = (eps > 0).astype(np.int64)
    node = np.zeros_like(bits)
    for t in range(1, n):
        node[:, t] = 2 * node[:, t - 1] + 1 + bits[:, t - 1]
    n_nodes = 2 ** n - 1
    best = -np.inf
    for c in range(tree_search_budget):
        zx = rng.integers(n_x, size=n_nodes)
        za = rng.integers(n_a, size=n_nodes)
        if c == 0:
            m = experts[0, zx, za]
        elif c % 2:
            m = experts[rng.integers(m_cls, size=n_nodes), zx, za]
        else:
            m = rng.uniform(-L, L, size=n_nodes)
        fz = experts[:, zx[node], za[node]]  # (|F|, S, n)
        diff = fz - m[node][None]
        val = np.sum(4.0 * L * eps[None] * diff - diff ** 2, axis=2).max(axis=0)
        best = max(best, float(eps_w @ val))
    return best
