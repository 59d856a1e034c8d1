"""Community model, state containers and the coupled adoption-opinion step.

State vectors hold within-community fractions: for every community ``s + a + d = 1``.
Aggregates over the whole population are ``f``-weighted sums.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import kernels
from .errors import InvariantViolation, ParameterBoundError

logger = logging.getLogger(__name__)

RANGE_TOL = 1e-9
SUM_TOL = 1e-9
CONVERGENCE_TOL = 1e-10
MAX_CONVERGENCE_STEPS = 1_000_000


@dataclass(frozen=True)
class CommunityIndex:
    """Position of a community on the mobility x age grid (both classes 1-based)."""

    mobility_class: int
    age_class: int
    n_mobility: int = 5
    n_age: int = 5

    def __post_init__(self):
        if not 1 <= self.mobility_class <= self.n_mobility:
            raise ValueError(f"mobility_class {self.mobility_class} outside 1..{self.n_mobility}")
        if not 1 <= self.age_class <= self.n_age:
            raise ValueError(f"age_class {self.age_class} outside 1..{self.n_age}")

    @property
    def flat_id(self) -> int:
        return (self.mobility_class - 1) * self.n_age + (self.age_class - 1)

    @classmethod
    def from_flat(cls, flat_id: int, n_mobility: int = 5, n_age: int = 5) -> "CommunityIndex":
        if not 0 <= flat_id < n_mobility * n_age:
            raise ValueError(f"flat_id {flat_id} outside [0, {n_mobility * n_age})")
        return cls(flat_id // n_age + 1, flat_id % n_age + 1, n_mobility, n_age)


def community_grid(n_mobility: int = 5, n_age: int = 5) -> list[CommunityIndex]:
    return [CommunityIndex.from_flat(k, n_mobility, n_age) for k in range(n_mobility * n_age)]


def _frozen(v, name, shape=None):
    arr = np.array(v, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ParameterBoundError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterBoundError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CommunityModel:
    """Parameters of the coupled model; validated and immutable.

    ``c`` may be passed explicitly, in which case it must agree with
    ``1 / sum(m * f)``. With ``weighted_influence`` the adoption pressure uses
    ``m_j f_j a_j`` instead of ``m_j a_j``; it is off by default.

    ``enforce_step_bound`` rejects models whose worst-case per-step adoption
    probability ``beta * m_i * max_pressure`` exceeds 1. Turning it off only
    downgrades the check to a warning; ``step`` still raises on any state that
    leaves the simplex.
    """

    f: np.ndarray
    m: np.ndarray
    beta: float
    gamma: float
    delta: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    W: np.ndarray
    c: Optional[float] = None
    weighted_influence: bool = False
    enforce_step_bound: bool = True
    labels: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        f = _frozen(self.f, "f")
        if f.ndim != 1 or f.size == 0:
            raise ParameterBoundError("f must be a non-empty vector")
        n = f.size
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("f", f)
        set_("m", _frozen(self.m, "m", (n,)))
        set_("delta", _frozen(self.delta, "delta", (n,)))
        set_("lam", _frozen(self.lam, "lam", (n,)))
        set_("xi", _frozen(self.xi, "xi", (n,)))
        set_("W", _frozen(self.W, "W", (n, n)))
        set_("beta", float(self.beta))
        set_("gamma", float(self.gamma))

        if np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
            raise ParameterBoundError(f"f must be nonnegative and sum to 1 (sum={f.sum():.12g})")
        if np.any(self.m <= 0):
            raise ParameterBoundError("mobility indices must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterBoundError(f"beta={self.beta} outside [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ParameterBoundError(f"gamma={self.gamma} outside [0, 1)")
        if np.any(self.delta < 0) or np.any(self.delta > 1):
            raise ParameterBoundError("delta entries must lie in [0, 1]")
        if np.any(self.lam < 0) or np.any(self.xi < 0):
            raise ParameterBoundError("lambda and xi must be nonnegative")
        bad = np.flatnonzero(self.lam + self.xi > 1.0 + 1e-12)
        if bad.size:
            raise ParameterBoundError(f"lambda + xi > 1 at communities {bad.tolist()}")
        if np.any(self.W < 0):
            raise ParameterBoundError("W must be nonnegative")
        rows = self.W.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-9):
            raise ParameterBoundError(f"W rows must sum to 1 (worst row sum {rows[np.argmax(np.abs(rows - 1))]:.12g})")

        c_exact = 1.0 / float(self.m @ f)
        if self.c is None:
            set_("c", c_exact)
        elif abs(float(self.c) - c_exact) > 1e-12 * c_exact:
            raise ParameterBoundError(f"c={self.c} disagrees with 1/sum(m f)={c_exact}")
        else:
            set_("c", float(self.c))

        if self.labels is not None:
            set_("labels", tuple(self.labels))
            if len(self.labels) != n:
                raise ParameterBoundError("labels length differs from n")

        worst = self.step_bound()
        if np.any(worst > 1.0 + 1e-12):
            i = int(np.argmax(worst))
            msg = (f"per-step adoption probability bound beta*m_i*c*sum(influence) = {worst[i]:.6g} > 1 "
                   f"at community {i} (beta={self.beta}, m_i={self.m[i]}, c={self.c:.6g}); "
                   "lower beta or the mobility spread")
            if self.enforce_step_bound:
                raise ParameterBoundError(msg)
            logger.warning("%s (continuing: enforce_step_bound=False)", msg)

    @property
    def n(self) -> int:
        return self.f.size

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.lam - self.xi

    @property
    def influence(self) -> np.ndarray:
        return self.m * self.f if self.weighted_influence else self.m

    def max_pressure(self) -> float:
        return self.c * float(self.influence.sum())

    def step_bound(self) -> np.ndarray:
        """Worst-case (a = 1, x = 1) adoption probability per community."""
        return self.beta * self.m * self.max_pressure()

    def opinion_headroom(self, x0) -> np.ndarray:
        """``alpha_i (1 - x0_i) - xi_i (max_pressure - 1)``; opinions provably stay
        at or below 1 wherever this is nonnegative."""
        x0 = np.asarray(x0, dtype=float)
        return self.alpha * (1.0 - x0) - self.xi * (self.max_pressure() - 1.0)

    def replace(self, **changes) -> "CommunityModel":
        if "f" in changes or "m" in changes:
            changes.setdefault("c", None)
        return dataclasses.replace(self, **changes)


@dataclass
class SystemState:
    s: np.ndarray
    a: np.ndarray
    d: np.ndarray
    x: np.ndarray
    t: int = 0

    @classmethod
    def from_adx(cls, a, d, x, t: int = 0) -> "SystemState":
        a = np.asarray(a, dtype=float)
        d = np.asarray(d, dtype=float)
        return cls(1.0 - a - d, a, d, np.asarray(x, dtype=float), t)

    @property
    def n(self) -> int:
        return self.a.size

    def validate(self, tol: float = RANGE_TOL) -> None:
        for name in ("s", "a", "d", "x"):
            v = getattr(self, name)
            if v.shape != (self.n,):
                raise InvariantViolation(f"{name} has shape {v.shape}, expected ({self.n},)", self.t)
            if v.min() < -tol or v.max() > 1.0 + tol:
                raise InvariantViolation(f"{name} leaves [0, 1] (min {v.min():.3g}, max {v.max():.3g})", self.t)
        err = np.abs(self.s + self.a + self.d - 1.0).max()
        if err > SUM_TOL:
            raise InvariantViolation(f"s + a + d deviates from 1 by {err:.3g}", self.t)

    def vector(self) -> np.ndarray:
        """``(a, d, x)`` stacked; ``s`` is implied."""
        return np.concatenate([self.a, self.d, self.x])

    def aggregates(self, f) -> np.ndarray:
        return np.array([f @ self.s, f @ self.a, f @ self.d, f @ self.x])


@dataclass(frozen=True)
class ActiveControl:
    """Static control transform applied at every step.

    ``anchor`` replaces the anchored initial opinions (already shifted and
    clipped); ``delta`` replaces the dismissal rates. ``None`` leaves the
    corresponding quantity untouched.
    """

    anchor: Optional[np.ndarray] = None
    delta: Optional[np.ndarray] = None
    clipped_mass: float = 0.0
    stranded_budget: float = 0.0


AGGREGATE_COLUMNS = ("susceptible", "adopters", "dissatisfied", "mean_opinion")


@dataclass
class Trace:
    """Time-ordered states (stored as arrays) with f-weighted aggregates."""

    a: np.ndarray
    d: np.ndarray
    x: np.ndarray
    f: np.ndarray
    t0: int = 0
    converged: bool = False
    last_change: float = float("nan")

    def __post_init__(self):
        self.s = 1.0 - self.a - self.d
        self.aggregates = np.column_stack([self.s @ self.f, self.a @ self.f, self.d @ self.f, self.x @ self.f])

    def __len__(self) -> int:
        return self.a.shape[0]

    def __getitem__(self, k: int) -> SystemState:
        k = range(len(self))[k]
        return SystemState(self.s[k].copy(), self.a[k].copy(), self.d[k].copy(), self.x[k].copy(), self.t0 + k)

    def __iter__(self) -> Iterator[SystemState]:
        return (self[k] for k in range(len(self)))

    @property
    def states(self) -> list[SystemState]:
        return list(self)

    @property
    def final(self) -> SystemState:
        return self[-1]

    @property
    def final_aggregates(self) -> np.ndarray:
        return self.aggregates[-1]


def adoption_pressure(state: SystemState, model: CommunityModel) -> float:
    """``c * sum_j m_j a_j``; the shared influence term of adoption and opinion updates."""
    return float(model.c * (model.influence @ state.a))


def _resolve(model, x0, control):
    anchor = np.asarray(x0, dtype=float)
    delta = model.delta
    if control is not None:
        if control.anchor is not None:
            anchor = np.asarray(control.anchor, dtype=float)
        if control.delta is not None:
            delta = np.asarray(control.delta, dtype=float)
    if anchor.shape != (model.n,):
        raise ValueError(f"x0 has shape {anchor.shape}, expected ({model.n},)")
    return anchor, delta


def step(state: SystemState, model: CommunityModel, x0, control: Optional[ActiveControl] = None) -> SystemState:
    """Advance one time step of the vector model, optionally under a control transform."""
    anchor, delta = _resolve(model, x0, control)
    s, a, d, x = kernels.step_arrays(state.a, state.d, state.x, anchor, model.influence, model.m, model.c,
                                     model.beta, model.gamma, delta, model.lam, model.xi, model.W)
    nxt = SystemState(s, a, d, x, state.t + 1)
    for name, v in (("a", a), ("d", d), ("s", s), ("x", x)):
        if v.min() < -RANGE_TOL or v.max() > 1.0 + RANGE_TOL:
            raise InvariantViolation(
                f"{name} left [0, 1] (min {v.min():.3g}, max {v.max():.3g}); model parameters violate "
                "the invariance preconditions", state.t + 1)
    return nxt


def scalar_step_reference(state: SystemState, model: CommunityModel, x0) -> SystemState:
    """Per-community loop form of the update, used as a test oracle for ``step``.

    Deliberately recomputes the normalisation from ``m`` and ``f`` rather than
    reading ``model.c``.
    """
    n = model.n
    f, m = model.f.tolist(), model.m.tolist()
    s, a, d, x = state.s.tolist(), state.a.tolist(), state.d.tolist(), state.x.tolist()
    x0 = list(map(float, x0))
    weighted = model.weighted_influence

    denom = 0.0
    for j in range(n):
        denom += m[j] * f[j]
    num = 0.0
    for j in range(n):
        num += m[j] * a[j] * (f[j] if weighted else 1.0)
    pressure = num / denom

    s2, a2, d2, x2 = [0.0] * n, [0.0] * n, [0.0] * n, [0.0] * n
    for i in range(n):
        adopt = model.beta * x[i] * m[i] * s[i] * pressure
        revert = model.gamma * x[i] * d[i]
        dismiss = model.delta[i] * a[i]
        s2[i] = s[i] + revert - adopt
        a2[i] = a[i] - dismiss + adopt
        d2[i] = d[i] - revert + dismiss
        social = 0.0
        for j in range(n):
            social += model.W[i, j] * x[j]
        alpha = 1.0 - model.lam[i] - model.xi[i]
        x2[i] = alpha * x0[i] + model.lam[i] * social + model.xi[i] * pressure

    out = SystemState(np.array(s2), np.array(a2), np.array(d2), np.array(x2), state.t + 1)
    for name in ("s", "a", "d", "x"):
        v = getattr(out, name)
        if v.min() < -RANGE_TOL or v.max() > 1.0 + RANGE_TOL:
            raise InvariantViolation(f"{name} left [0, 1]", out.t)
    return out


def simulate(initial: SystemState, model: CommunityModel, horizon: int,
             control: Optional[ActiveControl] = None, x0=None,
             tol: float = CONVERGENCE_TOL) -> Trace:
    """Run ``horizon`` steps from ``initial``.

    ``x0`` is the anchored opinion vector; it defaults to ``initial.x``. The
    returned trace reports ``converged`` when the last step moved the state by
    less than ``tol`` in sup-norm.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    initial.validate()
    anchor, delta = _resolve(model, initial.x if x0 is None else x0, control)
    A, D, X, bad = kernels.simulate_arrays(initial.a, initial.d, initial.x, anchor, model.influence, model.m,
                                           model.c, model.beta, model.gamma, delta, model.lam, model.xi,
                                           model.W, horizon, RANGE_TOL)
    if bad >= 0:
        row = (A[bad], D[bad], X[bad])
        raise InvariantViolation(
            f"state left the simplex (min a={row[0].min():.3g}, min d={row[1].min():.3g}, "
            f"max x={row[2].max():.3g}); model parameters violate the invariance preconditions",
            initial.t + bad)
    change = float("nan")
    if horizon >= 1:
        change = float(max(np.abs(A[-1] - A[-2]).max(), np.abs(D[-1] - D[-2]).max(), np.abs(X[-1] - X[-2]).max()))
    return Trace(A, D, X, model.f, initial.t, converged=bool(change < tol), last_change=change)

