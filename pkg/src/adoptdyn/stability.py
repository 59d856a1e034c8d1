"""Reproduction numbers, equilibria and stability certificates."""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .dynamics import (CONVERGENCE_TOL, MAX_CONVERGENCE_STEPS, RANGE_TOL, ActiveControl, CommunityModel,
                       SystemState, step)
from .errors import InvariantViolation, NonConvergence, NotApplicable, SingularSystem

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-9
FJ_CONSISTENCY_TOL = 1e-8
EQUILIBRIUM_SEEDS = (0.1, 0.01, 0.5)


# ---------------------------------------------------------------------------
# spectral radius


def spectral_radius(A, tol: float = 1e-10, shift: float = 1e-12, max_iter: int = 100_000,
                    accelerate_after: int = 200) -> float:
    """Perron root of a nonnegative square matrix.

    Power iteration on ``A + shift*I`` from ``1/sqrt(n)``. The iterate stays
    positive, so ``min_i (Bv)_i/v_i <= rho <= max_i (Bv)_i/v_i``
    (Collatz-Wielandt); iteration stops when that bracket, or the eigen-residual,
    is within ``tol`` relative. If plain iteration has not converged after
    ``accelerate_after`` steps (clustered spectrum, periodic matrix) it switches
    to Noda's shifted inverse iteration, using the upper bracket as shift.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if np.any(A < 0):
        raise ValueError("spectral_radius expects a nonnegative matrix")
    n = A.shape[0]
    if n == 0:
        return 0.0
    if n == 1:
        return float(A[0, 0])
    scale = np.abs(A).sum(axis=1).max()
    if scale == 0.0:
        return 0.0

    B = A / scale + shift * np.eye(n)
    v = np.full(n, 1.0 / np.sqrt(n))
    hi = np.inf
    for k in range(max_iter):
        w = B @ v
        ratios = w / v
        lo, hi = ratios.min(), ratios.max()
        if hi - lo <= tol * hi:
            return float(scale * (0.5 * (hi + lo) - shift))
        lam = float(v @ w) / float(v @ v)
        if np.abs(w - lam * v).max() <= tol * lam * np.abs(v).max():
            return float(scale * (_polish(B, v, lam, tol) - shift))
        if k >= accelerate_after:
            mu = hi * (1.0 + 1e-15) + 1e-300
            try:
                w = np.linalg.solve(mu * np.eye(n) - B, v)
            except np.linalg.LinAlgError:
                return float(scale * (hi - shift))
            if not np.all(np.isfinite(w)):
                return float(scale * (hi - shift))
            w = np.abs(w)
        norm = np.linalg.norm(w)
        v = w / norm
        v = np.maximum(v, 1e-300)
    raise NonConvergence(f"spectral radius did not converge in {max_iter} iterations (upper bound {scale * hi:.6g})",
                         last=v)


def _polish(B, v, lam, tol, iters=4):
    # The residual test is loose when the Perron vector is ill-conditioned
    # (reducible, non-normal B); inverse iteration shifted just above the
    # estimate pins the vector down in one or two solves.
    n = B.shape[0]
    for _ in range(iters):
        mu = lam * (1.0 + 1e-13) + 1e-300
        try:
            w = np.linalg.solve(mu * np.eye(n) - B, v)
        except np.linalg.LinAlgError:
            return lam
        if not np.all(np.isfinite(w)) or not np.any(w):
            return lam
        v = np.abs(w) / np.linalg.norm(w)
        k = int(np.argmax(v))
        new = float((B[k] @ v) / v[k])
        if abs(new - lam) <= 1e-3 * tol * abs(new):
            return new
        lam = new
    return lam


# ---------------------------------------------------------------------------
# opinion bounds and reproduction numbers


@dataclass
class OpinionBounds:
    x_bar: np.ndarray
    x_under: np.ndarray


def opinion_bounds(model: CommunityModel, x0) -> OpinionBounds:
    """Bounds valid for every t >= 1 along any trajectory.

    The feedback term is at most ``xi * max_pressure``; the upper bound is
    capped at 1, which the range invariant guarantees anyway.
    """
    x0 = np.asarray(x0, dtype=float)
    floor = model.alpha * x0
    top = floor + model.lam + model.xi * model.max_pressure()
    return OpinionBounds(x_bar=np.minimum(top, 1.0), x_under=floor)


def r0_matrix(model: CommunityModel, x, delta=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    delta = model.delta if delta is None else np.asarray(delta, dtype=float)
    return np.diag(1.0 - delta) + model.c * model.beta * np.outer(x * model.m, model.influence)


def r0(model: CommunityModel, x, delta=None) -> float:
    """Opinion-dependent reproduction number ``rho(I - Delta + c beta diag(x) m m^T)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,) or x.min() < -RANGE_TOL or x.max() > 1 + RANGE_TOL:
        raise ValueError("opinion vector must lie in [0, 1]^n")
    return spectral_radius(r0_matrix(model, x, delta))


# ---------------------------------------------------------------------------
# adoption-free equilibrium


def _reaches(W, targets) -> np.ndarray:
    """Nodes with a directed path (possibly empty) to a target; edge i->j iff W_ij > 0."""
    n = W.shape[0]
    seen = np.asarray(targets, dtype=bool).copy()
    queue = deque(np.flatnonzero(seen))
    incoming = [np.flatnonzero(W[:, j] > 0) for j in range(n)]
    while queue:
        j = queue.popleft()
        for i in incoming[j]:
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return seen


def check_assumption1(model: CommunityModel, x0) -> bool:
    """True iff every community reaches one with ``lambda_j < 1`` and ``x0_j > 0``."""
    x0 = np.asarray(x0, dtype=float)
    return bool(_reaches(model.W, (model.lam < 1.0) & (x0 > 0.0)).all())


def adoption_free_equilibrium(model: CommunityModel, x0) -> np.ndarray:
    """Opinions at the adoption-free fixed point, ``(I - Lambda W)^{-1} (I - Lambda - Xi) x0``."""
    x0 = np.asarray(x0, dtype=float)
    if not check_assumption1(model, x0):
        leak = _reaches(model.W, model.lam < 1.0)
        if not leak.all():
            raise SingularSystem(
                f"I - Lambda W is singular: communities {np.flatnonzero(~leak).tolist()} cannot reach any "
                "community with lambda < 1")
        logger.warning("assumption 1 fails only through zero initial opinions; x* is still unique")
    A = np.eye(model.n) - model.lam[:, None] * model.W
    rhs = model.alpha * x0
    x_star = np.linalg.solve(A, rhs)
    res = np.abs(A @ x_star - rhs).max()
    if res > 1e-10:
        raise SingularSystem(f"linear solve residual {res:.3g} exceeds 1e-10")
    return x_star


def fj_limit(model: CommunityModel, x0, a) -> np.ndarray:
    """Friedkin-Johnsen limit with adoption held at ``a``."""
    A = np.eye(model.n) - model.lam[:, None] * model.W
    rhs = model.alpha * np.asarray(x0, dtype=float) + model.xi * model.c * (model.influence @ np.asarray(a))
    return np.linalg.solve(A, rhs)


# ---------------------------------------------------------------------------
# adoption-diffused equilibrium


def jacobian(state: SystemState, model: CommunityModel, delta=None) -> np.ndarray:
    """Analytic Jacobian of the step map in the coordinates ``(a, d, x)``."""
    n = model.n
    delta = model.delta if delta is None else np.asarray(delta, dtype=float)
    a, d, x = state.a, state.d, state.x
    m, w, c, beta = model.m, model.influence, model.c, model.beta
    P = c * (w @ a)
    free = 1.0 - a - d
    J = np.zeros((3 * n, 3 * n))
    ia, id_, ix = slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n)
    J[ia, ia] = np.diag(1.0 - delta - beta * x * m * P) + np.outer(beta * x * m * free, c * w)
    J[ia, id_] = np.diag(-beta * x * m * P)
    J[ia, ix] = np.diag(beta * m * free * P)
    J[id_, ia] = np.diag(delta)
    J[id_, id_] = np.diag(1.0 - model.gamma * x)
    J[id_, ix] = np.diag(-model.gamma * d)
    J[ix, ia] = np.outer(model.xi, c * w)
    J[ix, ix] = model.lam[:, None] * model.W
    return J


@dataclass
class DiffusedEquilibrium:
    a_dag: np.ndarray
    d_dag: np.ndarray
    x_dag: np.ndarray
    residual: float
    fj_consistency: float
    steps: int
    seed_spread: float = 0.0

    def state(self) -> SystemState:
        return SystemState.from_adx(self.a_dag, self.d_dag, self.x_dag)


def _residual(z_state, model, anchor, control):
    nxt = step(z_state, model, anchor, control)
    return float(np.abs(nxt.vector() - z_state.vector()).max())


def _newton_polish(state, model, anchor, control, delta, iters=8):
    """A few Newton steps on ``step(z) - z``; only accepted while the residual shrinks."""
    n = model.n
    best = state
    best_res = _residual(state, model, anchor, control)
    eye = np.eye(3 * n)
    for _ in range(iters):
        if best_res == 0.0:
            break
        nxt = step(best, model, anchor, control)
        F = nxt.vector() - best.vector()
        try:
            dz = np.linalg.solve(jacobian(best, model, delta) - eye, -F)
        except np.linalg.LinAlgError:
            break
        z = best.vector() + dz
        cand = SystemState.from_adx(z[:n], z[n:2 * n], z[2 * n:])
        if min(cand.a.min(), cand.d.min(), cand.s.min(), cand.x.min()) < -RANGE_TOL:
            break
        try:
            res = _residual(cand, model, anchor, control)
        except InvariantViolation:
            break
        if res >= best_res:
            break
        best, best_res = cand, res
    return best, best_res


def _converge_from(model, seed_a, x_start, anchor, delta, tol, max_steps):
    n = model.n
    a, d, x, steps, status, diff = kernels.converge_arrays(
        np.full(n, seed_a), np.zeros(n), x_start, anchor, model.influence, model.m, model.c, model.beta,
        model.gamma, delta, model.lam, model.xi, model.W, tol, max_steps, RANGE_TOL)
    if status == kernels.VIOLATION:
        raise InvariantViolation("state left the simplex while searching for an equilibrium", steps)
    if status == kernels.MAX_STEPS:
        raise NonConvergence(f"no fixed point within {max_steps} steps (last change {diff:.3g})",
                             last=np.concatenate([a, d, x]))
    return SystemState.from_adx(a, d, x), steps


def find_diffused_equilibrium(model: CommunityModel, x0, control: Optional[ActiveControl] = None,
                              tol: float = CONVERGENCE_TOL, max_steps: int = MAX_CONVERGENCE_STEPS,
                              seeds=EQUILIBRIUM_SEEDS) -> DiffusedEquilibrium:
    """Locate an equilibrium with positive adoption by forward iteration.

    The first entry of ``seeds`` is the canonical uniform adopter fraction; the
    others only probe for multiplicity (their largest deviation is reported as
    ``seed_spread``, not resolved). The converged point is polished with a few
    Newton steps and must satisfy the fixed-point residual and the
    Friedkin-Johnsen consistency checks.
    """
    x0 = np.asarray(x0, dtype=float)
    anchor = x0 if control is None or control.anchor is None else np.asarray(control.anchor, dtype=float)
    delta = model.delta if control is None or control.delta is None else np.asarray(control.delta, dtype=float)

    x_star = adoption_free_equilibrium(model, anchor)
    r = spectral_radius(r0_matrix(model, x_star, delta))
    if r <= 1.0:
        raise NotApplicable(f"R0(x*) = {r:.6g} <= 1: no adoption-diffused equilibrium is guaranteed")

    eq, steps = _converge_from(model, seeds[0], x0, anchor, delta, tol, max_steps)
    eq, residual = _newton_polish(eq, model, anchor, control, delta)
    if residual > RESIDUAL_TOL:
        raise NonConvergence(f"fixed-point residual {residual:.3g} exceeds {RESIDUAL_TOL}", last=eq.vector())
    if eq.a.max() <= 1e-12:
        raise NonConvergence("iteration converged to the adoption-free state", last=eq.vector())
    consistency = float(np.abs(eq.x - fj_limit(model, anchor, eq.a)).max())
    if consistency > FJ_CONSISTENCY_TOL:
        raise NonConvergence(f"opinions deviate from the FJ limit by {consistency:.3g}", last=eq.vector())

    spread = 0.0
    for seed in seeds[1:]:
        try:
            other, _ = _converge_from(model, seed, x0, anchor, delta, tol, max_steps)
        except NonConvergence:
            continue
        spread = max(spread, float(np.abs(other.vector() - eq.vector()).max()))
    if spread > 1e-6:
        logger.warning("equilibrium search from different seeds disagrees by %.3g", spread)
    return DiffusedEquilibrium(eq.a, eq.d, eq.x, residual, consistency, steps, spread)


# ---------------------------------------------------------------------------
# certificate


@dataclass
class Certificate:
    nu: float
    eta: float
    phi: float
    b_sup: float
    G: np.ndarray
    rho_G: float
    certified: bool


def stability_certificate(model: CommunityModel, x0, equilibrium, delta=None) -> Certificate:
    """Sufficient local-stability test via the 2x2 comparison matrix ``G``.

    ``equilibrium`` is anything with ``a_dag`` (or ``a``) adopter fractions;
    the adoption-free point ``a = 0`` is allowed. ``certified=False`` does not
    imply instability.

    ``phi`` bounds the sup-norm of the adopter error block over every
    reachable state: each row sum is convex in ``(x_i, t_i)`` with
    ``t_i = x_i (1 - a_i - d_i)``, so its maximum over
    ``x_under_i <= x_i <= x_bar_i, 0 <= t_i <= x_i`` sits at one of the four
    vertices of that polygon.
    """
    delta = model.delta if delta is None else np.asarray(delta, dtype=float)
    a_dag = np.asarray(getattr(equilibrium, "a_dag", getattr(equilibrium, "a", equilibrium)), dtype=float)
    bounds = opinion_bounds(model, x0)
    lo, hi = np.clip(bounds.x_under, 0.0, 1.0), np.clip(bounds.x_bar, 0.0, 1.0)
    cb = model.c * model.beta
    w = model.influence
    S = float(w @ a_dag)
    off = w.sum() - w

    nu = float(delta.max())
    eta = 1.0 - model.gamma * max(float(lo.min()), 0.0)
    b_sup = float((cb * model.m * hi * S).max())

    phi = 0.0
    for xv, tv in ((lo, 0 * lo), (hi, 0 * hi), (lo, lo), (hi, hi)):
        diag = 1.0 - delta - cb * model.m * S * xv + cb * model.m * tv * w
        rows = np.abs(diag) + cb * model.m * tv * off
        phi = max(phi, float(rows.max()))

    g = np.sqrt(b_sup * nu)
    G = np.array([[phi, g], [g, eta]])
    rho = spectral_radius(G)
    return Certificate(nu=nu, eta=eta, phi=phi, b_sup=b_sup, G=G, rho_G=rho, certified=bool(rho < 1.0))


# ---------------------------------------------------------------------------
# classification


class Classification(str, enum.Enum):
    GLOBALLY_STABLE = "GloballyStableAdoptionFree"
    LOCALLY_STABLE = "LocallyStableAdoptionFree"
    UNSTABLE = "UnstableAdoptionFree"
    CRITICAL = "CriticalAdoptionFree"


@dataclass
class StabilityReport:
    x_star: np.ndarray
    x_bar: np.ndarray
    x_under: np.ndarray
    r0_at_xstar: float
    r0_max: float
    r0_min: float
    classification: Classification
    assumption1_holds: bool
    diffused: Optional[DiffusedEquilibrium] = None
    certificate: Optional[Certificate] = None
    notes: list = field(default_factory=list)

    @property
    def certified_locally_stable(self) -> Optional[bool]:
        return None if self.certificate is None else self.certificate.certified

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: clean(u) for k, u in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(u) for u in v]
            if isinstance(v, enum.Enum):
                return v.value
            if isinstance(v, (np.floating, np.integer, np.bool_)):
                return v.item()
            return v

        out = {
            "x_star": self.x_star, "x_bar": self.x_bar, "x_under": self.x_under,
            "r0_at_xstar": self.r0_at_xstar, "r0_max": self.r0_max, "r0_min": self.r0_min,
            "classification": self.classification, "assumption1_holds": self.assumption1_holds,
            "diffused": None, "notes": self.notes,
        }
        if self.diffused is not None:
            out["diffused"] = asdict(self.diffused)
            if self.certificate is not None:
                cert = asdict(self.certificate)
                out["diffused"].update(G=cert.pop("G"), rho_G=cert.pop("rho_G"),
                                       certified_locally_stable=cert.pop("certified"), certificate=cert)
        return clean(out)


def classify(model: CommunityModel, x0, find_equilibrium: bool = True, **eq_kwargs) -> StabilityReport:
    x0 = np.asarray(x0, dtype=float)
    bounds = opinion_bounds(model, x0)
    x_star = adoption_free_equilibrium(model, x0)
    r_star = r0(model, np.clip(x_star, 0.0, 1.0))
    r_max = r0(model, np.clip(bounds.x_bar, 0.0, 1.0))
    r_min = r0(model, np.clip(bounds.x_under, 0.0, 1.0))
    if r_max < 1.0:
        cls = Classification.GLOBALLY_STABLE
    elif r_star < 1.0:
        cls = Classification.LOCALLY_STABLE
    elif r_star > 1.0:
        cls = Classification.UNSTABLE
    else:
        cls = Classification.CRITICAL
    report = StabilityReport(x_star, bounds.x_bar, bounds.x_under, r_star, r_max, r_min, cls,
                             check_assumption1(model, x0))
    if cls is Classification.UNSTABLE and find_equilibrium:
        try:
            report.diffused = find_diffused_equilibrium(model, x0, **eq_kwargs)
            report.certificate = stability_certificate(model, x0, report.diffused)
        except (NonConvergence, NotApplicable, InvariantViolation) as exc:
            report.notes.append(f"diffused equilibrium not found: {exc}")
    return report
