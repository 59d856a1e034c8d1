"""Acceptance suite: one PASS/FAIL/SKIP line per criterion.

Criteria 10-13 need the public survey export; point ``ADOPTDYN_SURVEY_CSV`` at
it (and ``ADOPTDYN_SURVEY_SCHEMA`` at a column mapping when its header differs
from the bundled one) to run them.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from adoptdyn.cli import main
from adoptdyn.control import ControlPolicy, Kind, Rule, allocate, compare, run_policy
from adoptdyn.dynamics import SystemState, scalar_step_reference, simulate, step
from adoptdyn.network import build_similarity, median_bandwidth, pagerank
from adoptdyn.stability import (
    adoption_free_equilibrium, classify, find_diffused_equilibrium, fj_limit, spectral_radius,
    stability_certificate,
)

from _gen import random_W, random_model, random_state, subcritical_model, supercritical_model

SURVEY = os.environ.get("ADOPTDYN_SURVEY_CSV")
SURVEY_SCHEMA = os.environ.get("ADOPTDYN_SURVEY_SCHEMA")


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'} {title}" + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {number}: {title} {detail}"
    return emit


@pytest.fixture
def survey(request, capsys):
    if not SURVEY:
        number = int(request.node.name[6:8])
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] SKIP dataset-conditional; set ADOPTDYN_SURVEY_CSV")
        pytest.skip("set ADOPTDYN_SURVEY_CSV to run dataset-conditional criteria")
    return SURVEY


# --- property-based core --------------------------------------------------------

def test_c01_simplex_invariance(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_range, worst_sum = 0.0, 0.0
    for _ in range(500):
        model, x0 = random_model(rng)
        tr = simulate(random_state(rng, model.n, x0), model, 1000, x0=x0)
        for v in (tr.s, tr.a, tr.d, tr.x):
            worst_range = max(worst_range, -v.min(), v.max() - 1.0)
        worst_sum = max(worst_sum, float(np.abs(tr.s + tr.a + tr.d - 1.0).max()))
    elapsed = time.perf_counter() - t0
    report(1, "simplex invariance, 500 models x 1e3 steps",
           worst_range <= 1e-9 and worst_sum <= 1e-9 and elapsed < 60,
           f"range excess {worst_range:.2e}, sum error {worst_sum:.2e}, {elapsed:.1f}s")


def test_c02_vector_scalar_equivalence(report):
    rng = np.random.default_rng(102)
    worst = 0.0
    for k in range(1000):
        model, x0 = random_model(rng, int(rng.integers(1, 9)) if k % 10 else 1, weighted=bool(k % 2))
        state = random_state(rng, model.n, x0)
        got, ref = step(state, model, x0), scalar_step_reference(state, model, x0)
        worst = max(worst, float(np.abs(got.vector() - ref.vector()).max()), float(np.abs(got.s - ref.s).max()))
    report(2, "step vs scalar reference on 1e3 instances, n <= 8", worst <= 1e-12, f"max diff {worst:.2e}")


def test_c03_reproduction_number_threshold(report):
    rng = np.random.default_rng(103)
    t0 = time.perf_counter()
    worst_final = 0.0
    for _ in range(100):
        model, x0 = subcritical_model(rng)
        tr = simulate(random_state(rng, model.n, x0), model, 100_000, x0=x0)
        worst_final = max(worst_final, float(tr.final_aggregates[1]))
    # growth witness: a 1e-6 adopter perturbation of the adoption-free point grows at least tenfold
    eps = 1e-6
    weakest = np.inf
    for _ in range(100):
        model, x0 = supercritical_model(rng)
        x_star = adoption_free_equilibrium(model, x0)
        tr = simulate(SystemState.from_adx(np.full(model.n, eps), np.zeros(model.n), x_star), model, 20_000, x0=x0)
        weakest = min(weakest, float(tr.aggregates[:, 1].max()) / eps)
    elapsed = time.perf_counter() - t0
    report(3, "reproduction-number threshold, 100 subcritical + 100 supercritical models",
           worst_final < 1e-6 and weakest > 10 and elapsed < 300,
           f"max final adopters {worst_final:.2e}, min growth factor {weakest:.3g}, {elapsed:.1f}s")


def _char_poly_rho(A):
    """Largest real root of det(A - t I) by grid sign changes and bisection."""
    n = A.shape[0]
    p = lambda t: np.linalg.det(A - t * np.eye(n))  # noqa: E731
    hi = A.sum(axis=1).max() * (1 + 1e-9) + 1e-12   # Perron root is at most the max row sum
    grid = np.linspace(0.0, hi, 4001)
    vals = np.array([p(t) for t in grid])
    for k in range(len(grid) - 1, 0, -1):
        if vals[k] == 0:
            return grid[k]
        if np.sign(vals[k]) != np.sign(vals[k - 1]):
            lo, up, plo = grid[k - 1], grid[k], vals[k - 1]
            for _ in range(200):
                mid = 0.5 * (lo + up)
                pm = p(mid)
                if np.sign(pm) == np.sign(plo):
                    lo, plo = mid, pm
                else:
                    up = mid
                if up - lo < 1e-15:
                    break
            return 0.5 * (lo + up)
    return 0.0


def test_c04_spectral_radius_oracle(report):
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(200):
        A = rng.random((4, 4)) * (rng.random((4, 4)) < 0.8)
        worst = max(worst, abs(spectral_radius(A) - _char_poly_rho(A)))
    report(4, "spectral radius vs characteristic-polynomial bisection, 200 4x4 matrices", worst <= 1e-8,
           f"max diff {worst:.2e}")


def test_c05_equilibrium_residual(report):
    rng = np.random.default_rng(105)
    worst_res, worst_fj = 0.0, 0.0
    for _ in range(50):
        model, x0 = supercritical_model(rng)
        eq = find_diffused_equilibrium(model, x0)
        state = eq.state()
        worst_res = max(worst_res, float(np.abs(step(state, model, x0).vector() - state.vector()).max()))
        worst_fj = max(worst_fj, float(np.abs(eq.x_dag - fj_limit(model, x0, eq.a_dag)).max()))
    report(5, "diffused equilibria: fixed-point residual and FJ consistency, 50 models",
           worst_res <= 1e-9 and worst_fj <= 1e-8, f"residual {worst_res:.2e}, FJ {worst_fj:.2e}")


def _fd_jacobian(state, model, x0, h=1e-6):
    n = model.n
    z = state.vector()

    def F(v):
        a, d, x = v[:n], v[n:2 * n], v[2 * n:]
        # central differences at a = 0 probe slightly negative fractions; evaluate the map without range checks
        P = model.c * (model.influence @ a)
        a2 = a - model.delta * a + model.beta * x * model.m * (1 - a - d) * P
        d2 = d - model.gamma * x * d + model.delta * a
        x2 = model.alpha * x0 + model.lam * (model.W @ x) + model.xi * P
        return np.concatenate([a2, d2, x2])

    return np.column_stack([(F(z + h * e) - F(z - h * e)) / (2 * h) for e in np.eye(3 * n)])


def test_c06_certificate_soundness(report):
    rng = np.random.default_rng(106)
    worst, found, tries = 0.0, 0, 0
    while found < 50 and tries < 5000:
        tries += 1
        n = int(rng.integers(2, 9))
        model, x0 = random_model(rng, n, beta_frac=rng.uniform(1e-4, 1e-2), delta=rng.uniform(0.9, 1.0, n),
                                 gamma=rng.uniform(0.5, 0.99), x0=rng.uniform(0.5, 1.0, n))
        cert = stability_certificate(model, x0, np.zeros(n))
        if not cert.certified:
            continue
        found += 1
        eq = SystemState.from_adx(np.zeros(n), np.zeros(n), adoption_free_equilibrium(model, x0))
        worst = max(worst, float(np.abs(np.linalg.eigvals(_fd_jacobian(eq, model, x0))).max()))
    report(6, "certified equilibria have FD-Jacobian spectral radius < 1", found == 50 and worst < 1,
           f"{found} certified instances, max radius {worst:.4f}")


def test_c07_budget_rules(report):
    rng = np.random.default_rng(107)
    worst_sum, zero_ok = 0.0, True
    for _ in range(100):
        model, x0 = random_model(rng, weighted=True)
        init = random_state(rng, model.n, x0)
        for rule in Rule:
            budget = float(rng.uniform(0, model.n))
            u = allocate(rule, budget, model, model.W)
            worst_sum = max(worst_sum, abs(u.sum() - budget))
            zero_ok &= bool(u.min() >= 0)
        base = simulate(init, model, 50, x0=x0)
        for kind in (Kind.OPINION, Kind.DISSATISFACTION):
            for rule in Rule:
                tr = run_policy(ControlPolicy(kind, rule, 0.0), model, x0, init, 50, model.W).trace
                zero_ok &= max(float(np.abs(getattr(tr, v) - getattr(base, v)).max()) for v in "adx") <= 1e-12
    report(7, "budget conservation and zero-budget equivalence, all four rules", worst_sum <= 1e-12 and zero_ok,
           f"max |sum u - U| {worst_sum:.2e}")


def test_c08_kernel_and_pagerank(report):
    rng = np.random.default_rng(108)
    ok = True
    for _ in range(100):
        n = int(rng.integers(2, 26))
        P = rng.random((n, int(rng.integers(1, 10))))
        g = build_similarity(P, median_bandwidth(P))
        D = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))
        ok &= bool(np.array_equal(g.kernel, g.kernel.T))
        ok &= bool(np.all(g.kernel[D > g.cutoff] == 0) and np.all(np.diag(g.kernel) == 0))
        ok &= bool(np.abs(g.W.sum(axis=1) - 1).max() <= 1e-12 and g.W.min() >= 0)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 11))
        W = random_W(rng, n, density=rng.uniform(0.2, 1.0))
        pi = np.linalg.solve(np.eye(n) - 0.85 * W.T, np.full(n, 0.15 / n))
        worst = max(worst, float(np.abs(pagerank(W) - pi / pi.sum()).max()))
    report(8, "kernel symmetry, cutoff sparsity, row-stochastic W; PageRank vs linear solve",
           ok and worst <= 1e-10, f"PageRank max diff {worst:.2e}")


def test_c09_end_to_end_determinism(report, tmp_path):
    assert main(["synth", "--out", str(tmp_path / "demo"), "--respondents", "600", "--seed", "9"]) == 0
    cfg = tmp_path / "demo" / "config.yaml"
    trees = []
    for out in ("first", "second"):
        for cmd in ("pipeline", "analyze", "simulate", "compare", "sweep"):
            assert main([cmd, "--config", str(cfg), "--out", str(tmp_path / out), "--horizon", "300"]) == 0
        root = tmp_path / out
        trees.append({p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    report(9, "identical config and seed give bit-identical output trees", trees[0] == trees[1] and len(trees[0]) > 5,
           f"{len(trees[0])} files")


# --- dataset-conditional --------------------------------------------------------

def _survey_config(tmp_path, seed, **model):
    cfg = {"data": {"survey": str(Path(SURVEY).resolve())}, "country": "Germany", "seed": seed,
           "out": str(tmp_path / "runs"), "horizon": 5000}
    if SURVEY_SCHEMA:
        cfg["data"]["schema"] = str(Path(SURVEY_SCHEMA).resolve())
    if model:
        cfg["model"] = model
    path = tmp_path / f"config-{seed}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def _experiment(tmp_path, seed):
    from adoptdyn.cli import assemble
    from adoptdyn.config import RunConfig
    return assemble(RunConfig.load(_survey_config(tmp_path, seed)))


def test_c10_germany_calibration(report, survey):
    from adoptdyn.pipeline import Schema, calibrate, ingest
    schema = Schema.load(SURVEY_SCHEMA) if SURVEY_SCHEMA else Schema.default()
    inputs = calibrate(ingest(SURVEY, schema, "Germany"))
    a0 = float(inputs.f @ inputs.a0)
    xbar = float(inputs.f @ inputs.x0)
    ok = abs(inputs.n_respondents - 1078) <= 107.8 and inputs.n == 25 and abs(a0 - 0.194) <= 0.01 \
        and abs(xbar - 0.537) <= 0.01
    report(10, "Germany calibration", ok, f"N={inputs.n_respondents}, n={inputs.n}, a0={a0:.4f}, x0={xbar:.4f}")


def test_c11_uncontrolled_run(report, survey, tmp_path):
    rows, failures = [], []
    for seed in range(10):
        try:
            exp = _experiment(tmp_path, seed)
            rep = classify(exp.model, exp.x0, find_equilibrium=False)
            tr = simulate(exp.initial, exp.model, 5000, x0=exp.x0)
            rows.append((rep.r0_at_xstar, *tr.final_aggregates[1:]))
        except Exception as exc:  # noqa: BLE001 - recorded as a failed seed
            failures.append(f"seed {seed}: {type(exc).__name__}: {exc}")
    ok = not failures
    detail = "; ".join(failures[:2])
    if rows:
        r = np.array(rows)
        ok &= bool(np.all((r[:, 0] >= 1.1) & (r[:, 0] <= 1.5)) and np.all(np.abs(r[:, 1] - 0.06) <= 0.03)
                   and np.all(np.abs(r[:, 2] - 0.077) <= 0.03) and np.all(np.abs(r[:, 3] - 0.37) <= 0.05))
        detail = (f"r0 {r[:, 0].min():.3f}..{r[:, 0].max():.3f}, adopters {r[:, 1].min():.4f}..{r[:, 1].max():.4f}, "
                  f"dissatisfied {r[:, 2].min():.4f}..{r[:, 2].max():.4f}, opinion {r[:, 3].min():.4f}.."
                  f"{r[:, 3].max():.4f}" + (f"; {detail}" if detail else ""))
    report(11, "uncontrolled run over 10 weight seeds", ok, detail)


def test_c12_policy_ordering(report, survey, tmp_path):
    ok, notes = True, []
    for seed in range(10):
        try:
            exp = _experiment(tmp_path, seed)
        except Exception as exc:  # noqa: BLE001
            ok, notes = False, notes + [f"seed {seed}: {type(exc).__name__}: {exc}"]
            continue
        n = exp.model.n
        pols = [ControlPolicy(Kind.DISSATISFACTION, r, 0.75 * n) for r in Rule] + \
               [ControlPolicy(Kind.OPINION, r, float(n)) for r in Rule]
        outs = {(o.policy.kind, o.policy.rule): o for o in compare(exp.model, exp.x0, exp.initial, 5000, pols, exp.graph.W)}
        if not all(o.ok for o in outs.values()):
            ok, notes = False, notes + [f"seed {seed}: a policy failed"]
            continue
        dis = {r: outs[(Kind.DISSATISFACTION, r)].final_adopters for r in Rule}
        opi = {r: outs[(Kind.OPINION, r)].final_adopters for r in Rule}
        ok &= min(dis.values()) > max(opi.values())
        ok &= dis[Rule.INDEGREE] >= dis[Rule.SIZE] and dis[Rule.PAGERANK] >= dis[Rule.SIZE]
    report(12, "dissatisfaction rules beat opinion rules; centrality >= size", ok, "; ".join(notes[:2]))


def test_c13_clustering_peak(report, survey, capsys):
    from adoptdyn.clustering import cluster_sweep
    from adoptdyn.pipeline import Schema, ingest, sociodemographic_matrix
    schema = Schema.load(SURVEY_SCHEMA) if SURVEY_SCHEMA else Schema.default()
    diag = cluster_sweep(sociodemographic_matrix(ingest(SURVEY, schema, "Germany")), range(1, 10), seed=0)
    best = diag.best_silhouette_k()
    if best in (4, 6):
        with capsys.disabled():
            print(f"\n[criterion 13] WARNING silhouette peaks at k={best}, one position from 5")
    report(13, "silhouette peak at k=5 (+-1)", best in (4, 5, 6), f"peak k={best}")
