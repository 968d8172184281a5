"""Acceptance suite: one test (or one parametrized family) per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Parameters not fixed by the criteria themselves (pencil spectra, burn-in,
record strides) were chosen by pilot runs and are frozen here.
"""

import json
import os
import time

import numpy as np
import pytest

from conftest import fd_gradient, fd_hessian_vec, gapped_pencil, record_acceptance, singular_instance
from onlinegev import linalg
from onlinegev.cli import main as cli_main
from onlinegev.diffusion import (
    check_commutative,
    commutative_pencil,
    escape_experiment,
    escape_horizon,
    fit_decay_slope,
    mc_ou_constants,
    ou_stationary_variance,
    v_ratio,
    w_process,
    z_process,
)
from onlinegev.errors import IllPosedError
from onlinegev.harness import RunConfig, run_experiment
from onlinegev.landscape import (
    enumerate_equilibria_singular,
    hessian_symmetrized_field,
    hessian_primal,
    kkt_residual,
    landscape,
)
from onlinegev.oracle import OracleSpec
from onlinegev.problem import (
    GevProblem,
    check_well_defined_singular,
    grad_lagrangian,
    ground_truth,
    lagrangian,
)
from onlinegev.sgha import SghaConfig, run

# pencil used by the fluctuation and step-size criteria
OU_BETA = np.array([2.0, 1.4, 1.0, 0.7, 0.4])
OU_MU = np.array([1.0, 1.5, 0.8, 1.2, 1.0])


def test_criterion_1_equilibrium_census():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    d, r = 6, 2
    n_eq, worst_kkt, n_stable_ok, rank_ok, bound_ok = [], 0.0, 0, 0, True
    for _ in range(20):
        A, B = gapped_pencil(rng, d, r)
        p = GevProblem(A, B, r)
        eqs = landscape(p)
        n_eq.append(len(eqs))
        worst_kkt = max(worst_kkt, max(max(kkt_residual(p, e.X, e.Y)) for e in eqs))
        stable = [e for e in eqs if e.is_stable]
        if len(stable) == 1 and stable[0].index_set == tuple(range(r)):
            n_stable_ok += 1
            rank_ok += stable[0].hessian_rank == d * r - 1
        for e in eqs:
            if not e.is_stable:
                bound_ok &= e.lambda_min_H <= e.curvature_bound + 1e-9 * abs(e.curvature_bound)
    elapsed = time.perf_counter() - t0
    passed = (all(n == 15 for n in n_eq) and worst_kkt <= 1e-7 and n_stable_ok == 20
              and rank_ok == 20 and bound_ok and elapsed < 10)
    record_acceptance(1, "equilibrium census", passed,
                      f"counts={sorted(set(n_eq))} max_kkt={worst_kkt:.2e} stable_ok={n_stable_ok}/20 "
                      f"rank11={rank_ok}/20 bounds={'ok' if bound_ok else 'violated'} t={elapsed:.1f}s")
    assert passed


def test_criterion_2_derivative_oracles():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst_h, worst_lit, worst_g = 0.0, 0.0, 0.0
    for n in range(50):
        d = int(rng.integers(2, 5))
        r = int(rng.integers(1, min(2, d - 1) + 1))
        A, B = gapped_pencil(rng, d, r)
        p = GevProblem(A, B, r)
        X = rng.normal(size=(d, r))
        Y = rng.normal(size=(r, r))
        Y = Y + Y.T

        # Hessian used for classification: X -> L(X, X^T A X)
        def reduced(x):
            Z = linalg.unvec(x, d, r)
            return lagrangian(p, Z, Z.T @ A @ Z)

        H = hessian_primal(p, X)
        F = fd_hessian_vec(reduced, linalg.vec(X))
        worst_h = max(worst_h, np.linalg.norm(H - F) / np.linalg.norm(F))

        # literal form: symmetrized Jacobian of 2 (B X X^T - I) A X
        def field(x):
            Z = linalg.unvec(x, d, r)
            return linalg.vec(2 * (B @ Z @ Z.T - np.eye(d)) @ A @ Z)

        h = 1e-6
        x = linalg.vec(X)
        J = np.column_stack([(field(x + h * e) - field(x - h * e)) / (2 * h) for e in np.eye(d * r)])
        L = hessian_symmetrized_field(p, X)
        worst_lit = max(worst_lit, np.linalg.norm(L - (J + J.T)) / np.linalg.norm(J + J.T))

        gX, _ = grad_lagrangian(p, X, Y)
        fX = fd_gradient(lambda Z: lagrangian(p, Z, Y), X)
        worst_g = max(worst_g, np.linalg.norm(gX - fX) / np.linalg.norm(fX))
    elapsed = time.perf_counter() - t0
    passed = worst_h <= 1e-4 and worst_lit <= 1e-4 and worst_g <= 1e-5 and elapsed < 10
    record_acceptance(2, "Hessian and gradient oracles", passed,
                      f"hessian_rel={worst_h:.1e} literal_rel={worst_lit:.1e} "
                      f"grad_rel={worst_g:.1e} t={elapsed:.1f}s")
    assert passed


def _ill_defined(rng, d=5, m=3):
    Q = linalg.random_orthogonal(d, rng)
    B = (Q * np.r_[rng.uniform(0.5, 2, m), np.zeros(d - m)]) @ Q.T
    W = rng.normal(size=(d, d))
    W = W + W.T
    # one positive direction inside Null(B)
    W[m:, m:] = np.diag(np.r_[1.0 + rng.uniform(), -np.ones(d - m - 1)])
    A = Q @ W @ Q.T
    return GevProblem(0.5 * (A + A.T), 0.5 * (B + B.T), 2)


def test_criterion_3_singular_B():
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    counts, worst_kkt, checks = [], 0.0, 0
    for _ in range(10):
        A, B = singular_instance(rng, d=5, m=3)
        p = GevProblem(A, B, 2)
        checks += check_well_defined_singular(p).passed
        eqs = enumerate_equilibria_singular(p)
        counts.append(len(eqs))
        worst_kkt = max(worst_kkt, max(max(kkt_residual(p, e.X, e.Y)) for e in eqs))
    rejected = 0
    for _ in range(5):
        p = _ill_defined(rng)
        v = check_well_defined_singular(p)
        has_witness = (v.witness is not None and np.linalg.norm(p.B @ v.witness) <= 1e-10
                       and v.witness @ p.A @ v.witness >= 0)
        try:
            enumerate_equilibria_singular(p)
            raised = False
        except IllPosedError:
            raised = True
        rejected += (not v.passed) and has_witness and raised
    elapsed = time.perf_counter() - t0
    passed = (checks == 10 and all(c == 3 for c in counts) and worst_kkt <= 1e-7
              and rejected == 5 and elapsed < 5)
    record_acceptance(3, "singular-B theory", passed,
                      f"well_defined={checks}/10 counts={sorted(set(counts))} "
                      f"max_kkt={worst_kkt:.2e} rejected={rejected}/5 t={elapsed:.1f}s")
    assert passed


CONVERGENCE_CASES = [
    pytest.param(1, 50, None, id="setting1-d50"),
    pytest.param(2, 60, 3, id="setting2-d60"),
    pytest.param(3, 60, 3, id="setting3-d60"),
]


@pytest.mark.parametrize("setting,d,r", CONVERGENCE_CASES)
def test_criterion_4_sgha_convergence(setting, d, r, tmp_path):
    cfg = RunConfig(setting=setting, d=d, r=r, eta=1e-3, iters=20_000, n_draws=40,
                    record_stride=1000, output_dir=str(tmp_path))
    t0 = time.perf_counter()
    s = run_experiment(cfg, write=False)
    elapsed = time.perf_counter() - t0
    init = np.median([res.initial_error for res in s.results])
    final = np.median(s.final_errors)
    aligned = sum(res.final_alignment > 0.95 for res in s.results)
    passed = s.ok and final < init / 10 and aligned >= 18 and elapsed <= 180
    record_acceptance(4, "SGHA convergence", passed,
                      f"setting {setting} d={d}: median error {init:.3g} -> {final:.3g}, "
                      f"aligned {aligned}/20, t={elapsed:.0f}s")
    assert passed


@pytest.mark.skipif(not os.environ.get("ONLINEGEV_LONG"), reason="set ONLINEGEV_LONG=1 for d = 500")
@pytest.mark.parametrize("setting", [1, 2, 3])
def test_criterion_4_full_dimension(setting, tmp_path):
    cfg = RunConfig(setting=setting, d=500, eta=1e-3, iters=20_000, n_draws=40,
                    record_stride=1000, output_dir=str(tmp_path))
    s = run_experiment(cfg, jobs=os.cpu_count() or 1, write=False)
    init = np.median([res.initial_error for res in s.results])
    final = np.median(s.final_errors)
    passed = s.ok and final < 0.5 * init
    record_acceptance(4, "SGHA convergence", passed,
                      f"setting {setting} d=500: median error {init:.3g} -> {final:.3g}")
    assert passed


def test_criterion_5_ode_law():
    t0 = time.perf_counter()
    eta = 1e-4
    worst, min_r2 = 0.0, 1.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        beta = np.sort(rng.uniform(0.2, 2.0, 5))[::-1]
        mu = rng.uniform(0.5, 2.0, 5)
        A, B = commutative_pencil(beta, mu, seed)
        spec = check_commutative(A, B)
        cfg = SghaConfig(eta=eta, max_iters=30_000, record_stride=100, init_seed=seed,
                         record_x=True)
        traj, _ = run(GevProblem(A, B, 1), OracleSpec.exact(A), OracleSpec.exact(B), cfg)
        W = [w_process(spec, X)[:, 0] for X in traj.snapshots]
        for k in range(1, 5):
            lv = [v_ratio(w, k, 0, spec)[1] for w in W]
            fit = fit_decay_slope(traj.iters, lv, eta, log=True)
            pred = spec.mu[0] * spec.mu[k] * (spec.beta[k] - spec.beta[0])
            worst = max(worst, abs(fit.slope / pred - 1))
            min_r2 = min(min_r2, fit.r2)
    elapsed = time.perf_counter() - t0
    passed = worst <= 0.10 and min_r2 >= 0.99 and elapsed < 30
    record_acceptance(5, "ODE law", passed,
                      f"worst slope rel err={worst:.4f} min R2={min_r2:.6f} t={elapsed:.1f}s")
    assert passed


def test_criterion_6_ou_fluctuation():
    t0 = time.perf_counter()
    eta, burn, n_post = 1e-2, 2000, 100_000
    ratios, worst_se = [], 0.0
    for seed in range(3):
        A, B = commutative_pencil(OU_BETA, OU_MU, seed)
        spec = check_commutative(A, B)
        p = GevProblem(A, B, 1)
        sA = OracleSpec.gauss_cov(A, 200, seed=seed)
        sB = OracleSpec.gauss_cov(B, 200, seed=seed)
        # the constants use a disjoint block of the sample stream
        consts = mc_ou_constants(spec, sA, sB, n_mc=100_000, start=10**9)
        # the O-U correlation time is ~80 iterations, so every 5th iterate suffices
        cfg = SghaConfig(eta=eta, max_iters=burn + n_post, record_stride=5, init_seed=seed,
                         record_x=True)
        traj, _ = run(p, sA, sB, cfg, X0=ground_truth(p).X)
        X = np.hstack([x for k, x in zip(traj.iters, traj.snapshots) if k > burn])
        Z = z_process(w_process(spec, X).T, eta)
        for i in range(1, 5):
            pred = ou_stationary_variance(consts.G[i, 0], spec.mu[i], spec.beta[0], spec.beta[i])
            ratios.append(float(Z[:, i].var() / pred))
            worst_se = max(worst_se, consts.G_se[i, 0] / consts.G[i, 0])
    elapsed = time.perf_counter() - t0
    passed = all(abs(q - 1) <= 0.30 for q in ratios) and worst_se <= 0.05 and elapsed < 120
    record_acceptance(6, "O-U fluctuation", passed,
                      f"var ratio range [{min(ratios):.3f}, {max(ratios):.3f}] "
                      f"max G se={100 * worst_se:.2f}% t={elapsed:.0f}s")
    assert passed


def test_criterion_7_step_size_scaling():
    t0 = time.perf_counter()
    A, B = commutative_pencil(OU_BETA, OU_MU, 0)
    p = GevProblem(A, B, 1)
    X_star = ground_truth(p).X
    eta0 = 0.02
    # burn-in and window are fixed in continuous time t = k * eta
    t_burn, t_win = 500 * eta0, 2500 * eta0
    means = {}
    for eta in (eta0, eta0 / 2):
        per_seed = []
        for seed in range(20):
            sA = OracleSpec.gauss_cov(A, 40, seed=seed)
            sB = OracleSpec.gauss_cov(B, 40, seed=seed)
            n = int(round((t_burn + t_win) / eta))
            b = int(round(t_burn / eta))
            cfg = SghaConfig(eta=eta, max_iters=n, record_stride=10, init_seed=seed)
            traj, _ = run(p, sA, sB, cfg, X0=X_star)
            E = traj.errors[traj.iters > b]
            per_seed.append(np.mean(E ** 2))
        means[eta] = float(np.mean(per_seed))
    ratio = means[eta0] / means[eta0 / 2]
    elapsed = time.perf_counter() - t0
    passed = 1.4 <= ratio <= 2.6 and elapsed < 120
    record_acceptance(7, "step-size scaling", passed,
                      f"squared-error ratio eta/(eta/2)={ratio:.3f} t={elapsed:.0f}s")
    assert passed


def test_criterion_8_saddle_escape():
    t0 = time.perf_counter()
    d = 20
    A, B = commutative_pencil(np.linspace(2.0, 0.2, d), np.linspace(1.5, 0.5, d), 0)
    spec = check_commutative(A, B)
    sA = OracleSpec.gauss_cov(A, 40, seed=0)
    sB = OracleSpec.gauss_cov(B, 40, seed=0)
    saddle, eta = 1, 1e-2
    consts = mc_ou_constants(spec, sA, sB, n_mc=5000, start=10**9)
    horizon = escape_horizon(spec, consts.G[0, saddle], saddle)
    noisy = escape_experiment(spec, sA, sB, eta, saddle, 1e-6, range(50), horizon)
    exact = escape_experiment(spec, OracleSpec.exact(A), OracleSpec.exact(B), eta, saddle, 0.0,
                              range(50), horizon)
    elapsed = time.perf_counter() - t0
    passed = noisy.fraction >= 0.9 and exact.fraction == 0.0 and elapsed < 120
    record_acceptance(8, "saddle escape", passed,
                      f"horizon={horizon:.2f} escaped={noisy.fraction:.2f} "
                      f"median t={noisy.median_time:.2f} exact escaped={exact.fraction:.2f} "
                      f"t={elapsed:.1f}s")
    assert passed


def test_criterion_9_determinism(tmp_path):
    configs = [
        {"setting": 1, "d": 10, "eta": 1e-3, "iters": 300, "record_stride": 50, "n_seeds": 3},
        {"setting": 2, "d": 8, "eta": 1e-2, "iters": 300, "record_stride": 25, "n_seeds": 3},
        {"setting": 3, "d": 8, "eta": 1e-2, "iters": 300, "record_stride": 25, "n_seeds": 3,
         "oracle": {"kind": "add_noise", "sigma": 0.1}, "mode": "two-step"},
    ]
    identical, files = True, 0
    for n, cfg in enumerate(configs):
        path = tmp_path / f"cfg{n}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for rep in range(2):
            out = tmp_path / f"run{n}_{rep}"
            assert cli_main(["experiment", "--config", str(path), "--seed", "7",
                             "--out", str(out)]) == 0
            outs.append(out)
        for f in sorted(outs[0].glob("*.csv")):
            files += 1
            identical &= f.read_bytes() == (outs[1] / f.name).read_bytes()
        identical &= sorted(x.name for x in outs[0].glob("*.csv")) == \
            sorted(x.name for x in outs[1].glob("*.csv"))
    passed = identical and files == 12
    record_acceptance(9, "determinism", passed, f"{files} CSV files compared, "
                      f"{'all byte-identical' if identical else 'mismatch'}")
    assert passed
