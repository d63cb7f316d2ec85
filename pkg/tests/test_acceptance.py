"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
complete.  Every tolerance and calibrated constant is pinned here; the
stepsizes come from the committed grid {0.1, 0.05, 0.01, 0.005, 0.001,
0.0005, 0.0001}.
"""

from __future__ import annotations

import sys
import threading
import time
from contextlib import contextmanager

import numpy as np
import pytest

from lfopt import (
    GradientBuffer,
    ModelSpec,
    ParameterBlock,
    RunConfig,
    SimConfig,
    SparseVector,
    check_gap_bound,
    check_q_ratio,
    check_qhat_vs_q,
    full_loss_and_grad,
    grad_single,
    init_params,
    layout_for,
    lemma1_check,
    lipschitz_bound,
    loss_single,
    read_snapshot,
    run_asysvrg,
    run_hogwild,
    run_sgd,
    run_svrg,
    simulate,
    solve_rho,
    store_all,
    variance_probe,
    write_saxpy,
)
from lfopt.theory import c0_closed_form, complexity_regime, theorem2_schedule

# -- pinned tolerances and calibrated fixtures --------------------------------
FD_TOL_BINARY = 1e-6
FD_TOL_MLP = 1e-4
FD_POINTS = 100
LEMMA1_TRIALS = 10_000
LEMMA1_SLACK = 1e-9
VARIANCE_RATIO_LIMIT = 0.01
VARIANCE_PAIRS = 20
CONVERGENCE_ETA = 0.05          # grid value calibrated for the desk problem
CONVERGENCE_TARGET = 1e-3
CONVERGENCE_PASSES = 50
THREAD_CONSISTENCY_ETA = 0.05
THREAD_CONSISTENCY_PASSES = 40
THREAD_CONSISTENCY_REL = 0.05
MLP_HOGWILD_ETA = 0.05          # grid value, best final loss at 20 passes
MLP_ASYSVRG_ETA = 0.1           # grid value, best final loss at matched budget
MLP_THREADS = 4
MLP_HOGWILD_EPOCHS = 20
MLP_ASYSVRG_OUTER = 10
EVAL_BUDGET_MARGIN = 0.70       # committed after calibration
REGIME_MU = 0.05
REGIME_V = 1.0
SIM_ETA = 5e-4                  # accepted by solve_rho for every tau below
SIM_TAUS = (0, 1, 2, 4)
SIM_KEEP_PROBS = (0.5, 0.9, 1.0)
SIM_PARTIAL_PROB = 0.5
SIM_TRIALS = 1000
SENTINEL_OPS = 1_000_000


@contextmanager
def criterion(num: int, name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {num:02d} {name}: FAIL")
        raise
    print(f"ACCEPTANCE {num:02d} {name}: PASS")


def random_instance(rng, d, density=0.6):
    idx = np.flatnonzero(rng.random(d) < density)
    if idx.size == 0:
        idx = np.array([int(rng.integers(0, d))])
    return SparseVector(idx, rng.normal(size=idx.size), d)


def fd_error(spec, params, instance, label, h=1e-5):
    buf = GradientBuffer(params.size)
    grad_single(spec, params, instance, label, buf)
    fd = np.zeros_like(params)
    for k in range(params.size):
        plus, minus = params.copy(), params.copy()
        plus[k] += h
        minus[k] -= h
        fd[k] = (loss_single(spec, plus, instance, label) - loss_single(spec, minus, instance, label)) / (2 * h)
    return float(np.linalg.norm(buf.values - fd)) / max(float(np.linalg.norm(fd)), 1e-12)


def test_criterion_1_gradient_correctness():
    with criterion(1, "gradient vs central finite differences"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(1001)
        d = 20
        for kind, lam, tol in (("logreg", 1e-3, FD_TOL_BINARY), ("svm", 1e-3, FD_TOL_BINARY)):
            spec = ModelSpec(kind, lam, d, 2)
            checked = 0
            while checked < FD_POINTS:
                params = rng.normal(size=d)
                inst = random_instance(rng, d)
                label = int(rng.integers(0, 2))
                if kind == "svm":
                    y = 1.0 if label == 1 else -1.0
                    if abs(1.0 - y * float(params[inst.indices] @ inst.values)) < 1e-3:
                        continue  # stay off the hinge kink
                assert fd_error(spec, params, inst, label) <= tol
                checked += 1
        spec = ModelSpec("mlp", 1e-3, d, 10, 16)
        dim = layout_for(spec).total_dim
        for _ in range(FD_POINTS):
            params = rng.normal(size=dim) * 0.7
            inst = random_instance(rng, d)
            label = int(rng.integers(0, 10))
            assert fd_error(spec, params, inst, label) <= FD_TOL_MLP
        assert time.perf_counter() - t0 < 30.0


def test_criterion_2_lemma1_sweep(desk_logreg, desk_logreg_spec):
    with criterion(2, "descent-inequality sweep, zero violations"):
        t0 = time.perf_counter()
        L = lipschitz_bound(desk_logreg_spec, desk_logreg)
        alpha = 0.4

        def grad(w):
            return full_loss_and_grad(desk_logreg_spec, w, desk_logreg)[1].values

        rng = np.random.default_rng(1002)
        violations = 0
        for _ in range(LEMMA1_TRIALS):
            x = rng.normal(size=20) * rng.uniform(0.1, 3.0)
            y = rng.normal(size=20) * rng.uniform(0.1, 3.0)
            B = rng.uniform(alpha, 1.0, size=20)
            lhs, rhs, holds = lemma1_check(L, alpha, x, y, B, grad)
            if not holds or lhs > rhs + LEMMA1_SLACK:
                violations += 1
        assert violations == 0
        assert time.perf_counter() - t0 < 60.0


def _strip_timing(metrics):
    return [(r.grad_evals, r.train_loss, r.grad_norm_sq) for r in metrics.rows]


def test_criterion_3_single_thread_determinism(desk_logreg, desk_logreg_spec):
    with criterion(3, "p=1 lock-free runs match sequential baselines bit-exactly"):
        params = init_params(desk_logreg_spec, 77)
        m_sgd = run_sgd(desk_logreg_spec, desk_logreg, RunConfig("sgd", eta=0.05, epochs=5, seed=77), params)
        block = ParameterBlock(init_params(desk_logreg_spec, 77))
        m_hog = run_hogwild(
            desk_logreg_spec, desk_logreg, RunConfig("hogwild", eta=0.05, threads=1, epochs=5, seed=77), block
        )
        assert np.array_equal(params, block.cells)
        assert _strip_timing(m_sgd) == _strip_timing(m_hog)

        params = init_params(desk_logreg_spec, 78)
        m_svrg = run_svrg(
            desk_logreg_spec, desk_logreg,
            RunConfig("svrg", eta=0.05, outer_iters=3, inner_iters=500, seed=78), params,
        )
        block = ParameterBlock(init_params(desk_logreg_spec, 78))
        m_asy = run_asysvrg(
            desk_logreg_spec, desk_logreg,
            RunConfig("asysvrg", eta=0.05, threads=1, outer_iters=3, inner_iters=500, seed=78), block,
        )
        assert np.array_equal(params, block.cells)
        assert _strip_timing(m_svrg) == _strip_timing(m_asy)


def test_criterion_4_variance_reduction(desk_logreg, desk_logreg_spec):
    with criterion(4, "variance reduction at a trained point"):
        params = init_params(desk_logreg_spec, 5)
        metrics = run_svrg(
            desk_logreg_spec, desk_logreg,
            RunConfig("svrg", eta=0.1, outer_iters=10, inner_iters=desk_logreg.n, seed=5), params,
        )
        assert metrics.final.grad_norm_sq <= 1e-4

        vr, plain = variance_probe(desk_logreg_spec, desk_logreg, params, params, samples=2000, seed=1004)
        assert vr <= VARIANCE_RATIO_LIMIT * plain

        L = lipschitz_bound(desk_logreg_spec, desk_logreg)
        rng = np.random.default_rng(1005)
        for pair in range(VARIANCE_PAIRS):
            scale = 0.1 if pair % 2 else 1.0
            anchor = params + rng.normal(size=20) * scale
            query = params + rng.normal(size=20) * scale
            batches = [
                variance_probe(desk_logreg_spec, desk_logreg, anchor, query, 200, seed=2000 + 10 * pair + b)[0]
                for b in range(5)
            ]
            est = float(np.mean(batches))
            se = float(np.std(batches, ddof=1) / np.sqrt(len(batches)))
            _, gq = full_loss_and_grad(desk_logreg_spec, query, desk_logreg)
            diff = query - anchor
            bound = 2 * L * L * float(diff @ diff) + 2 * float(gq.values @ gq.values)
            assert est <= bound + 3 * se


def test_criterion_5_hogwild_convergence(desk_logreg, desk_logreg_spec):
    with criterion(5, "lock-free SGD convergence on the convex desk problem"):
        t0 = time.perf_counter()
        block = ParameterBlock(init_params(desk_logreg_spec, 11))
        cfg = RunConfig("hogwild", eta=CONVERGENCE_ETA, threads=4, epochs=CONVERGENCE_PASSES, seed=11)
        metrics = run_hogwild(desk_logreg_spec, desk_logreg, cfg, block)
        grad_sq = np.array([r.grad_norm_sq for r in metrics.rows])
        running_avg = np.cumsum(grad_sq) / np.arange(1, grad_sq.size + 1)
        assert np.any(running_avg <= CONVERGENCE_TARGET), "running average never reached target"
        first = int(np.argmax(running_avg <= CONVERGENCE_TARGET))
        assert first <= CONVERGENCE_PASSES
        assert np.all(np.diff(running_avg[5:]) <= 1e-15), "running average increased after pass 5"
        assert time.perf_counter() - t0 < 120.0


def test_criterion_6_asysvrg_beats_hogwild_budget(digits_mlp):
    with criterion(6, "variance-reduced run reaches the lock-free SGD loss in <= 70% of the budget"):
        t0 = time.perf_counter()
        data, spec = digits_mlp
        hog_cfg = RunConfig(
            "hogwild", eta=MLP_HOGWILD_ETA, threads=MLP_THREADS, epochs=MLP_HOGWILD_EPOCHS, seed=42
        )
        hog_block = ParameterBlock(init_params(spec, 42))
        hog = run_hogwild(spec, data, hog_cfg, hog_block)
        hog_final_loss = hog.final.train_loss
        hog_budget = hog.final.grad_evals

        asy_cfg = RunConfig(
            "asysvrg", eta=MLP_ASYSVRG_ETA, threads=MLP_THREADS, outer_iters=MLP_ASYSVRG_OUTER, seed=42
        )
        asy_block = ParameterBlock(init_params(spec, 42))
        asy = run_asysvrg(spec, data, asy_cfg, asy_block)

        crossing = next((r.grad_evals for r in asy.rows if r.train_loss <= hog_final_loss), None)
        assert crossing is not None, "variance-reduced run never reached the baseline loss"
        print(
            f"  baseline loss {hog_final_loss:.4f} at {hog_budget} evals; "
            f"crossed at {crossing} evals ({crossing / hog_budget:.0%})"
        )
        assert crossing <= EVAL_BUDGET_MARGIN * hog_budget
        assert time.perf_counter() - t0 < 600.0


def test_criterion_7_thread_consistency(desk_logreg, desk_logreg_spec):
    with criterion(7, "final loss agrees across 1/2/4 threads at a fixed budget"):
        finals = {}
        for p in (1, 2, 4):
            cfg = RunConfig(
                "hogwild", eta=THREAD_CONSISTENCY_ETA, threads=p,
                epochs=THREAD_CONSISTENCY_PASSES, seed=5,
            )
            block = ParameterBlock(init_params(desk_logreg_spec, 5))
            metrics = run_hogwild(desk_logreg_spec, desk_logreg, cfg, block)
            assert metrics.final.grad_evals == THREAD_CONSISTENCY_PASSES * desk_logreg.n
            finals[p] = metrics.final.train_loss
        spread = (max(finals.values()) - min(finals.values())) / min(finals.values())
        print(f"  finals {finals} relative spread {spread:.4f}")
        assert spread <= THREAD_CONSISTENCY_REL


def test_criterion_8_theory_calculators():
    with criterion(8, "theory calculators: closed forms, recursion, regime sweep"):
        t0 = time.perf_counter()
        rho = solve_rho(0.01, 0, 1.0)
        assert rho is not None and abs(rho - 1.0 / 0.9) <= 1e-10

        rng = np.random.default_rng(1008)
        for _ in range(10):
            L = float(rng.uniform(0.5, 2.5))
            tau = int(rng.integers(0, 5))
            eta = float(rng.uniform(1e-4, 2e-3))
            beta = eta * float(rng.uniform(5.0, 40.0))
            M = int(rng.integers(1, 300))
            sched = theorem2_schedule(L, 0.9, tau, 1.3, eta, beta, M)
            closed = c0_closed_form(L, eta, sched.f_const, sched.a_const, M)
            assert abs(sched.c[0] - closed) <= 1e-10 * abs(closed)

        gammas = {}
        for n in (10**3, 10**4, 10**5):
            eta_n = REGIME_MU / n ** (2 / 3)
            rho_n = solve_rho(eta_n, 0, 1.0)
            assert rho_n is not None
            report = complexity_regime(n, REGIME_MU, REGIME_V, 1.0, 0.9, 0, rho_n)
            assert report.valid and report.gamma > 0.0
            gammas[n] = report.gamma
        scaled = [gammas[n] * n ** (2 / 3) for n in gammas]
        assert max(scaled) / min(scaled) < 2.0
        assert time.perf_counter() - t0 < 10.0


def test_criterion_9_simulator_lemma_suite(sim_logreg, sim_logreg_spec):
    with criterion(9, "simulator bound suite over the delay/overwrite grid"):
        t0 = time.perf_counter()
        L = lipschitz_bound(sim_logreg_spec, sim_logreg)
        for tau in SIM_TAUS:
            rho = solve_rho(SIM_ETA, tau, L)
            assert rho is not None, f"stepsize rejected at tau={tau}"
            for keep in SIM_KEEP_PROBS:
                hog_cfg = SimConfig(
                    algo="hogwild", tau=tau, keep_prob=keep, partial_prob=SIM_PARTIAL_PROB,
                    eta=SIM_ETA, steps=40, trials=SIM_TRIALS, seed=3,
                )
                hog = simulate(sim_logreg_spec, sim_logreg, hog_cfg)
                assert hog.max_delay <= tau
                assert check_q_ratio(hog, rho)[1], f"q ratio failed: hogwild tau={tau} keep={keep}"
                assert check_gap_bound(hog, rho)[1], f"gap bound failed: hogwild tau={tau} keep={keep}"
                if tau == 0:
                    assert np.all(hog.mean_gap_sq == 0.0)

                asy_cfg = SimConfig(
                    algo="asysvrg", tau=tau, keep_prob=keep, partial_prob=SIM_PARTIAL_PROB,
                    eta=SIM_ETA, outer_iters=2, inner_iters=20, trials=SIM_TRIALS, seed=3,
                )
                asy = simulate(sim_logreg_spec, sim_logreg, asy_cfg)
                assert check_q_ratio(asy, rho)[1], f"q ratio failed: asysvrg tau={tau} keep={keep}"
                assert check_gap_bound(asy, rho)[1], f"gap bound failed: asysvrg tau={tau} keep={keep}"
                assert check_qhat_vs_q(asy, rho)[1], f"read/write q failed: tau={tau} keep={keep}"
                if tau == 0:
                    assert np.all(asy.mean_gap_sq == 0.0)
        assert time.perf_counter() - t0 < 300.0


def test_criterion_10_shared_store_stress():
    with criterion(10, "shared store atomicity and support locality"):
        dim = 64
        pattern_a = np.arange(1.0, dim + 1.0)
        pattern_b = -2.0 * np.arange(1.0, dim + 1.0)
        block = ParameterBlock(pattern_a.copy())
        n_writers, n_readers = 4, 2
        writes = SENTINEL_OPS // (2 * n_writers)
        reads = SENTINEL_OPS // (2 * n_readers)
        torn = []

        def writer(k):
            for i in range(writes):
                store_all(block, pattern_a if (i + k) % 2 else pattern_b)

        def reader():
            for _ in range(reads):
                snap = read_snapshot(block)
                if not np.all((snap == pattern_a) | (snap == pattern_b)):
                    torn.append(snap.copy())
                    return

        threads = [threading.Thread(target=writer, args=(k,)) for k in range(n_writers)]
        threads += [threading.Thread(target=reader) for _ in range(n_readers)]
        old = sys.getswitchinterval()
        sys.setswitchinterval(1e-5)
        try:
            for th in threads:
                th.start()
            for th in threads:
                th.join()
        finally:
            sys.setswitchinterval(old)
        assert torn == [], "observed a torn snapshot value"

        sentinel_block = ParameterBlock(np.full(8, 3.25))
        buf = GradientBuffer(8)
        buf.values[[2, 5]] = [1.0, -2.0]
        buf.support = np.array([2, 5])
        write_saxpy(sentinel_block, 2.0, buf)
        untouched = [0, 1, 3, 4, 6, 7]
        assert np.all(sentinel_block.cells[untouched] == 3.25)
        assert sentinel_block.cells[2] == 3.25 - 2.0
        assert sentinel_block.cells[5] == 3.25 + 4.0
