"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (or execute this file).
The two training criteria are marked ``slow`` but still run by default.
"""

import math
import struct
import time
from dataclasses import replace

import numpy as np
import pytest

from largebatch.collective import (
    CommPrecision,
    CostModel,
    all_reduce,
    fit_cost_model,
    iteration_time,
    rel_l2_error,
    ring_time,
    scaling_efficiency,
    solve_for_efficiencies,
)
from largebatch.config import Config
from largebatch.lr_schedule import ClusterShape, eta_base, slow_start_schedule
from largebatch.numeric_core import Rng, quantize_binary16, rand_normal
from largebatch.optimizer import (
    BlendCoefficients,
    OptimizerHyper,
    OptimizerState,
    alpha_sgd_at,
    blend_at,
    step,
)
from largebatch.syncbn import BnLayerState, bn_backward, bn_forward_eval, bn_forward_train, sync_statistics
from largebatch.trainer import prepare, run, warmup_comparison


@pytest.fixture
def report(capsys):
    """Print one verdict line to the real terminal, then assert it."""
    t0 = time.perf_counter()

    def emit(number, title, ok, detail, budget_s):
        elapsed = time.perf_counter() - t0
        ok = bool(ok) and elapsed < budget_s
        with capsys.disabled():
            verdict = "PASS" if ok else "FAIL"
            print(f"\nCRITERION {number:>2} {verdict}  {title}: {detail} [{elapsed:.2f}s of {budget_s:g}s]")
        assert ok, f"criterion {number} failed: {detail}"

    return emit


def test_criterion_01_schedule_exactness(report):
    failures = []
    a10, a125 = alpha_sgd_at(10.0, 10.0, 5.0), alpha_sgd_at(12.5, 10.0, 5.0)
    if abs(a10 - 0.5) > 1e-12:
        failures.append(f"alpha(10)={a10!r}")
    if abs(a125 - 1.0) > 1e-12:
        failures.append(f"alpha(12.5)={a125!r}")
    jump = 0.0
    for b in (10.0, 12.5):
        at = alpha_sgd_at(b)
        for e in (b - 1e-6, b + 1e-6):
            jump = max(jump, abs(alpha_sgd_at(e) - at))
    if jump > 1e-5:
        failures.append(f"jump {jump:.3g} at a breakpoint")
    detail = "; ".join(failures) or f"alpha(10)=0.5, alpha(12.5)=1.0, max breakpoint jump {jump:.2e}"
    report(1, "schedule exactness", not failures, detail, 1)


def test_criterion_02_linear_scaling_anchor(report):
    base = eta_base(ClusterShape(1024, 32))
    sched = slow_start_schedule(base, 90)
    expect = {0: 6.4, 40: 0.96, 70: 0.128, 85: 0.0128}
    got = {e: sched(e) for e in expect}
    # each phase holds right up to the next boundary
    held = {e: sched(e - 1e-9) for e in (40, 70, 85)}
    ok = (
        base == 12.8
        and all(abs(got[e] - v) <= 1e-12 for e, v in expect.items())
        and held == {40: got[0], 70: got[40], 85: got[70]}
    )
    report(2, "linear scaling anchor", ok, f"eta_base={base!r}, phases {got}", 1)


def _independent_momentum_sgd(theta, grads, etas, mu1):
    theta, delta, out = list(theta), [0.0] * len(theta), []
    for g, eta in zip(grads, etas):
        for i, gi in enumerate(g):
            delta[i] = mu1 * delta[i] - gi
            theta[i] = theta[i] + eta * delta[i]
        out.append(list(theta))
    return out


def _independent_rmsprop_momentum(theta, grads, etas, mu1, mu2, eps):
    theta = list(theta)
    m, delta, out = [0.0] * len(theta), [0.0] * len(theta), []
    for g, eta in zip(grads, etas):
        for i, gi in enumerate(g):
            m[i] = mu2 * m[i] + (1 - mu2) * gi * gi
            delta[i] = mu1 * delta[i] - gi / (math.sqrt(m[i]) + eps)
            theta[i] = theta[i] + eta * delta[i]
        out.append(list(theta))
    return out


def test_criterion_03_optimizer_oracles(report):
    hyper = OptimizerHyper()
    rng = np.random.default_rng(3)
    worst = {"sgd": 0.0, "rmsprop": 0.0}
    for shape in [(), (7,)]:
        theta0 = rng.standard_normal(shape)
        grads = rng.standard_normal((1000, *shape)) * rng.uniform(0.01, 10, (1000, *([1] * len(shape))))
        etas = rng.uniform(1e-3, 1.0, 1000)
        flat0, flat_g = np.atleast_1d(theta0).tolist(), [np.atleast_1d(g).tolist() for g in grads]
        oracles = {
            "sgd": _independent_momentum_sgd(flat0, flat_g, etas, hyper.mu1),
            "rmsprop": _independent_rmsprop_momentum(
                flat0, flat_g, etas, hyper.mu1, hyper.mu2, hyper.epsilon
            ),
        }
        for kind, (a_sgd, a_rms) in {"sgd": (1.0, 0.0), "rmsprop": (0.0, 1.0)}.items():
            theta, state = theta0, OptimizerState.zeros_like(theta0)
            for t in range(1000):
                theta, state = step(theta, grads[t], state, BlendCoefficients(a_sgd, a_rms, etas[t]), hyper)
                diff = np.abs(np.atleast_1d(theta) - oracles[kind][t]).max()
                worst[kind] = max(worst[kind], float(diff))
    ok = max(worst.values()) <= 1e-12
    detail = f"max |diff| sgd {worst['sgd']:.2e}, rmsprop {worst['rmsprop']:.2e} over 1000 steps"
    report(3, "optimizer oracle equivalence", ok, detail, 5)


def test_criterion_04_momentum_lr_independence(report):
    hyper = OptimizerHyper()
    rng = np.random.default_rng(4)
    grads = rng.standard_normal((500, 5))
    etas_a = rng.uniform(1e-3, 10.0, 500)
    etas_b = rng.uniform(1e-3, 10.0, 500)

    def deltas(blends):
        theta, state, out = np.zeros(5), OptimizerState.zeros_like(np.zeros(5)), []
        for g, b in zip(grads, blends):
            theta, state = step(theta, g, state, b, hyper)
            out.append(state.delta.tobytes())
        return out

    same = []
    for a_sgd, a_rms in [(1.0, 0.0), (0.0, 1.0), (0.3, 2.5)]:
        same.append(
            deltas([BlendCoefficients(a_sgd, a_rms, e) for e in etas_a])
            == deltas([BlendCoefficients(a_sgd, a_rms, e) for e in etas_b])
        )
    # after the transition the scheduled blend carries no eta either
    same.append(
        deltas([blend_at(20.0, e, hyper) for e in etas_a]) == deltas([blend_at(20.0, e, hyper) for e in etas_b])
    )
    report(4, "momentum/LR independence", all(same), f"bit-equal delta sequences: {same}", 5)


def test_criterion_05_data_parallel_equivalence(report):
    cfg = Config(
        seed=5, workers=4, b_local=8, epochs=4, layers=(16, 24, 16, 4), batchnorm=False,
        dataset_examples=1600, dataset_separation=4.0, iterations_per_epoch=25,
    )
    multi = prepare(cfg)
    single = prepare(replace(cfg, workers=1, b_local=32))
    for it in range(100):
        batches = multi.sampler.batches(it)
        multi.step(it, batches)
        single.step(it, [np.concatenate(batches)])
    a, b = multi.replicas[0].params, single.replicas[0].params
    dist = max(float(np.abs(a[n] - b[n]).max()) for n in a)
    report(5, "data-parallel equivalence", dist <= 1e-10, f"max parameter distance {dist:.2e}", 30)


def _fd_bn(x, gamma, grad_out, eps, h=3e-4):
    """Five-point differences of sum(grad_out * bn(x)) w.r.t. x and gamma.

    With batch 2 the input gradient is only eps-sized, so a plain central
    difference drowns in roundoff; the fourth-order stencil allows a larger h.
    """

    def f(xv, gv):
        st = BnLayerState(gamma=gv, beta=np.zeros_like(gv))
        return float((grad_out * bn_forward_train(xv, st, eps)).sum())

    def diff(fun, v, idx):
        total = 0.0
        for c, k in ((-1, 2), (8, 1), (-8, -1), (1, -2)):
            p = v.copy()
            p[idx] += k * h
            total += c * fun(p)
        return total / (12 * h)

    gx = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        gx[idx] = diff(lambda p: f(p, gamma), x, idx)
    gg = np.array([diff(lambda p: f(x, p), gamma, (j,)) for j in range(len(gamma))])
    return gx, gg


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def test_criterion_06_bn_sync(report):
    failures = []
    # constructed last-minibatch statistics
    w0, w1 = BnLayerState.init(3), BnLayerState.init(3)
    w0.last_mean, w0.last_var = np.array([1.0, -2.0, 0.25]), np.array([4.0, 1.0, 0.5])
    w1.last_mean, w1.last_var = np.array([3.0, 2.0, 0.75]), np.array([2.0, 3.0, 1.5])
    sync_statistics([w0, w1])
    for st in (w0, w1):
        if not (np.array_equal(st.synced_mean, [2.0, 0.0, 0.5]) and np.array_equal(st.synced_var, [3.0, 2.0, 1.0])):
            failures.append("constructed average")
    rng = np.random.default_rng(6)
    r0, r1 = BnLayerState.init(4), BnLayerState.init(4)
    bn_forward_train(rng.standard_normal((8, 4)) * 3 + 1, r0)
    bn_forward_train(rng.standard_normal((8, 4)), r1)
    sync_statistics([r0, r1])
    if not (np.array_equal(r0.synced_mean, (r0.last_mean + r1.last_mean) / 2)
            and np.array_equal(r0.synced_var, (r0.last_var + r1.last_var) / 2)):
        failures.append("random average")

    # one worker: eval with synced stats reproduces train normalization
    eval_gap = 0.0
    for _ in range(20):
        st = BnLayerState(gamma=rng.uniform(0.5, 2, 5), beta=rng.standard_normal(5))
        x = rng.standard_normal((16, 5)) * rng.uniform(0.1, 10, 5) + rng.standard_normal(5)
        y_train = bn_forward_train(x, st)
        sync_statistics([st])
        eval_gap = max(eval_gap, float(np.abs(bn_forward_eval(x, st) - y_train).max()))
    if eval_gap > 1e-12:
        failures.append(f"eval gap {eval_gap:.2e}")

    worst = 0.0
    for _ in range(120):
        n, f = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        x = rng.standard_normal((n, f)) * rng.uniform(0.5, 3, f)
        gamma = rng.uniform(0.5, 2.0, f)
        grad_out = rng.standard_normal((n, f))
        st = BnLayerState(gamma=gamma, beta=rng.standard_normal(f))
        gx, gg, gb = bn_backward(grad_out, x, st)
        fx, fg = _fd_bn(x, gamma, grad_out, 1e-5)
        worst = max(worst, _rel(gx, fx), _rel(gg, fg), _rel(gb, grad_out.sum(axis=0)))
        if not all(np.isfinite(v).all() for v in (gx, gg, gb)):
            failures.append("non-finite backward")
    if worst > 1e-4:
        failures.append(f"backward rel error {worst:.2e}")
    detail = "; ".join(failures) or (
        f"averages exact, eval gap {eval_gap:.1e}, backward worst rel {worst:.1e} on 120 instances"
    )
    report(6, "BN sync correctness", not failures, detail, 30)


def test_criterion_07_half_precision(report):
    rng = np.random.default_rng(7)
    n = 10**6
    mags = np.exp2(rng.uniform(-14, math.log2(65504), n))
    x = mags * rng.choice([-1.0, 1.0], n)
    q = quantize_binary16(x)
    worst_rt = float((np.abs(q - x) / np.abs(x)).max())
    # cross-check a sample against the stdlib binary16 codec
    sample = x[:: n // 1000]
    oracle = np.array([struct.unpack("<e", struct.pack("<e", v))[0] for v in sample])
    codec_ok = np.array_equal(q[:: n // 1000], oracle)

    errors = {}
    for w in (2, 4, 8, 16):
        payloads = [rand_normal(Rng(7, w, k), 10**5) for k in range(w)]
        exact = all_reduce(payloads, "sum", CommPrecision.FULL64)
        errors[w] = rel_l2_error(all_reduce(payloads, "sum", CommPrecision.HALF16), exact)
    ok = worst_rt <= 2.0**-11 and codec_ok and max(errors.values()) <= 1e-2
    detail = (
        f"round-trip worst rel {worst_rt:.3e} (bound {2.0**-11:.3e}), codec matches struct: {codec_ok}, "
        f"all-reduce rel L2 " + ", ".join(f"W={w}: {e:.2e}" for w, e in errors.items())
    )
    report(7, "half-precision communication", ok, detail, 30)


@pytest.mark.slow
def test_criterion_08_recipe_end_to_end(report, tmp_path):
    cfg = Config()
    a = run(replace(cfg, out_dir=str(tmp_path / "a")))
    run(replace(cfg, out_dir=str(tmp_path / "b")))
    finite = all(math.isfinite(r[4]) for r in a.log.iterations)
    acc = a.log.epochs[-1][2]
    identical = all(
        (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        for f in ("train_log.csv", "val_log.csv")
    )
    ok = a.completed and finite and acc >= 0.95 and identical and len(a.log.epochs) == cfg.epochs
    detail = (
        f"W={cfg.workers} b_total={cfg.b_total} epochs={cfg.epochs} separation={cfg.dataset_separation}: "
        f"final val acc {acc:.4f}, all losses finite {finite}, reruns bit-identical {identical}"
    )
    report(8, "recipe end-to-end", ok, detail, 600)


@pytest.mark.slow
def test_criterion_09_warmup_value(report):
    # stress config: default desk setup without batch norm, eta_base inflated x8
    stress = Config(batchnorm=False)
    results = [warmup_comparison(stress, seed, eta_scale=8.0) for seed in range(5)]
    wins = sum(r.recipe_wins for r in results)
    detail = f"recipe wins {wins}/5: " + ", ".join(
        f"seed {r.seed} recipe {r.recipe_accuracy:.3f} vs sgd "
        + (f"{r.sgd_accuracy:.3f}" if r.sgd_finite else "non-finite")
        for r in results
    )
    report(9, "warm-up value", wins >= 4, detail, 1200)


def test_criterion_10_cost_model_shape(report):
    payload = 51_200_000
    failures = []
    base = CostModel()
    times = [ring_time(payload, w, base) for w in range(1, 2049)]
    if any(b < a for a, b in zip(times, times[1:])):
        failures.append("ring time decreases somewhere")
    if scaling_efficiency(1, base, payload) != 1.0:
        failures.append("efficiency(1) != 1")

    fitted = solve_for_efficiencies({1024: 0.70, 8: 0.875}, 0.1, payload)
    e1024 = scaling_efficiency(1024, fitted, payload)
    e8 = scaling_efficiency(8, fitted, payload)
    if abs(e1024 - 0.70) > 1e-9 or abs(e1024 / e8 - 0.80) > 1e-9:
        failures.append(f"efficiencies {e1024}, ratio {e1024 / e8}")

    truth = CostModel(alpha_latency=2e-5, beta_bandwidth=3e-10, gamma_compute=0.2)
    ws = [1, 2, 4, 8, 16, 64, 256, 1024]
    fit = fit_cost_model(ws, [iteration_time(payload, w, truth) for w in ws], payload).model
    rel = max(
        abs(getattr(fit, k) - getattr(truth, k)) / getattr(truth, k)
        for k in ("alpha_latency", "beta_bandwidth", "gamma_compute")
    )
    if rel > 1e-6:
        failures.append(f"fit recovery rel {rel:.2e}")
    fit_times = [ring_time(payload, w, fit) for w in ws]
    if any(b < a for a, b in zip(fit_times, fit_times[1:])):
        failures.append("fitted ring time decreases")
    detail = "; ".join(failures) or (
        f"solved alpha={fitted.alpha_latency:.3e}s beta={fitted.beta_bandwidth:.3e}s/B gives "
        f"eff(1024)={e1024:.3f}, eff(1024)/eff(8)={e1024 / e8:.3f}; fit recovery rel {rel:.1e}"
    )
    report(10, "cost-model shape", not failures, detail, 5)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
