"""Deterministic single-threaded simulator of the asynchronous update model.

The write sequence applies per-coordinate 0/1 overwrite masks drawn with
probability keep_prob, reads are reconstructed from a delayed anchor plus
partially visible pending updates (per-coordinate Bernoulli(partial_prob)
masks), and read staleness is drawn uniformly in {0..tau} with a
non-decreasing anchor.  The per-step second-moment statistics q are computed
exactly as finite-sum means, which is what the ratio and gap checks consume.

Index draws come from the same (seed, worker 0) stream the training loops
use, trial r shifting the seed by r, so a tau=0 / keep_prob=1 simulation is
bit-identical to the corresponding sequential run under matching seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .models import (
    GradientBuffer,
    ModelSpec,
    full_loss_and_grad,
    grad_single,
    init_params,
    layout_for,
    sigmoid,
)
from .optimizers import worker_rng
from .theory import geometric_sum

_MASK_STREAM_KEY = 0xB5

BOUND_SLACK = 1.05


@dataclass
class SimConfig:
    algo: str = "hogwild"
    tau: int = 0
    keep_prob: float = 1.0
    partial_prob: float = 1.0
    eta: float = 0.01
    steps: int = 100
    outer_iters: int = 1
    inner_iters: int = 100
    trials: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.algo not in ("hogwild", "asysvrg"):
            raise ValueError(f"unknown sim algo {self.algo!r}")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not 0 < self.keep_prob <= 1:
            raise ValueError("keep_prob must be in (0, 1]")
        if not 0 <= self.partial_prob <= 1:
            raise ValueError("partial_prob must be in [0, 1]")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.steps < 1 or self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("step counts must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @property
    def total_steps(self) -> int:
        if self.algo == "hogwild":
            return self.steps
        return self.outer_iters * self.inner_iters


@dataclass
class SimTrace:
    """Per-step statistics averaged over trials, plus the trial-0 trajectory."""

    config: SimConfig
    mean_q_hat: np.ndarray
    mean_q_w: np.ndarray
    mean_gap_sq: np.ndarray
    mean_vhat_sq: np.ndarray | None
    segment_starts: np.ndarray
    b_mean: float
    b_draws: int
    max_delay: int
    w_trace0: np.ndarray
    w_hat_trace0: np.ndarray

    @property
    def steps(self) -> int:
        return self.mean_q_hat.shape[0]


def _binary_coefs(spec: ModelSpec, data: Dataset, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-instance scalar gradient coefficients c_i and the matvec X x."""
    Xx = data.dense_matrix @ x
    y = data.signed_labels
    margins = y * Xx
    if spec.kind == "logreg":
        coefs = -sigmoid(-margins) * y
    else:
        coefs = -y * ((1.0 - margins) > 0.0)
    return coefs, Xx


def q_plain(spec: ModelSpec, data: Dataset, x: np.ndarray) -> float:
    """Exact mean_i ||grad_i(x)||^2 over the finite sum."""
    if spec.kind in ("logreg", "svm"):
        coefs, Xx = _binary_coefs(spec, data, x)
        lam = spec.lam
        q = float(np.mean(coefs * coefs * data.row_norms_sq))
        if lam > 0.0:
            q += 2.0 * lam * float(np.mean(coefs * Xx)) + lam * lam * float(x @ x)
        return q
    buf = GradientBuffer(layout_for(spec).total_dim)
    acc = 0.0
    for i in range(data.n):
        grad_single(spec, x, data.instances[i], int(data.labels[i]), buf)
        acc += float(buf.values @ buf.values)
    return acc / data.n


def q_reduced(
    spec: ModelSpec,
    data: Dataset,
    x: np.ndarray,
    anchor: np.ndarray,
    mu: np.ndarray,
    anchor_coefs: np.ndarray | None = None,
) -> float:
    """Exact mean_i ||grad_i(x) - grad_i(anchor) + mu||^2.

    ``anchor_coefs`` lets callers amortize the anchor pass across many x.
    """
    if spec.kind in ("logreg", "svm"):
        cx, _ = _binary_coefs(spec, data, x)
        if anchor_coefs is None:
            anchor_coefs, _ = _binary_coefs(spec, data, anchor)
        dc = cx - anchor_coefs
        h = spec.lam * (x - anchor) + mu
        Xh = data.dense_matrix @ h
        return (
            float(np.mean(dc * dc * data.row_norms_sq))
            + 2.0 * float(np.mean(dc * Xh))
            + float(h @ h)
        )
    dim = layout_for(spec).total_dim
    bx, ba = GradientBuffer(dim), GradientBuffer(dim)
    acc = 0.0
    for i in range(data.n):
        grad_single(spec, x, data.instances[i], int(data.labels[i]), bx)
        grad_single(spec, anchor, data.instances[i], int(data.labels[i]), ba)
        v = bx.values - ba.values + mu
        acc += float(v @ v)
    return acc / data.n


class _Accumulator:
    def __init__(self, steps: int, want_vhat: bool) -> None:
        self.q_hat = np.zeros(steps)
        self.q_w = np.zeros(steps)
        self.gap_sq = np.zeros(steps)
        self.vhat_sq = np.zeros(steps) if want_vhat else None
        self.b_sum = 0.0
        self.b_draws = 0
        self.max_delay = 0


def _sim_segment(
    spec: ModelSpec,
    data: Dataset,
    config: SimConfig,
    w_start: np.ndarray,
    steps: int,
    base_step: int,
    index_rng: np.random.Generator,
    mask_rng: np.random.Generator,
    acc: _Accumulator,
    anchor: np.ndarray | None,
    mu: np.ndarray | None,
    trace_w: np.ndarray | None,
    trace_w_hat: np.ndarray | None,
) -> np.ndarray:
    """One delay segment (whole run for hogwild, one outer loop otherwise).

    Per step draws, in order: staleness (if tau > 0), one visibility mask per
    pending update, the sampled index (separate stream), the overwrite mask.
    """
    n = data.n
    dim = w_start.shape[0]
    tau = config.tau
    eta = config.eta
    buf = GradientBuffer(dim)
    buf_anchor = GradientBuffer(dim)
    history = {0: w_start}
    pending: dict[int, np.ndarray] = {}
    a_prev = 0
    anchor_coefs = None
    if anchor is not None and spec.kind in ("logreg", "svm"):
        anchor_coefs, _ = _binary_coefs(spec, data, anchor)

    for m in range(steps):
        if tau > 0:
            stale = int(mask_rng.integers(0, tau + 1))
        else:
            stale = 0
        a = max(m - stale, a_prev)
        for j in range(a_prev, a):
            history.pop(j, None)
            pending.pop(j, None)
        a_prev = a
        acc.max_delay = max(acc.max_delay, m - a)

        w_cur = history[m]
        w_hat = history[a].copy()
        for j in range(a, m):
            visible = mask_rng.random(dim) < config.partial_prob
            w_hat -= visible * pending[j]

        s = base_step + m
        if anchor is None:
            acc.q_hat[s] += q_plain(spec, data, w_hat)
            acc.q_w[s] += q_plain(spec, data, w_cur)
        else:
            acc.q_hat[s] += q_reduced(spec, data, w_hat, anchor, mu, anchor_coefs)
            acc.q_w[s] += q_reduced(spec, data, w_cur, anchor, mu, anchor_coefs)
        diff = w_cur - w_hat
        acc.gap_sq[s] += float(diff @ diff)
        if trace_w_hat is not None:
            trace_w_hat[s] = w_hat

        i = int(index_rng.integers(0, n))
        grad_single(spec, w_hat, data.instances[i], int(data.labels[i]), buf)
        if anchor is None:
            update = buf.values.copy()
        else:
            grad_single(spec, anchor, data.instances[i], int(data.labels[i]), buf_anchor)
            update = buf.values - buf_anchor.values + mu
            if acc.vhat_sq is not None:
                acc.vhat_sq[s] += float(update @ update)
        raw = eta * update

        keep = mask_rng.random(dim) < config.keep_prob
        acc.b_sum += float(keep.sum())
        acc.b_draws += dim
        w_next = w_cur - keep * raw
        history[m + 1] = w_next
        pending[m] = raw
        if trace_w is not None:
            trace_w[s + 1] = w_next
    return history[steps]


def simulate(spec: ModelSpec, data: Dataset, config: SimConfig) -> SimTrace:
    """Run the masked-update chain for config.trials independent seeds and
    average the per-step statistics."""
    dim = layout_for(spec).total_dim
    total = config.total_steps
    acc = _Accumulator(total, want_vhat=config.algo == "asysvrg")
    w_trace0 = np.zeros((total + 1, dim))
    w_hat_trace0 = np.zeros((total, dim))
    if config.algo == "hogwild":
        segment_starts = np.array([0], dtype=np.int64)
    else:
        segment_starts = np.arange(0, total, config.inner_iters, dtype=np.int64)

    for trial in range(config.trials):
        index_rng = worker_rng(config.seed + trial, 0)
        mask_rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(config.seed + trial, spawn_key=(_MASK_STREAM_KEY,)))
        )
        w = init_params(spec, config.seed)
        trace_w = w_trace0 if trial == 0 else None
        trace_w_hat = w_hat_trace0 if trial == 0 else None
        if trace_w is not None:
            trace_w[0] = w

        if config.algo == "hogwild":
            _sim_segment(
                spec, data, config, w, config.steps, 0, index_rng, mask_rng, acc,
                None, None, trace_w, trace_w_hat,
            )
        else:
            for outer in range(config.outer_iters):
                anchor = w.copy()
                _, mu_buf = full_loss_and_grad(spec, anchor, data)
                w = _sim_segment(
                    spec, data, config, w, config.inner_iters,
                    outer * config.inner_iters, index_rng, mask_rng, acc,
                    anchor, mu_buf.values, trace_w, trace_w_hat,
                )

    t = config.trials
    return SimTrace(
        config=config,
        mean_q_hat=acc.q_hat / t,
        mean_q_w=acc.q_w / t,
        mean_gap_sq=acc.gap_sq / t,
        mean_vhat_sq=None if acc.vhat_sq is None else acc.vhat_sq / t,
        segment_starts=segment_starts,
        b_mean=acc.b_sum / acc.b_draws if acc.b_draws else float("nan"),
        b_draws=acc.b_draws,
        max_delay=acc.max_delay,
        w_trace0=w_trace0,
        w_hat_trace0=w_hat_trace0,
    )


def _segment_bounds(trace: SimTrace) -> list[tuple[int, int]]:
    starts = list(trace.segment_starts) + [trace.steps]
    return [(int(starts[k]), int(starts[k + 1])) for k in range(len(starts) - 1)]


def _safe_ratio(num: float, den: float) -> float:
    if den > 0.0:
        return num / den
    return 1.0 if num == 0.0 else float("inf")


def check_q_ratio(trace: SimTrace, rho: float) -> tuple[float, bool]:
    """Largest consecutive ratio E q(read_t) / E q(read_{t+1}) within delay
    segments; holds when it stays below rho plus Monte-Carlo slack."""
    if trace.steps < 2:
        raise ValueError("need at least 2 steps")
    max_ratio = 0.0
    for s0, s1 in _segment_bounds(trace):
        for s in range(s0, s1 - 1):
            max_ratio = max(max_ratio, _safe_ratio(trace.mean_q_hat[s], trace.mean_q_hat[s + 1]))
    return max_ratio, max_ratio <= rho * BOUND_SLACK


def check_gap_bound(trace: SimTrace, rho: float) -> tuple[float, bool]:
    """Largest violation ratio of the read/write gap bound
    E||w_t - read_t||^2 <= 4 eta^2 tau rho (rho^tau - 1)/(rho - 1) E q(read_t);
    variance-reduced traces also check the rho^2 form against E q(w_t)."""
    if trace.steps < 1:
        raise ValueError("empty trace")
    cfg = trace.config
    gs = geometric_sum(rho, cfg.tau)
    factor_hat = 4.0 * cfg.eta * cfg.eta * cfg.tau * rho * gs
    factor_w = factor_hat * rho
    max_violation = 0.0
    for s in range(trace.steps):
        gap = trace.mean_gap_sq[s]
        max_violation = max(max_violation, _safe_ratio(gap, factor_hat * trace.mean_q_hat[s]))
        if cfg.algo == "asysvrg":
            max_violation = max(max_violation, _safe_ratio(gap, factor_w * trace.mean_q_w[s]))
    return max_violation, max_violation <= BOUND_SLACK


def check_qhat_vs_q(trace: SimTrace, rho: float) -> tuple[float, bool]:
    """Largest ratio E q(read) / E q(write) for variance-reduced traces."""
    if trace.config.algo != "asysvrg":
        raise ValueError("read-vs-write q check applies to asysvrg traces only")
    max_ratio = 0.0
    for s in range(trace.steps):
        max_ratio = max(max_ratio, _safe_ratio(trace.mean_q_hat[s], trace.mean_q_w[s]))
    return max_ratio, max_ratio <= rho * BOUND_SLACK
