"""Training loops: sequential SGD / SVRG baselines and their lock-free
multi-threaded counterparts sharing one ParameterBlock.

Workers sample indices from independent counter-based generators derived from
(run seed, worker id), so the sampled index streams are reproducible even
when the shared-memory races are not.  At one thread the lock-free loops are
bit-identical to the sequential baselines (quiescent single-writer
semantics); the tests rely on that.

Metric rows are taken at pass boundaries while no worker is writing, so the
recorded loss and gradient norm are exact (quiescent) values; mid-pass the
workers' own reads stay lock-free and possibly inconsistent.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .models import (
    GradientBuffer,
    ModelSpec,
    NonFiniteParamsError,
    full_loss_and_grad,
    grad_single,
    layout_for,
)
from .shared import ParameterBlock, read_snapshot, write_saxpy

ALGOS = ("sgd", "hogwild", "svrg", "asysvrg")

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """Training loss became non-finite or exceeded the divergence limit."""

    def __init__(self, message: str, metrics: "RunMetrics") -> None:
        super().__init__(message)
        self.metrics = metrics


@dataclass
class RunConfig:
    algo: str
    eta: float
    threads: int = 1
    epochs: int = 1
    outer_iters: int = 1
    inner_iters: int | None = None
    seed: int = 0
    eval_every: int = 1
    time_unit: float | None = None

    def __post_init__(self) -> None:
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}")
        # eta == 0 is allowed (stationary run); negative steps are not.
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.epochs < 1 or self.outer_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.inner_iters is not None and self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


@dataclass
class MetricsRow:
    elapsed_units: float
    wall_seconds: float
    grad_evals: int
    train_loss: float
    grad_norm_sq: float


@dataclass
class RunMetrics:
    rows: list[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        if self.rows:
            if row.grad_evals <= self.rows[-1].grad_evals:
                raise ValueError("grad_evals must be strictly increasing")
            if row.elapsed_units < self.rows[-1].elapsed_units:
                raise ValueError("elapsed_units must be non-decreasing")
        self.rows.append(row)

    @property
    def final(self) -> MetricsRow:
        return self.rows[-1]


def worker_rng(seed: int, worker_id: int) -> np.random.Generator:
    """Counter-based generator for one worker, derived from (seed, worker id)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(worker_id,))))


class _Recorder:
    """Appends quiescent metric rows and aborts on divergence."""

    def __init__(self, spec: ModelSpec, data: Dataset, config: RunConfig, block: ParameterBlock) -> None:
        self.spec = spec
        self.data = data
        self.config = config
        self.block = block
        self.metrics = RunMetrics()
        self._stride = config.eval_every * data.n
        self._t0 = time.perf_counter()

    def record(self, grad_evals: int) -> None:
        snapshot = read_snapshot(self.block)
        loss, gbuf = full_loss_and_grad(self.spec, snapshot, self.data)
        wall = time.perf_counter() - self._t0
        units = wall / self.config.time_unit if self.config.time_unit else wall
        self.metrics.append(
            MetricsRow(units, wall, grad_evals, loss, float(gbuf.values @ gbuf.values))
        )
        if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise DivergenceError(f"training loss diverged ({loss})", self.metrics)

    def record_if_due(self, grad_evals: int, last_of_run: bool = False) -> None:
        recorded = self.metrics.rows[-1].grad_evals if self.metrics.rows else -1
        if grad_evals <= recorded:
            return
        if last_of_run or grad_evals // self._stride > recorded // self._stride:
            self.record(grad_evals)


def _sgd_steps(
    spec: ModelSpec,
    data: Dataset,
    block: ParameterBlock,
    eta: float,
    steps: int,
    rng: np.random.Generator,
    buf: GradientBuffer,
) -> None:
    """Lock-free inner loop: snapshot, sample, gradient, unsynchronized write."""
    instances = data.instances
    labels = data.labels
    n = data.n
    for _ in range(steps):
        w_hat = read_snapshot(block)
        i = int(rng.integers(0, n))
        grad_single(spec, w_hat, instances[i], int(labels[i]), buf)
        write_saxpy(block, eta, buf)


def _svrg_steps(
    spec: ModelSpec,
    data: Dataset,
    block: ParameterBlock,
    anchor: np.ndarray,
    mu: np.ndarray,
    eta: float,
    steps: int,
    rng: np.random.Generator,
    buf_cur: GradientBuffer,
    buf_anchor: GradientBuffer,
    buf_update: GradientBuffer,
) -> None:
    """Lock-free variance-reduced inner loop against a fixed anchor."""
    instances = data.instances
    labels = data.labels
    n = data.n
    for _ in range(steps):
        u_hat = read_snapshot(block)
        i = int(rng.integers(0, n))
        grad_single(spec, u_hat, instances[i], int(labels[i]), buf_cur)
        grad_single(spec, anchor, instances[i], int(labels[i]), buf_anchor)
        np.subtract(buf_cur.values, buf_anchor.values, out=buf_update.values)
        buf_update.values += mu
        buf_update.support = None
        write_saxpy(block, eta, buf_update)


def _run_threads(workers: list, recorder: _Recorder) -> None:
    errors: list[BaseException] = []

    def guarded(fn):
        def run():
            try:
                fn()
            except BaseException as exc:  # noqa: BLE001 - re-raised after join
                errors.append(exc)

        return run

    threads = [threading.Thread(target=guarded(fn)) for fn in workers]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        err = errors[0]
        if isinstance(err, NonFiniteParamsError):
            raise DivergenceError(f"parameters diverged: {err}", recorder.metrics) from err
        raise err


def _check_block(spec: ModelSpec, block: ParameterBlock) -> None:
    if len(block) != layout_for(spec).total_dim:
        raise ValueError("parameter block length does not match model layout")


def _run_pass_style(
    spec: ModelSpec, data: Dataset, config: RunConfig, block: ParameterBlock, parallel: bool
) -> RunMetrics:
    _check_block(spec, block)
    n = data.n
    p = config.threads
    iters = math.ceil(n / p)
    dim = layout_for(spec).total_dim
    rngs = [worker_rng(config.seed, w) for w in range(p)]
    bufs = [GradientBuffer(dim) for _ in range(p)]

    rec = _Recorder(spec, data, config, block)
    rec.record(0)
    evals = 0
    for epoch in range(1, config.epochs + 1):
        if parallel:
            workers = [
                (lambda w=w: _sgd_steps(spec, data, block, config.eta, iters, rngs[w], bufs[w]))
                for w in range(p)
            ]
            _run_threads(workers, rec)
        else:
            try:
                _sgd_steps(spec, data, block, config.eta, iters, rngs[0], bufs[0])
            except NonFiniteParamsError as exc:
                raise DivergenceError(f"parameters diverged: {exc}", rec.metrics) from exc
        evals += p * iters
        rec.record_if_due(evals, last_of_run=(epoch == config.epochs))
    return rec.metrics


def run_sgd(spec: ModelSpec, data: Dataset, config: RunConfig, params: np.ndarray) -> RunMetrics:
    """Sequential SGD; mutates ``params`` in place (initial value in, final out)."""
    if config.threads != 1:
        raise ValueError("run_sgd requires threads == 1")
    block = ParameterBlock.wrapping(params)
    return _run_pass_style(spec, data, config, block, parallel=False)


def run_hogwild(spec: ModelSpec, data: Dataset, config: RunConfig, block: ParameterBlock) -> RunMetrics:
    """Lock-free parallel SGD: p workers share ``block`` with no locks.

    Each pass runs ceil(n/p) iterations per worker; workers are joined at
    pass boundaries only so the metric rows are quiescent measurements.
    """
    return _run_pass_style(spec, data, config, block, parallel=True)


def _run_svrg_style(
    spec: ModelSpec, data: Dataset, config: RunConfig, block: ParameterBlock, parallel: bool
) -> RunMetrics:
    _check_block(spec, block)
    n = data.n
    p = config.threads
    m_iters = config.inner_iters if config.inner_iters is not None else math.ceil(n / p)
    dim = layout_for(spec).total_dim
    rngs = [worker_rng(config.seed, w) for w in range(p)]
    bufs = [(GradientBuffer(dim), GradientBuffer(dim), GradientBuffer(dim)) for _ in range(p)]

    rec = _Recorder(spec, data, config, block)
    rec.record(0)
    evals = 0
    for outer in range(1, config.outer_iters + 1):
        anchor = read_snapshot(block)
        _, mu_buf = full_loss_and_grad(spec, anchor, data, parts=p)
        mu = mu_buf.values
        if parallel:
            workers = [
                (
                    lambda w=w: _svrg_steps(
                        spec, data, block, anchor, mu, config.eta, m_iters, rngs[w], *bufs[w]
                    )
                )
                for w in range(p)
            ]
            _run_threads(workers, rec)
        else:
            try:
                _svrg_steps(spec, data, block, anchor, mu, config.eta, m_iters, rngs[0], *bufs[0])
            except NonFiniteParamsError as exc:
                raise DivergenceError(f"parameters diverged: {exc}", rec.metrics) from exc
        evals += n + p * m_iters
        rec.record_if_due(evals, last_of_run=(outer == config.outer_iters))
    return rec.metrics


def run_svrg(spec: ModelSpec, data: Dataset, config: RunConfig, params: np.ndarray) -> RunMetrics:
    """Sequential SVRG reference loop; mutates ``params`` in place."""
    if config.threads != 1:
        raise ValueError("run_svrg requires threads == 1")
    block = ParameterBlock.wrapping(params)
    return _run_svrg_style(spec, data, config, block, parallel=False)


def run_asysvrg(spec: ModelSpec, data: Dataset, config: RunConfig, block: ParameterBlock) -> RunMetrics:
    """Lock-free parallel SVRG.

    Per outer iteration: the full gradient at the current (quiescent) value is
    computed in parallel over a static partition with a fixed combine order,
    then p workers run their inner loops lock-free and are joined at a
    barrier, so the outer capture is exact.
    """
    return _run_svrg_style(spec, data, config, block, parallel=True)


def variance_probe(
    spec: ModelSpec,
    data: Dataset,
    params_anchor: np.ndarray,
    params_query: np.ndarray,
    samples: int,
    seed: int,
) -> tuple[float, float]:
    """Monte-Carlo second moments of the variance-reduced and plain
    stochastic gradients at the query point, anchored at params_anchor."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if params_anchor.shape != params_query.shape:
        raise ValueError("anchor and query dimensions differ")
    _, mu_buf = full_loss_and_grad(spec, params_anchor, data)
    mu = mu_buf.values
    dim = layout_for(spec).total_dim
    buf_q = GradientBuffer(dim)
    buf_a = GradientBuffer(dim)
    rng = np.random.default_rng(seed)
    acc_vr = 0.0
    acc_plain = 0.0
    n = data.n
    for _ in range(samples):
        i = int(rng.integers(0, n))
        grad_single(spec, params_query, data.instances[i], int(data.labels[i]), buf_q)
        grad_single(spec, params_anchor, data.instances[i], int(data.labels[i]), buf_a)
        v = buf_q.values - buf_a.values + mu
        acc_vr += float(v @ v)
        acc_plain += float(buf_q.values @ buf_q.values)
    return acc_vr / samples, acc_plain / samples
