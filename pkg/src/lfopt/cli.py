"""Command-line harness.

Subcommands: ``run`` trains one algorithm (or the whole stepsize grid) and
writes a metrics CSV, ``theory`` prints the convergence-constant calculators
as key=value lines, ``simulate`` writes the asynchronous-model validation
report.  Configuration is flags-only so every run is fully recorded in the
CSV ``# cmdline:`` comment.

Exit codes: 0 success, 1 usage, 2 I/O or data error, 3 all grid points
diverged.
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset, LibsvmError, max_abs_scale, parse_libsvm
from .models import GradientBuffer, ModelSpec, init_params, layout_for, lipschitz_bound
from .optimizers import (
    DivergenceError,
    RunConfig,
    RunMetrics,
    run_asysvrg,
    run_hogwild,
    run_sgd,
    run_svrg,
    worker_rng,
    _sgd_steps,
)
from .shared import ParameterBlock
from .sim import SimConfig, check_gap_bound, check_q_ratio, check_qhat_vs_q, simulate
from .theory import (
    AsyncModelParams,
    geometric_sum,
    hogwild_stepsize,
    solve_rho,
    theorem2_schedule,
    complexity_regime,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DIVERGED = 3

STEPSIZE_GRID = (0.1, 0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001)

METRICS_HEADER = "algo,threads,seed,eta,row,elapsed_units,wall_seconds,grad_evals,train_loss,grad_norm_sq"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: D401 - argparse hook
        raise UsageError(message)


def _g17(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class RunRecord:
    algo: str
    threads: int
    seed: int
    eta: float
    metrics: RunMetrics
    diverged: bool = False


def write_metrics_csv(path: str, records: list[RunRecord], cmdline: str) -> None:
    flat = []
    for rec in records:
        for row_idx, row in enumerate(rec.metrics.rows):
            flat.append((rec.algo, rec.threads, rec.eta, row_idx, rec.seed, row))
    flat.sort(key=lambda item: (item[0], item[1], item[2], item[3]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# cmdline: {cmdline}\n")
        fh.write(METRICS_HEADER + "\n")
        for algo, threads, eta, row_idx, seed, row in flat:
            fh.write(
                ",".join(
                    [
                        algo,
                        str(threads),
                        str(seed),
                        _g17(eta),
                        str(row_idx),
                        _g17(row.elapsed_units),
                        _g17(row.wall_seconds),
                        str(row.grad_evals),
                        _g17(row.train_loss),
                        _g17(row.grad_norm_sq),
                    ]
                )
                + "\n"
            )


def _load_dataset(args) -> Dataset:
    with open(args.data, "rb") as fh:
        data = parse_libsvm(fh, binary_relabel=args.binary_relabel)
    if args.scale_features:
        data = max_abs_scale(data)
    if args.loss in ("logreg", "svm") and data.num_classes != 2:
        data = _binarize(data, args.classes)
    return data


def _binarize(data: Dataset, classes: str | None) -> Dataset:
    """Binary view of multi-class data: class 0 vs rest by default, or the
    requested pair with the first class mapped to 1."""
    if classes is None:
        labels = (data.labels == 0).astype(np.int64)
        return Dataset(data.instances, labels, data.dim, 2)
    try:
        pos, neg = (int(tok) for tok in classes.split(","))
    except ValueError:
        raise UsageError("--classes expects two comma-separated class ids") from None
    keep = [i for i, l in enumerate(data.labels) if l in (pos, neg)]
    if not keep:
        raise UsageError(f"no instances with classes {pos} or {neg}")
    instances = [data.instances[i] for i in keep]
    labels = np.array([1 if data.labels[i] == pos else 0 for i in keep], dtype=np.int64)
    return Dataset(instances, labels, data.dim, 2)


def _build_spec(args, data: Dataset) -> ModelSpec:
    hidden = args.hidden if args.loss == "mlp" else None
    num_classes = data.num_classes if args.loss == "mlp" else 2
    return ModelSpec(args.loss, args.lam, data.dim, num_classes, hidden)


def _measure_baseline_unit(spec: ModelSpec, data: Dataset, eta: float, seed: int) -> float:
    """Median of 3 timings of one single-thread pass over the whole dataset."""
    times = []
    for _ in range(3):
        params = init_params(spec, seed)
        block = ParameterBlock.wrapping(params)
        rng = worker_rng(seed, 0)
        buf = GradientBuffer(layout_for(spec).total_dim)
        t0 = time.perf_counter()
        _sgd_steps(spec, data, block, eta, data.n, rng, buf)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cmd_run(args, cmdline: str) -> int:
    data = _load_dataset(args)
    spec = _build_spec(args, data)
    if args.eta is None and not args.eta_grid:
        raise UsageError("provide --eta or --eta-grid")
    etas = list(STEPSIZE_GRID) if args.eta_grid else [args.eta]
    if any(eta <= 0 for eta in etas):
        raise UsageError("eta must be > 0")

    baseline = _measure_baseline_unit(spec, data, etas[0], args.seed)
    print(f"baseline_unit_seconds={_g17(baseline)}")

    records: list[RunRecord] = []
    for eta in etas:
        config = RunConfig(
            algo=args.algo,
            eta=eta,
            threads=args.threads,
            epochs=args.epochs,
            outer_iters=args.outer,
            inner_iters=args.inner,
            seed=args.seed,
            eval_every=args.eval_every,
            time_unit=baseline,
        )
        diverged = False
        try:
            if args.algo == "sgd":
                params = init_params(spec, args.seed)
                metrics = run_sgd(spec, data, config, params)
            elif args.algo == "svrg":
                params = init_params(spec, args.seed)
                metrics = run_svrg(spec, data, config, params)
            elif args.algo == "hogwild":
                block = ParameterBlock(init_params(spec, args.seed))
                metrics = run_hogwild(spec, data, config, block)
            else:
                block = ParameterBlock(init_params(spec, args.seed))
                metrics = run_asysvrg(spec, data, config, block)
        except DivergenceError as exc:
            metrics = exc.metrics
            diverged = True
            print(f"run eta={_g17(eta)} status=diverged")
        records.append(RunRecord(args.algo, args.threads, args.seed, eta, metrics, diverged))

    write_metrics_csv(args.metrics, records, cmdline)

    finished = [r for r in records if not r.diverged and r.metrics.rows]
    if finished:
        best = min(finished, key=lambda r: r.metrics.final.train_loss)
        print(
            f"best eta={_g17(best.eta)} final_train_loss={_g17(best.metrics.final.train_loss)} "
            f"grad_evals={best.metrics.final.grad_evals}"
        )
        return EXIT_OK
    print("all runs diverged", file=sys.stderr)
    return EXIT_DIVERGED


def cmd_theory(args) -> int:
    if args.eta <= 0 or args.L <= 0:
        raise UsageError("eta and L must be > 0")
    if not 0 < args.alpha <= 1:
        raise UsageError("alpha must be in (0, 1]")
    if args.tau < 0:
        raise UsageError("tau must be >= 0")

    rho = solve_rho(args.eta, args.tau, args.L)
    if rho is None:
        print("rho_status=infeasible")
        return EXIT_OK
    print("rho_status=ok")
    print(f"rho={_g17(rho)}")

    if args.f0 is not None and args.V is not None and args.T_tilde is not None:
        params = AsyncModelParams(args.L, args.alpha, args.tau, args.eta, rho, args.V)
        eta_star, bound = hogwild_stepsize(args.f0, params, args.T_tilde)
        print(f"eta_star={_g17(eta_star)}")
        print(f"bound={_g17(bound)}")

    if args.beta is not None and args.M_tilde is not None:
        sched = theorem2_schedule(args.L, args.alpha, args.tau, rho, args.eta, args.beta, args.M_tilde)
        print(f"c0={_g17(sched.c[0])}")
        print(f"gamma={_g17(sched.gamma)}")
        print(f"M_tilde={sched.M_tilde}")
        print(f"schedule_valid={str(sched.gamma > 0).lower()}")

    if args.n is not None and args.mu is not None and args.v is not None:
        report = complexity_regime(args.n, args.mu, args.v, args.L, args.alpha, args.tau, rho)
        print(f"regime_eta={_g17(report.eta)}")
        print(f"regime_beta={_g17(report.beta)}")
        print(f"regime_M_tilde={report.M_tilde}")
        print(f"regime_gamma={_g17(report.gamma)}")
        print(f"regime_valid={str(report.valid).lower()}")
    return EXIT_OK


def cmd_simulate(args, cmdline: str) -> int:
    data = _load_dataset(args)
    spec = _build_spec(args, data)
    config = SimConfig(
        algo=args.algo,
        tau=args.tau,
        keep_prob=args.keep_prob,
        partial_prob=args.partial_prob,
        eta=args.eta,
        steps=args.steps,
        outer_iters=args.outer,
        inner_iters=args.inner,
        trials=args.trials,
        seed=args.seed,
    )
    trace = simulate(spec, data, config)

    rho = None
    if spec.kind in ("logreg", "svm"):
        L = lipschitz_bound(spec, data)
        rho = solve_rho(args.eta, args.tau, L) if args.eta > 0 else None

    if rho is None:
        gs = 0.0
        print("rho_status=infeasible")
    else:
        gs = geometric_sum(rho, config.tau)
        print("rho_status=ok")
        print(f"rho={_g17(rho)}")

    factor = 0.0 if rho is None else 4.0 * config.eta**2 * config.tau * rho * gs
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(f"# cmdline: {cmdline}\n")
        fh.write("step,q_hat,q_w,gap_sq,gap_bound,ratio,rho\n")
        for s in range(trace.steps):
            bound = factor * trace.mean_q_hat[s] if rho is not None else float("nan")
            ratio = (
                trace.mean_q_hat[s] / trace.mean_q_hat[s + 1]
                if s + 1 < trace.steps and trace.mean_q_hat[s + 1] > 0
                else float("nan")
            )
            fh.write(
                ",".join(
                    [
                        str(s),
                        _g17(trace.mean_q_hat[s]),
                        _g17(trace.mean_q_w[s]),
                        _g17(trace.mean_gap_sq[s]),
                        _g17(bound),
                        _g17(ratio),
                        _g17(rho) if rho is not None else "nan",
                    ]
                )
                + "\n"
            )

    print(f"b_mean={_g17(trace.b_mean)}")
    print(f"max_delay={trace.max_delay}")
    if rho is not None:
        ratio, holds = check_q_ratio(trace, rho)
        print(f"q_ratio_max={_g17(ratio)}")
        print(f"q_ratio_holds={str(holds).lower()}")
        violation, holds = check_gap_bound(trace, rho)
        print(f"gap_violation_max={_g17(violation)}")
        print(f"gap_bound_holds={str(holds).lower()}")
        if config.algo == "asysvrg":
            ratio, holds = check_qhat_vs_q(trace, rho)
            print(f"qhat_vs_q_max={_g17(ratio)}")
            print(f"qhat_vs_q_holds={str(holds).lower()}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="lfopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train and write a metrics CSV")
    run_p.add_argument("--algo", required=True, choices=("sgd", "hogwild", "svrg", "asysvrg"))
    run_p.add_argument("--loss", required=True, choices=("logreg", "svm", "mlp"))
    run_p.add_argument("--data", required=True, help="LIBSVM text file")
    run_p.add_argument("--lambda", dest="lam", type=float, default=1e-3, help="L2 coefficient")
    run_p.add_argument("--hidden", type=int, default=100, help="MLP hidden width")
    run_p.add_argument("--binary-relabel", action="store_true", help="file labels are {-1,+1}")
    run_p.add_argument("--scale-features", action="store_true", help="per-feature max-abs scaling")
    run_p.add_argument("--classes", default=None, help="binary class pair 'pos,neg' on multi-class data")
    run_p.add_argument("--eta", type=float, default=None)
    run_p.add_argument("--eta-grid", action="store_true", help="run the whole stepsize grid")
    run_p.add_argument("--threads", type=int, default=1)
    run_p.add_argument("--epochs", type=int, default=1)
    run_p.add_argument("--outer", type=int, default=1)
    run_p.add_argument("--inner", type=int, default=None, help="inner steps; default ceil(n/threads)")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--eval-every", type=int, default=1, help="metrics cadence in effective passes")
    run_p.add_argument("--metrics", required=True, help="output CSV path")
    run_p.add_argument(
        "--pin-threads",
        action="store_true",
        help="request CPU pinning; placement is left to the OS scheduler on this build",
    )

    th_p = sub.add_parser("theory", help="print convergence-constant calculators")
    th_p.add_argument("--L", type=float, required=True)
    th_p.add_argument("--alpha", type=float, default=1.0)
    th_p.add_argument("--tau", type=int, default=0)
    th_p.add_argument("--eta", type=float, required=True)
    th_p.add_argument("--f0", type=float, default=None)
    th_p.add_argument("--V", type=float, default=None)
    th_p.add_argument("--T-tilde", dest="T_tilde", type=int, default=None)
    th_p.add_argument("--beta", type=float, default=None)
    th_p.add_argument("--M-tilde", dest="M_tilde", type=int, default=None)
    th_p.add_argument("--n", type=int, default=None)
    th_p.add_argument("--mu", type=float, default=None)
    th_p.add_argument("--v", type=float, default=None)

    sim_p = sub.add_parser("simulate", help="validate the asynchronous-model bounds")
    sim_p.add_argument("--loss", required=True, choices=("logreg", "svm", "mlp"))
    sim_p.add_argument("--data", required=True)
    sim_p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    sim_p.add_argument("--hidden", type=int, default=16)
    sim_p.add_argument("--binary-relabel", action="store_true")
    sim_p.add_argument("--scale-features", action="store_true")
    sim_p.add_argument("--classes", default=None)
    sim_p.add_argument("--algo", choices=("hogwild", "asysvrg"), default="hogwild")
    sim_p.add_argument("--tau", type=int, default=0)
    sim_p.add_argument("--keep-prob", type=float, default=1.0)
    sim_p.add_argument("--partial-prob", type=float, default=1.0)
    sim_p.add_argument("--eta", type=float, required=True)
    sim_p.add_argument("--steps", type=int, default=100)
    sim_p.add_argument("--outer", type=int, default=1)
    sim_p.add_argument("--inner", type=int, default=100)
    sim_p.add_argument("--trials", type=int, default=100)
    sim_p.add_argument("--seed", type=int, default=0)
    sim_p.add_argument("--report", required=True, help="output CSV path")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cmdline = "lfopt " + " ".join(argv)
        if args.command == "run":
            return cmd_run(args, cmdline)
        if args.command == "theory":
            return cmd_theory(args)
        return cmd_simulate(args, cmdline)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # Bad flag combinations and malformed data files.
        if isinstance(exc, LibsvmError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
