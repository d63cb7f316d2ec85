"""Lock-free multi-threaded finite-sum optimization with convergence-theory
calculators and a deterministic asynchronous-update simulator."""

from .data import Dataset, SparseVector, dot, l2_norm_sq, max_abs_scale, parse_libsvm, serialize_libsvm
from .models import (
    GradientBuffer,
    ModelSpec,
    ParameterLayout,
    full_loss_and_grad,
    grad_bound,
    grad_single,
    init_params,
    layout_for,
    lipschitz_bound,
    loss_single,
)
from .optimizers import (
    DivergenceError,
    RunConfig,
    RunMetrics,
    run_asysvrg,
    run_hogwild,
    run_sgd,
    run_svrg,
    variance_probe,
    worker_rng,
)
from .shared import ParameterBlock, read_snapshot, store_all, write_saxpy
from .sim import SimConfig, SimTrace, check_gap_bound, check_q_ratio, check_qhat_vs_q, simulate
from .theory import (
    AsyncModelParams,
    Theorem2Schedule,
    c0_closed_form,
    complexity_regime,
    hogwild_stepsize,
    lemma1_check,
    solve_rho,
    theorem2_schedule,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
