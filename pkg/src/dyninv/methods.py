"""The six iteration drivers, their inner solvers, and the run loop.

Method tags: aLW / aLWK / aIRGNM operate on the joint (state, parameter)
unknown; rLW / rLWK / rIRGNM operate on the parameter alone.  Both IRGNM
variants solve the regularized normal equations by conjugate gradients with
matrix-free operator applications.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .aao import AaoPoint, AllAtOnceOperator, ResidualTriple, data_triple, zero_point
from .errors import InnerSolveError, SolverError, ValidationError
from .grids import KaczmarzPartition, TimeGrid
from .problem import ProblemDefinition
from .reduced import ReducedOperator
from .spaces import (
    DiscreteGelfandTriple,
    Trajectory,
    inner_observation,
    inner_state,
    norm_l2_v,
    zero_trajectory,
)

AAO_TAGS = ("aLW", "aLWK", "aIRGNM")
REDUCED_TAGS = ("rLW", "rLWK", "rIRGNM")
METHOD_TAGS = AAO_TAGS + REDUCED_TAGS


@dataclass
class MethodConfig:
    """Knobs shared by all six methods; unused ones are ignored per method."""

    tag: str = "rLW"
    mu: float = 1.0
    stepsize: str = "fixed"  # or "norm": mu = 0.95 / ||derivative||^2 at the start
    alpha0: float = 1.0
    q: float = 2.0 / 3.0
    tau_disc: float = 2.5
    k_max: int = 100
    m: int = 1
    cg_tol: float = 1e-8
    cg_max: int = 500
    k_apriori: int | None = None
    prior_theta: np.ndarray | None = None
    prior_state: np.ndarray | None = None

    def __post_init__(self):
        if self.tag not in METHOD_TAGS:
            raise ValidationError(f"unknown method tag {self.tag!r}")
        if not 0.0 < self.q < 1.0:
            raise ValidationError(f"q must lie in (0,1), got {self.q}")
        if not self.tau_disc > 1.0:
            raise ValidationError(f"tau_disc must exceed 1, got {self.tau_disc}")
        if not self.mu > 0.0:
            raise ValidationError(f"mu must be positive, got {self.mu}")
        if self.stepsize not in ("fixed", "norm"):
            raise ValidationError(f"unknown stepsize policy {self.stepsize!r}")
        if self.m < 1 or self.k_max < 0:
            raise ValidationError("m must be >= 1 and k_max >= 0")


@dataclass
class IterationRow:
    k: int
    res_total: float
    res_w: float
    res_h: float
    res_y: float
    err_theta: float
    err_u: float
    step_ms: float = 0.0


@dataclass
class RunRecord:
    """Per-iteration history of a run plus the final iterate."""

    method: str
    rows: list = field(default_factory=list)
    k_star: int = 0
    stop_reason: str = "k_max"
    metadata: dict = field(default_factory=dict)
    theta_final: np.ndarray | None = None
    state_final: Trajectory | None = None

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])


@dataclass
class ProblemInstance:
    """Discretisation plus the two operator views of one inverse problem."""

    problem: ProblemDefinition
    triple: DiscreteGelfandTriple
    grid: TimeGrid
    partition: KaczmarzPartition | None
    aao: AllAtOnceOperator
    reduced: ReducedOperator


# -- generic inner solvers -------------------------------------------------------


def conjugate_gradient(apply_op, rhs, inner, tol=1e-8, max_iter=500):
    """CG for an operator that is SPD with respect to the given inner product.

    Returns (solution, iterations).  Raises InnerSolveError when the cap is
    reached before the relative residual drops below tol.
    """
    x = np.zeros_like(rhs)
    r = rhs.copy()
    rho = inner(r, r)
    rhs_norm = np.sqrt(rho)
    if rhs_norm == 0.0:
        return x, 0
    d = r.copy()
    for it in range(1, max_iter + 1):
        ad = apply_op(d)
        alpha = rho / inner(d, ad)
        x = x + alpha * d
        r = r - alpha * ad
        rho_new = inner(r, r)
        if np.sqrt(rho_new) <= tol * rhs_norm:
            return x, it
        d = r + (rho_new / rho) * d
        rho = rho_new
    raise InnerSolveError(
        f"conjugate gradients did not reach tol {tol} within {max_iter} iterations",
        achieved=float(np.sqrt(rho) / rhs_norm),
    )


def estimate_operator_norm(forward, adjoint, inner, start, trials=50, stall_tol=1e-6):
    """Power iteration on adjoint∘forward; returns the operator-norm estimate.

    Stops after the requested trials or upon relative stagnation of the
    dominant-eigenvalue estimate.
    """
    y = np.asarray(start, dtype=float).copy()
    ny = np.sqrt(inner(y, y))
    if ny == 0.0:
        raise ValidationError("start vector must be nonzero")
    y = y / ny
    lam = 0.0
    for _ in range(max(trials, 1)):
        z = adjoint(forward(y))
        lam_new = inner(y, z)
        nz = np.sqrt(inner(z, z))
        if nz == 0.0:
            return 0.0
        y = z / nz
        if lam > 0.0 and abs(lam_new - lam) <= stall_tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


# -- flattening helpers for the joint unknown -------------------------------------


def _flatten(du: np.ndarray, dtheta: np.ndarray) -> np.ndarray:
    return np.concatenate([du.ravel(), dtheta])


def _split(flat, grid, width, n_theta):
    cut = grid.node_count * width
    return flat[:cut].reshape(grid.node_count, width), flat[cut:]


# -- single steps ------------------------------------------------------------------


def step_aao_landweber(op: AllAtOnceOperator, point, data, mu, resid=None):
    """One joint Landweber update; reuses a precomputed residual if given."""
    if resid is None:
        resid = op.residual(point, data)
    dstate, dtheta = op.adjoint(point, resid)
    new_state = Trajectory(op.grid, point.state.values - mu * dstate.values, "state")
    return AaoPoint(new_state, point.theta - mu * dtheta)


def step_aao_landweber_kaczmarz(op, point, data, mu, k, resid=None):
    """One cyclic slab update; the slab is k mod m."""
    part = op._require_partition()
    j = part.slab_index(k)
    if resid is None:
        slab = op.slab_residual(point, j, data)
    else:
        slab = op._mask_triple(resid, part.weighted_nodes(j), include_initial=(j == 0))
    dstate, dtheta = op.slab_adjoint(point, j, slab)
    new_state = Trajectory(op.grid, point.state.values - mu * dstate.values, "state")
    return AaoPoint(new_state, point.theta - mu * dtheta)


def step_aao_irgnm(op, point, data, alpha, prior, cg_tol=1e-8, cg_max=500, resid=None):
    """Regularized Gauss-Newton step via CG on the joint normal equations."""
    grid, width = op.grid, point.state.width
    n_theta = point.theta.size

    def pair_inner(a, b):
        ua, ta = _split(a, grid, width, n_theta)
        ub, tb = _split(b, grid, width, n_theta)
        return inner_state(
            op.triple, Trajectory(grid, ua, "state"), Trajectory(grid, ub, "state")
        ) + op.problem.inner_theta(ta, tb)

    def normal_apply(flat):
        du, dtheta = _split(flat, grid, width, n_theta)
        out = op.derivative(point, Trajectory(grid, du, "state"), dtheta)
        astate, atheta = op.adjoint(point, out)
        return _flatten(astate.values, atheta) + alpha * flat

    if resid is None:
        resid = op.residual(point, data)
    shift_state = Trajectory(grid, point.state.values - prior.state.values, "state")
    shift_theta = point.theta - prior.theta
    lin = op.derivative(point, shift_state, shift_theta)
    rhs_triple = ResidualTriple(
        Trajectory(grid, lin.model.values - resid.model.values, "dual_load"),
        lin.initial - resid.initial,
        Trajectory(grid, lin.observation.values - resid.observation.values, "observation"),
    )
    bstate, btheta = op.adjoint(point, rhs_triple)
    rhs = _flatten(bstate.values, btheta)
    sol, _ = conjugate_gradient(normal_apply, rhs, pair_inner, tol=cg_tol, max_iter=cg_max)
    du, dtheta = _split(sol, grid, width, n_theta)
    return AaoPoint(
        Trajectory(grid, prior.state.values + du, "state"), prior.theta + dtheta
    )


def step_reduced_landweber(op: ReducedOperator, theta, z, state, mu):
    """One reduced Landweber update from a precomputed residual z = F - data."""
    return theta - mu * op.adjoint(theta, state, z)


def step_reduced_landweber_kaczmarz(op, theta, z, state, mu, k):
    part = op._require_partition()
    j = part.slab_index(k)
    return theta - mu * op.slab_adjoint(theta, state, op.slab_restrict(z, j), j)


def step_reduced_irgnm(op, theta, z, state, alpha, theta_bar, cg_tol=1e-8, cg_max=500):
    """Regularized Gauss-Newton step via CG on the parameter normal equations."""

    def normal_apply(xi):
        out = op.derivative(theta, state, xi)
        return op.adjoint(theta, state, out) + alpha * xi

    lin = op.derivative(theta, state, theta - theta_bar)
    rhs_traj = Trajectory(op.grid, lin.values - z.values, "observation")
    rhs = op.adjoint(theta, state, rhs_traj)
    sol, _ = conjugate_gradient(
        normal_apply, rhs, op.problem.inner_theta, tol=cg_tol, max_iter=cg_max
    )
    return theta_bar + sol


# -- run loop ---------------------------------------------------------------------


def run(
    config: MethodConfig,
    instance: ProblemInstance,
    y_data: Trajectory,
    delta: float,
    truth=None,
    start=None,
) -> RunRecord:
    """Iterate the configured method with discrepancy or iteration-cap stopping.

    Rows are recorded at every visited iterate (k = 0 .. stopping index); the
    terminal row has step_ms = 0.  For the joint methods the recorded residual
    is the full three-channel norm, for the reduced ones the observation norm.
    Kaczmarz variants test the discrepancy once per completed sweep.
    """
    if delta < 0:
        raise ValidationError("noise level must be nonnegative")
    tag = config.tag
    if tag in ("aLWK", "rLWK"):
        if instance.partition is None or instance.partition.slab_count != config.m:
            raise ValidationError(
                f"config requests m={config.m} but the instance partition has "
                f"{None if instance.partition is None else instance.partition.slab_count} slabs"
            )
    aao_method = tag in AAO_TAGS
    op = instance.aao if aao_method else instance.reduced
    grid, triple, problem = instance.grid, instance.triple, instance.problem
    width = triple.interior_points

    truth_theta = truth_state = None
    if truth is not None:
        truth_theta, truth_state = truth

    if aao_method:
        data = data_triple(grid, width, y_data)
        point = start if start is not None else zero_point(triple, grid, problem)
    else:
        theta = (
            np.asarray(start, dtype=float).copy()
            if start is not None
            else np.zeros(problem.n_theta)
        )

    prior = _resolve_prior(config, triple, grid, problem)
    mu = config.mu
    if config.stepsize == "norm":
        mu = _norm_stepsize(config, instance, point if aao_method else theta, y_data)

    record = RunRecord(method=tag)
    record.metadata = {
        "tag": tag,
        "mu": mu,
        "stepsize": config.stepsize,
        "alpha0": config.alpha0,
        "q": config.q,
        "tau_disc": config.tau_disc,
        "k_max": config.k_max,
        "m": config.m,
        "cg_tol": config.cg_tol,
        "cg_max": config.cg_max,
        "delta": delta,
    }
    sweep_len = config.m if tag in ("aLWK", "rLWK") else 1

    k = 0
    while True:
        if aao_method:
            resid = op.residual(point, data)
            res_w, res_h, res_y, res_total = op.residual_norms(resid)
            cur_theta, cur_state = point.theta, point.state
        else:
            y_pred, state = op.forward(theta)
            z = Trajectory(grid, y_pred.values - y_data.values, "observation")
            res_y = np.sqrt(max(inner_observation(triple, z, z), 0.0))
            res_w = res_h = 0.0
            res_total = res_y
            cur_theta, cur_state = theta, state

        err_theta = err_u = float("nan")
        if truth_theta is not None:
            err_theta = problem.norm_theta(cur_theta - truth_theta)
            diff = Trajectory(grid, cur_state.values - truth_state.values, "state")
            err_u = norm_l2_v(triple, diff)
        row = IterationRow(k, res_total, res_w, res_h, res_y, err_theta, err_u)
        record.rows.append(row)

        if k % sweep_len == 0 and res_total <= config.tau_disc * delta:
            record.k_star, record.stop_reason = k, "discrepancy"
            break
        if config.k_apriori is not None and k >= config.k_apriori:
            record.k_star, record.stop_reason = k, "a-priori"
            break
        if k >= config.k_max:
            record.k_star, record.stop_reason = k, "k_max"
            break

        tic = time.perf_counter()
        try:
            if tag == "aLW":
                point = step_aao_landweber(op, point, data, mu, resid=resid)
            elif tag == "aLWK":
                point = step_aao_landweber_kaczmarz(op, point, data, mu, k, resid=resid)
            elif tag == "aIRGNM":
                alpha = config.alpha0 * config.q**k
                point = step_aao_irgnm(
                    op, point, data, alpha, prior, config.cg_tol, config.cg_max, resid=resid
                )
            elif tag == "rLW":
                theta = step_reduced_landweber(op, theta, z, state, mu)
            elif tag == "rLWK":
                theta = step_reduced_landweber_kaczmarz(op, theta, z, state, mu, k)
            else:  # rIRGNM
                alpha = config.alpha0 * config.q**k
                theta = step_reduced_irgnm(
                    op, theta, z, state, alpha, prior.theta, config.cg_tol, config.cg_max
                )
        except SolverError as exc:
            # abort but keep what was measured so far
            record.k_star, record.stop_reason = k, "error"
            record.theta_final = cur_theta.copy()
            record.state_final = cur_state
            exc.record = record
            raise
        row.step_ms = (time.perf_counter() - tic) * 1e3
        k += 1

    record.theta_final = cur_theta.copy()
    record.state_final = cur_state
    return record


def _resolve_prior(config, triple, grid, problem):
    theta_bar = (
        np.asarray(config.prior_theta, dtype=float)
        if config.prior_theta is not None
        else np.zeros(problem.n_theta)
    )
    if config.prior_state is not None:
        state_bar = Trajectory(grid, np.asarray(config.prior_state, dtype=float), "state")
    else:
        state_bar = zero_trajectory(grid, triple.interior_points, "state")
    return AaoPoint(state_bar, theta_bar)


def _norm_stepsize(config, instance, start, y_data):
    """mu = 0.95 / ||derivative at the start point||^2, estimated by power iteration."""
    rng = np.random.default_rng(12345)
    if config.tag in AAO_TAGS:
        op = instance.aao
        point = start
        grid, width = instance.grid, instance.triple.interior_points
        n_theta = instance.problem.n_theta

        def fwd(flat):
            du, dtheta = _split(flat, grid, width, n_theta)
            return op.derivative(point, Trajectory(grid, du, "state"), dtheta)

        def adj(triple_out):
            ds, dt = op.adjoint(point, triple_out)
            return _flatten(ds.values, dt)

        def pair_inner(a, b):
            ua, ta = _split(a, grid, width, n_theta)
            ub, tb = _split(b, grid, width, n_theta)
            return inner_state(
                instance.triple,
                Trajectory(grid, ua, "state"),
                Trajectory(grid, ub, "state"),
            ) + instance.problem.inner_theta(ta, tb)

        start_vec = rng.standard_normal(grid.node_count * width + n_theta)
        est = estimate_operator_norm(fwd, adj, pair_inner, start_vec)
    else:
        op = instance.reduced
        _, state = op.forward(start)

        def fwd(xi):
            return op.derivative(start, state, xi)

        def adj(z):
            return op.adjoint(start, state, z)

        start_vec = rng.standard_normal(instance.problem.n_theta)
        est = estimate_operator_norm(fwd, adj, op.problem.inner_theta, start_vec)
    if est == 0.0:
        return config.mu
    return 0.95 / est**2
