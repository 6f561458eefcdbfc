"""Experiment orchestration: truth synthesis, seeded noise, oracles, reports.

The dense oracle assembles every operator and Gram matrix explicitly at tiny
sizes and is the instrument that certifies the matrix-free adjoints; the
orchestration functions wire configs to runs and emit plot-ready CSV files
plus JSON summaries.
"""

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .aao import AaoPoint, AllAtOnceOperator, ResidualTriple, data_triple
from .errors import ValidationError
from .grids import make_partition, make_time_grid
from .methods import MethodConfig, ProblemInstance, RunRecord, run
from .problem import SemilinearDiffusion
from .reduced import ReducedOperator
from .spaces import (
    Trajectory,
    build_triple,
    inner_state,
    norm_dual_load,
    norm_observation,
    zero_trajectory,
)

ITERATIONS_HEADER = ["k", "res_total", "res_w", "res_h", "res_y", "err_theta", "err_u_L2V", "step_ms"]
RECONSTRUCTION_HEADER = ["x", "theta_true", "theta_rec", "u_err_final"]


# -- configuration ------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Full description of one experiment; JSON round-trippable."""

    n_x: int = 100
    n_t: int = 100
    horizon: float = 0.1
    gain: float = 10.0
    truth_kind: str = "sine"
    truth_amplitude: float = 0.1
    method: MethodConfig = field(default_factory=MethodConfig)
    delta_w: float = 0.0
    delta_z: float = 0.0
    seed: int = 0
    output_dir: str = "out"
    policy: str = "imex"
    start_at_truth: bool = False
    skip_selftest_gate: bool = False

    def __post_init__(self):
        if self.delta_w < 0 or self.delta_z < 0:
            raise ValidationError("noise levels must be nonnegative")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            inst = raw.get("instance", {})
            method_raw = dict(raw.get("method", {}))
            stepsize = "fixed"
            mu = method_raw.get("mu", 1.0)
            if mu == "norm":
                stepsize, mu = "norm", 1.0
            method = MethodConfig(
                tag=method_raw.get("tag", "rLW"),
                mu=float(mu),
                stepsize=stepsize,
                alpha0=float(method_raw.get("alpha0", 1.0)),
                q=float(method_raw.get("q", 2.0 / 3.0)),
                tau_disc=float(method_raw.get("tau_disc", 2.5)),
                k_max=int(method_raw.get("k_max", 100)),
                m=int(method_raw.get("m", 1)),
                cg_tol=float(method_raw.get("cg_tol", 1e-8)),
                cg_max=int(method_raw.get("cg_max", 500)),
            )
            noise = raw.get("noise", {})
            truth = raw.get("truth", {})
            return cls(
                n_x=int(inst.get("n_x", 100)),
                n_t=int(inst.get("n_t", 100)),
                horizon=float(inst.get("T", 0.1)),
                gain=float(inst.get("gain", 10.0)),
                truth_kind=truth.get("kind", "sine"),
                truth_amplitude=float(truth.get("amplitude", 0.1)),
                method=method,
                delta_w=float(noise.get("delta_w", 0.0)),
                delta_z=float(noise.get("delta_z", 0.0)),
                seed=int(noise.get("seed", 0)),
                output_dir=raw.get("output_dir", "out"),
                policy=inst.get("policy", "imex"),
                start_at_truth=bool(raw.get("start_at_truth", False)),
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad config: {exc}") from exc

    def to_dict(self) -> dict:
        mu = "norm" if self.method.stepsize == "norm" else self.method.mu
        return {
            "instance": {
                "n_x": self.n_x,
                "n_t": self.n_t,
                "T": self.horizon,
                "gain": self.gain,
                "policy": self.policy,
            },
            "truth": {"kind": self.truth_kind, "amplitude": self.truth_amplitude},
            "method": {
                "tag": self.method.tag,
                "mu": mu,
                "alpha0": self.method.alpha0,
                "q": self.method.q,
                "tau_disc": self.method.tau_disc,
                "k_max": self.method.k_max,
                "m": self.method.m,
                "cg_tol": self.method.cg_tol,
                "cg_max": self.method.cg_max,
            },
            "noise": {"delta_w": self.delta_w, "delta_z": self.delta_z, "seed": self.seed},
            "output_dir": self.output_dir,
            "start_at_truth": self.start_at_truth,
        }


def make_instance(n_x, n_t, horizon, gain, m=1, policy="imex") -> ProblemInstance:
    """Assemble the benchmark instance with both operator views."""
    triple = build_triple(n_x)
    grid = make_time_grid(horizon, n_t)
    partition = make_partition(grid, m)
    problem = SemilinearDiffusion(triple, gain=gain)
    aao = AllAtOnceOperator(problem, triple, grid, partition)
    red = ReducedOperator(problem, triple, grid, partition, policy=policy)
    return ProblemInstance(problem, triple, grid, partition, aao, red)


# -- truth and noise ------------------------------------------------------------------


def synthesize_truth(instance: ProblemInstance, kind="sine", amplitude=0.1):
    """Exact parameter on the interior nodes plus its state and observation.

    The state is marched with the fully implicit solver so the pair satisfies
    the discrete model equation to Newton tolerance; this makes the truth an
    exact zero of the joint residual regardless of the inversion policy.
    """
    triple, grid = instance.triple, instance.grid
    if kind != "sine":
        raise ValidationError(f"unknown truth kind {kind!r}")
    x = truth_nodes(triple)
    theta = amplitude * np.sin(2.0 * np.pi * x)
    solver = ReducedOperator(instance.problem, triple, grid, policy="newton")
    state = solver.solve_state(theta)
    y = solver.observe(state, theta)
    return theta, state, y


def truth_nodes(triple) -> np.ndarray:
    return triple.dx * np.arange(1, triple.interior_points + 1)


@dataclass
class NoisyDataset:
    """Perturbations with exactly rescaled norms and the resulting noisy data."""

    model_noise: Trajectory
    obs_noise: Trajectory
    y_noisy: Trajectory
    y_exact: Trajectory
    achieved_delta: float
    bound_delta: float
    c_estimate: float
    seed: int


def add_noise(instance: ProblemInstance, y: Trajectory, theta_truth, delta_w, delta_z, seed) -> NoisyDataset:
    """Gaussian nodal noise in both channels, rescaled exactly to the targets.

    The model perturbation re-enters through a perturbed state solve; the
    achieved noise level is the measured observation-space distance, which
    the discrepancy principle consumes.  The analytic bound c*delta_w +
    delta_z is reported alongside with c estimated from the current draw.
    """
    if delta_w < 0 or delta_z < 0:
        raise ValidationError("noise levels must be nonnegative")
    triple, grid = instance.triple, instance.grid
    n = triple.interior_points
    rng = np.random.default_rng(seed)

    w_vals = np.zeros((grid.node_count, n))
    if delta_w > 0:
        w_vals[1:] = rng.standard_normal((grid.step_count, n))
    w_noise = Trajectory(grid, w_vals, "dual_load")
    if delta_w > 0:
        w_noise = Trajectory(grid, w_vals * (delta_w / norm_dual_load(triple, w_noise)), "dual_load")

    z_vals = np.zeros((grid.node_count, n))
    if delta_z > 0:
        z_vals[1:] = rng.standard_normal((grid.step_count, n))
    z_noise = Trajectory(grid, z_vals, "observation")
    if delta_z > 0:
        z_noise = Trajectory(grid, z_vals * (delta_z / norm_observation(triple, z_noise)), "observation")

    solver = ReducedOperator(instance.problem, triple, grid, policy="newton")
    if delta_w > 0:
        state_pert = solver.solve_state(theta_truth, perturbation=w_noise)
    else:
        state_pert = solver.solve_state(theta_truth)
    y_pert = solver.observe(state_pert, theta_truth)
    y_noisy = Trajectory(grid, y_pert.values + z_noise.values, "observation")

    diff = Trajectory(grid, y_noisy.values - y.values, "observation")
    achieved = norm_observation(triple, diff)
    if delta_w > 0:
        shift = Trajectory(grid, y.values - y_pert.values, "observation")
        c_est = norm_observation(triple, shift) / delta_w
    else:
        c_est = 0.0
    return NoisyDataset(
        w_noise, z_noise, y_noisy, y, achieved, c_est * delta_w + delta_z, c_est, seed
    )


# -- tangential cone diagnostic ---------------------------------------------------------


@dataclass
class TangentialConeEstimate:
    ratio_max: float
    ratios: np.ndarray
    channel_shares: tuple | None = None


def estimate_tangential_cone(
    instance, theta_center, sample_count, radius, seed=0, formulation="aao"
):
    """Sampled bound of linearization error against residual difference.

    Draws random pairs within the given radius of the center, evaluates both
    sides of the cone inequality and returns the worst sampled ratio; pairs
    whose residual difference is below 1e-14 are skipped.
    """
    if sample_count < 1:
        raise ValidationError("no samples requested")
    if radius <= 0:
        raise ValidationError("radius must be positive")
    if formulation not in ("aao", "reduced"):
        raise ValidationError(f"unknown formulation {formulation!r}")
    rng = np.random.default_rng(seed)
    triple, grid = instance.triple, instance.grid
    theta_center = np.asarray(theta_center, dtype=float)
    solver = ReducedOperator(instance.problem, triple, grid, policy="newton")

    if formulation == "reduced":
        ratios = []
        for _ in range(sample_count):
            t1 = theta_center + _scaled(rng, theta_center.shape, radius, instance.problem.norm_theta)
            t2 = theta_center + _scaled(rng, theta_center.shape, radius, instance.problem.norm_theta)
            y1, s1 = _forward(solver, t1)
            y2, _ = _forward(solver, t2)
            lin = solver.derivative(t1, s1, t2 - t1)
            num_traj = Trajectory(grid, y2.values - y1.values - lin.values, "observation")
            den_traj = Trajectory(grid, y2.values - y1.values, "observation")
            den = norm_observation(triple, den_traj)
            if den < 1e-14:
                continue
            ratios.append(norm_observation(triple, num_traj) / den)
        return _cone_result(ratios)

    op = instance.aao
    width = triple.interior_points
    data = data_triple(grid, width, zero_trajectory(grid, width, "observation"))
    state_center = solver.solve_state(theta_center)
    ratios, shares = [], np.zeros(3)
    for _ in range(sample_count):
        p1 = _perturbed_point(rng, instance, state_center, theta_center, radius)
        p2 = _perturbed_point(rng, instance, state_center, theta_center, radius)
        r1 = op.residual(p1, data)
        r2 = op.residual(p2, data)
        dstate = Trajectory(grid, p2.state.values - p1.state.values, "state")
        lin = op.derivative(p1, dstate, p2.theta - p1.theta)
        num = ResidualTriple(
            Trajectory(grid, r2.model.values - r1.model.values - lin.model.values, "dual_load"),
            r2.initial - r1.initial - lin.initial,
            Trajectory(
                grid, r2.observation.values - r1.observation.values - lin.observation.values,
                "observation",
            ),
        )
        nw, nh, ny, _ = op.residual_norms(num)
        # right-hand side per the cone inequality: residual difference in the
        # model/observation rows plus the initial-map difference alone
        dw = Trajectory(grid, r2.model.values - r1.model.values, "dual_load")
        dz = Trajectory(grid, r2.observation.values - r1.observation.values, "observation")
        du0 = instance.problem.u0(p2.theta) - instance.problem.u0(p1.theta)
        den = (
            norm_dual_load(triple, dw)
            + np.sqrt(triple.dx * float(du0 @ du0))
            + norm_observation(triple, dz)
        )
        if den < 1e-14:
            continue
        ratios.append((nw + nh + ny) / den)
        total = max(nw + nh + ny, 1e-300)
        shares += np.array([nw, nh, ny]) / total
    result = _cone_result(ratios)
    if ratios:
        result.channel_shares = tuple(shares / len(ratios))
    return result


def _forward(solver, theta):
    state = solver.solve_state(theta)
    return solver.observe(state, theta), state


def _scaled(rng, shape, radius, norm):
    v = rng.standard_normal(shape)
    n = norm(v)
    return v * (radius / n) * rng.uniform(0.2, 1.0)


def _perturbed_point(rng, instance, state_center, theta_center, radius):
    triple, grid = instance.triple, instance.grid
    du = rng.standard_normal(state_center.values.shape)
    traj = Trajectory(grid, du, "state")
    scale = np.sqrt(inner_state(triple, traj, traj))
    du = du * (radius / scale) * rng.uniform(0.2, 1.0)
    dtheta = _scaled(rng, theta_center.shape, radius, instance.problem.norm_theta)
    return AaoPoint(
        Trajectory(grid, state_center.values + du, "state"), theta_center + dtheta
    )


def _cone_result(ratios):
    if not ratios:
        raise ValidationError("all sampled pairs were degenerate; no ratios computed")
    arr = np.array(ratios)
    return TangentialConeEstimate(float(arr.max()), arr)


# -- dense oracle ---------------------------------------------------------------------


class DenseOracle:
    """Explicit matrices for every operator and inner product at tiny sizes.

    Column-by-column assembly through the matrix-free forward applications;
    adjoints follow as Gram-weighted transposes, so any matrix-free adjoint
    can be checked against an independent dense realization.
    """

    MAX_NX = 12
    MAX_STEPS = 8

    def __init__(self, instance: ProblemInstance):
        triple, grid = instance.triple, instance.grid
        if triple.interior_points > self.MAX_NX or grid.step_count > self.MAX_STEPS:
            raise ValidationError(
                f"dense oracle limited to n_x <= {self.MAX_NX}, steps <= {self.MAX_STEPS}"
            )
        self.instance = instance
        self.triple = triple
        self.grid = grid
        self.width = triple.interior_points
        self.n_theta = instance.problem.n_theta
        self.dom_dim = grid.node_count * self.width + self.n_theta
        self.cod_dim = 2 * grid.step_count * self.width + self.width
        self.gram_theta = self._assemble_gram_theta()
        self.gram_domain = self._assemble_gram_domain()
        self.gram_codomain = self._assemble_gram_codomain()
        self.gram_obs = self._assemble_gram_obs()

    # flat layouts: domain = (state nodes 0..N, theta); codomain = (model rows
    # 1..N, initial row, observation rows 1..N); observation node 0 carries no
    # quadrature weight and is dropped.

    def flatten_point(self, point: AaoPoint) -> np.ndarray:
        return np.concatenate([point.state.values.ravel(), point.theta])

    def unflatten_point(self, flat) -> AaoPoint:
        cut = self.grid.node_count * self.width
        state = Trajectory(self.grid, flat[:cut].reshape(-1, self.width), "state")
        return AaoPoint(state, flat[cut:].copy())

    def flatten_triple(self, resid: ResidualTriple) -> np.ndarray:
        return np.concatenate(
            [resid.model.values[1:].ravel(), resid.initial, resid.observation.values[1:].ravel()]
        )

    def unflatten_triple(self, flat) -> ResidualTriple:
        steps, width = self.grid.step_count, self.width
        cut = steps * width
        w = np.zeros((steps + 1, width))
        w[1:] = flat[:cut].reshape(steps, width)
        h = flat[cut : cut + width].copy()
        z = np.zeros((steps + 1, width))
        z[1:] = flat[cut + width :].reshape(steps, width)
        return ResidualTriple(
            Trajectory(self.grid, w, "dual_load"), h, Trajectory(self.grid, z, "observation")
        )

    def flatten_obs(self, traj: Trajectory) -> np.ndarray:
        return traj.values[1:].ravel()

    def unflatten_obs(self, flat) -> Trajectory:
        z = np.zeros((self.grid.step_count + 1, self.width))
        z[1:] = flat.reshape(self.grid.step_count, self.width)
        return Trajectory(self.grid, z, "observation")

    def _assemble_gram_domain(self):
        triple, grid = self.triple, self.grid
        steps, width = grid.step_count, self.width
        tau, dx = grid.tau, triple.dx
        a_inv = np.linalg.inv(triple.stiffness)
        e = np.zeros((steps * width, grid.node_count * width))
        for n in range(steps):
            rows = slice(n * width, (n + 1) * width)
            e[rows, n * width : (n + 1) * width] = -np.eye(width) / tau
            e[rows, (n + 1) * width : (n + 2) * width] = np.eye(width) / tau + triple.stiffness
        w_gram = tau * dx * np.kron(np.eye(steps), a_inv)
        g_state = e.T @ w_gram @ e
        g_state[:width, :width] += dx * np.eye(width)
        out = np.zeros((self.dom_dim, self.dom_dim))
        cut = grid.node_count * width
        out[:cut, :cut] = g_state
        out[cut:, cut:] = self.gram_theta
        return out

    def _assemble_gram_codomain(self):
        triple, grid = self.triple, self.grid
        steps, width = grid.step_count, self.width
        tau, dx = grid.tau, triple.dx
        a_inv = np.linalg.inv(triple.stiffness)
        blocks = [tau * dx * np.kron(np.eye(steps), a_inv), dx * np.eye(width),
                  tau * dx * np.eye(steps * width)]
        out = np.zeros((self.cod_dim, self.cod_dim))
        pos = 0
        for b in blocks:
            out[pos : pos + b.shape[0], pos : pos + b.shape[0]] = b
            pos += b.shape[0]
        return out

    def _assemble_gram_theta(self):
        n = self.n_theta
        g = np.empty((n, n))
        basis = np.eye(n)
        for i in range(n):
            for j in range(n):
                g[i, j] = self.instance.problem.inner_theta(basis[i], basis[j])
        return g

    def _assemble_gram_obs(self):
        steps, width = self.grid.step_count, self.width
        return self.grid.tau * self.triple.dx * np.eye(steps * width)

    # -- joint operator matrices --------------------------------------------------

    def aao_derivative_matrix(self, point: AaoPoint, slab=None) -> np.ndarray:
        op = self.instance.aao
        cols = np.empty((self.cod_dim, self.dom_dim))
        for i in range(self.dom_dim):
            unit = np.zeros(self.dom_dim)
            unit[i] = 1.0
            probe = self.unflatten_point(unit)
            if slab is None:
                out = op.derivative(point, probe.state, probe.theta)
            else:
                out = op.slab_derivative(point, slab, probe.state, probe.theta)
            cols[:, i] = self.flatten_triple(out)
        return cols

    def aao_adjoint_matrix(self, point: AaoPoint, slab=None) -> np.ndarray:
        jac = self.aao_derivative_matrix(point, slab=slab)
        return np.linalg.solve(self.gram_domain, jac.T @ self.gram_codomain)

    def aao_residual_flat(self, point: AaoPoint, data: ResidualTriple) -> np.ndarray:
        return self.flatten_triple(self.instance.aao.residual(point, data))

    # -- reduced operator matrices --------------------------------------------------

    def reduced_derivative_matrix(self, theta, state, slab=None) -> np.ndarray:
        op = self.instance.reduced
        cols = np.empty((self.grid.step_count * self.width, self.n_theta))
        for i in range(self.n_theta):
            unit = np.zeros(self.n_theta)
            unit[i] = 1.0
            if slab is None:
                out = op.derivative(theta, state, unit)
            else:
                out = op.slab_derivative(theta, state, unit, slab)
            cols[:, i] = self.flatten_obs(out)
        return cols

    def reduced_adjoint_matrix(self, theta, state, slab=None) -> np.ndarray:
        jac = self.reduced_derivative_matrix(theta, state, slab=slab)
        return np.linalg.solve(self.gram_theta, jac.T @ self.gram_obs)


# -- self-test gate -----------------------------------------------------------------


def selftest(verbose=True, rng_seed=7) -> bool:
    """Adjoint, Taylor and oracle checks at small scale; True when all pass."""
    checks = []
    rng = np.random.default_rng(rng_seed)

    inst = make_instance(6, 6, 0.05, gain=4.0, m=2)
    oracle = DenseOracle(inst)
    theta0 = 0.4 + 0.2 * np.sin(2 * np.pi * truth_nodes(inst.triple))
    point = AaoPoint(
        Trajectory(inst.grid, 0.3 + 0.1 * rng.standard_normal((inst.grid.node_count, 6)), "state"),
        theta0.copy(),
    )

    jac = oracle.aao_derivative_matrix(point)
    adj = oracle.aao_adjoint_matrix(point)
    gap = 0.0
    for _ in range(5):
        xf = rng.standard_normal(oracle.dom_dim)
        probe = oracle.unflatten_point(xf)
        out = inst.aao.derivative(point, probe.state, probe.theta)
        gap = max(gap, _relerr(oracle.flatten_triple(out), jac @ xf))
        rf = rng.standard_normal(oracle.cod_dim)
        ds, dt = inst.aao.adjoint(point, oracle.unflatten_triple(rf))
        gap = max(gap, _relerr(np.concatenate([ds.values.ravel(), dt]), adj @ rf))
    checks.append(("joint derivative/adjoint vs dense", gap, 1e-11))

    for j in range(2):
        jac_j = oracle.aao_derivative_matrix(point, slab=j)
        adj_j = oracle.aao_adjoint_matrix(point, slab=j)
        rf = rng.standard_normal(oracle.cod_dim)
        ds, dt = inst.aao.slab_adjoint(point, j, oracle.unflatten_triple(rf))
        gap = _relerr(np.concatenate([ds.values.ravel(), dt]), adj_j @ rf)
        checks.append((f"slab {j} adjoint vs dense", gap, 1e-11))

    newton = ReducedOperator(inst.problem, inst.triple, inst.grid, inst.partition, policy="newton")
    state = newton.solve_state(theta0)
    jac_r = oracle.reduced_derivative_matrix(theta0, state)
    adj_r = oracle.reduced_adjoint_matrix(theta0, state)
    zf = rng.standard_normal(oracle.grid.step_count * oracle.width)
    gap = _relerr(newton.adjoint(theta0, state, oracle.unflatten_obs(zf)), adj_r @ zf)
    checks.append(("reduced adjoint vs dense", gap, 1e-11))

    xi = 0.1 * rng.standard_normal(inst.problem.n_theta)
    errs = []
    for eps in (1e-1, 1e-2, 1e-3):
        y1, _ = newton.forward(theta0 + eps * xi)
        y0, s0 = newton.forward(theta0)
        lin = newton.derivative(theta0, s0, xi)
        diff = Trajectory(inst.grid, y1.values - y0.values - eps * lin.values, "observation")
        errs.append(norm_observation(inst.triple, diff))
    order = min(np.log10(errs[i] / errs[i + 1]) for i in range(2))
    checks.append(("reduced Taylor order", -order, -1.9))

    ok = True
    for name, value, bound in checks:
        passed = value <= bound
        ok = ok and passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'}  {name}: {value:.3e} (bound {bound:.1e})")
    return ok


def _relerr(a, b):
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


# -- experiment drivers ----------------------------------------------------------------


def run_experiment(config: ExperimentConfig):
    """Synthesize data, run the configured method, and write report files.

    Returns a summary dict including the emitted paths.  A tiny oracle gate
    runs first unless the config disables it.
    """
    if not config.skip_selftest_gate:
        if not selftest(verbose=False):
            raise ValidationError("oracle self-test failed; refusing to run the benchmark")
    instance = make_instance(
        config.n_x, config.n_t, config.horizon, config.gain,
        m=config.method.m, policy=config.policy,
    )
    theta_true, state_true, y = synthesize_truth(
        instance, config.truth_kind, config.truth_amplitude
    )
    dataset = add_noise(instance, y, theta_true, config.delta_w, config.delta_z, config.seed)
    start = None
    if config.start_at_truth:
        if config.method.tag in ("aLW", "aLWK", "aIRGNM"):
            start = AaoPoint(state_true.copy(), theta_true.copy())
        else:
            start = theta_true.copy()
    wall0 = time.perf_counter()
    record = run(
        config.method,
        instance,
        dataset.y_noisy,
        dataset.achieved_delta,
        truth=(theta_true, state_true),
        start=start,
    )
    wall_total = time.perf_counter() - wall0

    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    tag = config.method.tag
    it_path = outdir / f"{tag}_iterations.csv"
    rec_path = outdir / f"{tag}_reconstruction.csv"
    sum_path = outdir / f"{tag}_summary.json"
    write_iterations_csv(it_path, record)
    write_reconstruction_csv(rec_path, instance, theta_true, state_true, record)
    summary = summarize(config, dataset, record, wall_total)
    sum_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    summary["paths"] = {
        "iterations": str(it_path),
        "reconstruction": str(rec_path),
        "summary": str(sum_path),
    }
    return summary


def summarize(config, dataset, record: RunRecord, wall_total):
    step_ms = record.column("step_ms")
    final = record.rows[-1]
    return {
        "config": config.to_dict(),
        "method": record.method,
        "k_star": record.k_star,
        "stop_reason": record.stop_reason,
        "rows": len(record.rows),
        "achieved_delta": dataset.achieved_delta,
        "bound_delta": dataset.bound_delta,
        "final_res_total": final.res_total,
        "final_err_theta": final.err_theta,
        "timing": {
            "wall_s": wall_total,
            "step_ms_total": float(step_ms.sum()),
            "step_ms_mean": float(step_ms[:-1].mean()) if len(step_ms) > 1 else 0.0,
        },
    }


def write_iterations_csv(path, record: RunRecord):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ITERATIONS_HEADER)
        for r in record.rows:
            writer.writerow(
                [r.k, _fmt(r.res_total), _fmt(r.res_w), _fmt(r.res_h), _fmt(r.res_y),
                 _fmt(r.err_theta), _fmt(r.err_u), _fmt(r.step_ms)]
            )


def write_reconstruction_csv(path, instance, theta_true, state_true, record: RunRecord):
    x = truth_nodes(instance.triple)
    theta_rec = record.theta_final
    u_err = record.state_final.values[-1] - state_true.values[-1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECONSTRUCTION_HEADER)
        for i in range(x.size):
            writer.writerow([_fmt(x[i]), _fmt(theta_true[i]), _fmt(theta_rec[i]), _fmt(u_err[i])])


def _fmt(v):
    return repr(float(v))


def compare(config: ExperimentConfig, tags):
    """Run several methods against one shared dataset; returns the comparison."""
    if not selftest(verbose=False):
        raise ValidationError("oracle self-test failed; refusing to run the comparison")
    summaries = {}
    for tag in tags:
        cfg = replace(config, method=replace(config.method, tag=tag), skip_selftest_gate=True)
        summaries[tag] = run_experiment(cfg)
    means = {tag: s["timing"]["step_ms_mean"] for tag, s in summaries.items()}
    ratios = {
        f"{a}/{b}": (means[a] / means[b] if means[b] > 0 else float("inf"))
        for a in tags
        for b in tags
        if a != b
    }
    out = {"methods": {t: _strip_paths(s) for t, s in summaries.items()}, "step_ms_mean_ratios": ratios}
    path = Path(config.output_dir) / "comparison.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    out["paths"] = {"comparison": str(path)}
    return out


def _strip_paths(summary):
    return {k: v for k, v in summary.items() if k != "paths"}


def _sweep_worker(raw_config):
    cfg = ExperimentConfig.from_dict(raw_config)
    cfg.skip_selftest_gate = True
    return run_experiment(cfg)


def sweep(config: ExperimentConfig, deltas, seeds, relative=False, workers=1):
    """Noise-level sweep: one run per (delta_z, seed) pair plus an aggregation.

    With ``relative`` the deltas are interpreted as fractions of the exact
    data norm.  Workers fan out over independent processes; every worker owns
    its output directory.
    """
    if not selftest(verbose=False):
        raise ValidationError("oracle self-test failed; refusing to run the sweep")
    instance = make_instance(
        config.n_x, config.n_t, config.horizon, config.gain,
        m=config.method.m, policy=config.policy,
    )
    _, _, y = synthesize_truth(instance, config.truth_kind, config.truth_amplitude)
    scale = norm_observation(instance.triple, y) if relative else 1.0

    jobs = []
    for delta in deltas:
        for seed in seeds:
            cfg = replace(
                config,
                delta_z=float(delta) * scale,
                seed=int(seed),
                output_dir=str(Path(config.output_dir) / f"delta_{delta:g}" / f"seed_{seed}"),
                skip_selftest_gate=True,
            )
            jobs.append(cfg.to_dict())

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]

    table = []
    for raw, summary in zip(jobs, results):
        table.append(
            {
                "delta_z": raw["noise"]["delta_z"],
                "seed": raw["noise"]["seed"],
                "k_star": summary["k_star"],
                "stop_reason": summary["stop_reason"],
                "final_res_total": summary["final_res_total"],
                "final_err_theta": summary["final_err_theta"],
                "achieved_delta": summary["achieved_delta"],
            }
        )
    by_delta = {}
    for row in table:
        by_delta.setdefault(row["delta_z"], []).append(row["final_err_theta"])
    medians = {str(d): float(np.median(v)) for d, v in sorted(by_delta.items())}
    out = {"runs": table, "median_err_theta_by_delta": medians}
    path = Path(config.output_dir) / "sweep.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    out["paths"] = {"sweep": str(path)}
    return out
