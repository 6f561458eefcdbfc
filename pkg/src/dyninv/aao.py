"""All-at-once formulation: residual map, derivative, adjoint and slab operators.

The unknown is the pair (state trajectory, parameter); the residual stacks the
model row, the initial-condition row and the observation row.  The adjoint is
the exact transpose of the discrete derivative under the graph inner product
on states, which fixes every endpoint and quadrature choice below: the
backward sweep reads its source one node above, the forward sweep pairs the
adjoint state at the left node of each step.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grids import KaczmarzPartition, TimeGrid
from .problem import ProblemDefinition
from .spaces import (
    DiscreteGelfandTriple,
    Trajectory,
    apply_stiffness,
    evolve_backward,
    evolve_forward,
    inner_dual_load,
    inner_observation,
    solve_stiffness,
    zero_trajectory,
)


@dataclass
class AaoPoint:
    """Joint iterate (state trajectory, parameter)."""

    state: Trajectory
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)


@dataclass
class ResidualTriple:
    """Element of the residual/data space: model row, initial row, observation row."""

    model: Trajectory
    initial: np.ndarray
    observation: Trajectory

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)


def zero_point(triple: DiscreteGelfandTriple, grid: TimeGrid, problem: ProblemDefinition) -> AaoPoint:
    return AaoPoint(
        zero_trajectory(grid, triple.interior_points, "state"), np.zeros(problem.n_theta)
    )


def data_triple(grid: TimeGrid, width: int, y: Trajectory) -> ResidualTriple:
    """Wrap observed data as (0, 0, y) in the residual layout."""
    return ResidualTriple(
        zero_trajectory(grid, width, "dual_load"), np.zeros(width), y
    )


class AllAtOnceOperator:
    """Matrix-free residual map of the joint formulation and its linearizations."""

    def __init__(
        self,
        problem: ProblemDefinition,
        triple: DiscreteGelfandTriple,
        grid: TimeGrid,
        partition: KaczmarzPartition | None = None,
    ):
        self.problem = problem
        self.triple = triple
        self.grid = grid
        self.partition = partition
        self._t = grid.nodes()

    # -- forward --------------------------------------------------------------

    def residual(self, point: AaoPoint, data: ResidualTriple) -> ResidualTriple:
        """Stacked residual against the given data triple.

        Model row at the right endpoint of each step:
        w^n = (u^n - u^{n-1})/tau - f(t_n, u^n, theta) for n = 1..N.
        """
        u = point.state.values
        theta = point.theta
        tau = self.grid.tau
        fvals = self.problem.f(self._t[1:], u[1:], theta)
        w = np.zeros_like(u)
        w[1:] = (u[1:] - u[:-1]) / tau - fvals - data.model.values[1:]
        h = u[0] - self.problem.u0(theta) - data.initial
        z = self.problem.g(self._t, u, theta) - data.observation.values
        return ResidualTriple(
            Trajectory(self.grid, w, "dual_load"),
            h,
            Trajectory(self.grid, z, "observation"),
        )

    def derivative(self, point: AaoPoint, dstate: Trajectory, dtheta: np.ndarray) -> ResidualTriple:
        """Directional derivative applied to (dstate, dtheta); exactly linear."""
        u = point.state.values
        theta = point.theta
        du = dstate.values
        dtheta = np.asarray(dtheta, dtype=float)
        tau = self.grid.tau
        t = self._t
        jac = self.problem.apply_jac
        w = np.zeros_like(du)
        w[1:] = (
            (du[1:] - du[:-1]) / tau
            - jac("f_u", "forward", t[1:], u[1:], theta, du[1:])
            - jac("f_theta", "forward", t[1:], u[1:], theta, dtheta)
        )
        h = du[0] - jac("u0", "forward", None, None, theta, dtheta)
        z = jac("g_u", "forward", t, u, theta, du) + jac(
            "g_theta", "forward", t, u, theta, dtheta
        )
        return ResidualTriple(
            Trajectory(self.grid, w, "dual_load"),
            h,
            Trajectory(self.grid, z, "observation"),
        )

    # -- adjoint ----------------------------------------------------------------

    def adjoint(self, point: AaoPoint, resid: ResidualTriple) -> tuple[Trajectory, np.ndarray]:
        """Exact discrete adjoint of :meth:`derivative`.

        Returns the state direction via one backward and one forward
        stiffness evolution and the parameter direction via right-endpoint
        quadrature of the adjoint integrands.
        """
        return self._adjoint_masked(point, resid, weighted=None, include_initial=True)

    def _adjoint_masked(self, point, resid, weighted, include_initial):
        u = point.state.values
        theta = point.theta
        tau = self.grid.tau
        t = self._t
        jac = self.problem.apply_jac
        w = resid.model.values.copy()
        z = resid.observation.values.copy()
        w[0] = 0.0
        if weighted is not None:
            mask = np.zeros(self.grid.node_count, dtype=bool)
            mask[weighted] = True
            w[~mask] = 0.0
            z[~mask] = 0.0
        h = resid.initial if include_initial else np.zeros_like(resid.initial)

        iw = np.zeros_like(w)
        iw[1:] = solve_stiffness(self.triple, w[1:])
        rows = (
            -w[1:]
            - jac("f_u", "adjoint", t[1:], u[1:], theta, iw[1:])
            + jac("g_u", "adjoint", t[1:], u[1:], theta, z[1:])
        )
        # backward source lives one node above: src^m drives the step onto node m
        src = np.zeros_like(w)
        src[:-1] = rows
        p = evolve_backward(
            self.triple, self.grid, np.zeros(w.shape[1]), Trajectory(self.grid, src, "dual_load")
        )

        fwd = np.zeros_like(w)
        fwd[1:] = w[1:] + apply_stiffness(self.triple, p.values[:-1])
        dstate = evolve_forward(
            self.triple,
            self.grid,
            p.values[0] + h,
            Trajectory(self.grid, fwd, "dual_load"),
        )

        dtheta = tau * np.sum(
            -jac("f_theta", "adjoint", t[1:], u[1:], theta, iw[1:])
            + jac("g_theta", "adjoint", t[1:], u[1:], theta, z[1:]),
            axis=0,
        )
        dtheta = dtheta - jac("u0", "adjoint", None, None, theta, h)
        return dstate, dtheta

    # -- slab operators --------------------------------------------------------

    def slab_residual(self, point: AaoPoint, j: int, data: ResidualTriple) -> ResidualTriple:
        """Restriction of the residual to slab j (initial row only on slab 0)."""
        part = self._require_partition()
        full = self.residual(point, data)
        return self._mask_triple(full, part.weighted_nodes(j), include_initial=(j == 0))

    def slab_derivative(self, point, j, dstate, dtheta) -> ResidualTriple:
        part = self._require_partition()
        full = self.derivative(point, dstate, dtheta)
        return self._mask_triple(full, part.weighted_nodes(j), include_initial=(j == 0))

    def slab_adjoint(self, point, j, resid) -> tuple[Trajectory, np.ndarray]:
        """Adjoint of the slab operator: slab-supported sources, full-horizon sweeps.

        Below the slab the backward state keeps evolving with zero source; it
        is not frozen.  The exact-transpose requirement forces this choice.
        """
        part = self._require_partition()
        return self._adjoint_masked(
            point, resid, weighted=part.weighted_nodes(j), include_initial=(j == 0)
        )

    def _mask_triple(self, full, weighted, include_initial):
        mask = np.zeros(self.grid.node_count, dtype=bool)
        mask[weighted] = True
        w = np.where(mask[:, None], full.model.values, 0.0)
        z = np.where(mask[:, None], full.observation.values, 0.0)
        h = full.initial if include_initial else np.zeros_like(full.initial)
        return ResidualTriple(
            Trajectory(self.grid, w, "dual_load"),
            h,
            Trajectory(self.grid, z, "observation"),
        )

    def _require_partition(self) -> KaczmarzPartition:
        if self.partition is None:
            raise ValidationError("operator was built without a partition")
        return self.partition

    # -- norms -------------------------------------------------------------------

    def residual_norms(self, resid: ResidualTriple) -> tuple[float, float, float, float]:
        """Channel norms (model, initial, observation) and the total norm."""
        nw = np.sqrt(max(inner_dual_load(self.triple, resid.model, resid.model), 0.0))
        nh = np.sqrt(self.triple.dx * float(resid.initial @ resid.initial))
        ny = np.sqrt(
            max(inner_observation(self.triple, resid.observation, resid.observation), 0.0)
        )
        return float(nw), float(nh), float(ny), float(np.sqrt(nw**2 + nh**2 + ny**2))

    def inner_residual(self, a: ResidualTriple, b: ResidualTriple) -> float:
        """Inner product of the residual space (all three channels)."""
        return (
            inner_dual_load(self.triple, a.model, b.model)
            + self.triple.dx * float(a.initial @ b.initial)
            + inner_observation(self.triple, a.observation, b.observation)
        )
