"""Reduced formulation: parameter-to-state map, sensitivities and adjoints.

The state solve eliminates the model equation; the derivative solves the
linearized evolution with coefficients frozen at the new time level, and the
adjoint is its exact discrete transpose (a backward sweep with the transposed
step matrices, followed by right-endpoint quadrature of the parameter terms).
"""

import numpy as np

from .errors import SolverError, ValidationError
from .grids import KaczmarzPartition, TimeGrid
from .problem import ProblemDefinition
from .spaces import DiscreteGelfandTriple, Trajectory

_NEWTON_MAX = 25
_NEWTON_TOL = 1e-12


class ReducedOperator:
    """Parameter-to-observation map theta -> g(., S(theta), theta), matrix-free.

    Parameters
    ----------
    problem, triple, grid : problem definition and discretisation.
    partition : optional slab partition for the cyclic variants.
    policy : 'imex' (implicit stiffness, explicit reaction; the default) or
        'newton' (fully implicit steps solved by warm-started Newton).
    perturbation : optional model perturbation added to the right-hand side;
        used when synthesizing perturbed states, never during inversion.
    """

    def __init__(
        self,
        problem: ProblemDefinition,
        triple: DiscreteGelfandTriple,
        grid: TimeGrid,
        partition: KaczmarzPartition | None = None,
        policy: str = "imex",
        perturbation: Trajectory | None = None,
    ):
        if policy not in ("imex", "newton"):
            raise ValidationError(f"unknown solve policy {policy!r}")
        self.problem = problem
        self.triple = triple
        self.grid = grid
        self.partition = partition
        self.policy = policy
        self.perturbation = perturbation
        self._t = grid.nodes()

    # -- nonlinear state solve ---------------------------------------------------

    def solve_state(self, theta, perturbation=None) -> Trajectory:
        """March the nonlinear evolution from u0(theta) over the whole horizon."""
        theta = np.asarray(theta, dtype=float)
        pert = perturbation if perturbation is not None else self.perturbation
        pvals = pert.values if pert is not None else None
        n = self.triple.interior_points
        steps, tau = self.grid.step_count, self.grid.tau
        q, lam = self.triple.eigenvectors, self.triple.eigenvalues
        denom = 1.0 + tau * lam
        out = np.empty((steps + 1, n))
        out[0] = self.problem.u0(theta)
        u = out[0]
        newton = self.policy == "newton"
        eye = np.eye(n) if newton else None
        for k in range(1, steps + 1):
            rhs = u + tau * self.problem.reaction(self._t[k], u, theta)
            if pvals is not None:
                rhs = rhs + tau * pvals[k]
            u_next = (((rhs @ q) / denom) @ q.T)
            if newton:
                base = u + (tau * pvals[k] if pvals is not None else 0.0)
                u_next = self._newton_step(k, base, u_next, theta, tau, eye)
            out[k] = u_next
            u = u_next
        return Trajectory(self.grid, out, "state")

    def _newton_step(self, k, base, guess, theta, tau, eye):
        t = self._t[k]
        v = guess
        for _ in range(_NEWTON_MAX):
            if not np.all(np.isfinite(v)):
                raise SolverError(f"Newton diverged at time step {k}", step=k)
            res = v - tau * self.problem.f(t, v, theta) - base
            if np.max(np.abs(res)) <= _NEWTON_TOL:
                return v
            jac = eye - tau * self.problem.f_u_matrix(t, v, theta)
            v = v - np.linalg.solve(jac, res)
        raise SolverError(f"Newton stalled at time step {k}", step=k)

    def observe(self, state: Trajectory, theta) -> Trajectory:
        return Trajectory(self.grid, self.problem.g(self._t, state.values, theta), "observation")

    def forward(self, theta) -> tuple[Trajectory, Trajectory]:
        """Observation of the state solve; the state is returned for reuse."""
        state = self.solve_state(theta)
        return self.observe(state, theta), state

    # -- linearizations ------------------------------------------------------------

    def solve_sensitivity(self, theta, state: Trajectory, xi) -> Trajectory:
        """Linearized evolution along xi; exactly linear in xi."""
        self._check_state(state)
        theta = np.asarray(theta, dtype=float)
        xi = np.asarray(xi, dtype=float)
        u = state.values
        tau = self.grid.tau
        jac = self.problem.apply_jac
        out = np.empty_like(u)
        out[0] = jac("u0", "forward", None, None, theta, xi)
        v = out[0]
        eye = np.eye(u.shape[1])
        for k in range(1, self.grid.step_count + 1):
            rhs = v + tau * jac("f_theta", "forward", self._t[k], u[k], theta, xi)
            m = eye - tau * self.problem.f_u_matrix(self._t[k], u[k], theta)
            v = np.linalg.solve(m, rhs)
            out[k] = v
        return Trajectory(self.grid, out, "state")

    def solve_adjoint(self, theta, state: Trajectory, z_src: Trajectory) -> Trajectory:
        """Backward sweep transposed against :meth:`solve_sensitivity`.

        Node n holds the multiplier of the step onto node n (n = 1..N); the
        initial slot repeats node 1, which is the weight of the
        initial-condition term in the parameter assembly.
        """
        self._check_state(state)
        theta = np.asarray(theta, dtype=float)
        u = state.values
        z = z_src.values
        tau = self.grid.tau
        jac = self.problem.apply_jac
        out = np.zeros_like(u)
        p = np.zeros(u.shape[1])
        eye = np.eye(u.shape[1])
        for k in range(self.grid.step_count, 0, -1):
            rhs = p + tau * jac("g_u", "adjoint", self._t[k], u[k], theta, z[k])
            m = eye - tau * self.problem.f_u_matrix(self._t[k], u[k], theta)
            p = np.linalg.solve(m.T, rhs)
            out[k] = p
        out[0] = out[1]
        return Trajectory(self.grid, out, "state")

    def derivative(self, theta, state: Trajectory, xi) -> Trajectory:
        """Observation-space directional derivative at theta along xi."""
        v = self.solve_sensitivity(theta, state, xi)
        jac = self.problem.apply_jac
        z = jac("g_u", "forward", self._t, state.values, theta, v.values) + jac(
            "g_theta", "forward", self._t, state.values, theta, np.asarray(xi, dtype=float)
        )
        return Trajectory(self.grid, z, "observation")

    def adjoint(self, theta, state: Trajectory, z: Trajectory) -> np.ndarray:
        """Parameter-space adjoint: quadrature of the adjoint-state integrands."""
        p = self.solve_adjoint(theta, state, z)
        return self._assemble_theta(theta, state, z, p)

    def _assemble_theta(self, theta, state, z, p):
        u = state.values
        tau = self.grid.tau
        jac = self.problem.apply_jac
        terms = jac("g_theta", "adjoint", self._t[1:], u[1:], theta, z.values[1:]) + jac(
            "f_theta", "adjoint", self._t[1:], u[1:], theta, p.values[1:]
        )
        out = tau * np.sum(terms, axis=0)
        return out + jac("u0", "adjoint", None, None, theta, p.values[0])

    # -- slab operators -------------------------------------------------------------

    def slab_restrict(self, traj: Trajectory, j: int) -> Trajectory:
        """Extension by zero of the slab-j restriction (weighted nodes only)."""
        part = self._require_partition()
        mask = np.zeros(self.grid.node_count, dtype=bool)
        mask[part.weighted_nodes(j)] = True
        return Trajectory(self.grid, np.where(mask[:, None], traj.values, 0.0), traj.space_tag)

    def slab_derivative(self, theta, state, xi, j) -> Trajectory:
        return self.slab_restrict(self.derivative(theta, state, xi), j)

    def slab_adjoint(self, theta, state, z_j: Trajectory, j) -> np.ndarray:
        """Adjoint of the slab restriction.

        The observation source is supported on the slab while the backward
        sweep and the model-term quadrature run over the whole horizon.
        """
        z = self.slab_restrict(z_j, j)
        p = self.solve_adjoint(theta, state, z)
        return self._assemble_theta(theta, state, z, p)

    def _require_partition(self) -> KaczmarzPartition:
        if self.partition is None:
            raise ValidationError("operator was built without a partition")
        return self.partition

    def _check_state(self, state: Trajectory):
        if state.grid != self.grid:
            raise ValidationError("state lives on a different grid")
        if state.width != self.triple.interior_points:
            raise ValidationError("state width does not match the discretisation")
