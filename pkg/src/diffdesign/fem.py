"""P1 finite elements for the diffusion forward problem and its shape
sensitivities.

Time stepping is backward Euler on a uniform grid. The sensitivity equation
shares the forward left-hand operator with homogeneous Dirichlet data; its
right side discretizes the time derivative with the same backward difference
the stepper induces, which keeps the scheme the exact derivative of the
discrete forward problem under node displacement. That exactness is what the
finite-difference oracle checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import MeshInversion, MissingTag
from .mesh import Mesh
from .numerics import cg_solve
from .shape import VelocityField

KAPPA_BULK_DEFAULT = 1e-1
KAPPA_INC_DEFAULT = 1e-3
U_DIRICHLET_DEFAULT = 1.0
T_DEFAULT = 10.0
N_STEPS_DEFAULT = 21


def p1_gradients(nodes, triangles):
    """Element-wise P1 basis gradients and triangle areas."""
    pts = nodes[triangles]
    e1 = pts[:, 1] - pts[:, 0]
    e2 = pts[:, 2] - pts[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    g = np.empty((len(triangles), 3, 2))
    g[:, 1, 0] = e2[:, 1] / det
    g[:, 1, 1] = -e2[:, 0] / det
    g[:, 2, 0] = -e1[:, 1] / det
    g[:, 2, 1] = e1[:, 0] / det
    g[:, 0, :] = -g[:, 1, :] - g[:, 2, :]
    return g, 0.5 * det


@dataclass
class HeatOperators:
    """Assembled operators of the parabolic problem on a tagged mesh."""

    mesh: Mesh
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    robin: sp.csr_matrix
    kappa: np.ndarray               # diffusion coefficient per element
    dirichlet_nodes: np.ndarray
    dirichlet_value: float
    source: object = None           # optional callable t -> nodal values
    _cache: dict = field(default_factory=dict, repr=False)

    def reduced_system(self, tau):
        """Free-node backward-Euler matrix and coupling block, cached per tau."""
        if tau not in self._cache:
            n = len(self.mesh.nodes)
            free = np.setdiff1d(np.arange(n), self.dirichlet_nodes)
            a = (self.mass + tau * (self.stiffness + self.robin)).tocsr()
            a_ff = a[free][:, free].tocsr()
            a_fc = a[free][:, self.dirichlet_nodes].tocsr()
            self._cache[tau] = (free, a_ff, a_fc)
        return self._cache[tau]


@dataclass
class Trajectory:
    """Nodal coefficients on a uniform time grid; values[m] is t = times[m]."""

    times: np.ndarray
    values: np.ndarray

    @property
    def tau(self):
        return float(self.times[1] - self.times[0])


def assemble_heat(mesh: Mesh, kappa_bulk=KAPPA_BULK_DEFAULT,
                  kappa_inc=KAPPA_INC_DEFAULT, beta=None,
                  u_d=U_DIRICHLET_DEFAULT, source=None) -> HeatOperators:
    """Assemble mass, stiffness, and Robin matrices for the tagged mesh.

    `beta` overrides the per-segment Robin coefficients stored in the mesh:
    a scalar applies uniformly, a callable maps edge midpoints to values,
    None keeps the mesh data. Raises MissingTag when the mesh has no
    Dirichlet segment.
    """
    if kappa_bulk <= 0.0 or kappa_inc <= 0.0:
        raise ValueError("diffusion coefficients must be positive")
    nodes, tris = mesh.nodes, mesh.triangles
    n = len(nodes)
    g, area = p1_gradients(nodes, tris)
    kappa = np.where(mesh.regions == 1, kappa_inc, kappa_bulk)

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()

    local_mass = (np.full((3, 3), 1.0) + np.eye(3)) / 12.0
    mass_vals = (area[:, None, None] * local_mass[None, :, :]).reshape(len(tris), 9)
    mass = sp.coo_matrix((mass_vals.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    stiff_local = np.einsum("e,eia,eja->eij", kappa * area, g, g)
    stiffness = sp.coo_matrix((stiff_local.reshape(len(tris), 9).ravel(),
                               (rows, cols)), shape=(n, n)).tocsr()

    seg_mask = mesh.seg_kind == "robin"
    segs = mesh.seg_nodes[seg_mask]
    betas = mesh.seg_beta[seg_mask].copy()
    if len(segs):
        mids = 0.5 * (nodes[segs[:, 0]] + nodes[segs[:, 1]])
        if callable(beta):
            betas = np.array([float(beta(m)) for m in mids])
        elif beta is not None:
            betas = np.full(len(segs), float(beta))
        lengths = np.linalg.norm(nodes[segs[:, 1]] - nodes[segs[:, 0]], axis=1)
        w = betas * lengths / 6.0
        r_rows = np.concatenate([segs[:, 0], segs[:, 0], segs[:, 1], segs[:, 1]])
        r_cols = np.concatenate([segs[:, 0], segs[:, 1], segs[:, 0], segs[:, 1]])
        r_vals = np.concatenate([2.0 * w, w, w, 2.0 * w])
        robin = sp.coo_matrix((r_vals, (r_rows, r_cols)), shape=(n, n)).tocsr()
    else:
        robin = sp.csr_matrix((n, n))

    dirichlet = mesh.dirichlet_nodes()
    if len(dirichlet) == 0:
        raise MissingTag("mesh has no dirichlet segments")
    return HeatOperators(mesh=mesh, mass=mass, stiffness=stiffness, robin=robin,
                         kappa=kappa, dirichlet_nodes=dirichlet,
                         dirichlet_value=float(u_d), source=source)


def solve_forward(ops: HeatOperators, horizon=T_DEFAULT,
                  n_steps=N_STEPS_DEFAULT, tol=1e-10) -> Trajectory:
    """Backward-Euler solve of the forward problem from a zero initial state.

    Dirichlet values are imposed from the first step; the t = 0 snapshot
    keeps the (incompatible) zeros of the initial condition.
    """
    tau = horizon / n_steps
    n = len(ops.mesh.nodes)
    free, a_ff, a_fc = ops.reduced_system(tau)
    lift = a_fc @ np.full(len(ops.dirichlet_nodes), ops.dirichlet_value)

    values = np.zeros((n_steps + 1, n))
    times = np.linspace(0.0, horizon, n_steps + 1)
    u = np.zeros(n)
    guess = None
    for m in range(1, n_steps + 1):
        rhs = (ops.mass @ u)[free] - lift
        if ops.source is not None:
            rhs = rhs + tau * (ops.mass @ np.asarray(ops.source(times[m])))[free]
        guess = cg_solve(a_ff, rhs, tol=tol, x0=guess)
        u = np.zeros(n)
        u[free] = guess
        u[ops.dirichlet_nodes] = ops.dirichlet_value
        values[m] = u
    return Trajectory(times=times, values=values)


def _sensitivity_element_data(ops, vfield):
    mesh = ops.mesh
    support = vfield.support
    tris = mesh.triangles[support]
    g, area = p1_gradients(mesh.nodes, tris)
    v = vfield.values[tris]
    jac = np.einsum("eia,eib->eab", v, g)          # DV
    div = jac[:, 0, 0] + jac[:, 1, 1]
    a_v = jac + np.transpose(jac, (0, 2, 1))
    a_v[:, 0, 0] -= div
    a_v[:, 1, 1] -= div
    kappa = ops.kappa[support]
    return tris, g, area, a_v, div, kappa


def _sensitivity_rhs(u_now, u_prev, tau, tris, g, area, a_v, div, kappa, n):
    """Nodal load of the material-derivative equation at one time level."""
    udot = (u_now[tris] - u_prev[tris]) / tau      # (e, 3)
    grad_u = np.einsum("ei,eia->ea", u_now[tris], g)
    flux = np.einsum("eba,eb->ea", a_v, grad_u)    # A_V^T grad u
    term_flux = (kappa * area)[:, None] * np.einsum("ea,eia->ei", flux, g)
    mass_udot = (area / 12.0)[:, None] * (udot + udot.sum(axis=1, keepdims=True))
    term_div = -div[:, None] * mass_udot
    rhs = np.zeros(n)
    np.add.at(rhs, tris, term_flux + term_div)
    return rhs


def solve_sensitivity(ops: HeatOperators, forward: Trajectory,
                      vfield: VelocityField, tol=1e-10) -> Trajectory:
    """Material derivative of the forward trajectory along a velocity field.

    Same left-hand operator as the forward solve with homogeneous Dirichlet
    data; starts from zero.
    """
    tau = forward.tau
    n = len(ops.mesh.nodes)
    free, a_ff, _ = ops.reduced_system(tau)
    tris, g, area, a_v, div, kappa = _sensitivity_element_data(ops, vfield)

    n_steps = len(forward.times) - 1
    values = np.zeros((n_steps + 1, n))
    du = np.zeros(n)
    guess = None
    for m in range(1, n_steps + 1):
        load = _sensitivity_rhs(forward.values[m], forward.values[m - 1], tau,
                                tris, g, area, a_v, div, kappa, n)
        rhs = (ops.mass @ du)[free] + tau * load[free]
        guess = cg_solve(a_ff, rhs, tol=tol, x0=guess)
        du = np.zeros(n)
        du[free] = guess
        values[m] = du
    return Trajectory(times=forward.times.copy(), values=values)


def displaced_mesh(mesh: Mesh, vfield: VelocityField, step: float) -> Mesh:
    """Copy of the mesh with nodes moved by step * V; connectivity and tags
    are unchanged. Raises MeshInversion when an element area turns
    non-positive."""
    moved = mesh.nodes + step * vfield.values
    pts = moved[mesh.triangles]
    areas = 0.5 * ((pts[:, 1, 0] - pts[:, 0, 0]) * (pts[:, 2, 1] - pts[:, 0, 1])
                   - (pts[:, 1, 1] - pts[:, 0, 1]) * (pts[:, 2, 0] - pts[:, 0, 0]))
    if areas.min() <= 0.0:
        raise MeshInversion(f"displacement step {step} inverts an element")
    return Mesh(
        nodes=moved,
        triangles=mesh.triangles,
        regions=mesh.regions,
        seg_nodes=mesh.seg_nodes,
        seg_kind=mesh.seg_kind,
        seg_ref=mesh.seg_ref,
        seg_beta=mesh.seg_beta,
        patches=mesh.patches,
    )


def fd_material_derivative_oracle(mesh: Mesh, vfield: VelocityField, tau_fd,
                                  kappa_bulk=KAPPA_BULK_DEFAULT,
                                  kappa_inc=KAPPA_INC_DEFAULT,
                                  beta=None, u_d=U_DIRICHLET_DEFAULT,
                                  horizon=T_DEFAULT, n_steps=N_STEPS_DEFAULT,
                                  central=False, tol=1e-12) -> Trajectory:
    """Finite-difference material derivative via node displacement.

    Solves the forward problem on meshes with nodes moved by +tau_fd (and
    -tau_fd for the central variant) along V and differences the nodal
    trajectories; identical connectivity makes the nodal difference exactly
    the material derivative's finite difference.
    """
    def solve_on(m):
        ops = assemble_heat(m, kappa_bulk=kappa_bulk, kappa_inc=kappa_inc,
                            beta=beta, u_d=u_d)
        return solve_forward(ops, horizon=horizon, n_steps=n_steps, tol=tol)

    plus = solve_on(displaced_mesh(mesh, vfield, tau_fd))
    if central:
        minus = solve_on(displaced_mesh(mesh, vfield, -tau_fd))
        diff = (plus.values - minus.values) / (2.0 * tau_fd)
    else:
        base = solve_on(mesh)
        diff = (plus.values - base.values) / tau_fd
    return Trajectory(times=plus.times, values=diff)


def mass_norm(ops: HeatOperators, vec):
    """Discrete L2 norm induced by the mass matrix."""
    return float(np.sqrt(vec @ (ops.mass @ vec)))
