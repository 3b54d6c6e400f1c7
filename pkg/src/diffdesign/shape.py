"""Interface curve, normal-field basis, and elasticity extension into the
hold-all.

The interface polygon is recovered from the mesh's region-contrast edges and
parametrized by arc length from the lexicographically smallest vertex. Basis
fields are Gaussian bumps of the arc-length geodesic distance times the
outward vertex normal, plus one constant normal field. Each boundary field is
extended to a displacement field on the hold-all closure by solving a linear
elasticity problem with zero Dirichlet data on the hold-all boundary; the
shape metric is the integral of the gradient contraction of two extended
fields over the hold-all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import (
    CentersOutOfRange,
    DisconnectedGraph,
    MultipleLoops,
    OpenLoop,
)
from .mesh import Mesh
from .numerics import cg_solve

LAME_LAMBDA_DEFAULT = 0.01
LAME_MU_DEFAULT = 0.495
SLOPE_DEFAULT = 100.0


@dataclass
class InterfaceCurve:
    """Closed interface loop with arc-length parameters and outward normals."""

    mesh: Mesh
    vertices: np.ndarray      # ordered node ids, start = lexicographic minimum
    arc: np.ndarray           # arc-length parameter per vertex, arc[0] = 0
    normals: np.ndarray       # unit outward normals (inclusion -> bulk)
    length: float

    def coords(self):
        return self.mesh.nodes[self.vertices]


@dataclass
class BoundaryField:
    """Per-interface-vertex vectors, each parallel to the vertex normal."""

    curve: InterfaceCurve
    amplitudes: np.ndarray    # signed amplitude along the outward normal

    @property
    def values(self):
        return self.amplitudes[:, None] * self.curve.normals


@dataclass
class VelocityField:
    """Nodal displacement field supported on the hold-all closure."""

    mesh: Mesh
    values: np.ndarray        # (n_nodes, 2)
    support: np.ndarray       # element ids carrying the field


def interface_from_mesh(mesh: Mesh) -> InterfaceCurve:
    """Extract the closed interface loop between inclusion and bulk.

    Raises OpenLoop when interface edges do not close and MultipleLoops for
    more than one component. The loop is oriented counter-clockwise around
    the inclusion and starts at the lexicographically smallest vertex.
    """
    segs = mesh.seg_nodes[mesh.seg_kind == "interface"]
    if len(segs) == 0:
        raise OpenLoop("mesh has no interface edges")
    neighbors = {}
    for u, v in segs:
        neighbors.setdefault(int(u), []).append(int(v))
        neighbors.setdefault(int(v), []).append(int(u))
    if any(len(adj) != 2 for adj in neighbors.values()):
        raise OpenLoop("interface edges do not form a closed loop")

    start = min(neighbors, key=lambda i: (mesh.nodes[i, 0], mesh.nodes[i, 1]))
    loop = [start]
    prev, cur = None, start
    while True:
        a, b = neighbors[cur]
        nxt = b if a == prev else a
        if nxt == start:
            break
        loop.append(nxt)
        prev, cur = cur, nxt
        if len(loop) > len(neighbors):
            raise MultipleLoops("interface edges contain a sub-loop")
    if len(loop) != len(neighbors):
        raise MultipleLoops("interface has more than one closed loop")

    vertices = np.asarray(loop, dtype=int)
    pts = mesh.nodes[vertices]
    signed = 0.5 * np.sum(pts[:, 0] * np.roll(pts[:, 1], -1)
                          - np.roll(pts[:, 0], -1) * pts[:, 1])
    if signed < 0.0:
        vertices = np.concatenate([[vertices[0]], vertices[1:][::-1]])
        pts = mesh.nodes[vertices]

    diffs = np.roll(pts, -1, axis=0) - pts
    seg_len = np.hypot(diffs[:, 0], diffs[:, 1])
    arc = np.concatenate([[0.0], np.cumsum(seg_len[:-1])])
    length = float(seg_len.sum())

    # vertex normal: mean of the two adjacent edge normals (CCW loop ->
    # outward normal of edge d is (d_y, -d_x))
    edge_normals = np.column_stack([diffs[:, 1], -diffs[:, 0]])
    edge_normals /= np.linalg.norm(edge_normals, axis=1, keepdims=True)
    vertex_normals = edge_normals + np.roll(edge_normals, 1, axis=0)
    vertex_normals /= np.linalg.norm(vertex_normals, axis=1, keepdims=True)

    return InterfaceCurve(mesh=mesh, vertices=vertices, arc=arc,
                          normals=vertex_normals, length=length)


def wraparound_distance(r, centers, length):
    """Arc-length geodesic distance on a closed loop, min(|r-c|, L-|r-c|)."""
    d = np.abs(np.subtract.outer(r, centers))
    return np.minimum(d, length - d)


def gaussian_bump_basis(curve: InterfaceCurve, n_basis: int,
                        slope: float = SLOPE_DEFAULT, centers=None):
    """Bump fields exp(-slope * d(r, r_i)^2) plus one constant normal field.

    `centers` lists the arc-length positions of the n_basis - 1 bumps;
    omitted centers default to equidistant positions starting at 0.
    """
    if n_basis < 1:
        raise ValueError("need at least one basis field")
    if centers is None:
        centers = [i * curve.length / (n_basis - 1) for i in range(n_basis - 1)] \
            if n_basis > 1 else []
    centers = np.asarray(centers, dtype=float)
    if len(centers) != n_basis - 1:
        raise ValueError(f"expected {n_basis - 1} centers, got {len(centers)}")
    if len(centers) and (centers.min() < 0.0 or centers.max() >= curve.length):
        raise CentersOutOfRange(f"centers must lie in [0, {curve.length})")
    if slope <= 0.0:
        raise ValueError("slope factor must be positive")

    fields = []
    for c in centers:
        d = wraparound_distance(curve.arc, np.array([c]), curve.length)[:, 0]
        fields.append(BoundaryField(curve, np.exp(-slope * d * d)))
    fields.append(BoundaryField(curve, np.ones(len(curve.vertices))))
    return fields


def graph_geodesics(arg):
    """All-pairs shortest path distances via Floyd-Warshall.

    Accepts an InterfaceCurve (loop graph weighted by segment length) or a
    tuple (n_nodes, edges) with edges (i, j, weight). Raises
    DisconnectedGraph when some pair is unreachable.
    """
    if isinstance(arg, InterfaceCurve):
        pts = arg.coords()
        n = len(pts)
        d = np.roll(pts, -1, axis=0) - pts
        w = np.hypot(d[:, 0], d[:, 1])
        edges = [(i, (i + 1) % n, w[i]) for i in range(n)]
    else:
        n, edges = arg
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for i, j, w in edges:
        if w <= 0.0:
            raise ValueError("edge weights must be positive")
        dist[i, j] = min(dist[i, j], w)
        dist[j, i] = min(dist[j, i], w)
    for k in range(n):
        np.minimum(dist, dist[:, k, None] + dist[None, k, :], out=dist)
    if np.isinf(dist).any():
        raise DisconnectedGraph("graph has unreachable node pairs")
    return dist


def farthest_point_centers(dist, n_centers, seed=0):
    """Greedy center set maximizing the minimum pairwise distance.

    Starting from {seed}, repeatedly adds the point maximizing the minimum
    pairwise distance of the augmented set; ties break to the lowest vertex
    id, so the result is deterministic.
    """
    n = dist.shape[0]
    if n_centers > n:
        raise ValueError("more centers than graph nodes")
    chosen = [int(seed)]
    min_pairwise = math.inf
    min_to_set = dist[seed].copy()
    for _ in range(n_centers - 1):
        candidate_score = np.minimum(min_to_set, min_pairwise)
        candidate_score[chosen] = -math.inf
        best = int(np.argmax(candidate_score))
        min_pairwise = min(min_pairwise, float(min_to_set[best]))
        chosen.append(best)
        np.minimum(min_to_set, dist[best], out=min_to_set)
    return chosen


def _holdall_boundary_nodes(mesh):
    segs = mesh.seg_nodes[mesh.seg_kind == "holdall"]
    return np.unique(segs)


def _elasticity_matrix(mesh, elements, lam, mu):
    """P1 elasticity stiffness on the given elements, dofs interleaved (x,y)."""
    tris = mesh.triangles[elements]
    pts = mesh.nodes[tris]
    e1 = pts[:, 1] - pts[:, 0]
    e2 = pts[:, 2] - pts[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * det
    # P1 gradients: g[e, i, :] = grad of basis function at local node i
    g = np.empty((len(tris), 3, 2))
    g[:, 1, 0] = e2[:, 1] / det
    g[:, 1, 1] = -e2[:, 0] / det
    g[:, 2, 0] = -e1[:, 1] / det
    g[:, 2, 1] = e1[:, 0] / det
    g[:, 0, :] = -g[:, 1, :] - g[:, 2, :]

    dots = np.einsum("eik,ejk->eij", g, g)
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            for a in range(2):
                for b in range(2):
                    kij = mu * g[:, i, b] * g[:, j, a] + lam * g[:, i, a] * g[:, j, b]
                    if a == b:
                        kij = kij + mu * dots[:, i, j]
                    rows.append(2 * tris[:, i] + a)
                    cols.append(2 * tris[:, j] + b)
                    vals.append(area * kij)
    n_dof = 2 * len(mesh.nodes)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_dof, n_dof),
    )
    return mat.tocsr()


def extend_velocity(mesh: Mesh, bfield: BoundaryField,
                    lam: float = LAME_LAMBDA_DEFAULT,
                    mu: float = LAME_MU_DEFAULT,
                    tol: float = 1e-10) -> VelocityField:
    """Extend a boundary field into the hold-all by linear elasticity.

    Dirichlet data: the boundary field on interface vertices, zero on the
    hold-all boundary. The result is zero outside the hold-all closure.
    """
    support = mesh.patches["holdall-closure"]
    stiff = _elasticity_matrix(mesh, support, lam, mu)

    values = np.zeros((len(mesh.nodes), 2))
    curve = bfield.curve
    values[curve.vertices] = bfield.values

    fixed_nodes = np.unique(np.concatenate([curve.vertices,
                                            _holdall_boundary_nodes(mesh)]))
    involved = np.unique(mesh.triangles[support])
    free_nodes = np.setdiff1d(involved, fixed_nodes)
    if len(free_nodes) == 0:
        return VelocityField(mesh, values, support)
    free = np.column_stack([2 * free_nodes, 2 * free_nodes + 1]).ravel()
    fixed = np.column_stack([2 * fixed_nodes, 2 * fixed_nodes + 1]).ravel()

    flat = values.ravel()
    rhs = -stiff[free][:, fixed] @ flat[fixed]
    sol = cg_solve(stiff[free][:, free], rhs, tol=tol)
    flat = flat.copy()
    flat[free] = sol
    return VelocityField(mesh, flat.reshape(-1, 2), support)


def velocity_gradients(field: VelocityField):
    """Element-wise Jacobians DV (constant per element) on the support."""
    mesh = field.mesh
    tris = mesh.triangles[field.support]
    pts = mesh.nodes[tris]
    e1 = pts[:, 1] - pts[:, 0]
    e2 = pts[:, 2] - pts[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    g = np.empty((len(tris), 3, 2))
    g[:, 1, 0] = e2[:, 1] / det
    g[:, 1, 1] = -e2[:, 0] / det
    g[:, 2, 0] = -e1[:, 1] / det
    g[:, 2, 1] = e1[:, 0] / det
    g[:, 0, :] = -g[:, 1, :] - g[:, 2, :]
    v = field.values[tris]                       # (e, 3, 2)
    jac = np.einsum("eia,eib->eab", v, g)        # DV[a,b] = dV_a / dx_b
    return jac, 0.5 * det


def gramian(fields):
    """Shape-metric Gramian B_ij = integral over the hold-all of
    grad V_i : grad V_j, assembled element-wise."""
    if not fields:
        raise ValueError("no fields given")
    mesh = fields[0].mesh
    jacs = []
    areas = None
    for f in fields:
        if f.mesh is not mesh:
            raise ValueError("fields live on different meshes")
        jac, areas = velocity_gradients(f)
        jacs.append(jac)
    n = len(fields)
    b = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            val = float(np.sum(areas * np.einsum("eab,eab->e", jacs[i], jacs[j])))
            b[i, j] = val
            b[j, i] = val
    return b
