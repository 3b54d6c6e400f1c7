"""Measurement operators, correlated-noise covariance, and Fisher
information assembly.

Each sensor patch carries the discrete second-order operator
``a0 * K + a1 * M`` (natural boundary conditions, lumped patch mass) whose
square is the inverse covariance of the distributed measurement. The
elementary information matrix of sensor k at instant l is the Gram matrix of
the whitened sensitivity restrictions; the combined matrix is their weighted
sum in a fixed (sensor, instant) row-major enumeration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CacheMismatch, DimensionMismatch, InstantOutOfRange
from .mesh import Mesh, Patch, extract_patch
from .fem import p1_gradients

ALPHA0_DEFAULT = 0.01
ALPHA1_DEFAULT = 1.0


@dataclass
class SensorModel:
    """Discrete noise operator of one measurement patch."""

    patch: Patch
    alpha0: float
    alpha1: float
    stiffness: sp.csr_matrix     # patch Laplacian, natural BCs, local numbering
    lumped_mass: np.ndarray      # diagonal patch mass

    def restrict(self, nodal):
        """Restrict a global nodal field to patch-local numbering."""
        return nodal[self.patch.nodes]


def build_sensor_model(mesh: Mesh, sensor_id: int,
                       alpha0=ALPHA0_DEFAULT, alpha1=ALPHA1_DEFAULT) -> SensorModel:
    if alpha0 <= 0.0 or alpha1 <= 0.0:
        raise ValueError("covariance parameters must be positive")
    patch = extract_patch(mesh, f"sensor:{sensor_id}")
    tris = patch.local_triangles()
    g, area = p1_gradients(mesh.nodes[patch.nodes], tris)
    n = len(patch.nodes)
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    vals = np.einsum("e,eia,eja->eij", area, g, g).reshape(len(tris), 9).ravel()
    stiffness = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    lumped = np.zeros(n)
    np.add.at(lumped, tris.ravel(), np.repeat(area / 3.0, 3))
    return SensorModel(patch=patch, alpha0=alpha0, alpha1=alpha1,
                       stiffness=stiffness, lumped_mass=lumped)


def build_sensor_models(mesh: Mesh, alpha0=ALPHA0_DEFAULT,
                        alpha1=ALPHA1_DEFAULT):
    return [build_sensor_model(mesh, k, alpha0, alpha1) for k in mesh.sensor_ids()]


def apply_precision_root(sensor: SensorModel, local_field):
    """Apply the discrete covariance-root inverse: M^-1 (a0 K + a1 M) f."""
    out = sensor.alpha0 * (sensor.stiffness @ local_field) \
        + sensor.alpha1 * (sensor.lumped_mass * local_field)
    return out / sensor.lumped_mass


@dataclass
class FimTensor:
    """Elementary information matrices for every (sensor, instant) pair."""

    matrices: np.ndarray         # (n_obs, n_time, n_basis, n_basis)
    gramian: np.ndarray          # shape-metric Gramian of the basis
    instants: np.ndarray         # trajectory step index per instant
    alpha0: float
    alpha1: float

    @property
    def n_obs(self):
        return self.matrices.shape[0]

    @property
    def n_time(self):
        return self.matrices.shape[1]

    @property
    def n_basis(self):
        return self.matrices.shape[2]

    @property
    def n_weights(self):
        return self.n_obs * self.n_time

    def flat(self):
        """Matrices in the fixed (sensor, instant) row-major enumeration."""
        return self.matrices.reshape(self.n_weights, self.n_basis, self.n_basis)


def elementary_fims(sensitivities, sensors, instants, gramian) -> FimTensor:
    """Assemble the elementary FIM of every sensor/instant pair.

    `sensitivities` lists one Trajectory per basis field; `instants` are
    indices into the shared time grid.
    """
    n_basis = len(sensitivities)
    n_steps = len(sensitivities[0].times) - 1
    instants = np.asarray(instants, dtype=int)
    if len(instants) and (instants.min() < 0 or instants.max() > n_steps):
        raise InstantOutOfRange(
            f"instants must lie in [0, {n_steps}], got {instants.min()}..{instants.max()}")
    for traj in sensitivities:
        if len(traj.times) - 1 != n_steps:
            raise ValueError("sensitivity trajectories disagree on the time grid")

    mats = np.zeros((len(sensors), len(instants), n_basis, n_basis))
    for k, sensor in enumerate(sensors):
        sqrt_mass = np.sqrt(sensor.lumped_mass)
        for li, step in enumerate(instants):
            whitened = np.empty((len(sensor.patch.nodes), n_basis))
            for i, traj in enumerate(sensitivities):
                local = sensor.restrict(traj.values[step])
                whitened[:, i] = apply_precision_root(sensor, local) * sqrt_mass
            upper = np.triu(whitened.T @ whitened)
            mats[k, li] = upper + np.triu(upper, 1).T
    return FimTensor(matrices=mats, gramian=np.asarray(gramian, dtype=float),
                     instants=instants, alpha0=sensors[0].alpha0 if sensors else ALPHA0_DEFAULT,
                     alpha1=sensors[0].alpha1 if sensors else ALPHA1_DEFAULT)


def _weights_of(design):
    return np.asarray(getattr(design, "weights", design), dtype=float)


def combine(design, tensor: FimTensor):
    """Combined FIM: the weighted sum of elementary matrices.

    Zero weights are skipped; summation order is the fixed enumeration, so
    the result is bitwise reproducible.
    """
    w = _weights_of(design)
    flat = tensor.flat()
    if w.shape != (len(flat),):
        raise DimensionMismatch(f"got {w.shape[0]} weights for {len(flat)} matrices")
    nz = np.flatnonzero(w)
    if len(nz) == 0:
        return np.zeros((tensor.n_basis, tensor.n_basis))
    return np.tensordot(w[nz], flat[nz], axes=1)


def aggregate_spatial(tensor: FimTensor):
    """Per-sensor information summed over all instants: (n_obs, nb, nb)."""
    return tensor.matrices.sum(axis=1)


def spatial_tensor(tensor: FimTensor) -> FimTensor:
    """Tensor view of the spatial-only problem (one synthetic instant)."""
    mats = aggregate_spatial(tensor)[:, None, :, :]
    return FimTensor(matrices=mats, gramian=tensor.gramian,
                     instants=np.array([-1]), alpha0=tensor.alpha0,
                     alpha1=tensor.alpha1)


# -- tensor cache -------------------------------------------------------------

_MAGIC = "fim-tensor"


def save_tensor(tensor: FimTensor, path, config_hash=""):
    """Write the tensor cache: one JSON header line + float64 LE payload."""
    header = {
        "format": _MAGIC,
        "version": 1,
        "dims": [tensor.n_obs, tensor.n_time, tensor.n_basis],
        "alpha0": tensor.alpha0,
        "alpha1": tensor.alpha1,
        "instants": [int(i) for i in tensor.instants],
        "config_hash": config_hash,
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(tensor.matrices, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(tensor.gramian, dtype="<f8").tobytes())


def load_tensor(path, expect_hash=None) -> FimTensor:
    """Read a tensor cache; raises CacheMismatch when the stored hash
    differs from `expect_hash`."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("format") != _MAGIC:
            raise CacheMismatch(f"{path} is not a FIM tensor cache")
        if expect_hash is not None and header["config_hash"] != expect_hash:
            raise CacheMismatch("tensor cache was built from a different config")
        n_obs, n_time, n_basis = header["dims"]
        count = n_obs * n_time * n_basis * n_basis
        payload = np.frombuffer(fh.read(), dtype="<f8")
        if len(payload) != count + n_basis * n_basis:
            raise CacheMismatch("tensor cache payload is truncated")
        mats = payload[:count].reshape(n_obs, n_time, n_basis, n_basis).copy()
        gram = payload[count:].reshape(n_basis, n_basis).copy()
    return FimTensor(matrices=mats, gramian=gram,
                     instants=np.asarray(header["instants"], dtype=int),
                     alpha0=float(header["alpha0"]), alpha1=float(header["alpha1"]))
