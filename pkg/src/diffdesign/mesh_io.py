"""Mesh file exchange: Gmsh MSH 2.2 ASCII subset and VTK legacy ASCII.

Physical ids used in MSH files (and expected back on load):

    triangles: 1 plain bulk, 2 inclusion, 3 hold-all annulus, 100+k sensor k
    lines:     11 dirichlet, 12 interface, 13 hold-all boundary,
               19 robin (default beta), 20+i robin span i, 30+k sensor k edge

Floats are written with ``repr`` (shortest round-trip), so identical meshes
produce byte-identical files.
"""

from __future__ import annotations

import numpy as np

from .errors import ParseError, UnsupportedVersion
from .mesh import Mesh

_TRI_BULK = 1
_TRI_INCLUSION = 2
_TRI_ANNULUS = 3
_TRI_SENSOR_BASE = 100

_LINE_DIRICHLET = 11
_LINE_INTERFACE = 12
_LINE_HOLDALL = 13
_LINE_ROBIN_DEFAULT = 19
_LINE_ROBIN_BASE = 20
_LINE_SENSOR_BASE = 30


def _fmt(x):
    return repr(float(x))


def _triangle_physical(mesh, t):
    if mesh.regions[t] == 1:
        return _TRI_INCLUSION
    for name, elems in mesh.patches.items():
        if name.startswith("sensor:") and t in elems:
            return _TRI_SENSOR_BASE + int(name.split(":", 1)[1])
    if t in mesh.patches.get("holdall", ()):
        return _TRI_ANNULUS
    return _TRI_BULK


def _line_physical(kind, ref):
    if kind == "dirichlet":
        return _LINE_DIRICHLET
    if kind == "interface":
        return _LINE_INTERFACE
    if kind == "holdall":
        return _LINE_HOLDALL
    if kind == "robin":
        return _LINE_ROBIN_DEFAULT if ref < 0 else _LINE_ROBIN_BASE + ref
    if kind == "sensor":
        return _LINE_SENSOR_BASE + ref
    raise ValueError(f"unknown segment kind {kind!r}")


def write_msh(mesh: Mesh, path):
    """Write the mesh in Gmsh MSH 2.2 ASCII format."""
    annulus = set(mesh.patches.get("holdall", np.empty(0, dtype=int)).tolist())
    sensor_of = {}
    for name, elems in mesh.patches.items():
        if name.startswith("sensor:"):
            k = int(name.split(":", 1)[1])
            for t in elems.tolist():
                sensor_of[t] = k

    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(len(mesh.nodes))]
    for i, (x, y) in enumerate(mesh.nodes, start=1):
        lines.append(f"{i} {_fmt(x)} {_fmt(y)} 0.0")
    lines.append("$EndNodes")

    n_elem = len(mesh.seg_nodes) + len(mesh.triangles)
    lines.append("$Elements")
    lines.append(str(n_elem))
    eid = 1
    for (u, v), kind, ref in zip(mesh.seg_nodes, mesh.seg_kind, mesh.seg_ref):
        phys = _line_physical(str(kind), int(ref))
        lines.append(f"{eid} 1 2 {phys} {phys} {u + 1} {v + 1}")
        eid += 1
    for t, (a, b, c) in enumerate(mesh.triangles):
        if mesh.regions[t] == 1:
            phys = _TRI_INCLUSION
        elif t in sensor_of:
            phys = _TRI_SENSOR_BASE + sensor_of[t]
        elif t in annulus:
            phys = _TRI_ANNULUS
        else:
            phys = _TRI_BULK
        lines.append(f"{eid} 2 2 {phys} {phys} {a + 1} {b + 1} {c + 1}")
        eid += 1
    lines.append("$EndElements")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_msh(path, robin_betas=None) -> Mesh:
    """Read a Gmsh MSH 2.2 ASCII file written with the physical ids above.

    `robin_betas` optionally maps robin span index -> beta value; segments
    tagged with unknown physical ids raise ParseError.
    """
    with open(path, encoding="ascii") as fh:
        raw = fh.read().splitlines()

    def expect(lineno, text):
        if lineno >= len(raw) or raw[lineno].strip() != text:
            raise ParseError(f"expected {text!r}", line=lineno + 1)

    expect(0, "$MeshFormat")
    parts = raw[1].split()
    if not parts or parts[0] not in ("2.2",):
        raise UnsupportedVersion(f"MSH version {parts[0] if parts else '?'} unsupported")
    expect(2, "$EndMeshFormat")
    expect(3, "$Nodes")
    try:
        n_nodes = int(raw[4])
    except (IndexError, ValueError):
        raise ParseError("bad node count", line=5)

    id_map = {}
    coords = []
    for k in range(n_nodes):
        lineno = 5 + k
        try:
            fields = raw[lineno].split()
            nid = int(fields[0])
            x, y = float(fields[1]), float(fields[2])
        except (IndexError, ValueError):
            raise ParseError("bad node line", line=lineno + 1)
        id_map[nid] = len(coords)
        coords.append((x, y))
    expect(5 + n_nodes, "$EndNodes")
    expect(6 + n_nodes, "$Elements")
    try:
        n_elem = int(raw[7 + n_nodes])
    except (IndexError, ValueError):
        raise ParseError("bad element count", line=8 + n_nodes)

    triangles, tri_phys = [], []
    segs, seg_phys = [], []
    for k in range(n_elem):
        lineno = 8 + n_nodes + k
        try:
            fields = [int(f) for f in raw[lineno].split()]
            etype, ntags = fields[1], fields[2]
            phys = fields[3] if ntags >= 1 else 0
            conn = fields[3 + ntags:]
        except (IndexError, ValueError):
            raise ParseError("bad element line", line=lineno + 1)
        if etype == 1:
            if len(conn) != 2:
                raise ParseError("2-node line expected", line=lineno + 1)
            segs.append((id_map[conn[0]], id_map[conn[1]]))
            seg_phys.append(phys)
        elif etype == 2:
            if len(conn) != 3:
                raise ParseError("3-node triangle expected", line=lineno + 1)
            triangles.append((id_map[conn[0]], id_map[conn[1]], id_map[conn[2]]))
            tri_phys.append(phys)
        else:
            raise ParseError(f"unsupported element type {etype}", line=lineno + 1)
    expect(8 + n_nodes + n_elem, "$EndElements")

    triangles = np.asarray(triangles, dtype=int).reshape(-1, 3)
    tri_phys = np.asarray(tri_phys, dtype=int)
    regions = (tri_phys == _TRI_INCLUSION).astype(int)

    seg_kind, seg_ref, seg_beta = [], [], []
    for phys in seg_phys:
        if phys == _LINE_DIRICHLET:
            seg_kind.append("dirichlet"); seg_ref.append(-1); seg_beta.append(0.0)
        elif phys == _LINE_INTERFACE:
            seg_kind.append("interface"); seg_ref.append(-1); seg_beta.append(0.0)
        elif phys == _LINE_HOLDALL:
            seg_kind.append("holdall"); seg_ref.append(-1); seg_beta.append(0.0)
        elif phys == _LINE_ROBIN_DEFAULT:
            seg_kind.append("robin"); seg_ref.append(-1); seg_beta.append(0.0)
        elif _LINE_ROBIN_BASE <= phys < _LINE_SENSOR_BASE:
            i = phys - _LINE_ROBIN_BASE
            beta = float(robin_betas[i]) if robin_betas else 0.0
            seg_kind.append("robin"); seg_ref.append(i); seg_beta.append(beta)
        elif phys >= _LINE_SENSOR_BASE and phys < _TRI_SENSOR_BASE:
            seg_kind.append("sensor"); seg_ref.append(phys - _LINE_SENSOR_BASE); seg_beta.append(0.0)
        else:
            raise ParseError(f"unknown line physical id {phys}")

    mesh = Mesh(
        nodes=np.asarray(coords, dtype=float),
        triangles=triangles,
        regions=regions,
        seg_nodes=np.asarray(segs, dtype=int).reshape(-1, 2),
        seg_kind=np.asarray(seg_kind, dtype="U9"),
        seg_ref=np.asarray(seg_ref, dtype=int),
        seg_beta=np.asarray(seg_beta, dtype=float),
    )
    mesh.patches["holdall"] = np.flatnonzero(tri_phys == _TRI_ANNULUS)
    mesh.patches["holdall-closure"] = np.flatnonzero(
        (tri_phys == _TRI_ANNULUS) | (tri_phys == _TRI_INCLUSION))
    for k in sorted(set(int(p) - _TRI_SENSOR_BASE for p in tri_phys if p >= _TRI_SENSOR_BASE)):
        mesh.patches[f"sensor:{k}"] = np.flatnonzero(tri_phys == _TRI_SENSOR_BASE + k)
    return mesh


def write_vtk(mesh: Mesh, fields, path, title="diffdesign"):
    """Write a legacy ASCII VTK unstructured grid with point data.

    `fields` maps names to nodal arrays: shape (n,) scalars or (n, 2)
    vectors (padded with a zero z component). Triangle regions are written
    as cell data.
    """
    n = len(mesh.nodes)
    m = len(mesh.triangles)
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    for x, y in mesh.nodes:
        out.append(f"{_fmt(x)} {_fmt(y)} 0.0")
    out.append(f"CELLS {m} {4 * m}")
    for a, b, c in mesh.triangles:
        out.append(f"3 {a} {b} {c}")
    out.append(f"CELL_TYPES {m}")
    out.extend(["5"] * m)

    if fields:
        out.append(f"POINT_DATA {n}")
        for name, values in fields.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(_fmt(v) for v in values)
            else:
                out.append(f"VECTORS {name} double")
                out.extend(f"{_fmt(v[0])} {_fmt(v[1])} 0.0" for v in values)
    out.append(f"CELL_DATA {m}")
    out.append("SCALARS region int 1")
    out.append("LOOKUP_TABLE default")
    out.extend(str(int(r)) for r in mesh.regions)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")
