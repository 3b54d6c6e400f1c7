"""Conforming triangulations of the unit square with tagged subdomains.

The generator is an incremental Bowyer-Watson triangulator with constrained
edges (recovered by Sloan-style edge flips) and Ruppert-style refinement:
triangles below the angle bound or above the target edge length are split at
their circumcenters, and constrained segments whose diametral circle is
encroached are split at their midpoints. All processing orders are fixed by
creation index, so the same input always yields the same mesh.

Tagged entities:
  triangle regions  -> bulk / inclusion (centroid-in-polygon test)
  boundary segments -> dirichlet, robin (with per-segment beta), holdall,
                       sensor(id), interface
  element patches   -> per-sensor lists, hold-all annulus, hold-all closure
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConstraintCrossing,
    DegenerateInput,
    RefinementBudgetExceeded,
    UnknownTag,
)

_MERGE_TOL = 1e-12
_ON_TOL = 1e-9


def _orient(a, b, c):
    """Twice the signed area of triangle (a, b, c); positive when CCW."""
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _circumcenter(a, b, c):
    d = 2.0 * _orient(a, b, c)
    a2 = a[0] * a[0] + a[1] * a[1]
    b2 = b[0] * b[0] + b[1] * b[1]
    c2 = c[0] * c[0] + c[1] * c[1]
    ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d
    uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d
    return (ux, uy)


def _in_circumcircle(a, b, c, p):
    """Positive when p is inside the circumcircle of CCW triangle (a,b,c)."""
    adx, ady = a[0] - p[0], a[1] - p[1]
    bdx, bdy = b[0] - p[0], b[1] - p[1]
    cdx, cdy = c[0] - p[0], c[1] - p[1]
    ad = adx * adx + ady * ady
    bd = bdx * bdx + bdy * bdy
    cd = cdx * cdx + cdy * cdy
    det = (adx * (bdy * cd - bd * cdy)
           - ady * (bdx * cd - bd * cdx)
           + ad * (bdx * cdy - bdy * cdx))
    scale = max(ad, bd, cd, 1e-30)
    return det / scale


def _segments_cross(p1, p2, q1, q2):
    """True when segments p1p2 and q1q2 intersect in both interiors."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    eps = 1e-14
    return ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and \
           ((d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps))


def _edge_key(u, v):
    return (u, v) if u < v else (v, u)


class Triangulation:
    """Incremental triangulation with constrained edges.

    Points are immutable once inserted; triangles are keyed by creation id
    and extracted in id order, which makes every derived mesh deterministic.
    """

    def __init__(self):
        self.points = []
        self.tri_v = {}
        self.edge_tris = {}
        self.constrained = set()
        self._next_tri = 0
        self._hint = None
        self._super = ()

    # -- structure bookkeeping ------------------------------------------

    def _create(self, a, b, c):
        pa, pb, pc = self.points[a], self.points[b], self.points[c]
        if _orient(pa, pb, pc) <= 0.0:
            b, c = c, b
            if _orient(pa, self.points[b], self.points[c]) <= 0.0:
                raise DegenerateInput(f"degenerate triangle {(a, b, c)}")
        tid = self._next_tri
        self._next_tri += 1
        self.tri_v[tid] = (a, b, c)
        for u, v in ((a, b), (b, c), (c, a)):
            self.edge_tris.setdefault(_edge_key(u, v), set()).add(tid)
        self._hint = tid
        return tid

    def _remove(self, tid):
        a, b, c = self.tri_v.pop(tid)
        for u, v in ((a, b), (b, c), (c, a)):
            key = _edge_key(u, v)
            owners = self.edge_tris[key]
            owners.discard(tid)
            if not owners:
                del self.edge_tris[key]

    def _neighbor(self, tid, u, v):
        owners = self.edge_tris.get(_edge_key(u, v), ())
        for other in owners:
            if other != tid:
                return other
        return None

    def triangle_ids(self):
        return sorted(self.tri_v)

    def point_array(self):
        return np.asarray(self.points, dtype=float)

    def triangle_array(self):
        return np.array([self.tri_v[t] for t in self.triangle_ids()], dtype=int)

    def has_edge(self, u, v):
        return _edge_key(u, v) in self.edge_tris

    # -- point location ---------------------------------------------------

    def locate(self, p, max_steps=None):
        """Walk to a triangle containing p; None when p is outside the hull."""
        if not self.tri_v:
            return None
        tid = self._hint if self._hint in self.tri_v else next(iter(self.tri_v))
        if max_steps is None:
            max_steps = 4 * len(self.tri_v) + 64
        eps = -1e-13
        for _ in range(max_steps):
            a, b, c = self.tri_v[tid]
            crossed = None
            hull_exit = False
            for u, v in ((a, b), (b, c), (c, a)):
                if _orient(self.points[u], self.points[v], p) < eps:
                    nxt = self._neighbor(tid, u, v)
                    if nxt is None:
                        hull_exit = True
                        continue
                    crossed = nxt
                    break
            if crossed is not None:
                tid = crossed
                continue
            if hull_exit:
                return None
            return tid
        # numerical cycle: fall back to a full scan
        for tid in self.triangle_ids():
            a, b, c = self.tri_v[tid]
            pa, pb, pc = self.points[a], self.points[b], self.points[c]
            if (_orient(pa, pb, p) >= eps and _orient(pb, pc, p) >= eps
                    and _orient(pc, pa, p) >= eps):
                return tid
        return None

    # -- insertion ---------------------------------------------------------

    def add_point(self, p):
        self.points.append((float(p[0]), float(p[1])))
        return len(self.points) - 1

    def insert(self, idx):
        """Bowyer-Watson insertion of an already-appended point.

        The cavity never grows across constrained edges, so constraints
        survive refinement insertions.
        """
        p = self.points[idx]
        seed = self.locate(p)
        if seed is None:
            raise DegenerateInput(f"point {p} outside the triangulated domain")
        cavity = {seed}
        stack = [seed]
        while stack:
            tid = stack.pop()
            a, b, c = self.tri_v[tid]
            for u, v in ((a, b), (b, c), (c, a)):
                if _edge_key(u, v) in self.constrained:
                    continue
                other = self._neighbor(tid, u, v)
                if other is None or other in cavity:
                    continue
                oa, ob, oc = self.tri_v[other]
                if _in_circumcircle(self.points[oa], self.points[ob],
                                    self.points[oc], p) > -1e-13:
                    cavity.add(other)
                    stack.append(other)
        boundary = []
        for tid in cavity:
            a, b, c = self.tri_v[tid]
            for u, v in ((a, b), (b, c), (c, a)):
                other = self._neighbor(tid, u, v)
                # constrained edges always bound the cavity, even if both
                # of their triangles were reached around the constraint
                if other is None or other not in cavity \
                        or _edge_key(u, v) in self.constrained:
                    boundary.append((u, v))
        for tid in sorted(cavity):
            self._remove(tid)
        created = []
        for u, v in boundary:
            created.append(self._create(u, v, idx))
        return created

    # -- flips --------------------------------------------------------------

    def _flip(self, u, v):
        """Replace edge (u,v) by the opposite diagonal; returns the new edge."""
        key = _edge_key(u, v)
        owners = sorted(self.edge_tris.get(key, ()))
        if len(owners) != 2:
            return None
        t1, t2 = owners
        c = next(w for w in self.tri_v[t1] if w not in key)
        d = next(w for w in self.tri_v[t2] if w not in key)
        self._remove(t1)
        self._remove(t2)
        self._create(c, d, key[0])
        self._create(d, c, key[1])
        return _edge_key(c, d)

    def _flippable(self, u, v):
        key = _edge_key(u, v)
        owners = sorted(self.edge_tris.get(key, ()))
        if len(owners) != 2:
            return False
        t1, t2 = owners
        c = next(w for w in self.tri_v[t1] if w not in key)
        d = next(w for w in self.tri_v[t2] if w not in key)
        pc, pd = self.points[c], self.points[d]
        pu, pv = self.points[key[0]], self.points[key[1]]
        # the quad must be strictly convex: cd must cross uv properly
        return _segments_cross(pc, pd, pu, pv)

    def legalize(self, edges):
        """Lawson flips restoring the local Delaunay property."""
        queue = deque(edges)
        budget = 50 * (len(queue) + 10) * (len(queue) + 10)
        while queue and budget > 0:
            budget -= 1
            key = queue.popleft()
            if key in self.constrained or key not in self.edge_tris:
                continue
            owners = sorted(self.edge_tris[key])
            if len(owners) != 2:
                continue
            t1, t2 = owners
            a, b, c = self.tri_v[t1]
            d = next(w for w in self.tri_v[t2] if w not in key)
            if _in_circumcircle(self.points[a], self.points[b], self.points[c],
                                self.points[d]) <= 1e-13:
                continue
            if not self._flippable(*key):
                continue
            u, v = key
            self._flip(u, v)
            for w in (u, v):
                for x in self._flip_ring(w, key):
                    queue.append(x)

    def _flip_ring(self, w, flipped_key):
        ring = []
        for key, owners in self.edge_tris.items():
            if w in key and key != flipped_key:
                ring.append(key)
        return ring


def bowyer_watson(points):
    """Delaunay triangulation of a point list via incremental insertion.

    Duplicate points within 1e-12 are merged; the returned triangulation
    carries the merged point set. Raises DegenerateInput for collinear input.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegenerateInput("need at least three 2D points")
    merged, mapping = merge_close_points(pts, _MERGE_TOL)
    if len(merged) < 3:
        raise DegenerateInput("fewer than three distinct points")

    lo = merged.min(axis=0)
    hi = merged.max(axis=0)
    span = max(hi[0] - lo[0], hi[1] - lo[1], 1.0)
    cx, cy = 0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])
    r = 50.0 * span

    tr = Triangulation()
    s0 = tr.add_point((cx - 2.0 * r, cy - r))
    s1 = tr.add_point((cx + 2.0 * r, cy - r))
    s2 = tr.add_point((cx, cy + 2.0 * r))
    tr._super = (s0, s1, s2)
    tr._create(s0, s1, s2)
    for p in merged:
        idx = tr.add_point(p)
        tr.insert(idx)

    has_interior = any(
        all(v not in tr._super for v in verts) for verts in tr.tri_v.values()
    )
    if not has_interior:
        raise DegenerateInput("all points are collinear")
    tr.input_index = mapping + len(tr._super)
    return tr


def merge_close_points(pts, tol):
    """Merge points closer than tol in both coordinates.

    Returns (unique points, mapping from original index to merged index).
    """
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    kept = []
    mapping = np.empty(len(pts), dtype=int)
    for idx in order:
        p = pts[idx]
        hit = -1
        j = len(kept) - 1
        while j >= 0 and p[0] - kept[j][0] <= tol:
            if abs(p[1] - kept[j][1]) <= tol:
                hit = j
                break
            j -= 1
        if hit < 0:
            kept.append((p[0], p[1]))
            hit = len(kept) - 1
        mapping[idx] = hit
    return np.asarray(kept, dtype=float), mapping


def strip_super(tr):
    """Remove all triangles touching the synthetic bounding vertices."""
    for tid in list(tr.tri_v):
        if any(v in tr._super for v in tr.tri_v[tid]):
            tr._remove(tid)


def delaunay_triangulate(points):
    """Delaunay triangulation of the convex hull of `points`.

    Every triangle satisfies the empty-circumcircle property against every
    input point up to a 1e-12 relative slack.
    """
    tr = bowyer_watson(points)
    strip_super(tr)
    return tr


def recover_constraints(tr, segments):
    """Force each segment (pairs of point indices) to appear as an edge.

    Indices refer to the original input points handed to the triangulator.
    Raises ConstraintCrossing when two input segments intersect in their
    interiors. Flipped regions are re-legalized, so the Delaunay property
    holds away from the constraints.
    """
    segs = [(int(u), int(v)) for u, v in segments]
    remap = getattr(tr, "input_index", None)
    if remap is not None:
        segs = [(int(remap[u]), int(remap[v])) for u, v in segs]
    _validate_no_crossings(tr.point_array(), segs)
    for u, v in segs:
        _enforce_segment(tr, u, v)
    return tr


def _validate_no_crossings(pts, segs):
    if len(segs) < 2:
        return
    seg = np.asarray(segs, dtype=int)
    a = pts[seg[:, 0]]
    b = pts[seg[:, 1]]

    def orient_all(p1, p2, q):
        return ((p2[:, None, 0] - p1[:, None, 0]) * (q[None, :, 1] - p1[:, None, 1])
                - (p2[:, None, 1] - p1[:, None, 1]) * (q[None, :, 0] - p1[:, None, 0]))

    eps = 1e-14
    d1 = orient_all(a, b, a)  # d1[i, j] = orient(a_i, b_i, a_j)
    d2 = orient_all(a, b, b)
    straddles = ((d1 > eps) & (d2 < -eps)) | ((d1 < -eps) & (d2 > eps))
    proper = straddles & straddles.T
    shared = (
        (seg[:, None, 0] == seg[None, :, 0]) | (seg[:, None, 0] == seg[None, :, 1])
        | (seg[:, None, 1] == seg[None, :, 0]) | (seg[:, None, 1] == seg[None, :, 1])
    )
    proper &= ~shared
    np.fill_diagonal(proper, False)
    if proper.any():
        i, j = np.argwhere(proper)[0]
        raise ConstraintCrossing(f"segments {segs[i]} and {segs[j]} cross")


def _collinear_between(p, a, b, tol=1e-12):
    """True when p lies strictly inside segment ab (within tol)."""
    ab = (b[0] - a[0], b[1] - a[1])
    length2 = ab[0] * ab[0] + ab[1] * ab[1]
    if length2 == 0.0:
        return False
    cross = _orient(a, b, p)
    if cross * cross > tol * length2 * length2:
        return False
    t = ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / length2
    return 1e-12 < t < 1.0 - 1e-12


def _enforce_segment(tr, u, v):
    if u == v:
        return
    if tr.has_edge(u, v):
        tr.constrained.add(_edge_key(u, v))
        return
    pu, pv = tr.points[u], tr.points[v]
    # a vertex on the segment splits the constraint
    for w in range(len(tr.points)):
        if w in (u, v):
            continue
        if _collinear_between(tr.points[w], pu, pv):
            _enforce_segment(tr, u, w)
            _enforce_segment(tr, w, v)
            return
    crossing = deque(_edges_crossing(tr, u, v))
    budget = 20 * (len(crossing) + 4) ** 2 + 200
    touched = []
    while crossing:
        budget -= 1
        if budget < 0:
            raise ConstraintCrossing(
                f"cannot recover segment ({u}, {v}); constraints may intersect")
        key = crossing.popleft()
        if key not in tr.edge_tris:
            continue
        if key in tr.constrained:
            raise ConstraintCrossing(
                f"segment ({u}, {v}) crosses constrained edge {key}")
        if not tr._flippable(*key):
            crossing.append(key)
            continue
        new_key = tr._flip(*key)
        touched.append(new_key)
        if new_key is not None and _segments_cross(
                tr.points[new_key[0]], tr.points[new_key[1]], pu, pv):
            crossing.append(new_key)
    if not tr.has_edge(u, v):
        raise ConstraintCrossing(f"failed to recover segment ({u}, {v})")
    tr.constrained.add(_edge_key(u, v))
    tr.legalize(touched)


def _edges_crossing(tr, u, v):
    pu, pv = tr.points[u], tr.points[v]
    crossing = []
    for key in tr.edge_tris:
        if u in key or v in key:
            continue
        if _segments_cross(tr.points[key[0]], tr.points[key[1]], pu, pv):
            crossing.append(key)
    crossing.sort()
    return crossing


# -- refinement -------------------------------------------------------------


def _tri_geometry(tr, tid):
    a, b, c = tr.tri_v[tid]
    pa, pb, pc = tr.points[a], tr.points[b], tr.points[c]
    la = math.dist(pb, pc)
    lb = math.dist(pc, pa)
    lc = math.dist(pa, pb)
    area = 0.5 * _orient(pa, pb, pc)
    longest = max(la, lb, lc)
    # min angle is opposite the shortest edge
    shortest = min(la, lb, lc)
    others = sorted((la, lb, lc))[1:]
    cos_min = (others[0] ** 2 + others[1] ** 2 - shortest ** 2) / (2.0 * others[0] * others[1])
    min_angle = math.degrees(math.acos(max(-1.0, min(1.0, cos_min))))
    return min_angle, longest, area


def _encroached_by(tr, key, w):
    """Vertex w lies inside the diametral circle of constrained edge `key`."""
    pu, pv = tr.points[key[0]], tr.points[key[1]]
    pw = tr.points[w]
    dot = (pw[0] - pu[0]) * (pw[0] - pv[0]) + (pw[1] - pu[1]) * (pw[1] - pv[1])
    return dot < -1e-14


def _segment_encroached(tr, key):
    for tid in tr.edge_tris.get(key, ()):
        for w in tr.tri_v[tid]:
            if w not in key and _encroached_by(tr, key, w):
                return True
    return False


def _split_segment(tr, key, work, node_cap):
    """Split a constrained segment at its midpoint.

    The split is structural (each adjacent triangle is replaced by two) so
    collinear constraint chains never enter a Bowyer-Watson cavity; the
    neighborhood is re-legalized afterwards.
    """
    if len(tr.points) >= node_cap:
        raise RefinementBudgetExceeded(f"node cap {node_cap} reached")
    u, v = key
    pu, pv = tr.points[u], tr.points[v]
    m = tr.add_point((0.5 * (pu[0] + pv[0]), 0.5 * (pu[1] + pv[1])))
    owners = sorted(tr.edge_tris[key])
    suspect = []
    for tid in owners:
        verts = tr.tri_v[tid]
        w = next(x for x in verts if x not in key)
        # the edge as oriented within this CCW triangle
        i = verts.index(w)
        y, x = verts[(i + 1) % 3], verts[(i + 2) % 3]
        tr._remove(tid)
        work.append(tr._create(x, m, w))
        work.append(tr._create(m, y, w))
        suspect.append(_edge_key(x, w))
        suspect.append(_edge_key(y, w))
    tr.constrained.discard(key)
    tr.constrained.add(_edge_key(u, m))
    tr.constrained.add(_edge_key(m, v))
    tr.legalize(suspect)
    for sub in (_edge_key(u, m), _edge_key(m, v)):
        if _segment_encroached(tr, sub):
            _split_segment(tr, sub, work, node_cap)


def refine(tr, theta_min=20.0, h=None, node_cap=200000):
    """Ruppert-style refinement to a minimum angle and target edge length.

    Boundary edges (used by a single triangle) are treated as constrained.
    A triangle is split when its minimum angle falls below `theta_min`
    degrees or, when `h` is given, its longest edge exceeds `h`. Raises
    RefinementBudgetExceeded when the node cap is hit first.
    """
    if theta_min > 25.0:
        raise ValueError("theta_min above 25 degrees is not guaranteed to terminate")
    for key, owners in tr.edge_tris.items():
        if len(owners) == 1:
            tr.constrained.add(key)

    work = deque()
    for key in sorted(tr.constrained):
        if key in tr.edge_tris and _segment_encroached(tr, key):
            _split_segment(tr, key, work, node_cap)

    def is_bad(tid):
        min_angle, longest, _ = _tri_geometry(tr, tid)
        if min_angle < theta_min * (1.0 - 1e-12):
            return True
        return h is not None and longest > h * (1.0 + 1e-12)

    stalled = set()
    seg_cache = _SegmentCache(tr)
    while True:
        work.extend(tid for tid in tr.triangle_ids() if tid not in stalled)
        progressed = False
        while work:
            tid = work.popleft()
            if tid not in tr.tri_v or tid in stalled or not is_bad(tid):
                continue
            if len(tr.points) >= node_cap:
                raise RefinementBudgetExceeded(f"node cap {node_cap} reached")
            a, b, c = tr.tri_v[tid]
            center = _circumcenter(tr.points[a], tr.points[b], tr.points[c])
            encroached = seg_cache.encroached(center)
            if encroached:
                _split_segment(tr, encroached[0], work, node_cap)
                work.append(tid)
                progressed = True
                continue
            if tr.locate(center) is None or _too_close(tr, center, tid):
                stalled.add(tid)
                continue
            m = tr.add_point(center)
            work.extend(tr.insert(m))
            progressed = True
        remaining = [tid for tid in tr.triangle_ids()
                     if tid not in stalled and is_bad(tid)]
        if not remaining or not progressed:
            break
    return tr


class _SegmentCache:
    """Vectorized diametral-circle tests over the constrained segment set.

    A point p encroaches segment (u, v) iff |p - mid|^2 < |v - u|^2 / 4.
    The cache is rebuilt whenever the constraint count changes (splits only
    ever grow the set).
    """

    def __init__(self, tr):
        self.tr = tr
        self._count = -1
        self._rebuild()

    def _rebuild(self):
        tr = self.tr
        keys = sorted(k for k in tr.constrained if k in tr.edge_tris)
        pts = tr.point_array()
        self.keys = keys
        if keys:
            seg = np.asarray(keys, dtype=int)
            pu = pts[seg[:, 0]]
            pv = pts[seg[:, 1]]
            self.mid = 0.5 * (pu + pv)
            self.quarter_len2 = 0.25 * np.sum((pv - pu) ** 2, axis=1)
        self._count = len(tr.constrained)

    def encroached(self, p):
        if self._count != len(self.tr.constrained):
            self._rebuild()
        if not self.keys:
            return []
        d2 = (self.mid[:, 0] - p[0]) ** 2 + (self.mid[:, 1] - p[1]) ** 2
        hits = np.flatnonzero(d2 < self.quarter_len2 - 1e-14)
        return [self.keys[i] for i in hits]


def _too_close(tr, p, tid, rel=1e-7):
    a, b, c = tr.tri_v[tid]
    _, longest, _ = _tri_geometry(tr, tid)
    for w in (a, b, c):
        if math.dist(p, tr.points[w]) < rel * longest:
            return True
    return False


# -- geometry specification --------------------------------------------------


def sample_closed_bspline(control, samples=64):
    """Sample a closed uniform cubic B-spline at `samples` parameter values."""
    control = np.asarray(control, dtype=float)
    n = len(control)
    if n < 4:
        raise ValueError("closed cubic B-spline needs at least 4 control points")
    out = np.empty((samples, 2))
    ts = np.linspace(0.0, n, samples, endpoint=False)
    for k, t in enumerate(ts):
        i = int(math.floor(t))
        u = t - i
        p = [control[(i - 1) % n], control[i % n], control[(i + 1) % n], control[(i + 2) % n]]
        b0 = (1.0 - u) ** 3 / 6.0
        b1 = (3.0 * u ** 3 - 6.0 * u ** 2 + 4.0) / 6.0
        b2 = (-3.0 * u ** 3 + 3.0 * u ** 2 + 3.0 * u + 1.0) / 6.0
        b3 = u ** 3 / 6.0
        out[k] = b0 * p[0] + b1 * p[1] + b2 * p[2] + b3 * p[3]
    return out


#: kidney-like default inclusion: 8 control points around (0.5, 0.5)
DEFAULT_INCLUSION_CONTROL = np.array([
    [0.605, 0.5],
    [0.5672, 0.5672],
    [0.5, 0.59],
    [0.4328, 0.5672],
    [0.395, 0.5],
    [0.44343, 0.44343],
    [0.5, 0.45],
    [0.55657, 0.44343],
])

DEFAULT_SENSOR_BOXES = [
    (0.05, 0.05, 0.35, 0.35),
    (0.35, 0.05, 0.65, 0.35),
    (0.65, 0.05, 0.95, 0.35),
    (0.05, 0.35, 0.35, 0.65),
    (0.65, 0.35, 0.95, 0.65),
    (0.05, 0.65, 0.35, 0.95),
    (0.35, 0.65, 0.65, 0.95),
    (0.65, 0.65, 0.95, 0.95),
]


@dataclass
class RobinSpan:
    """A beta value on a parameter span [lo, hi] of one outer side."""
    side: str
    lo: float
    hi: float
    beta: float


@dataclass
class GeometrySpec:
    """Geometry of the experiment on the unit square.

    The inclusion is either an explicit closed polygon or a closed uniform
    cubic B-spline given by control points and sampled uniformly.
    """

    holdall: tuple = (0.35, 0.35, 0.65, 0.65)
    inclusion_polygon: np.ndarray | None = None
    spline_control: np.ndarray | None = None
    spline_samples: int = 64
    sensors: list = field(default_factory=lambda: list(DEFAULT_SENSOR_BOXES))
    dirichlet_side: str = "top"
    robin_spans: list = field(default_factory=list)
    h: float = 0.04
    theta_min: float = 20.0
    node_cap: int = 200000

    def polygon(self):
        """Closed inclusion polygon (counter-clockwise), or None."""
        if self.inclusion_polygon is not None:
            poly = np.asarray(self.inclusion_polygon, dtype=float)
        elif self.spline_control is not None:
            poly = sample_closed_bspline(self.spline_control, self.spline_samples)
        else:
            return None
        if len(poly) < 3:
            return None
        if _polygon_area(poly) < 0.0:
            poly = poly[::-1].copy()
        return poly

    def validate(self):
        x0, y0, x1, y1 = self.holdall
        if not (0.0 < x0 < x1 < 1.0 and 0.0 < y0 < y1 < 1.0):
            raise ValueError("hold-all must be strictly inside the unit square")
        poly = self.polygon()
        if poly is not None:
            margin = 1e-6
            if not (np.all(poly[:, 0] > x0 + margin) and np.all(poly[:, 0] < x1 - margin)
                    and np.all(poly[:, 1] > y0 + margin) and np.all(poly[:, 1] < y1 - margin)):
                raise ValueError("inclusion must be strictly inside the hold-all")
        for i, box in enumerate(self.sensors):
            bx0, by0, bx1, by1 = box
            if not (0.0 <= bx0 < bx1 <= 1.0 and 0.0 <= by0 < by1 <= 1.0):
                raise ValueError(f"sensor {i} outside the unit square")
            if bx0 < x1 - 1e-12 and bx1 > x0 + 1e-12 and by0 < y1 - 1e-12 and by1 > y0 + 1e-12:
                raise ValueError(f"sensor {i} overlaps the hold-all")
            for j in range(i):
                ox0, oy0, ox1, oy1 = self.sensors[j]
                if bx0 < ox1 - 1e-12 and bx1 > ox0 + 1e-12 \
                        and by0 < oy1 - 1e-12 and by1 > oy0 + 1e-12:
                    raise ValueError(f"sensors {j} and {i} overlap")
        if self.dirichlet_side not in ("top", "bottom", "left", "right", "all"):
            raise ValueError(f"unknown dirichlet side {self.dirichlet_side!r}")


def _polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _points_in_polygon(pts, poly):
    """Ray-casting test, vectorized over pts."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < np.where(crosses, xint, np.inf))
    return inside


# -- tagged mesh --------------------------------------------------------------


@dataclass
class Mesh:
    """Conforming triangulation with region, boundary, and patch tags."""

    nodes: np.ndarray
    triangles: np.ndarray
    regions: np.ndarray                      # 0 bulk, 1 inclusion
    seg_nodes: np.ndarray                    # (s, 2) node ids
    seg_kind: np.ndarray                     # unicode kind per segment
    seg_ref: np.ndarray                      # sensor id / robin span index / -1
    seg_beta: np.ndarray                     # beta per robin segment, else 0
    patches: dict = field(default_factory=dict)  # name -> element id array

    def areas(self):
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))

    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    def segments_of_kind(self, kind):
        mask = self.seg_kind == kind
        return self.seg_nodes[mask], self.seg_ref[mask], self.seg_beta[mask]

    def dirichlet_nodes(self):
        segs, _, _ = self.segments_of_kind("dirichlet")
        return np.unique(segs)

    def sensor_ids(self):
        return sorted(int(k.split(":", 1)[1]) for k in self.patches if k.startswith("sensor:"))


@dataclass
class Patch:
    """Subset of mesh elements with a local node numbering."""

    mesh: Mesh
    elements: np.ndarray
    nodes: np.ndarray        # global node ids, ascending; local id = position

    def __post_init__(self):
        self.local_of = {int(g): i for i, g in enumerate(self.nodes)}

    def area(self):
        return float(self.mesh.areas()[self.elements].sum())

    def local_triangles(self):
        tris = self.mesh.triangles[self.elements]
        lookup = np.full(len(self.mesh.nodes), -1, dtype=int)
        lookup[self.nodes] = np.arange(len(self.nodes))
        return lookup[tris]


def _subdivide_polyline(points, h, closed=False):
    """Split each leg into pieces no longer than h; returns points, segments."""
    pts = [tuple(map(float, points[0]))]
    segs = []
    n = len(points)
    legs = n if closed else n - 1
    for i in range(legs):
        a = np.asarray(points[i], dtype=float)
        b = np.asarray(points[(i + 1) % n], dtype=float)
        pieces = max(1, int(math.ceil(math.dist(a, b) / h - 1e-12)))
        for k in range(1, pieces + 1):
            q = a + (b - a) * (k / pieces)
            last = len(pts) - 1
            if closed and i == legs - 1 and k == pieces:
                segs.append((last, 0))
            else:
                pts.append((float(q[0]), float(q[1])))
                segs.append((last, last + 1))
    return pts, segs


def _box_polyline(box):
    x0, y0, x1, y1 = box
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def build_mesh(spec: GeometrySpec) -> Mesh:
    """Generate the tagged mesh for a geometry specification."""
    spec.validate()
    h = spec.h
    polylines = [(_box_polyline((0.0, 0.0, 1.0, 1.0)), "outer")]
    polylines.append((_box_polyline(spec.holdall), "holdall"))
    for k, box in enumerate(spec.sensors):
        polylines.append((_box_polyline(box), f"sensor:{k}"))
    poly = spec.polygon()
    if poly is not None:
        polylines.append(([tuple(p) for p in poly], "interface"))

    all_points = []
    all_segments = []
    for pts, _src in polylines:
        base = len(all_points)
        sub_pts, sub_segs = _subdivide_polyline(pts, h, closed=True)
        all_points.extend(sub_pts)
        all_segments.extend((base + u, base + v) for u, v in sub_segs)
    # split outer-boundary points at robin span breaks and dirichlet corners
    for span in spec.robin_spans:
        for val in (span.lo, span.hi):
            all_points.append(_side_point(span.side, val))

    tr = bowyer_watson(np.asarray(all_points))
    recover_constraints(tr, all_segments)
    strip_super(tr)
    refine(tr, theta_min=spec.theta_min, h=h, node_cap=spec.node_cap)
    return _tag_mesh(tr, spec, poly)


def _side_point(side, val):
    if side == "bottom":
        return (val, 0.0)
    if side == "top":
        return (val, 1.0)
    if side == "left":
        return (0.0, val)
    if side == "right":
        return (1.0, val)
    raise ValueError(f"unknown side {side!r}")


def _side_coord(side, mid):
    """(on-side, running coordinate) for an outer-boundary midpoint."""
    x, y = mid
    if side == "bottom":
        return abs(y) <= _ON_TOL, x
    if side == "top":
        return abs(y - 1.0) <= _ON_TOL, x
    if side == "left":
        return abs(x) <= _ON_TOL, y
    if side == "right":
        return abs(x - 1.0) <= _ON_TOL, y
    raise ValueError(side)


def _on_box_boundary(mid, box):
    x0, y0, x1, y1 = box
    x, y = mid
    on_vert = (abs(x - x0) <= _ON_TOL or abs(x - x1) <= _ON_TOL) and y0 - _ON_TOL <= y <= y1 + _ON_TOL
    on_horz = (abs(y - y0) <= _ON_TOL or abs(y - y1) <= _ON_TOL) and x0 - _ON_TOL <= x <= x1 + _ON_TOL
    return on_vert or on_horz


def _tag_mesh(tr, spec, poly):
    nodes = tr.point_array()
    tri_ids = tr.triangle_ids()
    triangles = np.array([tr.tri_v[t] for t in tri_ids], dtype=int)

    # drop unused super vertices and compact node numbering
    used = np.zeros(len(nodes), dtype=bool)
    used[triangles.ravel()] = True
    new_index = np.cumsum(used) - 1
    nodes = nodes[used]
    triangles = new_index[triangles]

    centroids = nodes[triangles].mean(axis=1)
    if poly is not None:
        regions = _points_in_polygon(centroids, poly).astype(int)
    else:
        regions = np.zeros(len(triangles), dtype=int)

    # region-contrast edges define the interface
    region_of = {}
    for t, verts in enumerate(triangles):
        a, b, c = (int(v) for v in verts)
        for u, v in ((a, b), (b, c), (c, a)):
            region_of.setdefault(_edge_key(u, v), []).append(regions[t])

    seg_nodes, seg_kind, seg_ref, seg_beta = [], [], [], []
    for key in sorted(tr.constrained):
        if key not in tr.edge_tris:
            continue
        u, v = (int(new_index[key[0]]), int(new_index[key[1]]))
        mid = 0.5 * (nodes[u] + nodes[v])
        kind, ref, beta = _classify_edge(mid, (u, v), region_of, spec)
        if kind is None:
            continue
        seg_nodes.append((u, v))
        seg_kind.append(kind)
        seg_ref.append(ref)
        seg_beta.append(beta)

    mesh = Mesh(
        nodes=nodes,
        triangles=triangles,
        regions=regions,
        seg_nodes=np.asarray(seg_nodes, dtype=int).reshape(-1, 2),
        seg_kind=np.asarray(seg_kind, dtype="U9"),
        seg_ref=np.asarray(seg_ref, dtype=int),
        seg_beta=np.asarray(seg_beta, dtype=float),
    )
    _build_patches(mesh, spec, centroids)
    return mesh


def _classify_edge(mid, edge, region_of, spec):
    """Map a constrained edge to (kind, ref, beta); None drops the edge."""
    on_outer = (abs(mid[0]) <= _ON_TOL or abs(mid[0] - 1.0) <= _ON_TOL
                or abs(mid[1]) <= _ON_TOL or abs(mid[1] - 1.0) <= _ON_TOL)
    if on_outer:
        if spec.dirichlet_side == "all":
            return "dirichlet", -1, 0.0
        on_side, _ = _side_coord(spec.dirichlet_side, mid)
        if on_side:
            return "dirichlet", -1, 0.0
        for i, span in enumerate(spec.robin_spans):
            on_side, coord = _side_coord(span.side, mid)
            if on_side and span.lo - _ON_TOL <= coord <= span.hi + _ON_TOL:
                return "robin", i, span.beta
        return "robin", -1, 0.0
    tags = region_of.get(_edge_key(*edge), [])
    if len(tags) == 2 and tags[0] != tags[1]:
        return "interface", -1, 0.0
    if _on_box_boundary(mid, spec.holdall):
        return "holdall", -1, 0.0
    for k, box in enumerate(spec.sensors):
        if _on_box_boundary(mid, box):
            return "sensor", k, 0.0
    return None, -1, 0.0


def _build_patches(mesh, spec, centroids):
    x0, y0, x1, y1 = spec.holdall
    in_holdall = ((centroids[:, 0] > x0) & (centroids[:, 0] < x1)
                  & (centroids[:, 1] > y0) & (centroids[:, 1] < y1))
    closure = np.flatnonzero(in_holdall)
    annulus = np.flatnonzero(in_holdall & (mesh.regions == 0))
    mesh.patches["holdall"] = annulus
    mesh.patches["holdall-closure"] = closure
    for k, box in enumerate(spec.sensors):
        bx0, by0, bx1, by1 = box
        mask = ((centroids[:, 0] > bx0) & (centroids[:, 0] < bx1)
                & (centroids[:, 1] > by0) & (centroids[:, 1] < by1))
        mesh.patches[f"sensor:{k}"] = np.flatnonzero(mask)


def extract_patch(mesh: Mesh, tag: str) -> Patch:
    """Patch for a named element set: bulk, inclusion, holdall,
    holdall-closure, or sensor:<id>."""
    if tag == "bulk":
        elements = np.flatnonzero(mesh.regions == 0)
    elif tag == "inclusion":
        elements = np.flatnonzero(mesh.regions == 1)
    elif tag in mesh.patches:
        elements = mesh.patches[tag]
    else:
        raise UnknownTag(f"no patch tagged {tag!r}")
    if len(elements) == 0:
        raise UnknownTag(f"patch {tag!r} is empty")
    nodes = np.unique(mesh.triangles[elements])
    return Patch(mesh=mesh, elements=np.asarray(elements, dtype=int), nodes=nodes)
