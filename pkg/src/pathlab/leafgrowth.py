"""Leaf disks of expanding foliations, tracked in the universal cover.

A disk is seeded flat in an orthonormal frame at a base point and pushed
forward through the lift of a torus map. Every node keeps the parameter it
was born with in the seed chart, and refinement computes new nodes by mapping
their seed position through all elapsed steps, so no chord interpolation
error ever enters a node coordinate. Segment midpoint insertion (k = 1) and
conforming marked-edge bisection (k = 2) keep node spacing below the mesh
bound delta in lifted coordinates.

Volumes are unsigned sums of segment lengths or triangle areas; current
components use signed projected measures, which is why the triangulation
maintains a consistent parameter-plane orientation. When the node budget
blocks a refinement pass the disk is flagged truncated and later passes are
skipped; nodes keep advancing, so volumes stay exact for linear maps, whose
leaves remain affine between existing nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .smallmat import WedgeIndex

_GAUSS = (0.5 * (1.0 - 1.0 / math.sqrt(3.0)), 0.5 * (1.0 + 1.0 / math.sqrt(3.0)))
_MAX_PASSES = 200


class BadRadius(ValueError):
    """Seed radius outside the flat-disk regime."""


class BudgetExceeded(RuntimeError):
    """Node budget would be exceeded by the next refinement pass."""


@dataclass(frozen=True)
class LeafDisk:
    k: int
    seed_point: np.ndarray
    frame: np.ndarray
    radius: float
    delta: float
    step: int
    params: np.ndarray
    points: np.ndarray
    cells: np.ndarray
    budget: int
    truncated: bool

    @property
    def n_nodes(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    def volume(self) -> float:
        if self.k == 1:
            d = self.points[self.cells[:, 1]] - self.points[self.cells[:, 0]]
            return float(np.sum(np.linalg.norm(d, axis=1)))
        e1 = self.points[self.cells[:, 1]] - self.points[self.cells[:, 0]]
        e2 = self.points[self.cells[:, 2]] - self.points[self.cells[:, 0]]
        g11 = np.einsum("ij,ij->i", e1, e1)
        g22 = np.einsum("ij,ij->i", e2, e2)
        g12 = np.einsum("ij,ij->i", e1, e2)
        det = np.maximum(g11 * g22 - g12 * g12, 0.0)
        return float(0.5 * np.sum(np.sqrt(det)))


def _seed_positions(seed_point, frame, params):
    # fixed-order accumulation, matching the map's own arithmetic, so a node
    # recomputed later in a different batch reproduces identical floats
    y = np.broadcast_to(seed_point, (params.shape[0], seed_point.shape[0])).copy()
    for j in range(frame.shape[1]):
        y = y + params[:, j, None] * frame[:, j]
    return y


def _advance(map_, seed_point, frame, params, steps):
    y = _seed_positions(seed_point, frame, params)
    for _ in range(steps):
        y = map_.lift_apply(y)
    return y


def _disk_mesh(radius, delta):
    """Ring-triangulated round disk with all edges at most delta.

    Twenty rings minimum keeps the inscribed-polygon area within 0.05
    percent of the round disk, small enough that mesh-halving volume
    comparisons are not dominated by the seed boundary.
    """
    rings = max(20, int(math.ceil(1.2 * radius / delta)))
    while True:
        nodes = [(0.0, 0.0)]
        ring_start = [0, 1]
        for j in range(1, rings + 1):
            rj = radius * j / rings
            ang = 2.0 * np.pi * np.arange(6 * j) / (6 * j)
            for a in ang:
                nodes.append((rj * math.cos(a), rj * math.sin(a)))
            ring_start.append(len(nodes))
        params = np.array(nodes)
        tris = []
        first = [ring_start[1] + i for i in range(6)]
        for i in range(6):
            tris.append((0, first[i], first[(i + 1) % 6]))
        for j in range(2, rings + 1):
            p = 6 * (j - 1)
            q = 6 * j
            inner = np.arange(ring_start[j - 1], ring_start[j - 1] + p)
            outer = np.arange(ring_start[j], ring_start[j] + q)
            ai = 2.0 * np.pi * np.arange(p + 1) / p
            ao = 2.0 * np.pi * np.arange(q + 1) / q
            i = o = 0
            while i < p or o < q:
                if o < q and (i == p or ao[o + 1] <= ai[i + 1]):
                    tris.append((inner[i % p], outer[o], outer[(o + 1) % q]))
                    o += 1
                else:
                    tris.append((inner[i], outer[o % q], inner[(i + 1) % p]))
                    i += 1
        cells = np.array(tris, dtype=np.int64)
        edges = np.vstack([cells[:, (0, 1)], cells[:, (1, 2)], cells[:, (2, 0)]])
        lens = np.linalg.norm(params[edges[:, 0]] - params[edges[:, 1]], axis=1)
        if float(np.max(lens)) <= delta:
            return params, cells
        rings += 1


def seed_disk(x, frame, r, delta, budget: int = 2_000_000) -> LeafDisk:
    """Flat k-disk of radius r at x, sampled at node spacing at most delta."""
    x = np.asarray(x, dtype=float)
    frame = np.asarray(frame, dtype=float)
    if frame.ndim == 1:
        frame = frame[:, None]
    if x.ndim != 1 or frame.shape[0] != x.shape[0]:
        raise ValueError("frame rows must match the point dimension")
    k = frame.shape[1]
    if k not in (1, 2):
        raise ValueError(f"disk dimension must be 1 or 2, got {k}")
    r = float(r)
    delta = float(delta)
    if not 0.0 < r <= 0.01:
        raise BadRadius(f"radius {r} outside (0, 0.01]")
    if not 0.0 < delta < r:
        raise ValueError(f"mesh bound must satisfy 0 < delta < r, got {delta}")
    gram = frame.T @ frame
    if np.max(np.abs(gram - np.eye(k))) > 1e-8:
        raise ValueError("frame must be orthonormal")
    if k == 1:
        half = int(math.ceil(r / delta))
        t = np.linspace(-r, r, 2 * half + 1)
        params = t[:, None]
        cells = np.column_stack([np.arange(2 * half), np.arange(1, 2 * half + 1)])
    else:
        params, cells = _disk_mesh(r, delta)
    if params.shape[0] > budget:
        raise BudgetExceeded(f"seed needs {params.shape[0]} nodes, budget is {budget}")
    points = _seed_positions(x, frame, params)
    return LeafDisk(k, x, frame, r, delta, 0, params, points, cells, int(budget), False)


def _sort_nodes(params, points, cells):
    keys = tuple(params[:, j] for j in reversed(range(params.shape[1])))
    perm = np.lexsort(keys)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return params[perm], points[perm], inv[cells]


def _refine_segments(disk_state, map_, seed_point, frame, delta, budget, step):
    params, points, cells, truncated = disk_state
    for _ in range(_MAX_PASSES):
        d = points[cells[:, 1]] - points[cells[:, 0]]
        lens = np.linalg.norm(d, axis=1)
        over = lens > delta
        if not np.any(over):
            return params, points, cells, truncated
        mid_params = 0.5 * (params[cells[over, 0]] + params[cells[over, 1]])
        if params.shape[0] + mid_params.shape[0] > budget:
            return params, points, cells, True
        mid_points = _advance(map_, seed_point, frame, mid_params, step)
        params = np.vstack([params, mid_params])
        points = np.vstack([points, mid_points])
        order = np.argsort(params[:, 0])
        params = params[order]
        points = points[order]
        m = params.shape[0]
        cells = np.column_stack([np.arange(m - 1), np.arange(1, m)])
    raise RuntimeError("refinement did not settle; delta may be degenerate")


def _unique_edges(cells):
    raw = np.vstack([cells[:, (0, 1)], cells[:, (1, 2)], cells[:, (2, 0)]])
    undirected = np.sort(raw, axis=1)
    edges, inverse = np.unique(undirected, axis=0, return_inverse=True)
    tri_edge = inverse.reshape(3, -1).T
    return edges, tri_edge


def _refine_triangles(disk_state, map_, seed_point, frame, delta, budget, step):
    params, points, cells, truncated = disk_state
    for _ in range(_MAX_PASSES):
        edges, tri_edge = _unique_edges(cells)
        lens = np.linalg.norm(points[edges[:, 0]] - points[edges[:, 1]], axis=1)
        marked = lens > delta
        if not np.any(marked):
            return params, points, cells, truncated
        # closure: a triangle with any marked edge also marks its longest
        # edge, so every split triangle can be bisected by that edge first
        tri_lens = lens[tri_edge]
        longest = np.argmax(tri_lens, axis=1)
        rows = np.arange(cells.shape[0])
        while True:
            any_marked = marked[tri_edge].any(axis=1)
            need = any_marked & ~marked[tri_edge[rows, longest]]
            if not np.any(need):
                break
            marked[tri_edge[need, longest[need]]] = True
        split_idx = np.flatnonzero(marked)
        mid_params = 0.5 * (params[edges[split_idx, 0]] + params[edges[split_idx, 1]])
        if params.shape[0] + mid_params.shape[0] > budget:
            return params, points, cells, True
        mid_points = _advance(map_, seed_point, frame, mid_params, step)
        mid_of = np.full(edges.shape[0], -1, dtype=np.int64)
        mid_of[split_idx] = params.shape[0] + np.arange(split_idx.shape[0])
        params = np.vstack([params, mid_params])
        points = np.vstack([points, mid_points])

        tri_marked = marked[tri_edge]
        split_tri = tri_marked.any(axis=1)
        keep = cells[~split_tri]
        # roll vertex order so the longest (always marked) edge is (a, b);
        # every pattern below preserves the parameter-plane orientation
        rolls = [cells[:, (0, 1, 2)], cells[:, (1, 2, 0)], cells[:, (2, 0, 1)]]
        verts = np.choose(longest[:, None], rolls)
        emid = np.column_stack([
            mid_of[tri_edge[rows, longest]],
            mid_of[tri_edge[rows, (longest + 1) % 3]],
            mid_of[tri_edge[rows, (longest + 2) % 3]],
        ])
        m1 = tri_marked[rows, (longest + 1) % 3] & split_tri
        m2 = tri_marked[rows, (longest + 2) % 3] & split_tri
        a, b, c = verts[:, 0], verts[:, 1], verts[:, 2]
        mab, mbc, mca = emid[:, 0], emid[:, 1], emid[:, 2]
        out = [keep]
        only = split_tri & ~m1 & ~m2
        out.append(np.column_stack([a[only], mab[only], c[only]]))
        out.append(np.column_stack([mab[only], b[only], c[only]]))
        s1 = split_tri & m1 & ~m2
        out.append(np.column_stack([a[s1], mab[s1], c[s1]]))
        out.append(np.column_stack([mab[s1], b[s1], mbc[s1]]))
        out.append(np.column_stack([mab[s1], mbc[s1], c[s1]]))
        s2 = split_tri & ~m1 & m2
        out.append(np.column_stack([mab[s2], b[s2], c[s2]]))
        out.append(np.column_stack([a[s2], mab[s2], mca[s2]]))
        out.append(np.column_stack([mab[s2], c[s2], mca[s2]]))
        s3 = split_tri & m1 & m2
        out.append(np.column_stack([a[s3], mab[s3], mca[s3]]))
        out.append(np.column_stack([mab[s3], b[s3], mbc[s3]]))
        out.append(np.column_stack([mca[s3], mbc[s3], c[s3]]))
        out.append(np.column_stack([mab[s3], mbc[s3], mca[s3]]))
        cells = np.vstack(out)
        params, points, cells = _sort_nodes(params, points, cells)
    raise RuntimeError("refinement did not settle; delta may be degenerate")


def iterate_refine(disk: LeafDisk, map_, steps: int, on_budget: str = "flag") -> LeafDisk:
    """Advance the disk through the map lift, refining after every step.

    Once the budget blocks a pass the disk is returned truncated: nodes keep
    advancing but the mesh bound no longer holds. on_budget="raise" raises
    BudgetExceeded at that point instead.
    """
    steps = int(steps)
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if on_budget not in ("flag", "raise"):
        raise ValueError(f"on_budget must be 'flag' or 'raise', got {on_budget!r}")
    if map_.n != disk.ambient_dim:
        raise ValueError("map dimension does not match the disk")
    params, points, cells = disk.params, disk.points, disk.cells
    truncated = disk.truncated
    step = disk.step
    refine = _refine_segments if disk.k == 1 else _refine_triangles
    for _ in range(steps):
        points = map_.lift_apply(points)
        step += 1
        if not truncated:
            params, points, cells, truncated = refine(
                (params, points, cells, truncated),
                map_, disk.seed_point, disk.frame, disk.delta, disk.budget, step,
            )
            if truncated and on_budget == "raise":
                raise BudgetExceeded(
                    f"budget {disk.budget} blocks refinement at step {step}"
                )
    return LeafDisk(
        disk.k, disk.seed_point, disk.frame, disk.radius, disk.delta,
        step, params, points, cells, disk.budget, truncated,
    )


def node_provenance_error(disk: LeafDisk, map_, sample: int = 100, seed: int = 0) -> float:
    """Largest distance between stored nodes and their recomputed positions."""
    rng = np.random.default_rng(seed)
    m = disk.n_nodes
    idx = rng.choice(m, size=min(int(sample), m), replace=False)
    redone = _advance(map_, disk.seed_point, disk.frame, disk.params[idx], disk.step)
    return float(np.max(np.linalg.norm(redone - disk.points[idx], axis=1), initial=0.0))


def chi_estimate(records) -> dict:
    """Growth-rate estimates from a per-step volume table.

    The ratio estimate is the last one-step log ratio; the regression
    estimate is the least-squares slope of ln volume against the step.
    """
    rows = [(int(r["n"]), float(r["volume"])) for r in records]
    if len(rows) < 4:
        raise ValueError(f"need at least 4 recorded steps, got {len(rows)}")
    ns = np.array([r[0] for r in rows], dtype=float)
    vols = np.array([r[1] for r in rows])
    if np.any(vols <= 0.0):
        raise ValueError("volumes must be positive")
    lnv = np.log(vols)
    ratios = np.full(len(rows), np.nan)
    ratios[1:] = np.diff(lnv) / np.diff(ns)
    slope, intercept = np.polyfit(ns, lnv, 1)
    residuals = lnv - (slope * ns + intercept)
    table = [
        {"n": int(ns[i]), "volume": float(vols[i]), "ln_volume": float(lnv[i]),
         "ratio": float(ratios[i])}
        for i in range(len(rows))
    ]
    return {
        "ratio_estimate": float(ratios[-1]),
        "regression_estimate": float(slope),
        "residuals": [float(r) for r in residuals],
        "table": table,
    }


@dataclass(frozen=True)
class TestForm:
    """sin or cos of one full-period coordinate wave times an optional dx.

    component None is the plain function (a 0-form); its exterior derivative
    tests 1-dimensional disks the way the 1-form versions test surfaces.
    """
    trig: str
    wave: int
    component: int | None = None

    def __post_init__(self):
        if self.trig not in ("sin", "cos"):
            raise ValueError(f"trig must be 'sin' or 'cos', got {self.trig!r}")

    @property
    def label(self) -> str:
        base = f"{self.trig}(2pi*x{self.wave})"
        if self.component is None:
            return base
        return f"{base}*dx{self.component}"

    def coefficient(self, points):
        fn = np.sin if self.trig == "sin" else np.cos
        return fn(2.0 * np.pi * points[:, self.wave - 1])


def default_test_forms(dim: int, k: int):
    """The fixed closedness test battery: one wave per off-axis pair."""
    forms = []
    if k == 1:
        for j in range(1, dim + 1):
            for trig in ("sin", "cos"):
                forms.append(TestForm(trig, j))
    else:
        for j in range(1, dim + 1):
            for i in range(1, dim + 1):
                if i == j:
                    continue
                for trig in ("sin", "cos"):
                    forms.append(TestForm(trig, j, i))
    return forms


@dataclass(frozen=True)
class CurrentValue:
    step: int
    volume: float
    components: dict
    boundary_terms: dict


def _boundary_edges(cells):
    raw = np.vstack([cells[:, (0, 1)], cells[:, (1, 2)], cells[:, (2, 0)]])
    undirected = np.sort(raw, axis=1)
    _, inverse, counts = np.unique(
        undirected, axis=0, return_inverse=True, return_counts=True
    )
    return raw[counts[inverse] == 1]


def current_eval(disk: LeafDisk, forms=None) -> CurrentValue:
    """Normalized currents of the disk and Stokes boundary diagnostics.

    Components integrate the constant coordinate forms over the disk and
    divide by its volume. Boundary terms evaluate the exact form d(alpha)
    through the circulation of alpha along the boundary, with a two-point
    Gauss rule per boundary segment.
    """
    vol = disk.volume()
    if vol <= 0.0:
        raise ValueError("disk volume vanished; cannot normalize currents")
    nd = disk.ambient_dim
    wi = WedgeIndex(nd, disk.k)
    pts = disk.points
    components = {}
    if disk.k == 1:
        d = pts[disk.cells[:, 1]] - pts[disk.cells[:, 0]]
        totals = np.sum(d, axis=0)
        for label, (i,) in zip(wi.labels(), wi.subsets):
            components[label] = float(totals[i] / vol)
    else:
        e1 = pts[disk.cells[:, 1]] - pts[disk.cells[:, 0]]
        e2 = pts[disk.cells[:, 2]] - pts[disk.cells[:, 0]]
        for label, (i, j) in zip(wi.labels(), wi.subsets):
            signed = 0.5 * np.sum(e1[:, i] * e2[:, j] - e1[:, j] * e2[:, i])
            components[label] = float(signed / vol)
    if forms is None:
        forms = default_test_forms(nd, disk.k)
    boundary_terms = {}
    if disk.k == 1:
        ends = (pts[0], pts[-1])
        for form in forms:
            if form.component is not None:
                raise ValueError("boundary terms of a curve need 0-form potentials")
            ga = form.coefficient(ends[0][None, :])[0]
            gb = form.coefficient(ends[1][None, :])[0]
            boundary_terms[form.label] = float(abs(gb - ga) / vol)
    else:
        bedges = _boundary_edges(disk.cells)
        pa = pts[bedges[:, 0]]
        pb = pts[bedges[:, 1]]
        seg = pb - pa
        for form in forms:
            if form.component is None:
                raise ValueError("boundary terms of a surface need 1-form test forms")
            total = 0.0
            for t in _GAUSS:
                total += 0.5 * np.sum(
                    form.coefficient(pa + t * seg) * seg[:, form.component - 1]
                )
            boundary_terms[form.label] = float(abs(total) / vol)
    return CurrentValue(disk.step, vol, components, boundary_terms)


@dataclass(frozen=True)
class CycleEstimate:
    step: int
    displacement: np.ndarray
    integer_class: np.ndarray
    normalized: np.ndarray


def asymptotic_cycle(disk: LeafDisk) -> CycleEstimate:
    """Endpoint displacement of an iterated curve, normalized by arc length.

    The integer class rounds the displacement to the nearest lattice vector,
    the closing correction being shorter than the wrap cell. The normalized
    vector cannot exceed unit length: the displacement is a straight chord
    of the polyline whose length divides it.
    """
    if disk.k != 1:
        raise ValueError("asymptotic cycles are defined for curves only")
    displacement = disk.points[-1] - disk.points[0]
    arc = disk.volume()
    if arc <= 0.0:
        raise ValueError("curve has zero length")
    return CycleEstimate(
        disk.step,
        displacement,
        np.rint(displacement).astype(np.int64),
        displacement / arc,
    )


def track_growth(disk: LeafDisk, map_, steps: int, forms=None,
                 on_budget: str = "flag") -> dict:
    """Step the disk while recording the per-step growth and current table."""
    records = []
    prev_ln = None
    current = disk
    for s in range(int(steps) + 1):
        if s > 0:
            current = iterate_refine(current, map_, 1, on_budget=on_budget)
        cv = current_eval(current, forms=forms)
        lnv = math.log(cv.volume)
        rec = {
            "n": current.step,
            "volume": cv.volume,
            "ln_volume": lnv,
            "ratio": float("nan") if prev_ln is None else lnv - prev_ln,
            "nodes": current.n_nodes,
            "truncated": current.truncated,
            "components": dict(cv.components),
            "boundary_terms": dict(cv.boundary_terms),
        }
        records.append(rec)
        prev_ln = lnv
    return {"records": records, "disk": current}
