"""
Metric-conforming local remeshing of the periodic unit cell.

The mesh is reworked on the torus: only master vertices are stored, with
positions in [0, 1)^2, and every triangle carries an integer offset per
corner so that corner j sits at pos[tris[t, j]] + offs[t, j]. Vertices on
the seam lines x = 0 and y = 0 are tagged so they only slide along the
seam, and seam edges are never flipped, which keeps the boundary traces of
the unfolded mesh identical on opposite sides.

Each pass rebuilds the edge table and applies one kind of local operation:
split (metric length > sqrt 2), collapse (< 1/sqrt 2), Delaunay-in-metric
flip and spring smoothing. Rounds repeat until a round fires no split and no
collapse, or max_iter rounds have run. The fraction of edges with metric
length in [1/sqrt 2, sqrt 2] is then measured; below IN_BAND_TARGET the mesh
is kept as a best-effort result and a warning is logged.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from lib.errors import MeshIntegrityError
from lib.mesh import PERIODIC_TOL, UnitCellMesh, pair_periodic_vertices, validate_mesh
from lib.transfer import FieldInterpolator

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)
IN_BAND_TARGET = 0.9
SMOOTHING_WEIGHT = 0.5
FLIP_SWEEPS = 3
MIN_AREA = 1e-12

FREE, SEAM_X, SEAM_Y, CORNER = 0, 1, 2, 3


@dataclass(frozen=True)
class AdaptParams:
    """
    Attributes:
        hybrid: Keep the mesh isotropic with diameter h_iso where rho > rho_th
        rho_th: Material threshold of the hybrid mode
        h_iso: Isotropic target diameter in full-material regions
        max_iter: Cap on split/collapse/flip/smooth rounds
        rho_min: Lower clamp of the transferred density
    """

    hybrid: bool = True
    rho_th: float = 0.9
    h_iso: float = 0.03
    max_iter: int = 20
    rho_min: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.rho_th < 1.0:
            raise ValueError(f"rho_th must lie in (0, 1), got {self.rho_th}")
        if not 0.0 < self.h_iso < 1.0:
            raise ValueError(f"h_iso must lie in (0, 1), got {self.h_iso}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class AdaptResult:
    """
    Attributes:
        mesh: Adapted mesh
        rho: Density transferred onto the adapted mesh
        metric: (nv, 2, 2) target metric at the adapted mesh vertices
        in_band: Fraction of edges with metric length in [1/sqrt 2, sqrt 2]
        best_effort: True when in_band stayed below the target fraction
        iterations: Remeshing rounds performed
        operations: Totals per operation kind
    """

    mesh: UnitCellMesh
    rho: np.ndarray
    metric: np.ndarray
    in_band: float
    best_effort: bool
    iterations: int
    operations: dict[str, int] = field(default_factory=dict)


def cardinality_stagnation(prev_mesh: UnitCellMesh, new_mesh: UnitCellMesh) -> float:
    """
    Relative change of the triangle count between two consecutive meshes.

    Raises:
        ValueError: If the previous mesh is empty
    """
    if prev_mesh.n_triangles == 0:
        raise ValueError("Previous mesh has no triangles")
    return abs(new_mesh.n_triangles - prev_mesh.n_triangles) / prev_mesh.n_triangles


def hybrid_override(
    metric: np.ndarray, rho: np.ndarray, rho_th: float, h_iso: float
) -> np.ndarray:
    """Replace the metric by I / h_iso^2 wherever rho exceeds rho_th."""
    out = metric.copy()
    out[rho > rho_th] = np.eye(2) / (h_iso * h_iso)
    return out


def symmetrize_periodic(mesh: UnitCellMesh, nodal: np.ndarray) -> np.ndarray:
    """Average nodal values over each periodic vertex class."""
    counts = np.bincount(mesh.master_column, minlength=mesh.n_masters)
    shape = (-1,) + (1,) * (nodal.ndim - 1)
    return mesh.expand(mesh.fold(nodal) / counts.reshape(shape))


def _has_x(kind):
    return (kind & SEAM_X) != 0


def _has_y(kind):
    return (kind & SEAM_Y) != 0


def _incircle(a, b, c, d) -> float:
    """Positive when d lies inside the circumcircle of the counter-clockwise (a, b, c)."""
    rows = []
    for p in (a, b, c):
        dx, dy = p[0] - d[0], p[1] - d[1]
        rows.append((dx, dy, dx * dx + dy * dy))
    return float(np.linalg.det(np.array(rows)))


def _area(p0, p1, p2) -> float:
    return 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))


class _EdgeTable:
    """Unique torus edges (a, b, dx, dy) and their two half-edges t * 3 + j."""

    def __init__(self, work: "_TorusMesh"):
        tris, offs = work.tris, work.offs
        j0, j1 = [0, 1, 2], [1, 2, 0]
        a = tris[:, j0].ravel()
        b = tris[:, j1].ravel()
        d = (offs[:, j1] - offs[:, j0]).reshape(-1, 2)

        negative = (d[:, 0] < 0) | ((d[:, 0] == 0) & (d[:, 1] < 0))
        swap = (a > b) | ((a == b) & negative)
        ka = np.where(swap, b, a)
        kb = np.where(swap, a, b)
        kd = np.where(swap[:, None], -d, d)
        keys = np.column_stack([ka, kb, kd])

        unique, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        if np.any(counts != 2):
            raise MeshIntegrityError(
                f"{int((counts != 2).sum())} torus edges are not shared by exactly two triangles"
            )
        self.keys = unique
        self.halfedges = np.argsort(inverse.ravel(), kind="stable").reshape(-1, 2)

        pa, pb = work.pos[unique[:, 0]], work.pos[unique[:, 1]] + unique[:, 2:]
        self.vectors = pb - pa
        self.lengths = work.metric_length(unique[:, 0], unique[:, 1], self.vectors)

        kind = work.kind
        ka, kb = unique[:, 0], unique[:, 1]
        self.seam = (_has_x(kind[ka]) & _has_x(kind[kb]) & (unique[:, 2] == 0)) | (
            _has_y(kind[ka]) & _has_y(kind[kb]) & (unique[:, 3] == 0)
        )

    def key_set(self) -> set[tuple[int, int, int, int]]:
        return {tuple(k) for k in self.keys.tolist()}


def _edge_key(a: int, b: int, d: tuple[int, int]) -> tuple[int, int, int, int]:
    dx, dy = d
    if a > b or (a == b and (dx < 0 or (dx == 0 and dy < 0))):
        return (b, a, -dx, -dy)
    return (a, b, dx, dy)


class _TorusMesh:
    """Master-vertex mesh of the torus with per-corner periodic offsets."""

    def __init__(self, mesh: UnitCellMesh, metric: np.ndarray, background: FieldInterpolator):
        masters = mesh.master_vertices
        pos = mesh.vertices[masters].copy()
        pos[np.abs(pos) <= PERIODIC_TOL] = 0.0

        self.background = background
        self.background_metric = metric
        self.pos = pos
        self.kind = (pos[:, 0] == 0.0).astype(np.int64) * SEAM_X + (
            pos[:, 1] == 0.0
        ).astype(np.int64) * SEAM_Y
        self.metric = metric[masters].copy()
        self.tris = mesh.master_column[mesh.triangles]
        self.offs = np.rint(
            mesh.vertices[mesh.triangles] - self.pos[self.tris]
        ).astype(np.int64)

    @property
    def n_vertices(self) -> int:
        return len(self.pos)

    def corners(self) -> np.ndarray:
        return self.pos[self.tris] + self.offs

    def metric_at(self, points: np.ndarray) -> np.ndarray:
        return self.background.interpolate(points, self.background_metric)

    def metric_length(self, a, b, vectors) -> np.ndarray:
        la = np.sqrt(np.einsum("ni,nij,nj->n", vectors, self.metric[a], vectors))
        lb = np.sqrt(np.einsum("ni,nij,nj->n", vectors, self.metric[b], vectors))
        return 0.5 * (la + lb)

    def balls(self) -> list[list[tuple[int, int]]]:
        out: list[list[tuple[int, int]]] = [[] for _ in range(self.n_vertices)]
        for t, row in enumerate(self.tris.tolist()):
            for j, v in enumerate(row):
                out[v].append((t, j))
        return out

    # -- split ---------------------------------------------------------------

    def split_pass(self, table: _EdgeTable) -> int:
        long_edges = np.flatnonzero(table.lengths > SQRT2)
        if len(long_edges) == 0:
            return 0
        order = long_edges[np.lexsort((long_edges, -table.lengths[long_edges]))]

        used = np.zeros(len(self.tris), dtype=bool)
        new_pos, new_kind, new_tris, new_offs = [], [], [], []
        nv = self.n_vertices
        for e in order.tolist():
            h1, h2 = table.halfedges[e]
            t1, t2 = h1 // 3, h2 // 3
            if t1 == t2 or used[t1] or used[t2]:
                continue
            used[t1] = used[t2] = True

            a, b, dx, dy = table.keys[e].tolist()
            mid = 0.5 * (self.pos[a] + self.pos[b] + np.array([dx, dy]))
            q = mid - np.floor(mid)
            q[q >= 1.0] -= 1.0
            kind = FREE
            if _has_x(self.kind[a]) and _has_x(self.kind[b]) and dx == 0:
                q[0] = 0.0
                kind |= SEAM_X
            if _has_y(self.kind[a]) and _has_y(self.kind[b]) and dy == 0:
                q[1] = 0.0
                kind |= SEAM_Y
            m = nv + len(new_pos)
            new_pos.append(q)
            new_kind.append(kind)

            for h in (h1, h2):
                t, j = divmod(int(h), 3)
                u, w, c = (self.tris[t, (j + i) % 3] for i in range(3))
                ou, ow, oc = (self.offs[t, (j + i) % 3].copy() for i in range(3))
                phys = 0.5 * (self.pos[u] + ou + self.pos[w] + ow)
                om = np.rint(phys - q).astype(np.int64)
                self.tris[t] = (u, m, c)
                self.offs[t] = (ou, om, oc)
                new_tris.append((m, w, c))
                new_offs.append((om, ow, oc))

        if not new_pos:
            return 0
        self.pos = np.vstack([self.pos, np.array(new_pos)])
        self.kind = np.concatenate([self.kind, np.array(new_kind, dtype=np.int64)])
        self.metric = np.concatenate([self.metric, self.metric_at(np.array(new_pos))])
        self.tris = np.vstack([self.tris, np.array(new_tris, dtype=np.int64)])
        self.offs = np.concatenate([self.offs, np.array(new_offs, dtype=np.int64)])
        return len(new_pos)

    # -- collapse ------------------------------------------------------------

    def _removable(self, r: int, k: int, d: tuple[int, int]) -> bool:
        kind = self.kind[r]
        if kind == FREE:
            return True
        if kind == SEAM_X:
            return bool(_has_x(self.kind[k])) and d[0] == 0
        if kind == SEAM_Y:
            return bool(_has_y(self.kind[k])) and d[1] == 0
        return False

    def _try_collapse(self, r, k, d, balls, dead_t) -> list[int] | None:
        """Move vertex r onto the image of k at relative offset d; return touched vertices."""
        ball_r = [(t, j) for t, j in balls[r] if not dead_t[t]]
        ball_k = [(t, j) for t, j in balls[k] if not dead_t[t]]
        tris, offs = self.tris, self.offs

        shared, opposite, link_r = [], set(), set()
        for t, j in ball_r:
            base = offs[t, j]
            holds_k = False
            for i in ((j + 1) % 3, (j + 2) % 3):
                rel = tuple((offs[t, i] - base).tolist())
                v = int(tris[t, i])
                link_r.add((v, rel))
                if v == k and rel == d:
                    holds_k = True
            if holds_k:
                shared.append(t)
                i = next(
                    i
                    for i in ((j + 1) % 3, (j + 2) % 3)
                    if not (tris[t, i] == k and tuple((offs[t, i] - base).tolist()) == d)
                )
                opposite.add((int(tris[t, i]), tuple((offs[t, i] - base).tolist())))
        if len(shared) != 2 or len(opposite) != 2:
            return None

        link_k = set()
        for t, j in ball_k:
            base = offs[t, j]
            for i in ((j + 1) % 3, (j + 2) % 3):
                rel = offs[t, i] - base + np.array(d)
                link_k.add((int(tris[t, i]), tuple(rel.tolist())))
        common = (link_r & link_k) - {(k, d), (r, (0, 0))}
        if common != opposite:
            return None

        # New edges from k to the link of r must stay within the band
        pk = self.pos[k] + np.array(d)
        others = [x for x in link_r if x != (k, d) and x not in opposite]
        if others:
            vs = np.array([v for v, _ in others])
            vec = self.pos[vs] + np.array([rel for _, rel in others]) - pk
            if np.any(self.metric_length(np.full(len(vs), k), vs, vec) > SQRT2):
                return None

        updates = []
        for t, j in ball_r:
            if t in shared:
                continue
            p = self.pos[tris[t]] + offs[t]
            p[j] = self.pos[k] + offs[t, j] + np.array(d)
            if _area(p[0], p[1], p[2]) <= MIN_AREA:
                return None
            updates.append((t, j))

        for t, j in updates:
            tris[t, j] = k
            offs[t, j] = offs[t, j] + np.array(d)
        for t in shared:
            dead_t[t] = True
        touched = [r, k] + [v for v, _ in link_r]
        return touched

    def collapse_pass(self, table: _EdgeTable) -> int:
        short = np.flatnonzero(table.lengths < 1.0 / SQRT2)
        if len(short) == 0:
            return 0
        order = short[np.lexsort((short, table.lengths[short]))]

        balls = self.balls()
        locked = np.zeros(self.n_vertices, dtype=bool)
        dead_t = np.zeros(len(self.tris), dtype=bool)
        dead_v = np.zeros(self.n_vertices, dtype=bool)
        count = 0
        for e in order.tolist():
            a, b, dx, dy = table.keys[e].tolist()
            if a == b or locked[a] or locked[b]:
                continue
            for r, k, d in ((a, b, (dx, dy)), (b, a, (-dx, -dy))):
                if not self._removable(r, k, d):
                    continue
                touched = self._try_collapse(r, k, d, balls, dead_t)
                if touched is not None:
                    locked[touched] = True
                    dead_v[r] = True
                    count += 1
                    break
        if count:
            self._compact(dead_t, dead_v)
        return count

    def _compact(self, dead_t: np.ndarray, dead_v: np.ndarray) -> None:
        self.tris = self.tris[~dead_t]
        self.offs = self.offs[~dead_t]
        remap = np.full(self.n_vertices, -1, dtype=np.int64)
        remap[~dead_v] = np.arange(int((~dead_v).sum()))
        self.tris = remap[self.tris]
        if np.any(self.tris < 0):
            raise MeshIntegrityError("Collapse left a triangle referencing a removed vertex")
        self.pos = self.pos[~dead_v]
        self.kind = self.kind[~dead_v]
        self.metric = self.metric[~dead_v]

    # -- flip ----------------------------------------------------------------

    def flip_pass(self, table: _EdgeTable) -> int:
        existing = table.key_set()
        used = np.zeros(len(self.tris), dtype=bool)
        tris, offs, pos = self.tris, self.offs, self.pos
        count = 0
        for e in np.flatnonzero(~table.seam).tolist():
            h1, h2 = table.halfedges[e]
            t1, j1 = divmod(int(h1), 3)
            t2, j2 = divmod(int(h2), 3)
            if t1 == t2 or used[t1] or used[t2]:
                continue
            u, w, c = (int(tris[t1, (j1 + i) % 3]) for i in range(3))
            ou, ow, oc = (offs[t1, (j1 + i) % 3].copy() for i in range(3))
            x, y, dd = (int(tris[t2, (j2 + i) % 3]) for i in range(3))
            ox, oy, od = (offs[t2, (j2 + i) % 3].copy() for i in range(3))
            if x != w or y != u or not np.array_equal(oy - ox, ou - ow):
                continue
            od = od + (ou - oy)

            pu, pw, pc, pd = pos[u] + ou, pos[w] + ow, pos[c] + oc, pos[dd] + od
            M = 0.25 * (self.metric[u] + self.metric[w] + self.metric[c] + self.metric[dd])
            L = np.linalg.cholesky(M)
            qu, qw, qc, qd = (p @ L for p in (pu, pw, pc, pd))
            extent = max(np.sum((q - qu) ** 2) for q in (qw, qc, qd))
            if _incircle(qu, qw, qc, qd) <= 1e-10 * extent * extent:
                continue
            if _area(pc, pu, pd) <= MIN_AREA or _area(pc, pd, pw) <= MIN_AREA:
                continue
            new_key = _edge_key(c, dd, tuple((od - oc).tolist()))
            if new_key in existing or (c == dd and new_key[2:] == (0, 0)):
                continue

            tris[t1] = (c, u, dd)
            offs[t1] = (oc, ou, od)
            tris[t2] = (c, dd, w)
            offs[t2] = (oc, od, ow)
            existing.add(new_key)
            used[t1] = used[t2] = True
            count += 1
        return count

    # -- smoothing -----------------------------------------------------------

    def _quality(self, p: np.ndarray, M: np.ndarray) -> float:
        """Worst metric-space shape quality of (n, 3, 2) triangles, in (0, 1]."""
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        edges = np.stack([d1, d2, p[:, 2] - p[:, 1]], axis=1)
        sq = np.einsum("nki,ij,nkj->n", edges, M, edges)
        return float(np.min(4.0 * np.sqrt(3.0) * area * np.sqrt(np.linalg.det(M)) / sq))

    def smooth_pass(self) -> int:
        balls = self.balls()
        moved = 0
        for v in range(self.n_vertices):
            if self.kind[v] == CORNER or not balls[v]:
                continue
            ball = balls[v]
            ts = np.array([t for t, _ in ball])
            js = np.array([j for _, j in ball])
            base = self.offs[ts, js]

            neighbours = {}
            for t, j in ball:
                for i in ((j + 1) % 3, (j + 2) % 3):
                    rel = tuple((self.offs[t, i] - self.offs[t, j]).tolist())
                    neighbours[(int(self.tris[t, i]), rel)] = None
            nb = np.array([n for n, _ in neighbours])
            rel = np.array([r for _, r in neighbours])
            vec = self.pos[nb] + rel - self.pos[v]
            length = self.metric_length(np.full(len(nb), v), nb, vec)
            disp = SMOOTHING_WEIGHT / len(nb) * np.sum((1.0 - 1.0 / length)[:, None] * vec, axis=0)
            if self.kind[v] == SEAM_X:
                disp[0] = 0.0
            elif self.kind[v] == SEAM_Y:
                disp[1] = 0.0
            if not np.any(disp):
                continue

            before = self.pos[self.tris[ts]] + self.offs[ts]
            after = before.copy()
            after[np.arange(len(ts)), js] = self.pos[v] + disp + base
            d1, d2 = after[:, 1] - after[:, 0], after[:, 2] - after[:, 0]
            if np.any(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) <= MIN_AREA):
                continue
            M = self.metric[v]
            if self._quality(after, M) < self._quality(before, M):
                continue

            new = self.pos[v] + disp
            shift = np.floor(new).astype(np.int64)
            new = new - shift
            for axis in (0, 1):
                if new[axis] >= 1.0:
                    new[axis] -= 1.0
                    shift[axis] += 1
            self.offs[ts, js] = base + shift
            self.pos[v] = new
            self.metric[v] = self.metric_at(new[None])[0]
            moved += 1
        return moved

    # -- output --------------------------------------------------------------

    def in_band_fraction(self, table: _EdgeTable) -> float:
        ok = (table.lengths >= 1.0 / SQRT2) & (table.lengths <= SQRT2)
        return float(ok.mean()) if len(ok) else 1.0

    def unfold(self) -> UnitCellMesh:
        """Cut the torus along the seams into a mesh of [0, 1]^2."""
        corners = self.corners()
        shift = np.floor(corners.mean(axis=1) + 1e-12).astype(np.int64)
        offs = self.offs - shift[:, None, :]

        keys = np.column_stack([self.tris.ravel(), offs.reshape(-1, 2)])
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        vertices = self.pos[unique[:, 0]] + unique[:, 1:]
        if np.any(vertices < -PERIODIC_TOL) or np.any(vertices > 1.0 + PERIODIC_TOL):
            raise MeshIntegrityError("Unfolded triangle crosses the cell boundary")
        vertices = np.clip(vertices, 0.0, 1.0)
        triangles = inverse.ravel().reshape(-1, 3).astype(np.int64)
        return UnitCellMesh(vertices, triangles, pair_periodic_vertices(vertices))


def adapt_mesh(
    mesh: UnitCellMesh,
    vertex_metric: np.ndarray,
    rho: np.ndarray,
    params: AdaptParams,
) -> AdaptResult:
    """
    Remesh the cell to conform to a vertex metric and transfer the density.

    Args:
        mesh: Current mesh
        vertex_metric: (nv, 2, 2) symmetric positive-definite metric per vertex
        rho: Nodal density on mesh
        params: AdaptParams

    Returns:
        AdaptResult with the new mesh and transferred density

    Raises:
        ValueError: If the metric is not positive definite
        DegenerateElementError: If the remesher produced an inverted triangle
        MeshIntegrityError: If the output mesh breaks conformity or pairing
    """
    metric = np.asarray(vertex_metric, dtype=float)
    if metric.shape != (mesh.n_vertices, 2, 2):
        raise ValueError(f"Metric has shape {metric.shape}, expected ({mesh.n_vertices}, 2, 2)")
    if np.any(np.linalg.eigvalsh(0.5 * (metric + metric.transpose(0, 2, 1)))[:, 0] <= 0):
        raise ValueError("Vertex metric must be positive definite everywhere")

    if params.hybrid:
        metric = hybrid_override(metric, rho, params.rho_th, params.h_iso)
    metric = symmetrize_periodic(mesh, metric)

    background = FieldInterpolator(mesh)
    work = _TorusMesh(mesh, metric, background)
    totals = {"split": 0, "collapse": 0, "flip": 0, "smooth": 0}

    iterations = 0
    for iterations in range(1, params.max_iter + 1):
        n_split = work.split_pass(_EdgeTable(work))
        n_collapse = work.collapse_pass(_EdgeTable(work))
        n_flip = 0
        for _ in range(FLIP_SWEEPS):
            flipped = work.flip_pass(_EdgeTable(work))
            n_flip += flipped
            if not flipped:
                break
        n_smooth = work.smooth_pass()
        for key, value in zip(totals, (n_split, n_collapse, n_flip, n_smooth)):
            totals[key] += value
        logger.debug(
            f"Remesh round {iterations}: {n_split} splits, {n_collapse} collapses, "
            f"{n_flip} flips, {n_smooth} moves, {len(work.tris)} triangles"
        )
        if n_split == 0 and n_collapse == 0:
            break

    in_band = work.in_band_fraction(_EdgeTable(work))
    best_effort = in_band < IN_BAND_TARGET
    if best_effort:
        logger.warning(
            f"Remesher stopped with {in_band:.1%} of edges in the unit band "
            f"(target {IN_BAND_TARGET:.0%}); keeping the best-effort mesh"
        )

    new_mesh = work.unfold()
    validate_mesh(new_mesh)

    new_rho = background.interpolate(new_mesh.vertices, rho)
    new_rho = np.clip(new_mesh.periodize(new_rho), params.rho_min, 1.0)
    new_metric = new_mesh.periodize(background.interpolate(new_mesh.vertices, metric))

    logger.info(
        f"Adapted mesh: {mesh.n_triangles} -> {new_mesh.n_triangles} triangles "
        f"in {iterations} rounds ({in_band:.1%} of edges in band)"
    )
    return AdaptResult(
        mesh=new_mesh,
        rho=new_rho,
        metric=new_metric,
        in_band=in_band,
        best_effort=best_effort,
        iterations=iterations,
        operations=totals,
    )
