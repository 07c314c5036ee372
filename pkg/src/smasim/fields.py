"""Structured-grid fields, difference/quadrature operators, and geometry checks.

Deformations live on a tensor-product node grid over a box.  First
derivatives use central differences inside and one-sided closure rows at
the ends built by ghost-node extrapolation, so the truncation error is a
single smooth h^2 u'''/6 field across the whole box and twice-differenced
quantities (the minor-field gradients) stay uniformly second order up to
the boundary.

The quadrature is trapezoid with end corrections derived from the
difference operator itself: sum_i w_i (D u)_i equals u(b) - u(a) exactly
for every nodal vector, i.e. D^T w = e_last - e_first.  Discrete
integration by parts then has no interior boundary garbage, and spatially
uniform gradients are exact discrete equilibria of the assembled energies
(no spurious forces at free boundaries).

Geometry certificates for injectivity live here too: a volume comparison
integral det(grad y) vs Lebesgue measure of the image (rasterized), the
L^delta distortion norm of |grad y|^3/det(grad y), and a direct overlap
check between deformed cells.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np

from . import tensors
from .errors import NonPositiveDeterminant, TraceError

FIELD_MAGIC = "SMASIM-FIELD 1"


@dataclass(frozen=True)
class Grid:
    """Node counts, origin and extents of a tensor-product box grid."""

    shape: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    extents: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "extents", tuple(float(v) for v in self.extents))
        if len(self.shape) != 3 or any(n < 3 for n in self.shape):
            raise ValueError("grid needs >= 3 nodes per axis")
        if any(e <= 0 for e in self.extents):
            raise ValueError("grid extents must be positive")

    @property
    def spacing(self):
        return tuple(e / (n - 1) for e, n in zip(self.extents, self.shape))

    @property
    def volume(self):
        return self.extents[0] * self.extents[1] * self.extents[2]

    @property
    def cell_count(self):
        return (self.shape[0] - 1) * (self.shape[1] - 1) * (self.shape[2] - 1)

    def coordinates(self):
        """Node coordinates, shape (n1, n2, n3, 3)."""
        axes = [o + np.linspace(0.0, e, n) for o, e, n in
                zip(self.origin, self.extents, self.shape)]
        X = np.meshgrid(*axes, indexing="ij")
        return np.stack(X, axis=-1)

    def axis_weights(self, axis):
        return quadrature_weights_1d(self.shape[axis], self.spacing[axis])

    def node_weights(self):
        """Tensor-product quadrature weights, shape (n1, n2, n3)."""
        w1, w2, w3 = (self.axis_weights(a) for a in range(3))
        return w1[:, None, None] * w2[None, :, None] * w3[None, None, :]


def _closure_row(npts):
    """One-sided first-derivative row at the left edge, scaled by 2h.

    The row is the central stencil with its ghost value replaced by the
    extrapolation of maximal polynomial degree through the first npts
    nodes.  That choice reproduces the interior truncation expansion
    (h^2 u'''/6 leading term and the following even orders) through
    order npts - 2, so the discrete error stays a smooth field right up
    to the boundary instead of forming a one-cell layer.
    """
    row = [(-1.0) ** (k + 1) * comb(npts, k + 1) for k in range(npts)]
    row[1] += 1.0
    return row


@lru_cache(maxsize=64)
def difference_matrix(n, h):
    """Dense 1-D first-derivative matrix with matched one-sided closures.

    Interior rows are central differences; the edge rows use _closure_row
    with width min(n, 8).  The cap keeps the operator norm and the
    paired quadrature weights (which must stay positive) under control.
    """
    if n < 3:
        raise ValueError("need at least 3 nodes to difference")
    npts = min(n, 8)
    row = _closure_row(npts)
    D = np.zeros((n, n))
    for i in range(1, n - 1):
        D[i, i - 1], D[i, i + 1] = -1.0, 1.0
    D[0, :npts] = row
    D[-1, -npts:] = [-v for v in row[::-1]]
    return D / (2.0 * h)


@lru_cache(maxsize=64)
def quadrature_weights_1d(n, h):
    """Trapezoid-class weights paired exactly to difference_matrix.

    Satisfies D^T w = e_{n-1} - e_0 (the discrete fundamental theorem of
    calculus), which is what makes uniform-gradient states exact discrete
    equilibria.  The unique flip-symmetric solution is recovered in
    floating point, snapped to rationals, and verified exactly; weights
    are positive for every n.
    """
    if n < 3:
        raise ValueError("need at least 3 nodes to integrate")
    R = difference_matrix(n, 1.0)
    target = np.zeros(n)
    target[0], target[-1] = -1.0, 1.0
    w, *_ = np.linalg.lstsq(R.T, target, rcond=None)
    w = 0.5 * (w + w[::-1])
    rational = [Fraction(x).limit_denominator(1 << 30) for x in w]
    exact_rows = [[Fraction(R[i, j]).limit_denominator(2) for j in range(n)]
                  for i in range(n)]
    for j in range(n):
        lhs = sum(exact_rows[i][j] * rational[i] for i in range(n))
        if lhs != Fraction(int(target[j])):
            raise ArithmeticError(
                f"quadrature pairing failed to rationalize at n = {n}")
    w = h * np.array([float(x) for x in rational])
    if np.any(w <= 0):
        raise ArithmeticError(f"nonpositive quadrature weight at n = {n}")
    w.flags.writeable = False
    return w


def _apply_matrix(A, f, axis):
    f = np.moveaxis(np.asarray(f), axis, 0)
    out = np.tensordot(A, f, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def derivative(f, grid, axis):
    """Nodal first derivative of f along a spatial axis (leading 3 axes)."""
    D = difference_matrix(grid.shape[axis], grid.spacing[axis])
    return _apply_matrix(D, f, axis)


def derivative_adjoint(f, grid, axis):
    """Transpose of `derivative` in the unweighted nodal inner product."""
    D = difference_matrix(grid.shape[axis], grid.spacing[axis])
    return _apply_matrix(D.T, f, axis)


def integrate(f, grid):
    """Quadrature of a nodal scalar field, shape (n1, n2, n3) -> float."""
    w1, w2, w3 = (grid.axis_weights(a) for a in range(3))
    return float(np.einsum("i,j,k,ijk->", w1, w2, w3, f))


def lp_norm(f, p, grid):
    return integrate(np.abs(f) ** p, grid) ** (1.0 / p)


@dataclass(frozen=True, eq=False)
class DeformationField:
    """Nodal deformation with Dirichlet bookkeeping.

    values: (n1, n2, n3, 3); dirichlet_mask flags constrained nodes.
    """

    grid: Grid
    values: np.ndarray
    dirichlet_mask: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape + (3,):
            raise ValueError("deformation values do not match the grid")
        if self.dirichlet_mask.shape != self.grid.shape:
            raise ValueError("dirichlet mask does not match the grid")

    @classmethod
    def identity(cls, grid, dirichlet_mask=None):
        mask = np.zeros(grid.shape, bool) if dirichlet_mask is None else dirichlet_mask
        return cls(grid, grid.coordinates(), mask)

    def copy(self, values=None):
        v = self.values if values is None else values
        return DeformationField(self.grid, np.array(v, dtype=float),
                                self.dirichlet_mask)


@dataclass(frozen=True, eq=False)
class MinorFields:
    """Gradient, minors, and minor gradients of a deformation.

    grad:      (n1, n2, n3, 3, 3)   grad[..., a, b] = d y_a / d x_b
    cof:       (n1, n2, n3, 3, 3)
    det:       (n1, n2, n3)
    grad_cof:  (n1, n2, n3, 3, 3, 3)   last axis is the derivative direction
    grad_det:  (n1, n2, n3, 3)
    """

    grad: np.ndarray
    cof: np.ndarray
    det: np.ndarray
    grad_cof: np.ndarray
    grad_det: np.ndarray

    @property
    def min_det(self):
        return float(self.det.min())


def gradient_of_map(y, grid):
    """Nodal deformation gradient, shape (n1, n2, n3, 3, 3)."""
    G = np.empty(grid.shape + (3, 3))
    for b in range(3):
        G[..., :, b] = derivative(y, grid, axis=b)
    return G


def minor_fields(y, grid):
    """All fields the stored energy consumes, differenced from nodal y."""
    G = gradient_of_map(y, grid)
    cof = tensors.cofactor(G)
    det = tensors.determinant(G)
    grad_cof = np.empty(grid.shape + (3, 3, 3))
    for k in range(3):
        grad_cof[..., k] = derivative(cof, grid, axis=k)
    grad_det = np.empty(grid.shape + (3,))
    for k in range(3):
        grad_det[..., k] = derivative(det, grid, axis=k)
    return MinorFields(G, cof, det, grad_cof, grad_det)


# ---- injectivity / orientation certificates -----------------------------

# Kuhn split of a hexahedron around the 0-7 diagonal; corners are labeled
# ix + 2*iy + 4*iz, and every tet below is positively oriented on the
# reference cube.
TET_CORNERS = ((0, 1, 3, 7), (0, 3, 2, 7), (0, 2, 6, 7),
               (0, 6, 4, 7), (0, 4, 5, 7), (0, 5, 1, 7))


def _cell_corner_array(y):
    """Deformed cell corners, shape (nc1, nc2, nc3, 8, 3), Kuhn labeling."""
    slabs = []
    for iz in (0, 1):
        for iy in (0, 1):
            for ix in (0, 1):
                sx = slice(ix, y.shape[0] - 1 + ix)
                sy = slice(iy, y.shape[1] - 1 + iy)
                sz = slice(iz, y.shape[2] - 1 + iz)
                slabs.append(y[sx, sy, sz])
    return np.stack(slabs, axis=3)


@dataclass(frozen=True)
class VolumeComparisonReport:
    """det-integral vs rasterized image volume.

    residual = integral_det - image_volume; a genuinely injective,
    orientation-preserving map has residual <= error_bound (the volume of
    voxels straddling the image boundary).  residual >> error_bound means
    the map folds over itself.
    """

    integral_det: float
    image_volume: float
    error_bound: float
    voxel_count: tuple

    @property
    def residual(self):
        return self.integral_det - self.image_volume

    @property
    def consistent(self):
        return self.residual <= self.error_bound


def volume_comparison(y, grid, voxels_per_cell=6):
    """Rasterize the deformed configuration and compare volumes.

    Requires det(grad y) > 0 everywhere (raises otherwise): the integral
    side of the comparison is only meaningful for orientation-preserving
    maps.  Voxel centers are tested against the Kuhn tets of every cell.
    """
    mf = minor_fields(y, grid)
    if mf.min_det <= 0.0:
        raise NonPositiveDeterminant(f"min det = {mf.min_det:.3e}")
    integral = integrate(mf.det, grid)

    corners = _cell_corner_array(y).reshape(-1, 8, 3)
    lo = y.reshape(-1, 3).min(axis=0)
    hi = y.reshape(-1, 3).max(axis=0)
    margin = 1e-9 * np.maximum(1.0, hi - lo)
    lo, hi = lo - margin, hi + margin
    nvox = tuple(max(2, voxels_per_cell * (n - 1)) for n in grid.shape)
    dx = (hi - lo) / np.array(nvox)
    voxel_volume = float(np.prod(dx))

    filled = np.zeros(nvox, dtype=bool)
    for tet in TET_CORNERS:
        verts = corners[:, tet, :]
        v0 = verts[:, 0]
        edges = np.swapaxes(verts[:, 1:] - v0[:, None, :], -1, -2)  # columns
        good = np.abs(tensors.determinant(edges)) > 1e-300
        inv_edges = np.full_like(edges, np.nan)
        inv_edges[good] = np.linalg.inv(edges[good])
        for c in np.flatnonzero(good):
            tlo = verts[c].min(axis=0)
            thi = verts[c].max(axis=0)
            i0 = np.maximum(0, np.floor((tlo - lo) / dx - 0.5).astype(int))
            i1 = np.minimum(nvox, np.ceil((thi - lo) / dx + 0.5).astype(int))
            if np.any(i1 <= i0):
                continue
            axes = [lo[a] + dx[a] * (np.arange(i0[a], i1[a]) + 0.5) for a in range(3)]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            lam = np.einsum("ij,...j->...i", inv_edges[c], pts - v0[c])
            inside = np.all(lam > -1e-12, axis=-1) & (lam.sum(axis=-1) < 1.0 + 1e-12)
            filled[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]] |= inside

    image_volume = float(filled.sum()) * voxel_volume
    # voxels whose 6-neighborhood mixes inside and outside bound the
    # rasterization error (outside-of-range counts as empty)
    padded = np.pad(filled, 1)
    mixed = np.zeros(filled.shape, dtype=bool)
    for a in range(3):
        for sh in (1, -1):
            sl = [slice(1, -1)] * 3
            sl[a] = slice(1 + sh, padded.shape[a] - 1 + sh)
            mixed |= filled != padded[tuple(sl)]
    return VolumeComparisonReport(integral, image_volume,
                                  int(np.count_nonzero(mixed)) * voxel_volume,
                                  nvox)


def distortion_norm(y, grid, delta):
    """L^delta norm of |grad y|^3 / det(grad y); finite only if det > 0.

    delta must exceed 2: that is the integrability margin under which this
    quantity certifies local injectivity (open map with discrete preimages).
    """
    if not delta > 2.0:
        raise ValueError("distortion exponent must be > 2")
    mf = minor_fields(y, grid)
    if mf.min_det <= 0.0:
        raise NonPositiveDeterminant(f"min det = {mf.min_det:.3e}")
    ratio = tensors.frobenius_norm(mf.grad) ** 3 / mf.det
    return lp_norm(ratio, delta, grid)


@dataclass(frozen=True)
class OverlapReport:
    """Pairwise intersection check between deformed cells.

    Cells sharing a node in the reference grid are skipped (they always
    touch).  `overlaps` lists offending reference-cell index pairs.
    """

    cells: int
    candidate_pairs: int
    overlaps: tuple

    @property
    def count(self):
        return len(self.overlaps)

    @property
    def injective(self):
        return not self.overlaps


_TET_EDGE_PAIRS = ((1, 0), (2, 0), (3, 0), (2, 1), (3, 1), (3, 2))


def _tet_geometry(corners):
    """Per-cell tet data for the separating-axis tests.

    corners: (NC, 8, 3) deformed cell corners.  Returns verts (NC, 6, 4, 3),
    aabb lo/hi (NC, 6, 3), face normals (NC, 6, 4, 3), edges (NC, 6, 6, 3).
    """
    verts = corners[:, TET_CORNERS, :]
    lo = verts.min(axis=2)
    hi = verts.max(axis=2)
    e = verts[..., 1:, :] - verts[..., :1, :]
    normals = np.stack([
        np.cross(e[..., 0, :], e[..., 1, :]),
        np.cross(e[..., 1, :], e[..., 2, :]),
        np.cross(e[..., 0, :], e[..., 2, :]),
        np.cross(verts[..., 2, :] - verts[..., 1, :],
                 verts[..., 3, :] - verts[..., 1, :]),
    ], axis=-2)
    edges = np.stack([verts[..., i, :] - verts[..., j, :]
                      for i, j in _TET_EDGE_PAIRS], axis=-2)
    return verts, lo, hi, normals, edges


def _sat_batch(verts_a, normals_a, edges_a, verts_b, normals_b, edges_b, pen_tol):
    """Vectorized separating-axis test over K tet pairs -> bool (K,).

    True means penetration deeper than pen_tol along every candidate axis
    (4 + 4 face normals and 36 edge-edge cross products); touching contact
    separates and does not count.
    """
    crosses = np.cross(edges_a[:, :, None, :], edges_b[:, None, :, :])
    axes = np.concatenate([normals_a, normals_b,
                           crosses.reshape(len(verts_a), 36, 3)], axis=1)
    norms = np.linalg.norm(axes, axis=-1)
    pa = np.einsum("kac,kvc->kav", axes, verts_a)
    pb = np.einsum("kac,kvc->kav", axes, verts_b)
    depth = (np.minimum(pa.max(axis=-1), pb.max(axis=-1))
             - np.maximum(pa.min(axis=-1), pb.min(axis=-1)))
    separated = (norms > 1e-12) & (depth <= pen_tol * norms)
    return ~separated.any(axis=1)


def cell_overlap_check(y, grid, pen_tol=1e-9):
    """Search for interpenetrating pairs of non-adjacent deformed cells.

    Broad phase: uniform spatial hash of cell bounding boxes.  Narrow
    phase: separating-axis tests between the Kuhn tets of the two cells.
    Touching along shared faces does not count; only actual penetration
    deeper than pen_tol * scale does.
    """
    nc = tuple(n - 1 for n in grid.shape)
    corners = _cell_corner_array(y).reshape(-1, 8, 3)
    n_cells = corners.shape[0]
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)
    scale = float(np.max(y.max(axis=(0, 1, 2)) - y.min(axis=(0, 1, 2))))
    if scale <= 0:
        scale = 1.0

    bin_size = float(np.max(hi - lo))
    origin = lo.min(axis=0)
    key_lo = np.floor((lo - origin) / bin_size).astype(int)
    key_hi = np.floor((hi - origin) / bin_size).astype(int)
    bins = {}
    for c in range(n_cells):
        for bx in range(key_lo[c, 0], key_hi[c, 0] + 1):
            for by in range(key_lo[c, 1], key_hi[c, 1] + 1):
                for bz in range(key_lo[c, 2], key_hi[c, 2] + 1):
                    bins.setdefault((bx, by, bz), []).append(c)

    def multi_index(c):
        i, rem = divmod(c, nc[1] * nc[2])
        j, k = divmod(rem, nc[2])
        return i, j, k

    idx = np.array([multi_index(c) for c in range(n_cells)])
    candidates = set()
    for members in bins.values():
        for a_pos in range(len(members)):
            for b_pos in range(a_pos + 1, len(members)):
                a, b = members[a_pos], members[b_pos]
                if np.max(np.abs(idx[a] - idx[b])) <= 1:
                    continue  # share a node in the reference grid
                if np.any(lo[a] > hi[b]) or np.any(lo[b] > hi[a]):
                    continue
                candidates.add((min(a, b), max(a, b)))

    overlaps = []
    if candidates:
        pairs = np.array(sorted(candidates))
        verts, tlo, thi, normals, edges = _tet_geometry(corners)
        # tet-level AABB prefilter within each candidate cell pair
        a, b = pairs[:, 0], pairs[:, 1]
        box_ok = np.all((tlo[a][:, :, None, :] <= thi[b][:, None, :, :])
                        & (tlo[b][:, None, :, :] <= thi[a][:, :, None, :]),
                        axis=-1)
        pair_id, ta, tb = np.nonzero(box_ok)
        hit_pair = np.zeros(len(pairs), dtype=bool)
        chunk = 65536
        for s in range(0, len(pair_id), chunk):
            sl = slice(s, s + chunk)
            pi, i, j = pair_id[sl], ta[sl], tb[sl]
            ca, cb = a[pi], b[pi]
            hits = _sat_batch(verts[ca, i], normals[ca, i], edges[ca, i],
                              verts[cb, j], normals[cb, j], edges[cb, j],
                              pen_tol * scale)
            np.logical_or.at(hit_pair, pi, hits)
        for pi in np.flatnonzero(hit_pair):
            overlaps.append((tuple(int(v) for v in idx[pairs[pi, 0]]),
                             tuple(int(v) for v in idx[pairs[pi, 1]])))
    return OverlapReport(n_cells, len(candidates), tuple(overlaps))


# ---- nodal field serialization ------------------------------------------

def write_field(path, y, grid):
    """Binary nodal field dump: text header, then little-endian float64."""
    y = np.asarray(y, dtype=float)
    if y.shape[:3] != grid.shape:
        raise ValueError("field does not match the grid")
    comps = y.shape[3:]
    header = "\n".join([
        FIELD_MAGIC,
        "shape " + " ".join(str(n) for n in grid.shape),
        "components " + (" ".join(str(n) for n in comps) if comps else "-"),
        "origin " + " ".join(repr(v) for v in grid.origin),
        "extents " + " ".join(repr(v) for v in grid.extents),
        "END",
        "",
    ])
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(y.astype("<f8").tobytes(order="C"))


def read_field(path):
    """Inverse of write_field; returns (values, grid)."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"END\n")
    if not data.startswith(FIELD_MAGIC.encode()) or end < 0:
        raise TraceError(f"{path}: not a field dump")
    fields = {}
    for line in data[:end].decode("ascii").splitlines()[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest.split()
    shape = tuple(int(v) for v in fields["shape"])
    comps = () if fields["components"] == ["-"] else tuple(
        int(v) for v in fields["components"])
    grid = Grid(shape, tuple(float(v) for v in fields["origin"]),
                tuple(float(v) for v in fields["extents"]))
    raw = np.frombuffer(data[end + 4:], dtype="<f8")
    expected = int(np.prod(shape + comps))
    if raw.size != expected:
        raise TraceError(f"{path}: payload has {raw.size} values, "
                         f"header promises {expected}")
    return raw.reshape(shape + comps).copy(), grid
