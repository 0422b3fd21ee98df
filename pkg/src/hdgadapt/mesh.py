"""Conforming 2D triangulations with newest-vertex-bisection refinement.

The mesh is stored as flat numpy arrays (vertices, triangles, faces) plus
face/element adjacency.  A mesh is immutable after construction; refinement
returns a new mesh.  Faces carry a global orientation (vertex ids ascending)
and a unit normal pointing from the left element into the right one (outward
on the boundary), so jump signs are deterministic everywhere downstream.
"""

import io

import numpy as np

BOUNDARY = -1

_NEXT = np.array([1, 2, 0])
_PREV = np.array([2, 0, 1])


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


class ConformityReport:
    """Result of :func:`conformity_check`: boolean verdict plus diagnostics."""

    def __init__(self):
        self.issues = []
        self.bad_faces = []
        self.bad_triangles = []

    @property
    def ok(self):
        return not self.issues

    def add(self, message, faces=(), triangles=()):
        self.issues.append(message)
        self.bad_faces.extend(faces)
        self.bad_triangles.extend(triangles)

    def __repr__(self):
        verdict = "pass" if self.ok else "fail"
        return f"ConformityReport({verdict}, issues={self.issues})"


class Mesh:
    """Conforming simplicial triangulation of a polygonal domain.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise vertex ids
    refinement_vertex : (nt,) int array, local index of the newest vertex;
        the refinement edge is the edge opposite to it.  Defaults to the
        vertex opposite the longest edge.
    generation : (nt,) int array, bisection depth per triangle (default 0).
    """

    def __init__(self, vertices, triangles, refinement_vertex=None,
                 generation=None, validate=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be (nt, 3)")
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinates")

        nt = len(self.triangles)
        if refinement_vertex is None:
            refinement_vertex = self._longest_edge_opposite()
        self.refinement_vertex = np.ascontiguousarray(refinement_vertex,
                                                      dtype=np.int64)
        if generation is None:
            generation = np.zeros(nt, dtype=np.int64)
        self.generation = np.ascontiguousarray(generation, dtype=np.int64)

        if validate:
            if self.triangles.size and (self.triangles.min() < 0 or
                                        self.triangles.max() >= self.n_vertices):
                raise MeshError("triangle vertex id out of range")
            bad = np.where(self.signed_areas() <= 0.0)[0]
            if bad.size:
                raise MeshError(f"triangles not counterclockwise: {bad.tolist()}")
            if ((self.refinement_vertex < 0) | (self.refinement_vertex > 2)).any():
                raise MeshError("refinement_vertex must be in {0,1,2}")

        self._build_faces(strict=validate)
        self._build_vertex_incidence()
        self._geom_cache = {}

    # -- construction helpers -------------------------------------------------

    def _longest_edge_opposite(self):
        pts = self.vertices[self.triangles]               # (nt, 3, 2)
        # edge k = (v_k, v_{k+1}); its length belongs to the vertex opposite,
        # which is v_{k+2}
        edge_len = np.linalg.norm(pts[:, _NEXT] - pts, axis=2)  # (nt, 3)
        return _PREV[np.argmax(edge_len, axis=1)]

    def _build_faces(self, strict):
        tri = self.triangles
        nt = len(tri)
        pairs = np.stack([tri, tri[:, _NEXT]], axis=2)     # (nt, 3, 2)
        keys = np.sort(pairs.reshape(-1, 2), axis=1)
        faces, inverse = np.unique(keys, axis=0, return_inverse=True)
        nf = len(faces)
        self.faces = faces
        self.tri_face = inverse.reshape(nt, 3)

        counts = np.bincount(inverse, minlength=nf)
        self._overcrowded_faces = np.where(counts > 2)[0]
        if strict and self._overcrowded_faces.size:
            raise MeshError(
                f"faces shared by >2 triangles: {self._overcrowded_faces.tolist()}")

        # group the (triangle, local side) slots by face id
        order = np.argsort(inverse, kind="stable")
        offsets = np.zeros(nf + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        slot1 = order[offsets[:-1]]
        t1, l1 = slot1 // 3, slot1 % 3
        has2 = counts >= 2
        slot2 = order[np.minimum(offsets[:-1] + 1, len(order) - 1)]
        t2, l2 = slot2 // 3, slot2 % 3

        va = self.vertices[faces[:, 0]]
        tangent = self.vertices[faces[:, 1]] - va
        length = np.linalg.norm(tangent, axis=1)
        if strict and (length <= 0).any():
            raise MeshError("degenerate face of zero length")
        normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
        normal /= np.maximum(length, np.finfo(float).tiny)[:, None]

        # the first incident triangle sits left of the face iff `normal`
        # points away from its third vertex
        opp1 = tri[t1, _PREV[l1]]
        side1 = np.einsum("ij,ij->i", normal, self.vertices[opp1] - va)
        first_is_left = side1 < 0.0

        left = np.where(first_is_left, t1, np.where(has2, t2, t1))
        left_local = np.where(first_is_left, l1, np.where(has2, l2, l1))
        right = np.where(has2, np.where(first_is_left, t2, t1), BOUNDARY)
        right_local = np.where(has2, np.where(first_is_left, l2, l1), BOUNDARY)
        # boundary faces keep their single element on the left with the
        # normal flipped outward if needed
        flip = (~has2) & (~first_is_left)
        normal[flip] *= -1.0

        self.face_left = left.astype(np.int64)
        self.face_right = right.astype(np.int64)
        self.face_left_local = left_local.astype(np.int64)
        self.face_right_local = right_local.astype(np.int64)
        self.face_normal = normal
        self._face_length = length

        self._orientation_conflicts = []
        if has2.any():
            opp2 = tri[t2, _PREV[l2]]
            side2 = np.einsum("ij,ij->i", normal, self.vertices[opp2] - va)
            # recompute side1 against the possibly flipped normal is not
            # needed: flips only happen on boundary faces
            conflict = has2 & (np.sign(side1) == np.sign(side2))
            self._orientation_conflicts = np.where(conflict)[0].tolist()
            if strict and self._orientation_conflicts:
                raise MeshError(
                    f"two triangles on one side of faces {self._orientation_conflicts}")

    def _build_vertex_incidence(self):
        flat = self.triangles.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.n_vertices)
        self.v2e_offsets = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.cumsum(counts, out=self.v2e_offsets[1:])
        self.v2e_elements = order // 3

    # -- basic queries ---------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def boundary_faces(self):
        return np.where(self.face_right == BOUNDARY)[0]

    @property
    def interior_faces(self):
        return np.where(self.face_right != BOUNDARY)[0]

    def vertex_elements(self, v):
        self._check_id(v, self.n_vertices, "vertex")
        return self.v2e_elements[self.v2e_offsets[v]:self.v2e_offsets[v + 1]]

    def signed_areas(self):
        pts = self.vertices[self.triangles]
        d1 = pts[:, 1] - pts[:, 0]
        d2 = pts[:, 2] - pts[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def _check_id(self, i, n, what):
        if not (isinstance(i, (int, np.integer)) and 0 <= i < n):
            raise ValueError(f"invalid {what} id {i!r} (have {n})")

    # geometry: cached arrays over all entities, plus per-entity accessors

    def _cached(self, key, fn):
        if key not in self._geom_cache:
            self._geom_cache[key] = fn()
        return self._geom_cache[key]

    @property
    def element_areas(self):
        return self._cached("areas", self.signed_areas)

    @property
    def element_diameters(self):
        def fn():
            pts = self.vertices[self.triangles]
            return np.linalg.norm(pts[:, _NEXT] - pts, axis=2).max(axis=1)
        return self._cached("h_T", fn)

    @property
    def face_lengths(self):
        return self._face_length

    def element_diameter(self, t):
        self._check_id(t, self.n_triangles, "triangle")
        return float(self.element_diameters[t])

    def element_area(self, t):
        self._check_id(t, self.n_triangles, "triangle")
        return float(self.element_areas[t])

    def face_length(self, f):
        self._check_id(f, self.n_faces, "face")
        return float(self._face_length[f])

    def face_unit_normal(self, f):
        self._check_id(f, self.n_faces, "face")
        return self.face_normal[f].copy()

    def face_elements(self, f):
        """Elements of omega_F: (left, right) with right = BOUNDARY outside."""
        self._check_id(f, self.n_faces, "face")
        return int(self.face_left[f]), int(self.face_right[f])

    def refinement_face(self):
        """Face id of each triangle's refinement edge."""
        rows = np.arange(self.n_triangles)
        return self.tri_face[rows, _NEXT[self.refinement_vertex]]

    def min_angle(self):
        """Smallest interior angle over all triangles, in degrees."""
        return float(self.all_angles().min())

    def all_angles(self):
        """All interior angles in degrees, shape (nt, 3)."""
        pts = self.vertices[self.triangles]
        out = np.empty((self.n_triangles, 3))
        for k in range(3):
            u = pts[:, _NEXT[k]] - pts[:, k]
            v = pts[:, _PREV[k]] - pts[:, k]
            cosang = np.einsum("ij,ij->i", u, v) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            out[:, k] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return out


def build_structured_unit_square(n, pattern="ne"):
    """Criss-pattern triangulation of [0,1]^2 with 2*n^2 right triangles.

    `pattern` selects the diagonal direction: "ne" runs from the lower-left
    to the upper-right cell corner, "nw" the other way.  Refinement edges are
    seeded on the hypotenuses.
    """
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValueError(f"subdivision count must be >= 1, got {n!r}")
    if pattern not in ("ne", "nw"):
        raise ValueError(f"unknown diagonal pattern {pattern!r}")

    side = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(side, side, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if pattern == "ne":
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((a, b, d))
                tris.append((b, c, d))
    return Mesh(vertices, np.array(tris, dtype=np.int64))


def conformity_check(mesh):
    """Validate the Mesh invariants; returns a ConformityReport, never raises."""
    report = ConformityReport()
    tri = mesh.triangles
    nt, nf = mesh.n_triangles, mesh.n_faces

    areas = mesh.signed_areas()
    bad = np.where(areas <= 0)[0]
    if bad.size:
        report.add("non-counterclockwise triangles", triangles=bad.tolist())

    if mesh._overcrowded_faces.size:
        report.add("faces shared by more than two triangles",
                   faces=mesh._overcrowded_faces.tolist())
    if mesh._orientation_conflicts:
        report.add("two triangles on the same side of a face",
                   faces=mesh._orientation_conflicts)

    # adjacency bounds and symmetry (face <-> element cross references)
    out_of_range = ((mesh.face_left < 0) | (mesh.face_left >= nt) |
                    (mesh.face_right >= nt) |
                    ((mesh.face_right < 0) & (mesh.face_right != BOUNDARY)))
    dangling = np.where(out_of_range)[0]
    if dangling.size:
        report.add("dangling face: adjacent element id out of range",
                   faces=dangling.tolist())
    else:
        fids = np.arange(nf)
        for elem, local in ((mesh.face_left, mesh.face_left_local),
                            (mesh.face_right, mesh.face_right_local)):
            live = elem != BOUNDARY
            t, l, f = elem[live], local[live], fids[live]
            bad_sym = f[mesh.tri_face[t, l] != f]
            if bad_sym.size:
                report.add("face/element adjacency not symmetric",
                           faces=bad_sym.tolist())
            edge = np.sort(np.stack([tri[t, l], tri[t, _NEXT[l]]], axis=1),
                           axis=1)
            bad_edge = f[(edge != mesh.faces[f]).any(axis=1)]
            if bad_edge.size:
                report.add("face vertices do not match the triangle edge",
                           faces=bad_edge.tolist())

    if ((mesh.refinement_vertex < 0) | (mesh.refinement_vertex > 2)).any():
        report.add("refinement vertex out of {0,1,2}",
                   triangles=np.where((mesh.refinement_vertex < 0) |
                                      (mesh.refinement_vertex > 2))[0].tolist())

    norms = np.linalg.norm(mesh.face_normal, axis=1)
    off = np.where(np.abs(norms - 1.0) > 1e-12)[0]
    if off.size:
        report.add("non-unit face normal", faces=off.tolist())

    # hanging nodes: a vertex coinciding with the midpoint of a face
    if nf and not dangling.size:
        mids = 0.5 * (mesh.vertices[mesh.faces[:, 0]] +
                      mesh.vertices[mesh.faces[:, 1]])
        scale = max(1.0, float(np.abs(mesh.vertices).max()))
        as_key = lambda pts: (np.round(pts[:, 0] / scale, 12) +
                              1j * np.round(pts[:, 1] / scale, 12))
        hanging = np.where(np.isin(as_key(mids), as_key(mesh.vertices)))[0]
        if hanging.size:
            report.add("hanging node at face midpoint", faces=hanging.tolist())

    # covering: triangle areas must sum to the area enclosed by the boundary
    if nf and not dangling.size:
        bnd = mesh.boundary_faces
        mids = 0.5 * (mesh.vertices[mesh.faces[bnd, 0]] +
                      mesh.vertices[mesh.faces[bnd, 1]])
        flux = np.einsum("ij,ij->i", mids, mesh.face_normal[bnd])
        boundary_area = 0.5 * float(flux @ mesh._face_length[bnd])
        total = float(np.sum(np.abs(areas)))
        if total > 0 and abs(total - boundary_area) > 1e-12 * total:
            report.add(f"area mismatch: triangles {total!r} "
                       f"vs boundary integral {boundary_area!r}")
    return report


def nvb_refine(mesh, marked_elements):
    """Bisect the marked triangles (newest-vertex rule) and close to conformity.

    Every marked triangle is bisected across its refinement edge; neighbors
    are bisected as needed so no hanging node survives.  Returns a new Mesh.
    """
    marked = np.unique(np.asarray(list(marked_elements), dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise ValueError("marked element id out of range")

    ref_face = mesh.refinement_face()
    marked_face = np.zeros(mesh.n_faces, dtype=bool)
    marked_face[ref_face[marked]] = True

    # closure: any triangle touching a marked edge gets its refinement edge
    # marked too; terminates because marks only grow
    while True:
        touched = marked_face[mesh.tri_face].any(axis=1)
        need = touched & ~marked_face[ref_face]
        if not need.any():
            break
        marked_face[ref_face[need]] = True

    split = np.where(marked_face)[0]
    midpoint = np.full(mesh.n_faces, -1, dtype=np.int64)
    midpoint[split] = mesh.n_vertices + np.arange(split.size)
    new_vertices = np.vstack([
        mesh.vertices,
        0.5 * (mesh.vertices[mesh.faces[split, 0]] +
               mesh.vertices[mesh.faces[split, 1]]),
    ])

    tris, rvs, gens = [], [], []

    def emit(v0, v1, v2, rv, gen):
        tris.append((v0, v1, v2))
        rvs.append(rv)
        gens.append(gen)

    def bisect(peak, a, b, face_pa, face_pb, mid, gen):
        # children of (peak, a, b) split at mid of edge (a, b); each child is
        # bisected again if its own refinement edge (a parent edge) is marked
        for child, rv, face in (((peak, a, mid), 2, face_pa),
                                ((peak, mid, b), 1, face_pb)):
            if face >= 0 and marked_face[face]:
                m2 = midpoint[face]
                p2, a2, b2 = (np.roll(child, -rv)).tolist()
                emit(p2, a2, m2, 2, gen + 2)
                emit(p2, m2, b2, 1, gen + 2)
            else:
                emit(*child, rv, gen + 1)

    touched = marked_face[mesh.tri_face].any(axis=1)
    for t in range(mesh.n_triangles):
        if not touched[t]:
            emit(*mesh.triangles[t], mesh.refinement_vertex[t],
                 mesh.generation[t])
            continue
        r = mesh.refinement_vertex[t]
        peak, a, b = mesh.triangles[t, [r, _NEXT[r], _PREV[r]]]
        f_ab = mesh.tri_face[t, _NEXT[r]]
        assert marked_face[f_ab]
        bisect(peak, a, b,
               mesh.tri_face[t, r], mesh.tri_face[t, _PREV[r]],
               midpoint[f_ab], mesh.generation[t])

    return Mesh(new_vertices, np.array(tris, dtype=np.int64),
                np.array(rvs, dtype=np.int64), np.array(gens, dtype=np.int64))


# -- text serialization -------------------------------------------------------

def save_mesh(mesh, path_or_file):
    """Write the text mesh format (17 significant digits; generation is not
    serialized and loads as zero)."""
    own = isinstance(path_or_file, (str, bytes))
    fh = open(path_or_file, "w") if own else path_or_file
    try:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {mesh.n_faces}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for (v0, v1, v2), rv in zip(mesh.triangles, mesh.refinement_vertex):
            fh.write(f"{v0} {v1} {v2} {rv}\n")
        for f in range(mesh.n_faces):
            bflag = 1 if mesh.face_right[f] == BOUNDARY else 0
            fh.write(f"{mesh.faces[f, 0]} {mesh.faces[f, 1]} "
                     f"{mesh.face_left[f]} {mesh.face_right[f]} {bflag}\n")
    finally:
        if own:
            fh.close()


def load_mesh(path_or_file):
    """Read the text mesh format and cross-check its face table."""
    own = isinstance(path_or_file, (str, bytes))
    fh = open(path_or_file, "r") if own else path_or_file
    try:
        header = fh.readline().split()
        nv, nt, nf = (int(s) for s in header)
        vertices = np.array([[float(s) for s in fh.readline().split()]
                             for _ in range(nv)])
        tri_rows = np.array([[int(s) for s in fh.readline().split()]
                             for _ in range(nt)], dtype=np.int64)
        face_rows = np.array([[int(s) for s in fh.readline().split()]
                              for _ in range(nf)], dtype=np.int64)
    finally:
        if own:
            fh.close()

    mesh = Mesh(vertices, tri_rows[:, :3], tri_rows[:, 3])
    if mesh.n_faces != nf:
        raise MeshError(f"face count mismatch: file {nf}, rebuilt {mesh.n_faces}")
    rebuilt = np.column_stack([
        mesh.faces, mesh.face_left, mesh.face_right,
        (mesh.face_right == BOUNDARY).astype(np.int64)])
    if not np.array_equal(rebuilt, face_rows):
        raise MeshError("face table in file does not match the triangulation")
    return mesh


def mesh_to_string(mesh):
    buf = io.StringIO()
    save_mesh(mesh, buf)
    return buf.getvalue()


def mesh_from_string(text):
    return load_mesh(io.StringIO(text))
