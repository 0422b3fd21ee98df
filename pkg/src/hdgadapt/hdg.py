"""HDG discretization: local assembly, static condensation, skeleton solve.

The local solver couples the flux q, the scalar u and the face trace uhat
through the numerical flux q.n + (beta.n) uhat + tau (u - uhat).  Interior
unknowns are eliminated element by element (Schur complement onto the trace
space); flux continuity across interior faces yields the global sparse
system, and Dirichlet faces are pinned to the face-wise L2 projection of g.

All element loops are batched with numpy; per-element entry points used by
the tests slice the same code path.
"""

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .fem import element_basis, face_basis, quadrature_element, quadrature_face
from .mesh import BOUNDARY, _NEXT

CHUNK = 4096

# reference coordinates of the local face endpoints (local face l runs from
# vertex l to vertex l+1)
_REF_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class LocalSolveError(RuntimeError):
    """Singular element-interior block."""

    def __init__(self, element):
        super().__init__(f"singular interior block on element {element}")
        self.element = element


class LocalBlocks:
    """Dense local matrices of one element.

    A couples (q1, q2, u) to itself, B couples the three face traces into the
    interior equations, C carries the flux moments of the element on its
    faces, D the trace-trace part of those moments, F the load.
    """

    def __init__(self, element, A, B, C, D, F, face_ids, tau, normals, h_T):
        self.element = element
        self.A, self.B, self.C, self.D, self.F = A, B, C, D, F
        self.face_ids = face_ids
        self.tau = tau
        self.normals = normals
        self.h_T = h_T


class CondensedElement:
    """Schur complement K = D - C A^{-1} B with stored recovery factors."""

    def __init__(self, element, K, g, ainv_f, ainv_b, face_ids):
        self.element = element
        self.K = K
        self.g = g
        self.ainv_f = ainv_f
        self.ainv_b = ainv_b
        self.face_ids = face_ids


class HdgSolution:
    """Recovered coefficients: q per element (2 x dim), u per element, uhat
    per face (global face orientation)."""

    def __init__(self, mesh, problem, p, rho0, q, u, uhat, solver_residual):
        self.mesh = mesh
        self.problem = problem
        self.p = p
        self.rho0 = rho0
        self.q = q              # (nt, 2, Nu)
        self.u = u              # (nt, Nu)
        self.uhat = uhat        # (nf, p+1)
        self.solver_residual = solver_residual

    @property
    def n_trace_dofs(self):
        return self.uhat.size


def element_maps(mesh):
    """Affine maps of all elements: jacobian, determinant, inverse transpose."""
    cache = mesh._geom_cache
    if "maps" not in cache:
        pts = mesh.vertices[mesh.triangles]
        jac = np.stack([pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]], axis=2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv /= det[:, None, None]
        cache["maps"] = (jac, det, np.swapaxes(inv, 1, 2).copy())
    return cache["maps"]


class _RefTables:
    """Reference-element evaluation tables shared by assembly and estimation."""

    def __init__(self, p, quad_degree):
        self.p = p
        self.nu = element_basis(p).dim
        self.nl1 = p + 1
        self.vol = quadrature_element(quad_degree)
        self.phi = element_basis(p).eval(self.vol.points)
        self.dphi = element_basis(p).eval_grad(self.vol.points)
        self.face = quadrature_face(quad_degree)
        self.psi = face_basis(p).eval(self.face.points)
        t = self.face.points
        self.phi_face = np.empty((3, 2, len(t), self.nu))
        self.dphi_face = np.empty((3, 2, len(t), self.nu, 2))
        for l in range(3):
            ra, rb = _REF_CORNERS[l], _REF_CORNERS[(l + 1) % 3]
            for flip in (0, 1):
                p0, p1 = (rb, ra) if flip else (ra, rb)
                pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
                self.phi_face[l, flip] = element_basis(p).eval(pts)
                self.dphi_face[l, flip] = element_basis(p).eval_grad(pts)


_tables_cache = {}


def ref_tables(p, quad_degree):
    key = (p, quad_degree)
    if key not in _tables_cache:
        _tables_cache[key] = _RefTables(p, quad_degree)
    return _tables_cache[key]


def _side_data(mesh, elems, l):
    """Face id, flip flag, outward normal and length of local side l."""
    fid = mesh.tri_face[elems, l]
    flip = mesh.triangles[elems, l] != mesh.faces[fid, 0]
    is_left = mesh.face_left[fid] == elems
    normal = np.where(is_left[:, None], mesh.face_normal[fid],
                      -mesh.face_normal[fid])
    return fid, flip, normal, mesh.face_lengths[fid]


def stabilization_tau(mesh, problem, element, face_id, rho0=1.0, p=1):
    """Stabilization on one face of one element:
    max(sup_F beta.n, 0) + min(rho0*eps/h_T, 1), the sup sampled at the face
    quadrature points of degree 2p+4 plus the endpoints."""
    if not (0.0 < rho0 <= 1.0):
        raise ValueError(f"rho0 must be in (0,1], got {rho0}")
    mesh._check_id(element, mesh.n_triangles, "triangle")
    mesh._check_id(face_id, mesh.n_faces, "face")
    locals_ = np.where(mesh.tri_face[element] == face_id)[0]
    if locals_.size == 0:
        raise ValueError(f"face {face_id} does not belong to element {element}")
    l = int(locals_[0])
    elems = np.array([element])
    _, _, normal, _ = _side_data(mesh, elems, l)
    rule = quadrature_face(2 * p + 4)
    va, vb = mesh.vertices[mesh.faces[face_id]]
    t = np.concatenate([rule.points, [0.0, 1.0]])
    pts = va[None, :] + t[:, None] * (vb - va)[None, :]
    bn = problem.beta(pts[:, 0], pts[:, 1]) @ normal[0]
    h_T = mesh.element_diameters[element]
    return float(max(bn.max(), 0.0)
                 + min(rho0 * problem.eps / h_T, 1.0))


def _assemble_batch(mesh, problem, p, rho0, elems, tables):
    """Local blocks for a batch of elements; returns stacked arrays."""
    nu, nl1 = tables.nu, tables.nl1
    ni, nl = 3 * nu, 3 * nl1
    ne = len(elems)
    jac, det, invjt = element_maps(mesh)
    jac, det, invjt = jac[elems], det[elems], invjt[elems]
    v0 = mesh.vertices[mesh.triangles[elems, 0]]
    eps = problem.eps

    xq = v0[:, None, :] + np.einsum("eij,qj->eqi", jac, tables.vol.points)
    wq = det[:, None] * tables.vol.weights[None, :]
    gphi = np.einsum("eij,qnj->eqni", invjt, tables.dphi)

    beta = problem.beta(xq[..., 0], xq[..., 1])
    cc = problem.c(xq[..., 0], xq[..., 1]) - problem.div_beta(xq[..., 0], xq[..., 1])
    fq = problem.f(xq[..., 0], xq[..., 1])

    phi = tables.phi
    mass = np.einsum("eq,qi,qj->eij", wq, phi, phi)
    gx = np.einsum("eq,eqi,qj->eij", wq, gphi[..., 0], phi)
    gy = np.einsum("eq,eqi,qj->eij", wq, gphi[..., 1], phi)
    bgrad = np.einsum("eqk,eqik->eqi", beta, gphi)
    conv = np.einsum("eq,eqi,qj->eij", wq, bgrad, phi)
    react = np.einsum("eq,qi,qj->eij", wq * cc, phi, phi)
    load = np.einsum("eq,qi->ei", wq * fq, phi)

    A = np.zeros((ne, ni, ni))
    B = np.zeros((ne, ni, nl))
    C = np.zeros((ne, nl, ni))
    D = np.zeros((ne, nl, nl))
    F = np.zeros((ne, ni))

    s1, s2, s3 = slice(0, nu), slice(nu, 2 * nu), slice(2 * nu, 3 * nu)
    A[:, s1, s1] = mass / eps
    A[:, s2, s2] = mass / eps
    A[:, s1, s3] = -gx
    A[:, s2, s3] = -gy
    A[:, s3, s1] = -gx
    A[:, s3, s2] = -gy
    A[:, s3, s3] = react - conv
    F[:, s3] = load

    h_T = mesh.element_diameters[elems]
    diff_term = np.minimum(rho0 * eps / h_T, 1.0)
    face_ids = np.empty((ne, 3), dtype=np.int64)
    taus = np.empty((ne, 3))
    normals = np.empty((ne, 3, 2))

    tq = tables.face.points
    wq_f = tables.face.weights
    psi = tables.psi
    for l in range(3):
        fid, flip, normal, h_F = _side_data(mesh, elems, l)
        face_ids[:, l] = fid
        normals[:, l] = normal
        va = mesh.vertices[mesh.faces[fid, 0]]
        vb = mesh.vertices[mesh.faces[fid, 1]]
        xf = va[:, None, :] + tq[None, :, None] * (vb - va)[:, None, :]
        wf = h_F[:, None] * wq_f[None, :]
        phif = np.where(flip[:, None, None],
                        tables.phi_face[l, 1][None],
                        tables.phi_face[l, 0][None])
        betaf = problem.beta(xf[..., 0], xf[..., 1])
        bn = np.einsum("eqk,ek->eq", betaf, normal)
        bn_end = np.einsum("epk,ek->ep",
                           problem.beta(np.stack([va[:, 0], vb[:, 0]], axis=1),
                                        np.stack([va[:, 1], vb[:, 1]], axis=1)),
                           normal)
        sup_bn = np.maximum(bn.max(axis=1), bn_end.max(axis=1))
        tau = np.maximum(sup_bn, 0.0) + diff_term
        taus[:, l] = tau

        smat = np.einsum("eq,eqi,eqj->eij", wf, phif, phif)
        emat = np.einsum("eq,eqi,qk->eik", wf, phif, psi)
        bmat = np.einsum("eq,eqi,qk->eik", wf * bn, phif, psi)
        b2 = np.einsum("eq,qk,ql->ekl", wf * bn, psi, psi)
        wmat = np.einsum("eq,qk,ql->ekl", wf, psi, psi)

        cl = slice(l * nl1, (l + 1) * nl1)
        A[:, s3, s1] += normal[:, 0, None, None] * smat
        A[:, s3, s2] += normal[:, 1, None, None] * smat
        A[:, s3, s3] += tau[:, None, None] * smat
        B[:, s1, cl] = normal[:, 0, None, None] * emat
        B[:, s2, cl] = normal[:, 1, None, None] * emat
        B[:, s3, cl] = bmat - tau[:, None, None] * emat
        C[:, cl, s1] = normal[:, 0, None, None] * np.swapaxes(emat, 1, 2)
        C[:, cl, s2] = normal[:, 1, None, None] * np.swapaxes(emat, 1, 2)
        C[:, cl, s3] = tau[:, None, None] * np.swapaxes(emat, 1, 2)
        D[:, cl, cl] = b2 - tau[:, None, None] * wmat

    return A, B, C, D, F, face_ids, taus, normals, h_T


def assemble_local(mesh, problem, p, element, rho0=1.0):
    """LocalBlocks of a single element (same code path as the batched run)."""
    mesh._check_id(element, mesh.n_triangles, "triangle")
    tables = ref_tables(p, 2 * p + 4)
    out = _assemble_batch(mesh, problem, p, rho0, np.array([element]), tables)
    A, B, C, D, F, fids, taus, normals, h_T = out
    return LocalBlocks(element, A[0], B[0], C[0], D[0], F[0],
                       fids[0], taus[0], normals[0], float(h_T[0]))


def condense(blocks):
    """Eliminate the interior unknowns of one element."""
    try:
        sol = np.linalg.solve(blocks.A,
                              np.concatenate([blocks.F[:, None], blocks.B],
                                             axis=1))
    except np.linalg.LinAlgError as err:
        raise LocalSolveError(blocks.element) from err
    ainv_f, ainv_b = sol[:, 0], sol[:, 1:]
    K = blocks.D - blocks.C @ ainv_b
    g = -blocks.C @ ainv_f
    return CondensedElement(blocks.element, K, g, ainv_f, ainv_b,
                            blocks.face_ids)


def project_boundary_data(mesh, problem, p, face_id, quad_degree=None):
    """Face-wise L2 projection of g, splitting the quadrature at stored
    discontinuity points of g that fall inside the face."""
    rule = quadrature_face(quad_degree or 2 * p + 4)
    psi_basis = face_basis(p)
    va, vb = mesh.vertices[mesh.faces[face_id]]
    h = float(np.linalg.norm(vb - va))
    cuts = [0.0, 1.0]
    for pt in problem.g_jumps:
        d = vb - va
        t = float(np.dot(pt - va, d) / np.dot(d, d))
        if 1e-12 < t < 1.0 - 1e-12 and np.linalg.norm(va + t * d - pt) <= 1e-12 * max(h, 1.0):
            cuts.append(t)
    cuts = sorted(cuts)
    coeffs = np.zeros(p + 1)
    for t0, t1 in zip(cuts[:-1], cuts[1:]):
        ts = t0 + rule.points * (t1 - t0)
        pts = va[None, :] + ts[:, None] * (vb - va)[None, :]
        gv = np.asarray(problem.g(pts[:, 0], pts[:, 1]), dtype=float)
        coeffs += (t1 - t0) * np.einsum("q,q,qk->k", rule.weights, gv,
                                        psi_basis.eval(ts))
    return coeffs


class SkeletonSystem:
    """Global condensed system over all face trace unknowns.

    The matrix spans every face DOF; flux-continuity rows are meaningful on
    interior faces only, and boundary DOFs are pinned to the projected
    Dirichlet data before solving.
    """

    def __init__(self, mesh, problem, p, rho0, matrix, rhs, ainv_f, ainv_b,
                 gdof):
        self.mesh = mesh
        self.problem = problem
        self.p = p
        self.rho0 = rho0
        self.matrix = matrix        # (ndof, ndof) CSR
        self.rhs = rhs
        self._ainv_f = ainv_f       # (nt, ni)
        self._ainv_b = ainv_b       # (nt, ni, nl)
        self._gdof = gdof           # (nt, nl)

        nl1 = p + 1
        bfaces = mesh.boundary_faces
        self.boundary_dofs = (bfaces[:, None] * nl1
                              + np.arange(nl1)[None, :]).ravel()
        self.boundary_values = np.concatenate(
            [project_boundary_data(mesh, problem, p, f) for f in bfaces]) \
            if bfaces.size else np.zeros(0)
        mask = np.ones(self.dimension, dtype=bool)
        mask[self.boundary_dofs] = False
        self.interior_dofs = np.where(mask)[0]

    @property
    def dimension(self):
        return (self.p + 1) * self.mesh.n_faces

    def condensed_parts(self):
        K = self.matrix.tocsr()
        K_ii = K[self.interior_dofs][:, self.interior_dofs]
        K_ib = K[self.interior_dofs][:, self.boundary_dofs]
        return K_ii, K_ib

    def solve(self):
        """Solve for the interior trace DOFs and recover (q, u) everywhere."""
        lam = np.zeros(self.dimension)
        lam[self.boundary_dofs] = self.boundary_values
        if self.interior_dofs.size:
            K_ii, K_ib = self.condensed_parts()
            rhs = self.rhs[self.interior_dofs] - K_ib @ self.boundary_values
            fac = linsolve.factorize(K_ii)
            lam[self.interior_dofs] = fac.solve(rhs)
            resid = fac.last_residual
        else:
            resid = 0.0
        q, u = self.recover_all(lam)
        nl1 = self.p + 1
        uhat = lam.reshape(self.mesh.n_faces, nl1)
        return HdgSolution(self.mesh, self.problem, self.p, self.rho0,
                           q, u, uhat, resid)

    def recover_all(self, lam):
        lam_loc = lam[self._gdof]
        x = self._ainv_f - np.einsum("eij,ej->ei", self._ainv_b, lam_loc)
        nu = element_basis(self.p).dim
        q = np.stack([x[:, :nu], x[:, nu:2 * nu]], axis=1)
        return q, x[:, 2 * nu:]

    def recover_local(self, lam, element):
        """(q, u) coefficients of one element given the trace vector."""
        self.mesh._check_id(element, self.mesh.n_triangles, "triangle")
        if self._ainv_f is None:
            raise RuntimeError("condensation factors not stored")
        lam_loc = lam[self._gdof[element]]
        x = self._ainv_f[element] - self._ainv_b[element] @ lam_loc
        nu = element_basis(self.p).dim
        return np.stack([x[:nu], x[nu:2 * nu]]), x[2 * nu:]


def assemble_global(mesh, problem, p, rho0=1.0):
    """Assemble the condensed skeleton system (deterministic element order)."""
    if not (0.0 < rho0 <= 1.0):
        raise ValueError(f"rho0 must be in (0,1], got {rho0}")
    tables = ref_tables(p, 2 * p + 4)
    nu, nl1 = tables.nu, tables.nl1
    ni, nl = 3 * nu, 3 * nl1
    nt = mesh.n_triangles
    ndof = nl1 * mesh.n_faces

    ainv_f = np.empty((nt, ni))
    ainv_b = np.empty((nt, ni, nl))
    gdof = np.empty((nt, nl), dtype=np.int64)
    rhs = np.zeros(ndof)
    rows, cols, vals = [], [], []

    for start in range(0, nt, CHUNK):
        elems = np.arange(start, min(start + CHUNK, nt))
        A, B, C, D, F, fids, _, _, _ = _assemble_batch(
            mesh, problem, p, rho0, elems, tables)
        try:
            sol = np.linalg.solve(A, np.concatenate([F[:, :, None], B], axis=2))
        except np.linalg.LinAlgError:
            for t in elems:  # pinpoint the failing element
                condense(assemble_local(mesh, problem, p, int(t), rho0))
            raise LocalSolveError(int(elems[0]))
        af, ab = sol[:, :, 0], sol[:, :, 1:]
        K = D - C @ ab
        g = -np.einsum("eij,ej->ei", C, af)

        ainv_f[elems] = af
        ainv_b[elems] = ab
        gd = (fids[:, :, None] * nl1 + np.arange(nl1)[None, None, :]) \
            .reshape(len(elems), nl)
        gdof[elems] = gd
        rows.append(np.repeat(gd, nl, axis=1).ravel())
        cols.append(np.tile(gd, (1, nl)).ravel())
        vals.append(K.ravel())
        np.add.at(rhs, gd.ravel(), g.ravel())

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof)).tocsr()
    return SkeletonSystem(mesh, problem, p, rho0, matrix, rhs,
                          ainv_f, ainv_b, gdof)


def solve_hdg(mesh, problem, p, rho0=1.0):
    return assemble_global(mesh, problem, p, rho0).solve()


def numerical_flux_moments(solution, face_id):
    """Moments <q.n + (beta.n) uhat + tau (u - uhat), psi_k> of the numerical
    flux from both sides of an interior face; their sum is the conservation
    residual."""
    mesh = solution.mesh
    mesh._check_id(face_id, mesh.n_faces, "face")
    if mesh.face_right[face_id] == BOUNDARY:
        raise ValueError(f"face {face_id} is a boundary face")
    out = []
    for elem in (mesh.face_left[face_id], mesh.face_right[face_id]):
        out.append(_flux_moments_side(solution, int(face_id), int(elem)))
    return out[0], out[1]


def conservation_residuals(solution, quad_degree=None):
    """Max-abs moment of the summed left/right numerical flux, one value per
    interior face (all zeros for an exactly conservative solution)."""
    mesh, problem, p = solution.mesh, solution.problem, solution.p
    tables = ref_tables(p, quad_degree or 2 * p + 4)
    faces = mesh.interior_faces
    if faces.size == 0:
        return np.zeros(0)
    tq, wq, psi = tables.face.points, tables.face.weights, tables.psi
    va = mesh.vertices[mesh.faces[faces, 0]]
    vb = mesh.vertices[mesh.faces[faces, 1]]
    pts = va[:, None, :] + tq[None, :, None] * (vb - va)[:, None, :]
    beta = problem.beta(pts[..., 0], pts[..., 1])
    beta_end = problem.beta(np.stack([va[:, 0], vb[:, 0]], axis=1),
                            np.stack([va[:, 1], vb[:, 1]], axis=1))
    h_F = mesh.face_lengths[faces]
    hat = solution.uhat[faces] @ psi.T                     # (F, nq)
    diff_all = np.minimum(solution.rho0 * problem.eps
                          / mesh.element_diameters, 1.0)

    moments = np.zeros((faces.size, p + 1))
    for elems, locl, sign in ((mesh.face_left[faces],
                               mesh.face_left_local[faces], 1.0),
                              (mesh.face_right[faces],
                               mesh.face_right_local[faces], -1.0)):
        flip = (mesh.triangles[elems, locl]
                != mesh.faces[faces, 0]).astype(int)
        phif = tables.phi_face[locl, flip]                 # (F, nq, Nu)
        uv = np.einsum("fn,fqn->fq", solution.u[elems], phif)
        qv = np.einsum("fcn,fqn->fqc", solution.q[elems], phif)
        normal = sign * mesh.face_normal[faces]
        qn = np.einsum("fqc,fc->fq", qv, normal)
        bn = np.einsum("fqc,fc->fq", beta, normal)
        bn_end = np.einsum("fpc,fc->fp", beta_end, normal)
        tau = np.maximum(np.maximum(bn.max(axis=1), bn_end.max(axis=1)), 0.0) \
            + diff_all[elems]
        flux = qn + bn * hat + tau[:, None] * (uv - hat)
        moments += h_F[:, None] * np.einsum("q,fq,qk->fk", wq, flux, psi)
    return np.abs(moments).max(axis=1)


def _flux_moments_side(solution, face_id, element):
    mesh, problem, p = solution.mesh, solution.problem, solution.p
    tables = ref_tables(p, 2 * p + 4)
    l = int(np.where(mesh.tri_face[element] == face_id)[0][0])
    elems = np.array([element])
    _, flip, normal, h_F = _side_data(mesh, elems, l)
    normal, h_F = normal[0], float(h_F[0])

    va, vb = mesh.vertices[mesh.faces[face_id]]
    tq = tables.face.points
    pts = va[None, :] + tq[:, None] * (vb - va)[None, :]
    phif = tables.phi_face[l, int(flip[0])]
    qvals = np.einsum("ck,qk->qc", solution.q[element], phif)
    uvals = phif @ solution.u[element]
    hat = tables.psi @ solution.uhat[face_id]
    bn = problem.beta(pts[:, 0], pts[:, 1]) @ normal

    bn_end = problem.beta(np.array([va[0], vb[0]]),
                          np.array([va[1], vb[1]])) @ normal
    tau = max(max(bn.max(), bn_end.max()), 0.0) + \
        min(solution.rho0 * problem.eps / mesh.element_diameters[element], 1.0)

    flux = qvals @ normal + bn * hat + tau * (uvals - hat)
    return h_F * np.einsum("q,q,qk->k", tables.face.weights, flux, tables.psi)
