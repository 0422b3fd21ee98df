"""Residual-based a posteriori error estimator and the error norms.

Element terms combine the weighted strong residual with the flux misfit
q_h + eps*grad(u_h); face terms measure trace and normal-flux jumps with
diffusion-aware weights alpha and gamma, so the estimator stays meaningful
as eps -> 0.  The same face weights enter the energy norm of the error.
"""

import numpy as np

from .fem import element_basis, quadrature_face
from .hdg import CHUNK, element_maps, ref_tables
from .mesh import BOUNDARY


def alpha_weight(h, eps):
    """min(h / sqrt(eps), 1) for an element diameter or face length."""
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    if np.any(np.asarray(h) < 0.0):
        raise ValueError("length scale must be nonnegative")
    return np.minimum(np.asarray(h, dtype=float) / np.sqrt(eps), 1.0)


def gamma_weight(h_F, eps, beta_sup):
    """Face weight: the smaller of the convection-aware and the purely
    mesh-scaled branch."""
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    h_F = np.asarray(h_F, dtype=float)
    if np.any(h_F <= 0.0):
        raise ValueError("face length must be positive")
    beta_sup = np.asarray(beta_sup, dtype=float)
    a = alpha_weight(h_F, eps)
    branch1 = eps / h_F + (h_F / eps + a / np.sqrt(eps)) * beta_sup + h_F
    branch2 = (eps + beta_sup) / h_F + h_F
    return np.minimum(branch1, branch2)


def beta_sup_faces(mesh, problem, faces, quad_degree):
    """max |beta| over quadrature points and endpoints, one value per face."""
    rule = quadrature_face(quad_degree)
    t = np.concatenate([rule.points, [0.0, 1.0]])
    va = mesh.vertices[mesh.faces[faces, 0]]
    vb = mesh.vertices[mesh.faces[faces, 1]]
    pts = va[:, None, :] + t[None, :, None] * (vb - va)[:, None, :]
    b = problem.beta(pts[..., 0], pts[..., 1])
    return np.linalg.norm(b, axis=-1).max(axis=1)


class EstimatorReport:
    """Per-entity squared indicators plus their aggregates."""

    def __init__(self, mesh, eta_T_sq, face_sq, osc_sq):
        self.mesh = mesh
        self.eta_T_sq = eta_T_sq          # (nt,)
        self.face_sq = face_sq            # (nf,) interior and boundary terms
        self.osc_sq = osc_sq              # (nt,)

    @property
    def eta1_sq(self):
        return float(self.eta_T_sq.sum())

    @property
    def eta2_sq(self):
        return float(self.face_sq.sum())

    @property
    def eta1(self):
        return float(np.sqrt(self.eta1_sq))

    @property
    def eta2(self):
        return float(np.sqrt(self.eta2_sq))

    @property
    def eta(self):
        return float(np.sqrt(self.eta1_sq + self.eta2_sq))

    @property
    def total_oscillation(self):
        return float(np.sqrt(self.osc_sq.sum()))

    def to_csv(self, path_or_file):
        """One row per entity: id, type, squared indicator."""
        own = isinstance(path_or_file, (str, bytes))
        fh = open(path_or_file, "w") if own else path_or_file
        try:
            fh.write("id,type,value_sq\n")
            for t, v in enumerate(self.eta_T_sq):
                fh.write(f"{t},element,{v:.17g}\n")
            boundary = self.mesh.face_right == BOUNDARY
            for f, v in enumerate(self.face_sq):
                kind = "boundary_face" if boundary[f] else "interior_face"
                fh.write(f"{f},{kind},{v:.17g}\n")
        finally:
            if own:
                fh.close()


def _volume_fields(solution, elems, tables):
    """Discrete fields and data at the volume quadrature points of `elems`."""
    mesh, problem = solution.mesh, solution.problem
    jac, det, invjt = element_maps(mesh)
    jac, det, invjt = jac[elems], det[elems], invjt[elems]
    v0 = mesh.vertices[mesh.triangles[elems, 0]]
    xq = v0[:, None, :] + np.einsum("eij,qj->eqi", jac, tables.vol.points)
    wq = det[:, None] * tables.vol.weights[None, :]
    gphi = np.einsum("eij,qnj->eqni", invjt, tables.dphi)

    qv = np.einsum("ecn,qn->eqc", solution.q[elems], tables.phi)
    divq = np.einsum("ecn,eqnc->eq", solution.q[elems], gphi)
    uv = np.einsum("en,qn->eq", solution.u[elems], tables.phi)
    gradu = np.einsum("en,eqnc->eqc", solution.u[elems], gphi)
    return xq, wq, det, qv, divq, uv, gradu


def residual_values(solution, elems, tables):
    """Strong residual f - div q_h - beta.grad u_h - c u_h at quadrature
    points, with the weights and measure needed to integrate it."""
    problem = solution.problem
    xq, wq, det, qv, divq, uv, gradu = _volume_fields(solution, elems, tables)
    beta = problem.beta(xq[..., 0], xq[..., 1])
    resid = (problem.f(xq[..., 0], xq[..., 1]) - divq
             - np.einsum("eqc,eqc->eq", beta, gradu)
             - problem.c(xq[..., 0], xq[..., 1]) * uv)
    return resid, wq, det, (qv, uv, gradu)


def residual_Rh(solution, element, quad_degree=None):
    """Projection coefficients (degree p) and L2 norm of the residual on one
    element."""
    mesh = solution.mesh
    mesh._check_id(element, mesh.n_triangles, "triangle")
    tables = ref_tables(solution.p, quad_degree or 2 * solution.p + 4)
    elems = np.array([element])
    resid, wq, det, _ = residual_values(solution, elems, tables)
    norm_sq = float((wq * resid ** 2).sum())
    coeffs = np.einsum("q,eq,qi->i", tables.vol.weights, resid, tables.phi)
    return coeffs, float(np.sqrt(norm_sq))


def estimate(solution, quad_degree=None):
    """Full estimator report for a solved problem."""
    mesh, problem, p = solution.mesh, solution.problem, solution.p
    eps = problem.eps
    deg = quad_degree or 2 * p + 4
    tables = ref_tables(p, deg)
    nt, nf = mesh.n_triangles, mesh.n_faces

    eta_T_sq = np.empty(nt)
    osc_sq = np.empty(nt)
    alpha_T = alpha_weight(mesh.element_diameters, eps)
    for start in range(0, nt, CHUNK):
        elems = np.arange(start, min(start + CHUNK, nt))
        resid, wq, det, fields = residual_values(solution, elems, tables)
        qv, _, gradu = fields
        norm_r_sq = (wq * resid ** 2).sum(axis=1)
        misfit = qv + eps * gradu
        flux_sq = (wq * np.einsum("eqc,eqc->eq", misfit, misfit)).sum(axis=1) / eps
        eta_T_sq[elems] = alpha_T[elems] ** 2 * norm_r_sq + flux_sq
        proj = np.einsum("q,eq,qi->ei", tables.vol.weights, resid, tables.phi)
        rem = norm_r_sq - det * (proj ** 2).sum(axis=1)
        osc_sq[elems] = alpha_T[elems] ** 2 * np.maximum(rem, 0.0)

    face_sq = np.empty(nf)
    interior = mesh.interior_faces
    boundary = mesh.boundary_faces
    if interior.size:
        qn_sq, uj_sq = _interior_jump_norms(solution, interior, tables)
        alpha_F = alpha_weight(mesh.face_lengths[interior], eps)
        gamma = gamma_weight(mesh.face_lengths[interior], eps,
                             beta_sup_faces(mesh, problem, interior, deg))
        face_sq[interior] = alpha_F / np.sqrt(eps) * qn_sq + gamma * uj_sq
    if boundary.size:
        gn_sq = _boundary_mismatch_norms(solution, boundary, tables)
        gamma = gamma_weight(mesh.face_lengths[boundary], eps,
                             beta_sup_faces(mesh, problem, boundary, deg))
        face_sq[boundary] = gamma * gn_sq
    return EstimatorReport(mesh, eta_T_sq, face_sq, osc_sq)


def _trace_values(solution, faces, side, tables):
    """u_h and q_h.n traces on `faces` from one side ('left' or 'right'),
    with n the stored face normal (left outward)."""
    mesh = solution.mesh
    if side == "left":
        elems = mesh.face_left[faces]
        locl = mesh.face_left_local[faces]
        sign = 1.0
    else:
        elems = mesh.face_right[faces]
        locl = mesh.face_right_local[faces]
        sign = -1.0
    flip = (mesh.triangles[elems, locl] != mesh.faces[faces, 0]).astype(int)
    phif = tables.phi_face[locl, flip]          # (nfq, nq, Nu)
    uv = np.einsum("fn,fqn->fq", solution.u[elems], phif)
    qv = np.einsum("fcn,fqn->fqc", solution.q[elems], phif)
    qn = sign * np.einsum("fqc,fc->fq", qv, mesh.face_normal[faces])
    return uv, qn


def _interior_jump_norms(solution, faces, tables):
    """Squared L2 norms of [[q_h.n]] and [[u_h]] per interior face."""
    mesh = solution.mesh
    u_l, qn_l = _trace_values(solution, faces, "left", tables)
    u_r, qn_r = _trace_values(solution, faces, "right", tables)
    w = mesh.face_lengths[faces][:, None] * tables.face.weights[None, :]
    qn_jump_sq = (w * (qn_l + qn_r) ** 2).sum(axis=1)
    u_jump_sq = (w * (u_l - u_r) ** 2).sum(axis=1)
    return qn_jump_sq, u_jump_sq


def _boundary_mismatch_norms(solution, faces, tables):
    """Squared L2 norm of u_h - g per boundary face, splitting the rule at
    stored discontinuities of g."""
    mesh, problem = solution.mesh, solution.problem
    u_l, _ = _trace_values(solution, faces, "left", tables)
    va = mesh.vertices[mesh.faces[faces, 0]]
    vb = mesh.vertices[mesh.faces[faces, 1]]
    pts = va[:, None, :] + tables.face.points[None, :, None] \
        * (vb - va)[:, None, :]
    gv = problem.g(pts[..., 0], pts[..., 1])
    w = mesh.face_lengths[faces][:, None] * tables.face.weights[None, :]
    out = (w * (u_l - gv) ** 2).sum(axis=1)

    for jump in problem.g_jumps:
        d = vb - va
        tcut = np.einsum("fk,fk->f", jump[None, :] - va, d) \
            / np.einsum("fk,fk->f", d, d)
        on_face = (np.linalg.norm(va + tcut[:, None] * d - jump[None, :],
                                  axis=1) <= 1e-12)
        split = np.where(on_face & (tcut > 1e-12) & (tcut < 1.0 - 1e-12))[0]
        for i in split:
            out[i] = _split_boundary_norm(solution, int(faces[i]),
                                          float(tcut[i]), tables)
    return out


def _split_boundary_norm(solution, face, tcut, tables):
    mesh, problem = solution.mesh, solution.problem
    elem = int(mesh.face_left[face])
    locl = int(mesh.face_left_local[face])
    flip = int(mesh.triangles[elem, locl] != mesh.faces[face, 0])
    va, vb = mesh.vertices[mesh.faces[face]]
    basis = element_basis(solution.p)
    ra = _ref_endpoints(locl, flip)
    total = 0.0
    for t0, t1 in ((0.0, tcut), (tcut, 1.0)):
        ts = t0 + tables.face.points * (t1 - t0)
        pts = va[None, :] + ts[:, None] * (vb - va)[None, :]
        ref = ra[0][None, :] + ts[:, None] * (ra[1] - ra[0])[None, :]
        uv = basis.eval(ref) @ solution.u[elem]
        gv = problem.g(pts[:, 0], pts[:, 1])
        h = float(mesh.face_lengths[face]) * (t1 - t0)
        total += h * float((tables.face.weights * (uv - gv) ** 2).sum())
    return total


def _ref_endpoints(local_face, flip):
    from .hdg import _REF_CORNERS
    ra = _REF_CORNERS[local_face]
    rb = _REF_CORNERS[(local_face + 1) % 3]
    return (rb, ra) if flip else (ra, rb)


def eta_element(solution, element, quad_degree=None):
    """eta_T of a single element."""
    solution.mesh._check_id(element, solution.mesh.n_triangles, "triangle")
    report = _estimate_single_volume(solution, element, quad_degree)
    return float(np.sqrt(report))


def _estimate_single_volume(solution, element, quad_degree=None):
    mesh, problem, p = solution.mesh, solution.problem, solution.p
    eps = problem.eps
    tables = ref_tables(p, quad_degree or 2 * p + 4)
    elems = np.array([element])
    resid, wq, det, fields = residual_values(solution, elems, tables)
    qv, _, gradu = fields
    norm_r_sq = float((wq * resid ** 2).sum())
    misfit = qv + eps * gradu
    flux_sq = float((wq * np.einsum("eqc,eqc->eq", misfit, misfit)).sum()) / eps
    a = float(alpha_weight(mesh.element_diameters[element], eps))
    return a ** 2 * norm_r_sq + flux_sq


def eta_interior_face(solution, face, quad_degree=None):
    """eta_F^0 of a single interior face."""
    mesh, problem = solution.mesh, solution.problem
    mesh._check_id(face, mesh.n_faces, "face")
    if mesh.face_right[face] == BOUNDARY:
        raise ValueError(f"face {face} is not interior")
    deg = quad_degree or 2 * solution.p + 4
    tables = ref_tables(solution.p, deg)
    faces = np.array([face])
    qn_sq, uj_sq = _interior_jump_norms(solution, faces, tables)
    eps = problem.eps
    a = float(alpha_weight(mesh.face_lengths[face], eps))
    g = float(gamma_weight(mesh.face_lengths[face], eps,
                           beta_sup_faces(mesh, problem, faces, deg)[0]))
    return float(np.sqrt(a / np.sqrt(eps) * qn_sq[0] + g * uj_sq[0]))


def eta_boundary_face(solution, face, quad_degree=None):
    """eta_F^boundary of a single boundary face."""
    mesh, problem = solution.mesh, solution.problem
    mesh._check_id(face, mesh.n_faces, "face")
    if mesh.face_right[face] != BOUNDARY:
        raise ValueError(f"face {face} is not a boundary face")
    deg = quad_degree or 2 * solution.p + 4
    tables = ref_tables(solution.p, deg)
    faces = np.array([face])
    gn_sq = _boundary_mismatch_norms(solution, faces, tables)
    g = float(gamma_weight(mesh.face_lengths[face], problem.eps,
                           beta_sup_faces(mesh, problem, faces, deg)[0]))
    return float(np.sqrt(g * gn_sq[0]))


def oscillation(solution, element, quad_degree=None):
    """alpha_T * ||R_h - P_W R_h||_{0,T} on one element."""
    mesh = solution.mesh
    mesh._check_id(element, mesh.n_triangles, "triangle")
    tables = ref_tables(solution.p, quad_degree or 2 * solution.p + 4)
    elems = np.array([element])
    resid, wq, det, _ = residual_values(solution, elems, tables)
    norm_r_sq = float((wq * resid ** 2).sum())
    proj = np.einsum("q,eq,qi->ei", tables.vol.weights, resid, tables.phi)
    rem = max(norm_r_sq - float(det[0] * (proj ** 2).sum()), 0.0)
    a = float(alpha_weight(mesh.element_diameters[element], solution.problem.eps))
    return a * float(np.sqrt(rem))


class DiscreteFields:
    """Element-wise polynomial pair (q, w) wearing the solution interface."""

    def __init__(self, mesh, problem, p, q, u):
        self.mesh = mesh
        self.problem = problem
        self.p = p
        self.q = np.asarray(q, dtype=float)
        self.u = np.asarray(u, dtype=float)


def energy_volume_terms(fields, quad_degree=None):
    """Per-element part of the energy norm (squared) of discrete fields:
    ||q||^2/eps + ||w||^2 + eps ||grad w||^2 + alpha_T^2 ||div q + beta.grad w||^2."""
    mesh, problem = fields.mesh, fields.problem
    eps = problem.eps
    tables = ref_tables(fields.p, quad_degree or 2 * fields.p + 4)
    out = np.empty(mesh.n_triangles)
    alpha_T = alpha_weight(mesh.element_diameters, eps)
    for start in range(0, mesh.n_triangles, CHUNK):
        elems = np.arange(start, min(start + CHUNK, mesh.n_triangles))
        xq, wq, det, qv, divq, uv, gradu = _volume_fields(fields, elems, tables)
        beta = problem.beta(xq[..., 0], xq[..., 1])
        stream = divq + np.einsum("eqc,eqc->eq", beta, gradu)
        out[elems] = ((wq * np.einsum("eqc,eqc->eq", qv, qv)).sum(axis=1) / eps
                      + (wq * uv ** 2).sum(axis=1)
                      + eps * (wq * np.einsum("eqc,eqc->eq",
                                              gradu, gradu)).sum(axis=1)
                      + alpha_T[elems] ** 2 * (wq * stream ** 2).sum(axis=1))
    return out


def energy_norm_fields(mesh, problem, p, q_coefs, u_coefs, quad_degree=None):
    """Total energy norm of element-wise polynomial fields (q, w), including
    trace jumps and the plain boundary term gamma_F ||w||^2."""
    fields = DiscreteFields(mesh, problem, p, q_coefs, u_coefs)
    deg = quad_degree or 2 * p + 4
    tables = ref_tables(p, deg)
    total = float(energy_volume_terms(fields, deg).sum())
    eps = problem.eps
    interior = mesh.interior_faces
    if interior.size:
        qn_sq, uj_sq = _interior_jump_norms(fields, interior, tables)
        alpha_F = alpha_weight(mesh.face_lengths[interior], eps)
        gamma = gamma_weight(mesh.face_lengths[interior], eps,
                             beta_sup_faces(mesh, problem, interior, deg))
        total += float((alpha_F / np.sqrt(eps) * qn_sq + gamma * uj_sq).sum())
    boundary = mesh.boundary_faces
    if boundary.size:
        u_b, _ = _trace_values(fields, boundary, "left", tables)
        w = mesh.face_lengths[boundary][:, None] * tables.face.weights[None, :]
        gamma = gamma_weight(mesh.face_lengths[boundary], eps,
                             beta_sup_faces(mesh, problem, boundary, deg))
        total += float((gamma * (w * u_b ** 2).sum(axis=1)).sum())
    return float(np.sqrt(total))


def simple_norm_fields(mesh, problem, p, q_coefs, u_coefs, quad_degree=None):
    """sqrt(sum_T ||q||^2/eps + ||w||^2) for element-wise polynomial fields."""
    fields = DiscreteFields(mesh, problem, p, q_coefs, u_coefs)
    tables = ref_tables(p, quad_degree or 2 * p + 4)
    eps = problem.eps
    total = 0.0
    for start in range(0, mesh.n_triangles, CHUNK):
        elems = np.arange(start, min(start + CHUNK, mesh.n_triangles))
        _, wq, _, qv, _, uv, _ = _volume_fields(fields, elems, tables)
        total += float(((wq * np.einsum("eqc,eqc->eq", qv, qv)).sum(axis=1)
                        / eps + (wq * uv ** 2).sum(axis=1)).sum())
    return float(np.sqrt(total))


class ErrorReport:
    """Exact-solution error norms of one solve."""

    def __init__(self, simple, energy, underresolved):
        self.simple = simple
        self.energy = energy
        self.underresolved = underresolved


def error_norms(solution, quad_degree=None):
    """|| (q - q_h, u - u_h) ||_h and the total energy norm of the error.

    Requires the exact value/gradient/Laplacian.  The `underresolved` flag
    marks runs whose layer width is below the coarsest element diameter, so
    the quadrature may miss part of the layer.
    """
    problem = solution.problem
    if problem.exact is None or problem.exact.grad is None \
            or problem.exact.laplacian is None:
        raise ValueError("error norms need exact u, grad u and Laplacian u")
    mesh, p = solution.mesh, solution.p
    eps = problem.eps
    deg = quad_degree or 2 * p + 4
    tables = ref_tables(p, deg)
    ex = problem.exact

    simple_sq = 0.0
    volume_sq = 0.0
    alpha_T = alpha_weight(mesh.element_diameters, eps)
    for start in range(0, mesh.n_triangles, CHUNK):
        elems = np.arange(start, min(start + CHUNK, mesh.n_triangles))
        xq, wq, det, qv, divq, uv, gradu = _volume_fields(solution, elems,
                                                          tables)
        x, y = xq[..., 0], xq[..., 1]
        du = ex.u(x, y) - uv
        dgrad = ex.grad(x, y) - gradu
        dq = -eps * ex.grad(x, y) - qv
        ddiv = -eps * ex.laplacian(x, y) - divq
        beta = problem.beta(x, y)
        stream = ddiv + np.einsum("eqc,eqc->eq", beta, dgrad)

        l2q = (wq * np.einsum("eqc,eqc->eq", dq, dq)).sum(axis=1)
        l2u = (wq * du ** 2).sum(axis=1)
        simple_sq += float((l2q / eps + l2u).sum())
        volume_sq += float((l2q / eps + l2u
                            + eps * (wq * np.einsum("eqc,eqc->eq",
                                                    dgrad, dgrad)).sum(axis=1)
                            + alpha_T[elems] ** 2
                            * (wq * stream ** 2).sum(axis=1)).sum())

    # interior and boundary face contributions of the error coincide with
    # the estimator face terms: exact traces are single-valued and satisfy
    # the boundary data
    face_sq = 0.0
    interior = mesh.interior_faces
    if interior.size:
        qn_sq, uj_sq = _interior_jump_norms(solution, interior, tables)
        alpha_F = alpha_weight(mesh.face_lengths[interior], eps)
        gamma = gamma_weight(mesh.face_lengths[interior], eps,
                             beta_sup_faces(mesh, problem, interior, deg))
        face_sq += float((alpha_F / np.sqrt(eps) * qn_sq + gamma * uj_sq).sum())
    boundary = mesh.boundary_faces
    if boundary.size:
        gn_sq = _boundary_mismatch_norms(solution, boundary, tables)
        gamma = gamma_weight(mesh.face_lengths[boundary], eps,
                             beta_sup_faces(mesh, problem, boundary, deg))
        face_sq += float((gamma * gn_sq).sum())

    under = (problem.layer_width is not None
             and problem.layer_width < float(mesh.element_diameters.max()))
    return ErrorReport(float(np.sqrt(simple_sq)),
                       float(np.sqrt(volume_sq + face_sq)), under)


def simple_error_norm(solution, quad_degree=None):
    """|| (q - q_h, u - u_h) ||_h only."""
    return error_norms(solution, quad_degree).simple
