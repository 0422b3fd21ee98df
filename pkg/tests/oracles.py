"""Independent straight-loop integrators and a monolithic saddle-point solver.

Everything here recomputes integrals point by point in plain Python, with
its own quadrature placement where exactness permits, so the vectorized
assembly and estimator paths are checked against a genuinely separate route.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss

from hdgadapt.fem import element_basis, face_basis, quadrature_element, quadrature_face
from hdgadapt.hdg import project_boundary_data
from hdgadapt.mesh import BOUNDARY, _NEXT


def gauss_segment(n=24):
    x, w = leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


def gauss_triangle(n=12):
    """Duffy tensor rule with the area factor kept in the weights; its point
    placement differs from the production rule."""
    x, w = leggauss(n)
    x, w = (x + 1.0) / 2.0, w / 2.0
    pts, wts = [], []
    for a, wa in zip(x, w):
        for b, wb in zip(x, w):
            pts.append((a * (1.0 - b), b))
            wts.append(wa * wb * (1.0 - b))
    return np.array(pts), np.array(wts)


def tri_geometry(mesh, t):
    v0, v1, v2 = mesh.vertices[mesh.triangles[t]]
    jac = np.column_stack([v1 - v0, v2 - v0])
    return v0, jac, np.linalg.det(jac)


def elem_value(mesh, p, t, coeffs, xy):
    """Evaluate a coefficient vector of the element basis at physical xy."""
    v0, jac, _ = tri_geometry(mesh, t)
    xi = np.linalg.solve(jac, np.asarray(xy) - v0)
    return float(element_basis(p).eval([xi])[0] @ coeffs)


def elem_grad(mesh, p, t, coeffs, xy):
    v0, jac, _ = tri_geometry(mesh, t)
    xi = np.linalg.solve(jac, np.asarray(xy) - v0)
    gref = element_basis(p).eval_grad([xi])[0]      # (dim, 2)
    return np.linalg.solve(jac.T, gref.T @ coeffs)


def face_points(mesh, f, ts):
    va, vb = mesh.vertices[mesh.faces[f]]
    return [va + t * (vb - va) for t in ts]


def face_value(p, coeffs, t):
    return float(face_basis(p).eval([t])[0] @ coeffs)


def side_of(mesh, f, elem):
    """Outward normal of `elem` on face f and the element-local tau inputs."""
    n = mesh.face_normal[f].copy()
    if mesh.face_right[f] == elem:
        n = -n
    elif mesh.face_left[f] != elem:
        raise ValueError("element not adjacent to face")
    return n


def oracle_tau(mesh, problem, elem, f, rho0, nq=24):
    n = side_of(mesh, f, elem)
    ts, _ = gauss_segment(nq)
    sup = -np.inf
    for t in list(ts) + [0.0, 1.0]:
        (pt,) = face_points(mesh, f, [t])
        sup = max(sup, float(problem.beta(pt[0], pt[1]) @ n))
    h_T = mesh.element_diameters[elem]
    return max(sup, 0.0) + min(rho0 * problem.eps / h_T, 1.0)


def oracle_beta_sup(mesh, problem, f, nq=24):
    ts, _ = gauss_segment(nq)
    sup = 0.0
    for t in list(ts) + [0.0, 1.0]:
        (pt,) = face_points(mesh, f, [t])
        sup = max(sup, float(np.linalg.norm(problem.beta(pt[0], pt[1]))))
    return sup


def oracle_alpha(h, eps):
    return min(h / np.sqrt(eps), 1.0)


def oracle_gamma(mesh, problem, f, nq=24):
    h = float(mesh.face_lengths[f])
    eps = problem.eps
    bsup = oracle_beta_sup(mesh, problem, f, nq)
    a = oracle_alpha(h, eps)
    return min(eps / h + (h / eps + a / np.sqrt(eps)) * bsup + h,
               (eps + bsup) / h + h)


def oracle_eta_element_sq(mesh, problem, p, q_coefs, u_coefs, t, nq=12):
    """alpha_T^2 ||f - div q - beta.grad u - c u||^2 + ||q + eps grad u||^2/eps
    by pointwise loops."""
    v0, jac, det = tri_geometry(mesh, t)
    pts, wts = gauss_triangle(nq)
    eps = problem.eps
    acc_r, acc_flux = 0.0, 0.0
    for (a, b), w in zip(pts, wts):
        xy = v0 + jac @ np.array([a, b])
        qv = np.array([elem_value(mesh, p, t, q_coefs[0], xy),
                       elem_value(mesh, p, t, q_coefs[1], xy)])
        divq = elem_grad(mesh, p, t, q_coefs[0], xy)[0] \
            + elem_grad(mesh, p, t, q_coefs[1], xy)[1]
        gu = elem_grad(mesh, p, t, u_coefs, xy)
        uv = elem_value(mesh, p, t, u_coefs, xy)
        beta = problem.beta(xy[0], xy[1])
        r = float(problem.f(xy[0], xy[1])) - divq - float(beta @ gu) \
            - float(problem.c(xy[0], xy[1])) * uv
        misfit = qv + eps * gu
        acc_r += w * det * r * r
        acc_flux += w * det * float(misfit @ misfit)
    alpha = oracle_alpha(mesh.element_diameters[t], eps)
    return alpha ** 2 * acc_r + acc_flux / eps


def oracle_eta_interior_face_sq(mesh, problem, p, q_coefs, u_coefs, f, nq=24):
    tl, tr = mesh.face_left[f], mesh.face_right[f]
    assert tr != BOUNDARY
    n = mesh.face_normal[f]
    h = float(mesh.face_lengths[f])
    ts, ws = gauss_segment(nq)
    acc_q, acc_u = 0.0, 0.0
    for t, w in zip(ts, ws):
        (xy,) = face_points(mesh, f, [t])
        ql = np.array([elem_value(mesh, p, tl, q_coefs[tl][0], xy),
                       elem_value(mesh, p, tl, q_coefs[tl][1], xy)])
        qr = np.array([elem_value(mesh, p, tr, q_coefs[tr][0], xy),
                       elem_value(mesh, p, tr, q_coefs[tr][1], xy)])
        jump_qn = float(ql @ n) - float(qr @ n)
        jump_u = elem_value(mesh, p, tl, u_coefs[tl], xy) \
            - elem_value(mesh, p, tr, u_coefs[tr], xy)
        acc_q += w * h * jump_qn ** 2
        acc_u += w * h * jump_u ** 2
    eps = problem.eps
    alpha = oracle_alpha(h, eps)
    return alpha / np.sqrt(eps) * acc_q + oracle_gamma(mesh, problem, f, nq) * acc_u


def oracle_eta_boundary_face_sq(mesh, problem, p, u_coefs, f, nq=24):
    tl = mesh.face_left[f]
    h = float(mesh.face_lengths[f])
    ts, ws = gauss_segment(nq)
    acc = 0.0
    for t, w in zip(ts, ws):
        (xy,) = face_points(mesh, f, [t])
        diff = elem_value(mesh, p, tl, u_coefs[tl], xy) \
            - float(problem.g(xy[0], xy[1]))
        acc += w * h * diff ** 2
    return oracle_gamma(mesh, problem, f, nq) * acc


def oracle_energy_volume_sq(mesh, problem, p, q_coefs, u_coefs, t, nq=12):
    """Element part of the energy norm for discrete fields (p, w)."""
    v0, jac, det = tri_geometry(mesh, t)
    pts, wts = gauss_triangle(nq)
    eps = problem.eps
    acc = 0.0
    alpha = oracle_alpha(mesh.element_diameters[t], eps)
    for (a, b), w in zip(pts, wts):
        xy = v0 + jac @ np.array([a, b])
        qv = np.array([elem_value(mesh, p, t, q_coefs[0], xy),
                       elem_value(mesh, p, t, q_coefs[1], xy)])
        divq = elem_grad(mesh, p, t, q_coefs[0], xy)[0] \
            + elem_grad(mesh, p, t, q_coefs[1], xy)[1]
        uv = elem_value(mesh, p, t, u_coefs, xy)
        gu = elem_grad(mesh, p, t, u_coefs, xy)
        beta = problem.beta(xy[0], xy[1])
        stream = divq + float(beta @ gu)
        acc += w * det * (float(qv @ qv) / eps + uv * uv
                          + eps * float(gu @ gu)
                          + alpha ** 2 * stream ** 2)
    return acc


def oracle_local_rows(mesh, problem, p, rho0, t, q_coefs, u_coefs, lam3):
    """Residual rows of the local equations for given (q, u, uhat_loc):
    one value per test function, integrated with straight loops.

    Returns (rows_q (2*Nu), rows_u (Nu)) where rows should equal the load
    (0 and (f, w)) when the inputs solve the local problem.
    """
    basis = element_basis(p)
    nu = basis.dim
    v0, jac, det = tri_geometry(mesh, t)
    vol_rule = quadrature_element(2 * p + 4)
    face_rule = quadrature_face(2 * p + 4)
    eps = problem.eps

    rows_q = np.zeros(2 * nu)
    rows_u = np.zeros(nu)
    for (a, b), w in zip(vol_rule.points, vol_rule.weights):
        xy = v0 + jac @ np.array([a, b])
        phi = basis.eval([(a, b)])[0]
        gref = basis.eval_grad([(a, b)])[0]
        gphi = np.linalg.solve(jac.T, gref.T).T       # (nu, 2) physical grads
        qv = np.array([phi @ q_coefs[0], phi @ q_coefs[1]])
        uv = float(phi @ u_coefs)
        beta = problem.beta(xy[0], xy[1])
        cc = float(problem.c(xy[0], xy[1]) - problem.div_beta(xy[0], xy[1]))
        dv = det * w
        # (eps^-1 q, r) - (u, div r)
        rows_q[:nu] += dv * (qv[0] / eps * phi - uv * gphi[:, 0])
        rows_q[nu:] += dv * (qv[1] / eps * phi - uv * gphi[:, 1])
        # -(q + beta u, grad w) + ((c - div beta) u, w)
        rows_u += dv * (-(qv[0] + beta[0] * uv) * gphi[:, 0]
                        - (qv[1] + beta[1] * uv) * gphi[:, 1]
                        + cc * uv * phi)

    fb = face_basis(p)
    for l in range(3):
        f = mesh.tri_face[t, l]
        n = side_of(mesh, f, t)
        h = float(mesh.face_lengths[f])
        tau = oracle_tau(mesh, problem, t, f, rho0)
        lam = lam3[l]
        for s, w in zip(face_rule.points, face_rule.weights):
            (xy,) = face_points(mesh, f, [s])
            xi = np.linalg.solve(jac, xy - v0)
            phi = basis.eval([xi])[0]
            hat = float(fb.eval([s])[0] @ lam)
            qv = np.array([phi @ q_coefs[0], phi @ q_coefs[1]])
            uv = float(phi @ u_coefs)
            beta = problem.beta(xy[0], xy[1])
            ds = h * w
            # <uhat, r.n>
            rows_q[:nu] += ds * hat * n[0] * phi
            rows_q[nu:] += ds * hat * n[1] * phi
            # <q.n + (beta.n) uhat + tau (u - uhat), w>
            flux = float(qv @ n) + float(beta @ n) * hat + tau * (uv - hat)
            rows_u += ds * flux * phi
    return rows_q, rows_u


def oracle_monolithic_solve(mesh, problem, p, rho0=1.0):
    """Assemble and solve the full (q, u, uhat) saddle-point system densely.

    Shares the discretization (quadrature degree 2p+4, bases, boundary
    projection) with the production path but assembles every equation with
    explicit loops and solves in one shot.
    """
    basis = element_basis(p)
    fb = face_basis(p)
    nu, nl1 = basis.dim, p + 1
    nt, nf = mesh.n_triangles, mesh.n_faces
    n_int = 3 * nu
    ndof = nt * n_int + nf * nl1
    vol_rule = quadrature_element(2 * p + 4)
    face_rule = quadrature_face(2 * p + 4)
    eps = problem.eps

    def eoff(t):
        return t * n_int

    def foff(f):
        return nt * n_int + f * nl1

    A = np.zeros((ndof, ndof))
    rhs = np.zeros(ndof)

    for t in range(nt):
        v0, jac, det = tri_geometry(mesh, t)
        o = eoff(t)
        for (a, b), w in zip(vol_rule.points, vol_rule.weights):
            xy = v0 + jac @ np.array([a, b])
            phi = basis.eval([(a, b)])[0]
            gref = basis.eval_grad([(a, b)])[0]
            gphi = np.linalg.solve(jac.T, gref.T).T
            beta = problem.beta(xy[0], xy[1])
            cc = float(problem.c(xy[0], xy[1]) - problem.div_beta(xy[0], xy[1]))
            dv = det * w
            for i in range(nu):
                # row of test r = (phi_i, 0) and (0, phi_i)
                A[o + i, o:o + nu] += dv * phi[i] * phi / eps
                A[o + i, o + 2 * nu:o + 3 * nu] += -dv * gphi[i, 0] * phi
                A[o + nu + i, o + nu:o + 2 * nu] += dv * phi[i] * phi / eps
                A[o + nu + i, o + 2 * nu:o + 3 * nu] += -dv * gphi[i, 1] * phi
                # row of test w = phi_i
                A[o + 2 * nu + i, o:o + nu] += -dv * gphi[i, 0] * phi
                A[o + 2 * nu + i, o + nu:o + 2 * nu] += -dv * gphi[i, 1] * phi
                A[o + 2 * nu + i, o + 2 * nu:o + 3 * nu] += \
                    dv * (-(beta[0] * gphi[i, 0] + beta[1] * gphi[i, 1]) * phi
                          + cc * phi[i] * phi)
                rhs[o + 2 * nu + i] += dv * float(problem.f(xy[0], xy[1])) * phi[i]

        for l in range(3):
            f = mesh.tri_face[t, l]
            n = side_of(mesh, f, t)
            h = float(mesh.face_lengths[f])
            tau = oracle_tau(mesh, problem, t, f, rho0)
            fo = foff(f)
            for s, w in zip(face_rule.points, face_rule.weights):
                (xy,) = face_points(mesh, f, [s])
                xi = np.linalg.solve(jac, xy - v0)
                phi = basis.eval([xi])[0]
                psi = fb.eval([s])[0]
                beta = problem.beta(xy[0], xy[1])
                bn = float(beta @ n)
                ds = h * w
                for i in range(nu):
                    A[o + i, fo:fo + nl1] += ds * n[0] * phi[i] * psi
                    A[o + nu + i, fo:fo + nl1] += ds * n[1] * phi[i] * psi
                    A[o + 2 * nu + i, o:o + nu] += ds * n[0] * phi[i] * phi
                    A[o + 2 * nu + i, o + nu:o + 2 * nu] += ds * n[1] * phi[i] * phi
                    A[o + 2 * nu + i, o + 2 * nu:o + 3 * nu] += ds * tau * phi[i] * phi
                    A[o + 2 * nu + i, fo:fo + nl1] += ds * (bn - tau) * phi[i] * psi

    # P4 flux continuity on interior faces; P3 projection on boundary faces
    for f in range(nf):
        fo = foff(f)
        if mesh.face_right[f] == BOUNDARY:
            h = float(mesh.face_lengths[f])
            A[fo:fo + nl1, fo:fo + nl1] = h * np.eye(nl1)
            rhs[fo:fo + nl1] = h * project_boundary_data(mesh, problem, p, f)
            continue
        for t in (mesh.face_left[f], mesh.face_right[f]):
            o = eoff(t)
            v0, jac, det = tri_geometry(mesh, t)
            n = side_of(mesh, f, t)
            h = float(mesh.face_lengths[f])
            tau = oracle_tau(mesh, problem, t, f, rho0)
            for s, w in zip(face_rule.points, face_rule.weights):
                (xy,) = face_points(mesh, f, [s])
                xi = np.linalg.solve(jac, xy - v0)
                phi = basis.eval([xi])[0]
                psi = fb.eval([s])[0]
                bn = float(problem.beta(xy[0], xy[1]) @ n)
                ds = h * w
                for k in range(nl1):
                    A[fo + k, o:o + nu] += ds * psi[k] * n[0] * phi
                    A[fo + k, o + nu:o + 2 * nu] += ds * psi[k] * n[1] * phi
                    A[fo + k, o + 2 * nu:o + 3 * nu] += ds * psi[k] * tau * phi
                    A[fo + k, fo:fo + nl1] += ds * psi[k] * (bn - tau) * psi

    x = np.linalg.solve(A, rhs)
    q = np.empty((nt, 2, nu))
    u = np.empty((nt, nu))
    for t in range(nt):
        o = eoff(t)
        q[t, 0] = x[o:o + nu]
        q[t, 1] = x[o + nu:o + 2 * nu]
        u[t] = x[o + 2 * nu:o + 3 * nu]
    uhat = x[nt * n_int:].reshape(nf, nl1)
    return q, u, uhat
