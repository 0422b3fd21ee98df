"""Polynomial bases on the reference triangle/edge, quadrature, projections.

The element basis is the monomial basis orthonormalized (Cholesky of the
exact Gram matrix) with respect to L2 on the reference triangle
{x, y >= 0, x + y <= 1}; ordering by total degree keeps it hierarchical.
The face basis is the orthonormalized shifted Legendre family on [0, 1].
"""

from functools import lru_cache
from math import factorial

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

MAX_DEGREE = 3          # supported polynomial order of the discrete spaces
MAX_QUAD_DEGREE = 50


class QuadratureRule:
    """Points/weights on the reference triangle or the unit interval."""

    def __init__(self, points, weights, degree):
        self.points = np.asarray(points, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.degree = degree
        if (self.weights <= 0).any():
            raise ValueError("quadrature weights must be positive")

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature_face(target_degree):
    """Gauss-Legendre rule on [0,1], exact for polynomials of the target degree."""
    if not (0 <= target_degree <= MAX_QUAD_DEGREE):
        raise ValueError(f"face quadrature degree {target_degree} out of range")
    npts = (target_degree + 2) // 2
    x, w = leggauss(max(npts, 1))
    return QuadratureRule((x + 1.0) / 2.0, w / 2.0, target_degree)


@lru_cache(maxsize=None)
def quadrature_element(target_degree):
    """Collapsed Gauss(-Jacobi) product rule on the reference triangle.

    Tensorizes a Legendre rule in the first coordinate with a Jacobi (1,0)
    rule absorbing the Duffy factor, so all weights stay positive and the
    rule is exact for total degree `target_degree`.
    """
    if not (0 <= target_degree <= MAX_QUAD_DEGREE):
        raise ValueError(f"triangle quadrature degree {target_degree} out of range")
    n = max((target_degree + 2) // 2, 1)
    xa, wa = leggauss(n)
    xa, wa = (xa + 1.0) / 2.0, wa / 2.0
    xb, wb = roots_jacobi(n, 1.0, 0.0)      # weight (1-x) on [-1,1]
    xb, wb = (xb + 1.0) / 2.0, wb / 4.0     # weight (1-b) on [0,1]
    a, b = np.meshgrid(xa, xb, indexing="ij")
    pts = np.column_stack([(a * (1.0 - b)).ravel(), b.ravel()])
    wts = np.outer(wa, wb).ravel()
    return QuadratureRule(pts, wts, target_degree)


def reference_monomial_integral(i, j):
    """Exact integral of x^i y^j over the reference triangle."""
    return factorial(i) * factorial(j) / factorial(i + j + 2)


def _monomial_exponents(p):
    return [(d - j, j) for d in range(p + 1) for j in range(d + 1)]


class ElementBasis:
    """Orthonormal hierarchical basis of P_p on the reference triangle."""

    def __init__(self, p):
        if not (1 <= p <= MAX_DEGREE):
            raise ValueError(f"element basis degree {p} unsupported")
        self.degree = p
        self.exponents = _monomial_exponents(p)
        self.dim = len(self.exponents)
        n = self.dim
        gram = np.empty((n, n))
        for a, (i1, j1) in enumerate(self.exponents):
            for b, (i2, j2) in enumerate(self.exponents):
                gram[a, b] = reference_monomial_integral(i1 + i2, j1 + j2)
        lower = np.linalg.cholesky(gram)
        # coefficients of each basis function in the monomial basis
        self.coeffs = np.linalg.inv(lower)

    def _vander(self, points, dx=0, dy=0):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cols = []
        for (i, j) in self.exponents:
            if i < dx or j < dy:
                cols.append(np.zeros(len(pts)))
                continue
            fac = 1.0
            for k in range(dx):
                fac *= i - k
            for k in range(dy):
                fac *= j - k
            cols.append(fac * pts[:, 0] ** (i - dx) * pts[:, 1] ** (j - dy))
        return np.column_stack(cols)

    def eval(self, points):
        """Values at reference points, shape (npts, dim)."""
        return self._vander(points) @ self.coeffs.T

    def eval_grad(self, points):
        """Reference gradients, shape (npts, dim, 2)."""
        gx = self._vander(points, dx=1) @ self.coeffs.T
        gy = self._vander(points, dy=1) @ self.coeffs.T
        return np.stack([gx, gy], axis=2)

    def gram_condition(self, quad_degree=None):
        """Condition number of the Gram matrix sampled by quadrature."""
        rule = quadrature_element(quad_degree or 2 * self.degree)
        v = self.eval(rule.points)
        gram = np.einsum("q,qi,qj->ij", rule.weights, v, v)
        return float(np.linalg.cond(2.0 * gram))


class FaceBasis:
    """Orthonormal shifted Legendre basis of P_p on the unit interval."""

    def __init__(self, p):
        if not (1 <= p <= MAX_DEGREE):
            raise ValueError(f"face basis degree {p} unsupported")
        self.degree = p
        self.dim = p + 1

    def eval(self, t):
        """Values at points of [0,1], shape (npts, dim)."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        x = 2.0 * t - 1.0
        vals = np.empty((len(t), self.dim))
        vals[:, 0] = 1.0
        if self.dim > 1:
            vals[:, 1] = x
        for k in range(2, self.dim):
            vals[:, k] = ((2 * k - 1) * x * vals[:, k - 1]
                          - (k - 1) * vals[:, k - 2]) / k
        return vals * np.sqrt(2.0 * np.arange(self.dim) + 1.0)


@lru_cache(maxsize=None)
def element_basis(p):
    return ElementBasis(p)


@lru_cache(maxsize=None)
def face_basis(p):
    return FaceBasis(p)


def element_basis_eval(p, points):
    """Values and gradients of the degree-p element basis at reference points."""
    basis = element_basis(p)
    return basis.eval(points), basis.eval_grad(points)


def l2_project_segment(p, func, a, b, quad_degree=None):
    """L2 projection of func onto P_p along the segment a->b.

    Coefficients refer to the orthonormal face basis in the arclength
    parameter t in [0,1] measured from `a`.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    rule = quadrature_face(quad_degree or 2 * p + 4)
    pts = a[None, :] + rule.points[:, None] * (b - a)[None, :]
    fvals = np.asarray(func(pts[:, 0], pts[:, 1]), dtype=np.float64)
    psi = face_basis(p).eval(rule.points)
    return np.einsum("q,q,qk->k", rule.weights, fvals, psi)


def l2_project_face(p, func, mesh, face_id, quad_degree=None):
    """L2 projection of func onto P_p(F) for a mesh face (global orientation)."""
    mesh._check_id(face_id, mesh.n_faces, "face")
    va, vb = mesh.vertices[mesh.faces[face_id]]
    return l2_project_segment(p, func, va, vb, quad_degree)


def l2_project_element(p, func, mesh, element_id, quad_degree=None):
    """L2 projection of func onto P_p(T); coefficients in the reference basis
    composed with the affine map of the element."""
    mesh._check_id(element_id, mesh.n_triangles, "triangle")
    v0, v1, v2 = mesh.vertices[mesh.triangles[element_id]]
    rule = quadrature_element(quad_degree or 2 * p + 4)
    pts = (v0[None, :] + np.outer(rule.points[:, 0], v1 - v0)
           + np.outer(rule.points[:, 1], v2 - v0))
    fvals = np.asarray(func(pts[:, 0], pts[:, 1]), dtype=np.float64)
    phi = element_basis(p).eval(rule.points)
    # orthonormality on the reference element turns the mass solve into a
    # plain quadrature sum; the affine Jacobian cancels
    return np.einsum("q,q,qi->i", rule.weights, fvals, phi)
