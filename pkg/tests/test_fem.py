import numpy as np
import pytest

from hdgadapt.fem import (element_basis, element_basis_eval, face_basis,
                          l2_project_element, l2_project_face,
                          l2_project_segment, quadrature_element,
                          quadrature_face, reference_monomial_integral)
from hdgadapt.mesh import build_structured_unit_square


class TestQuadrature:
    @pytest.mark.parametrize("degree", [0, 1, 2, 3, 5, 6, 8, 10, 12])
    def test_triangle_exactness(self, degree):
        rule = quadrature_element(degree)
        assert (rule.weights > 0).all()
        for i in range(degree + 1):
            for j in range(degree + 1 - i):
                got = float(np.sum(rule.weights
                                   * rule.points[:, 0] ** i
                                   * rule.points[:, 1] ** j))
                exact = reference_monomial_integral(i, j)
                assert got == pytest.approx(exact, rel=1e-12)

    def test_triangle_degree_zero(self):
        rule = quadrature_element(0)
        assert len(rule) == 1
        assert rule.weights[0] == pytest.approx(0.5, rel=1e-15)

    def test_triangle_xy_integral(self):
        rule = quadrature_element(2)
        got = float(np.sum(rule.weights * rule.points[:, 0] * rule.points[:, 1]))
        assert got == pytest.approx(1.0 / 24.0, rel=1e-14)

    @pytest.mark.parametrize("degree", [0, 1, 3, 7, 11])
    def test_face_exactness(self, degree):
        rule = quadrature_face(degree)
        for k in range(degree + 1):
            got = float(np.sum(rule.weights * rule.points ** k))
            assert got == pytest.approx(1.0 / (k + 1), rel=1e-13)

    def test_face_degree3_two_points(self):
        rule = quadrature_face(3)
        assert len(rule) == 2
        assert float(np.sum(rule.weights * rule.points ** 3)) == \
            pytest.approx(0.25, abs=1e-15)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            quadrature_element(-1)
        with pytest.raises(ValueError):
            quadrature_element(99)
        with pytest.raises(ValueError):
            quadrature_face(99)


class TestElementBasis:
    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_dimension(self, p):
        assert element_basis(p).dim == (p + 1) * (p + 2) // 2

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_orthonormal(self, p):
        basis = element_basis(p)
        rule = quadrature_element(2 * p)
        v = basis.eval(rule.points)
        gram = np.einsum("q,qi,qj->ij", rule.weights, v, v)
        assert np.abs(gram - np.eye(basis.dim)).max() < 1e-12
        assert basis.gram_condition() == pytest.approx(1.0, rel=1e-10)

    def test_unsupported_degree(self):
        with pytest.raises(ValueError):
            element_basis_eval(4, [[0.3, 0.3]])
        with pytest.raises(ValueError):
            element_basis_eval(0, [[0.3, 0.3]])

    def test_constant_in_span(self):
        # moments of 1 against the orthonormal basis reproduce the constant
        basis = element_basis(1)
        rule = quadrature_element(2)
        coeffs = np.einsum("q,qi->i", rule.weights, basis.eval(rule.points))
        pts = np.array([[1 / 3, 1 / 3], [0.1, 0.7], [0.0, 0.0]])
        assert np.abs(basis.eval(pts) @ coeffs - 1.0).max() < 1e-14

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_gradients_match_finite_differences(self, p):
        basis = element_basis(p)
        rng = np.random.default_rng(p)
        pts = rng.random((20, 2)) * 0.45
        vals, grads = element_basis_eval(p, pts)
        h = 1e-6
        for dim, shift in ((0, [h, 0.0]), (1, [0.0, h])):
            fd = (basis.eval(pts + shift) - basis.eval(pts - shift)) / (2 * h)
            denom = max(1.0, np.abs(grads[:, :, dim]).max())
            assert np.abs(grads[:, :, dim] - fd).max() / denom < 1e-6

    def test_projected_gradient_example(self):
        mesh = build_structured_unit_square(2)
        coeffs = l2_project_element(2, lambda x, y: x ** 2 - y, mesh, 0)
        v0 = mesh.vertices[mesh.triangles[0, 0]]
        v1 = mesh.vertices[mesh.triangles[0, 1]]
        v2 = mesh.vertices[mesh.triangles[0, 2]]
        jac = np.column_stack([v1 - v0, v2 - v0])
        xi = np.linalg.solve(jac, np.array([0.3, 0.3]) - v0)
        gref = element_basis(2).eval_grad([xi])[0]
        grad = np.linalg.solve(jac.T, gref.T @ coeffs)
        assert grad == pytest.approx([0.6, -1.0], abs=1e-12)


class TestFaceBasis:
    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_orthonormal(self, p):
        basis = face_basis(p)
        rule = quadrature_face(2 * p)
        v = basis.eval(rule.points)
        gram = np.einsum("q,qi,qj->ij", rule.weights, v, v)
        assert np.abs(gram - np.eye(p + 1)).max() < 1e-12


class TestProjection:
    def test_constant_reproduced(self):
        mesh = build_structured_unit_square(2)
        coeffs = l2_project_element(1, lambda x, y: np.full_like(x, 3.0), mesh, 0)
        rule = quadrature_element(6)
        vals = element_basis(1).eval(rule.points) @ coeffs
        assert np.abs(vals - 3.0).max() < 1e-13

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_polynomial_reproduction(self, p):
        mesh = build_structured_unit_square(2)
        func = lambda x, y: (x + 0.5 * y) ** p
        coeffs = l2_project_element(p, func, mesh, 1)
        rule = quadrature_element(2 * p + 2)
        v0 = mesh.vertices[mesh.triangles[1, 0]]
        jac = np.column_stack([mesh.vertices[mesh.triangles[1, 1]] - v0,
                               mesh.vertices[mesh.triangles[1, 2]] - v0])
        pts = v0[None, :] + rule.points @ jac.T
        vals = element_basis(p).eval(rule.points) @ coeffs
        assert np.abs(vals - func(pts[:, 0], pts[:, 1])).max() < 1e-12

    def test_idempotent(self):
        mesh = build_structured_unit_square(2)
        f = lambda x, y: np.sin(x) * np.cos(y)
        c1 = l2_project_element(2, f, mesh, 0)

        def projected(x, y):
            v0 = mesh.vertices[mesh.triangles[0, 0]]
            jac = np.column_stack([mesh.vertices[mesh.triangles[0, 1]] - v0,
                                   mesh.vertices[mesh.triangles[0, 2]] - v0])
            xi = np.linalg.solve(jac, np.stack([x, y]) - v0[:, None]).T
            return element_basis(2).eval(xi) @ c1

        c2 = l2_project_element(2, projected, mesh, 0)
        assert np.abs(c1 - c2).max() < 1e-13

    def test_orthogonality(self):
        mesh = build_structured_unit_square(2)
        f = lambda x, y: np.exp(x + y)
        coeffs = l2_project_element(2, f, mesh, 0, quad_degree=16)
        rule = quadrature_element(16)
        basis = element_basis(2)
        phi = basis.eval(rule.points)
        v0 = mesh.vertices[mesh.triangles[0, 0]]
        jac = np.column_stack([mesh.vertices[mesh.triangles[0, 1]] - v0,
                               mesh.vertices[mesh.triangles[0, 2]] - v0])
        pts = v0[None, :] + rule.points @ jac.T
        resid = f(pts[:, 0], pts[:, 1]) - phi @ coeffs
        moments = np.einsum("q,q,qi->i", rule.weights, resid, phi)
        assert np.abs(moments).max() < 1e-12

    def test_face_projection_rate(self):
        # RMS (length-normalized) projection error contracts like h^{p+1}
        errs = []
        for length in (0.1, 0.05, 0.025):
            coeffs = l2_project_segment(2, lambda x, y: np.sin(np.pi * x),
                                        [0.0, 0.0], [length, 0.0])
            rule = quadrature_face(24)
            pts = rule.points * length
            resid = np.sin(np.pi * pts) - face_basis(2).eval(rule.points) @ coeffs
            errs.append(np.sqrt(float(np.sum(rule.weights * resid ** 2))))
        assert errs[0] / errs[1] == pytest.approx(8.0, rel=0.2)
        assert errs[1] / errs[2] == pytest.approx(8.0, rel=0.2)

    def test_face_projection_polynomial(self):
        mesh = build_structured_unit_square(2)
        f = int(mesh.interior_faces[0])
        func = lambda x, y: 2.0 * x - y + 0.25
        coeffs = l2_project_face(1, func, mesh, f)
        rule = quadrature_face(5)
        va, vb = mesh.vertices[mesh.faces[f]]
        pts = va[None, :] + rule.points[:, None] * (vb - va)[None, :]
        vals = face_basis(1).eval(rule.points) @ coeffs
        assert np.abs(vals - func(pts[:, 0], pts[:, 1])).max() < 1e-13
