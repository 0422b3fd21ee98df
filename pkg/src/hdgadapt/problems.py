"""Benchmark convection-diffusion problems and manufactured solutions.

Each problem bundles the diffusion coefficient, velocity field, reaction
coefficient, source and Dirichlet data as vectorized callables of (x, y),
plus the exact solution (value/gradient/Laplacian) when one is known.
"""

import numpy as np
from numpy.polynomial import polynomial as npoly

# exponents are clamped here before np.exp to keep layer evaluations finite
EXP_CLAMP = -700.0


class ExactSolution:
    """Closed-form solution with first and second derivatives."""

    def __init__(self, u, grad, laplacian):
        self.u = u
        self.grad = grad            # (x, y) -> (..., 2)
        self.laplacian = laplacian

    def flux(self, eps):
        """q = -eps * grad(u)."""
        return lambda x, y: -eps * self.grad(x, y)


class ProblemSpec:
    """Coefficients and data of -eps*Lap(u) + beta.grad(u) + c*u = f, u=g."""

    def __init__(self, eps, beta, c, f, g, div_beta=None, exact=None,
                 name="custom", params=None, layer_width=None,
                 g_jumps=()):
        if not (0.0 < eps <= 1.0):
            raise ValueError(f"diffusion coefficient must be in (0,1], got {eps}")
        self.eps = float(eps)
        self.beta = beta            # (x, y) -> (..., 2)
        self.c = c
        self.f = f
        self.g = g
        self.div_beta = div_beta or (lambda x, y: np.zeros_like(np.asarray(x, dtype=float)))
        self.exact = exact
        self.name = name
        self.params = dict(params or {})
        self.layer_width = layer_width
        # boundary points where g is discontinuous; face quadrature splits there
        self.g_jumps = tuple(np.asarray(p, dtype=float) for p in g_jumps)
        self._check_assumptions()

    def _check_assumptions(self, n=128, seed=7):
        rng = np.random.default_rng(seed)
        x, y = rng.random(n), rng.random(n)
        val = self.c(x, y) - 0.5 * self.div_beta(x, y)
        if (np.asarray(val) < -1e-12).any():
            raise ValueError("c - div(beta)/2 must be nonnegative")

    def residual(self, x, y):
        """f - (div q + beta.grad u + c u) with q = -eps grad u; zero for a
        consistent exact solution."""
        if self.exact is None:
            raise ValueError("problem has no exact solution")
        ex = self.exact
        adv = np.einsum("...k,...k->...", self.beta(x, y), ex.grad(x, y))
        return (self.f(x, y) + self.eps * ex.laplacian(x, y)
                - adv - self.c(x, y) * ex.u(x, y))


def _const_beta(bx, by):
    def beta(x, y):
        x = np.asarray(x, dtype=float)
        return np.stack([np.full_like(x, bx), np.full_like(x, by)], axis=-1)
    return beta


def _const(value):
    return lambda x, y: np.full_like(np.asarray(x, dtype=float), value)


def make_example1(eps):
    """Outflow boundary-layer benchmark on the unit square.

    beta=(1,1), c=0, exact solution
    u = x + y(1-x) + (e^{-1/eps} - e^{-(1-x)(1-y)/eps}) / (1 - e^{-1/eps}),
    which develops layers of width O(eps) along x=1 and y=1.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must be in (0,1], got {eps}")
    E = np.exp(max(-1.0 / eps, EXP_CLAMP))
    D = 1.0 - E

    def layer(x, y):
        s = (1.0 - x) * (1.0 - y)
        return np.exp(np.maximum(-s / eps, EXP_CLAMP))

    def u(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return x + y * (1.0 - x) + (E - layer(x, y)) / D

    def grad(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        L = layer(x, y) / (eps * D)
        return np.stack([1.0 - y - (1.0 - y) * L,
                         (1.0 - x) - (1.0 - x) * L], axis=-1)

    def laplacian(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        L = layer(x, y) / (eps * eps * D)
        return -((1.0 - y) ** 2 + (1.0 - x) ** 2) * L

    def f(x, y):
        # hand-reduced -eps*Lap u + (1,1).grad u; validated by the residual
        # identity in the tests
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        L = layer(x, y) / (eps * D)
        return ((2.0 - x - y)
                + ((1.0 - x) ** 2 + (1.0 - y) ** 2
                   - (1.0 - x) - (1.0 - y)) * L)

    exact = ExactSolution(u, grad, laplacian)
    return ProblemSpec(eps, _const_beta(1.0, 1.0), _const(0.0), f, u,
                       exact=exact, name="example1", params={"eps": eps},
                       layer_width=eps)


def _sech2(t):
    # stable 1/cosh^2 for large |t|
    e = np.exp(-2.0 * np.abs(np.asarray(t, dtype=float)))
    return 4.0 * e / (1.0 + e) ** 2


def make_example2(alpha, eps):
    """Internal-layer benchmark: beta=(0,1), c=1, exact solution
    u = (1 - tanh((0.5 - x)/alpha)) / 2 with a layer of width alpha at x=0.5."""
    if alpha <= 0.0:
        raise ValueError(f"layer width must be positive, got {alpha}")
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must be in (0,1], got {eps}")

    def arg(x):
        return (0.5 - np.asarray(x, dtype=float)) / alpha

    def u(x, y):
        return 0.5 * (1.0 - np.tanh(arg(x)))

    def grad(x, y):
        x = np.asarray(x, dtype=float)
        return np.stack([_sech2(arg(x)) / (2.0 * alpha),
                         np.zeros_like(x)], axis=-1)

    def laplacian(x, y):
        t = arg(x)
        return _sech2(t) * np.tanh(t) / alpha ** 2

    def f(x, y):
        # -eps*Lap u + du/dy + u, with du/dy = 0
        t = arg(x)
        return -eps * _sech2(t) * np.tanh(t) / alpha ** 2 \
            + 0.5 * (1.0 - np.tanh(t))

    exact = ExactSolution(u, grad, laplacian)
    return ProblemSpec(eps, _const_beta(0.0, 1.0), _const(1.0), f, u,
                       exact=exact, name="example2",
                       params={"alpha": alpha, "eps": eps},
                       layer_width=alpha)


def make_example3(eps):
    """Interior + outflow layer benchmark without an exact solution:
    beta=(1/2, sqrt(3)/2), c=0, f=0, discontinuous inflow data g."""
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must be in (0,1], got {eps}")

    def g(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        on_bottom = np.abs(y) <= 1e-12
        on_left_low = (np.abs(x) <= 1e-12) & (y <= 0.2)
        return np.where(on_bottom | on_left_low, 1.0, 0.0)

    return ProblemSpec(eps, _const_beta(0.5, np.sqrt(3.0) / 2.0), _const(0.0),
                       _const(0.0), g, name="example3", params={"eps": eps},
                       layer_width=eps, g_jumps=((0.0, 0.2), (1.0, 0.0)))


def make_polynomial_problem(coeffs, eps, beta_const, c_const, name="poly"):
    """Manufactured problem with exact polynomial solution.

    `coeffs[i, j]` multiplies x^i y^j; beta and c are constants so the
    forcing stays a polynomial of the same total degree.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    bx, by = float(beta_const[0]), float(beta_const[1])
    cx = npoly.polyder(coeffs, axis=0)
    cy = npoly.polyder(coeffs, axis=1)
    cxx = npoly.polyder(cx, axis=0)
    cyy = npoly.polyder(cy, axis=1)

    def u(x, y):
        return npoly.polyval2d(np.asarray(x, dtype=float), np.asarray(y, dtype=float), coeffs)

    def grad(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return np.stack([npoly.polyval2d(x, y, cx),
                         npoly.polyval2d(x, y, cy)], axis=-1)

    def laplacian(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return npoly.polyval2d(x, y, cxx) + npoly.polyval2d(x, y, cyy)

    def f(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return (-eps * laplacian(x, y)
                + bx * npoly.polyval2d(x, y, cx)
                + by * npoly.polyval2d(x, y, cy)
                + c_const * u(x, y))

    exact = ExactSolution(u, grad, laplacian)
    return ProblemSpec(eps, _const_beta(bx, by), _const(c_const), f, u,
                       exact=exact, name=name,
                       params={"eps": eps, "beta": (bx, by), "c": c_const})


def make_manufactured_poly(p, eps, beta_const=(1.0, 1.0), c_const=1.0):
    """Fixed degree-p manufactured solution u = (0.3 + x + 2y)^p."""
    if not (1 <= p <= 3):
        raise ValueError(f"manufactured degree {p} unsupported")
    # coefficients of (0.3 + x + 2y)^p in the x^i y^j table
    base = np.zeros((2, 2))
    base[0, 0], base[1, 0], base[0, 1] = 0.3, 1.0, 2.0
    coeffs = np.array([[1.0]])
    for _ in range(p):
        coeffs = _poly2d_mul(coeffs, base)
    return make_polynomial_problem(coeffs, eps, beta_const, c_const,
                                   name=f"poly{p}")


def _poly2d_mul(a, b):
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1))
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if a[i, j] != 0.0:
                out[i:i + b.shape[0], j:j + b.shape[1]] += a[i, j] * b
    return out


_PRESETS = {
    "example2-a3": {"alpha": 1e-3, "eps": 1e-5},
    "example2-a4": {"alpha": 1e-4, "eps": 1e-6},
}


def by_name(name, **params):
    """Problem lookup used by the CLI: example1 | example2 | example3 | poly."""
    if name == "example1":
        return make_example1(params.get("eps", 1e-5))
    if name == "example2":
        preset = _PRESETS["example2-a3"]
        alpha = params.get("alpha") or preset["alpha"]
        eps = params.get("eps") or preset["eps"]
        return make_example2(alpha, eps)
    if name in _PRESETS:
        return make_example2(**_PRESETS[name])
    if name == "example3":
        return make_example3(params.get("eps", 1e-4))
    if name == "poly":
        return make_manufactured_poly(params.get("p", 1),
                                      params.get("eps", 1e-3))
    raise ValueError(f"unknown problem {name!r}")
