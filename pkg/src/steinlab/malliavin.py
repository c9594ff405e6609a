"""Malliavin calculus on Poisson configurations.

Functionals are cylindrical, F = phi(<h_1, gamma>, ..., <h_m, gamma>) with
<h, gamma> = sum_i h(X_i), so the gradient follows from the chain rule:

    D_y F = sum_j d_j phi(S) sum_i <G(X_i, y), grad h_j(X_i)>.

Pairings of a deterministic field g against D F never need the kernel in y:
int g(y) D_y F dy = sum_j d_j phi(S) sum_i <V_g(X_i), grad h_j(X_i)> with
V_g = apply_kernel(g), which is how the Skorohod correction and the duality
check are evaluated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidOrder
from .grids import GridInterpolant, materialize
from .integrals import ScalarField, compensated_integral, compensated_integrals, cumulant
from .kernel import KernelEvaluator, apply_kernel, divergence_identity_rhs, eval_kernel, young_constant
from .quadrature import ball_rule
from .sampling import Configuration, ConfigurationBatch, MCSettings, mean_and_se, run_replications

Array = np.ndarray

# grid resolution (nodes per axis) used to materialise intermediate fields
GRID_NODES = {2: 65, 3: 33}
# product rule used for L2 pairings of lazily evaluated fields
PAIRING_NODES = 32


# --------------------------------------------------------------- functionals


@dataclass(frozen=True, eq=False)
class CylindricalFunctional:
    """F = phi(<h_1, gamma>, ..., <h_m, gamma>).

    ``phi`` and ``grad_phi`` act row-wise on arrays of shape (n, m) and return
    shapes (n,) and (n, m).
    """

    phi: Callable[[Array], Array]
    grad_phi: Callable[[Array], Array]
    fields: tuple

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))

    @classmethod
    def linear(cls, h: ScalarField, shift: float = 0.0) -> "CylindricalFunctional":
        """F = <h, gamma> - shift."""
        return cls(lambda s: s[:, 0] - shift, lambda s: np.ones_like(s), (h,))

    @classmethod
    def constant(cls, c: float, dim: int) -> "CylindricalFunctional":
        return cls(lambda s: np.full(s.shape[0], float(c)), lambda s: np.zeros_like(s), ())

    @property
    def m(self) -> int:
        return len(self.fields)

    def statistics(self, cfg: Configuration) -> Array:
        """Row vector (<h_j, gamma>)_j for one configuration."""
        if self.m == 0:
            return np.zeros((1, 0))
        return np.array([[math.fsum(h(cfg.points)) if len(cfg) else 0.0 for h in self.fields]])

    def batch_statistics(self, batch: ConfigurationBatch) -> Array:
        if self.m == 0:
            return np.zeros((batch.size, 0))
        return np.stack([batch.per_config_sum(h.value(batch.points)) for h in self.fields], axis=1)

    def __call__(self, cfg: Configuration) -> float:
        return float(self.phi(self.statistics(cfg))[0])

    def evaluate_batch(self, batch: ConfigurationBatch) -> Array:
        return self.phi(self.batch_statistics(batch))

    def first_coordinate_extent(self) -> float:
        """Largest first coordinate reached by the supports of the fields."""
        if self.m == 0:
            return -math.inf
        return max(float(h.center[0]) + h.radius for h in self.fields)


@dataclass(frozen=True, eq=False)
class SimpleProcess:
    """u_x = sum_i g_i(x) G_i with deterministic g_i and cylindrical G_i (None means 1)."""

    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @classmethod
    def deterministic(cls, fields: Sequence[ScalarField]) -> "SimpleProcess":
        return cls(tuple((g, None) for g in fields))

    @property
    def dim(self) -> int:
        return self.terms[0][0].dim

    @property
    def predictable(self) -> bool:
        """Each G_i only looks at points left of the support of g_i."""
        for g, G in self.terms:
            if G is None:
                continue
            if G.first_coordinate_extent() > float(g.center[0]) - g.radius:
                return False
        return True

    def coefficients(self, cfg: Configuration) -> Array:
        return np.array([1.0 if G is None else G(cfg) for _, G in self.terms])

    def batch_coefficients(self, batch: ConfigurationBatch) -> Array:
        return np.stack([np.ones(batch.size) if G is None else G.evaluate_batch(batch)
                         for _, G in self.terms], axis=1)

    def value(self, cfg: Configuration, x) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = self.coefficients(cfg)
        return sum(ci * g(x) for ci, (g, _) in zip(c, self.terms))

    def grad(self, cfg: Configuration, x) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = self.coefficients(cfg)
        return sum(ci * g.grad(x) for ci, (g, _) in zip(c, self.terms))


# ------------------------------------------------------------------ gradient


def _kernel_pairs(ke: KernelEvaluator, X: Array, Y: Array) -> tuple[Array, Array]:
    """G(X_i, Y_p) for all pairs, zero where |X_i - Y_p| < epsilon. Returns (P, N, d) and mask."""
    P, N, d = Y.shape[0], X.shape[0], ke.dim
    Xb = np.broadcast_to(X[None], (P, N, d))
    Yb = np.broadcast_to(Y[:, None], (P, N, d))
    keep = np.linalg.norm(Xb - Yb, axis=-1) >= ke.epsilon
    out = np.zeros((P, N, d))
    if np.any(keep):
        out[keep] = eval_kernel(ke, Xb[keep], Yb[keep])
    return out, keep


def gradient_D(ke: KernelEvaluator, F: CylindricalFunctional, cfg: Configuration, y) -> Array:
    """D_y F at each probe y (shape (P,))."""
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    if F.m == 0 or len(cfg) == 0:
        return np.zeros(Y.shape[0])
    dphi = F.grad_phi(F.statistics(cfg))[0]
    G, _ = _kernel_pairs(ke, cfg.points, Y)
    out = np.zeros(Y.shape[0])
    for j, h in enumerate(F.fields):
        if dphi[j] == 0.0:
            continue
        gh = h.grad(cfg.points)
        out += dphi[j] * np.einsum("pnd,nd->p", G, gh)
    return out


# -------------------------------------------------------- kernel transforms


class TransformCache:
    """Grid copies of V_g = apply_kernel(g) over the carrier ball, keyed by field."""

    def __init__(self, ke: KernelEvaluator, n_grid: int | None = None):
        self.ke = ke
        self.n_grid = n_grid or GRID_NODES.get(ke.dim, 25)
        self._cache: dict[int, GridInterpolant] = {}

    def __call__(self, g: ScalarField) -> GridInterpolant:
        key = id(g)
        if key not in self._cache:
            R, n, d = self.ke.R, self.n_grid, self.ke.dim
            lo, hi = np.full(d, -R), np.full(d, R)
            pts = GridInterpolant.nodes(lo, hi, n)
            V = apply_kernel(self.ke, g)(pts)
            self._cache[key] = (g, GridInterpolant(lo, hi, V.reshape((n,) * d + (d,))))
        return self._cache[key][1]


def pairing_with_D(F: CylindricalFunctional, V: Callable[[Array], Array],
                   batch: ConfigurationBatch, S: Array | None = None) -> Array:
    """Per-configuration int g(y) D_y F dy given V = V_g (vectorised over the batch)."""
    if F.m == 0:
        return np.zeros(batch.size)
    S = F.batch_statistics(batch) if S is None else S
    dphi = F.grad_phi(S)
    Vx = V(batch.points)
    inner = np.stack([batch.per_config_sum(np.einsum("nd,nd->n", Vx, h.grad(batch.points)))
                      for h in F.fields], axis=1)
    return np.sum(dphi * inner, axis=1)


def _as_batch(cfg: Configuration) -> ConfigurationBatch:
    n = len(cfg)
    return ConfigurationBatch(cfg.points, np.array([n]), cfg.radius, cfg.dim,
                              owner=np.zeros(n, dtype=np.intp))


# ----------------------------------------------------------------- Skorohod


def skorohod_correction(ke: KernelEvaluator, u: SimpleProcess, cfg: Configuration,
                        cache: TransformCache | None = None) -> Array:
    """The terms <g_i, D G_i>, computed by quadrature."""
    batch = _as_batch(cfg)
    out = []
    for g, G in u.terms:
        if G is None:
            out.append(0.0)
            continue
        V = cache(g) if cache is not None else apply_kernel(ke, g)
        out.append(float(pairing_with_D(G, V, batch)[0]))
    return np.array(out)


def skorohod(ke: KernelEvaluator, u: SimpleProcess, cfg: Configuration,
             cache: TransformCache | None = None) -> float:
    """delta(u) = sum_i G_i delta(g_i) - <g_i, D G_i>.

    The correction vanishes identically for predictable processes and is
    skipped there.
    """
    base = float(np.dot(u.coefficients(cfg), [compensated_integral(g, cfg) for g, _ in u.terms]))
    if u.predictable:
        return base
    return base - float(np.sum(skorohod_correction(ke, u, cfg, cache)))


def skorohod_batch(u: SimpleProcess, batch: ConfigurationBatch, cache: TransformCache) -> Array:
    coeffs = u.batch_coefficients(batch)
    deltas = np.stack([compensated_integrals(g, batch) for g, _ in u.terms], axis=1)
    out = np.sum(coeffs * deltas, axis=1)
    if not u.predictable:
        for g, G in u.terms:
            if G is not None:
                out = out - pairing_with_D(G, cache(g), batch)
    return out


def _gram(u: SimpleProcess) -> Array:
    n = len(u.terms)
    M = np.zeros((n, n))
    for i, (gi, _) in enumerate(u.terms):
        pts, w = ball_rule(gi.dim, gi.radius, 48, 48, center=gi.center)
        vi = gi.value(pts)
        for j, (gj, _) in enumerate(u.terms):
            M[i, j] = float(np.dot(w, vi * gj.value(pts)))
    return M


# ----------------------------------------------------- covariant derivative


def covariant_nabla(ke: KernelEvaluator, u: ScalarField | SimpleProcess, x, y,
                    cfg: Configuration | None = None) -> Array:
    """nabla~_y u_x = D_y u_x + <G(x, y), grad_x u_x> for paired rows of x and y.

    For a deterministic field the D term vanishes. Raises CoincidentPoints
    when x == y.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    G = eval_kernel(ke, X, Y)
    if isinstance(u, ScalarField):
        return np.einsum("nd,nd->n", G, u.grad(X))
    if cfg is None:
        raise ValueError("a configuration is required for random processes")
    out = np.einsum("nd,nd->n", G, u.grad(cfg, X))
    for g, Gi in u.terms:
        if Gi is None:
            continue
        gx = g(X)
        nz = gx != 0.0
        if np.any(nz):
            out[nz] += gx[nz] * np.array([gradient_D(ke, Gi, cfg, yy)[0] for yy in Y[nz]])
    return out


def gradient_D_process(ke: KernelEvaluator, u: SimpleProcess, cfg: Configuration, x, y) -> Array:
    """D_y u_x = sum_i g_i(x) D_y G_i for paired rows of x and y."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    out = np.zeros(X.shape[0])
    for g, Gi in u.terms:
        if Gi is None:
            continue
        gx = g(X)
        nz = np.flatnonzero(gx)
        for i in nz:
            out[i] += gx[i] * gradient_D(ke, Gi, cfg, Y[i])[0]
    return out


# ------------------------------------------------------------ operator powers


def _nabla_step(ke: KernelEvaluator, h: ScalarField, f: ScalarField) -> ScalarField:
    V = apply_kernel(ke, f)

    def value(x):
        out = np.zeros(x.shape[0])
        m = np.linalg.norm(x - h.center, axis=1) < h.radius
        if np.any(m):
            out[m] = np.einsum("nd,nd->n", V(x[m]), h.grad(x[m]))
        return out

    return ScalarField(value, None, h.dim, h.radius, center=h.center, name=f"nabla({f.name})")


def operator_power_apply(ke: KernelEvaluator, h: ScalarField, n: int, f: ScalarField,
                         n_grid: int | None = None) -> ScalarField:
    """(nabla~h)^n f, where (nabla~h) f(x) = <V_f(x), grad h(x)>.

    Intermediate iterates are materialised on a grid; the last one stays lazy
    so that it is evaluated exactly wherever it is queried.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    n_grid = n_grid or GRID_NODES.get(h.dim, 25)
    cur = f
    for step in range(n):
        if step > 0:
            cur = materialize(cur, n_grid)
        cur = _nabla_step(ke, h, cur)
    return cur


def l2_pairing(a: ScalarField, b: ScalarField, n: int = PAIRING_NODES) -> float:
    """int a b over the support ball of ``a``."""
    pts, w = ball_rule(a.dim, a.radius, n, n, center=a.center)
    return float(np.dot(w, a.value(pts) * b.value(pts)))


def _power_field(h: ScalarField, m: int) -> ScalarField:
    return ScalarField(lambda x: h.value(x) ** m, None, h.dim, h.radius, center=h.center,
                       name=f"{h.name}^{m}")


def moment_identity(ke: KernelEvaluator, h: ScalarField, f: ScalarField, n: int, m: int,
                    n_grid: int | None = None) -> tuple[float, float]:
    """Both sides of <(nabla~h)^n f, h^m> = m!/(m+n)! int h^(m+n) f."""
    it = operator_power_apply(ke, h, n, f, n_grid)
    lhs = l2_pairing(it, _power_field(h, m))
    pts, w = ball_rule(h.dim, h.radius, 64, 64, center=h.center)
    rhs = math.factorial(m) / math.factorial(m + n) * float(
        np.dot(w, h.value(pts) ** (m + n) * f.value(pts)))
    return lhs, rhs


def operator_norm_check(ke: KernelEvaluator, h: ScalarField, n: int, f: ScalarField,
                        n_grid: int | None = None) -> tuple[float, float]:
    """(||(nabla~h)^n f||_2, (K v R')^n ||f||_2 ||grad h||_inf^n)."""
    it = operator_power_apply(ke, h, n, f, n_grid)
    norm = math.sqrt(max(l2_pairing(it, it), 0.0))
    bound = (young_constant(ke) * h.sup_grad_norm) ** n * f.l2_norm
    return norm, bound


def gamma_deterministic(ke: KernelEvaluator, h: ScalarField, k: int,
                        n_grid: int | None = None) -> float:
    """Gamma_k 1 = <(nabla~h)^(k-2) h, h> for a deterministic field h."""
    if k < 2:
        raise InvalidOrder("Gamma_k needs k >= 2")
    if k == 2:
        return h.integrate_power(2)
    return l2_pairing(operator_power_apply(ke, h, k - 2, h, n_grid), h)


def gamma_check(ke: KernelEvaluator, h: ScalarField, k: int,
                n_grid: int | None = None) -> tuple[float, float, float]:
    """(Gamma_k (k-1)!, kappa_k, relative error)."""
    lhs = gamma_deterministic(ke, h, k, n_grid) * math.factorial(k - 1)
    kappa = cumulant(h, k)
    return lhs, kappa, abs(lhs - kappa) / max(abs(kappa), 1e-6)


# ---------------------------------------------------------------- Edgeworth


@dataclass(frozen=True)
class TestFunction:
    """Smooth scalar function given by its derivatives, derivs[j] = g^(j)."""

    name: str
    derivs: tuple

    def derivative(self, j: int) -> Callable[[Array], Array]:
        return self.derivs[j % len(self.derivs)] if self.periodic else (
            self.derivs[j] if j < len(self.derivs) else (lambda z: np.zeros_like(z)))

    @property
    def periodic(self) -> bool:
        return self.name in ("sin", "cos")


TestFunction.__test__ = False  # keep pytest from collecting it

SIN = TestFunction("sin", (np.sin, np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z)))
IDENTITY = TestFunction("identity", (lambda z: np.asarray(z, dtype=float), np.ones_like))
TEST_FUNCTIONS = {"sin": SIN, "identity": IDENTITY}


@dataclass(frozen=True)
class EdgeworthResult:
    lhs: float
    terms: tuple
    residual: float
    residual_se: float
    remainder_bound: float
    n: int

    @property
    def passed(self) -> bool:
        return abs(self.residual) <= self.remainder_bound + 4.0 * self.residual_se


def edgeworth_residual(ke: KernelEvaluator, f: ScalarField, test_g: TestFunction, n: int,
                       mc: MCSettings) -> EdgeworthResult:
    """E[delta(f) g(delta(f))] against sum_{k=1}^{n+1} kappa_{k+1}/k! E[g^(k)(delta(f))].

    All expectations share the same simulated configurations; ``ke`` must be
    scaled to the carrier ball of ``f``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    kappas = [cumulant(f, k + 1) for k in range(1, n + 2)]
    coef = np.array([kappas[k - 1] / math.factorial(k) for k in range(1, n + 2)])

    def fn(batch):
        z = compensated_integrals(f, batch)
        lhs = z * test_g.derivative(0)(z)
        ds = np.stack([test_g.derivative(k)(z) for k in range(1, n + 2)], axis=1)
        return lhs, ds

    lhs, ds = run_replications(fn, f.dim, ke.R, mc)
    lhs_mean, _ = mean_and_se(lhs)
    terms = tuple(float(c * mean_and_se(ds[:, j])[0]) for j, c in enumerate(coef))
    resid, se = mean_and_se(lhs - ds @ coef)
    bound = young_constant(ke) ** (n + 1) * f.l2_norm * f.sup_grad_norm ** (n + 1)
    return EdgeworthResult(lhs_mean, terms, resid, se, bound, n)


# -------------------------------------------------------------- commutation


def commutation_check(ke: KernelEvaluator, h: ScalarField, cfg: Configuration, y) -> Array:
    """|D_y delta(h) - h(y) - delta(nabla~_y h)| at each probe y.

    The compensator of x -> nabla~_y h(x) is evaluated by polar quadrature
    around y; the other terms are sums over atoms.
    """
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    lhs = gradient_D(ke, CylindricalFunctional.linear(h), cfg, Y)
    atoms = np.zeros(Y.shape[0])
    if len(cfg):
        G, keep = _kernel_pairs(ke, cfg.points, Y)
        atoms = np.einsum("pnd,nd->p", G, h.grad(cfg.points))
    comp = divergence_identity_rhs(ke, h, Y)
    return np.abs(lhs - (h(Y) + atoms - comp))


# ------------------------------------------------------------------ duality


@dataclass(frozen=True)
class DualityResult:
    lhs: float
    rhs: float
    diff: float
    se: float
    n: int

    @property
    def passed(self) -> bool:
        return abs(self.diff) <= 4.0 * self.se


def duality_check(ke: KernelEvaluator, u: SimpleProcess, F: CylindricalFunctional,
                  mc: MCSettings, cache: TransformCache | None = None) -> DualityResult:
    """MC estimate of E[<u, DF>] - E[F delta(u)].

    The standard error is that of the per-configuration difference, which
    accounts for the correlation between both sides.
    """
    cache = cache or TransformCache(ke)
    for g, _ in u.terms:
        cache(g)

    def fn(batch):
        S = F.batch_statistics(batch)
        Fv = F.phi(S)
        coeffs = u.batch_coefficients(batch)
        lhs = np.zeros(batch.size)
        for i, (g, _) in enumerate(u.terms):
            lhs += coeffs[:, i] * pairing_with_D(F, cache(g), batch, S)
        return lhs, Fv * skorohod_batch(u, batch, cache)

    lhs, rhs = run_replications(fn, ke.dim, ke.R, mc)
    l, _ = mean_and_se(lhs)
    r, _ = mean_and_se(rhs)
    diff, se = mean_and_se(lhs - rhs)
    return DualityResult(l, r, diff, se, lhs.size)


@dataclass(frozen=True)
class IsometryResult:
    second_moment: float
    expected: float
    diff: float
    se: float

    @property
    def passed(self) -> bool:
        return abs(self.diff) <= 4.0 * self.se


def isometry_check(ke: KernelEvaluator, u: SimpleProcess, mc: MCSettings) -> IsometryResult:
    """E[delta(u)^2] against E[int u^2] for a predictable process."""
    if not u.predictable:
        raise ValueError("isometry check needs a predictable process")
    gram = _gram(u)
    cache = TransformCache(ke)

    def fn(batch):
        c = u.batch_coefficients(batch)
        return skorohod_batch(u, batch, cache) ** 2, np.einsum("ni,ij,nj->n", c, gram, c)

    sq, norm2 = run_replications(fn, ke.dim, ke.R, mc)
    diff, se = mean_and_se(sq - norm2)
    return IsometryResult(mean_and_se(sq)[0], mean_and_se(norm2)[0], diff, se)


# ------------------------------------------------------------------ fixtures


@dataclass(frozen=True, eq=False)
class DualityFixture:
    name: str
    u: SimpleProcess
    F: CylindricalFunctional


def _bump(c, r, amp=1.0, name="bump"):
    from .integrals import bump_field
    return bump_field(np.asarray(c, dtype=float), r, amplitude=amp, name=name)


def builtin_fixtures(dim: int = 2) -> dict[str, DualityFixture]:
    """Named (u, F) pairs on the unit ball used by the identity checks."""
    e = np.eye(dim)[0]
    o2 = np.zeros(dim)
    if dim > 1:
        o2[1] = 0.1
    g = _bump(-0.25 * e, 0.5, 2.0, "g")
    h1 = _bump(0.2 * e + o2, 0.55, 2.0, "h1")
    h2 = _bump(-0.3 * e - o2, 0.5, 1.5, "h2")
    k1 = _bump(0.1 * e, 0.6, 1.0, "k1")
    F1 = CylindricalFunctional(lambda s: np.sin(2.0 * s[:, 0]) + 0.5 * s[:, 0],
                               lambda s: (2.0 * np.cos(2.0 * s[:, 0]) + 0.5)[:, None], (h1,))
    F2 = CylindricalFunctional(lambda s: np.cos(s[:, 0]) * s[:, 1],
                               lambda s: np.stack([-np.sin(s[:, 0]) * s[:, 1], np.cos(s[:, 0])], 1),
                               (h1, h2))
    Gk = CylindricalFunctional(lambda s: np.tanh(s[:, 0]) + 1.0,
                               lambda s: (1.0 / np.cosh(s[:, 0]) ** 2)[:, None], (k1,))
    gl = _bump(0.3 * e, 0.45, 2.0, "g_right")
    kl = _bump(-0.55 * e, 0.4, 2.0, "k_left")
    Gp = CylindricalFunctional(lambda s: np.sin(s[:, 0]) + 1.0,
                               lambda s: np.cos(s[:, 0])[:, None], (kl,))
    return {
        "deterministic": DualityFixture("deterministic", SimpleProcess(((g, None),)), F1),
        "random": DualityFixture("random", SimpleProcess(((g, Gk),)), F2),
        "predictable": DualityFixture("predictable", SimpleProcess(((gl, Gp),)), F1),
    }
