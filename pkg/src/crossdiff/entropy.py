"""Entropy variables, the entropy functional and the symmetrised diffusion matrix."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .coefficients import PowerLawCoefficients, RegularizedCoefficients

# largest concentration we are prepared to represent
X_MAX = 1e300
LOG_X_MAX = float(np.log(X_MAX))
LOG_X_MIN = -700.0


class InversionOverflow(OverflowError):
    """The requested entropy variable lies outside the representable range."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


class EntropyMap:
    """phi^eps, psi^eps and their inverse for one species.

    ``phi_i(x) = int_1^x a_ji'(t)/t dt + eps ln x`` with ``j`` the other
    species, and ``psi_i`` its antiderivative vanishing at 1.  ``psi`` carries
    the additive constant ``+eps`` so that ``psi(1) = 0`` and ``psi >= 0``.
    """

    def __init__(self, reg: RegularizedCoefficients, species: int):
        if species not in (0, 1):
            raise ValueError("species index must be 0 or 1")
        self.reg = reg
        self.i = species
        self.j = 1 - species
        self.eps = reg.eps
        base = reg.base
        self.closed_form = isinstance(base, PowerLawCoefficients)
        if self.closed_form:
            self.amp, self.expo = base.cross_power(species)
        self._a1 = float(base.a(self.j, self.i, 1.0))
        self.B = self._compute_B()
        self.D = self._compute_D()

    # ---- base (eps = 0) pieces -------------------------------------------------

    def _a(self, x):
        return self.reg.base.a(self.j, self.i, x)

    def _da(self, x):
        return self.reg.base.da(self.j, self.i, x)

    def _phi0(self, x):
        x = np.asarray(x, dtype=float)
        if self.closed_form:
            A, al = self.amp, self.expo
            with np.errstate(divide="ignore", over="ignore"):
                return A * al * (1.0 - np.power(x, al - 1.0)) / (1.0 - al)
        flat = np.atleast_1d(x).ravel()
        vals = np.empty_like(flat)
        for k, xv in enumerate(flat):
            if xv <= 0:
                vals[k] = -np.inf
                continue
            # t = e^s turns da(t)/t dt into da(e^s) ds, smooth near t = 0
            vals[k] = integrate.quad(lambda s: self._da(np.exp(s)), 0.0, np.log(xv),
                                     epsabs=0.0, epsrel=1e-12, limit=200)[0]
        return vals.reshape(np.shape(x))

    def _psi0(self, x):
        x = np.asarray(x, dtype=float)
        if self.closed_form:
            A, al = self.amp, self.expo
            return A * al / (1.0 - al) * ((x - 1.0) - (np.power(x, al) - 1.0) / al)
        # psi(x) = x phi(x) + a(1) - a(x), integrating t psi''(t) = a'(t) by parts
        with np.errstate(invalid="ignore"):
            xp = np.where(x > 0, x * self._phi0(np.where(x > 0, x, 1.0)), 0.0)
        return xp + self._a1 - self._a(x)

    # ---- public maps -----------------------------------------------------------

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("phi is only defined for x > 0")
        out = self._phi0(x)
        if self.eps:
            out = out + self.eps * np.log(x)
        return out

    def dphi(self, x):
        """``phi'(x) = (a_ji^eps)'(x) / x``."""
        x = np.asarray(x, dtype=float)
        return (self._da(x) + self.eps) / x

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("psi is only defined for x >= 0")
        out = self._psi0(x)
        if self.eps:
            out = out + self.eps * (_xlogx(x) - x + 1.0)
        return out

    def dpsi(self, x):
        return self.phi(x)

    def _phi_of_log(self, z):
        """phi^eps(exp(z)), without forming exp(z) in the closed form."""
        if self.closed_form:
            A, al = self.amp, self.expo
            with np.errstate(over="ignore"):
                return A * al * (-np.expm1((al - 1.0) * z)) / (1.0 - al) + self.eps * z
        return self.phi(np.exp(z))

    def phi_inverse(self, y, guess=None, tol: float = 1e-12):
        """Unique ``x > 0`` with ``phi^eps(x) = y``.

        Safeguarded Newton in ``z = ln x``: a bracket is grown geometrically
        from ``ln(guess)`` (or 0) and Newton steps leaving it are replaced by
        bisection.  Requires ``eps > 0`` unless ``y`` lies in the range of the
        unperturbed map.
        """
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        y = np.atleast_1d(y).astype(float)
        if not np.all(np.isfinite(y)):
            raise ValueError("phi_inverse needs finite input")
        shape = y.shape
        y = y.ravel()
        if guess is None:
            z = np.zeros_like(y)
        else:
            g = np.broadcast_to(np.asarray(guess, dtype=float), shape).ravel()
            z = np.log(np.clip(g, 1e-300, X_MAX))
        # iterate past the requested tolerance so the result has margin
        thr = 0.05 * tol * (1.0 + np.abs(y))

        g = self._phi_of_log(z) - y
        lo = z.copy()
        hi = z.copy()
        glo = g.copy()
        ghi = g.copy()
        step = np.ones_like(y)
        need = ghi < 0
        while np.any(need):
            hi[need] = np.minimum(hi[need] + step[need], LOG_X_MAX)
            ghi[need] = self._phi_of_log(hi[need]) - y[need]
            step[need] *= 2.0
            stuck = need & (hi >= LOG_X_MAX) & (ghi < 0)
            if np.any(stuck):
                k = int(np.flatnonzero(stuck)[0])
                raise InversionOverflow(
                    f"phi^-1({y[k]:.6g}) exceeds {X_MAX:.1e}", index=k)
            need = ghi < 0
        step[:] = 1.0
        need = glo > 0
        while np.any(need):
            lo[need] = np.maximum(lo[need] - step[need], LOG_X_MIN)
            glo[need] = self._phi_of_log(lo[need]) - y[need]
            step[need] *= 2.0
            stuck = need & (lo <= LOG_X_MIN) & (glo > 0)
            if np.any(stuck):
                k = int(np.flatnonzero(stuck)[0])
                raise InversionOverflow(
                    f"phi^-1({y[k]:.6g}) is below exp({LOG_X_MIN})", index=k)
            need = glo > 0
        # the starting point is one end of the bracket [lo, hi]
        active = np.abs(g) > thr
        for _ in range(400):
            if not np.any(active):
                break
            za = z[active]
            ga = g[active]
            x = np.exp(za)
            slope = self._da(x) + self.eps  # d phi / dz
            with np.errstate(divide="ignore", invalid="ignore"):
                zn = za - ga / slope
            l, h = lo[active], hi[active]
            bad = ~np.isfinite(zn) | (zn <= l) | (zn >= h)
            zn = np.where(bad, 0.5 * (l + h), zn)
            gn = self._phi_of_log(zn) - y[active]
            l = np.where(gn < 0, zn, l)
            h = np.where(gn > 0, zn, h)
            z[active] = zn
            g[active] = gn
            lo[active] = l
            hi[active] = h
            width = h - l
            done = (np.abs(gn) <= thr[active]) | (width <= 4e-16 * np.maximum(1.0, np.abs(zn)))
            idx = np.flatnonzero(active)
            active[idx[done]] = False
        x = np.exp(z)
        out = x.reshape(shape)
        return float(out[0]) if scalar else out

    # ---- constants -------------------------------------------------------------

    def _compute_B(self) -> float:
        """min over (0, 1] of x phi(x) for the unperturbed map (a nonpositive number)."""
        f = lambda x: float(x * self._phi0(x))
        xs = np.geomspace(1e-12, 1.0, 200)
        vals = np.array([f(x) for x in xs])
        k = int(np.argmin(vals))
        lo = xs[max(k - 1, 0)]
        hi = xs[min(k + 1, len(xs) - 1)]
        best = vals[k]
        if hi > lo:
            res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-14})
            best = min(best, res.fun)
        return float(min(best, 0.0))

    def _compute_D(self) -> float:
        """Linear-domination constant via the concave/convex comparison recipe.

        For concave ``h`` and convex nonnegative ``l`` with ``l'(M) > 0``:
        ``h <= A (1 + l)`` with ``A = max(h(M), h'(M)/l'(M), 0)`` if ``h'(M) >= 0``
        and ``A = max(h(M) - M h'(M), 0)`` otherwise.  Applied to
        ``h = 1 + x + a_ji(x)`` (which dominates ``x^alpha + a_ji``) and to
        ``h = x psi' - 2 psi`` (giving ``x psi' <= (A + 2)(1 + psi)``).
        """
        Ms = np.geomspace(1.0 + 1e-3, 1e6, 400)
        l = self._psi0(Ms)
        dl = self._phi0(Ms)
        ok = dl > 0
        Ms, l, dl = Ms[ok], l[ok], dl[ok]

        def best_constant(h, dh):
            A = np.where(dh >= 0, np.maximum(np.maximum(h, dh / dl), 0.0),
                         np.maximum(h - Ms * dh, 0.0))
            return float(np.min(A))

        h1 = 1.0 + Ms + self._a(Ms)
        dh1 = 1.0 + self._da(Ms)
        D1 = best_constant(h1, dh1)
        h2 = Ms * dl - 2.0 * l
        dh2 = self._da(Ms) - dl
        D2 = best_constant(h2, dh2) + 2.0
        return max(D1, D2, 1.0 + self._a1)


def entropy_functional(m1: EntropyMap, m2: EntropyMap, u, space) -> float:
    """``E(u) = int psi_1(u_1) + psi_2(u_2)`` by the space's quadrature."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("entropy needs strictly positive nodal values")
    return float(space.integrate(m1.psi(u[0]) + m2.psi(u[1])))


@dataclass
class DiffusionMatrixEval:
    A11: np.ndarray
    A12: np.ndarray
    A22: np.ndarray

    @property
    def A21(self):
        return self.A12

    @property
    def det(self):
        return self.A11 * self.A22 - self.A12 * self.A12

    @property
    def trace(self):
        return self.A11 + self.A22

    def as_matrix(self):
        return np.array([[self.A11, self.A12], [self.A12, self.A22]])


def matrix_A(reg, u1, u2) -> DiffusionMatrixEval:
    """Symmetric diffusion matrix acting on entropy-variable gradients."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if np.any(u1 <= 0) or np.any(u2 <= 0):
        raise ValueError("matrix_A needs u1, u2 > 0")
    A11 = (reg.da(0, 0, u1) + reg.a(0, 1, u2)) * u1 / reg.da(1, 0, u1)
    A22 = (reg.da(1, 1, u2) + reg.a(1, 0, u1)) * u2 / reg.da(0, 1, u2)
    A12 = u1 * u2
    return DiffusionMatrixEval(A11, A12, A22)


@dataclass
class QuadraticFormEval:
    Q: np.ndarray
    bound1: np.ndarray
    bound2: np.ndarray
    grad_u1: np.ndarray
    grad_u2: np.ndarray
    # individual pieces of bound2 (squared gradient magnitudes)
    g_sqrt_a21: np.ndarray
    g_sqrt_a12: np.ndarray
    g_sqrt_prod: np.ndarray


def quadratic_form(reg, u1, u2, gw1, gw2) -> QuadraticFormEval:
    """``Q = grad_w^T A(u) grad_w`` and its two structural lower bounds.

    ``gw1``/``gw2`` carry the spatial components along the last axis (or are
    scalars in 1D).  ``u`` gradients are recovered from
    ``grad u_i = grad w_i * u_i / (a_ji)'(u_i)``.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    gw1 = np.asarray(gw1, dtype=float)
    gw2 = np.asarray(gw2, dtype=float)
    if gw1.ndim == u1.ndim:
        gw1 = gw1[..., None]
        gw2 = gw2[..., None]
    M = matrix_A(reg, u1, u2)
    n11 = np.sum(gw1 * gw1, axis=-1)
    n22 = np.sum(gw2 * gw2, axis=-1)
    n12 = np.sum(gw1 * gw2, axis=-1)
    Q = M.A11 * n11 + 2.0 * M.A12 * n12 + M.A22 * n22

    da21 = reg.da(1, 0, u1)
    da12 = reg.da(0, 1, u2)
    gu1 = gw1 * (u1 / da21)[..., None]
    gu2 = gw2 * (u2 / da12)[..., None]
    b1 = da21 / u1 * np.sum(gu1 * gu1, axis=-1) + da12 / u2 * np.sum(gu2 * gu2, axis=-1)

    a21 = reg.a(1, 0, u1)
    a12 = reg.a(0, 1, u2)
    s21 = np.sqrt(a21)
    s12 = np.sqrt(a12)
    g21 = gu1 * (da21 / (2.0 * s21))[..., None]
    g12 = gu2 * (da12 / (2.0 * s12))[..., None]
    gp = g21 * s12[..., None] + g12 * s21[..., None]
    n21 = np.sum(g21 * g21, axis=-1)
    n12b = np.sum(g12 * g12, axis=-1)
    npd = np.sum(gp * gp, axis=-1)
    b2 = 4.0 * (n21 + n12b + npd)
    return QuadraticFormEval(Q, b1, b2, gu1, gu2, n21, n12b, npd)


def quadratic_form_expanded(reg, u1, u2, gu1, gu2):
    """Scalar expansion of Q in terms of u-gradients (independent of ``matrix_A``)."""
    gu1 = np.atleast_1d(np.asarray(gu1, dtype=float))
    gu2 = np.atleast_1d(np.asarray(gu2, dtype=float))
    da21 = reg.da(1, 0, u1)
    da12 = reg.da(0, 1, u2)
    return ((reg.da(0, 0, u1) + reg.a(0, 1, u2)) * da21 / u1 * np.sum(gu1 * gu1, axis=-1)
            + (reg.da(1, 1, u2) + reg.a(1, 0, u1)) * da12 / u2 * np.sum(gu2 * gu2, axis=-1)
            + 2.0 * da21 * da12 * np.sum(gu1 * gu2, axis=-1))


def beta_alpha(x, alpha):
    """``x ** ((1 - alpha) / 2)``."""
    return np.power(np.asarray(x, dtype=float), (1.0 - alpha) / 2.0)
