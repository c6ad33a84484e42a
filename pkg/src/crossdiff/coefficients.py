"""Model coefficients for two-species reaction/cross-diffusion systems.

Species are indexed 0 and 1 internally; string identifiers such as ``"a12"``
or ``"s21"`` use the 1-based convention of the model equations.  For species
``i`` the diffusion flux is the gradient of ``a_ii(u_i) + u_i a_ij(u_j)`` and
the reaction is ``u_i (r_i - s_ii(u_i) - s_ij(u_j))``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = "float | np.ndarray"


class AssumptionError(ValueError):
    """Raised when coefficients violate a structural admissibility clause."""

    def __init__(self, report: "AssumptionReport"):
        self.report = report
        names = ", ".join(c.name for c in report.failures(structural_only=True))
        super().__init__(f"inadmissible coefficients: {names}")


@dataclass(frozen=True)
class ScalarFunction:
    """A scalar nonlinearity with its first and (optional) second derivative.

    All callables must accept numpy arrays and operate elementwise.
    """

    f: Callable
    df: Callable
    d2f: Callable | None = None
    name: str = ""

    def __call__(self, x):
        return self.f(x)

    def second(self, x, h: float = 1e-6):
        if self.d2f is not None:
            return self.d2f(x)
        x = np.asarray(x, dtype=float)
        step = h * np.maximum(1.0, np.abs(x))
        lo = np.maximum(x - step, 0.5 * x)
        hi = x + step
        return (self.df(hi) - self.df(lo)) / (hi - lo)


def _as_array(x):
    return np.asarray(x, dtype=float)


def _power(x, q):
    """``x**q`` for ``x >= 0``, with ``0**q = +inf`` for ``q < 0``."""
    x = _as_array(x)
    with np.errstate(divide="ignore"):
        return np.power(x, q)


def _parse_id(which: str):
    which = which.strip().lower()
    kind = which[0]
    if kind not in "ads" or len(which) != 3 or not which[1:].isdigit():
        raise KeyError(f"unknown coefficient id {which!r}")
    i, j = int(which[1]) - 1, int(which[2]) - 1
    if i not in (0, 1) or j not in (0, 1):
        raise KeyError(f"unknown coefficient id {which!r}")
    if kind == "d" and i != j:
        raise KeyError(f"self-diffusion rate must be d11 or d22, got {which!r}")
    return kind, i, j


class _CoefficientBase:
    """Shared evaluator surface: ``a``, ``da``, ``d2a``, ``d``, ``dd``, ``s``, ``ds``."""

    r: tuple

    def a(self, i, j, x):
        raise NotImplementedError

    def da(self, i, j, x):
        raise NotImplementedError

    def d2a(self, i, j, x):
        raise NotImplementedError

    def d(self, i, x):
        raise NotImplementedError

    def dd(self, i, x):
        raise NotImplementedError

    def s(self, i, j, x):
        raise NotImplementedError

    def ds(self, i, j, x):
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLawCoefficients(_CoefficientBase):
    """Coefficients of power-law form.

    ``a_ij(x) = D_i x [i == j] + A_ij x**alpha_ij`` and ``s_ij(x) = S_ij x**sigma_ij``.
    The self-diffusion rate is ``d_ii(x) = a_ii(x) / x = D_i + A_ii x**(alpha_ii - 1)``.
    """

    r: tuple = (0.0, 0.0)
    S: tuple = ((0.0, 0.0), (0.0, 0.0))
    sigma: tuple = ((1.0, 1.0), (1.0, 1.0))
    D: tuple = (1.0, 1.0)
    A: tuple = ((0.0, 1.0), (1.0, 0.0))
    alpha: tuple = ((1.0, 0.5), (0.5, 1.0))

    def __post_init__(self):
        for name in ("S", "sigma", "A", "alpha"):
            m = getattr(self, name)
            object.__setattr__(self, name, tuple(tuple(float(v) for v in row) for row in m))
        object.__setattr__(self, "r", tuple(float(v) for v in self.r))
        object.__setattr__(self, "D", tuple(float(v) for v in self.D))
        vals = list(self.r) + list(self.D) + [v for row in self.S for v in row] + [
            v for row in self.A for v in row]
        if any(not math.isfinite(v) for v in vals + [v for row in self.alpha for v in row]
               + [v for row in self.sigma for v in row]):
            raise ValueError("power-law parameters must be finite")

    @property
    def closed_form(self) -> bool:
        return True

    def a(self, i, j, x):
        x = _as_array(x)
        out = self.A[i][j] * _power(x, self.alpha[i][j]) if self.A[i][j] != 0 else np.zeros_like(x)
        if i == j:
            out = out + self.D[i] * x
        return out

    def da(self, i, j, x):
        x = _as_array(x)
        A, al = self.A[i][j], self.alpha[i][j]
        out = A * al * _power(x, al - 1.0) if A != 0 and al != 0 else np.zeros_like(x)
        if i == j:
            out = out + self.D[i]
        return out

    def d2a(self, i, j, x):
        x = _as_array(x)
        A, al = self.A[i][j], self.alpha[i][j]
        if A == 0 or al in (0.0, 1.0):
            return np.zeros_like(x)
        return A * al * (al - 1.0) * _power(x, al - 2.0)

    def d(self, i, x):
        x = _as_array(x)
        A, al = self.A[i][i], self.alpha[i][i]
        if A == 0:
            return np.full_like(x, self.D[i])
        return self.D[i] + A * _power(x, al - 1.0)

    def dd(self, i, x):
        x = _as_array(x)
        A, al = self.A[i][i], self.alpha[i][i]
        if A == 0 or al == 1.0:
            return np.zeros_like(x)
        return A * (al - 1.0) * _power(x, al - 2.0)

    def s(self, i, j, x):
        x = _as_array(x)
        if self.S[i][j] == 0:
            return np.zeros_like(x)
        return self.S[i][j] * _power(x, self.sigma[i][j])

    def ds(self, i, j, x):
        x = _as_array(x)
        S, sg = self.S[i][j], self.sigma[i][j]
        if S == 0 or sg == 0:
            return np.zeros_like(x)
        return S * sg * _power(x, sg - 1.0)

    def cross_power(self, i):
        """(amplitude, exponent) of the cross coefficient ``a_ji`` entering species ``i``'s entropy."""
        j = 1 - i
        return self.A[j][i], self.alpha[j][i]


@dataclass(frozen=True)
class GeneralCoefficients(_CoefficientBase):
    """Coefficients given as user evaluators.

    ``a12``/``a21`` are the cross-diffusion functions, ``d11``/``d22`` the
    self-diffusion rates and ``s11``..``s22`` the competition terms.
    """

    a12: ScalarFunction
    a21: ScalarFunction
    d11: ScalarFunction
    d22: ScalarFunction
    s11: ScalarFunction
    s12: ScalarFunction
    s21: ScalarFunction
    s22: ScalarFunction
    r: tuple = (0.0, 0.0)

    @property
    def closed_form(self) -> bool:
        return False

    def _cross(self, i, j):
        return self.a12 if (i, j) == (0, 1) else self.a21

    def _self(self, i):
        return self.d11 if i == 0 else self.d22

    def _s(self, i, j):
        return {(0, 0): self.s11, (0, 1): self.s12, (1, 0): self.s21, (1, 1): self.s22}[(i, j)]

    def a(self, i, j, x):
        x = _as_array(x)
        if i == j:
            return x * self._self(i).f(x)
        return _as_array(self._cross(i, j).f(x))

    def da(self, i, j, x):
        x = _as_array(x)
        if i == j:
            g = self._self(i)
            return g.f(x) + x * g.df(x)
        return _as_array(self._cross(i, j).df(x))

    def d2a(self, i, j, x):
        x = _as_array(x)
        if i == j:
            g = self._self(i)
            return 2.0 * g.df(x) + x * g.second(x)
        return _as_array(self._cross(i, j).second(x))

    def d(self, i, x):
        return _as_array(self._self(i).f(_as_array(x)))

    def dd(self, i, x):
        return _as_array(self._self(i).df(_as_array(x)))

    def s(self, i, j, x):
        return _as_array(self._s(i, j).f(_as_array(x)))

    def ds(self, i, j, x):
        return _as_array(self._s(i, j).df(_as_array(x)))


CoefficientSet = "PowerLawCoefficients | GeneralCoefficients"


def eval_coefficient(c, which: str, x, derivative: bool = False):
    """Evaluate ``a_ij``, ``d_ii`` or ``s_ij`` (or its derivative) at ``x >= 0``.

    The derivative of ``x**q`` with ``q < 1`` at ``x = 0`` is returned as ``+inf``.
    """
    x = _as_array(x)
    if np.any(x < 0) or np.any(~np.isfinite(x)):
        raise ValueError("coefficients are only defined for finite x >= 0")
    kind, i, j = _parse_id(which)
    if kind == "a":
        out = c.da(i, j, x) if derivative else c.a(i, j, x)
    elif kind == "d":
        out = c.dd(i, x) if derivative else c.d(i, x)
    else:
        out = c.ds(i, j, x) if derivative else c.s(i, j, x)
    return out[()] if out.ndim == 0 else out


# --------------------------------------------------------------------------
# admissibility report


@dataclass
class ClauseResult:
    name: str
    passed: bool
    detail: str = ""
    structural: bool = True
    heuristic: bool = False

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = " [heuristic]" if self.heuristic else ""
        return f"{tag} {self.name}{extra}: {self.detail}"


@dataclass
class AssumptionReport:
    clauses: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    @property
    def structural_ok(self) -> bool:
        return all(c.passed for c in self.clauses if c.structural)

    def failures(self, structural_only: bool = False):
        return [c for c in self.clauses
                if not c.passed and (c.structural or not structural_only)]

    def add(self, *args, **kwargs):
        self.clauses.append(ClauseResult(*args, **kwargs))

    def lines(self):
        out = [c.line() for c in self.clauses]
        out += [f"NOTE {n}" for n in self.notes]
        return out

    def __str__(self):
        return "\n".join(self.lines())


def _frac(v: float) -> Fraction:
    return Fraction(v)


def _check_power_law(c: PowerLawCoefficients) -> AssumptionReport:
    rep = AssumptionReport()
    nonneg = [("r%d" % (i + 1), c.r[i]) for i in range(2)]
    nonneg += [("S%d%d" % (i + 1, j + 1), c.S[i][j]) for i in range(2) for j in range(2)]
    nonneg += [("A%d%d" % (i + 1, j + 1), c.A[i][j]) for i in range(2) for j in range(2)]
    nonneg += [("D%d" % (i + 1), c.D[i]) for i in range(2)]
    bad = [f"{k}={v}" for k, v in nonneg if v < 0]
    rep.add("amplitudes and rates nonnegative", not bad, ", ".join(bad) or "ok")

    eff_alpha = []
    for i in range(2):
        # with A_ii = 0 the self-diffusion a_ii = D_i x has exponent 1
        eff_alpha.append(c.alpha[i][i] if c.A[i][i] > 0 else 1.0)

    for i in range(2):
        j = 1 - i
        al = c.alpha[i][j]
        ok = _frac(0) < _frac(al) < _frac(1)
        detail = f"alpha_{i+1}{j+1} = {al}"
        if al == 1.0:
            detail += " (linear cross-diffusion: SKT limiting case, outside the admissible family)"
        rep.add(f"H2: 0 < alpha_{i+1}{j+1} < 1", ok, detail)
        rep.add(f"H2: A_{i+1}{j+1} > 0 (non-triangular)", c.A[i][j] > 0, f"A_{i+1}{j+1} = {c.A[i][j]}")

    for i in range(2):
        A, al, D = c.A[i][i], c.alpha[i][i], c.D[i]
        d0 = D + (A if (A > 0 and al == 1.0) else 0.0)
        if A > 0 and al < 1.0:
            rep.add(f"H3: d_{i+1}{i+1} nondecreasing", False,
                    f"alpha_{i+1}{i+1} = {al} < 1 makes d_{i+1}{i+1} decreasing and unbounded at 0")
        else:
            rep.add(f"H3: d_{i+1}{i+1} nondecreasing", True, f"alpha_{i+1}{i+1} = {al}")
            rep.add(f"H3: d_{i+1}{i+1}(0) > 0", d0 > 0, f"d_{i+1}{i+1}(0) = {d0}")
        if d0 < 1:
            rep.notes.append(f"d_{i+1}{i+1}(0) = {d0} < 1: quadratic-form lower bounds assume d_ii >= 1")

    for i in range(2):
        S, sg = c.S[i][i], c.sigma[i][i]
        lim = max(_frac(1), _frac(eff_alpha[i]))
        if S == 0:
            rep.add(f"H1: 0 <= sigma_{i+1}{i+1} < sup(1, alpha_{i+1}{i+1})", True,
                    f"s_{i+1}{i+1} = 0", structural=False)
        else:
            ok = _frac(0) <= _frac(sg) < lim
            rep.add(f"H1: 0 <= sigma_{i+1}{i+1} < sup(1, alpha_{i+1}{i+1})", ok,
                    f"sigma = {sg}, sup = {float(lim)}", structural=False)

    for i in range(2):
        j = 1 - i
        S, sg = c.S[i][j], c.sigma[i][j]
        lim = max((_frac(eff_alpha[j]) + 1) / 2, 1 + _frac(c.alpha[i][j]) / 2)
        name = f"H1: 0 <= sigma_{i+1}{j+1} < sup((alpha_{j+1}{j+1}+1)/2, 1+alpha_{i+1}{j+1}/2)"
        if S == 0:
            rep.add(name, True, f"s_{i+1}{j+1} = 0", structural=False)
        else:
            ok = _frac(0) <= _frac(sg) < lim
            rep.add(name, ok, f"sigma = {sg}, sup = {float(lim)}", structural=False)
    return rep


def _check_general(c: GeneralCoefficients) -> AssumptionReport:
    rep = AssumptionReport()
    grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e4, 400)])
    rep.add("r_i nonnegative", min(c.r) >= 0, f"r = {c.r}")
    for i in range(2):
        j = 1 - i
        a = c.a(i, j, grid)
        da = c.da(i, j, grid[1:])
        tag = f"a_{i+1}{j+1}"
        rep.add(f"H2: {tag}(0) = 0", abs(a[0]) <= 1e-14, f"{tag}(0) = {a[0]:.3e}")
        rep.add(f"H2: {tag} nonnegative, nondecreasing", bool(np.all(a >= 0) and np.all(np.diff(a) >= -1e-12)),
                "sampled on [0, 1e4]")
        xs = grid[1:]
        mid = c.a(i, j, 0.5 * (xs[:-1] + xs[1:]))
        conc = np.all(mid >= 0.5 * (a[1:-1] + a[2:]) - 1e-12 * (1 + np.abs(mid)))
        rep.add(f"H2: {tag} concave", bool(conc), "midpoint test on sampled grid")
        best = -np.inf
        for al in np.linspace(0.05, 0.95, 19):
            best = max(best, float(np.min(xs ** al * da)))
        rep.add(f"H2: x^alpha {tag}'(x) >= C > 0", best > 0, f"best sampled infimum {best:.3e}",
                heuristic=True)
        d = c.d(i, grid)
        rep.add(f"H3: d_{i+1}{i+1}(x) >= d_{i+1}{i+1}(0) > 0",
                bool(d[0] > 0 and np.all(d >= d[0] - 1e-12) and np.all(np.diff(d) >= -1e-12)),
                f"d(0) = {d[0]:.3e}")
    big = np.geomspace(1e2, 1e6, 9)
    for i in range(2):
        for j in range(2):
            s = c.s(i, j, big)
            sub = s / big
            if i == j:
                dom = s / (big * c.d(i, big))
            else:
                dom = s / (big * np.sqrt(c.d(j, big) + c.a(i, j, big)))
            def trending(v):
                return bool(v[-1] <= 1e-12 or (np.all(np.diff(v) <= 1e-15 * np.abs(v[:-1]) + 1e-300)
                                               and v[-1] < 0.5 * v[0]))
            ok = bool(np.all(s >= 0)) and (trending(sub) or trending(dom))
            rep.add(f"H1: s_{i+1}{j+1} sublinear or dominated by self diffusion", ok,
                    f"s/x: {sub[0]:.2e} -> {sub[-1]:.2e}", structural=False, heuristic=True)
    return rep


def check_assumptions_H(c) -> AssumptionReport:
    """Evaluate the admissibility clauses; failures are report entries, never exceptions."""
    if isinstance(c, PowerLawCoefficients):
        return _check_power_law(c)
    if isinstance(c, GeneralCoefficients):
        return _check_general(c)
    raise TypeError(f"unsupported coefficient set {type(c).__name__}")


# --------------------------------------------------------------------------
# regularisation


def make_gamma_eps(eps: float) -> ScalarFunction:
    """Saturation ``gamma_eps``: identity on [0, 1], ``1 + (1 - exp(-eps (x - 1))) / eps`` above.

    C^1 across x = 1, bounded by ``1 + 1/eps``, and increasing to the identity as eps -> 0.
    """
    if not (0.0 < eps < 1.0):
        raise ValueError(f"eps must lie in (0, 1), got {eps}")

    def f(x):
        x = _as_array(x)
        y = np.maximum(x - 1.0, 0.0)
        return np.where(x <= 1.0, x, 1.0 - np.expm1(-eps * y) / eps)

    def df(x):
        x = _as_array(x)
        y = np.maximum(x - 1.0, 0.0)
        return np.where(x <= 1.0, 1.0, np.exp(-eps * y))

    def d2f(x):
        x = _as_array(x)
        y = np.maximum(x - 1.0, 0.0)
        return np.where(x <= 1.0, 0.0, -eps * np.exp(-eps * y))

    return ScalarFunction(f, df, d2f, name=f"gamma_{eps:g}")


@dataclass(frozen=True)
class RegularizedCoefficients(_CoefficientBase):
    """eps-perturbed coefficients.

    Cross terms gain ``eps * x``; self-diffusion rates are saturated through
    ``gamma_eps``.  With ``eps == 0`` the base coefficients are used unchanged
    (useful for diagnostics of the unperturbed model).
    """

    base: object
    eps: float
    report: AssumptionReport | None = None
    gamma: ScalarFunction | None = None

    @property
    def r(self):
        return self.base.r

    @property
    def closed_form(self):
        return self.base.closed_form

    def a(self, i, j, x):
        x = _as_array(x)
        if i != j:
            return self.base.a(i, j, x) + self.eps * x
        return x * self.d(i, x)

    def da(self, i, j, x):
        x = _as_array(x)
        if i != j:
            return self.base.da(i, j, x) + self.eps
        if self.gamma is None:
            return self.base.da(i, i, x)
        d = self.base.d(i, x)
        return self.gamma.f(d) + x * self.gamma.df(d) * self.base.dd(i, x)

    def d2a(self, i, j, x):
        x = _as_array(x)
        if i != j or self.gamma is None:
            return self.base.d2a(i, j, x)
        d = self.base.d(i, x)
        dd = self.base.dd(i, x)
        g1 = self.gamma.df(d)
        g2 = self.gamma.d2f(d)
        # second derivative of the self-diffusion rate, by differentiating a_ii = x d_ii
        ddd = (self.base.d2a(i, i, x) - 2.0 * dd) / np.where(x > 0, x, 1.0)
        return 2.0 * g1 * dd + x * (g2 * dd * dd + g1 * ddd)

    def d(self, i, x):
        d = self.base.d(i, _as_array(x))
        return d if self.gamma is None else self.gamma.f(d)

    def dd(self, i, x):
        x = _as_array(x)
        if self.gamma is None:
            return self.base.dd(i, x)
        return self.gamma.df(self.base.d(i, x)) * self.base.dd(i, x)

    def s(self, i, j, x):
        return self.base.s(i, j, x)

    def ds(self, i, j, x):
        return self.base.ds(i, j, x)

    def gamma_f(self, x):
        return _as_array(x) if self.gamma is None else self.gamma.f(x)

    def gamma_df(self, x):
        return np.ones_like(_as_array(x)) if self.gamma is None else self.gamma.df(x)


def regularize(c, eps: float, check: bool = True) -> RegularizedCoefficients:
    """Bundle eps-perturbed evaluators of ``c``.

    Structural (H2/H3) failures raise :class:`AssumptionError`.  Growth-rate
    (H1) failures only matter for the limit passage, not for the discrete
    scheme, so they are logged and kept in ``result.report``.
    """
    if not (0.0 <= eps < 1.0):
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    report = check_assumptions_H(c) if check else None
    if report is not None:
        if not report.structural_ok:
            raise AssumptionError(report)
        for cl in report.failures():
            logger.warning("growth assumption not met: %s", cl.line())
    gamma = make_gamma_eps(eps) if eps > 0 else None
    return RegularizedCoefficients(base=c, eps=float(eps), report=report, gamma=gamma)
