"""Runtime verification of the a-priori estimates, weak residuals, ODE oracle, refinement studies."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, is_constant
from .duality import duality_norm
from .stepper import EntropyConstants, ReactionSplit, entropy_constants, run_trajectory


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float
    asserted: bool = True
    note: str = ""

    def line(self) -> str:
        tag = ("PASS" if self.passed else "FAIL") if self.asserted else "INFO"
        extra = f" ({self.note})" if self.note else ""
        return f"{tag} {self.name}: {self.value:.6e} vs {self.limit:.6e}{extra}"


def _le(name, value, limit, asserted=True, note=""):
    return Check(name, bool(value <= limit), float(value), float(limit), asserted, note)


def trajectory_checks(traj, consts: EntropyConstants | None = None):
    """All invariants a completed trajectory must satisfy, as a list of :class:`Check`."""
    space, reg, maps, cfg = traj.space, traj.reg, traj.maps, traj.cfg
    tau, tol, eps, mu = cfg.tau, cfg.newton_tol, reg.eps, space.mu
    if consts is None:
        consts = entropy_constants(reg, maps, mu, cfg.T)
    rec = {k: np.asarray(v, dtype=float) for k, v in traj.records.items()}
    E = rec["entropy"]
    diss = rec["dissipation"][1:]
    wh1 = rec["w_h1_sq"][1:]
    l1c = np.array([np.sum(np.abs(c)) for c in traj.coeffs[1:]])
    checks = []

    checks.append(Check("positivity: min nodal u > 0", bool(rec["min_u"].min() > 0),
                        float(rec["min_u"].min()), 0.0))

    # per-step entropy inequality; testing the residual with w costs at most ||c||_1 ||F||_inf
    lhs = (E[1:] - E[:-1]) / tau + diss + eps * wh1 - consts.K * (1.0 + E[1:])
    slack = 10.0 * tol * np.maximum(1.0, l1c)
    checks.append(_le("per-step entropy inequality (max excess over slack)",
                      float(np.max(lhs - slack, initial=-math.inf)), 0.0))

    cum = E[1:] + tau * np.cumsum(diss + eps * wh1)
    cum_slack = 10.0 * tol * tau * np.cumsum(np.maximum(1.0, l1c))
    checks.append(_le("cumulative entropy bound E_k + tau sum(Q + eps|w|^2)",
                      float(np.max(cum - cum_slack, initial=0.0)), consts.K_T * (E[0] + 1.0),
                      note=f"K = {consts.K:.4g}, K_T = {consts.K_T:.4g}"))

    base = reg.base
    pure_diffusion = not np.any(np.asarray(base.r)) and all(
        float(base.s(i, j, 1.0)) == 0.0 for i in range(2) for j in range(2))
    if pure_diffusion:
        checks.append(_le("entropy nonincreasing (max step increase)",
                          float(np.max(np.diff(E), initial=0.0)), 10.0 * tol))

    # mass balance obtained by testing with the constant mode
    bal_tol = 10.0 * tol * max(1.0, tau * math.sqrt(mu))
    totals = []
    for i in (1, 2):
        m = rec[f"mass_{i}"]
        defect = (m[1:] - m[:-1] + eps * tau * rec[f"w_int_{i}"][1:]
                  + tau * rec[f"rminus_{i}"][1:] - tau * rec[f"rplus_{i}"][1:])
        totals.append(abs(float(np.sum(defect))))
        checks.append(_le(f"L1 balance species {i} (max per-step defect)",
                          float(np.max(np.abs(defect), initial=0.0)), bal_tol))
    if pure_diffusion:
        checks.append(_le("L1 balance total discrepancy", max(totals), 1e-9))

    # mass growth bound with the eps-correction of the proof
    rmax = float(max(np.max(base.r), 0.0))
    if rmax * tau < 1.0:
        r_tau = rmax / (1.0 - tau * rmax)
        m_tot = rec["mass_1"] + rec["mass_2"]
        bound = (m_tot[0] + math.sqrt(eps) * (cfg.T * mu + consts.K_T * (E[0] + 1.0))) \
            * math.exp(cfg.T * r_tau)
        checks.append(_le("mass bound ||u^k||_1", float(m_tot.max()), bound))

    # gradient norms controlled by the dissipation
    total_Q = tau * float(np.sum(diss))
    qslack = 1e-9 * total_Q
    for key, label in (("g_sqrt_a21", "|grad sqrt(a21(u1))|^2"),
                       ("g_sqrt_a12", "|grad sqrt(a12(u2))|^2"),
                       ("g_sqrt_prod", "|grad sqrt(a21 a12)|^2")):
        val = tau * float(np.sum(rec[key][1:]))
        checks.append(_le(f"tau sum int {label} <= (1/4) tau sum int Q", val, 0.25 * total_Q + qslack))
    b1 = tau * float(np.sum(rec["bound1"][1:]))
    checks.append(_le("tau sum int (a'/u)|grad u|^2 <= tau sum int Q", b1, total_Q + qslack))
    for i in (1, 2):
        lit = math.sqrt(tau * float(np.sum(rec[f"literal_grad_{i}"][1:])))
        checks.append(Check(f"||(a'/u) grad u_{i}||_L2(Q_T) (reported)", True, lit, math.sqrt(total_Q),
                            asserted=False))
    if all(m.closed_form for m in maps):
        weighted = 0.0
        for i, m in enumerate(maps):
            C = m.amp * m.expo
            weighted += 4.0 * C / m.expo ** 2 * tau * float(np.sum(rec[f"beta_grad_{i + 1}"][1:]))
        checks.append(_le("sum 4C/(1-alpha)^2 tau sum |grad beta(u)|^2 <= tau sum int Q",
                          weighted, total_Q + qslack))
        checks.append(_le("tau sum int Q <= K_T (E_0 + 1)", total_Q, consts.K_T * (E[0] + 1.0)))
    return checks


# ---- weak formulation ------------------------------------------------------------

TIME_PROFILES = {
    "linear": (lambda s: 1.0 - s, lambda a, b: (b - a) - 0.5 * (b * b - a * a)),
    "quadratic": (lambda s: (1.0 - s) ** 2, lambda a, b: ((1.0 - a) ** 3 - (1.0 - b) ** 3) / 3.0),
}


def weak_test_functions(modes=(0, 1, 2)):
    """The six separable test functions ``p(t) chi_m(x)``."""
    return [(p, m) for p in TIME_PROFILES for m in modes]


def weak_residual(traj, profile: str, mode: int, u0=None):
    """Defect of the limit weak formulation, per species, for ``theta = p(t/T) chi_m(x)``.

    Fields are piecewise constant in time (``u^k`` on ``((k-1) tau, k tau]``) and
    the unregularised coefficients are used.
    """
    if profile not in TIME_PROFILES:
        raise ValueError(f"unknown time profile {profile!r}")
    p, p_int = TIME_PROFILES[profile]
    if abs(p(1.0)) > 0:
        raise ValueError("test function must vanish at t = T")
    space, base = traj.space, traj.reg.base
    T, N = traj.cfg.T, traj.steps_done
    tau = traj.tau
    chi = space.B[:, mode]
    lap_chi = -space.lam[mode] * chi
    u_init = traj.states[0] if u0 is None else u0
    react = ReactionSplit(_Unregularized(base))
    out = np.zeros(2)
    for i in range(2):
        j = 1 - i
        total = -float(space.integrate(u_init[i] * chi)) * p(0.0)
        for k in range(1, N + 1):
            u = traj.states[k]
            s0, s1 = (k - 1) * tau / T, k * tau / T
            dp = p(s1) - p(s0)
            weight = T * p_int(s0, s1)
            flux = base.a(i, i, u[i]) + u[i] * base.a(i, j, u[j])
            R = react(u)[i]
            total -= float(space.integrate(u[i] * chi)) * dp
            total -= weight * float(space.integrate(lap_chi * flux))
            total -= weight * float(space.integrate(R * chi))
        out[i] = total
    return out


class _Unregularized:
    """Adapter giving base coefficients the reaction interface (``gamma`` = identity)."""

    def __init__(self, base):
        self.base = base

    def s(self, i, j, x):
        return self.base.s(i, j, x)

    def ds(self, i, j, x):
        return self.base.ds(i, j, x)

    def gamma_f(self, x):
        return np.asarray(x, dtype=float)

    def gamma_df(self, x):
        return np.ones_like(np.asarray(x, dtype=float))


def weak_residuals(traj):
    return {(p, m): weak_residual(traj, p, m) for p, m in weak_test_functions()}


# ---- ODE oracle ------------------------------------------------------------------


def ode_reference(coeffs, u0, T: float, steps: int):
    """RK4 for ``u_i' = u_i (r_i - s_ii(u_i) - s_ij(u_j))``; returns states at each step end."""
    r = np.asarray(coeffs.r, dtype=float)

    def rhs(u):
        return np.array([u[i] * (r[i] - coeffs.s(i, 0, u[0]) - coeffs.s(i, 1, u[1])) for i in range(2)])

    h = T / steps
    u = np.asarray(u0, dtype=float).copy()
    out = [u.copy()]
    for _ in range(steps):
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * h * k1)
        k3 = rhs(u + 0.5 * h * k2)
        k4 = rhs(u + h * k3)
        u = u + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(u.copy())
    return np.array(out)


@dataclass
class OdeComparison:
    max_rel_error: float
    final_scheme: np.ndarray
    final_reference: np.ndarray
    traj: object


def ode_compare(cfg: RunConfig) -> OdeComparison:
    """Run a spatially constant problem and compare with RK4 at step ``tau/100``."""
    reg, maps, space, scfg = cfg.build()
    u0 = cfg.initial_data(space)
    if not is_constant(u0):
        raise ValueError("ode-compare needs spatially constant initial data")
    traj = run_trajectory(space, reg, scfg, u0, maps)
    sub = 100
    ref = ode_reference(reg.base, u0[:, 0], cfg.T, cfg.N * sub)[::sub]
    scheme = np.array([u.mean(axis=1) for u in traj.states])
    rel = np.abs(scheme - ref) / np.maximum(np.abs(ref), 1e-300)
    return OdeComparison(float(rel.max()), scheme[-1], ref[-1], traj)


# ---- refinement ------------------------------------------------------------------


@dataclass
class LevelResult:
    level: int
    N: int
    eps: float
    n: int
    final_entropy: float
    duality: tuple
    weak: dict
    checks: list
    seconds: float

    @property
    def weak_max(self) -> float:
        return max(float(np.max(np.abs(v))) for v in self.weak.values())


def refine(cfg: RunConfig, level: int, n_cap: int = 64) -> RunConfig:
    """``(tau, eps, n) -> (tau / 2^l, eps / 4^l, n 2^l)`` with ``n`` capped."""
    from .config import replace

    return replace(cfg, N=cfg.N * 2 ** level, eps=cfg.eps / 4 ** level,
                   n=min(cfg.n * 2 ** level, max(n_cap, cfg.n)))


def _run_level(cfg: RunConfig, level: int, n_cap: int) -> LevelResult:
    c = refine(cfg, level, n_cap)
    t0 = time.perf_counter()
    reg, maps, space, scfg = c.build()
    traj = run_trajectory(space, reg, scfg, c.initial_data(space), maps)
    return LevelResult(level, c.N, c.eps, c.n, float(traj.records["entropy"][-1]),
                       duality_norm(traj), weak_residuals(traj),
                       trajectory_checks(traj), time.perf_counter() - t0)


def convergence_study(cfg: RunConfig, levels: int = 3, n_cap: int = 64, workers: int | None = None):
    """Run every refinement level; levels are independent and run in worker processes.

    ``workers=None`` uses one process per level up to the CPU count; ``workers=1``
    runs in this process.  Results are returned in level order either way.
    """
    if levels < 2:
        raise ValueError("a convergence study needs at least two levels")
    if workers is None:
        workers = min(levels, os.cpu_count() or 1)
    if workers <= 1:
        return [_run_level(cfg, lev, n_cap) for lev in range(levels)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_level, cfg, lev, n_cap) for lev in range(levels)]
        return [f.result() for f in futures]


def duality_band(values):
    """``(max/min - 1, last/first - 1)`` for a sequence of positive norms."""
    v = np.asarray(values, dtype=float)
    return float(v.max() / v.min() - 1.0), float(v[-1] / v[0] - 1.0)


def entropy_map_checks(maps, samples: int = 2000, seed: int = 0):
    """Pointwise identities of the entropy maps on sampled arguments."""
    rng = np.random.default_rng(seed)
    xs = np.geomspace(1e-8, 1e6, samples)
    checks = []
    for i, m in enumerate(maps):
        tag = f"species {i + 1}"
        a1 = float(m.reg.base.a(m.j, m.i, 1.0))
        checks.append(_le(f"{tag}: |psi(0) - a(1) - eps|", abs(float(m.psi(0.0)) - a1 - m.eps), 1e-12))
        if m.eps > 0:
            top = min(50.0, float(m.phi(1e200)))
            y = rng.uniform(-50.0, top, samples)
            x = m.phi_inverse(y)
            err = np.max(np.abs(m.phi(x) - y) / (1.0 + np.abs(y)))
            checks.append(_le(f"{tag}: phi inverse round trip", float(err), 1e-12))
        # second differences of psi on a log grid, scaled to the local step
        h = 1e-3 * xs
        second = (m.psi(xs + h) - 2.0 * m.psi(xs) + m.psi(xs - h)) / (h * h)
        checks.append(Check(f"{tag}: psi convexity (min second difference)",
                            bool(np.min(second) >= -1e-9), float(np.min(second)), -1e-9))
        xphi = xs * m.phi(xs)
        checks.append(_le(f"{tag}: B - eps/e - min x phi(x)", float(m.B - m.eps / math.e - xphi.min()), 0.0))
        dom = m.D * (1.0 + m.eps) * (1.0 + m.psi(xs))
        lhs1 = np.power(xs, 1.0 - m.expo) + m.reg.a(m.j, m.i, xs) if m.closed_form else xs + m.reg.a(m.j, m.i, xs)
        checks.append(_le(f"{tag}: max (x^alpha + a(x)) / D(1+eps)(1+psi)", float(np.max(lhs1 / dom)), 1.0))
        checks.append(_le(f"{tag}: max x phi(x) / D(1+eps)(1+psi)", float(np.max(xphi / dom)), 1.0))
    return checks
