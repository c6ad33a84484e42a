"""Implicit Galerkin time steps in entropy variables, solved by sigma-continuation.

Each step finds ``w in V_n^2`` with, for every basis function ``chi``,

    sigma [ <chi, (u - u_prev)/tau> + <grad chi, A(u) grad w> - <chi, R(u)> ]
        + eps <chi, w>_H1 = 0,        u = phi^{-1}(w) nodewise.

``sigma = 0`` has the root ``w = 0``; Newton continuation carries it to 1.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .entropy import EntropyMap, InversionOverflow, entropy_functional, matrix_A, quadratic_form
from .spatial import SpatialSpace

logger = logging.getLogger(__name__)

INITIAL_FLOOR = 1e-8


class StepFailure(RuntimeError):
    """A time step could not be solved; carries whatever was computed so far."""

    def __init__(self, message, partial=None, step=None):
        super().__init__(message)
        self.partial = partial
        self.step = step


class TimeStepTooLarge(ValueError):
    pass


# ---- configuration and constants -------------------------------------------------


@dataclass
class SolveConfig:
    T: float = 1.0
    N: int = 100
    sigma_steps: int = 10
    newton_tol: float = 1e-11
    newton_max_iter: int = 50
    bisect_depth: int = 6
    homotopy: str = "always"  # or "direct-first": try sigma = 1 from the previous step first
    check_tau: bool = True

    def __post_init__(self):
        if self.T <= 0 or self.N < 1:
            raise ValueError("need T > 0 and N >= 1")
        if self.sigma_steps < 1:
            raise ValueError("sigma_steps must be >= 1")
        if self.homotopy not in ("always", "direct-first"):
            raise ValueError(f"unknown homotopy mode {self.homotopy!r}")

    @property
    def tau(self) -> float:
        return self.T / self.N

    def sigma_schedule(self):
        return np.linspace(0.0, 1.0, self.sigma_steps + 1)


@dataclass(frozen=True)
class EntropyConstants:
    """Constants of the a-priori entropy estimate.

    ``K`` bounds the reaction pairing, ``<w, R(u)> <= K (1 + E(u))``; ``K_T``
    bounds ``E(u^k) + tau sum (int Q + eps ||w||_H1^2)`` by ``K_T (E(u^0) + 1)``.
    """

    K: float
    K_T: float
    covered: bool
    detail: str

    def tau_admissible(self, tau: float) -> bool:
        return 1.0 - tau * self.K >= 0.5


def entropy_constants(reg, maps, mu: float, T: float) -> EntropyConstants:
    """Derive ``K`` and ``K_T`` from ``r_i``, ``D``, ``B`` and ``|Omega|``.

    Pointwise, with ``x phi(x) <= D(1+eps)(1+psi(x))`` and ``x phi(x) >= B - eps/e``:

    * ``r_i u phi(u)`` integrates to at most ``r_i D(1+eps)(mu + E_i)``;
    * ``-gamma(S_i) u phi(u)`` is positive only where ``u < 1`` and is at most
      ``(eps/e - B_i) gamma(S_i)``.  If every reaction exponent is <= 1 then
      ``gamma(S_i) <= S_i <= Smax_i sum_j (1 + u_j)`` and ``int u_j <= D(1+eps)(mu + E_j)``;
      otherwise ``gamma <= 1 + 1/eps`` is used.

    Collecting the multiples of ``E`` and of 1 gives ``K``.  The discrete
    Gronwall lemma with ``tau K <= 1/2`` gives ``E_k <= e^{2KT}(E_0 + TK)``, and
    summing the per-step inequality then yields
    ``K_T = 1 + TK + TK(1 + TK) e^{2KT}``.
    """
    base = reg.base
    eps = reg.eps
    Dm = max(m.D for m in maps) * (1.0 + eps)
    r = np.asarray(base.r, dtype=float)
    coef_E = float(r.sum()) * Dm
    const = float(r.sum()) * Dm * mu
    covered = True
    notes = []
    for i, m in enumerate(maps):
        neg = eps / math.e - m.B
        if hasattr(base, "S"):
            amps = [float(base.S[i][j]) for j in range(2)]
            expos = [float(base.sigma[i][j]) for j in range(2)]
        else:
            amps, expos = [float(np.max(base.s(i, j, np.array([1.0])))) for j in range(2)], [1.0, 1.0]
        if max(amps) == 0.0 or neg <= 0.0:
            continue
        if max(expos) <= 1.0:
            smax = max(amps)
            coef_E += neg * smax * Dm
            const += neg * smax * (2.0 * mu + 2.0 * Dm * mu)
        elif eps > 0:
            const += neg * (1.0 + 1.0 / eps) * mu
            notes.append(f"species {i + 1}: superlinear reaction, saturation bound used")
        else:
            covered = False
            notes.append(f"species {i + 1}: superlinear reaction without saturation")
    K = max(coef_E, const)
    if not covered:
        return EntropyConstants(math.inf, math.inf, False, "; ".join(notes))
    TK = T * K
    K_T = 1.0 + TK + TK * (1.0 + TK) * math.exp(min(2.0 * TK, 700.0))
    return EntropyConstants(K, K_T, True, "; ".join(notes) or "sublinear reactions")


def discrete_gronwall_bound(v0: float, theta: float, w_seq):
    """Bounds ``b_n`` for ``v_n <= v_{n-1} + theta v_n + w_n`` (n = 1..len(w_seq)).

    ``b_n = e^{n lam} [v0 + sum_{k<=n} e^{-(k-1) lam} w_k]`` with ``lam = theta/(1-theta)``.
    Returns an array of length ``len(w_seq) + 1`` starting with ``v0``.
    """
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    w = np.asarray(w_seq, dtype=float)
    if v0 < 0 or np.any(w < 0):
        raise ValueError("inputs must be nonnegative")
    lam = theta / (1.0 - theta)
    k = np.arange(1, w.size + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        partial = np.cumsum(np.exp(-(k - 1) * lam) * w)
        out = np.exp(k * lam) * (v0 + partial)
    # 0 * inf only arises when everything is zero
    return np.concatenate([[v0], np.nan_to_num(out, nan=0.0, posinf=np.inf)])


def gronwall_constant_closed_form(v0: float, theta: float, C: float, n: int) -> float:
    """Exact value of the general bound when ``w_k = C`` (a geometric sum)."""
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    lam = theta / (1.0 - theta)
    geo = -math.expm1(-n * lam) / -math.expm1(-lam)
    return _scaled_exp(n * lam, v0 + C * geo)


def gronwall_constant_shortcut(v0: float, theta: float, C: float, n: int) -> float:
    """The simpler upper bound ``e^{n lam} (v0 + C/theta)``."""
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    lam = theta / (1.0 - theta)
    return _scaled_exp(n * lam, v0 + C / theta)


def _scaled_exp(x: float, factor: float) -> float:
    """``e^x * factor`` for ``factor >= 0``, inf instead of OverflowError."""
    if factor <= 0.0:
        return 0.0
    log = x + math.log(factor)
    return math.exp(log) if log < 709.0 else math.inf


# ---- reaction --------------------------------------------------------------------


class ReactionSplit:
    """``R = R_plus - R_minus`` with ``R_plus = r u`` and ``R_minus = u gamma(s_i1 + s_i2)``."""

    def __init__(self, reg):
        self.reg = reg
        self.r = np.asarray(reg.base.r, dtype=float)

    def total_rate(self, i, u):
        return self.reg.s(i, 0, u[0]) + self.reg.s(i, 1, u[1])

    def plus(self, u):
        return self.r[:, None] * u

    def minus(self, u):
        return np.stack([u[i] * self.reg.gamma_f(self.total_rate(i, u)) for i in range(2)])

    def __call__(self, u):
        return self.plus(u) - self.minus(u)

    def jacobian(self, u):
        """``dR_i/du_j`` as an array of shape ``(2, 2, Q)``."""
        out = np.empty((2, 2) + u.shape[1:])
        for i in range(2):
            S = self.total_rate(i, u)
            g = self.reg.gamma_f(S)
            dg = self.reg.gamma_df(S)
            for j in range(2):
                val = -u[i] * dg * self.reg.ds(i, j, u[j])
                if i == j:
                    val = val + self.r[i] - g
                out[i, j] = val
        return out


def _matrix_A_derivatives(reg, u):
    """``dA[i, l, j] = d A_il / d u_j`` nodewise."""
    u1, u2 = u
    d = np.zeros((2, 2, 2) + u1.shape)
    for i, (ui, uj) in enumerate(((u1, u2), (u2, u1))):
        j = 1 - i
        self_d = reg.da(i, i, ui)
        self_dd = reg.d2a(i, i, ui)
        cross = reg.a(i, j, uj)
        dcross = reg.da(i, j, uj)
        den = reg.da(j, i, ui)
        dden = reg.d2a(j, i, ui)
        # A_ii = (a_ii' + a_ij(u_j)) u_i / a_ji'(u_i)
        d[i, i, i] = (self_dd * ui / den
                      + (self_d + cross) * (den - ui * dden) / (den * den))
        d[i, i, j] = dcross * ui / den
    # A_12 = A_21 = u1 u2
    d[0, 1, 0] = d[1, 0, 0] = u2
    d[0, 1, 1] = d[1, 0, 1] = u1
    return d


# ---- one time step ---------------------------------------------------------------


@dataclass
class Evaluation:
    F: np.ndarray
    u: np.ndarray
    gw: np.ndarray
    c: np.ndarray
    sigma: float
    Aev: object
    J: np.ndarray | None = None


class StepProblem:
    """Residual and Jacobian of one discrete step, for fixed ``u_prev`` and ``tau``."""

    def __init__(self, space: SpatialSpace, reg, maps, tau: float, u_prev):
        self.space = space
        self.reg = reg
        self.maps = maps
        self.tau = float(tau)
        self.u_prev = np.asarray(u_prev, dtype=float)
        if np.any(self.u_prev <= 0):
            raise ValueError("previous state must be positive at every node")
        self.eps = reg.eps
        self.reaction = ReactionSplit(reg)
        self._guess = self.u_prev.copy()
        self.h1_diag = self.eps * (1.0 + space.lam)

    def nodal_u(self, c):
        w = self.space.evaluate(c)
        u = np.empty_like(w)
        for i in range(2):
            try:
                u[i] = self.maps[i].phi_inverse(w[i], guess=self._guess[i])
            except InversionOverflow as exc:
                node = self.space.nodes[exc.index] if exc.index is not None else None
                raise InversionOverflow(f"species {i + 1} at node {node}: {exc}", exc.index) from exc
        return u

    def evaluate(self, c, sigma: float, jacobian: str | None = "full") -> Evaluation:
        sp = self.space
        c = np.asarray(c, dtype=float).reshape(2, sp.n)
        u = self.nodal_u(c)
        gw = sp.gradient(c)
        Aev = matrix_A(self.reg, u[0], u[1])
        diff = sp.assemble_diffusion(Aev, gw)
        R = self.reaction(u)
        body = sp.project((u - self.u_prev) / self.tau - R) + diff
        F = sigma * body + self.h1_diag * c
        ev = Evaluation(F.ravel(), u, gw, c, sigma, Aev)
        if jacobian is not None:
            ev.J = self.jacobian(ev, full=(jacobian == "full"))
        return ev

    def jacobian(self, ev: Evaluation, full: bool = True):
        return self._jacobian(ev.c, ev.u, ev.gw, ev.Aev, ev.sigma, full=full)

    def _jacobian(self, c, u, gw, Aev, sigma, full=True):
        sp = self.space
        n = sp.n
        wt = sp.weights
        B, G = sp.B, sp.G
        Jw = np.stack([1.0 / self.maps[i].dphi(u[i]) for i in range(2)])  # du/dw
        dR = self.reaction.jacobian(u)
        A = [[Aev.A11, Aev.A12], [Aev.A12, Aev.A22]]
        dA = _matrix_A_derivatives(self.reg, u) if full else None
        J = np.zeros((2 * n, 2 * n))
        for i in range(2):
            for j in range(2):
                nodal = ((1.0 / self.tau if i == j else 0.0) - dR[i, j]) * Jw[j]
                if full:
                    # d/du_j of the flux row i, contracted with grad chi_m: (dim, Q)
                    dflux = dA[i, 0, j] * gw[0] + dA[i, 1, j] * gw[1]
                    blk = B.T @ ((wt * nodal)[:, None] * B)
                    blk += np.einsum("dq,dqm,qk->mk", dflux * (wt * Jw[j]), G, B)
                else:
                    blk = B.T @ ((wt * nodal)[:, None] * B)
                blk += np.einsum("q,dqm,dqk->mk", wt * A[i][j], G, G)
                blk *= sigma
                if i == j:
                    blk[np.diag_indices(n)] += self.h1_diag
                J[i * n:(i + 1) * n, j * n:(j + 1) * n] = blk
        return J

    def remember(self, u):
        self._guess = u


@dataclass
class NewtonResult:
    converged: bool
    c: np.ndarray
    iterations: int
    residual: float
    evaluation: Evaluation | None
    message: str = ""


def _safe_eval(problem, c, sigma, jac):
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            ev = problem.evaluate(c, sigma, jac)
    except (InversionOverflow, FloatingPointError, ValueError) as exc:
        return None, str(exc)
    if not np.all(np.isfinite(ev.F)):
        return None, "non-finite residual"
    return ev, ""


def newton_solve(problem: StepProblem, c0, sigma: float, tol: float, max_iter: int) -> NewtonResult:
    """Damped Newton on ``||F||_inf``; falls back to a frozen-matrix (Picard) direction."""
    c = np.asarray(c0, dtype=float).ravel().copy()
    ev, msg = _safe_eval(problem, c, sigma, None)
    if ev is None:
        return NewtonResult(False, c, 0, math.inf, None, msg)
    res = float(np.max(np.abs(ev.F)))
    it = 0
    while res > tol and it < max_iter:
        it += 1
        accepted = False
        norm0 = float(np.linalg.norm(ev.F))
        for full in (True, False):
            try:
                with np.errstate(over="raise", invalid="raise"):
                    Jm = problem.jacobian(ev, full=full)
                step = np.linalg.solve(Jm, -ev.F)
            except (np.linalg.LinAlgError, FloatingPointError):
                continue
            if not np.all(np.isfinite(step)):
                continue
            alpha = 1.0
            for _ in range(40):
                trial, _ = _safe_eval(problem, c + alpha * step, sigma, None)
                if trial is not None and np.linalg.norm(trial.F) <= (1.0 - 1e-4 * alpha) * norm0:
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                break
        if not accepted:
            # no descent is possible at round-off level; accept if already close
            if res <= 100.0 * tol:
                problem.remember(ev.u)
                return NewtonResult(True, c, it, res, ev, "stagnated at round-off")
            return NewtonResult(False, c, it, res, ev, "line search failed")
        c = c + alpha * step
        ev = trial
        problem.remember(ev.u)
        res = float(np.max(np.abs(ev.F)))
        if alpha * float(np.max(np.abs(step))) <= 1e-15 * (1.0 + float(np.max(np.abs(c)))) and res <= 100.0 * tol:
            break
    ok = res <= tol or (res <= 100.0 * tol and it > 0)
    return NewtonResult(ok, c, it, res, ev, "" if ok else "iteration limit")


@dataclass
class StepReport:
    sigma_path: list
    newton_iters: int
    residual: float


def solve_step(problem: StepProblem, cfg: SolveConfig, c_prev=None):
    """Continuation in sigma from the root ``w = 0`` of ``sigma = 0``.

    Returns ``(coefficients, final Evaluation, StepReport)``; raises
    :class:`StepFailure` when bisection of a sigma increment is exhausted.
    """
    n = problem.space.n
    path = []
    total_iters = 0
    if cfg.homotopy == "direct-first" and c_prev is not None:
        res = newton_solve(problem, c_prev, 1.0, cfg.newton_tol, cfg.newton_max_iter)
        total_iters += res.iterations
        if res.converged:
            path.append(1.0)
            return res.c.reshape(2, n), res.evaluation, StepReport(path, total_iters, res.residual)
        problem.remember(problem.u_prev.copy())

    c = np.zeros(2 * n)
    path.append(0.0)
    last = None

    def advance(s0, s1, c_start, depth):
        nonlocal total_iters
        res = newton_solve(problem, c_start, s1, cfg.newton_tol, cfg.newton_max_iter)
        total_iters += res.iterations
        if res.converged:
            path.append(float(s1))
            return res
        if depth >= cfg.bisect_depth:
            raise StepFailure(
                f"continuation failed at sigma={s1:.6g} (residual {res.residual:.3e}, {res.message})")
        mid = 0.5 * (s0 + s1)
        first = advance(s0, mid, c_start, depth + 1)
        return advance(mid, s1, first.c, depth + 1)

    schedule = cfg.sigma_schedule()
    for s0, s1 in zip(schedule[:-1], schedule[1:]):
        last = advance(s0, s1, c, 0)
        c = last.c
    return c.reshape(2, n), last.evaluation, StepReport(path, total_iters, last.residual)


# ---- trajectory ------------------------------------------------------------------


SERIES_KEYS = ("entropy", "dissipation", "mass1", "mass2", "l1_reaction_neg", "w_h1_sq", "newton_iters")


@dataclass
class Trajectory:
    """Coefficients, nodal states and per-step diagnostics of a run."""

    space: SpatialSpace
    reg: object
    maps: tuple
    cfg: SolveConfig
    coeffs: list = field(default_factory=list)  # (2, n) per step, index 0 = projection of phi(u0)
    states: list = field(default_factory=list)  # (2, Q) nodal u per step
    records: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)

    @property
    def tau(self):
        return self.cfg.tau

    @property
    def steps_done(self) -> int:
        return len(self.states) - 1

    def series(self, key):
        return np.asarray(self.records[key])


def _record(traj, key, value):
    traj.records.setdefault(key, []).append(value)


def step_diagnostics(space, reg, maps, u, c, gw, tau, u_prev):
    """Quantities monitored after every step (and for the initial row)."""
    wt = space.weights
    react = ReactionSplit(reg)
    Rp = react.plus(u)
    Rm = react.minus(u)
    out = {
        "entropy": entropy_functional(maps[0], maps[1], u, space),
        "mass_1": float(space.integrate(u[0])),
        "mass_2": float(space.integrate(u[1])),
        "rplus_1": float(space.integrate(Rp[0])),
        "rplus_2": float(space.integrate(Rp[1])),
        "rminus_1": float(space.integrate(Rm[0])),
        "rminus_2": float(space.integrate(Rm[1])),
        "w_int_1": float(np.sqrt(space.mu) * c[0, 0]),
        "w_int_2": float(np.sqrt(space.mu) * c[1, 0]),
        "w_h1_sq": float(np.sum(space.h1_norm_sq(c))),
        "min_u": float(np.min(u)),
    }
    if gw is None:
        for key in ("dissipation", "bound1", "bound2", "g_sqrt_a21", "g_sqrt_a12", "g_sqrt_prod",
                    "literal_grad_1", "literal_grad_2", "beta_grad_1", "beta_grad_2"):
            out[key] = 0.0
        return out
    qf = quadratic_form(reg, u[0], u[1], np.moveaxis(gw[0], 0, -1), np.moveaxis(gw[1], 0, -1))
    out["dissipation"] = float(qf.Q @ wt)
    out["bound1"] = float(qf.bound1 @ wt)
    out["bound2"] = float(qf.bound2 @ wt)
    out["g_sqrt_a21"] = float(qf.g_sqrt_a21 @ wt)
    out["g_sqrt_a12"] = float(qf.g_sqrt_a12 @ wt)
    out["g_sqrt_prod"] = float(qf.g_sqrt_prod @ wt)
    for i, gu in enumerate((qf.grad_u1, qf.grad_u2)):
        fac = reg.da(1 - i, i, u[i]) / u[i]
        out[f"literal_grad_{i + 1}"] = float((fac ** 2 * np.sum(gu * gu, axis=-1)) @ wt)
        if maps[i].closed_form:
            # the lower-bound exponent is 1 - alpha_ji, so beta(u) = u^(alpha_ji / 2)
            al = 1.0 - maps[i].expo
            dbeta = 0.5 * (1.0 - al) * np.power(u[i], -0.5 * (1.0 + al))
            out[f"beta_grad_{i + 1}"] = float((dbeta ** 2 * np.sum(gu * gu, axis=-1)) @ wt)
        else:
            out[f"beta_grad_{i + 1}"] = float("nan")
    return out


def floor_initial(u0, floor: float = INITIAL_FLOOR):
    u0 = np.asarray(u0, dtype=float)
    if np.any(u0 < 0) or not np.all(np.isfinite(u0)):
        raise ValueError("initial data must be finite and nonnegative")
    return np.maximum(u0, floor)


def run_trajectory(space: SpatialSpace, reg, cfg: SolveConfig, u0, maps=None, progress=None) -> Trajectory:
    """March ``N`` implicit steps from nodal initial data ``u0`` of shape ``(2, Q)``."""
    if maps is None:
        maps = (EntropyMap(reg, 0), EntropyMap(reg, 1))
    if reg.eps <= 0:
        raise ValueError("the scheme needs eps > 0")
    consts = entropy_constants(reg, maps, space.mu, cfg.T)
    if cfg.check_tau and not consts.tau_admissible(cfg.tau):
        raise TimeStepTooLarge(
            f"tau = {cfg.tau:.4g} violates 1 - tau K >= 1/2 with K = {consts.K:.4g}; "
            f"use N >= {math.ceil(2 * consts.K * cfg.T)}")
    u = floor_initial(u0)
    if u.shape != (2, space.num_nodes):
        raise ValueError(f"initial data must have shape (2, {space.num_nodes})")
    traj = Trajectory(space, reg, tuple(maps), cfg)
    w0 = np.stack([maps[i].phi(u[i]) for i in range(2)])
    c0 = space.project(w0)
    traj.coeffs.append(c0)
    traj.states.append(u)
    diag = step_diagnostics(space, reg, maps, u, c0, None, cfg.tau, None)
    for key, val in diag.items():
        _record(traj, key, val)
    _record(traj, "newton_iters", 0)
    _record(traj, "residual", 0.0)
    c_prev = None
    for k in range(1, cfg.N + 1):
        problem = StepProblem(space, reg, maps, cfg.tau, u)
        try:
            c, ev, rep = solve_step(problem, cfg, c_prev)
        except StepFailure as exc:
            exc.partial = traj
            exc.step = k
            raise StepFailure(f"step {k}: {exc}", traj, k) from exc
        diag = step_diagnostics(space, reg, maps, ev.u, c, ev.gw, cfg.tau, u)
        for key, val in diag.items():
            _record(traj, key, val)
        _record(traj, "newton_iters", rep.newton_iters)
        _record(traj, "residual", rep.residual)
        traj.coeffs.append(c)
        traj.states.append(ev.u)
        traj.reports.append(rep)
        u = ev.u
        c_prev = c
        if progress is not None:
            progress(k, traj)
    return traj
