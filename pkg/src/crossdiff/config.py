"""Flat ``key = value`` run configuration: parsing, echo and object construction."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .coefficients import PowerLawCoefficients, regularize
from .entropy import EntropyMap
from .spatial import SpatialSpace
from .stepper import SolveConfig


class ConfigError(ValueError):
    pass


U0_KINDS = ("constant", "cosine-bump", "file", "random")


@dataclass
class RunConfig:
    # reaction
    r1: float = 0.0
    r2: float = 0.0
    S11: float = 0.0
    S12: float = 0.0
    S21: float = 0.0
    S22: float = 0.0
    sigma11: float = 1.0
    sigma12: float = 1.0
    sigma21: float = 1.0
    sigma22: float = 1.0
    # diffusion
    D1: float = 1.0
    D2: float = 1.0
    A11: float = 0.0
    A12: float = 1.0
    A21: float = 1.0
    A22: float = 0.0
    alpha11: float = 1.0
    alpha12: float = 0.5
    alpha21: float = 0.5
    alpha22: float = 1.0
    eps: float = 1e-3
    # space
    dim: int = 1
    L: float = 1.0
    L1: float = 0.0
    L2: float = 0.0
    n: int = 8
    fd_points: int = 64
    # time and solver
    T: float = 1.0
    N: int = 50
    sigma_steps: int = 10
    newton_tol: float = 1e-11
    newton_max_iter: int = 50
    homotopy: str = "always"
    # initial data
    u0_kind: str = "cosine-bump"
    u0_params: str = "1 0.5 1 -0.5"
    # output
    snapshots: str = "auto"
    figures: bool = False
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.u0_kind not in U0_KINDS:
            raise ConfigError(f"u0_kind must be one of {', '.join(U0_KINDS)}")
        if self.dim not in (1, 2):
            raise ConfigError("dim must be 1 or 2")
        if not (0.0 < self.eps < 1.0):
            raise ConfigError("eps must lie in (0, 1)")
        if self.n < 1 or self.N < 1 or self.fd_points < 2:
            raise ConfigError("n, N must be >= 1 and fd_points >= 2")
        if self.T <= 0:
            raise ConfigError("T must be positive")

    # ---- derived objects ---------------------------------------------------

    @property
    def extents(self):
        if self.dim == 1:
            return (self.L,)
        return (self.L1 or self.L, self.L2 or self.L)

    def coefficients(self) -> PowerLawCoefficients:
        return PowerLawCoefficients(
            r=(self.r1, self.r2),
            S=((self.S11, self.S12), (self.S21, self.S22)),
            sigma=((self.sigma11, self.sigma12), (self.sigma21, self.sigma22)),
            D=(self.D1, self.D2),
            A=((self.A11, self.A12), (self.A21, self.A22)),
            alpha=((self.alpha11, self.alpha12), (self.alpha21, self.alpha22)),
        )

    def regularized(self, check=True):
        return regularize(self.coefficients(), self.eps, check=check)

    def space(self) -> SpatialSpace:
        return SpatialSpace(self.dim, self.extents, self.n)

    def solve_config(self) -> SolveConfig:
        return SolveConfig(T=self.T, N=self.N, sigma_steps=self.sigma_steps,
                           newton_tol=self.newton_tol, newton_max_iter=self.newton_max_iter,
                           homotopy=self.homotopy)

    def snapshot_steps(self):
        if self.snapshots.strip() in ("", "auto"):
            steps = {0, self.N // 4, self.N // 2, (3 * self.N) // 4, self.N}
        else:
            steps = {int(v) for v in self.snapshots.replace(",", " ").split()}
        return sorted(s for s in steps if 0 <= s <= self.N)

    def build(self):
        """``(regularized coefficients, entropy maps, space, solver config)``."""
        reg = self.regularized()
        maps = (EntropyMap(reg, 0), EntropyMap(reg, 1))
        return reg, maps, self.space(), self.solve_config()

    def initial_data(self, space: SpatialSpace, base_dir: Path | None = None):
        """Nodal initial data ``(2, Q)`` at the quadrature nodes."""
        params = self.u0_params.split()
        x = space.nodes
        if self.u0_kind == "constant":
            vals = [float(v) for v in params] or [1.0, 1.0]
            if len(vals) != 2:
                raise ConfigError("constant u0 needs two values")
            return np.stack([np.full(space.num_nodes, v) for v in vals])
        if self.u0_kind == "cosine-bump":
            vals = [float(v) for v in params]
            if len(vals) != 4:
                raise ConfigError("cosine-bump u0 needs 'base1 amp1 base2 amp2'")
            shape = np.ones(space.num_nodes)
            for d, Ld in enumerate(space.extents):
                shape = shape * np.cos(np.pi * x[:, d] / Ld)
            return np.stack([vals[0] + vals[1] * shape, vals[2] + vals[3] * shape])
        if self.u0_kind == "random":
            # smooth random profile from a few low cosine modes, strictly positive
            rng = np.random.default_rng(self.seed)
            scale = float(params[0]) if params else 0.5
            modes = min(space.n, 4)
            out = []
            for _ in range(2):
                c = np.zeros(space.n)
                c[0] = np.sqrt(space.mu)
                c[1:modes] = rng.normal(scale=scale / modes, size=modes - 1)
                vals = space.evaluate(c)
                out.append(np.maximum(vals, 0.05))
            return np.stack(out)
        # file: two whitespace-separated columns sampled on a uniform 1D grid
        if not params:
            raise ConfigError("file u0 needs a path")
        path = Path(params[0])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            data = np.loadtxt(path, ndmin=2)
        except OSError as exc:
            raise ConfigError(f"cannot read initial data {path}: {exc}") from exc
        if data.shape[1] != 2 or self.dim != 1:
            raise ConfigError("file u0 must have two columns and dim = 1")
        grid = (np.arange(data.shape[0]) + 0.5) * self.L / data.shape[0]
        return np.stack([np.interp(x[:, 0], grid, data[:, i]) for i in range(2)])


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw: str):
    typ = _TYPES[key]
    try:
        if typ in ("float", float):
            return float(raw)
        if typ in ("int", int):
            val = float(raw)
            if not val.is_integer():
                raise ValueError
            return int(val)
        if typ in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def echo_config(cfg: RunConfig) -> str:
    """Resolved configuration, one ``key = value`` per line, in field order."""
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))


def replace(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes)


def is_constant(u0) -> bool:
    u0 = np.asarray(u0)
    return bool(np.all(np.abs(u0 - u0[:, :1]) <= 1e-14 * np.maximum(1.0, np.abs(u0[:, :1]))))


def finite(x) -> bool:
    return x is not None and math.isfinite(x)
