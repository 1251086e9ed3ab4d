"""Shared domain types: time grids, Brownian path ensembles, scenario descriptions.

All containers are immutable after construction.  Reductions over the path axis
go through :func:`path_sum`, which lays the path index out contiguously and lets
numpy's pairwise summation run over it, so results never depend on worker count.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import ndtri

from .measure import EmpiricalLaw, law_stats, w1


class ScenarioError(ValueError):
    """A scenario failed validation; ``assumption`` names the violated hypothesis."""

    def __init__(self, assumption: str, message: str):
        super().__init__(f"{assumption}: {message}")
        self.assumption = assumption


class SolverError(RuntimeError):
    """Numerical failure inside the solver; ``window`` is set by the stitcher."""

    def __init__(self, message: str, window: int | None = None, log: list | None = None):
        super().__init__(message if window is None else f"window {window}: {message}")
        self.window = window
        self.log = log or []


# ---------------------------------------------------------------------------
# fixed-order reductions


def path_sum(x: np.ndarray) -> np.ndarray:
    """Sum over axis 0 (the path axis) in a fixed pairwise order."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.add.reduce(np.ascontiguousarray(x))
    moved = np.ascontiguousarray(np.moveaxis(x, 0, -1))
    return np.add.reduce(moved, axis=-1)


def path_mean(x: np.ndarray) -> np.ndarray:
    return path_sum(x) / np.asarray(x).shape[0]


def path_std_error(x: np.ndarray) -> np.ndarray:
    """Standard error of :func:`path_mean`."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    centred = x - path_mean(x)
    var = path_sum(centred * centred) / max(n - 1, 1)
    return np.sqrt(var / n)


# ---------------------------------------------------------------------------
# grid and paths


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.n_steps >= 1:
            raise ValueError("n_steps must be a positive integer")
        if not self.horizon > 0:
            raise ValueError("zero-step grid: horizon must be positive")

    @property
    def step(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1, dtype=float) * self.step
        t[-1] = self.horizon
        return t


_CHUNK_PATHS = 8192


def _philox_normals(seed: int, start: int, count: int) -> np.ndarray:
    """Standard normals for flat indices ``start .. start+count-1`` of the stream.

    One 64-bit Philox word per index; the counter is set directly so any block
    of the stream can be produced without generating what precedes it.
    """
    block, lane = divmod(start, 4)
    gen = np.random.Philox(key=int(seed) & (2**64 - 1), counter=block)
    raw = gen.random_raw(lane + count)[lane:]
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True)
class PathEnsemble:
    """Brownian increments on a grid plus the running Brownian motion.

    ``increments`` has shape ``(n_paths, n_steps, d)``; ``brownian`` has shape
    ``(n_paths, n_steps + 1, d)`` with ``brownian[:, 0] == 0``.
    """

    grid: TimeGrid
    n_paths: int
    d: int
    seed: int
    increments: np.ndarray
    brownian: np.ndarray = field(repr=False)

    @property
    def terminal(self) -> np.ndarray:
        return self.brownian[:, -1, :]


def simulate_paths(grid: TimeGrid, n_paths: int, d: int = 1, seed: int = 0,
                   workers: int = 1) -> PathEnsemble:
    """Simulate ``n_paths`` d-dimensional Brownian paths on ``grid``.

    The normal attached to (path, step, coordinate) is a pure function of the
    seed and that triple, so chunking and ``workers`` do not affect the output.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    if d < 1:
        raise ValueError("d must be at least 1")
    per_path = grid.n_steps * d
    chunks = [(p, min(p + _CHUNK_PATHS, n_paths)) for p in range(0, n_paths, _CHUNK_PATHS)]

    def draw(bounds):
        lo, hi = bounds
        return _philox_normals(seed, lo * per_path, (hi - lo) * per_path)

    if workers > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(draw, chunks))
    else:
        parts = [draw(c) for c in chunks]
    z = np.concatenate(parts).reshape(n_paths, grid.n_steps, d)
    increments = z * np.sqrt(grid.step)
    brownian = np.zeros((n_paths, grid.n_steps + 1, d))
    np.cumsum(increments, axis=1, out=brownian[:, 1:, :])
    increments.setflags(write=False)
    brownian.setflags(write=False)
    return PathEnsemble(grid, n_paths, d, int(seed), increments, brownian)


# ---------------------------------------------------------------------------
# running loss


LOSS_KINDS = ("linear_shift", "exponential", "cubic_shift", "custom_table")


@dataclass(frozen=True)
class LossSpec:
    """Running loss ``l(t, y)`` with its declared regularity constants.

    Parameters per kind (``c(t) = c + c_slope * t``, likewise ``b(t)``):

    * ``linear_shift``: ``y - c(t)``
    * ``exponential``: ``exp(a * y) - b(t)``, needs an explicit ``y_max``
    * ``cubic_shift``: ``(y - c(t)) ** 3``
    * ``custom_table``: monotone PCHIP through ``knots``/``values``, extended
      linearly with the secant slopes of the end intervals
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    kappa: float = 2.0
    C: float = 1.0
    L_growth: float = 1.0
    y_max: float = 10.0
    y_max_declared: bool = False

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "custom_table":
            knots = np.asarray(self.params["knots"], dtype=float)
            values = np.asarray(self.params["values"], dtype=float)
            if knots.ndim != 1 or knots.shape != values.shape or len(knots) < 2:
                raise ValueError("custom_table needs matching 1-d knots and values")
            if np.any(np.diff(knots) <= 0):
                raise ValueError("custom_table knots must be strictly increasing")
            if np.any(np.diff(values) <= 0):
                raise ValueError("custom_table values must be strictly increasing")
            spline = PchipInterpolator(knots, values, extrapolate=False)
            # end secants, not PCHIP end derivatives, which can vanish
            steps = np.diff(values) / np.diff(knots)
            slopes = steps[[0, -1]]
            object.__setattr__(self, "_table", (knots, values, spline, slopes))

    def _shift(self, name: str, t) -> Any:
        return float(self.params.get(name, 0.0)) + float(self.params.get(name + "_slope", 0.0)) * t

    @property
    def scale(self) -> float:
        """Magnitude of the shift parameter (used to scale the bisection tolerance)."""
        return abs(float(self.params.get("c", self.params.get("b", 0.0))))

    def value(self, t: float, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "linear_shift":
            return y - self._shift("c", t)
        if self.kind == "cubic_shift":
            return (y - self._shift("c", t)) ** 3
        if self.kind == "exponential":
            return np.exp(float(self.params["a"]) * y) - self._shift("b", t)
        knots, values, spline, slopes = self._table
        out = spline(y)
        lo, hi = y < knots[0], y > knots[-1]
        out = np.where(lo, values[0] + slopes[0] * (y - knots[0]), out)
        return np.where(hi, values[-1] + slopes[1] * (y - knots[-1]), out)

    def probe_mesh(self) -> np.ndarray:
        return np.linspace(-self.y_max, self.y_max, 101)


# ---------------------------------------------------------------------------
# driver


DRIVER_REGIMES = ("lipschitz", "quadratic_bounded", "quadratic_unbounded")


@dataclass(frozen=True)
class DriverSpec:
    """Driver ``f(t, y, law, z) = a0 + a_y y + a_mean mean(law) + a_w1 W1(law, delta_0) + g(z)``.

    ``g`` is ``b . z`` (``z_kind="linear"``), ``+-(gamma_z/2)|z|^2``
    (``z_kind="quadratic"``, sign from ``concave``) or zero (``"none"``).
    ``lam``, ``beta``, ``gamma`` and ``alpha_bound`` are the declared constants.
    """

    regime: str = "lipschitz"
    a0: float = 0.0
    a_y: float = 0.0
    a_mean: float = 0.0
    a_w1: float = 0.0
    z_kind: str = "none"
    b: tuple = ()
    gamma_z: float = 0.0
    concave: bool = False
    lam: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    alpha_bound: float | None = None

    def __post_init__(self):
        if self.regime not in DRIVER_REGIMES:
            raise ValueError(f"unknown driver regime {self.regime!r}")
        if self.z_kind not in ("none", "linear", "quadratic"):
            raise ValueError(f"unknown z_part kind {self.z_kind!r}")

    @property
    def reads_state(self) -> bool:
        """Whether the driver depends on the frozen process or its law at all."""
        return any(v != 0.0 for v in (self.a_y, self.a_mean, self.a_w1))

    @property
    def z_cap(self) -> float:
        return 20.0 / self.gamma_z if self.z_kind == "quadratic" else np.inf

    def z_part(self, z: np.ndarray) -> tuple[np.ndarray, int]:
        """Evaluate ``g(z)`` row-wise; returns values and the clamp count."""
        if self.z_kind == "none":
            return np.zeros(z.shape[0]), 0
        if self.z_kind == "linear":
            b = np.broadcast_to(np.asarray(self.b, dtype=float), (z.shape[1],))
            out = np.zeros(z.shape[0])
            for k in range(z.shape[1]):
                out += b[k] * z[:, k]
            return out, 0
        sq = np.sum(z * z, axis=1)
        cap = self.z_cap
        clamped = sq > cap * cap
        sq = np.where(clamped, cap * cap, sq)
        sign = -1.0 if self.concave else 1.0
        return sign * 0.5 * self.gamma_z * sq, int(np.count_nonzero(clamped))

    def state_part(self, t, y, mean: float, w1_dirac: float):
        return self.a0 + self.a_y * np.asarray(y, dtype=float) + self.a_mean * mean + self.a_w1 * w1_dirac

    def evaluate(self, t, y, mean, w1_dirac, z) -> tuple[np.ndarray, int]:
        gz, clamps = self.z_part(np.atleast_2d(z))
        return self.state_part(t, y, mean, w1_dirac) + gz, clamps


# ---------------------------------------------------------------------------
# terminal condition


TERMINAL_KINDS = ("identity", "clipped", "exp", "polynomial")


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal value ``xi = g(B_T)`` on the first Brownian coordinate.

    * ``identity``: ``shift + scale * B``
    * ``clipped``: ``clip(shift + scale * B, lo, hi)`` (either bound may be null)
    * ``exp``: ``exp(sigma * B)``
    * ``polynomial``: ``sum_k coeffs[k] * B**k``
    """

    kind: str = "identity"
    params: Mapping[str, Any] = field(default_factory=dict)
    bounded: bool = False
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in TERMINAL_KINDS:
            raise ValueError(f"unknown terminal kind {self.kind!r}")

    def apply(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        prm = self.params
        if self.kind in ("identity", "clipped"):
            out = float(prm.get("shift", 0.0)) + float(prm.get("scale", 1.0)) * b
            if self.kind == "clipped":
                lo, hi = prm.get("lo"), prm.get("hi")
                out = np.clip(out, -np.inf if lo is None else lo, np.inf if hi is None else hi)
            return out
        if self.kind == "exp":
            return np.exp(float(prm.get("sigma", 1.0)) * b)
        return np.polynomial.polynomial.polyval(b, np.asarray(prm.get("coeffs", [0.0]), dtype=float))

    def samples(self, paths: PathEnsemble) -> np.ndarray:
        return self.apply(paths.terminal[:, 0])

    @property
    def is_bounded(self) -> bool:
        """Structural boundedness, independent of the declared flag."""
        if self.kind == "clipped":
            return self.params.get("lo") is not None and self.params.get("hi") is not None
        if self.kind == "polynomial":
            coeffs = np.trim_zeros(np.asarray(self.params.get("coeffs", [0.0]), dtype=float), "b")
            return len(coeffs) <= 1
        return False


# ---------------------------------------------------------------------------
# solution container


@dataclass(frozen=True)
class MrbsdeSolution:
    """The triple ``(Y, Z, K)`` on a path ensemble.

    ``Y`` has shape ``(n_paths, n_steps + 1)``, ``Z`` ``(n_paths, n_steps, d)``,
    ``K`` ``(n_steps + 1,)``.  ``shift`` is the deterministic amount added to the
    unreflected inner solution at each grid time, i.e. ``Y = y + shift``.
    """

    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    shift: np.ndarray
    iterations: int = 0
    picard_residuals: tuple = ()
    diagnostics: dict = field(default_factory=dict)
    clamp_count: int = 0
    windows: tuple = ()

    def __post_init__(self):
        if self.K.size and self.K[0] != 0.0:
            raise ValueError("K must start at 0")
        if np.any(np.diff(self.K) < -1e-12):
            raise ValueError("K must be non-decreasing")
        if any(r < 0 for r in self.picard_residuals):
            raise ValueError("Picard residuals must be non-negative")

    @property
    def y_inner(self) -> np.ndarray:
        return self.Y - self.shift[None, :]


# ---------------------------------------------------------------------------
# scenario and validation


@dataclass(frozen=True)
class PicardConfig:
    max_iter: int = 50
    tol: float = 1e-9
    h_override: float | None = None
    theta_diagnostics: bool = False
    theta: float = 0.9


@dataclass(frozen=True)
class Tolerances:
    feas_tol: float | None = None
    bisect_tol: float | None = None
    flatoff_tol: float | None = None


@dataclass(frozen=True)
class Scenario:
    grid: TimeGrid
    n_paths: int
    d: int
    seed: int
    loss: LossSpec
    driver: DriverSpec
    terminal: TerminalSpec
    picard: PicardConfig = PicardConfig()
    tolerances: Tolerances = Tolerances()
    degree: int = 3
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @property
    def bisect_tol(self) -> float:
        if self.tolerances.bisect_tol is not None:
            return float(self.tolerances.bisect_tol)
        return 1e-8 * (1.0 + self.loss.scale)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Scenario":
        doc = copy.deepcopy(dict(doc))
        g, p = doc["grid"], doc.get("paths", {})
        lo = doc["loss"]
        loss = LossSpec(
            kind=lo["kind"], params=dict(lo.get("params", {})),
            kappa=float(lo.get("kappa", 2.0)), C=float(lo.get("C", 1.0)),
            L_growth=float(lo.get("L_growth", 1.0)),
            y_max=float(lo.get("y_max", 10.0)), y_max_declared="y_max" in lo,
        )
        dr = doc.get("driver", {})
        aff, zp = dr.get("affine", {}), dr.get("z_part", {"kind": "none"})
        b = zp.get("b", ())
        driver = DriverSpec(
            regime=dr.get("regime", "lipschitz"),
            a0=float(aff.get("a0", 0.0)), a_y=float(aff.get("a_y", 0.0)),
            a_mean=float(aff.get("a_mean", 0.0)), a_w1=float(aff.get("a_w1", 0.0)),
            z_kind=zp.get("kind", "none"),
            b=tuple(np.atleast_1d(np.asarray(b, dtype=float)).tolist()),
            gamma_z=float(zp.get("gamma", 0.0)), concave=bool(zp.get("concave", False)),
            lam=float(dr.get("lambda", 0.0)), beta=float(dr.get("beta", 0.0)),
            gamma=float(dr.get("gamma", zp.get("gamma", 0.0))),
            alpha_bound=dr.get("alpha_bound"),
        )
        te = doc.get("terminal", {"kind": "identity"})
        terminal = TerminalSpec(kind=te.get("kind", "identity"), params=dict(te.get("params", {})),
                                bounded=bool(te.get("bounded", False)), p=float(te.get("p", 2.0)))
        pc = doc.get("picard", {})
        picard = PicardConfig(max_iter=int(pc.get("max_iter", 50)), tol=float(pc.get("tol", 1e-9)),
                              h_override=pc.get("h_override"),
                              theta_diagnostics=bool(pc.get("theta_diagnostics", False)),
                              theta=float(pc.get("theta", 0.9)))
        tl = doc.get("tolerances", {})
        tols = Tolerances(**{k: tl.get(k) for k in ("feas_tol", "bisect_tol", "flatoff_tol")})
        return cls(
            grid=TimeGrid(float(g["T"]), int(g["n_steps"])),
            n_paths=int(p.get("n_paths", 10_000)), d=int(p.get("d", 1)), seed=int(p.get("seed", 0)),
            loss=loss, driver=driver, terminal=terminal, picard=picard, tolerances=tols,
            degree=int(doc.get("regression", {}).get("degree", 3)), raw=doc,
        )

    @classmethod
    def load(cls, path, overrides: Mapping[str, Any] | None = None) -> "Scenario":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(apply_overrides(doc, overrides or {}))

    def with_overrides(self, overrides: Mapping[str, Any]) -> "Scenario":
        return Scenario.from_dict(apply_overrides(self.raw, overrides))

    @property
    def digest(self) -> str:
        return scenario_digest(self.raw)


def scenario_digest(doc: Mapping[str, Any]) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode()).hexdigest()


def parse_override(text: str) -> tuple[str, Any]:
    """Parse ``key.path=value``; the value is read as JSON when possible."""
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ValueError(f"override must look like key=value, got {text!r}")
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


def apply_overrides(doc: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict:
    out = copy.deepcopy(dict(doc))
    for dotted, value in overrides.items():
        node = out
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return out


@dataclass(frozen=True)
class Check:
    name: str
    assumption: str
    passed: bool
    margin: float
    detail: str = ""
    mandatory: bool = True


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]
    y_range: tuple[float, float]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.mandatory)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if c.mandatory and not c.passed]

    def raise_if_failed(self) -> None:
        bad = self.failures()
        if bad:
            first = bad[0]
            raise ScenarioError(first.assumption, f"{first.name} failed ({first.detail})")

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "y_range": list(self.y_range),
            "checks": [c.__dict__ for c in self.checks],
        }


def _probe_laws(rng: np.random.Generator, n_pairs: int, size: int = 16):
    for _ in range(n_pairs):
        a = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 2.0), size)
        b = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 2.0), size)
        yield EmpiricalLaw(a), EmpiricalLaw(b)


def _driver_checks(driver: DriverSpec, terminal: TerminalSpec, d: int) -> list[Check]:
    checks: list[Check] = []
    rng = np.random.default_rng(12345)
    n_probe = 200
    worst_lip = 0.0
    worst_state = 0.0
    for ea, eb in _probe_laws(rng, n_probe):
        y1, y2 = rng.normal(0, 3, 2)
        z1, z2 = rng.normal(0, 2, (2, d))
        s1, s2 = law_stats(ea), law_stats(eb)
        dist = w1(ea, eb)
        f1 = driver.state_part(0.0, y1, s1["mean"], s1["w1_to_dirac0"])
        f2 = driver.state_part(0.0, y2, s2["mean"], s2["w1_to_dirac0"])
        state_gap = float(abs(f1 - f2))
        worst_state = max(worst_state, state_gap / (abs(y1 - y2) + dist))
        if driver.z_kind != "quadratic":
            g1, _ = driver.z_part(z1[None, :])
            g2, _ = driver.z_part(z2[None, :])
            full_gap = float(abs(f1 + g1[0] - f2 - g2[0]))
            worst_lip = max(worst_lip, full_gap / (abs(y1 - y2) + dist + np.linalg.norm(z1 - z2)))

    if driver.regime == "lipschitz":
        ok_kind = driver.z_kind in ("none", "linear")
        checks.append(Check("driver_z_linear", "(H2)", ok_kind, 0.0 if ok_kind else -1.0,
                            f"z_part kind {driver.z_kind}"))
        checks.append(Check("driver_lipschitz", "(H2)", worst_lip <= driver.lam * (1 + 1e-12),
                            driver.lam - worst_lip, f"measured ratio {worst_lip:.6g} vs lambda {driver.lam:.6g}"))
    else:
        ok_kind = driver.z_kind == "quadratic" and driver.gamma_z > 0
        tag = "(H2')" if driver.regime == "quadratic_bounded" else "(H2'')"
        checks.append(Check("driver_z_quadratic", tag, ok_kind, 0.0 if ok_kind else -1.0,
                            f"z_part kind {driver.z_kind}, gamma {driver.gamma_z}"))
        checks.append(Check("driver_state_lipschitz", tag, worst_state <= driver.beta * (1 + 1e-12),
                            driver.beta - worst_state,
                            f"measured ratio {worst_state:.6g} vs beta {driver.beta:.6g}"))
        checks.append(Check("driver_gamma", tag, driver.gamma >= driver.gamma_z > 0,
                            driver.gamma - driver.gamma_z,
                            f"declared gamma {driver.gamma} vs quadratic coefficient {driver.gamma_z}"))
        if driver.regime == "quadratic_bounded":
            bounded = terminal.bounded and terminal.is_bounded
            checks.append(Check("terminal_bounded", "(H1')", bounded, 0.0 if bounded else -1.0,
                                f"declared {terminal.bounded}, structural {terminal.is_bounded}"))
        else:
            alpha = driver.alpha_bound
            ok = alpha is not None and float(alpha) >= abs(driver.a0)
            checks.append(Check("driver_alpha_bound", "(H2'')", ok,
                                (float(alpha) - abs(driver.a0)) if alpha is not None else -1.0,
                                f"alpha bound {alpha} vs |a0| {abs(driver.a0)}"))
    return checks


def validate_scenario(loss: LossSpec, driver: DriverSpec, terminal: TerminalSpec, grid: TimeGrid,
                      xi_samples: np.ndarray | None = None, feas_tol: float | None = None,
                      d: int = 1, n_feas: int = 100_000, seed: int = 0) -> ValidationReport:
    """Certify the standing assumptions on a compact probe range.

    ``xi_samples`` feed the terminal feasibility check; when omitted they are
    simulated from ``n_feas`` paths with ``seed``.  ``feas_tol`` defaults to three
    standard errors of the feasibility estimator.
    """
    checks: list[Check] = []
    mesh = loss.probe_mesh()
    times = grid.times
    values = np.stack([loss.value(t, mesh) for t in times])  # (n_t, 101)

    if loss.kind == "exponential" and not loss.y_max_declared:
        checks.append(Check("certified_range", "(H4)", False, -1.0,
                            "exponential loss needs an explicit y_max"))

    steps = np.diff(values, axis=1)
    checks.append(Check("monotone", "(H3)", bool(np.all(steps > 0)), float(steps.min()),
                        "strict increase on the probe mesh"))

    growth = loss.L_growth * (1 + np.abs(mesh))[None, :] - np.abs(values)
    checks.append(Check("linear_growth", "(H3)", bool(np.all(growth >= 0)), float(growth.min()),
                        f"|l| <= {loss.L_growth}(1+|y|)"))

    at_top = values[:, -1]
    checks.append(Check("eventually_positive", "(H3)", bool(np.all(at_top > 0)), float(at_top.min()),
                        f"l(t, {loss.y_max}) > 0"))

    i, j = np.triu_indices(len(mesh), k=1)
    ratios = np.abs(values[:, j] - values[:, i]) / (mesh[j] - mesh[i])[None, :]
    lo_ratio, hi_ratio = float(ratios.min()), float(ratios.max())
    ok_lo = loss.C <= lo_ratio * (1 + 1e-12)
    ok_hi = hi_ratio <= loss.kappa * loss.C * (1 + 1e-12)
    checks.append(Check("sandwich_lower", "(H4)", ok_lo, lo_ratio - loss.C,
                        f"min probe ratio {lo_ratio:.6g} vs C {loss.C:.6g}"))
    checks.append(Check("sandwich_upper", "(H4)", ok_hi and loss.kappa >= 1, loss.kappa * loss.C - hi_ratio,
                        f"max probe ratio {hi_ratio:.6g} vs kappa*C {loss.kappa * loss.C:.6g}"))

    if xi_samples is None:
        xi_samples = terminal.samples(simulate_paths(grid, n_feas, d, seed))
    lt = loss.value(grid.horizon, xi_samples)
    mean_lt = float(path_mean(lt))
    tol = 3.0 * float(path_std_error(lt)) if feas_tol is None else float(feas_tol)
    checks.append(Check("terminal_feasible", "(H1)", mean_lt >= -tol, mean_lt + tol,
                        f"E[l(T, xi)] = {mean_lt:.6g}, tolerance {tol:.3g}"))
    if terminal.kind == "exp" and driver.regime != "lipschitz":
        checks.append(Check("terminal_exp_moments", "(H1'')", False, -1.0,
                            "exp terminal has no exponential moments"))

    checks.extend(_driver_checks(driver, terminal, d))
    return ValidationReport(tuple(checks), (-loss.y_max, loss.y_max))


def validate(scenario: Scenario, xi_samples: np.ndarray | None = None) -> ValidationReport:
    return validate_scenario(scenario.loss, scenario.driver, scenario.terminal, scenario.grid,
                             xi_samples=xi_samples, feas_tol=scenario.tolerances.feas_tol,
                             d=scenario.d, seed=scenario.seed)
