"""Problem data on a uniform time grid and validation of the standing hypotheses.

Every time-dependent coefficient is piecewise constant on the master grid and is
stored as an array whose leading axis indexes grid intervals ``[s_i, s_{i+1})``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import HypothesisViolated, OutOfDomain, ShapeMismatch

DEFAULT_TOL_PSD = 1e-9
DEFAULT_TOL_RANGE = 1e-8

# name -> shape template; "n"/"m" are substituted per problem
COEFFICIENT_SHAPES: dict[str, tuple[str, ...]] = {
    "A": ("n", "n"),
    "B": ("n", "m"),
    "C": ("n", "n"),
    "D": ("n", "m"),
    "b": ("n",),
    "sigma": ("n",),
    "E": (),
    "F": (),
    "Q": ("n", "n"),
    "S": ("m", "n"),
    "R": ("m", "m"),
    "q": ("n",),
    "r": ("m",),
}


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"t_start={self.t_start} must be < t_end={self.t_end}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t_start + self.h * np.arange(self.n_steps + 1)

    def interval_index(self, s: float) -> int:
        """Index of the interval containing ``s``; ``t_end`` maps to the last one."""
        if s < self.t_start or s > self.t_end:
            raise OutOfDomain(f"s={s} outside [{self.t_start}, {self.t_end}]")
        i = int(np.floor((s - self.t_start) / self.h))
        return min(max(i, 0), self.n_steps - 1)

    def refined(self, n_steps: int) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_end, n_steps)


def coefficient_at(path: np.ndarray, grid: TimeGrid, s: float) -> np.ndarray:
    """Value of a piecewise-constant path at time ``s`` (right endpoint -> last interval)."""
    path = np.asarray(path)
    if path.shape[0] != grid.n_steps:
        raise ShapeMismatch(f"path has {path.shape[0]} intervals, grid has {grid.n_steps}")
    return path[grid.interval_index(s)]


def _expand(name: str, value: Any, shape: tuple[int, ...], n_steps: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    size = int(np.prod(shape))
    if arr.size == size and arr.ndim <= len(shape) and arr.shape != shape:
        arr = arr.reshape(shape)  # scalars for 1x1 data, flat vectors
    elif arr.ndim == 1 and arr.size == n_steps and size == 1:
        arr = arr.reshape((n_steps, *shape))  # scalar path
    if arr.shape == shape:
        out = np.broadcast_to(arr, (n_steps, *shape)).copy()
    elif arr.shape == (n_steps, *shape):
        out = arr.copy()
    else:
        raise ShapeMismatch(
            f"{name}: expected shape {shape} (constant) or {(n_steps, *shape)} (path), got {arr.shape}"
        )
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Raw problem data. Paths have a leading interval axis of length ``grid.n_steps``."""

    n: int
    m: int
    grid: TimeGrid
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    E: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    q: np.ndarray
    r: np.ndarray
    G: np.ndarray
    g: np.ndarray

    @classmethod
    def build(cls, n: int, m: int, grid: TimeGrid, G=None, g=None, **coefficients) -> "ProblemSpec":
        """Build from constants and/or per-interval arrays; omitted entries are zero."""
        unknown = set(coefficients) - set(COEFFICIENT_SHAPES)
        if unknown:
            raise ValueError(f"unknown coefficients: {sorted(unknown)}")
        dims = {"n": n, "m": m}
        paths = {}
        for name, template in COEFFICIENT_SHAPES.items():
            shape = tuple(dims[d] for d in template)
            value = coefficients.get(name)
            if value is None:
                value = np.zeros(shape)
            paths[name] = _expand(name, value, shape, grid.n_steps)
        G = np.zeros((n, n)) if G is None else np.asarray(G, dtype=float)
        g = np.zeros(n) if g is None else np.asarray(g, dtype=float)
        if G.shape != (n, n) and G.size == n * n:
            G = G.reshape(n, n)
        if g.shape != (n,) and g.size == n:
            g = g.reshape(n)
        spec = cls(n=n, m=m, grid=grid, G=G.copy(), g=g.copy(), **paths)
        spec.check_shapes()
        return spec

    def check_shapes(self) -> None:
        N = self.grid.n_steps
        dims = {"n": self.n, "m": self.m}
        for name, template in COEFFICIENT_SHAPES.items():
            want = (N, *(dims[d] for d in template))
            got = np.shape(getattr(self, name))
            if got != want:
                raise ShapeMismatch(f"{name}: expected {want}, got {got}")
        if np.shape(self.G) != (self.n, self.n):
            raise ShapeMismatch(f"G: expected {(self.n, self.n)}, got {np.shape(self.G)}")
        if np.shape(self.g) != (self.n,):
            raise ShapeMismatch(f"g: expected {(self.n,)}, got {np.shape(self.g)}")

    def coefficients(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in COEFFICIENT_SHAPES}

    def replace(self, **changes) -> "ProblemSpec":
        """Copy as a plain ProblemSpec with some coefficient paths replaced (constants allowed)."""
        data = {k: np.array(v, copy=True) for k, v in self.coefficients().items()}
        N = self.grid.n_steps
        dims = {"n": self.n, "m": self.m}
        for name, value in changes.items():
            if name in ("G", "g"):
                data[name] = np.asarray(value, dtype=float)
                continue
            shape = tuple(dims[d] for d in COEFFICIENT_SHAPES[name])
            data[name] = _expand(name, value, shape, N)
        data.setdefault("G", np.array(self.G, copy=True))
        data.setdefault("g", np.array(self.g, copy=True))
        return ProblemSpec(n=self.n, m=self.m, grid=self.grid, **data)

    def regrid(self, n_steps: int) -> "ProblemSpec":
        """Resample every path onto a uniform grid with ``n_steps`` intervals (midpoint lookup)."""
        new = self.grid.refined(n_steps)
        mids = new.nodes[:-1] + 0.5 * new.h
        idx = np.array([self.grid.interval_index(s) for s in mids])
        data = {k: np.array(v)[idx] for k, v in self.coefficients().items()}
        return ProblemSpec(n=self.n, m=self.m, grid=new, G=np.array(self.G), g=np.array(self.g), **data)

    # --- JSON -----------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ProblemSpec":
        try:
            n, m = int(doc["n"]), int(doc["m"])
            gdoc = doc["grid"]
            grid = TimeGrid(float(gdoc["t0"]), float(gdoc["T"]), int(gdoc["steps"]))
        except KeyError as exc:
            raise ShapeMismatch(f"problem file missing key {exc}") from None
        coefficients = dict(doc.get("coefficients", {}))
        return cls.build(n, m, grid, G=doc.get("G"), g=doc.get("g"), **coefficients)

    def to_dict(self) -> dict[str, Any]:
        coefficients = {}
        for name, path in self.coefficients().items():
            arr = np.asarray(path)
            coefficients[name] = arr[0].tolist() if np.all(arr == arr[0]) else arr.tolist()
        return {
            "n": self.n,
            "m": self.m,
            "grid": {"t0": self.grid.t_start, "T": self.grid.t_end, "steps": self.grid.n_steps},
            "coefficients": coefficients,
            "G": np.asarray(self.G).tolist(),
            "g": np.asarray(self.g).tolist(),
        }


def load_problem(path: str | Path) -> tuple[ProblemSpec, np.ndarray | None]:
    """Read a problem file. Returns the spec and the optional initial state ``x``."""
    doc = json.loads(Path(path).read_text())
    spec = ProblemSpec.from_dict(doc)
    x = doc.get("x")
    return spec, (None if x is None else np.asarray(x, dtype=float))


def save_problem(spec: ProblemSpec, path: str | Path, x=None) -> None:
    doc = spec.to_dict()
    if x is not None:
        doc["x"] = np.asarray(x, dtype=float).tolist()
    Path(path).write_text(json.dumps(doc, indent=1))


# --- validation ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ValidationReport:
    tol_psd: float
    tol_range: float
    G_psd: bool
    g_in_range_G: bool
    Q_psd: np.ndarray
    R_pd: np.ndarray
    block_psd: np.ndarray
    qr_in_range: np.ndarray
    allow_psd_R: bool = False

    @property
    def h3(self) -> bool:
        return bool(self.G_psd and self.Q_psd.all() and self.R_pd.all())

    @property
    def h4(self) -> bool:
        return bool(self.G_psd and self.g_in_range_G and self.block_psd.all() and self.qr_in_range.all())

    @property
    def ok(self) -> bool:
        return self.h3 and self.h4

    def failures(self) -> list[tuple[str, int | None, str]]:
        out: list[tuple[str, int | None, str]] = []
        if not self.G_psd:
            out.append(("H3", None, "G is not positive semidefinite"))
        for label, flags, msg in (
            ("H3", self.Q_psd, "Q not positive semidefinite"),
            ("H3", self.R_pd, "R not positive definite" if not self.allow_psd_R else "R not positive semidefinite"),
            ("H4", self.block_psd, "block [[Q,S^T],[S,R]] not positive semidefinite"),
            ("H4", self.qr_in_range, "(q, r) not in range of [[Q,S^T],[S,R]]"),
        ):
            bad = np.flatnonzero(~flags)
            if bad.size:
                out.append((label, int(bad[0]), msg))
        if not self.g_in_range_G:
            out.append(("H4", None, "g not in range of G"))
        return out

    def summary(self) -> dict[str, Any]:
        return {
            "H3": self.h3,
            "H4": self.h4,
            "G_psd": self.G_psd,
            "g_in_range_G": self.g_in_range_G,
            "Q_psd_all": bool(self.Q_psd.all()),
            "R_pd_all": bool(self.R_pd.all()),
            "block_psd_all": bool(self.block_psd.all()),
            "qr_in_range_all": bool(self.qr_in_range.all()),
            "tol_psd": self.tol_psd,
            "tol_range": self.tol_range,
            "failures": [list(f) for f in self.failures()],
        }


@dataclass(frozen=True, eq=False)
class ValidatedProblem(ProblemSpec):
    """Immutable solver input: symmetrized data plus the hypothesis report."""

    report: ValidationReport = field(default=None)  # type: ignore[assignment]

    @property
    def h(self) -> float:
        return self.grid.h


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def in_range(M: np.ndarray, x: np.ndarray, tol: float) -> bool:
    """``x`` (vector or matrix columns) lies in the column space of ``M``."""
    M = np.atleast_2d(M)
    proj = M @ np.linalg.pinv(M)
    x = np.asarray(x, dtype=float)
    resid = x - proj @ x
    return bool(np.linalg.norm(resid) <= tol * (1.0 + np.linalg.norm(x)))


def validate_problem(
    spec: ProblemSpec,
    tol_psd: float = DEFAULT_TOL_PSD,
    tol_range: float = DEFAULT_TOL_RANGE,
    allow_violations: bool = False,
    allow_psd_R: bool = False,
) -> ValidatedProblem:
    """Check (H3)/(H4) node by node and freeze the data.

    Raises ``HypothesisViolated`` on the first failing hypothesis unless
    ``allow_violations`` is set, in which case the flags are only recorded.
    """
    spec.check_shapes()
    data = {k: np.array(v, dtype=float, copy=True) for k, v in spec.coefficients().items()}
    data["Q"] = _sym(data["Q"])
    data["R"] = _sym(data["R"])
    G = _sym(np.array(spec.G, dtype=float))
    g = np.array(spec.g, dtype=float)

    G_psd = bool(np.linalg.eigvalsh(G).min() >= -tol_psd)
    g_ok = in_range(G, g, tol_range)

    Q_min = np.linalg.eigvalsh(data["Q"]).min(axis=1)
    R_min = np.linalg.eigvalsh(data["R"]).min(axis=1)
    block = np.block([[data["Q"], np.swapaxes(data["S"], 1, 2)], [data["S"], data["R"]]])
    block = _sym(block)
    block_min = np.linalg.eigvalsh(block).min(axis=1)
    qr = np.concatenate([data["q"], data["r"]], axis=1)
    # batched version of in_range over all intervals
    resid = qr - np.einsum("kij,kj->ki", block @ np.linalg.pinv(block, hermitian=True), qr)
    qr_ok = np.linalg.norm(resid, axis=1) <= tol_range * (1.0 + np.linalg.norm(qr, axis=1))

    report = ValidationReport(
        tol_psd=tol_psd,
        tol_range=tol_range,
        G_psd=G_psd,
        g_in_range_G=g_ok,
        Q_psd=Q_min >= -tol_psd,
        R_pd=(R_min >= -tol_psd) if allow_psd_R else (R_min >= tol_psd),
        block_psd=block_min >= -tol_psd,
        qr_in_range=qr_ok,
        allow_psd_R=allow_psd_R,
    )
    if not allow_violations:
        fails = report.failures()
        if fails:
            raise HypothesisViolated(*fails[0])

    for arr in (*data.values(), G, g):
        arr.setflags(write=False)
    return ValidatedProblem(n=spec.n, m=spec.m, grid=spec.grid, G=G, g=g, report=report, **data)


def node_index(problem: ProblemSpec, k: int) -> int:
    """Interval whose coefficients apply at grid node ``k`` (node N uses the last interval)."""
    return min(k, problem.grid.n_steps - 1)
