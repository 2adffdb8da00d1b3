"""
Embedded second-order cone solver.

Solves problems of the form::

    minimize    cᵀx
    subject to  G x + s = h,   s ∈ K

where ``K`` is a product of nonnegative orthants and second-order cones
``{(u0, u1) : u0 ≥ ‖u1‖}``. The method is a primal-dual path-following interior-point method
on the homogeneous self-dual embedding with Nesterov-Todd scaling and Mehrotra
predictor-corrector steps. Newton systems are reduced to normal equations
``Gᵀ W⁻² G dx = r`` with a small static regularization; the scaled ``G`` is assembled with
scipy sparse matrices.

Larger programs whose constraint rows are sparse apart from a few dense cone blocks (the
maneuver subproblems: one small cone per impulse plus the b-plane rows) are factored as a
sparse LU of the sparse rows with a Woodbury correction for the dense ones. The row split is
computed once per program and reused by every iteration. Everything else is factored densely.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Protocol, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg, sparse
from scipy.sparse import linalg as sparse_linalg

from convex_cam.exceptions import DimensionMismatchError
from convex_cam.logging import get_logger
from convex_cam.settings import get_settings

__all__ = [
    "ConeBlock",
    "ConeKind",
    "ConeProgram",
    "ConeSolution",
    "ConeSolver",
    "ConeSpec",
    "SolverResiduals",
    "SolverSettings",
    "SolverStatus",
    "solve",
]

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]
IndexArray = NDArray[np.int_]
Matrix = Union[FloatArray, sparse.spmatrix]

_STRUCTURED_MIN_VARIABLES = 64
_DENSE_ROW_FRACTION = 0.25


class ConeKind(str, Enum):
    NONNEGATIVE = "nonnegative"
    SECOND_ORDER = "second_order"


class SolverStatus(str, Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class ConeBlock:
    kind: ConeKind
    dim: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise DimensionMismatchError(f"cone blocks need at least one coordinate, got {self.dim}")
        if self.kind == ConeKind.SECOND_ORDER and self.dim < 2:
            raise DimensionMismatchError("second-order cones need at least two coordinates")

    @classmethod
    def nonnegative(cls, dim: int) -> "ConeBlock":
        return cls(ConeKind.NONNEGATIVE, dim)

    @classmethod
    def second_order(cls, dim: int) -> "ConeBlock":
        return cls(ConeKind.SECOND_ORDER, dim)


@dataclass(frozen=True)
class ConeSpec:
    """Ordered product of cone blocks; block ``k`` owns the next ``dim`` slack coordinates."""

    blocks: tuple[ConeBlock, ...]

    @classmethod
    def of(cls, *blocks: ConeBlock) -> "ConeSpec":
        return cls(tuple(blocks))

    @property
    def dim(self) -> int:
        return sum(block.dim for block in self.blocks)

    @property
    def degree(self) -> int:
        """Barrier degree: one per nonnegative coordinate, one per second-order block."""
        return sum(block.dim if block.kind == ConeKind.NONNEGATIVE else 1 for block in self.blocks)

    def count(self, kind: ConeKind) -> int:
        return sum(1 for block in self.blocks if block.kind == kind)

    def contains(self, u: ArrayLike, tol: float = 0.0) -> bool:
        """Membership test of a slack or dual vector, with slack ``tol``."""
        vector = np.asarray(u, dtype=float)
        offset = 0
        for block in self.blocks:
            part = vector[offset : offset + block.dim]
            offset += block.dim
            if block.kind == ConeKind.NONNEGATIVE:
                if np.any(part < -tol):
                    return False
            elif part[0] - np.linalg.norm(part[1:]) < -tol:
                return False
        return True


@dataclass(frozen=True)
class ConeProgram:
    """
    ``minimize cᵀx subject to G x + s = h, s ∈ cones``.

    ``G`` may be a dense array or any scipy sparse matrix.
    """

    c: FloatArray
    G: Matrix
    h: FloatArray
    cones: ConeSpec

    def __post_init__(self) -> None:
        c = np.asarray(self.c, dtype=float).reshape(-1)
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if sparse.issparse(self.G):
            G = sparse.csr_matrix(self.G, dtype=float)
        else:
            G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if G.shape != (h.size, c.size):
            raise DimensionMismatchError(
                f"G is {G.shape[0]}x{G.shape[1]} but c has {c.size} and h has {h.size} entries"
            )
        if self.cones.dim != h.size:
            raise DimensionMismatchError(f"cones cover {self.cones.dim} slack coordinates, h has {h.size}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "G", G)

    @property
    def n(self) -> int:
        return int(self.c.size)

    @property
    def m(self) -> int:
        return int(self.h.size)


@dataclass(frozen=True)
class SolverResiduals:
    primal: float
    dual: float
    gap: float


@dataclass(frozen=True)
class ConeSolution:
    """
    Solver output. ``y`` is the dual variable of the cone constraint.

    For infeasible statuses ``y`` (primal infeasibility) or ``x`` and ``s`` (dual infeasibility)
    hold the normalized certificate and the remaining vectors are NaN.
    """

    status: SolverStatus
    x: FloatArray
    s: FloatArray
    y: FloatArray
    obj_primal: float
    obj_dual: float
    iterations: int
    residuals: SolverResiduals

    @property
    def is_optimal(self) -> bool:
        return self.status == SolverStatus.OPTIMAL


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    max_iterations: int = 200
    step_fraction: float = 0.99
    regularization: float = 1e-10
    refinement_steps: int = 2

    @classmethod
    def from_settings(cls) -> "SolverSettings":
        settings = get_settings()
        return cls(tol=settings.SOLVER_TOL, max_iterations=settings.SOLVER_MAX_ITERATIONS)


class ConeSolver(Protocol):
    """Anything that solves a [`ConeProgram`][convex_cam.socp.ConeProgram]."""

    def __call__(self, program: ConeProgram, settings: Optional[SolverSettings] = None) -> ConeSolution:
        ...


class _NumericalTrouble(Exception):
    pass


@dataclass(frozen=True)
class _Layout:
    """Index sets of the cone: nonnegative coordinates and second-order blocks grouped by size."""

    lp: IndexArray
    soc: tuple[IndexArray, ...]
    degree: int
    m: int

    @classmethod
    def of(cls, cones: ConeSpec) -> "_Layout":
        lp: list[int] = []
        groups: dict[int, list[list[int]]] = {}
        offset = 0
        for block in cones.blocks:
            indices = list(range(offset, offset + block.dim))
            offset += block.dim
            if block.kind == ConeKind.NONNEGATIVE:
                lp.extend(indices)
            else:
                groups.setdefault(block.dim, []).append(indices)
        soc = tuple(np.array(rows, dtype=int) for _, rows in sorted(groups.items()))
        return cls(np.array(lp, dtype=int), soc, cones.degree, offset)

    def unit(self) -> FloatArray:
        e = np.zeros(self.m)
        e[self.lp] = 1.0
        for idx in self.soc:
            e[idx[:, 0]] = 1.0
        return e

    def product(self, u: FloatArray, v: FloatArray) -> FloatArray:
        """Jordan product ``u ∘ v``."""
        out = np.empty(self.m)
        out[self.lp] = u[self.lp] * v[self.lp]
        for idx in self.soc:
            ub, vb = u[idx], v[idx]
            out[idx[:, 0]] = np.sum(ub * vb, axis=1)
            out[idx[:, 1:]] = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
        return out

    def divide(self, lam: FloatArray, v: FloatArray) -> FloatArray:
        """Solves ``lam ∘ x = v`` for ``x``."""
        out = np.empty(self.m)
        out[self.lp] = v[self.lp] / lam[self.lp]
        for idx in self.soc:
            lb, vb = lam[idx], v[idx]
            l0, l1 = lb[:, 0], lb[:, 1:]
            rho = _lorentz_sq(lb)
            x0 = (l0 * vb[:, 0] - np.sum(l1 * vb[:, 1:], axis=1)) / rho
            out[idx[:, 0]] = x0
            out[idx[:, 1:]] = (vb[:, 1:] - x0[:, None] * l1) / l0[:, None]
        return out

    def shift_to_interior(self, u: FloatArray) -> FloatArray:
        """``u`` if strictly interior, else ``u + (1 + α) e`` with ``α`` the boundary shift."""
        alphas = [float(-np.min(u[self.lp]))] if self.lp.size else []
        for idx in self.soc:
            ub = u[idx]
            alphas.append(float(np.max(np.linalg.norm(ub[:, 1:], axis=1) - ub[:, 0])))
        alpha = max(alphas, default=-1.0)
        if alpha < 0.0:
            return u
        return u + (1.0 + alpha) * self.unit()

    def max_step(self, u: FloatArray, du: FloatArray) -> float:
        """Largest ``α`` with ``u + α du`` in the cone (``inf`` when unbounded)."""
        steps = [math.inf]
        if self.lp.size:
            ul, dl = u[self.lp], du[self.lp]
            mask = dl < 0.0
            if np.any(mask):
                steps.append(float(np.min(-ul[mask] / dl[mask])))
        for idx in self.soc:
            steps.append(_soc_max_step(u[idx], du[idx]))
        return min(steps)


def _lorentz_sq(ub: FloatArray) -> FloatArray:
    norm1 = np.linalg.norm(ub[:, 1:], axis=1)
    return (ub[:, 0] - norm1) * (ub[:, 0] + norm1)  # type: ignore[no-any-return]


def _soc_max_step(ub: FloatArray, db: FloatArray) -> float:
    # (u0 + α d0)² − ‖u1 + α d1‖² = a α² + b α + c, first positive root
    a = db[:, 0] ** 2 - np.sum(db[:, 1:] ** 2, axis=1)
    b = 2.0 * (ub[:, 0] * db[:, 0] - np.sum(ub[:, 1:] * db[:, 1:], axis=1))
    c = np.maximum(_lorentz_sq(ub), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - 4.0 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        q = -0.5 * (b + np.copysign(root, b))
        roots = np.stack([q / a, c / q])
    roots = np.where(np.isfinite(roots) & (roots > 0.0), roots, np.inf)
    roots[:, disc < 0.0] = np.inf
    return float(np.min(roots, initial=math.inf))


@dataclass(frozen=True)
class _RowSplit:
    """Slack coordinates of the sparse cone blocks and of the few dense ones."""

    sparse_rows: IndexArray
    dense_rows: IndexArray

    @classmethod
    def of(cls, G: sparse.csr_matrix, cones: ConeSpec) -> Optional["_RowSplit"]:
        """``None`` when the program is small or has no exploitable structure."""
        n = G.shape[1]
        if n < _STRUCTURED_MIN_VARIABLES:
            return None
        row_counts = np.diff(G.indptr)
        limit = max(8, int(_DENSE_ROW_FRACTION * n))
        dense: list[IndexArray] = []
        light: list[IndexArray] = []
        offset = 0
        for block in cones.blocks:
            rows = np.arange(offset, offset + block.dim)
            offset += block.dim
            heavy = row_counts[rows] > limit
            if block.kind == ConeKind.NONNEGATIVE:
                dense.append(rows[heavy])
                light.append(rows[~heavy])
            elif np.any(heavy):
                # W⁻¹ mixes the rows of a second-order block
                dense.append(rows)
            else:
                light.append(rows)
        empty = np.empty(0, dtype=int)
        dense_rows = np.concatenate([empty, *dense])
        sparse_rows = np.concatenate([empty, *light])
        if dense_rows.size > limit:
            return None
        covered = np.zeros(n, dtype=bool)
        covered[G[sparse_rows].indices] = True
        if not np.all(covered):
            return None
        return cls(sparse_rows, dense_rows)


@dataclass
class _Scaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W⁻¹ s = lam``."""

    layout: _Layout
    lp_w: FloatArray
    soc: list[tuple[FloatArray, FloatArray, FloatArray]] = field(default_factory=list)
    lam: FloatArray = field(default_factory=lambda: np.empty(0))

    @classmethod
    def compute(cls, layout: _Layout, s: FloatArray, z: FloatArray) -> "_Scaling":
        s_lp, z_lp = s[layout.lp], z[layout.lp]
        if np.any(s_lp <= 0.0) or np.any(z_lp <= 0.0):
            raise _NumericalTrouble("iterate left the nonnegative orthant")
        scaling = cls(layout, np.sqrt(s_lp / z_lp))
        for idx in layout.soc:
            sb, zb = s[idx], z[idx]
            s_sq, z_sq = _lorentz_sq(sb), _lorentz_sq(zb)
            if np.any(s_sq <= 0.0) or np.any(z_sq <= 0.0) or np.any(sb[:, 0] <= 0.0) or np.any(zb[:, 0] <= 0.0):
                raise _NumericalTrouble("iterate left a second-order cone")
            sn, zn = np.sqrt(s_sq), np.sqrt(z_sq)
            s_bar, z_bar = sb / sn[:, None], zb / zn[:, None]
            gamma = np.sqrt(0.5 * (1.0 + np.sum(s_bar * z_bar, axis=1)))
            w0 = (s_bar[:, 0] + z_bar[:, 0]) / (2.0 * gamma)
            w1 = (s_bar[:, 1:] - z_bar[:, 1:]) / (2.0 * gamma[:, None])
            scaling.soc.append((np.sqrt(sn / zn), w0, w1))
        scaling.lam = scaling.apply(z)
        return scaling

    @classmethod
    def identity(cls, layout: _Layout) -> "_Scaling":
        scaling = cls(layout, np.ones(layout.lp.size))
        for idx in layout.soc:
            k, p = idx.shape
            scaling.soc.append((np.ones(k), np.ones(k), np.zeros((k, p - 1))))
        return scaling

    def apply(self, v: FloatArray) -> FloatArray:
        out = np.empty_like(v)
        out[self.layout.lp] = self.lp_w * v[self.layout.lp]
        for idx, (eta, w0, w1) in zip(self.layout.soc, self.soc):
            vb = v[idx]
            d = np.sum(w1 * vb[:, 1:], axis=1)
            out[idx[:, 0]] = eta * (w0 * vb[:, 0] + d)
            out[idx[:, 1:]] = eta[:, None] * (vb[:, 1:] + (d / (1.0 + w0) + vb[:, 0])[:, None] * w1)
        return out

    def apply_inverse(self, v: FloatArray) -> FloatArray:
        out = np.empty_like(v)
        out[self.layout.lp] = v[self.layout.lp] / self.lp_w
        for idx, (eta, w0, w1) in zip(self.layout.soc, self.soc):
            vb = v[idx]
            d = np.sum(w1 * vb[:, 1:], axis=1)
            out[idx[:, 0]] = (w0 * vb[:, 0] - d) / eta
            out[idx[:, 1:]] = (vb[:, 1:] + (d / (1.0 + w0) - vb[:, 0])[:, None] * w1) / eta[:, None]
        return out

    def inverse_matrix(self) -> sparse.csr_matrix:
        """``W⁻¹`` as a block-diagonal sparse matrix."""
        layout = self.layout
        rows, cols, values = [layout.lp], [layout.lp], [1.0 / self.lp_w]
        for idx, (eta, w0, w1) in zip(layout.soc, self.soc):
            k, p = idx.shape
            blocks = np.empty((k, p, p))
            blocks[:, 0, 0] = w0
            blocks[:, 0, 1:] = -w1
            blocks[:, 1:, 0] = -w1
            blocks[:, 1:, 1:] = np.eye(p - 1) + w1[:, :, None] * w1[:, None, :] / (1.0 + w0)[:, None, None]
            blocks /= eta[:, None, None]
            rows.append(np.broadcast_to(idx[:, :, None], (k, p, p)).reshape(-1))
            cols.append(np.broadcast_to(idx[:, None, :], (k, p, p)).reshape(-1))
            values.append(blocks.reshape(-1))
        return sparse.csr_matrix(
            (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(layout.m, layout.m)
        )


class _NormalEquations:
    """
    Solves ``[[0, Gᵀ], [G, −W²]] [dx; dz] = [r1; r2]`` through ``Gᵀ W⁻² G``.
    """

    def __init__(
        self, G: sparse.csr_matrix, scaling: _Scaling, settings: SolverSettings, split: Optional[_RowSplit] = None
    ) -> None:
        self.G = G
        self.scaling = scaling
        self.refinement_steps = settings.refinement_steps
        self.Gs = (scaling.inverse_matrix() @ G).tocsr()
        if split is not None:
            try:
                self.normal_solve = self._factor_split(split, settings.regularization)
                return
            except (_NumericalTrouble, linalg.LinAlgError, ValueError) as e:
                logger.debug("structured factorization failed, factoring densely: %s", e)
        self.normal_solve = self._factor_dense(settings.regularization)

    def _factor_dense(self, regularization: float) -> Callable[[FloatArray], FloatArray]:
        normal = (self.Gs.T @ self.Gs).toarray()
        for _ in range(4):
            try:
                factor = linalg.cho_factor(normal + regularization * np.eye(normal.shape[0]))
                break
            except linalg.LinAlgError:
                regularization *= 100.0
        else:
            raise _NumericalTrouble("normal equations are not positive definite")
        return lambda r: linalg.cho_solve(factor, r)  # type: ignore[no-any-return]

    def _factor_split(self, split: _RowSplit, regularization: float) -> Callable[[FloatArray], FloatArray]:
        """``(S + UᵀU)⁻¹`` by Woodbury, ``S`` from the sparse rows and ``U`` the dense ones."""
        light = self.Gs[split.sparse_rows]
        n = self.Gs.shape[1]
        base = (light.T @ light + regularization * sparse.identity(n)).tocsc()
        try:
            lu = sparse_linalg.splu(base)
        except RuntimeError as e:
            raise _NumericalTrouble(f"sparse factorization failed: {e}") from e
        if split.dense_rows.size == 0:
            return lu.solve  # type: ignore[no-any-return]
        U = self.Gs[split.dense_rows].toarray()
        correction = lu.solve(np.asfortranarray(U.T))
        if not np.all(np.isfinite(correction)):
            raise _NumericalTrouble("non-finite sparse solve")
        capacitance = linalg.cho_factor(np.eye(U.shape[0]) + U @ correction)

        def solve_split(r: FloatArray) -> FloatArray:
            y = lu.solve(r)
            return y - correction @ linalg.cho_solve(capacitance, U @ y)  # type: ignore[no-any-return]

        return solve_split

    def _solve_once(self, r1: FloatArray, r2: FloatArray) -> tuple[FloatArray, FloatArray]:
        w_inv_r2 = self.scaling.apply_inverse(r2)
        dx = self.normal_solve(r1 + self.Gs.T @ w_inv_r2)
        dz = self.scaling.apply_inverse(self.Gs @ dx - w_inv_r2)
        return dx, dz

    def solve(self, r1: FloatArray, r2: FloatArray) -> tuple[FloatArray, FloatArray]:
        dx, dz = self._solve_once(r1, r2)
        for _ in range(self.refinement_steps):
            e1 = r1 - self.G.T @ dz
            e2 = r2 - self.G @ dx + self.scaling.apply(self.scaling.apply(dz))
            ddx, ddz = self._solve_once(e1, e2)
            dx, dz = dx + ddx, dz + ddz
        return dx, dz


@dataclass
class _Iterate:
    x: FloatArray
    s: FloatArray
    z: FloatArray
    tau: float
    kappa: float


class _HomogeneousSolver:
    def __init__(self, program: ConeProgram, settings: SolverSettings) -> None:
        self.program = program
        self.settings = settings
        self.c = program.c
        self.h = program.h
        self.G = sparse.csr_matrix(program.G)
        self.layout = _Layout.of(program.cones)
        self.split = _RowSplit.of(self.G, program.cones)
        self.c_scale = max(1.0, float(np.linalg.norm(self.c)))
        self.h_scale = max(1.0, float(np.linalg.norm(self.h)))

    def initial_point(self) -> _Iterate:
        least_squares = _NormalEquations(self.G, _Scaling.identity(self.layout), self.settings, self.split)
        x = least_squares.normal_solve(self.G.T @ self.h)
        s = self.layout.shift_to_interior(self.h - self.G @ x)
        z = self.layout.shift_to_interior(self.G @ least_squares.normal_solve(-self.c))
        return _Iterate(x, s, z, 1.0, 1.0)

    def run(self) -> ConeSolution:
        point: Optional[_Iterate] = None
        residuals = SolverResiduals(math.inf, math.inf, math.inf)
        iteration = 0
        try:
            point = self.initial_point()
            for iteration in range(self.settings.max_iterations + 1):
                status, residuals = self._check(point)
                if status is not None:
                    return self._solution(status, point, iteration, residuals)
                if iteration == self.settings.max_iterations:
                    break
                point = self._step(point)
        except (_NumericalTrouble, linalg.LinAlgError, FloatingPointError, ValueError) as e:
            logger.debug("NumericalFailure after %d iterations: %s", iteration, e)
            return self._solution(SolverStatus.NUMERICAL_FAILURE, point, iteration, residuals)
        logger.debug("MaxIterations reached (%d)", iteration)
        return self._solution(SolverStatus.MAX_ITERATIONS, point, iteration, residuals)

    def _check(self, point: _Iterate) -> tuple[Optional[SolverStatus], SolverResiduals]:
        c, h, G = self.c, self.h, self.G
        x, s, z, tau, kappa = point.x, point.s, point.z, point.tau, point.kappa
        gtz = G.T @ z
        gx_s = G @ x + s
        cx, hz = float(c @ x), float(h @ z)
        primal_cost, dual_cost = cx / tau, -hz / tau
        primal = float(np.linalg.norm(gx_s - h * tau)) / tau / self.h_scale
        dual = float(np.linalg.norm(gtz + c * tau)) / tau / self.c_scale
        gap = float(s @ z) / tau**2
        relative_gap = gap / max(1.0, min(abs(primal_cost), abs(dual_cost)))
        residuals = SolverResiduals(primal, dual, relative_gap)
        logger.debug(
            "pcost %+.6e dcost %+.6e pres %.1e dres %.1e gap %.1e tau %.1e kappa %.1e",
            primal_cost,
            dual_cost,
            primal,
            dual,
            relative_gap,
            tau,
            kappa,
        )
        tol = self.settings.tol
        if not all(math.isfinite(value) for value in (primal, dual, gap, primal_cost, dual_cost)):
            raise _NumericalTrouble("non-finite residuals")
        if primal < tol and dual < tol and relative_gap < tol:
            return SolverStatus.OPTIMAL, residuals
        if tau < kappa and hz < 0.0 and np.linalg.norm(gtz) <= tol * -hz:
            return SolverStatus.PRIMAL_INFEASIBLE, residuals
        if tau < kappa and cx < 0.0 and np.linalg.norm(gx_s) <= tol * -cx:
            return SolverStatus.DUAL_INFEASIBLE, residuals
        return None, residuals

    def _solution(
        self, status: SolverStatus, point: Optional[_Iterate], iterations: int, residuals: SolverResiduals
    ) -> ConeSolution:
        n, m = self.program.n, self.program.m
        if point is None:
            nan_n, nan_m = np.full(n, np.nan), np.full(m, np.nan)
            return ConeSolution(status, nan_n, nan_m, nan_m.copy(), math.nan, math.nan, iterations, residuals)
        if status == SolverStatus.PRIMAL_INFEASIBLE:
            scale = -float(self.h @ point.z)
            nan_n, nan_m = np.full(n, np.nan), np.full(m, np.nan)
            return ConeSolution(status, nan_n, nan_m, point.z / scale, math.nan, math.nan, iterations, residuals)
        if status == SolverStatus.DUAL_INFEASIBLE:
            scale = -float(self.c @ point.x)
            return ConeSolution(
                status, point.x / scale, point.s / scale, np.full(m, np.nan), math.nan, math.nan, iterations, residuals
            )
        tau = point.tau
        return ConeSolution(
            status,
            point.x / tau,
            point.s / tau,
            point.z / tau,
            float(self.c @ point.x) / tau,
            -float(self.h @ point.z) / tau,
            iterations,
            residuals,
        )

    def _step(self, point: _Iterate) -> _Iterate:
        layout, c, h, G = self.layout, self.c, self.h, self.G
        x, s, z, tau, kappa = point.x, point.s, point.z, point.tau, point.kappa
        r_x = G.T @ z + c * tau
        r_z = G @ x + s - h * tau
        r_tau = kappa + float(c @ x) + float(h @ z)
        mu = (float(s @ z) + tau * kappa) / (layout.degree + 1)

        scaling = _Scaling.compute(layout, s, z)
        kkt = _NormalEquations(G, scaling, self.settings, self.split)
        x1, z1 = kkt.solve(-c, h)
        lam = scaling.lam
        lam_sq = layout.product(lam, lam)

        def direction(
            weight: float, d_s: FloatArray, d_kappa: float
        ) -> tuple[FloatArray, FloatArray, FloatArray, float, float]:
            w_lam_ds = scaling.apply(layout.divide(lam, d_s))
            x2, z2 = kkt.solve(-weight * r_x, -weight * r_z - w_lam_ds)
            denominator = float(c @ x1) + float(h @ z1) - kappa / tau
            d_tau = (-weight * r_tau - d_kappa / tau - float(c @ x2) - float(h @ z2)) / denominator
            dx = x2 + d_tau * x1
            dz = z2 + d_tau * z1
            ds = w_lam_ds - scaling.apply(scaling.apply(dz))
            dk = (d_kappa - kappa * d_tau) / tau
            return dx, ds, dz, d_tau, dk

        def step_length(ds: FloatArray, dz: FloatArray, d_tau: float, dk: float) -> float:
            alpha = min(layout.max_step(s, ds), layout.max_step(z, dz))
            if d_tau < 0.0:
                alpha = min(alpha, -tau / d_tau)
            if dk < 0.0:
                alpha = min(alpha, -kappa / dk)
            return alpha

        _, ds_a, dz_a, d_tau_a, dk_a = direction(1.0, -lam_sq, -tau * kappa)
        alpha_affine = min(1.0, step_length(ds_a, dz_a, d_tau_a, dk_a))
        sigma = (1.0 - alpha_affine) ** 3

        correction = layout.product(scaling.apply_inverse(ds_a), scaling.apply(dz_a))
        d_s = -lam_sq - correction + sigma * mu * layout.unit()
        d_kappa = -tau * kappa - d_tau_a * dk_a + sigma * mu
        dx, ds, dz, d_tau, dk = direction(1.0 - sigma, d_s, d_kappa)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(ds)) and np.all(np.isfinite(dz))):
            raise _NumericalTrouble("non-finite search direction")
        alpha = min(1.0, self.settings.step_fraction * step_length(ds, dz, d_tau, dk))
        if alpha < 1e-12:
            raise _NumericalTrouble("step length collapsed")
        return _Iterate(x + alpha * dx, s + alpha * ds, z + alpha * dz, tau + alpha * d_tau, kappa + alpha * dk)


def solve(program: ConeProgram, settings: Optional[SolverSettings] = None) -> ConeSolution:
    """
    Solves a second-order cone program.

    Parameters
    ----------
    program : ConeProgram
    settings : SolverSettings, optional
        Defaults to the process settings (tolerance 1e-8, 200 iterations).

    Returns
    -------
    ConeSolution
        Never raises for a well-formed program; failures are reported through ``status``.
    """
    settings = settings or SolverSettings.from_settings()
    solution = _HomogeneousSolver(program, settings).run()
    logger.debug("%s in %d iterations (n=%d, m=%d)", solution.status.value, solution.iterations, program.n, program.m)
    return solution
