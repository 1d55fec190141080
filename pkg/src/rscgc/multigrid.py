"""Three-level multigrid hierarchy with a real-shifted coarsest operator.

The second level is the Galerkin coarsening of the fine operator; the third
is the double Galerkin coarsening of the fine operator reassembled with its
wavenumber scaled by plan.alpha. Only the coarsest level sees the real shift.
A complex shift plan.beta, when nonzero, is applied on every level, which
turns the hierarchy into a shifted-Laplacian preconditioner for the unshifted
system.

Smoothing is damped Jacobi; the coarsest problem is solved by a cached sparse
LU factorization. A W cycle runs the mid-level correction pass twice.
"""

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import (HelmholtzProblem, SlownessModel, SparseOperator,
                             assemble_operator)
from .stencils import restriction_stencil

__all__ = [
    "CyclePlan",
    "TransferPair",
    "Level",
    "MultigridHierarchy",
    "transfer_matrices",
    "build_hierarchy",
    "build_rediscretized_hierarchy",
    "jacobi_smooth",
    "cycle",
    "coarse_solve",
]

CYCLE_CHOICES = ("V", "W")
INTERGRID_CHOICES = ("cubic", "level-dependent", "bilinear")

# Coarsest-level scheme of the re-discretized baseline: a dispersion-minimized
# 9-point stencil with the wavenumber itself rescaled at assembly.
REDISC_SCHEME = "jss(0.6054,1.0532,0.0002)"
REDISC_WAVENUMBER_SCALE = 0.87725


@dataclass(frozen=True)
class CyclePlan:
    """Cycle shape, intergrid scheme, shifts, and per-level Jacobi dampings."""

    cycle: str = "W"
    nu1: int = 1
    nu2: int = 1
    intergrid: str = "cubic"
    alpha: float = 1.0
    beta: float = 0.0
    dampings: tuple = (0.89, 0.89)

    def __post_init__(self):
        if self.cycle not in CYCLE_CHOICES:
            raise ValueError(f"cycle must be one of {CYCLE_CHOICES}, got {self.cycle!r}")
        if self.intergrid not in INTERGRID_CHOICES:
            raise ValueError(
                f"intergrid must be one of {INTERGRID_CHOICES}, got {self.intergrid!r}")
        if self.nu1 < 0 or self.nu2 < 0:
            raise ValueError(f"nu1 and nu2 must be nonnegative, got {self.nu1}, {self.nu2}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        object.__setattr__(self, "dampings", tuple(float(w) for w in self.dampings))
        if len(self.dampings) < 2:
            raise ValueError("dampings must provide a value for levels 1 and 2")
        if any(w <= 0 for w in self.dampings):
            raise ValueError(f"dampings must be positive, got {self.dampings}")


@dataclass(frozen=True)
class TransferPair:
    """Restriction and prolongation between two consecutive levels.

    order is the weight family: "cubic", "linear", or "linear/cubic" for the
    mixed pair (lower-order restriction, cubic prolongation).
    """

    restriction: sp.csr_matrix
    prolongation: sp.csr_matrix
    order: str


@dataclass(frozen=True)
class Level:
    operator: SparseOperator
    damping: float           # Jacobi damping; unused on the coarsest level
    inverse_diagonal: np.ndarray


@dataclass(frozen=True)
class MultigridHierarchy:
    levels: tuple
    transfers: tuple
    coarse_solver: object
    plan: CyclePlan


def _axis_restriction(n, order):
    """One axis of the full-weighting restriction on a vertex grid of n nodes.

    Coarse node J sits at fine node 2J. Boundary rows and columns are zeroed
    (Dirichlet unknowns carry no correction); rows truncated by that exclusion
    are renormalized to sum 1 so constants restrict to constants.
    """
    weights = restriction_stencil(1, order).coeffs.real.ravel()
    half = len(weights) // 2
    nc = (n - 1) // 2 + 1
    rows, cols, vals = [], [], []
    for J in range(1, nc - 1):
        kept_cols, kept = [], []
        for o in range(-half, half + 1):
            c = 2 * J + o
            if 1 <= c <= n - 2:
                kept_cols.append(c)
                kept.append(weights[o + half])
        kept = np.asarray(kept)
        kept /= kept.sum()
        rows.extend([J] * len(kept_cols))
        cols.extend(kept_cols)
        vals.extend(kept)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nc, n))


def _axis_prolongation(n, order):
    """One axis of interpolation to a vertex grid of n nodes.

    Weights are 2x the restriction weights per axis, the transpose-scaling
    convention; interior rows already sum to 1 away from the boundary and are
    renormalized where truncation bites.
    """
    weights = 2.0 * restriction_stencil(1, order).coeffs.real.ravel()
    half = len(weights) // 2
    nc = (n - 1) // 2 + 1
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        kept_cols, kept = [], []
        for o in range(-half, half + 1):
            if (i - o) % 2:
                continue
            J = (i - o) // 2
            if 1 <= J <= nc - 2:
                kept_cols.append(J)
                kept.append(weights[o + half])
        kept = np.asarray(kept)
        kept /= kept.sum()
        rows.extend([i] * len(kept_cols))
        cols.extend(kept_cols)
        vals.extend(kept)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, nc))


def transfer_matrices(fine_shape, restriction_order, prolongation_order):
    """TransferPair between a padded grid and its index-halved coarsening."""
    R = reduce(lambda a, b: sp.kron(a, b, format="csr"),
               [_axis_restriction(n, restriction_order) for n in fine_shape])
    P = reduce(lambda a, b: sp.kron(a, b, format="csr"),
               [_axis_prolongation(n, prolongation_order) for n in fine_shape])
    if restriction_order == prolongation_order:
        order = restriction_order
    else:
        order = f"{restriction_order}/{prolongation_order}"
    return TransferPair(R, P, order)


def _boundary_indices(shape):
    mask = np.zeros(shape, dtype=bool)
    for ax in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[ax] = 0
        mask[tuple(sl)] = True
        sl[ax] = shape[ax] - 1
        mask[tuple(sl)] = True
    return mask.ravel()


def _coarsen(matrix, pair, coarse_shape):
    """Sparse triple product with the coarse Dirichlet diagonal restored."""
    coarse = (pair.restriction @ matrix) @ pair.prolongation
    coarse = sp.csr_matrix(coarse)
    bnd = _boundary_indices(coarse_shape)
    coarse = coarse + sp.diags(bnd.astype(coarse.dtype))
    coarse = sp.csr_matrix(coarse)
    coarse.eliminate_zeros()
    coarse.sort_indices()
    return coarse


def _halved(shape):
    return tuple((n - 1) // 2 + 1 for n in shape)


def _make_level(matrix, shape, h, damping):
    diag = matrix.diagonal()
    if np.any(diag == 0):
        raise ValueError("operator has a zero diagonal entry; Jacobi smoothing "
                         "and the coarse solve both need a full diagonal")
    op = SparseOperator(matrix, shape, h)
    return Level(op, float(damping), 1.0 / diag)


def _transfer_orders(intergrid):
    if intergrid == "cubic":
        return ("cubic", "cubic"), ("cubic", "cubic")
    if intergrid == "level-dependent":
        return ("cubic", "cubic"), ("linear", "cubic")
    return ("linear", "linear"), ("linear", "linear")


def _check_coarsenable(shape):
    bad = [n for n in shape if (n - 1) % 4 != 0 or n < 17]
    if bad:
        raise ValueError(
            f"grid extents {tuple(shape)} cannot be coarsened twice: each axis "
            f"needs (nodes - 1) divisible by 4 and at least 17 nodes so the "
            f"coarsest level keeps 3 interior nodes")


def _factorize(matrix, plan):
    try:
        return spla.splu(sp.csc_matrix(matrix))
    except RuntimeError as exc:
        raise RuntimeError(
            f"coarsest-level factorization failed (alpha={plan.alpha}, "
            f"beta={plan.beta}): {exc}") from exc


def build_hierarchy(problem, scheme, plan):
    """Assemble the 3-level hierarchy for a problem under a CyclePlan.

    Level 1 is assembled with (alpha=1, beta=plan.beta); level 2 is its
    Galerkin coarsening; level 3 is the double Galerkin coarsening of the
    operator reassembled with (alpha=plan.alpha, beta=plan.beta).
    """
    shape = problem.padded_shape
    _check_coarsenable(shape)
    h = problem.model.h
    orders12, orders23 = _transfer_orders(plan.intergrid)

    fine = assemble_operator(problem, scheme, alpha=1.0, beta=plan.beta)
    if plan.alpha == 1.0:
        fine_shifted = fine.matrix
    else:
        fine_shifted = assemble_operator(problem, scheme, alpha=plan.alpha,
                                         beta=plan.beta).matrix

    t12 = transfer_matrices(shape, *orders12)
    mid_shape = _halved(shape)
    t23 = transfer_matrices(mid_shape, *orders23)
    coarse_shape = _halved(mid_shape)

    mid = _coarsen(fine.matrix, t12, mid_shape)
    if fine_shifted is fine.matrix:
        mid_shifted = mid
    else:
        mid_shifted = _coarsen(fine_shifted, t12, mid_shape)
    coarse = _coarsen(mid_shifted, t23, coarse_shape)

    levels = (
        _make_level(fine.matrix, shape, h, plan.dampings[0]),
        _make_level(mid, mid_shape, 2 * h, plan.dampings[1]),
        _make_level(coarse, coarse_shape, 4 * h, 1.0),
    )
    return MultigridHierarchy(levels, (t12, t23), _factorize(coarse, plan), plan)


def _coarsened_problem(problem):
    model = problem.model
    if any(c % 2 for c in model.cells):
        raise ValueError(f"cell counts {model.cells} must be even to re-discretize")
    if problem.pad % 2:
        raise ValueError(f"pad width {problem.pad} must be even to re-discretize")
    if any(s % 2 for s in problem.source):
        raise ValueError(f"source index {problem.source} must be even to re-discretize")
    take = tuple(slice(None, None, 2) for _ in range(model.dim))
    half = SlownessModel(model.dim, tuple(c // 2 for c in model.cells),
                         2 * model.h, model.kappa2[take])
    return HelmholtzProblem(half, problem.omega, pad=problem.pad // 2,
                            gamma_max=problem.gamma_max,
                            source=tuple(s // 2 for s in problem.source),
                            free_surface_top=problem.free_surface_top)


def build_rediscretized_hierarchy(problem, plan):
    """Baseline hierarchy that re-discretizes each level instead of coarsening.

    Levels 1 and 2 use the fourth-order scheme on the original and the
    half-resolution problem; level 3 uses the dispersion-minimized 9-point
    scheme with the wavenumber scaled by 0.87725. Transfers are bilinear
    regardless of plan.intergrid. 2D only.
    """
    if problem.model.dim != 2:
        raise ValueError("the re-discretized baseline is available in 2D only")
    shape = problem.padded_shape
    _check_coarsenable(shape)
    h = problem.model.h

    mid_problem = _coarsened_problem(problem)
    coarse_problem = _coarsened_problem(mid_problem)

    fine = assemble_operator(problem, "fourth-order", alpha=1.0, beta=plan.beta)
    mid = assemble_operator(mid_problem, "fourth-order", alpha=1.0, beta=plan.beta)
    coarse = assemble_operator(coarse_problem, REDISC_SCHEME,
                               alpha=REDISC_WAVENUMBER_SCALE, beta=plan.beta)

    mid_shape = _halved(shape)
    coarse_shape = _halved(mid_shape)
    if mid.grid_shape != mid_shape or coarse.grid_shape != coarse_shape:
        raise ValueError("re-discretized grids do not align with index halving")

    levels = (
        _make_level(fine.matrix, shape, h, plan.dampings[0]),
        _make_level(mid.matrix, mid_shape, 2 * h, plan.dampings[1]),
        _make_level(coarse.matrix, coarse_shape, 4 * h, 1.0),
    )
    transfers = (transfer_matrices(shape, "linear", "linear"),
                 transfer_matrices(mid_shape, "linear", "linear"))
    return MultigridHierarchy(levels, transfers, _factorize(coarse.matrix, plan), plan)


def jacobi_smooth(level, x, b, sweeps, damping=None):
    """sweeps passes of damped Jacobi, x <- x + w D^-1 (b - A x).

    Every sweep reads only the previous iterate. Returns the new iterate
    without mutating x.
    """
    w = level.damping if damping is None else damping
    A = level.operator.matrix
    invd = level.inverse_diagonal
    x = np.asarray(x, dtype=complex)
    for _ in range(sweeps):
        x = x + w * (invd * (b - A @ x))
    return x


def coarse_solve(hierarchy, rhs):
    """Direct solve on the coarsest level, verified to 1e-10 relative."""
    rhs = np.asarray(rhs, dtype=complex)
    scale = np.linalg.norm(rhs)
    if scale == 0:
        return np.zeros_like(rhs)
    x = hierarchy.coarse_solver.solve(rhs)
    level = hierarchy.levels[-1]
    residual = np.linalg.norm(rhs - level.operator.matrix @ x) / scale
    if not residual <= 1e-10:
        plan = hierarchy.plan
        raise RuntimeError(
            f"coarsest-level solve residual {residual:.3e} exceeds 1e-10; the "
            f"operator may be near-resonant (alpha={plan.alpha}, beta={plan.beta})")
    return x


def cycle(hierarchy, b, x0=None):
    """One multigrid cycle on the finest level, V or W per the plan.

    The W cycle runs the mid-level correction pass twice in sequence, each
    pass wrapping the direct coarsest solve in its own pre- and
    post-smoothing. The map b -> x is linear for x0 = None or zero.
    """
    plan = hierarchy.plan
    fine, mid, _ = hierarchy.levels
    t12, t23 = hierarchy.transfers
    b = np.asarray(b, dtype=complex).ravel()

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=complex).ravel()
    x = jacobi_smooth(fine, x, b, plan.nu1)
    coarse_rhs = t12.restriction @ (b - fine.operator.matrix @ x)

    passes = 2 if plan.cycle == "W" else 1
    e = np.zeros_like(coarse_rhs)
    for _ in range(passes):
        e = jacobi_smooth(mid, e, coarse_rhs, plan.nu1)
        defect = coarse_rhs - mid.operator.matrix @ e
        e = e + t23.prolongation @ coarse_solve(hierarchy, t23.restriction @ defect)
        e = jacobi_smooth(mid, e, coarse_rhs, plan.nu2)

    x = x + t12.prolongation @ e
    return jacobi_smooth(fine, x, b, plan.nu2)
