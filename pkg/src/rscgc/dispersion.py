"""Grid-to-grid dispersion analysis for tuning the coarsest-level real shift.

A stencil's dispersion relation is the zero set of its Fourier symbol; along a
ray theta = r * unit(phi) the relation appears as the first sign switch of the
real symbol. The grid-to-grid error compares the coarsest-level radius with
the fine-grid radius stretched by the coarsening factor 4,

    e_g(alpha, phi) = r3(alpha, phi) / (4 r1(phi)) - 1,

where r3 comes from the double-Galerkin composite of the real-shifted fine
operator. Both radii are snapped to the nearest sample of the 1e-3 ray grid
before forming the ratio; the tabulated optima are reproduced under this
convention and not under smooth radii, so it is part of the protocol rather
than an implementation detail.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .discretization import laplacian_and_mass_stencils
from .stencils import galerkin_stencil, restriction_stencil, transpose_scale

__all__ = [
    "AnalysisConfig",
    "DispersionScan",
    "DispersionCurve",
    "NoCrossingError",
    "direction_grid",
    "discrete_radius",
    "grid_to_grid_error",
    "optimize_shift",
    "ncrit_bounds",
    "classical_dispersion_error",
    "export_dispersion_curve",
]

INTERGRID_CHOICES = ("cubic", "level-dependent")

# Polar sector floor: pi/2 - arccos(1/sqrt(3)), the cube-diagonal colatitude.
POLAR_LO = math.pi / 2 - math.acos(1.0 / math.sqrt(3.0))


class NoCrossingError(ValueError):
    """The symbol has no dispersion-relation crossing along the sampled ray."""


@dataclass(frozen=True)
class AnalysisConfig:
    """Sampling resolutions for one (dim, G, intergrid) analysis."""

    dim: int
    G: float
    intergrid: str = "cubic"
    phi_resolution: float = 0.1
    alpha_resolution: float = 5e-4
    ray_resolution: float = 1e-3
    alpha_range: tuple = (0.98, 1.06)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"analysis dim must be 2 or 3, got {self.dim}")
        if self.G <= 8:
            raise ValueError(
                f"G must exceed 8 so two coarsenings keep G/4 > 2, got {self.G}")
        for name in ("phi_resolution", "alpha_resolution", "ray_resolution"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        lo, hi = self.alpha_range
        if not (0 < lo < hi):
            raise ValueError(f"alpha_range must satisfy 0 < lo < hi, got {self.alpha_range}")
        if self.intergrid not in INTERGRID_CHOICES:
            raise ValueError(
                f"intergrid must be one of {INTERGRID_CHOICES}, got {self.intergrid!r}")

    @property
    def kh(self):
        return 2.0 * math.pi / self.G


@dataclass(frozen=True)
class DispersionScan:
    """Exhaustive (alpha, phi) error table with the located optimum."""

    directions: np.ndarray
    alphas: np.ndarray
    errors: np.ndarray
    alpha_star: float
    max_eg_star: float


@dataclass(frozen=True)
class DispersionCurve:
    columns: tuple
    rows: np.ndarray


def direction_grid(config):
    """Propagation directions covering the symmetry sector.

    2D: azimuth angles in [0, pi/4). 3D: (azimuth, polar) pairs with azimuth
    in [0, pi/4) and polar in [pi/2 - arccos(1/sqrt(3)), pi/2). The remaining
    directions repeat these errors by symmetry.
    """
    res = config.phi_resolution
    azimuth = np.arange(0.0, math.pi / 4, res)
    if config.dim == 2:
        return azimuth
    polar = np.arange(POLAR_LO, math.pi / 2, res)
    az, pol = np.meshgrid(azimuth, polar, indexing="ij")
    return np.column_stack([az.ravel(), pol.ravel()])


def _unit(dim, phi):
    if dim == 1:
        return np.array([1.0])
    if dim == 2:
        angle = float(np.asarray(phi).reshape(()))
        return np.array([math.cos(angle), math.sin(angle)])
    azimuth, polar = (float(v) for v in np.asarray(phi).ravel())
    return np.array([
        math.sin(polar) * math.cos(azimuth),
        math.sin(polar) * math.sin(azimuth),
        math.cos(polar),
    ])


class _RaySymbol:
    """Real symbol of a stencil restricted to one ray, tabulated on a grid."""

    def __init__(self, stencil, u, grid):
        self.proj = stencil.offsets().astype(float) @ u
        self.coeffs = stencil.coeffs.ravel().real
        self.table = np.cos(np.outer(grid, self.proj)) @ self.coeffs

    def __call__(self, r):
        return np.cos(np.outer(np.atleast_1d(r), self.proj)) @ self.coeffs


def _ray_grid(dim, res):
    rmax = math.pi * math.sqrt(dim)
    count = int(math.floor(rmax / res + 0.5))
    return res * np.arange(0.0, count + 1.0)


def discrete_radius(stencil, kh, phi, ray_resolution=1e-3):
    """Distance from the origin to the first sign switch of the real symbol.

    Samples along theta = r * unit(phi) for r in (0, pi*sqrt(dim)] at the
    given resolution, then refines the bracketed switch by bisection to below
    1e-9. kh identifies the operator in error messages; its effect on the
    symbol enters through the stencil's mass term.
    """
    u = _unit(stencil.dim, phi)
    grid = _ray_grid(stencil.dim, ray_resolution)
    sym = _RaySymbol(stencil, u, grid)
    values = sym.table
    if values[0] >= 0:
        raise NoCrossingError(
            f"no dispersion-relation crossing: symbol({0.0}) = {values[0]:.3e} "
            f"is nonnegative (kh = {kh:g} too small for this stencil?)")
    nonneg = np.nonzero(values >= 0)[0]
    if nonneg.size == 0:
        raise NoCrossingError(
            f"no dispersion-relation crossing for r in (0, pi*sqrt({stencil.dim})] "
            f"(kh = {kh:g} too large for this stencil?)")
    i = int(nonneg[0])
    lo, hi = grid[i - 1], grid[i]
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if float(sym(mid)[0]) >= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _snap(r, res):
    return res * round(r / res)


@lru_cache(maxsize=None)
def _fine_pair(dim):
    return laplacian_and_mass_stencils(dim, "fourth-order")


@lru_cache(maxsize=None)
def _composite_pair(dim, intergrid):
    """Double-Galerkin composites of the fourth-order (L, M) pair.

    The first coarsening always uses the cubic pair; the second uses a linear
    restriction under the level-dependent scheme, with cubic prolongation
    either way. Splitting the composite into Laplacian and mass parts keeps
    the real shift a scalar multiplier, so one composition serves every alpha.
    """
    lap, mass = _fine_pair(dim)
    cubic = restriction_stencil(dim, "cubic")
    prolong = transpose_scale(cubic)
    lap2 = galerkin_stencil(lap, cubic, prolong)
    mass2 = galerkin_stencil(mass, cubic, prolong)
    second = cubic if intergrid == "cubic" else restriction_stencil(dim, "linear")
    lap3 = galerkin_stencil(lap2, second, prolong)
    mass3 = galerkin_stencil(mass2, second, prolong)
    return lap3, mass3


def coarsest_stencil(config, alpha):
    """Effective coarsest-level stencil of the alpha-shifted fine operator."""
    lap3, mass3 = _composite_pair(config.dim, config.intergrid)
    return lap3 + mass3 * (-((alpha * config.kh) ** 2))


def grid_to_grid_error(config, alpha, phi):
    """e_g(alpha, phi) = r3 / (4 r1) - 1 with ray-grid-snapped radii."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    res = config.ray_resolution
    kh = config.kh
    lap1, mass1 = _fine_pair(config.dim)
    fine = lap1 + mass1 * (-(kh ** 2))
    r1 = _snap(discrete_radius(fine, kh, phi, res), res)
    coarse = coarsest_stencil(config, alpha)
    r3 = _snap(discrete_radius(coarse, 4 * alpha * kh, phi, res), res)
    return r3 / (4.0 * r1) - 1.0


def _batch_radii(sym_lap, sym_mass, grid, masses, res):
    """First-crossing radii of sym_lap - m * sym_mass for a batch of masses.

    Bracket on the tabulated grid, refine by bisection, snap to the grid
    resolution. All masses must cross; the caller's stencils do for the kh
    range the config invariants allow.
    """
    masses = np.asarray(masses, dtype=float)
    F = sym_lap.table[None, :] - masses[:, None] * sym_mass.table[None, :]
    if np.any(F[:, 0] >= 0):
        raise NoCrossingError("symbol nonnegative at the origin for some shift")
    nonneg = F >= 0
    if not np.all(nonneg.any(axis=1)):
        raise NoCrossingError("no dispersion-relation crossing for some shift")
    first = nonneg.argmax(axis=1)
    lo = grid[first - 1]
    hi = grid[first]
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        fm = sym_lap(mid) - masses * sym_mass(mid)
        above = fm >= 0
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return res * np.round(0.5 * (lo + hi) / res)


def _alpha_grid(config):
    lo, hi = config.alpha_range
    count = int(round((hi - lo) / config.alpha_resolution)) + 1
    return lo + config.alpha_resolution * np.arange(count)


def _error_table(config, alphas):
    """e_g values, shape (len(alphas), number of directions)."""
    res = config.ray_resolution
    kh = config.kh
    grid = _ray_grid(config.dim, res)
    lap1, mass1 = _fine_pair(config.dim)
    lap3, mass3 = _composite_pair(config.dim, config.intergrid)
    directions = direction_grid(config)
    rows = directions if config.dim == 3 else directions[:, None]
    masses = (np.asarray(alphas) * kh) ** 2
    errors = np.empty((len(alphas), len(rows)))
    for j, phi in enumerate(rows):
        u = _unit(config.dim, phi)
        r1 = _batch_radii(_RaySymbol(lap1, u, grid), _RaySymbol(mass1, u, grid),
                          grid, [kh ** 2], res)[0]
        r3 = _batch_radii(_RaySymbol(lap3, u, grid), _RaySymbol(mass3, u, grid),
                          grid, masses, res)
        errors[:, j] = r3 / (4.0 * r1) - 1.0
    return directions, errors


def optimize_shift(config):
    """Exhaustive min-max search for the real shift.

    Minimizes max over the direction grid of |e_g(alpha, phi)| over the alpha
    grid; ties break toward the smaller alpha. Returns (alpha_star,
    max_eg_star, DispersionScan).
    """
    alphas = _alpha_grid(config)
    directions, errors = _error_table(config, alphas)
    objective = np.abs(errors).max(axis=1)
    best = int(np.argmin(objective))
    scan = DispersionScan(
        directions=directions,
        alphas=alphas,
        errors=errors,
        alpha_star=float(alphas[best]),
        max_eg_star=float(objective[best]),
    )
    return scan.alpha_star, scan.max_eg_star, scan


def ncrit_bounds(G, max_eg):
    """Grid-size range [G/(4 e), G/(2 e)] rounded half-up to integers.

    Past roughly this many points per direction the accumulated phase
    misalignment defeats the coarse-grid correction.
    """
    if max_eg <= 0:
        raise ValueError(f"dispersion error must be positive, got {max_eg}")
    if G <= 0:
        raise ValueError(f"G must be positive, got {G}")
    lo = math.floor(G / (4.0 * max_eg) + 0.5)
    hi = math.floor(G / (2.0 * max_eg) + 0.5)
    return int(lo), int(hi)


def classical_dispersion_error(stencil, G, phi, ray_resolution=1e-3):
    """Single-grid dispersion error r / r1(phi) - 1 at kh = 2 pi / G.

    The stencil must already carry its mass term at that kh.
    """
    if G <= 2:
        raise ValueError(f"G must exceed 2, got {G}")
    r = 2.0 * math.pi / G
    r1 = discrete_radius(stencil, r, phi, ray_resolution)
    return r / r1 - 1.0


def export_dispersion_curve(config, alpha, angle_resolution=0.01):
    """Dense polar curves of the coarsest radius against the stretched fine radius.

    2D: the sector [0, pi/4] is sampled at angle_resolution and unfolded to
    the full circle via the 8-fold stencil symmetry, with a closing row at
    2 pi. 3D: the (azimuth, polar) sector box is sampled densely instead.
    Radii follow the same ray-grid snapping as grid_to_grid_error.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    res = config.ray_resolution
    kh = config.kh
    lap1, mass1 = _fine_pair(config.dim)
    fine = lap1 + mass1 * (-(kh ** 2))
    coarse = coarsest_stencil(config, alpha)

    def radii(phi):
        r1 = _snap(discrete_radius(fine, kh, phi, res), res)
        r3 = _snap(discrete_radius(coarse, 4 * alpha * kh, phi, res), res)
        return r3, 4.0 * r1

    if config.dim == 2:
        base = np.arange(0.0, math.pi / 4, angle_resolution)
        base = np.append(base, math.pi / 4)
        vals = np.array([radii(t) for t in base])
        # octant -> quadrant: reflect about pi/4, dropping the duplicated seam
        quarter_angles = np.concatenate([base, math.pi / 2 - base[-2::-1]])
        quarter_vals = np.concatenate([vals, vals[-2::-1]])
        angles = [quarter_angles[:-1] + s * math.pi / 2 for s in range(4)]
        values = [quarter_vals[:-1]] * 4
        angles.append(np.array([2.0 * math.pi]))
        values.append(quarter_vals[:1])
        rows = np.column_stack([np.concatenate(angles), np.concatenate(values)])
        return DispersionCurve(("phi", "r_coarse", "r_fine_stretched"), rows)

    azimuth = np.append(np.arange(0.0, math.pi / 4, angle_resolution), math.pi / 4)
    polar = np.append(np.arange(POLAR_LO, math.pi / 2, angle_resolution), math.pi / 2)
    rows = np.empty((azimuth.size * polar.size, 4))
    i = 0
    for az in azimuth:
        for pol in polar:
            r3, r1x4 = radii((az, pol))
            rows[i] = (az, pol, r3, r1x4)
            i += 1
    return DispersionCurve(("azimuth", "polar", "r_coarse", "r_fine_stretched"), rows)
