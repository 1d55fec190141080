"""Fine-grid Helmholtz assembly: difference schemes, media, sponge layers, sources.

The operator convention is H = (1/h^2) L - k^2(x) M with dimensionless stencils
L, M and k(x) = omega * kappa(x). Real and complex shifts enter through the mass
coefficient: the assembled matrix is (1/h^2) L - (alpha^2 + i(gamma(x) + beta))
k^2(x) M, where gamma is the sponge-layer attenuation profile.
"""

import json
import math
import re
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .stencils import Stencil

__all__ = [
    "SlownessModel",
    "HelmholtzProblem",
    "SparseOperator",
    "make_model",
    "load_model",
    "extend_down",
    "omega_for_ppw",
    "laplacian_and_mass_stencils",
    "attenuation_profile",
    "assemble_operator",
    "mass_matrix",
    "point_source",
]

MODEL_KINDS = ("homogeneous", "linear", "wedge")
VALUE_KINDS = ("velocity", "slowness", "slowness-squared")

_JSS_RE = re.compile(r"^jss\(([^,]+),([^,]+),([^)]+)\)$")


@dataclass(frozen=True)
class SlownessModel:
    """Vertex-centered grid of squared slowness kappa^2(x).

    `cells` counts interior cells per axis before padding; the nodal grid has
    cells + 1 points per axis. Depth is the last array axis, top at index 0.
    """

    dim: int
    cells: tuple
    h: float
    kappa2: np.ndarray

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "kappa2", np.asarray(self.kappa2, dtype=float))
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if len(cells) != self.dim or any(c < 1 for c in cells):
            raise ValueError(f"need {self.dim} positive cell counts, got {cells}")
        if self.h <= 0:
            raise ValueError(f"spacing must be positive, got {self.h}")
        expected = tuple(c + 1 for c in cells)
        if self.kappa2.shape != expected:
            raise ValueError(
                f"kappa2 shape {self.kappa2.shape} does not match the "
                f"vertex-centered grid {expected} for {cells} cells")
        if not np.all(np.isfinite(self.kappa2)) or np.any(self.kappa2 <= 0):
            raise ValueError("kappa2 must be strictly positive and finite")

    @property
    def nodes(self):
        return self.kappa2.shape

    @property
    def kappa2_max(self):
        return float(self.kappa2.max())


def make_model(kind, kappa2_range, cells, h):
    """Build one of the synthetic media.

    homogeneous: kappa^2 constant at the upper range endpoint.
    linear: slowness kappa varies linearly with depth from sqrt(lo) at the top
        to sqrt(hi) at the bottom.
    wedge: three constant-kappa^2 layers (lo, midpoint, hi top to bottom)
        separated by straight dipping interfaces that pinch together at the
        far side of the first axis.
    """
    lo, hi = float(kappa2_range[0]), float(kappa2_range[1])
    if not (0.0 < lo <= hi):
        raise ValueError(f"kappa2 range must satisfy 0 < lo <= hi, got [{lo}, {hi}]")
    cells = tuple(int(c) for c in cells)
    dim = len(cells)
    nodes = tuple(c + 1 for c in cells)

    if kind == "homogeneous":
        k2 = np.full(nodes, hi)
    elif kind == "linear":
        t = np.linspace(0.0, 1.0, nodes[-1])
        kappa = (1.0 - t) * math.sqrt(lo) + t * math.sqrt(hi)
        k2 = np.broadcast_to(kappa ** 2, nodes).copy()
    elif kind == "wedge":
        if dim < 2:
            raise ValueError("the wedge model needs at least 2 dimensions")
        x = np.linspace(0.0, 1.0, nodes[0])
        z = np.linspace(0.0, 1.0, nodes[-1])
        xs = x.reshape((-1,) + (1,) * (dim - 1))
        zs = z.reshape((1,) * (dim - 1) + (-1,))
        z1 = 1.0 / 3.0 + xs / 6.0
        z2 = 2.0 / 3.0 - xs / 6.0
        mid = 0.5 * (lo + hi)
        k2 = np.where(zs < z1, lo, np.where(zs < z2, mid, hi))
        k2 = np.broadcast_to(k2, nodes).copy()
    else:
        raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    return SlownessModel(dim, cells, h, k2)


def load_model(path, meta):
    """Read a raw little-endian float32 grid plus its JSON sidecar.

    `meta` is either a mapping or a path to a JSON file with keys dim, shape
    (nodes per axis), h, and kind in {velocity, slowness, slowness-squared}.
    Velocities are in km/s and convert through kappa^2 = 1/v^2. The file is
    row-major with the last axis fastest.
    """
    if not isinstance(meta, Mapping):
        meta = json.loads(Path(meta).read_text())
    dim = int(meta["dim"])
    shape = tuple(int(s) for s in meta["shape"])
    h = float(meta["h"])
    kind = meta["kind"]
    if len(shape) != dim:
        raise ValueError(f"metadata dim {dim} does not match shape {shape}")
    if kind not in VALUE_KINDS:
        raise ValueError(f"unknown value kind {kind!r}; choose from {VALUE_KINDS}")

    raw = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if raw.size != expected:
        raise ValueError(
            f"model file size mismatch for {path}: metadata implies {expected} "
            f"float32 values ({4 * expected} bytes), file holds {raw.size} "
            f"({4 * raw.size} bytes)")
    values = raw.astype(float).reshape(shape)
    if kind == "velocity":
        if np.any(values <= 0):
            raise ValueError("velocity grid must be strictly positive")
        kappa2 = 1.0 / values ** 2
    elif kind == "slowness":
        kappa2 = values ** 2
    else:
        kappa2 = values
    cells = tuple(s - 1 for s in shape)
    return SlownessModel(dim, cells, h, kappa2)


def extend_down(model, extra_cells):
    """Extend a model downwards by replicating its bottom slice.

    Shallow media need this so the absorbing layer does not eat into the
    region of interest.
    """
    extra = int(extra_cells)
    if extra < 0:
        raise ValueError("extension must be nonnegative")
    if extra == 0:
        return model
    pad = [(0, 0)] * model.dim
    pad[-1] = (0, extra)
    kappa2 = np.pad(model.kappa2, pad, mode="edge")
    cells = model.cells[:-1] + (model.cells[-1] + extra,)
    return SlownessModel(model.dim, cells, model.h, kappa2)


def omega_for_ppw(model, G):
    """Angular frequency giving G points per wavelength where the medium is slowest."""
    if G <= 0:
        raise ValueError("points per wavelength must be positive")
    return 2.0 * math.pi / (G * model.h * math.sqrt(model.kappa2_max))


@dataclass(frozen=True)
class HelmholtzProblem:
    """A model plus frequency, sponge layer, and source placement.

    The absorbing layer adds `pad` cells on every face; with free_surface_top
    the top face of the depth axis (last axis, index 0) is left bare. The
    source index is relative to the interior grid and defaults to the center
    of the top face, one node below it when that face carries the Dirichlet
    boundary itself (free surface, or no padding at all) since a boundary row
    cannot carry a source.
    """

    model: SlownessModel
    omega: float
    pad: int = 20
    gamma_max: float = 1.0
    source: tuple = None
    free_surface_top: bool = False

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.pad < 0:
            raise ValueError("pad must be nonnegative")
        if self.gamma_max < 0:
            raise ValueError("gamma_max must be nonnegative")
        nodes = self.model.nodes
        if self.source is None:
            depth = 0 if self.pad_lo[-1] > 0 else 1
            source = tuple(n // 2 for n in nodes[:-1]) + (depth,)
        else:
            source = tuple(int(s) for s in self.source)
        object.__setattr__(self, "source", source)
        if len(source) != self.model.dim or any(
                not (0 <= s < n) for s, n in zip(source, nodes)):
            raise ValueError(f"source {source} outside the interior grid {nodes}")
        padded = tuple(s + lo for s, lo in zip(source, self.pad_lo))
        if any(p == 0 or p == n - 1 for p, n in zip(padded, self.padded_shape)):
            raise ValueError(
                f"source {source} lands on the boundary row of the padded grid "
                f"(padded index {padded}); a Dirichlet row cannot carry a source")
        G = self.points_per_wavelength
        if G < 2.0:
            raise ValueError(
                f"{G:.3f} points per wavelength at the largest slowness; "
                "need at least 2 (Nyquist)")

    @property
    def points_per_wavelength(self):
        kmax = self.omega * math.sqrt(self.model.kappa2_max)
        return 2.0 * math.pi / (kmax * self.model.h)

    @property
    def pad_lo(self):
        pads = [self.pad] * self.model.dim
        if self.free_surface_top:
            pads[-1] = 0
        return tuple(pads)

    @property
    def pad_hi(self):
        return (self.pad,) * self.model.dim

    @property
    def padded_shape(self):
        return tuple(n + lo + hi for n, lo, hi in
                     zip(self.model.nodes, self.pad_lo, self.pad_hi))

    def interior_slices(self):
        return tuple(slice(lo, lo + n) for n, lo in
                     zip(self.model.nodes, self.pad_lo))


@dataclass(frozen=True)
class SparseOperator:
    """Complex sparse matrix over the padded grid, rows in lexicographic order."""

    matrix: sp.csr_matrix
    grid_shape: tuple
    h: float

    def __post_init__(self):
        object.__setattr__(self, "grid_shape", tuple(self.grid_shape))
        n = int(np.prod(self.grid_shape))
        if self.matrix.shape != (n, n):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match grid "
                f"{self.grid_shape} ({n} unknowns)")
        if not np.all(np.isfinite(self.matrix.data)):
            raise ValueError("operator entries must be finite")

    @property
    def dim(self):
        return len(self.grid_shape)

    @property
    def dofs(self):
        return int(np.prod(self.grid_shape))

    def __matmul__(self, other):
        return self.matrix @ other

    def structurally_symmetric(self):
        pattern = (self.matrix != 0).astype(np.int8)
        return (pattern != pattern.T).nnz == 0


def laplacian_and_mass_stencils(dim, scheme):
    """Dimensionless (Laplacian-part, mass-part) stencil pair for a scheme.

    Schemes: "second-order", "fourth-order", or "jss(a,b,c)" (2D only). The
    pair satisfies H = (1/h^2) L - k^2 M for constant k.
    """
    key = str(scheme).strip().lower().replace(" ", "")
    jss = _JSS_RE.match(key)
    if jss is not None:
        if dim != 2:
            raise ValueError("jss stencils are available in 2D only")
        a, b, c = (float(g) for g in jss.groups())
        lap = np.array([
            [-(1 - a) / 2, -a, -(1 - a) / 2],
            [-a, 2 * a + 2, -a],
            [-(1 - a) / 2, -a, -(1 - a) / 2],
        ])
        mass = np.array([
            [(1 - b - c) / 4, c / 4, (1 - b - c) / 4],
            [c / 4, b, c / 4],
            [(1 - b - c) / 4, c / 4, (1 - b - c) / 4],
        ])
        return Stencil(lap), Stencil(mass)

    if key == "second-order":
        lap = np.zeros((3,) * dim)
        center = (1,) * dim
        lap[center] = 2.0 * dim
        for ax in range(dim):
            for side in (0, 2):
                idx = list(center)
                idx[ax] = side
                lap[tuple(idx)] = -1.0
        mass = np.ones((1,) * dim)
        return Stencil(lap), Stencil(mass)

    if key == "fourth-order":
        if dim == 2:
            lap = np.array([
                [-1.0, -4.0, -1.0],
                [-4.0, 20.0, -4.0],
                [-1.0, -4.0, -1.0],
            ]) / 6.0
            mass = np.array([
                [0.0, 1.0, 0.0],
                [1.0, 8.0, 1.0],
                [0.0, 1.0, 0.0],
            ]) / 12.0
        elif dim == 3:
            lap = np.zeros((3, 3, 3))
            mass = np.zeros((3, 3, 3))
            for off in np.ndindex(3, 3, 3):
                nz = sum(1 for o in off if o != 1)
                if nz == 0:
                    lap[off] = 4.0
                    mass[off] = 6.0 / 12.0
                elif nz == 1:
                    lap[off] = -1.0 / 3.0
                    mass[off] = 1.0 / 12.0
                elif nz == 2:
                    lap[off] = -1.0 / 6.0
        else:
            raise ValueError("the fourth-order scheme is defined in 2D and 3D")
        return Stencil(lap), Stencil(mass)

    raise ValueError(
        f"unknown scheme {scheme!r}; choose second-order, fourth-order, or jss(a,b,c)")


def attenuation_profile(problem):
    """Sponge attenuation gamma(x) on the padded grid.

    Zero in the interior; rises quadratically to gamma_max across each pad,
    with per-axis ramps summed and clamped at gamma_max in the corners.
    """
    shape = problem.padded_shape
    gamma = np.zeros(shape)
    if problem.pad == 0 or problem.gamma_max == 0:
        return gamma
    for ax, (lo, hi) in enumerate(zip(problem.pad_lo, problem.pad_hi)):
        t = np.zeros(shape[ax])
        if lo:
            t[:lo] = (lo - np.arange(lo)) / problem.pad
        if hi:
            t[shape[ax] - hi:] = (np.arange(hi) + 1.0) / problem.pad
        ramp = problem.gamma_max * t ** 2
        gamma += ramp.reshape([-1 if a == ax else 1 for a in range(problem.model.dim)])
    return np.minimum(gamma, problem.gamma_max)


def _padded_kappa2(problem):
    pad = list(zip(problem.pad_lo, problem.pad_hi))
    return np.pad(problem.model.kappa2, pad, mode="edge")


def _stencil_entries(shape, boundary, stencil, weight_of_offset):
    """COO triplets for stencil rows at interior nodes.

    weight_of_offset(offset, column_slices) returns the entry values for one
    offset; couplings into boundary nodes are dropped so the outermost layer
    stays fully decoupled.
    """
    dim = len(shape)
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    interior = tuple(slice(1, s - 1) for s in shape)
    rows_grid = idx[interior]
    rows, cols, vals = [], [], []
    for off, coeff in zip(stencil.offsets(), stencil.coeffs.ravel()):
        if coeff == 0:
            continue
        colslc = tuple(slice(1 + o, s - 1 + o) for o, s in zip(off, shape))
        keep = ~boundary[colslc]
        values = weight_of_offset(coeff, colslc)
        if np.ndim(values) == 0:
            values = np.broadcast_to(values, rows_grid.shape)
        rows.append(rows_grid[keep])
        cols.append(idx[colslc][keep])
        vals.append(np.ascontiguousarray(values[keep], dtype=complex))
    return rows, cols, vals


def _boundary_mask(shape):
    mask = np.ones(shape, dtype=bool)
    mask[tuple(slice(1, s - 1) for s in shape)] = False
    return mask


def assemble_operator(problem, scheme, alpha=1.0, beta=0.0):
    """Assemble (1/h^2) L - (alpha^2 + i(gamma + beta)) k^2(x) M on the padded grid.

    alpha is the real wavenumber shift, beta the relative complex shift (the
    shift value is beta * k^2). The heterogeneous mass term samples k^2 and
    gamma at the neighbor node of each mass-stencil offset. Outermost rows are
    identity with their couplings removed in both directions.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    lap, mass = laplacian_and_mass_stencils(problem.model.dim, scheme)
    shape = problem.padded_shape
    h = problem.model.h
    boundary = _boundary_mask(shape)
    k2 = problem.omega ** 2 * _padded_kappa2(problem)
    coef = (alpha ** 2 + 1j * (attenuation_profile(problem) + beta)) * k2

    rows, cols, vals = _stencil_entries(
        shape, boundary, lap, lambda c, slc: complex(c) / h ** 2)
    mrows, mcols, mvals = _stencil_entries(
        shape, boundary, mass, lambda c, slc: -c * coef[slc])
    rows += mrows
    cols += mcols
    vals += mvals

    bidx = np.arange(int(np.prod(shape))).reshape(shape)[boundary]
    rows.append(bidx)
    cols.append(bidx)
    vals.append(np.ones(bidx.size, dtype=complex))

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(int(np.prod(shape)),) * 2).tocsr()
    matrix.sum_duplicates()
    return SparseOperator(matrix, shape, h)


def mass_matrix(problem, scheme):
    """The k^2-weighted mass operator k^2 M with neighbor-node sampling.

    Boundary rows are zero, matching the decoupled rows of assemble_operator,
    so assemble(alpha, beta) - assemble(1, 0) equals
    (1 - alpha^2) * mass_matrix - i * beta * mass_matrix exactly.
    """
    _, mass = laplacian_and_mass_stencils(problem.model.dim, scheme)
    shape = problem.padded_shape
    boundary = _boundary_mask(shape)
    k2 = problem.omega ** 2 * _padded_kappa2(problem)
    rows, cols, vals = _stencil_entries(
        shape, boundary, mass, lambda c, slc: c * k2[slc])
    n = int(np.prod(shape))
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    return SparseOperator(matrix, shape, problem.model.h)


def point_source(problem):
    """Discrete delta of strength 1/h^dim at the source node, on the padded grid."""
    rhs = np.zeros(problem.padded_shape, dtype=complex)
    index = tuple(s + lo for s, lo in zip(problem.source, problem.pad_lo))
    rhs[index] = 1.0 / problem.model.h ** problem.model.dim
    return rhs
