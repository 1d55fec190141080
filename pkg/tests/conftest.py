"""Shared problem builders for the test suite."""

from rscgc.discretization import HelmholtzProblem, make_model, omega_for_ppw


def build_problem(dim, cells, G, kind="homogeneous", kappa2=(1.0, 1.0),
                  pad=20, **kwargs):
    """Cube problem with `cells` interior cells per axis and h = 1/cells."""
    model = make_model(kind, kappa2, (cells,) * dim, 1.0 / cells)
    return HelmholtzProblem(model, omega_for_ppw(model, G), pad=pad, **kwargs)
