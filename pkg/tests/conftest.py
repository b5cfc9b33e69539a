import numpy as np
import pytest

from gradctl.constraints import AvgInSpace, ConstraintSpec
from gradctl.geometry import build_mesh
from gradctl.model import (ConstantDiffusion, DistributedControl, ProblemSpec, QuadGrad,
                           RationalBoundedDiffusion, SolverOptions, TimeOnlyControl, Zero)


def sine(mesh, amp=1.0):
    scaled = mesh.nodes / np.asarray(mesh.extents)
    return amp * np.prod(np.sin(np.pi * scaled), axis=1)


def make_problem(dim=1, n=8, N=6, T=0.2, nl=None, xi=None, control="distributed",
                 y0_amp=0.5, target_amp=0.0, gamma=0.1, constraints=None, **kw):
    if dim == 1:
        mesh = build_mesh(1, [1.0], n, dirichlet_sides={"left", "right"})
    else:
        mesh = build_mesh(2, [1.0, 1.0], n, n, dirichlet_sides={"left", "right", "bottom", "top"})
    if control == "distributed":
        cmap = DistributedControl(np.ones(mesh.n_nodes))
    else:
        cmap = TimeOnlyControl(sine(mesh))
    kw.setdefault("solver", SolverOptions(newton_tol=1e-13))
    return ProblemSpec(mesh, T, N, xi or ConstantDiffusion(1.0), 1.0, nl or Zero(), cmap,
                       sine(mesh, y0_amp), sine(mesh, target_amp), gamma,
                       constraints=constraints, **kw)


@pytest.fixture
def quad_problem():
    """Small 2D QuadGrad problem with state-dependent diffusion and an active penalty."""
    cs = ConstraintSpec((AvgInSpace(2.0, 0.05),), penalty=100.0)
    return make_problem(dim=2, n=5, N=5, nl=QuadGrad(), xi=RationalBoundedDiffusion(1.0, 0.5),
                        gamma=0.01, constraints=cs)
