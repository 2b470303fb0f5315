"""Built-in scenarios.

Four scalar systems ``xdot = f(x) + w + u`` with safe set ``{x >= 0}``
and one planar single integrator with the unit disk as safe set.  The
scalar ones come in two flavours of boundary behaviour:

* ``example2``: drift pushes out of the safe set, the nominal pulls back in;
* ``example3``: drift pushes in, the nominal pushes out.

The ``*_revisited`` variants use the same dynamics with the gain-margin
improved filter as their default.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .comparison import make_linear_ek, make_linear_k, make_quadratic
from .filters import FilterKind, FilterSpec
from .plant import BarrierCandidate, Box, ControlAffinePlant

INF = float("inf")


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    anchor: str
    plant: ControlAffinePlant
    barrier: BarrierCandidate
    nominal: Callable[[np.ndarray], np.ndarray]
    default_filter: FilterKind
    box: Box
    interior_x0: tuple = ()
    exterior_x0: tuple = ()
    far_exterior_x0: tuple = ()
    boundary_adjacent_x0: tuple = ()
    expected_margin: Optional[tuple] = None
    params: dict = field(default_factory=dict, compare=False)

    def filter_spec(self, kind: Optional[FilterKind] = None, uses_gamma: bool = False) -> FilterSpec:
        return FilterSpec(kind or self.default_filter, self.barrier, uses_gamma)

    def closed_loop_u(self, kind: Optional[FilterKind] = None, uses_gamma: bool = False):
        """State feedback ``x -> u0(x) + override`` for the chosen filter."""
        from .filters import evaluate

        spec = self.filter_spec(kind, uses_gamma)
        return lambda x: evaluate(spec, self.plant, x, self.nominal(x)).u_total


def _scalar_barrier(alpha_slope=1.0, gamma_c=0.5, rho_slope=1.0) -> BarrierCandidate:
    return BarrierCandidate(
        h=lambda x: x[..., 0],
        grad_h=lambda x: np.ones_like(x),
        alpha=make_linear_ek(alpha_slope),
        gamma=make_quadratic(gamma_c),
        rho=make_linear_k(rho_slope),
        set_distance=lambda x: np.maximum(0.0, -x[..., 0]),
        name="h=x",
    )


def _scalar_plant(a: float, c: float, name: str) -> ControlAffinePlant:
    return ControlAffinePlant(
        state_dim=1, dist_dim=1, ctrl_dim=1,
        f=lambda x: a * x + c,
        g1=lambda x: np.ones(x.shape + (1,)),
        g2=lambda x: np.ones(x.shape + (1,)),
        name=name,
    )


def _affine_nominal(k: float, c: float):
    return lambda x: k * x + c


def scalar_scenario(name: str, drift=(-11.1, -1.0), nominal=(10.1, 1.0), *,
                    filter_kind=FilterKind.INVERSE_OPTIMAL, description="",
                    anchor="", expected_margin=None, alpha_slope=1.0,
                    gamma_c=0.5, rho_slope=1.0) -> Scenario:
    """Scalar scenario ``xdot = a x + c + w + u`` with nominal ``k x + d``."""
    return Scenario(
        name=name,
        description=description or f"xdot = {drift[0]:g}x{drift[1]:+g} + w + u, u0 = {nominal[0]:g}x{nominal[1]:+g}",
        anchor=anchor,
        plant=_scalar_plant(drift[0], drift[1], name),
        barrier=_scalar_barrier(alpha_slope, gamma_c, rho_slope),
        nominal=_affine_nominal(*nominal),
        default_filter=filter_kind,
        box=Box(np.array([-2.0]), np.array([2.0])),
        interior_x0=(0.0, 0.5, 1.0),
        exterior_x0=(-0.5,),
        far_exterior_x0=(-5.0,),
        boundary_adjacent_x0=(0.0, 0.05, 0.2),
        expected_margin=expected_margin,
        params={"drift": list(drift), "nominal": list(nominal), "alpha_slope": alpha_slope,
                "gamma_c": gamma_c, "rho_slope": rho_slope},
    )


def _disk2d() -> Scenario:
    barrier = BarrierCandidate(
        h=lambda x: 1.0 - np.sum(x * x, axis=-1),
        grad_h=lambda x: -2.0 * x,
        alpha=make_linear_ek(1.0),
        gamma=make_quadratic(0.5),
        rho=make_linear_k(1.0),
        set_distance=lambda x: np.maximum(0.0, np.linalg.norm(x, axis=-1) - 1.0),
        name="h=1-|x|^2",
    )
    eye = np.eye(2)
    plant = ControlAffinePlant(
        state_dim=2, dist_dim=2, ctrl_dim=2,
        f=lambda x: np.zeros_like(x),
        g1=lambda x: np.broadcast_to(eye, x.shape[:-1] + (2, 2)),
        g2=lambda x: np.broadcast_to(eye, x.shape[:-1] + (2, 2)),
        name="disk2d",
    )
    r_ext = float(np.sqrt(1.5))
    return Scenario(
        name="disk2d",
        description="planar single integrator kept in the unit disk; nominal u0 = x drives radially outward",
        anchor="non-scalar coverage: vector L_g2 h, drift neutral on the boundary",
        plant=plant,
        barrier=barrier,
        nominal=lambda x: 1.0 * x,
        default_filter=FilterKind.INVERSE_OPTIMAL,
        box=Box(np.array([-2.0, -2.0]), np.array([2.0, 2.0])),
        interior_x0=((0.0, 0.5), (0.5, 0.5), (0.0, 1.0)),
        exterior_x0=((r_ext, 0.0),),
        far_exterior_x0=((float(np.sqrt(6.0)), 0.0),),
        boundary_adjacent_x0=((1.0, 0.0), (0.0, 0.95), (0.6, 0.6)),
        expected_margin=None,
    )


def _build_registry() -> dict[str, Scenario]:
    ex2 = scalar_scenario(
        "example2", (-11.1, -1.0), (10.1, 1.0),
        description="drift acts unsafely, nominal acts safely on the boundary; standard inverse-optimal filter",
        anchor="standard filter safe exactly for sigma >= 1",
        expected_margin=(1.0, INF),
    )
    ex3 = scalar_scenario(
        "example3", (9.1, 1.0), (-10.1, -1.0),
        description="drift acts safely, nominal acts unsafely on the boundary; standard inverse-optimal filter",
        anchor="standard filter safe exactly for sigma in [1/2, 1]",
        expected_margin=(0.5, 1.0),
    )
    ex2r = replace(
        ex2, name="example2_revisited", default_filter=FilterKind.IMPROVED_ZERO_DIST,
        description="example2 dynamics under the gain-margin improved filter",
        anchor="improved filter: margin [1/2, inf) and global attraction to the safe set",
        expected_margin=(0.5, INF),
    )
    ex3r = replace(
        ex3, name="example3_revisited", default_filter=FilterKind.IMPROVED_ZERO_DIST,
        description="example3 dynamics under the gain-margin improved filter",
        anchor="improved filter: margin [1/2, inf) and global attraction to the safe set",
        expected_margin=(0.5, INF),
    )
    disk = _disk2d()
    return {s.name: s for s in (ex2, ex3, ex2r, ex3r, disk)}


REGISTRY: dict[str, Scenario] = _build_registry()


def get_scenario(name: str) -> Scenario:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(REGISTRY)}") from None


def list_scenarios() -> str:
    """One line per built-in: name, description, and the behaviour it anchors."""
    lines = [f"{s.name:<20} {s.description}  [{s.anchor}]" for s in REGISTRY.values()]
    return "\n".join(lines)
