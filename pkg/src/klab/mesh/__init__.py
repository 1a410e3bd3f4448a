"""Discretized manifolds: generators, metric scaling, coverings and surgery."""

from .complex import Collar, Mesh, relative_orientation
from .generators import cylinder, disk, gen_mesh, handle, products_s1s1s2, sphere, sphere_disk, torus
from .io import load_mesh, mesh_from_dict, mesh_to_dict, save_mesh
from .rewrite import (
    CoveringMap,
    SurgeryPlan,
    connected_sum,
    covering,
    disjoint_union,
    double,
    glue,
    scale_metric,
    slab,
    sphere_zero_plan,
    submesh,
    surgery,
    torus_loop_plan,
)

__all__ = [
    "Collar", "Mesh", "relative_orientation", "gen_mesh", "sphere", "torus", "cylinder", "disk",
    "handle", "sphere_disk", "products_s1s1s2", "slab", "load_mesh", "save_mesh", "mesh_from_dict", "mesh_to_dict",
    "CoveringMap", "SurgeryPlan", "connected_sum", "covering", "disjoint_union", "double",
    "glue", "scale_metric", "sphere_zero_plan", "submesh", "surgery", "torus_loop_plan",
]
