"""Fourth-order multiscale analysis of periodic composite Kirchhoff plates.

Cell problems, the homogenized plate and the DNS reference are all solved
with the Morley element on structured triangle meshes.
"""
from .cell import CellFunctionSet, CellProblem, HomogenizedTensor, solve_cell_functions
from .config import ConfigError, RunConfig, load_config, parse_config
from .macro import HomogenizedSolution, recover_derivatives, solve_homogenized
from .material import BendingTensor, CoefficientField, isotropic_bending_tensor
from .mesh import MaterialRaster, TriMesh, assign_materials, build_structured_mesh, locate_point
from .morley import MorleySpace, assemble_bilinear, assemble_load, solve
from .multiscale import MultiscaleField, displacement_field, error_norms, reconstruct, solve_dns
from .pipeline import run_pipeline, sweep_epsilon

__all__ = [
    "BendingTensor", "CellFunctionSet", "CellProblem", "CoefficientField", "ConfigError",
    "HomogenizedSolution", "HomogenizedTensor", "MaterialRaster", "MorleySpace", "MultiscaleField",
    "RunConfig", "TriMesh", "assemble_bilinear", "assemble_load", "assign_materials",
    "build_structured_mesh", "displacement_field", "error_norms", "isotropic_bending_tensor",
    "load_config", "locate_point", "parse_config", "reconstruct", "recover_derivatives",
    "run_pipeline", "solve", "solve_cell_functions", "solve_dns", "solve_homogenized", "sweep_epsilon",
]
