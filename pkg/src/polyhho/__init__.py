"""Pressure-robust hybrid high-order solver for steady incompressible
Navier-Stokes on general polygonal meshes."""

from .mesh import (PolyMesh, build_mesh, subtriangulate, gen_cartesian,
                   gen_hexagonal, gen_kershaw, regularity_report,
                   save_mesh, load_mesh, MeshError)
from .local import (CellContext, GlobalDofMap, LocalDofs, build_contexts,
                    interpolate_global, seminorm_1h)
from .rt import (ReconstructionError, RTField, RTSpace, boundary_lifting,
                 global_reconstruction, reconstruction_map, rt_space,
                 solve_local_mixed)

__version__ = "0.1.0"
