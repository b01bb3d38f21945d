"""Registration, blending and meshing of overlapping local signed distance fields.

A scene is split into overlapping nodes, each holding a dense SDF and color grid in
its own frame. Adjacent nodes are registered from shared camera poses and refined
photometrically, transforms are chained along a minimum spanning tree, and the
placed fields are blended into one global SDF for meshing.
"""

from .blend import BlendConfig, GlobalField, edit_node, eval_global_sdf, seam_profile
from .fields import (Aabb, AnalyticField, AnalyticSdf, ColorGrid, NodeField, SdfGrid, bake,
                     read_grid, write_grid)
from .graph import (GraphEdge, GraphNode, SdfGraph, build_edges, minimum_spanning_tree,
                    propagate_transforms)
from .manifest import Manifest, ManifestError
from .mesh import (MetricReport, TriangleMesh, chamfer, evaluate_mesh, export_mesh, f_score,
                   marching_cubes, mean_abs_sdf, read_mesh, sample_surface)
from .pipeline import PipelineConfig, PipelineError, run_pipeline
from .register import (RefineConfig, RegistrationError, compute_masks, init_registration,
                       refine_registration, transform_pose)
from .render import (CameraIntrinsics, CameraPose, Ray, RenderConfig, neus_alpha, render_image,
                     render_ray)
from .scene import SceneSpec, gen, scene_presets
from .transforms import SimilarityTransform

__version__ = "0.1.0"
