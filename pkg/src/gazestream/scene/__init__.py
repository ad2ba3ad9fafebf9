"""Scene assets: units, LoD ladders, serialization and rasterization."""

from .generate import (dolly_cameras, grid_patch_mesh, heightfield_asset,
                       patch_mesh_asset)
from .io import import_heightmap, import_obj, load_scene, save_scene
from .ladder import build_heightfield_ladder, build_mesh_ladder
from .raster import (
    FragmentTable,
    LayerBuffers,
    fragment_table,
    gather_triangles,
    hypothetical_frame,
    rasterize,
    render_layers,
    render_triangles,
)
from .types import (
    BACKGROUND_ID,
    HEIGHTFIELD,
    MESH,
    Camera,
    Frame,
    LoDState,
    SceneAsset,
    Unit,
)

__all__ = [
    "BACKGROUND_ID", "HEIGHTFIELD", "MESH",
    "Camera", "Frame", "FragmentTable", "LayerBuffers", "LoDState",
    "SceneAsset", "Unit",
    "build_heightfield_ladder", "build_mesh_ladder", "dolly_cameras",
    "fragment_table", "gather_triangles", "grid_patch_mesh",
    "heightfield_asset",
    "hypothetical_frame", "import_heightmap", "import_obj",
    "load_scene", "patch_mesh_asset", "rasterize", "render_layers",
    "render_triangles", "save_scene",
]
