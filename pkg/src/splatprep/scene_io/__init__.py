from splatprep.scene_io.colmap import (
    encode_binary,
    encode_text,
    parse_colmap_model,
    read_model,
    write_model,
)
from splatprep.scene_io.embedding import EmbeddingVector, load_embedding, write_embedding
from splatprep.scene_io.masks import MaskConsistencyWarning, SegmentMask, load_mask, write_mask
from splatprep.scene_io.model import (
    CameraIntrinsics,
    CameraPose,
    SceneModel,
    ScenePoint,
    qvec2rotmat,
    rotmat2qvec,
)
from splatprep.scene_io.ply import read_ply, read_ply_arrays, write_ply, write_ply_arrays

__all__ = [
    "CameraIntrinsics", "CameraPose", "EmbeddingVector", "MaskConsistencyWarning", "SceneModel",
    "ScenePoint", "SegmentMask", "encode_binary", "encode_text", "load_embedding", "load_mask",
    "parse_colmap_model", "qvec2rotmat", "read_model", "read_ply", "read_ply_arrays", "rotmat2qvec",
    "write_embedding", "write_mask", "write_model", "write_ply", "write_ply_arrays",
]
