import numpy as np
import pytest

from streamperc.geometry import Box3D
from streamperc.kitti_io import LabeledBox


def make_box(x=0.0, y=0.0, z=0.0, h=1.5, w=1.6, l=3.9, yaw=0.0, score=1.0,
             class_id=0, track_id=None):
    return Box3D(center=(x, y, z), dims=(h, w, l), yaw=yaw, score=score,
                 class_id=class_id, track_id=track_id)


def make_gt(frame=0, track_id=0, class_name="Car", x=0.0, y=0.0, z=10.0,
            h=1.5, w=1.6, l=3.9, yaw=0.0, bbox_height=50.0, occlusion=0,
            truncation=0.0, score=None):
    return LabeledBox(
        frame_index=frame,
        track_id=track_id,
        class_name=class_name,
        truncation=truncation,
        occlusion=occlusion,
        alpha=0.0,
        bbox2d=(100.0, 100.0, 150.0, 100.0 + bbox_height),
        dims=(h, w, l),
        location=(x, y, z),
        rotation_y=yaw,
        score=score,
    )


def textured_grid(h, w, c, seed=0):
    """Random grid with distinct per-pixel feature vectors."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 1.0, size=(h, w, c))


def translate_grid(g, dr, dc):
    """Shift grid content by (dr, dc); vacated cells are zero."""
    h, w, c = g.shape
    out = np.zeros_like(g)
    src_r = slice(max(0, -dr), min(h, h - dr))
    src_c = slice(max(0, -dc), min(w, w - dc))
    dst_r = slice(max(0, dr), min(h, h + dr))
    dst_c = slice(max(0, dc), min(w, w + dc))
    out[dst_r, dst_c, :] = g[src_r, src_c, :]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
