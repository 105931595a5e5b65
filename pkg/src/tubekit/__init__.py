"""Anchor-free action tubelets: target encoding, losses, decoding, linking and evaluation."""

from .core import BBox, GridSpec, Instance, Tube, Tubelet, Video, grid_of
from .decoder import decode_tubelets, extract_peaks
from .encoder import encode_clip
from .evaluator import frame_map, tube_iou, video_map
from .linker import Linker, StreamSession, link_tubelets
from .losses import box_loss, center_focal_loss, clip_loss, movement_loss

__version__ = "0.1.0"

__all__ = ["BBox", "GridSpec", "Instance", "Tube", "Tubelet", "Video", "grid_of",
           "decode_tubelets", "extract_peaks", "encode_clip", "frame_map", "tube_iou",
           "video_map", "Linker", "StreamSession", "link_tubelets",
           "box_loss", "center_focal_loss", "clip_loss", "movement_loss"]
