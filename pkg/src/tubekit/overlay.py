"""Static per-frame drawings of ground truth and detected tubes."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from PIL import Image, ImageDraw

from .core import Tube, Video
from .io import atomic_write_bytes

GT_COLOR = (40, 180, 60)
PALETTE = [(220, 50, 47), (38, 139, 210), (181, 137, 0), (211, 54, 130), (108, 113, 196),
           (42, 161, 152), (203, 75, 22), (133, 153, 0)]


def render_frame(video: Video, tubes: Sequence[Tube], frame: int, scale: int = 2) -> Image.Image:
    """One RGB image: ground-truth boxes in green, tubes coloured by class with their score."""
    img = Image.new("RGB", (video.W * scale, video.H * scale), (250, 250, 250))
    draw = ImageDraw.Draw(img)
    for inst in video.instances:
        if inst.start_frame <= frame <= inst.end_frame:
            box = inst.boxes[frame - inst.start_frame] * scale
            draw.rectangle([float(v) for v in box], outline=GT_COLOR, width=3)
            draw.text((float(box[0]) + 3, float(box[3]) - 12), f"gt {inst.class_id}", fill=GT_COLOR)
    for tube in tubes:
        if tube.start_frame <= frame <= tube.end_frame:
            color = PALETTE[tube.class_id % len(PALETTE)]
            box = tube.boxes[frame - tube.start_frame] * scale
            draw.rectangle([float(v) for v in box], outline=color, width=1)
            draw.text((float(box[0]) + 3, float(box[1]) + 2),
                      f"c{tube.class_id} {tube.score:.2f}", fill=color)
    draw.text((4, 4), f"{video.video_id} frame {frame}", fill=(0, 0, 0))
    return img


def png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def write_overlays(video: Video, tubes: Sequence[Tube], out_dir,
                   frames: Optional[Iterable[int]] = None, scale: int = 2) -> List[Path]:
    """Write ``frame_XXXXX.png`` for each requested frame (all frames by default)."""
    out_dir = Path(out_dir)
    paths = []
    for f in (range(video.num_frames) if frames is None else frames):
        if not 0 <= f < video.num_frames:
            raise ValueError(f"frame {f} outside video of {video.num_frames} frames")
        path = out_dir / f"frame_{f:05d}.png"
        atomic_write_bytes(path, png_bytes(render_frame(video, tubes, f, scale)))
        paths.append(path)
    return paths
