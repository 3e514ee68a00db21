"""Frame files: binary PPM (P6, maxval 255) and PNG, as HxWx3 uint8 arrays."""

from __future__ import annotations

import base64
import io
import os
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
from PIL import Image

PathLike = Union[str, "os.PathLike[str]"]


def _ppm_tokens(data: bytes, count: int) -> Tuple[list, int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def decode_ppm(data: bytes) -> np.ndarray:
    (magic, w, h, maxval), offset = _ppm_tokens(data, 4)
    if magic != b"P6":
        raise ValueError(f"unsupported PPM magic {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"only 8-bit PPM supported, maxval={maxval}")
    raster = data[offset:offset + w * h * 3]
    if len(raster) != w * h * 3:
        raise ValueError("truncated PPM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    img = _check(img)
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(_check(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_base64(img: np.ndarray) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


def _check(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 uint8 image, got {img.dtype} {img.shape}")
    return np.ascontiguousarray(img)


def read_image(path: PathLike) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return decode_ppm(path.read_bytes())
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(path: PathLike, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        path.write_bytes(encode_ppm(img))
    else:
        path.write_bytes(encode_png(img))


class DirectoryFrameSource:
    """Loads ``video.frame_paths[i]`` relative to ``root``; caches decoded frames."""

    def __init__(self, root: PathLike):
        self.root = Path(root)
        self._cache: Dict[Tuple[str, int], np.ndarray] = {}

    def load(self, video, frame_index: int) -> np.ndarray:
        key = (video.video_id, frame_index)
        if key not in self._cache:
            if not video.frame_paths:
                raise ValueError(f"video {video.video_id!r} lists no frame_paths")
            img = read_image(self.root / video.frame_paths[frame_index])
            if img.shape[:2] != (video.height, video.width):
                raise ValueError(
                    f"{video.frame_paths[frame_index]}: frame is {img.shape[1]}x{img.shape[0]}, "
                    f"annotation says {video.width}x{video.height}"
                )
            self._cache[key] = img
        return self._cache[key]
