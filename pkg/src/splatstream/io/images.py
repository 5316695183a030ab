"""Raster decoding and attachment of pixels to posed frames.

Binary PPM (P6) is decoded by hand so the pipeline has no hard imaging
dependency; PNG works through the same interface when Pillow is
installed.  Pixels come out as H x W x 3 floats in [0, 1].
"""

from pathlib import Path

import numpy as np

from ..errors import InvalidParameter


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 buffer to floats in [0, 1].

    Header comments are honored; the maximum value must fit one byte.
    """
    tokens = []
    pos = 0
    # the header is exactly four tokens: magic, width, height, maxval
    while len(tokens) < 4:
        if pos >= len(data):
            raise InvalidParameter("truncated PPM header")
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise InvalidParameter(f"not a binary PPM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise InvalidParameter("non-numeric PPM header field") from exc
    if width <= 0 or height <= 0:
        raise InvalidParameter(f"bad PPM dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise InvalidParameter(f"unsupported PPM maxval {maxval}")
    pos += 1  # single whitespace byte after the header
    expected = width * height * 3
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise InvalidParameter(
            f"truncated PPM raster: expected {expected} bytes, got {len(raster)}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return arr.astype(np.float64) / float(maxval)


def encode_ppm(pixels: np.ndarray) -> bytes:
    """Quantize floats in [0, 1] to a binary P6 buffer."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidParameter(f"expected HxWx3 pixels, got shape {arr.shape}")
    quant = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = quant.shape
    return b"P6\n%d %d\n255\n" % (w, h) + quant.tobytes()


def _decode_png(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:
        raise InvalidParameter(
            f"{path}: PNG support needs the optional Pillow dependency"
        ) from exc
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def read_image(path) -> np.ndarray:
    """Decode one raster file by extension (.ppm native, .png via Pillow)."""
    path = Path(path)
    if not path.is_file():
        raise InvalidParameter(f"missing image file: {path}")
    if path.suffix.lower() == ".ppm":
        return decode_ppm(path.read_bytes())
    if path.suffix.lower() == ".png":
        return _decode_png(path)
    raise InvalidParameter(f"{path}: unsupported image format {path.suffix!r}")


def downscale_pixels(pixels: np.ndarray, factor: int) -> np.ndarray:
    """Box-average by an integer factor that divides both dimensions."""
    if factor == 1:
        return pixels
    h, w, _ = pixels.shape
    if h % factor or w % factor:
        raise InvalidParameter(
            f"downscale {factor} does not divide image size {w}x{h}"
        )
    blocks = pixels.reshape(h // factor, factor, w // factor, factor, 3)
    return blocks.mean(axis=(1, 3))


def load_images(bundle, images_dir, downscale: int = 1) -> None:
    """Attach decoded pixels to every frame of the bundle, in place.

    A downscale factor shrinks pixels by box averaging and divides the
    intrinsics by the same factor so reprojection stays consistent.
    """
    if downscale < 1 or int(downscale) != downscale:
        raise InvalidParameter(f"downscale must be a positive integer, got {downscale}")
    images_dir = Path(images_dir)
    for frame in bundle.frames.values():
        arr = read_image(images_dir / frame.name)
        if arr.shape[:2] != (frame.height, frame.width):
            raise InvalidParameter(
                f"{frame.name}: decoded size {arr.shape[1]}x{arr.shape[0]} does not "
                f"match intrinsics {frame.width}x{frame.height}"
            )
        if downscale > 1:
            arr = downscale_pixels(arr, int(downscale))
            frame.width //= int(downscale)
            frame.height //= int(downscale)
            frame.fx /= downscale
            frame.fy /= downscale
            frame.cx /= downscale
            frame.cy /= downscale
        frame.attach_pixels(arr)
