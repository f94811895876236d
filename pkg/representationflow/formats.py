"""
On-disk formats: Middlebury ``.flo`` flow files, binary PGM/PPM images, ``RFW1`` tensor checkpoints and CSV reports.
Every writer goes through :func:`atomic_write` (temporary file in the target directory, then rename).

Checkpoint layout, all integers little-endian::

    b"RFW1"
    uint32 tensor count
    per tensor: uint32 name length, UTF-8 name, uint32 rank, uint32 dims[rank], uint64 absolute data offset
    payloads: float64 little-endian, row-major, in manifest order
"""

import csv
import io
import os
import tempfile
import typing as tp

import numpy as np

from logging import getLogger

from .constants import CHECKPOINT_MAGIC, FLO_MAGIC
from .exceptions import MalformedFileException, ShapeMismatchException
from .tensorcore import FeatureMap
from .tvl1 import FlowField
from .types import ArrayDict
from .utils import luma

logger = getLogger(__name__)

PNM_MAGICS = {b"P5": 1, b"P6": 3}


def atomic_write(path: str, payload: bytes) -> None:
    """
    Write ``payload`` to ``path`` so readers never observe a partial file.

    :param path: Destination path.
    :param payload: File contents.

    """

    directory = os.path.dirname(os.path.abspath(path))
    handle, temp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(handle, "wb") as temp_file:
            temp_file.write(payload)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise
    logger.info(f"Wrote {len(payload)} bytes to {path}")


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as file:
        return file.read()


def encode_flo(flow: FlowField) -> bytes:
    """
    :param flow: Flow field.

    :return: ``.flo`` bytes: float32 magic, int32 width, int32 height, interleaved float32 ``(u, v)``, row-major.

    """

    u, v = flow.u_x.plane(), flow.u_y.plane()
    height, width = u.shape
    body = np.stack([u, v], axis=-1).astype("<f4")
    header = np.array([FLO_MAGIC], dtype="<f4").tobytes() + np.array([width, height], dtype="<i4").tobytes()
    return header + body.tobytes()


def decode_flo(payload: bytes) -> FlowField:
    """
    Parse ``.flo`` bytes into a standard-precision flow field.

    :param payload: File contents.

    :return: FlowField.

    """

    if len(payload) < 12:
        raise MalformedFileException(f"Flow file too short: {len(payload)} bytes")
    magic = np.frombuffer(payload, dtype="<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise MalformedFileException(f"Invalid flow file magic {magic}")
    width, height = (int(value) for value in np.frombuffer(payload, dtype="<i4", count=2, offset=4))
    if width < 1 or height < 1:
        raise MalformedFileException(f"Invalid flow file dimensions {width}x{height}")
    expected = 12 + 8 * width * height
    if len(payload) != expected:
        raise MalformedFileException(f"Flow file body holds {len(payload)} bytes, expected {expected}")
    body = np.frombuffer(payload, dtype="<f4", offset=12).reshape(height, width, 2).astype(np.float32)
    return FlowField.from_arrays(body[..., 0], body[..., 1])


def write_flo(path: str, flow: FlowField) -> None:
    atomic_write(path, encode_flo(flow))


def read_flo(path: str) -> FlowField:
    return decode_flo(_read_bytes(path))


def _pnm_tokens(payload: bytes, count: int) -> tp.Tuple[tp.List[bytes], int]:
    """
    Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    :return: Tokens and the offset of the single whitespace byte that ends the header.

    """

    tokens: tp.List[bytes] = []
    position = 0
    while len(tokens) < count:
        while position < len(payload) and payload[position : position + 1].isspace():
            position += 1
        if position >= len(payload):
            raise MalformedFileException("Truncated image header")
        if payload[position : position + 1] == b"#":
            newline = payload.find(b"\n", position)
            position = len(payload) if newline < 0 else newline + 1
            continue
        start = position
        while position < len(payload) and not payload[position : position + 1].isspace():
            position += 1
        tokens.append(payload[start:position])
    return tokens, position


def decode_pnm(payload: bytes) -> np.ndarray:
    """
    Parse a binary 8-bit PGM (P5) or PPM (P6) image.

    :param payload: File contents.

    :return: ``(H, W)`` uint8 array for PGM, ``(H, W, 3)`` for PPM.

    """

    tokens, position = _pnm_tokens(payload, 4)
    magic = tokens[0]
    if magic not in PNM_MAGICS:
        raise MalformedFileException(f"Unsupported image magic {magic!r}, only binary P5/P6 are read")
    try:
        width, height, max_value = (int(token) for token in tokens[1:])
    except ValueError as error:
        raise MalformedFileException(f"Invalid image header {tokens!r}") from error
    if width < 1 or height < 1:
        raise MalformedFileException(f"Invalid image dimensions {width}x{height}")
    if not 0 < max_value < 256:
        raise MalformedFileException(f"Only 8-bit images are supported, got maxval {max_value}")

    planes = PNM_MAGICS[magic]
    size = width * height * planes
    body = payload[position + 1 : position + 1 + size]
    if len(body) != size:
        raise MalformedFileException(f"Image body holds {len(body)} bytes, expected {size}")
    image = np.frombuffer(body, dtype=np.uint8).reshape((height, width, planes))
    return image[..., 0].copy() if planes == 1 else image.copy()


def encode_pnm(image: np.ndarray) -> bytes:
    """
    :param image: ``(H, W)`` or ``(H, W, 3)`` uint8 array.

    :return: P5 or P6 bytes.

    """

    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[-1] != 3):
        raise ShapeMismatchException(f"Expected an (H, W) or (H, W, 3) uint8 image, got {image.dtype} {image.shape}")
    magic = b"P5" if image.ndim == 2 else b"P6"
    height, width = image.shape[:2]
    return magic + f"\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(image).tobytes()


def read_pnm(path: str) -> np.ndarray:
    return decode_pnm(_read_bytes(path))


def write_pnm(path: str, image: np.ndarray) -> None:
    atomic_write(path, encode_pnm(image))


def encode_checkpoint(state: ArrayDict) -> bytes:
    """
    Serialize named tensors into the ``RFW1`` container.

    :param state: Name to array mapping; values are stored as float64.

    :return: Container bytes.

    """

    names = list(state)
    arrays = [np.ascontiguousarray(np.asarray(state[name], dtype="<f8")) for name in names]
    encoded_names = [name.encode("utf-8") for name in names]

    manifest_size = len(CHECKPOINT_MAGIC) + 4
    for encoded, array in zip(encoded_names, arrays):
        manifest_size += 4 + len(encoded) + 4 + 4 * array.ndim + 8

    manifest = io.BytesIO()
    manifest.write(CHECKPOINT_MAGIC)
    manifest.write(np.array([len(names)], dtype="<u4").tobytes())
    offset = manifest_size
    for encoded, array in zip(encoded_names, arrays):
        manifest.write(np.array([len(encoded)], dtype="<u4").tobytes())
        manifest.write(encoded)
        manifest.write(np.array([array.ndim] + list(array.shape), dtype="<u4").tobytes())
        manifest.write(np.array([offset], dtype="<u8").tobytes())
        offset += array.nbytes
    return manifest.getvalue() + b"".join(array.tobytes() for array in arrays)


def decode_checkpoint(payload: bytes) -> ArrayDict:
    """
    Parse an ``RFW1`` container.

    :param payload: Container bytes.

    :return: Name to float64 array mapping, in manifest order.

    """

    if payload[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise MalformedFileException("Invalid checkpoint magic")

    def _uint(dtype: str, position: int, count: int = 1) -> np.ndarray:
        width = np.dtype(dtype).itemsize * count
        if position + width > len(payload):
            raise MalformedFileException("Truncated checkpoint manifest")
        return np.frombuffer(payload, dtype=dtype, count=count, offset=position)

    position = len(CHECKPOINT_MAGIC)
    count = int(_uint("<u4", position)[0])
    position += 4
    state: ArrayDict = {}
    for _ in range(count):
        name_length = int(_uint("<u4", position)[0])
        position += 4
        if position + name_length > len(payload):
            raise MalformedFileException("Truncated checkpoint tensor name")
        name = payload[position : position + name_length].decode("utf-8")
        position += name_length
        rank = int(_uint("<u4", position)[0])
        position += 4
        shape = tuple(int(dim) for dim in _uint("<u4", position, rank)) if rank else ()
        position += 4 * rank
        offset = int(_uint("<u8", position)[0])
        position += 8
        size = int(np.prod(shape)) * 8
        if offset + size > len(payload):
            raise MalformedFileException(f"Tensor {name} payload lies outside the file")
        values = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=offset)
        state[name] = values.reshape(shape).astype(np.float64)
    return state


def save_checkpoint(path: str, state: ArrayDict) -> None:
    atomic_write(path, encode_checkpoint(state))


def load_checkpoint(path: str) -> ArrayDict:
    state = decode_checkpoint(_read_bytes(path))
    logger.info(f"Loaded {len(state)} tensors from {path}")
    return state


def write_csv(path: str, columns: tp.Sequence[str], rows: tp.Iterable[tp.Dict[str, tp.Any]]) -> None:
    """
    Write headered CSV rows atomically.

    :param path: Destination.
    :param columns: Column order.
    :param rows: Row dictionaries; extra keys are rejected.

    """

    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    atomic_write(path, buffer.getvalue().encode("utf-8"))


def image_to_feature_map(image: np.ndarray, per_channel: bool = False, dtype: tp.Any = np.float64) -> FeatureMap:
    """
    Convert an 8-bit image to a feature map: Rec. 601 luma for colour input unless ``per_channel`` keeps the three
    colour planes as channels.

    :param image: ``(H, W)`` or ``(H, W, 3)`` array.
    :param per_channel: Keep colour channels.
    :param dtype: Floating dtype of the result.

    :return: FeatureMap with 1 or 3 channels.

    """

    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return FeatureMap(image.astype(dtype))
    if per_channel:
        return FeatureMap(np.moveaxis(image, -1, 0).astype(dtype))
    return FeatureMap(luma(image).astype(dtype))
