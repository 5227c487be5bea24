"""Progressive bitstream: compress, prefix decode and truncate.

Layout (all integers big-endian)::

    header   24 bytes  magic "PDTD", version, width, height, c_lat, c_hp,
                       group size, model id (8 bytes), unit count, reserved
    unit g   u8 index
             u32 len | z payload | u32 crc32      hyperlatent channels [k_hp(g-1), k_hp(g))
             u32 len | y payload | u32 crc32      latent channels [g*G, min((g+1)*G, c_lat))

``k_hp(g) = ceil((g + 1) * G * c_hp / c_lat)`` capped at ``c_hp``, so the
hyperlatent prefix needed by unit g always sits in units ``0..g``. The y
channels of unit g are coded against the scales predicted from the
hyperlatent zero-filled beyond ``k_hp(g)``, which the decoder can rebuild
from the same prefix.
"""

from __future__ import annotations

import logging
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import Checkpoint
from .config import SIZE_MULTIPLE
from .entropy import ideal_bits, range_decode, range_encode

log = logging.getLogger(__name__)

MAGIC = b"PDTD"
VERSION = 1
HEADER = struct.Struct(">4sBHHHHB8sBB")
HEADER_SIZE = HEADER.size  # 24
_LEN = struct.Struct(">I")
UNIT_OVERHEAD = 1 + 4 * _LEN.size


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    c_lat: int
    c_hp: int
    group_size: int
    model_id: bytes
    unit_count: int
    magic: bytes = MAGIC
    version: int = VERSION

    def pack(self) -> bytes:
        return HEADER.pack(
            self.magic, self.version, self.width, self.height, self.c_lat, self.c_hp,
            self.group_size, self.model_id, self.unit_count, 0,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "StreamHeader":
        if len(data) < HEADER_SIZE:
            raise StreamError("stream shorter than its header")
        magic, version, w, h, c_lat, c_hp, g, model_id, n, _ = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise StreamError(f"bad magic {magic!r}")
        if version != VERSION:
            raise StreamError(f"unsupported stream version {version}")
        return cls(w, h, c_lat, c_hp, g, model_id, n)


def hp_cutoff(g: int, group_size: int, c_lat: int, c_hp: int) -> int:
    """Hyperlatent channels available once units ``0..g`` are received."""
    if g < 0:
        return 0
    return min(c_hp, -(-(g + 1) * group_size * c_hp // c_lat))


def lat_cutoff(units: int, group_size: int, c_lat: int) -> int:
    return min(c_lat, units * group_size)


def zero_fill(t: torch.Tensor, keep: int) -> torch.Tensor:
    out = t.clone()
    out[:, keep:] = 0
    return out


def pad_to_multiple(x: torch.Tensor, multiple: int = SIZE_MULTIPLE) -> torch.Tensor:
    h, w = x.shape[-2:]
    ph, pw = -h % multiple, -w % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    return x


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4 or x.shape[0] != 1 or x.shape[1] != 3:
        raise ValueError(f"expected a single RGB image, got shape {tuple(x.shape)}")
    return x


@torch.no_grad()
def encoder_latents(x: torch.Tensor, ckpt: Checkpoint) -> tuple[torch.Tensor, torch.Tensor]:
    """Rounded latent and hyperlatent of one image (padded to the stride)."""
    x = pad_to_multiple(_as_batch(x).to(torch.float32))
    y = ckpt.model.analysis(x)
    z = ckpt.model.hyper_analysis(y)
    return torch.round(y), torch.round(z)


class _ScaleCache:
    """Scales predicted from the hyperlatent zero-filled at each cutoff."""

    def __init__(self, ckpt: Checkpoint):
        self.ckpt = ckpt
        self._cache: dict[int, torch.Tensor] = {}

    @torch.no_grad()
    def scale_indexes(self, z_hat: torch.Tensor, keep_hp: int) -> torch.Tensor:
        if keep_hp not in self._cache:
            sigma = self.ckpt.model.hyper_synthesis(zero_fill(z_hat, keep_hp))
            self._cache[keep_hp] = self.ckpt.tables.scale_indexes(sigma)
        return self._cache[keep_hp]


@dataclass
class CompressStats:
    ideal_bits: float
    escapes: int
    stream_bytes: int


def _frame(payload: bytes) -> bytes:
    return _LEN.pack(len(payload)) + payload + _LEN.pack(zlib.crc32(payload))


def compress_with_stats(x: torch.Tensor, ckpt: Checkpoint, group_size: int | None = None):
    cfg = ckpt.config
    g_size = group_size or cfg.group_size
    if not 1 <= g_size <= min(cfg.c_lat, 255):
        raise ValueError(f"group size {g_size} out of range")
    n_units = math.ceil(cfg.c_lat / g_size)
    if n_units > 255:
        raise ValueError("too many progressive units for the header")
    x = _as_batch(x)
    height, width = x.shape[-2:]
    if height > 0xFFFF or width > 0xFFFF:
        raise ValueError(f"image {width}x{height} too large for the stream header")
    y_hat, z_hat = encoder_latents(x, ckpt)
    header = StreamHeader(width, height, cfg.c_lat, cfg.c_hp, g_size, ckpt.model_id, n_units)
    tables = ckpt.tables
    coder = tables.coder_args()
    scales = _ScaleCache(ckpt)
    z_sym = z_hat[0].to(torch.int64).numpy()
    y_sym = y_hat[0].to(torch.int64).numpy()
    z_plane = z_sym.shape[1] * z_sym.shape[2]
    chunks = [header.pack()]
    total_bits = 0.0
    escapes = 0
    for g in range(n_units):
        z0, z1 = hp_cutoff(g - 1, g_size, cfg.c_lat, cfg.c_hp), hp_cutoff(g, g_size, cfg.c_lat, cfg.c_hp)
        zs = z_sym[z0:z1].ravel()
        zi = np.repeat(tables.prior_rows(range(z0, z1)), z_plane)
        y0, y1 = g * g_size, min((g + 1) * g_size, cfg.c_lat)
        ys = y_sym[y0:y1].ravel()
        yi = scales.scale_indexes(z_hat, z1)[0, y0:y1].numpy().ravel()
        total_bits += ideal_bits(zs, zi, *coder) + ideal_bits(ys, yi, *coder)
        escapes += _count_escapes(zs, zi, tables) + _count_escapes(ys, yi, tables)
        chunks.append(bytes([g]) + _frame(range_encode(zs, zi, *coder)) + _frame(range_encode(ys, yi, *coder)))
    if escapes:
        log.info("%d symbols coded through the escape path", escapes)
    stream = b"".join(chunks)
    return stream, CompressStats(total_bits, escapes, len(stream))


def _count_escapes(symbols, rows, tables) -> int:
    v = symbols - tables.offsets[rows]
    return int(np.count_nonzero((v < 0) | (v >= tables.lengths[rows] - 2)))


def compress(x: torch.Tensor, ckpt: Checkpoint, group_size: int | None = None) -> bytes:
    """Encode an RGB image in [0, 1] (shape [3, H, W] or [1, 3, H, W])."""
    return compress_with_stats(x, ckpt, group_size)[0]


@dataclass
class _Unit:
    index: int
    z_payload: bytes
    y_payload: bytes
    z_crc: int
    y_crc: int
    end: int


def _read_frame(data: bytes, pos: int):
    if pos + _LEN.size > len(data):
        return None
    (n,) = _LEN.unpack_from(data, pos)
    end = pos + _LEN.size + n + _LEN.size
    if end > len(data):
        return None
    payload = data[pos + _LEN.size : pos + _LEN.size + n]
    (crc,) = _LEN.unpack_from(data, end - _LEN.size)
    return payload, crc, end


def _split_units(data: bytes, header: StreamHeader) -> list[_Unit]:
    units = []
    pos = HEADER_SIZE
    while len(units) < header.unit_count and pos < len(data):
        index = data[pos]
        z = _read_frame(data, pos + 1)
        y = _read_frame(data, z[2]) if z else None
        if y is None:
            log.warning("discarding partial unit %d (%d trailing bytes)", len(units), len(data) - pos)
            break
        if index != len(units):
            raise StreamError(f"unit {len(units)} carries index {index}")
        units.append(_Unit(index, z[0], y[0], z[1], y[1], y[2]))
        pos = y[2]
    return units


def parse(data: bytes) -> tuple[StreamHeader, list[_Unit]]:
    header = StreamHeader.unpack(data)
    return header, _split_units(data, header)


@torch.no_grad()
def decode_latents(data: bytes, ckpt: Checkpoint):
    """Zero-filled (y_hat, z_hat, header, units decoded) from a stream prefix."""
    header, units = parse(data)
    cfg = ckpt.config
    if header.model_id != ckpt.model_id:
        raise StreamError("stream was produced with a different checkpoint")
    if (header.c_lat, header.c_hp) != (cfg.c_lat, cfg.c_hp):
        raise StreamError("stream channel counts do not match the checkpoint")
    g_size = header.group_size
    hp, wp = -(-header.height // SIZE_MULTIPLE) * SIZE_MULTIPLE, -(-header.width // SIZE_MULTIPLE) * SIZE_MULTIPLE
    m_h, m_w = hp // 16, wp // 16
    y_hat = torch.zeros(1, cfg.c_lat, m_h, m_w)
    z_hat = torch.zeros(1, cfg.c_hp, m_h // 4, m_w // 4)
    tables = ckpt.tables
    coder = tables.coder_args()
    scales = _ScaleCache(ckpt)
    z_plane = (m_h // 4) * (m_w // 4)
    for g, unit in enumerate(units):
        for payload, crc in ((unit.z_payload, unit.z_crc), (unit.y_payload, unit.y_crc)):
            if zlib.crc32(payload) != crc:
                raise StreamError(f"checksum mismatch in unit {g}")
        z0, z1 = hp_cutoff(g - 1, g_size, cfg.c_lat, cfg.c_hp), hp_cutoff(g, g_size, cfg.c_lat, cfg.c_hp)
        zi = np.repeat(tables.prior_rows(range(z0, z1)), z_plane)
        zs = range_decode(unit.z_payload, zi, *coder)
        z_hat[0, z0:z1] = torch.from_numpy(zs.reshape(z1 - z0, m_h // 4, m_w // 4)).to(z_hat.dtype)
        y0, y1 = g * g_size, min((g + 1) * g_size, cfg.c_lat)
        yi = scales.scale_indexes(z_hat, z1)[0, y0:y1].numpy().ravel()
        ys = range_decode(unit.y_payload, yi, *coder)
        y_hat[0, y0:y1] = torch.from_numpy(ys.reshape(y1 - y0, m_h, m_w)).to(y_hat.dtype)
    return y_hat, z_hat, header, len(units)


@torch.no_grad()
def decompress(data: bytes, ckpt: Checkpoint) -> torch.Tensor:
    """Reconstruct a [3, H, W] image in [0, 1] from any whole-unit prefix."""
    y_hat, _, header, _ = decode_latents(data, ckpt)
    x_hat = ckpt.model.synthesis(y_hat)
    return x_hat[0, :, : header.height, : header.width].clamp(0.0, 1.0)


def unit_offsets(data: bytes) -> list[int]:
    """Byte offset just past each complete unit."""
    _, units = parse(data)
    return [u.end for u in units]


def truncate(data: bytes, *, units: int | None = None, nbytes: int | None = None, bpp: float | None = None) -> bytes:
    """Largest whole-unit prefix within the target, with its unit count rewritten."""
    if sum(t is not None for t in (units, nbytes, bpp)) != 1:
        raise ValueError("give exactly one of units, nbytes, bpp")
    header, parsed = parse(data)
    ends = [u.end for u in parsed]
    if units is not None:
        n = max(0, min(units, len(ends)))
    else:
        if bpp is not None:
            nbytes = int(math.floor(bpp * header.width * header.height / 8))
        n = sum(1 for e in ends if e <= nbytes)
    end = ends[n - 1] if n else HEADER_SIZE
    new_header = StreamHeader(
        header.width, header.height, header.c_lat, header.c_hp, header.group_size, header.model_id, n
    )
    return new_header.pack() + data[HEADER_SIZE:end]


def stream_bpp(data: bytes) -> float:
    header = StreamHeader.unpack(data)
    return len(data) * 8 / (header.width * header.height)
