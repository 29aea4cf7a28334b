"""Dense-feature patches, cost patches, and their binary container.

A feature patch is a 16x16 window of a dense feature map around a detected
keypoint; sample ``data[v, u]`` belongs to the pixel at continuous image
coordinates ``(origin_u + u + 0.5, origin_v + v + 0.5)``. A cost patch is
derived from a feature patch and a reference feature vector: channel 0 holds
the feature-space distance to the reference at each sample, channels 1 and 2
hold its horizontal and vertical spatial derivatives, so an optimizer can
evaluate the cost surface and its gradient by interpolation alone.

Interpolation is bicubic Catmull-Rom (tension -0.5). Lookups are restricted
to the patch's safe interior, at least one sample away from the border, so
every 4x4 tap neighborhood is real data and no extrapolation happens.

Patches are stored in a little-endian binary container, one file per
(frame, camera): magic ``DFPK`` (feature) or ``DCPK`` (cost, 3 channels),
u32 version = 1, u32 frame id, u32 camera id, u32 channel count, u32 patch
count; then per patch u32 keypoint index, i32 origin u, i32 origin v, and
16*16*channels float32 samples (v outer, u inner, channel innermost).
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateKey,
    IoFailure,
    MalformedHeader,
    OutOfPatch,
    TruncatedFile,
)

PATCH_SIZE = 16
COST_CHANNELS = 3

FEATURE_MAGIC = b"DFPK"
COST_MAGIC = b"DCPK"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIIIII")
_PATCH_HEAD = struct.Struct("<Iii")

# Interpolation domain in grid coordinates: one full sample margin.
_INTERIOR_LO = 1.0
_INTERIOR_HI = float(PATCH_SIZE - 2)


@dataclass(frozen=True, eq=False)
class FeaturePatch:
    """A 16x16xD window of a dense feature map around one keypoint."""

    frame_id: int
    camera_id: int
    keypoint_index: int
    origin: tuple[int, int]
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != PATCH_SIZE or data.shape[1] != PATCH_SIZE:
            raise DimensionMismatch(
                f"patch data must be ({PATCH_SIZE}, {PATCH_SIZE}, D), "
                f"got {data.shape}"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @property
    def channel_count(self) -> int:
        return int(self.data.shape[2])


@dataclass(frozen=True, eq=False)
class CostPatch(FeaturePatch):
    """A 16x16x3 cost surface: distance to a reference plus its gradient."""

    def __post_init__(self):
        super().__post_init__()
        if self.data.shape[2] != COST_CHANNELS:
            raise DimensionMismatch(
                f"cost patch must have {COST_CHANNELS} channels, "
                f"got {self.data.shape[2]}"
            )


@dataclass(eq=False)
class PatchStore:
    """Patches indexed by (frame_id, camera_id, keypoint_index)."""

    kind: str  # "feature" or "cost"
    channel_count: int
    patches: dict[tuple[int, int, int], FeaturePatch] = field(default_factory=dict)

    def get(self, frame_id: int, camera_id: int, keypoint_index: int):
        return self.patches.get((frame_id, camera_id, keypoint_index))

    def add(self, patch: FeaturePatch):
        key = (patch.frame_id, patch.camera_id, patch.keypoint_index)
        if key in self.patches:
            raise DuplicateKey(key)
        if patch.channel_count != self.channel_count:
            raise DimensionMismatch(
                f"patch {key} has {patch.channel_count} channels, "
                f"store has {self.channel_count}"
            )
        self.patches[key] = patch

    def __len__(self) -> int:
        return len(self.patches)


def origin_for_keypoint(keypoint: np.ndarray, width: int, height: int) -> tuple[int, int]:
    """Patch origin centered on a keypoint, clamped into the image."""
    u = int(np.floor(float(keypoint[0]) + 0.5)) - PATCH_SIZE // 2
    v = int(np.floor(float(keypoint[1]) + 0.5)) - PATCH_SIZE // 2
    u = min(max(u, 0), max(0, int(width) - PATCH_SIZE))
    v = min(max(v, 0), max(0, int(height) - PATCH_SIZE))
    return u, v


# ---------------------------------------------------------------------------
# Catmull-Rom interpolation


def _catmull_rom_weights(f: np.ndarray) -> np.ndarray:
    """Tap weights for fractional offsets ``f`` in [0, 1], shape (..., 4).

    The Horner forms below evaluate to exact (0, 1, 0, 0) at f = 0 and
    (0, 0, 1, 0) at f = 1, which makes interpolation reproduce stored
    samples bit-exactly at grid nodes.
    """
    w_m1 = f * (-0.5 + f * (1.0 - 0.5 * f))
    w_0 = f * f * (1.5 * f - 2.5) + 1.0
    w_1 = f * (0.5 + f * (2.0 - 1.5 * f))
    w_2 = f * f * (0.5 * f - 0.5)
    return np.stack([w_m1, w_0, w_1, w_2], axis=-1)


def _grid_setup(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Base tap index and fractional offset for grid coordinates ``g``."""
    base = np.floor(g).astype(np.int64)
    base = np.minimum(base, PATCH_SIZE - 3)
    base = np.maximum(base, 1)
    frac = g - base
    return base, frac


def interpolate_grid_batch(
    values: np.ndarray, grid_points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Bicubic interpolation of ``values (M, C, 16, 16)`` at grid coords.

    ``grid_points`` is ``(M, 2)`` as (gu, gv) where integer coordinates fall
    on stored samples ``values[..., gv, gu]``. Returns interpolated values
    ``(M, C)`` and a boolean mask of points inside the safe interior; rows
    outside the interior are zero-filled.
    """
    gu = grid_points[:, 0]
    gv = grid_points[:, 1]
    inside = (
        (gu >= _INTERIOR_LO)
        & (gu <= _INTERIOR_HI)
        & (gv >= _INTERIOR_LO)
        & (gv <= _INTERIOR_HI)
        & np.isfinite(gu)
        & np.isfinite(gv)
    )
    gu_safe = np.where(inside, gu, 7.0)
    gv_safe = np.where(inside, gv, 7.0)
    ubase, uf = _grid_setup(gu_safe)
    vbase, vf = _grid_setup(gv_safe)
    wu = _catmull_rom_weights(uf)  # (M, 4)
    wv = _catmull_rom_weights(vf)

    m = values.shape[0]
    c = values.shape[1]
    taps = np.arange(-1, 3, dtype=np.int64)
    iu = ubase[:, None] + taps[None, :]  # (M, 4)
    iv = vbase[:, None] + taps[None, :]
    # One flat gather over the raveled sample array: index of (i, k, v, u) is
    # ((i * C + k) * 16 + v) * 16 + u.
    cell = iv[:, None, :, None] * PATCH_SIZE + iu[:, None, None, :]  # (M, 1, 4, 4)
    row = (
        np.arange(m, dtype=np.int64)[:, None] * c + np.arange(c, dtype=np.int64)
    ) * (PATCH_SIZE * PATCH_SIZE)
    gathered = np.ascontiguousarray(values).reshape(-1)[
        row[:, :, None, None] + cell
    ]  # (M, C, 4, 4)
    out = np.einsum("ma,mcab,mb->mc", wv, gathered, wu)
    out[~inside] = 0.0
    return out, inside


def _to_grid(patch: FeaturePatch, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.array(
        [p[0] - patch.origin[0] - 0.5, p[1] - patch.origin[1] - 0.5],
        dtype=np.float64,
    )


def interpolate_feature(patch: FeaturePatch, p: np.ndarray) -> np.ndarray:
    """Interpolate the patch's feature vector at image point ``p``.

    ``p`` is in continuous image coordinates. Raises :class:`OutOfPatch`
    when ``p`` is outside the patch's safe interior.
    """
    grid = _to_grid(patch, p)
    values = np.ascontiguousarray(np.moveaxis(patch.data, 2, 0))[None]
    out, inside = interpolate_grid_batch(values, grid[None])
    if not inside[0]:
        raise OutOfPatch(p, f"patch origin {patch.origin}")
    return out[0]


# ---------------------------------------------------------------------------
# Cost patches


def build_cost_patch(patch: FeaturePatch, reference: np.ndarray) -> CostPatch:
    """Turn a feature patch into a cost patch against a reference vector.

    Channel 0 is the Euclidean feature distance to ``reference`` at each
    sample; channels 1 and 2 are its central differences along u and v,
    one-sided at the patch border.
    """
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    if ref.shape[0] != patch.channel_count:
        raise DimensionMismatch(
            f"reference has {ref.shape[0]} channels, patch has "
            f"{patch.channel_count}"
        )
    cost = np.linalg.norm(patch.data - ref[None, None, :], axis=2)
    du = np.empty_like(cost)
    dv = np.empty_like(cost)
    du[:, 1:-1] = 0.5 * (cost[:, 2:] - cost[:, :-2])
    du[:, 0] = cost[:, 1] - cost[:, 0]
    du[:, -1] = cost[:, -1] - cost[:, -2]
    dv[1:-1, :] = 0.5 * (cost[2:, :] - cost[:-2, :])
    dv[0, :] = cost[1, :] - cost[0, :]
    dv[-1, :] = cost[-1, :] - cost[-2, :]
    return CostPatch(
        frame_id=patch.frame_id,
        camera_id=patch.camera_id,
        keypoint_index=patch.keypoint_index,
        origin=patch.origin,
        data=np.stack([cost, du, dv], axis=2),
    )


def cost_lookup_batch(
    stacked: np.ndarray, origins: np.ndarray, pixels: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized cost and gradient lookup across many cost patches.

    ``stacked`` is ``(M, 3, 16, 16)`` with channels (cost, d/du, d/dv) in
    ``[channel, v, u]`` layout, ``origins`` is ``(M, 2)`` integer patch
    origins, ``pixels`` ``(M, 2)`` image points. Returns ``(cost (M,),
    gradient (M, 2), inside (M,))``; rows outside the safe interior are
    zero-filled and masked out.
    """
    grid = pixels - origins - 0.5
    out, inside = interpolate_grid_batch(stacked, grid)
    return out[:, 0], out[:, 1:3], inside


def cost_lookup(patch: CostPatch, p: np.ndarray) -> tuple[float, np.ndarray]:
    """Interpolated cost value and spatial gradient at image point ``p``.

    The gradient is interpolated from the stored derivative channels, not
    differentiated from the interpolated cost channel. Raises
    :class:`OutOfPatch` outside the safe interior.
    """
    stacked = np.ascontiguousarray(np.moveaxis(patch.data, 2, 0))[None]
    origins = np.array([[patch.origin[0], patch.origin[1]]], dtype=np.float64)
    pix = np.asarray(p, dtype=np.float64)[None]
    cost, grad, inside = cost_lookup_batch(stacked, origins, pix)
    if not inside[0]:
        raise OutOfPatch(p, f"patch origin {patch.origin}")
    return float(cost[0]), grad[0]


# ---------------------------------------------------------------------------
# Binary container


def _patch_class_and_kind(magic: bytes) -> tuple[type, str]:
    if magic == FEATURE_MAGIC:
        return FeaturePatch, "feature"
    if magic == COST_MAGIC:
        return CostPatch, "cost"
    raise ValueError(magic)


def parse_patch_file(raw: bytes, path: str = "<memory>") -> list[FeaturePatch]:
    """Parse one patch container from bytes.

    Total over arbitrary byte strings: returns patches or raises one of
    :class:`MalformedHeader` / :class:`TruncatedFile`.
    """
    if len(raw) < _HEADER.size:
        raise TruncatedFile(path, len(raw))
    magic, version, frame_id, camera_id, channels, count = _HEADER.unpack_from(raw, 0)
    try:
        cls, kind = _patch_class_and_kind(magic)
    except ValueError:
        raise MalformedHeader(path, f"bad magic {magic!r}") from None
    if version != FORMAT_VERSION:
        raise MalformedHeader(path, f"unsupported version {version}")
    if channels < 1:
        raise MalformedHeader(path, "channel count must be at least 1")
    if kind == "cost" and channels != COST_CHANNELS:
        raise MalformedHeader(
            path, f"cost container declares {channels} channels, expected 3"
        )
    sample_bytes = PATCH_SIZE * PATCH_SIZE * channels * 4
    record_bytes = _PATCH_HEAD.size + sample_bytes
    expected = _HEADER.size + count * record_bytes
    if len(raw) < expected:
        raise TruncatedFile(path, len(raw))
    patches = []
    pos = _HEADER.size
    for _ in range(count):
        keypoint_index, origin_u, origin_v = _PATCH_HEAD.unpack_from(raw, pos)
        pos += _PATCH_HEAD.size
        data = np.frombuffer(
            raw, dtype="<f4", count=PATCH_SIZE * PATCH_SIZE * channels, offset=pos
        ).reshape(PATCH_SIZE, PATCH_SIZE, channels)
        pos += sample_bytes
        # arbitrary bit patterns (e.g. signaling NaNs) are legal float32
        # payloads; widening them must not warn
        with np.errstate(invalid="ignore"):
            wide = data.astype(np.float64)
        patches.append(
            cls(
                frame_id=int(frame_id),
                camera_id=int(camera_id),
                keypoint_index=int(keypoint_index),
                origin=(origin_u, origin_v),
                data=wide,
            )
        )
    return patches


def load_patch_store(directory: str | os.PathLike) -> PatchStore:
    """Load every patch container in a directory into one store.

    Feature and cost containers use the same layout and are distinguished
    by magic; a directory must not mix the two kinds. Raises structured
    errors for malformed headers, truncated payloads, duplicate keys,
    mixed kinds, or inconsistent channel counts.
    """
    directory = Path(directory)
    try:
        names = sorted(p for p in directory.iterdir() if p.is_file())
    except OSError as exc:
        raise IoFailure(str(directory), str(exc)) from exc
    store: PatchStore | None = None
    for path in names:
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise IoFailure(str(path), str(exc)) from exc
        patches = parse_patch_file(raw, str(path))
        for patch in patches:
            kind = "cost" if isinstance(patch, CostPatch) else "feature"
            if store is None:
                store = PatchStore(kind=kind, channel_count=patch.channel_count)
            if store.kind != kind:
                raise MalformedHeader(
                    str(path), f"mixes {kind} patches into a {store.kind} store"
                )
            store.add(patch)
    if store is None:
        store = PatchStore(kind="cost", channel_count=COST_CHANNELS)
    return store


def save_patch_store(store: PatchStore, directory: str | os.PathLike) -> list[Path]:
    """Write a store as one container file per (frame, camera).

    Returns the written paths. Float samples are stored as little-endian
    float32, so a load after a save is bit-exact for float32-valued data.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(directory), str(exc)) from exc
    magic = COST_MAGIC if store.kind == "cost" else FEATURE_MAGIC
    ext = ".dcpk" if store.kind == "cost" else ".dfpk"
    groups: dict[tuple[int, int], list[FeaturePatch]] = {}
    for (frame_id, camera_id, _), patch in sorted(store.patches.items()):
        groups.setdefault((frame_id, camera_id), []).append(patch)
    written = []
    for (frame_id, camera_id), patches in sorted(groups.items()):
        path = directory / f"frame{frame_id:05d}_cam{camera_id:05d}{ext}"
        chunks = [
            _HEADER.pack(
                magic,
                FORMAT_VERSION,
                frame_id,
                camera_id,
                store.channel_count,
                len(patches),
            )
        ]
        for patch in patches:
            chunks.append(
                _PATCH_HEAD.pack(
                    patch.keypoint_index, patch.origin[0], patch.origin[1]
                )
            )
            chunks.append(
                np.ascontiguousarray(patch.data, dtype="<f4").tobytes()
            )
        try:
            path.write_bytes(b"".join(chunks))
        except OSError as exc:
            raise IoFailure(str(path), str(exc)) from exc
        written.append(path)
    return written
