"""Light-field samples: synthetic focal stacks, PNM I/O, augmentation, iteration.

Images are float arrays in ``[0, 1]`` with layout ``(channels, H, W)``.
On disk a sample is a directory::

    <id>/aif.ppm  <id>/depth.pgm  <id>/gt.pgm  <id>/slice_00.ppm ... slice_NN.ppm

Depth convention: 0 is far, 1 is near.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, List, Optional, Union

import numpy as np
from scipy import ndimage

from .config import SynthSpec


class PNMError(ValueError):
    """Malformed or unsupported PNM data."""


class DataError(IOError):
    """A sample on disk is missing or inconsistent."""


class GenerationError(ValueError):
    """A synthetic layout cannot be rendered."""


@dataclass
class Sample:
    aif: np.ndarray
    depth: np.ndarray
    slices: List[np.ndarray]
    gt: np.ndarray
    id: str = "sample"
    focal_depths: Optional[tuple] = None

    def __post_init__(self):
        h, w = self.aif.shape[1:]
        for name, arr in [("depth", self.depth), ("gt", self.gt)] + [(f"slice_{j:02d}", s) for j, s in enumerate(self.slices)]:
            if arr.shape[1:] != (h, w):
                raise DataError(f"{self.id}: {name} is {arr.shape[1:]}, expected {(h, w)}")

    @property
    def size(self) -> tuple:
        return self.aif.shape[1:]


# ---------------------------------------------------------------------------
# PNM
# ---------------------------------------------------------------------------

_WS = b" \t\r\n"


def _read_token(buf: bytes, pos: int) -> tuple:
    while pos < len(buf):
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n", b"#"):
        pos += 1
    if start == pos:
        raise PNMError(f"unexpected end of header at byte {start}")
    return buf[start:pos], pos


def parse_pnm(buf: bytes) -> np.ndarray:
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r} at byte 0 (need P5 or P6)")
    fields = []
    for label in ("width", "height", "maxval"):
        tok_start = pos
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise PNMError(f"bad {label} {tok!r} at byte {tok_start}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise PNMError(f"maxval {maxval} unsupported (only 255) at byte {pos}")
    if pos >= len(buf) or buf[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        raise PNMError(f"missing whitespace after header at byte {pos}")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise PNMError(f"truncated payload: expected {need} bytes from byte {pos}, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return arr.transpose(2, 0, 1).astype(np.float32) / 255.0


def load_pnm(path) -> np.ndarray:
    """Read a P5/P6 file into a ``(c, h, w)`` float array in ``[0, 1]``."""
    try:
        return parse_pnm(Path(path).read_bytes())
    except PNMError as e:
        raise PNMError(f"{path}: {e}") from None


def encode_pnm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[None]
    c, h, w = img.shape
    if c not in (1, 3):
        raise PNMError(f"cannot encode {c}-channel image")
    q = np.clip(np.rint(img.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n255\n".encode()
    return header + q.transpose(1, 2, 0).tobytes()


def save_pnm(image: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_pnm(image))


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def _smooth_noise(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    coarse = rng.random((cells + 1, cells + 1))
    return ndimage.zoom(coarse, (h / (cells + 1), w / (cells + 1)), order=1)[:h, :w]


def _texture(rng: np.random.Generator, h: int, w: int, base: np.ndarray, contrast: float) -> np.ndarray:
    """Colour field with fine stripes plus blotches, so defocus visibly changes it."""
    yy, xx = np.mgrid[0:h, 0:w]
    freq = rng.uniform(0.5, 1.2)
    angle = rng.uniform(0, np.pi)
    stripes = np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy) + rng.uniform(0, 2 * np.pi))
    blotch = _smooth_noise(rng, h, w, max(2, h // 8)) - 0.5
    tex = np.empty((3, h, w))
    for ch in range(3):
        tex[ch] = base[ch] + contrast * (0.6 * stripes + 0.8 * blotch)
    return np.clip(tex, 0, 1)


def _blur_stack(img: np.ndarray, r_max: int, kind: str) -> np.ndarray:
    """``out[r]`` is ``img`` blurred with radius ``r`` (``r = 0`` is the identity)."""
    stack = np.empty((r_max + 1,) + img.shape)
    stack[0] = img
    for r in range(1, r_max + 1):
        if kind == "box":
            stack[r] = ndimage.uniform_filter(img, size=(1, 2 * r + 1, 2 * r + 1), mode="reflect")
        else:
            stack[r] = ndimage.gaussian_filter(img, sigma=(0, r / 2.0, r / 2.0), mode="reflect")
    return stack


def blur_radius(depth: np.ndarray, focal_depth: float, r_max: int) -> np.ndarray:
    return np.rint(r_max * np.abs(depth - focal_depth)).astype(int)


def render_focal_stack(aif: np.ndarray, depth: np.ndarray, focal_depths, r_max: int, kind: str = "box") -> list:
    """Per-pixel defocus: slice ``j`` takes the blur level ``round(r_max * |depth - d_j|)``."""
    stack = _blur_stack(aif.astype(np.float64), r_max, kind)
    rows, cols = np.indices(depth.shape[1:])
    slices = []
    for d in focal_depths:
        r = np.clip(blur_radius(depth[0], d, r_max), 0, r_max)
        slices.append(stack[r, :, rows, cols].transpose(2, 0, 1).astype(np.float32))
    return slices


def synthesize_sample(spec: SynthSpec, index: int = 0) -> Sample:
    """Render one random scene of ellipses at distinct depths over a textured background.

    The nearest object is the salient one; its mask is the ground truth.
    """
    spec.validate()
    if spec.n_objects < 1:
        raise GenerationError("layout has no objects")
    rng = np.random.default_rng([spec.seed, index])
    n = spec.size
    yy, xx = np.mgrid[0:n, 0:n] / n

    bg = _texture(rng, n, n, rng.uniform(0.25, 0.75, 3), 0.25)
    aif = bg.copy()
    depth = 0.15 * _smooth_noise(rng, n, n, 3)[None]
    label = np.full((n, n), -1)

    obj_depths = np.sort(rng.uniform(0.3, 1.0, spec.n_objects))
    # draw far objects first so nearer ones occlude them
    for k, d in enumerate(obj_depths):
        radius_y, radius_x = rng.uniform(spec.min_radius, spec.max_radius, 2)
        cy, cx = rng.uniform(radius_y, 1 - radius_y), rng.uniform(radius_x, 1 - radius_x)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        inside = (u / radius_x) ** 2 + (v / radius_y) ** 2 <= 1.0
        tex = _texture(rng, n, n, rng.uniform(0.1, 0.9, 3), 0.3)
        aif[:, inside] = tex[:, inside]
        depth[0, inside] = d
        label[inside] = k
    salient = spec.n_objects - 1
    gt = (label == salient).astype(np.float32)[None]
    if gt.sum() == 0:
        raise GenerationError(f"salient object fully occluded in sample {index}")

    depths = spec.depths()
    slices = render_focal_stack(aif, depth, depths, spec.r_max, spec.blur)
    return Sample(aif=aif.astype(np.float32), depth=depth.astype(np.float32), slices=slices, gt=gt,
                  id=f"synth_{spec.seed:04d}_{index:04d}", focal_depths=tuple(depths))


# ---------------------------------------------------------------------------
# on-disk layout
# ---------------------------------------------------------------------------

def save_sample(sample: Sample, root) -> Path:
    d = Path(root) / sample.id
    d.mkdir(parents=True, exist_ok=True)
    save_pnm(sample.aif, d / "aif.ppm")
    save_pnm(sample.depth, d / "depth.pgm")
    save_pnm(sample.gt, d / "gt.pgm")
    for j, s in enumerate(sample.slices):
        save_pnm(s, d / f"slice_{j:02d}.ppm")
    return d


_SLICE_RE = re.compile(r"slice_(\d+)\.ppm$")


def load_sample(directory, expected_slices: Optional[int] = None) -> Sample:
    d = Path(directory)
    sid = d.name
    for name in ("aif.ppm", "depth.pgm", "gt.pgm"):
        if not (d / name).is_file():
            raise DataError(f"sample {sid}: missing {name}")
    found = sorted(int(m.group(1)) for p in d.iterdir() if (m := _SLICE_RE.match(p.name)))
    count = expected_slices if expected_slices is not None else (max(found) + 1 if found else 0)
    if count == 0:
        raise DataError(f"sample {sid}: no focal slices")
    missing = [j for j in range(count) if j not in found]
    if missing:
        raise DataError(f"sample {sid}: missing slice_{missing[0]:02d}")
    slices = [load_pnm(d / f"slice_{j:02d}.ppm") for j in range(count)]
    gt = (load_pnm(d / "gt.pgm") >= 0.5).astype(np.float32)
    return Sample(aif=load_pnm(d / "aif.ppm"), depth=load_pnm(d / "depth.pgm"), slices=slices, gt=gt, id=sid)


def list_sample_dirs(root) -> list:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    return sorted(p for p in root.iterdir() if p.is_dir())


def dataset_iter(source: Union[str, Path, SynthSpec], shuffle_seed: Optional[int] = 0,
                 expected_slices: Optional[int] = None) -> Iterator[Sample]:
    """Yield samples one at a time (batch size 1) in a seed-determined order.

    ``source`` is a dataset directory or a :class:`SynthSpec`; ``shuffle_seed``
    of ``None`` keeps the natural order.
    """
    if isinstance(source, SynthSpec):
        order = np.arange(source.count)
        if shuffle_seed is not None:
            order = np.random.default_rng(shuffle_seed).permutation(source.count)
        for i in order:
            yield synthesize_sample(source, int(i))
        return
    dirs = list_sample_dirs(source)
    if shuffle_seed is not None:
        dirs = [dirs[i] for i in np.random.default_rng(shuffle_seed).permutation(len(dirs))]
    for d in dirs:
        yield load_sample(d, expected_slices)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class Transform:
    flip: bool = False
    crop: Optional[tuple] = None  # (top, left, height, width)
    rot90: int = 0


def draw_transform(rng: np.random.Generator, h: int, w: int, min_scale: float = 0.8) -> Transform:
    flip = bool(rng.random() < 0.5)
    scale = rng.uniform(min_scale, 1.0)
    ch, cw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    rot = int(rng.integers(1, 4)) if rng.random() < 0.5 else 0
    if h != w and rot % 2:
        rot = 2
    return Transform(flip=flip, crop=(top, left, ch, cw), rot90=rot)


def _apply(img: np.ndarray, t: Transform, nearest: bool) -> np.ndarray:
    c, h, w = img.shape
    out = img
    if t.flip:
        out = out[:, :, ::-1]
    if t.crop is not None:
        top, left, ch, cw = t.crop
        out = out[:, top:top + ch, left:left + cw]
        if (ch, cw) != (h, w):
            out = ndimage.zoom(out, (1, h / ch, w / cw), order=0 if nearest else 1, mode="nearest", grid_mode=True)
            out = out[:, :h, :w]
    if t.rot90:
        out = np.rot90(out, t.rot90, axes=(1, 2))
    return np.ascontiguousarray(out, dtype=img.dtype)


def apply_transform(sample: Sample, t: Transform) -> Sample:
    """Apply one geometric transform identically to every component."""
    return replace(
        sample,
        aif=_apply(sample.aif, t, nearest=False),
        depth=_apply(sample.depth, t, nearest=False),
        slices=[_apply(s, t, nearest=False) for s in sample.slices],
        gt=_apply(sample.gt, t, nearest=True),
    )


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    h, w = sample.size
    return apply_transform(sample, draw_transform(rng, h, w))
