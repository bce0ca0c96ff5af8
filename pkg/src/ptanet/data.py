"""Data supply: synthetic corpus, directory loader, augmentations.

Synthetic images are 128x128 RGB in [0,1], CHW float32.  "Live" samples are
smooth random low-frequency color fields with fine sensor-like texture.
"Spoof" samples take the same kind of base and composite recapture artifacts
on top: the color gamut is flattened toward the per-channel mean, a
high-frequency moire sinusoid is added, and a darkened border frame is drawn;
the per-channel means are then restored exactly, so a pixel-mean threshold
cannot separate the classes while a small CNN can lock onto the periodic
pattern easily.

The directory loader accepts binary PPM (P6, 8-bit, parsed here) and PNG
(8-bit RGB/RGBA via Pillow, alpha dropped); anything else is skipped with a
warning.  Loaded images are resized to 128x128 with bilinear interpolation in
lerp form, which keeps constant images exactly constant.
"""

import logging
import os
import zlib
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SIZE = 128
LABEL_LIVE = 0
LABEL_SPOOF = 1


@dataclass
class Sample:
    image: np.ndarray  # [3, H, W] float32 in [0, 1]
    label: int
    id: str

    def __post_init__(self):
        if self.label not in (LABEL_LIVE, LABEL_SPOOF):
            raise ValueError(f"label must be 0 (live) or 1 (spoof), got {self.label}")
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be [3, H, W], got shape {self.image.shape}")


# -- synthetic generator ------------------------------------------------


def _base_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth random color field plus fine texture, [3, size, size] in [0,1]."""
    yy, xx = np.meshgrid(
        np.arange(size, dtype=np.float32),
        np.arange(size, dtype=np.float32),
        indexing="ij",
    )
    img = np.empty((3, size, size), dtype=np.float32)
    for c in range(3):
        level = rng.uniform(0.35, 0.65)
        acc = np.full((size, size), level, dtype=np.float32)
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.05, 0.15)
            acc += amp * np.cos(
                2 * np.pi * (fx * xx + fy * yy) / size + phase
            ).astype(np.float32)
        img[c] = acc
    img += rng.normal(0.0, 0.02, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def _apply_spoof_artifacts(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    size = img.shape[1]
    means = img.mean(axis=(1, 2), keepdims=True)

    # flattened gamut: recaptured images lose contrast range
    img = means + (img - means) * np.float32(0.78)

    # moire: one strong oblique high-frequency sinusoid across all channels
    yy, xx = np.meshgrid(
        np.arange(size, dtype=np.float32),
        np.arange(size, dtype=np.float32),
        indexing="ij",
    )
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(24.0, 40.0)
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.06, 0.12)
    moire = amp * np.sin(
        2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) / size + phase
    )
    img = img + moire[None].astype(np.float32)

    # darkened border frame from the recapture bezel
    wframe = int(rng.integers(2, 5))
    depth = rng.uniform(0.08, 0.15)
    frame = np.zeros((size, size), dtype=np.float32)
    frame[:wframe, :] = frame[-wframe:, :] = 1.0
    frame[:, :wframe] = frame[:, -wframe:] = 1.0
    img = img - np.float32(depth) * frame[None]

    # restore per-channel means exactly so mean thresholds stay blind
    img = img + (means - img.mean(axis=(1, 2), keepdims=True))
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(n_live: int, n_spoof: int, seed: int) -> List[Sample]:
    """Seeded corpus; sample i is independent of the other class's count."""
    if n_live < 0 or n_spoof < 0:
        raise ValueError("sample counts must be non-negative")
    samples: List[Sample] = []
    for label, count, tag in (
        (LABEL_LIVE, n_live, "live"),
        (LABEL_SPOOF, n_spoof, "spoof"),
    ):
        for i in range(count):
            rng = np.random.default_rng([seed, label, i])
            img = _base_field(rng, IMAGE_SIZE)
            if label == LABEL_SPOOF:
                img = _apply_spoof_artifacts(img, rng)
            samples.append(Sample(image=img, label=label, id=f"{tag}_{i:05d}"))
    return samples


# -- image IO -----------------------------------------------------------


def write_ppm(path: str, image: np.ndarray) -> None:
    """Binary P6, 8-bit; input [3, H, W] float in [0, 1]."""
    arr = np.clip(image, 0.0, 1.0)
    u8 = (arr * 255.0 + 0.5).astype(np.uint8)
    h, w = u8.shape[1], u8.shape[2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.transpose(1, 2, 0).tobytes())


def _ppm_token(blob: bytes, pos: int) -> Tuple[bytes, int]:
    # whitespace-delimited token, '#' comments run to end of line
    n = len(blob)
    while pos < n:
        c = blob[pos : pos + 1]
        if c == b"#":
            while pos < n and blob[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not blob[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("unexpected end of header")
    return blob[start:pos], pos


def read_ppm(path: str) -> np.ndarray:
    """Parse binary P6 into [3, H, W] float32 in [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    try:
        magic, pos = _ppm_token(blob, 0)
        if magic != b"P6":
            raise ValueError(f"not binary PPM (magic {magic!r})")
        wtok, pos = _ppm_token(blob, pos)
        htok, pos = _ppm_token(blob, pos)
        mtok, pos = _ppm_token(blob, pos)
        w, h, maxval = int(wtok), int(htok), int(mtok)
    except ValueError as e:
        raise ValueError(f"{path}: malformed PPM header: {e}") from e
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported, maxval {maxval}")
    if w <= 0 or h <= 0:
        raise ValueError(f"{path}: bad dimensions {w}x{h}")
    pos += 1  # single whitespace byte after maxval
    need = w * h * 3
    data = blob[pos : pos + need]
    if len(data) != need:
        raise ValueError(f"{path}: pixel data truncated ({len(data)} of {need} bytes)")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0)


def read_png(path: str) -> np.ndarray:
    """8-bit RGB/RGBA PNG into [3, H, W] float32; alpha dropped."""
    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA"):
            raise ValueError(f"{path}: unsupported PNG mode {im.mode} (need 8-bit RGB/RGBA)")
        arr = np.asarray(im, dtype=np.uint8)
    arr = arr[:, :, :3]
    return arr.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize of [C, H, W]; exact on constants."""
    c, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.astype(np.float32, copy=True)
    img = image.astype(np.float32, copy=False)

    def axis_coords(n_out, n_in):
        coords = (np.arange(n_out, dtype=np.float32) + 0.5) * (n_in / n_out) - 0.5
        coords = np.clip(coords, 0.0, n_in - 1.0)
        lo = np.floor(coords).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        t = (coords - lo).astype(np.float32)
        return lo, hi, t

    ylo, yhi, ty = axis_coords(out_h, h)
    xlo, xhi, tx = axis_coords(out_w, w)
    # rows first, then columns; lerp form a + t*(b-a) keeps constants exact
    top = img[:, ylo, :]
    rows = top + ty[None, :, None] * (img[:, yhi, :] - top)
    left = rows[:, :, xlo]
    out = left + tx[None, None, :] * (rows[:, :, xhi] - left)
    return np.ascontiguousarray(out)


# -- directory loader ---------------------------------------------------


def load_directory_report(root: str) -> Tuple[List[Sample], int]:
    """Load root/live and root/spoof; returns (samples, skipped_count)."""
    samples: List[Sample] = []
    skipped = 0
    for sub, label in (("live", LABEL_LIVE), ("spoof", LABEL_SPOOF)):
        d = os.path.join(root, sub)
        if not os.path.isdir(d):
            raise ValueError(f"missing class directory {d}")
        loaded_any = False
        for name in sorted(os.listdir(d)):
            path = os.path.join(d, name)
            if not os.path.isfile(path):
                continue
            ext = os.path.splitext(name)[1].lower()
            try:
                if ext == ".ppm":
                    img = read_ppm(path)
                elif ext == ".png":
                    img = read_png(path)
                else:
                    raise ValueError(f"unsupported file type {ext!r}")
                img = resize_bilinear(img, IMAGE_SIZE, IMAGE_SIZE)
            except (ValueError, OSError) as e:
                log.warning("skipping %s: %s", path, e)
                skipped += 1
                continue
            samples.append(Sample(image=img, label=label, id=f"{sub}/{name}"))
            loaded_any = True
        if not loaded_any:
            raise ValueError(f"no loadable images in {d}")
    if skipped:
        log.warning("skipped %d unreadable file(s) under %s", skipped, root)
    return samples, skipped


def load_directory(root: str) -> List[Sample]:
    return load_directory_report(root)[0]


def write_dataset(root: str, samples: Sequence[Sample]) -> None:
    """Write samples as binary PPMs in the loader's directory layout."""
    for sub in ("live", "spoof"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    for s in samples:
        sub = "live" if s.label == LABEL_LIVE else "spoof"
        base = s.id.split("/")[-1]
        if not base.endswith(".ppm"):
            base += ".ppm"
        write_ppm(os.path.join(root, sub, base), s.image)


# -- augmentation -------------------------------------------------------


@dataclass
class AugmentSpec:
    """Color jitter then ISO-style noise; zero scales mean bitwise identity."""

    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    iso_color_shift: float = 0.05
    iso_luminance_noise: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        for name in (
            "brightness", "contrast", "saturation",
            "iso_color_shift", "iso_luminance_noise",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def is_identity(self) -> bool:
        return (
            self.brightness == 0 and self.contrast == 0 and self.saturation == 0
            and self.iso_color_shift == 0 and self.iso_luminance_noise == 0
        )


def augment(sample: Sample, spec: AugmentSpec) -> Sample:
    """Jittered copy of ``sample``; deterministic in (sample.id, spec.rng_seed)."""
    if spec.is_identity:
        return Sample(image=sample.image.copy(), label=sample.label, id=sample.id)
    rng = np.random.default_rng([spec.rng_seed, zlib.crc32(sample.id.encode("utf-8"))])
    img = sample.image.astype(np.float32, copy=True)

    if spec.brightness:
        img += np.float32(rng.uniform(-spec.brightness, spec.brightness))
    if spec.contrast:
        factor = np.float32(1.0 + rng.uniform(-spec.contrast, spec.contrast))
        mean = img.mean(dtype=np.float32)
        img = mean + (img - mean) * factor
    if spec.saturation:
        factor = np.float32(1.0 + rng.uniform(-spec.saturation, spec.saturation))
        lum = img.mean(axis=0, keepdims=True)
        img = lum + (img - lum) * factor
    if spec.iso_color_shift:
        shift = rng.uniform(
            -spec.iso_color_shift, spec.iso_color_shift, size=(3, 1, 1)
        ).astype(np.float32)
        img += shift
    if spec.iso_luminance_noise:
        # shot-noise model: stronger where the signal is brighter
        noise = rng.standard_normal(img.shape, dtype=np.float32)
        img += np.float32(spec.iso_luminance_noise) * np.sqrt(np.clip(img, 0.0, 1.0)) * noise
    img = np.clip(img, 0.0, 1.0)
    return Sample(image=img, label=sample.label, id=sample.id)


def stack_batch(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack samples into ([N,3,H,W] float32, [N] int64 labels)."""
    if not samples:
        raise ValueError("cannot stack an empty batch")
    x = np.stack([s.image for s in samples]).astype(np.float32)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y
