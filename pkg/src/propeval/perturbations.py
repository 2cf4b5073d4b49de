"""The five image perturbation families and box projection between frames.

Rotation keeps one centred crop per image, the largest rectangle with the
image's aspect ratio that stays inside the image at the extreme angle.
A perturbed point ``p`` in crop coordinates maps back to the reference
image as ``origin + c + R(-angle) (p - c)`` with ``c`` the crop centre and
``R`` the standard rotation matrix in (x, y) pixel coordinates.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import BoundingBox, Quad
from .imaging import gaussian_filter, to_uint8

KINDS = ("scale", "blur", "rotation", "illumination", "jpeg", "none")
MAX_ROTATION = 20.0

_RANGES = {
    "scale": (0.5, 2.0),
    "blur": (0.0, 8.0),
    "rotation": (-MAX_ROTATION, MAX_ROTATION),
    "illumination": (50.0, 150.0),
    "jpeg": (5.0, 100.0),
}
_IDENTITY = {"scale": 1.0, "blur": 0.0, "rotation": 0.0, "illumination": 100.0, "jpeg": None, "none": None}


class MissingCropError(ValueError):
    """Rotation projection requested without the image's crop rectangle."""


@dataclass(frozen=True)
class PerturbationSpec:
    """One perturbation; ``param`` is None for ``none`` and lossless jpeg."""

    kind: str
    param: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "none":
            if self.param is not None:
                raise ValueError("perturbation 'none' takes no parameter")
            return
        if self.param is None:
            if self.kind != "jpeg":
                raise ValueError(f"perturbation {self.kind!r} needs a parameter")
            return
        lo, hi = _RANGES[self.kind]
        if not lo <= float(self.param) <= hi:
            raise ValueError(f"{self.kind} parameter {self.param} outside [{lo}, {hi}]")
        object.__setattr__(self, "param", float(self.param))

    @property
    def is_identity(self) -> bool:
        """True when the output image equals the input image."""
        return self.kind != "rotation" and self.param == _IDENTITY[self.kind]

    @property
    def preserves_size(self) -> bool:
        return self.kind in ("blur", "illumination", "jpeg", "none") or self.is_identity

    def param_label(self) -> str:
        if self.param is None:
            return "lossless" if self.kind == "jpeg" else ""
        return format(self.param, ".12g")

    @classmethod
    def parse(cls, kind: str, label: str) -> PerturbationSpec:
        if kind == "none" or label in ("", "none"):
            return cls(kind) if kind == "none" else cls(kind, None)
        if label == "lossless":
            return cls(kind, None)
        return cls(kind, float(label))

    def __str__(self) -> str:
        return self.kind if self.kind == "none" else f"{self.kind}:{self.param_label()}"


def _scale_grid() -> list[float]:
    coarse = [round(2.0**e, 6) for e in np.linspace(-1.0, 1.0, 8)]
    return sorted(set(coarse) | {0.9, 0.95, 0.99, 1.0, 1.01, 1.05, 1.1})


SUITES: dict[str, list] = {
    "scale": _scale_grid(),
    "rotation": [-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
    "blur": [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0],
    "illumination": [50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0, 130.0, 140.0, 150.0],
    "jpeg": [None, 100.0, 90.0, 80.0, 70.0, 50.0, 30.0, 20.0, 10.0, 5.0],
    "none": [None],
}


def perturbation_suite(kind: str) -> list[PerturbationSpec]:
    if kind not in SUITES:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    return [PerturbationSpec(kind, p) for p in SUITES[kind]]


# ---- rotation crop -------------------------------------------------------------


def rotation_crop(width: float, height: float, max_angle: float = MAX_ROTATION) -> BoundingBox:
    """Largest centred, aspect-preserving crop that stays inside the image
    after rotation by ``max_angle`` about the image centre.

    The crop's pixel size is floored to whole pixels.
    """
    theta = math.radians(abs(max_angle))
    if theta > math.pi / 4 + 1e-12:
        raise ValueError("rotation crop needs |max_angle| <= 45 degrees")
    c, s = math.cos(theta), math.sin(theta)
    factor = min(width / (width * c + height * s), height / (width * s + height * c))
    cw = math.floor(width * factor + 1e-9)
    ch = math.floor(height * factor + 1e-9)
    x0 = 0.5 * (width - cw)
    y0 = 0.5 * (height - ch)
    return BoundingBox(x0, y0, x0 + cw, y0 + ch)


def _rotation(angle: float) -> np.ndarray:
    t = math.radians(angle)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def _crop_center(crop: BoundingBox) -> np.ndarray:
    return np.array([0.5 * crop.width, 0.5 * crop.height])


def rotation_to_reference(points: np.ndarray, angle: float, crop: BoundingBox) -> np.ndarray:
    """Map points from the rotated crop frame to reference coordinates."""
    c = _crop_center(crop)
    p = np.asarray(points, dtype=np.float64)
    return (p - c) @ _rotation(-angle).T + c + [crop.x0, crop.y0]


def rotation_to_perturbed(points: np.ndarray, angle: float, crop: BoundingBox) -> np.ndarray:
    """Inverse of :func:`rotation_to_reference`."""
    c = _crop_center(crop)
    p = np.asarray(points, dtype=np.float64) - [crop.x0, crop.y0]
    return (p - c) @ _rotation(angle).T + c


# ---- applying perturbations ----------------------------------------------------


def scaled_size(width: int, height: int, factor: float) -> tuple[int, int]:
    return max(1, math.floor(width * factor + 1e-9)), max(1, math.floor(height * factor + 1e-9))


def _scale(image: np.ndarray, factor: float) -> np.ndarray:
    # PIL's bicubic is Keys a = -0.5 and widens the kernel when shrinking.
    h, w = image.shape[:2]
    size = scaled_size(w, h, factor)
    return np.asarray(Image.fromarray(image).resize(size, Image.Resampling.BICUBIC), dtype=np.uint8)


def _blur(image: np.ndarray, sigma: float) -> np.ndarray:
    radius = int(math.ceil(10.0 * sigma))
    return to_uint8(gaussian_filter(image, sigma, radius, mode="reflect"))


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone conversion of float RGB in [0, 1]; V = max(R, G, B)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    delta = v - rgb.min(axis=-1)
    s = np.where(v > 0, delta / np.where(v > 0, v, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(
        v == r,
        ((g - b) / safe) % 6.0,
        np.where(v == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(delta > 0, h / 6.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    sector = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = [
        np.stack([v, t, p], axis=-1),
        np.stack([q, v, p], axis=-1),
        np.stack([p, v, t], axis=-1),
        np.stack([p, q, v], axis=-1),
        np.stack([t, p, v], axis=-1),
        np.stack([v, p, q], axis=-1),
    ]
    out = np.zeros(hsv.shape, dtype=np.float64)
    for i, choice in enumerate(choices):
        out = np.where((sector == i)[..., None], choice, out)
    return out


def _illumination(image: np.ndarray, percent: float) -> np.ndarray:
    hsv = rgb_to_hsv(image.astype(np.float64) / 255.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * percent / 100.0, 0.0, 1.0)
    return to_uint8(hsv_to_rgb(hsv) * 255.0)


def _jpeg(image: np.ndarray, quality: float) -> np.ndarray:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="JPEG", quality=int(round(quality)))
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def _rotate(image: np.ndarray, angle: float, crop: BoundingBox) -> np.ndarray:
    h_out, w_out = int(round(crop.height)), int(round(crop.width))
    ys, xs = np.mgrid[0:h_out, 0:w_out]
    centres = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
    src = rotation_to_reference(centres, angle, crop) - 0.5
    channels = [
        ndimage.map_coordinates(image[..., ch].astype(np.float64), [src[:, 1], src[:, 0]], order=1, mode="nearest")
        for ch in range(image.shape[2])
    ]
    return to_uint8(np.stack(channels, axis=-1).reshape(h_out, w_out, -1))


def apply_perturbation(image: np.ndarray, spec: PerturbationSpec, crop: BoundingBox | None = None) -> np.ndarray:
    """Perturbed copy of an ``(H, W, 3)`` uint8 image.

    Rotation samples the crop (default: :func:`rotation_crop` at the
    suite's extreme angle) bilinearly and returns an image of the crop size.
    """
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3:
        raise ValueError("expected an (H, W, C) uint8 image")
    if spec.is_identity:
        return image.copy()
    if spec.kind == "scale":
        return _scale(image, spec.param)
    if spec.kind == "blur":
        return _blur(image, spec.param)
    if spec.kind == "illumination":
        return _illumination(image, spec.param)
    if spec.kind == "jpeg":
        return _jpeg(image, spec.param)
    if spec.kind == "rotation":
        if crop is None:
            crop = rotation_crop(image.shape[1], image.shape[0])
        return _rotate(image, spec.param, crop)
    raise AssertionError(spec.kind)


def perturbed_size(width: int, height: int, spec: PerturbationSpec, crop: BoundingBox | None = None) -> tuple[int, int]:
    if spec.kind == "scale" and not spec.is_identity:
        return scaled_size(width, height, spec.param)
    if spec.kind == "rotation":
        crop = crop or rotation_crop(width, height)
        return int(round(crop.width)), int(round(crop.height))
    return width, height


# ---- projection ----------------------------------------------------------------


def project_boxes(boxes: np.ndarray, spec: PerturbationSpec, crop: BoundingBox | None = None) -> np.ndarray:
    """Project perturbed-frame boxes into the reference frame.

    Returns ``(N, 4)`` boxes, or ``(N, 4, 2)`` quads for rotation.
    """
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if spec.kind == "rotation":
        if crop is None:
            raise MissingCropError("rotation projection needs the crop rectangle")
        corners = b[:, [0, 1, 2, 1, 2, 3, 0, 3]].reshape(-1, 4, 2)
        return rotation_to_reference(corners.reshape(-1, 2), spec.param, crop).reshape(-1, 4, 2)
    if spec.kind == "scale":
        return b / spec.param
    return b.copy()


def project_box(box: BoundingBox, spec: PerturbationSpec, crop: BoundingBox | None = None):
    out = project_boxes(box.as_array(), spec, crop)
    if out.ndim == 3:
        return Quad(tuple(map(tuple, out[0])))
    return BoundingBox.from_array(out[0], box.score)


def forward_boxes(boxes: np.ndarray, spec: PerturbationSpec, crop: BoundingBox | None = None) -> np.ndarray:
    """Analytic reference-to-perturbed map (quads for rotation)."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if spec.kind == "rotation":
        if crop is None:
            raise MissingCropError("rotation projection needs the crop rectangle")
        corners = b[:, [0, 1, 2, 1, 2, 3, 0, 3]].reshape(-1, 2)
        return rotation_to_perturbed(corners, spec.param, crop).reshape(-1, 4, 2)
    if spec.kind == "scale":
        return b * spec.param
    return b.copy()


def region_centres(regions: np.ndarray) -> np.ndarray:
    r = np.asarray(regions, dtype=np.float64)
    if r.ndim == 3:
        return r.mean(axis=1)
    r = r.reshape(-1, 4)
    return np.stack([0.5 * (r[:, 0] + r[:, 2]), 0.5 * (r[:, 1] + r[:, 3])], axis=1)


def centres_inside(regions: np.ndarray, width: float, height: float) -> np.ndarray:
    c = region_centres(regions)
    return (c[:, 0] >= 0) & (c[:, 0] <= width) & (c[:, 1] >= 0) & (c[:, 1] <= height)


def center_inside(projected, width: float, height: float) -> bool:
    if isinstance(projected, Quad):
        cx, cy = projected.centroid()
    else:
        cx, cy = projected.center()
    return 0 <= cx <= width and 0 <= cy <= height
