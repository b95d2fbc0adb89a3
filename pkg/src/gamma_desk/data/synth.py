"""Seeded synthetic stand-ins for the terrestrial, underwater and annotated debris corpora.

Scenes are rendered in [0, 1] RGB then mapped to [-1, 1]. The same shape
family is used for every domain: ``plastic`` (pale irregular polygon),
``rov`` (yellow hull with dark band) and ``bio`` (pink-red ellipse with
spots). The underwater style is a fixed global transform (blue-green tint,
contrast compression, blur, vignette) of a terrestrial render.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..metrics import iou_matrix
from ..tensor import ContractError, generator
from .image import gaussian_blur

CLASS_NAMES = ("plastic", "rov", "bio")

TERRESTRIAL = "X"
UNDERWATER = "Y"


@dataclass
class DetectionSample:
    image: np.ndarray
    annotations: np.ndarray  # (m, 5): x_min, y_min, x_max, y_max, class_id
    source: str = ""


@dataclass
class DomainDataset:
    """Images from one visual domain with per-epoch seeded shuffling."""

    domain: str
    images: np.ndarray
    seed: int = 0
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[3] != 3:
            raise ContractError(f"domain images must be (N, H, W, 3), got {self.images.shape}")
        if self.images.shape[1] != self.images.shape[2]:
            raise ContractError("domain images must be square")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def size(self) -> int:
        return self.images.shape[1]

    def epoch_order(self, epoch: int) -> np.ndarray:
        """Permutation used for sampling without replacement in ``epoch``."""
        return generator(self.seed, "sampler", self.domain, str(epoch)).permutation(len(self.images))


def _grid(size: int):
    yy, xx = np.mgrid[0:size, 0:size]
    return yy + 0.5, xx + 0.5


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform([0.55, 0.5, 0.35], [0.75, 0.68, 0.5])
    yy, xx = _grid(size)
    direction = rng.normal(size=2)
    ramp = (yy * direction[0] + xx * direction[1]) / (size * np.linalg.norm(direction) + 1e-9)
    coarse = rng.normal(scale=0.04, size=(size // 8 + 1, size // 8 + 1))
    coarse = np.kron(coarse, np.ones((8, 8)))[:size, :size]
    fine = rng.normal(scale=0.015, size=(size, size, 1))
    img = base + 0.08 * ramp[..., None] + coarse[..., None] + fine
    return img


def _polygon_mask(size: int, cx: float, cy: float, rx: float, ry: float, rng: np.random.Generator) -> np.ndarray:
    k = int(rng.integers(5, 8))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    radii = rng.uniform(0.75, 1.0, size=k)
    yy, xx = _grid(size)
    # angular interpolation of the radius gives a star-shaped polygon
    theta = np.arctan2((yy - cy) / ry, (xx - cx) / rx) % (2 * np.pi)
    ang = np.concatenate([angles, angles[:1] + 2 * np.pi])
    rad = np.concatenate([radii, radii[:1]])
    t = np.where(theta < ang[0], theta + 2 * np.pi, theta)
    r_edge = np.interp(t, ang, rad)
    dist = np.hypot((xx - cx) / rx, (yy - cy) / ry)
    return dist <= r_edge


def _draw(img: np.ndarray, rng: np.random.Generator, cls: int, cx: float, cy: float, w: float, h: float):
    size = img.shape[0]
    yy, xx = _grid(size)
    rx, ry = w / 2, h / 2
    if cls == 0:  # plastic: pale translucent irregular bag
        mask = _polygon_mask(size, cx, cy, rx, ry, rng)
        colour = rng.uniform([0.88, 0.9, 0.92], [0.98, 0.98, 1.0])
        img[mask] = 0.15 * img[mask] + 0.85 * colour
        crease = mask & (np.abs((xx - cx) * 0.6 - (yy - cy)) < 0.8)
        img[crease] *= 0.85
    elif cls == 1:  # rov: rectangular yellow hull, dark band
        mask = (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)
        img[mask] = rng.uniform([0.92, 0.72, 0.05], [1.0, 0.82, 0.18])
        band = mask & (np.abs(yy - cy) <= max(ry * 0.25, 0.6))
        img[band] = [0.12, 0.12, 0.15]
    else:  # bio: red-pink ellipse with pale spots
        mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        img[mask] = rng.uniform([0.78, 0.22, 0.3], [0.92, 0.35, 0.45])
        for _ in range(3):
            sx, sy = cx + rng.uniform(-0.5, 0.5) * rx, cy + rng.uniform(-0.5, 0.5) * ry
            spot = mask & ((xx - sx) ** 2 + (yy - sy) ** 2 <= (0.18 * min(rx, ry) + 0.5) ** 2)
            img[spot] = [0.95, 0.75, 0.75]
    ys, xs = np.nonzero(mask)
    return np.array([xs.min(), ys.min(), xs.max() + 1, ys.max() + 1, cls], dtype=np.float64)


def render_scene(rng: np.random.Generator, size: int, num_classes: int = 3,
                 max_objects: int = 3, min_frac: float = 0.2, max_frac: float = 0.42):
    """Terrestrial-style scene in [0, 1] with 1..max_objects non-overlapping objects."""
    img = _background(rng, size)
    n = int(rng.integers(1, max_objects + 1))
    boxes = []
    for _ in range(n):
        for _attempt in range(30):
            cls = int(rng.integers(0, num_classes))
            w = rng.uniform(min_frac, max_frac) * size
            h = w * rng.uniform(0.55, 1.0) if cls == 1 else w * rng.uniform(0.7, 1.3)
            h = min(h, max_frac * size)
            cx = rng.uniform(w / 2 + 1, size - w / 2 - 1)
            cy = rng.uniform(h / 2 + 1, size - h / 2 - 1)
            cand = np.array([[cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2]])
            if boxes and iou_matrix(cand, np.array(boxes)[:, :4]).max() > 0.0:
                continue
            boxes.append(_draw(img, rng, cls, cx, cy, w, h))
            break
    return np.clip(img, 0.0, 1.0), np.array(boxes).reshape(-1, 5)


def underwater_style(img: np.ndarray) -> np.ndarray:
    """Deterministic underwater look: tint, contrast compression, blur, vignette."""
    size_h, size_w = img.shape[:2]
    out = img * np.array([0.35, 0.8, 0.9]) + np.array([0.02, 0.12, 0.22])
    mean = out.mean(axis=(0, 1), keepdims=True)
    out = mean + 0.7 * (out - mean)
    out = gaussian_blur(out, 0.8)
    yy, xx = np.mgrid[0:size_h, 0:size_w]
    r2 = ((yy + 0.5) / size_h - 0.5) ** 2 + ((xx + 0.5) / size_w - 0.5) ** 2
    out = out * (1.0 - 0.6 * r2)[..., None]
    return np.clip(out, 0.0, 1.0)


def turbidity(img: np.ndarray, rng: np.random.Generator, strength: float = 0.8) -> np.ndarray:
    """Blur, haze-toward-green contrast drop and sensor noise."""
    out = gaussian_blur(img, 1.0 * strength)
    haze = np.array([0.2, 0.45, 0.42])
    a = 0.45 * strength
    out = (1 - a) * out + a * haze
    out = out + rng.normal(scale=0.05 * strength, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def _to_signed(img01: np.ndarray) -> np.ndarray:
    return img01 * 2.0 - 1.0


def synth_domain_pair(seed: int, n_x: int, n_y: int, size: int = 64):
    """Unpaired terrestrial (X) and underwater-style (Y) datasets."""
    if size < 32:
        raise ContractError("synthetic domain images must be at least 32 pixels")
    rx = generator(seed, "domain", TERRESTRIAL)
    ry = generator(seed, "domain", UNDERWATER)
    xs = np.stack([_to_signed(render_scene(rx, size)[0]) for _ in range(n_x)]) if n_x else np.zeros((0, size, size, 3))
    ys = np.stack([_to_signed(underwater_style(render_scene(ry, size)[0])) for _ in range(n_y)]) \
        if n_y else np.zeros((0, size, size, 3))
    return (DomainDataset(TERRESTRIAL, xs, seed=seed, names=[f"x_{i:05d}" for i in range(n_x)]),
            DomainDataset(UNDERWATER, ys, seed=seed, names=[f"y_{i:05d}" for i in range(n_y)]))


def synth_detection_set(seed: int, n: int, size: int = 64, classes: int = 3,
                        degradations: tuple[str, ...] | frozenset = (), domain: str = UNDERWATER,
                        tag: str = "det") -> list[DetectionSample]:
    """Annotated scenes; ``degradations`` may contain ``"turbidity"``.

    ``domain`` selects the terrestrial or underwater rendering; ``tag``
    namespaces the random stream so train and test sets never coincide.
    """
    if classes < 2:
        raise ContractError("need at least 2 classes")
    if size < 32:
        raise ContractError("synthetic detection images must be at least 32 pixels")
    unknown = set(degradations) - {"turbidity"}
    if unknown:
        raise ContractError(f"unknown degradation flag(s) {sorted(unknown)}")
    rng = generator(seed, "detection", tag, domain)
    noise = generator(seed, "detection-noise", tag, domain)
    out = []
    for i in range(n):
        img, boxes = render_scene(rng, size, num_classes=classes)
        if domain == UNDERWATER:
            img = underwater_style(img)
        if "turbidity" in degradations:
            img = turbidity(img, noise)
        out.append(DetectionSample(_to_signed(img), boxes, source=f"{tag}_{domain}_{i:05d}"))
    return out
