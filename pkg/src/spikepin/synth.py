"""Procedural dataset generation: pin scenes, augmentations, manifests, splits.

Both classes are rendered procedurally at desk scale: a seated pin is a
bright cylindrical ridge over textured barrier concrete, a missing pin an
empty darkened channel.  The unsafe class is expanded from a small set of
base frames through the augmentation suite (rotation, perspective warp,
gamma shift, occlusion, translation, morphological distortion); augmented
copies inherit their base frame's id, and the stratified splitter keeps
every base-frame family inside a single split so augmented near-duplicates
can never leak across train/val/test.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, grey_dilation, grey_erosion

from . import imgio
from .preproc import Label, LabeledFrame, Provenance

MANIFEST_FORMAT = "spikepin-manifest"
MANIFEST_VERSION = 1

SPLITS = ("train", "val", "test")

ROTATION_LIMIT_DEG = 10.0
PERSPECTIVE_LIMIT = 0.08
GAMMA_RANGE = (0.5, 2.0)
OCCLUSION_AREA_LIMIT = 0.30
TRANSLATION_LIMIT_PX = 8
MORPH_RADIUS_LIMIT = 2


@dataclass(frozen=True)
class SceneParams:
    width: int = 128
    height: int = 128
    pin_present: bool = True
    pin_cx: float = 64.0
    pin_cy: float = 64.0
    pin_radius: float = 6.0
    pin_length: float = 80.0
    noise_amplitude: float = 0.08
    illumination: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise_amplitude <= 0.5:
            raise ValueError("noise_amplitude must lie in [0, 0.5]")
        if self.width < 32 or self.height < 32:
            raise ValueError("scene must be at least 32x32")
        if self.pin_present:
            margin = 2.0
            if (
                self.pin_cx - self.pin_radius < margin
                or self.pin_cx + self.pin_radius > self.width - margin
                or self.pin_cy - self.pin_length / 2 < margin
                or self.pin_cy + self.pin_length / 2 > self.height - margin
            ):
                raise ValueError("pin does not fit inside the scene")


def _capsule_distance(params: SceneParams) -> np.ndarray:
    """Distance of every pixel to the pin's vertical axis segment."""
    yy, xx = np.mgrid[0 : params.height, 0 : params.width].astype(np.float64)
    half = params.pin_length / 2.0
    dy = np.clip(yy - params.pin_cy, -half, half)
    return np.hypot(xx - params.pin_cx, yy - (params.pin_cy + dy))


def render_scene(params: SceneParams) -> tuple[np.ndarray, np.ndarray]:
    """Render (image u8, pin-channel mask); pure function of the params."""
    rng = np.random.default_rng(params.seed)
    h, w = params.height, params.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    # illumination: linear ramp across a random direction
    phi = rng.uniform(0.0, 2.0 * np.pi)
    ramp = (np.cos(phi) * (xx / (w - 1) - 0.5)) + (np.sin(phi) * (yy / (h - 1) - 0.5))
    img = 115.0 + 70.0 * params.illumination * ramp * 2.0

    # concrete texture: smoothed noise plus light per-pixel grain
    coarse = gaussian_filter(rng.standard_normal((h, w)), 2.5)
    coarse /= max(float(coarse.std()), 1e-9)
    img += 255.0 * params.noise_amplitude * 0.3 * coarse
    img += rng.normal(0.0, 2.0, size=(h, w))

    # a couple of horizontal casting seams
    for _ in range(2):
        row = int(rng.integers(h // 8, h - h // 8))
        seam = np.zeros((h, w))
        seam[row] = -18.0
        img += gaussian_filter(seam, (1.2, 6.0))

    dist = _capsule_distance(params)
    mask = dist <= params.pin_radius
    profile = np.sqrt(np.clip(1.0 - (dist / params.pin_radius) ** 2, 0.0, 1.0))
    if params.pin_present:
        # bright cylinder with a darker contact outline
        img += 85.0 * profile
        ring = np.clip(1.0 - np.abs(dist - params.pin_radius) / 1.5, 0.0, 1.0)
        img -= 20.0 * ring
    else:
        # empty channel: shallow dark recess where the pin should sit
        img -= 30.0 * profile

    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask


def generate_scene(params: SceneParams, source_id: str = "scene") -> LabeledFrame:
    img, _ = render_scene(params)
    label = Label.PIN_OK if params.pin_present else Label.PIN_OUT
    provenance = Provenance.REAL_LIKE if params.pin_present else Provenance.SYNTHETIC_BASE
    return LabeledFrame(image=img, label=label, source_id=source_id, provenance=provenance)


@dataclass(frozen=True)
class AugmentationSpec:
    """Concrete transform parameters; None disables a transform entirely."""

    rotation_deg: float | None = None
    perspective: tuple[tuple[float, float], ...] | None = None  # 4 corner offsets
    gamma: float | None = None
    occlusion: tuple[int, int, int, int, int] | None = None  # x0, y0, w, h, intensity
    translation: tuple[int, int] | None = None
    morphology: tuple[str, int] | None = None  # ("dilate"|"erode", radius)

    def __post_init__(self) -> None:
        if self.rotation_deg is not None and abs(self.rotation_deg) > ROTATION_LIMIT_DEG:
            raise ValueError(f"rotation limited to +/-{ROTATION_LIMIT_DEG} degrees")
        if self.perspective is not None:
            if len(self.perspective) != 4:
                raise ValueError("perspective needs 4 corner offsets")
            for dx, dy in self.perspective:
                if abs(dx) > PERSPECTIVE_LIMIT or abs(dy) > PERSPECTIVE_LIMIT:
                    raise ValueError(f"corner jitter limited to {PERSPECTIVE_LIMIT}")
        if self.gamma is not None and not GAMMA_RANGE[0] <= self.gamma <= GAMMA_RANGE[1]:
            raise ValueError(f"gamma must lie in {GAMMA_RANGE}")
        if self.translation is not None:
            if max(abs(self.translation[0]), abs(self.translation[1])) > TRANSLATION_LIMIT_PX:
                raise ValueError(f"translation limited to +/-{TRANSLATION_LIMIT_PX} px")
        if self.morphology is not None:
            op, radius = self.morphology
            if op not in ("dilate", "erode"):
                raise ValueError("morphology op must be dilate or erode")
            if not 1 <= radius <= MORPH_RADIUS_LIMIT:
                raise ValueError(f"morphology radius limited to {MORPH_RADIUS_LIMIT}")

    def record(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def sample_augmentation(rng: np.random.Generator, width: int, height: int) -> AugmentationSpec:
    """Draw a spec with every transform enabled, within the documented ranges."""
    corners = tuple(
        (float(rng.uniform(-PERSPECTIVE_LIMIT, PERSPECTIVE_LIMIT)),
         float(rng.uniform(-PERSPECTIVE_LIMIT, PERSPECTIVE_LIMIT)))
        for _ in range(4)
    )
    occ_w = int(rng.integers(width // 8, int(width * 0.55)))
    occ_h = int(rng.integers(height // 8, int(height * 0.55)))
    while occ_w * occ_h > OCCLUSION_AREA_LIMIT * width * height:
        occ_h = max(height // 8, occ_h // 2)
        occ_w = max(width // 8, occ_w - width // 8)
    return AugmentationSpec(
        rotation_deg=float(rng.uniform(-ROTATION_LIMIT_DEG, ROTATION_LIMIT_DEG)),
        perspective=corners,
        gamma=float(rng.uniform(*GAMMA_RANGE)),
        occlusion=(
            int(rng.integers(0, width - occ_w)),
            int(rng.integers(0, height - occ_h)),
            occ_w,
            occ_h,
            int(rng.integers(30, 90)),
        ),
        translation=(
            int(rng.integers(-TRANSLATION_LIMIT_PX, TRANSLATION_LIMIT_PX + 1)),
            int(rng.integers(-TRANSLATION_LIMIT_PX, TRANSLATION_LIMIT_PX + 1)),
        ),
        morphology=("dilate" if rng.random() < 0.5 else "erode", int(rng.integers(1, 3))),
    )


def _homography_from_corners(corners, width: int, height: int) -> np.ndarray:
    """3x3 map sending output corners onto jittered source corners (DLT)."""
    w1, h1 = width - 1.0, height - 1.0
    dst = np.array([(0, 0), (w1, 0), (w1, h1), (0, h1)], dtype=np.float64)
    src = dst + np.array(corners, dtype=np.float64) * np.array([w1, h1])
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((xd, yd), (xs, ys)) in enumerate(zip(dst, src)):
        a[2 * i] = [xd, yd, 1, 0, 0, 0, -xd * xs, -yd * xs]
        a[2 * i + 1] = [0, 0, 0, xd, yd, 1, -xd * ys, -yd * ys]
        b[2 * i] = xs
        b[2 * i + 1] = ys
    coeffs = np.linalg.solve(a, b)
    return np.append(coeffs, 1.0).reshape(3, 3)


def _bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample with edge replication; inputs are float source coordinates."""
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    img_f = img.astype(np.float64)
    top = img_f[y0, x0] * (1 - fx) + img_f[y0, x1] * fx
    bot = img_f[y1, x0] * (1 - fx) + img_f[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _geometry_matrix(spec: AugmentationSpec, width: int, height: int) -> np.ndarray | None:
    """Composed output-to-source map for rotation, perspective and translation."""
    mats = []
    if spec.rotation_deg is not None:
        theta = np.deg2rad(spec.rotation_deg)
        c, s = np.cos(theta), np.sin(theta)
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        # inverse rotation about the image center
        mats.append(
            np.array(
                [
                    [c, s, cx - c * cx - s * cy],
                    [-s, c, cy + s * cx - c * cy],
                    [0, 0, 1],
                ]
            )
        )
    if spec.perspective is not None:
        mats.append(_homography_from_corners(spec.perspective, width, height))
    if spec.translation is not None:
        dx, dy = spec.translation
        mats.append(np.array([[1, 0, -dx], [0, 1, -dy], [0, 0, 1]], dtype=np.float64))
    if not mats:
        return None
    out = mats[0]
    for m in mats[1:]:
        out = out @ m
    return out


def _disk_footprint(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (xx**2 + yy**2) <= r**2


def augment(frame: LabeledFrame, spec: AugmentationSpec, seed: int = 0) -> LabeledFrame:
    """Apply the enabled transforms in fixed order; the label is preserved.

    Order: geometry (one bilinear resampling pass) -> gamma -> occlusion ->
    morphology.  Borders are edge-replicated.
    """
    img = frame.image
    h, w = img.shape

    matrix = _geometry_matrix(spec, w, h)
    if matrix is not None:
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        ones = np.ones_like(xx)
        coords = np.stack([xx.ravel(), yy.ravel(), ones.ravel()])
        mapped = matrix @ coords
        xs = (mapped[0] / mapped[2]).reshape(h, w)
        ys = (mapped[1] / mapped[2]).reshape(h, w)
        img = np.clip(np.rint(_bilinear_sample(img, xs, ys)), 0, 255).astype(np.uint8)

    if spec.gamma is not None:
        lut = np.clip(
            np.rint(255.0 * (np.arange(256) / 255.0) ** spec.gamma), 0, 255
        ).astype(np.uint8)
        img = lut[img]

    if spec.occlusion is not None:
        x0, y0, ow, oh, intensity = spec.occlusion
        if ow * oh > OCCLUSION_AREA_LIMIT * w * h:
            raise ValueError("occlusion rectangle exceeds 30% of the frame")
        if x0 < 0 or y0 < 0 or x0 + ow > w or y0 + oh > h:
            raise ValueError("occlusion rectangle leaves the frame")
        rng = np.random.default_rng(seed)
        patch = intensity + rng.normal(0.0, 3.0, size=(oh, ow))
        img = img.copy()
        img[y0 : y0 + oh, x0 : x0 + ow] = np.clip(np.rint(patch), 0, 255)

    if spec.morphology is not None:
        op, radius = spec.morphology
        footprint = _disk_footprint(radius)
        fn = grey_dilation if op == "dilate" else grey_erosion
        img = fn(img, footprint=footprint)

    return LabeledFrame(
        image=np.ascontiguousarray(img, dtype=np.uint8),
        label=frame.label,
        source_id=frame.source_id,
        provenance=Provenance.AUGMENTED,
    )


@dataclass
class ManifestEntry:
    path: str  # relative to the manifest's directory
    label: str
    provenance: str
    base_id: str
    split: str | None
    seed: int
    augmentation: dict | None
    sha256: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


@dataclass
class Manifest:
    seed: int
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None  # directory the relative paths resolve against

    def class_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.entries:
            counts[e.label] = counts.get(e.label, 0) + 1
        return counts

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def resolve(self, entry: ManifestEntry) -> Path:
        if self.root is None:
            raise ValueError("manifest has no root directory")
        return self.root / entry.path

    def write(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = json.dumps(
            {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "seed": self.seed},
            sort_keys=True,
            separators=(",", ":"),
        )
        tmp = path.with_suffix(path.suffix + ".tmp")
        try:
            with open(tmp, "w") as fh:
                fh.write(header + "\n")
                for entry in self.entries:
                    fh.write(entry.to_json() + "\n")
            tmp.replace(path)
        except OSError:
            tmp.unlink(missing_ok=True)
            raise
        self.root = path.parent

    @classmethod
    def read(cls, path: str | os.PathLike) -> "Manifest":
        path = Path(path)
        with open(path) as fh:
            lines = [line for line in fh.read().splitlines() if line]
        if not lines:
            raise ValueError(f"empty manifest: {path}")
        header = json.loads(lines[0])
        if header.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"not a {MANIFEST_FORMAT} file: {path}")
        entries = [ManifestEntry(**json.loads(line)) for line in lines[1:]]
        return cls(seed=header["seed"], entries=entries, root=path.parent)

    def sha256(self) -> str:
        h = hashlib.sha256()
        header = json.dumps(
            {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "seed": self.seed},
            sort_keys=True,
            separators=(",", ":"),
        )
        h.update((header + "\n").encode())
        for entry in self.entries:
            h.update((entry.to_json() + "\n").encode())
        return h.hexdigest()


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _ok_scene_params(rng: np.random.Generator, width: int, height: int, seed: int) -> SceneParams:
    radius = float(rng.uniform(5.0, 8.0))
    length = float(rng.uniform(0.55, 0.72)) * height
    return SceneParams(
        width=width,
        height=height,
        pin_present=True,
        pin_cx=float(rng.uniform(0.38, 0.62)) * width,
        pin_cy=float(rng.uniform(0.45, 0.55)) * height,
        pin_radius=radius,
        pin_length=length,
        noise_amplitude=float(rng.uniform(0.04, 0.14)),
        illumination=float(rng.uniform(0.1, 0.4)),
        seed=seed,
    )


def build_dataset(
    out_dir: str | os.PathLike,
    n_ok: int = 450,
    n_out: int = 150,
    base_out: int = 12,
    seed: int = 0,
    width: int = 128,
    height: int = 128,
) -> Manifest:
    """Render the dataset to out_dir/images and write out_dir/manifest.jsonl.

    The safe class is n_ok independent scenes; the unsafe class is base_out
    pin-removed base frames expanded with augmented copies up to n_out total
    (augmentation counts are spread round-robin when they do not divide
    evenly).  Everything is a pure function of the seed.
    """
    if n_out < base_out:
        raise ValueError("n_out must be at least base_out")
    out_dir = Path(out_dir)
    images = out_dir / "images"
    images.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries: list[ManifestEntry] = []

    def emit(frame: LabeledFrame, rel: str, item_seed: int, aug: dict | None) -> None:
        path = images / rel
        imgio.write_png(path, frame.image)
        entries.append(
            ManifestEntry(
                path=str(Path("images") / rel),
                label=frame.label.value,
                provenance=frame.provenance.value,
                base_id=frame.source_id.split("#")[0],
                split=None,
                seed=item_seed,
                augmentation=aug,
                sha256=_file_sha256(path),
            )
        )

    for i in range(n_ok):
        item_seed = int(rng.integers(0, 2**63 - 1))
        params = _ok_scene_params(np.random.default_rng(item_seed), width, height, item_seed)
        frame = generate_scene(params, source_id=f"ok_{i:05d}")
        emit(frame, f"ok_{i:05d}.png", item_seed, None)

    n_aug = n_out - base_out
    per_base = [n_aug // base_out + (1 if i < n_aug % base_out else 0) for i in range(base_out)]
    for i in range(base_out):
        item_seed = int(rng.integers(0, 2**63 - 1))
        base_rng = np.random.default_rng(item_seed)
        params = _ok_scene_params(base_rng, width, height, item_seed)
        params = SceneParams(**{**asdict(params), "pin_present": False})
        base_frame = generate_scene(params, source_id=f"outbase_{i:04d}")
        emit(base_frame, f"outbase_{i:04d}.png", item_seed, None)
        for j in range(per_base[i]):
            aug_seed = int(rng.integers(0, 2**63 - 1))
            spec = sample_augmentation(np.random.default_rng(aug_seed), width, height)
            copy = augment(base_frame, spec, seed=aug_seed)
            copy.source_id = f"outbase_{i:04d}#aug{j:03d}"
            emit(copy, f"outaug_{i:04d}_{j:03d}.png", aug_seed, spec.record())

    manifest = Manifest(seed=seed, entries=entries, root=out_dir)
    manifest.write(out_dir / "manifest.jsonl")
    return manifest


def _largest_remainder(total: int, fractions: tuple[float, ...]) -> list[int]:
    raw = [f * total for f in fractions]
    base = [int(np.floor(r)) for r in raw]
    leftover = total - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def stratified_split(
    manifest: Manifest,
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> Manifest:
    """Assign train/val/test split labels, per class, never splitting a base family.

    Targets follow largest-remainder apportionment of each class count; a
    greedy fill plus a local move/swap repair gets the per-split counts as
    close as the base-family group sizes allow (exact for singleton groups).
    """
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative and sum to 1")
    rng = np.random.default_rng(seed)
    active = [i for i, f in enumerate(fractions) if f > 0]

    by_class: dict[str, dict[str, list[int]]] = {}
    for idx, entry in enumerate(manifest.entries):
        by_class.setdefault(entry.label, {}).setdefault(entry.base_id, []).append(idx)

    assignment: dict[str, int] = {}
    for label in sorted(by_class):
        groups = by_class[label]
        group_ids = sorted(groups)
        if len(group_ids) < len(active):
            raise ValueError(
                f"class {label!r} has {len(group_ids)} base families, "
                f"fewer than the {len(active)} requested splits"
            )
        class_total = sum(len(groups[g]) for g in group_ids)
        targets = _largest_remainder(class_total, fractions)
        rng.shuffle(group_ids)

        filled = [0, 0, 0]
        placed: dict[str, int] = {}

        def fill_priority(s: int) -> tuple:
            # relative deficit first so small splits are not starved by ties
            deficit = targets[s] - filled[s]
            rel = deficit / targets[s] if targets[s] > 0 else -np.inf
            return (rel, deficit, -s)

        for gid in group_ids:
            size = len(groups[gid])
            split = max(active, key=fill_priority)
            placed[gid] = split
            filled[split] += size

        # local repair: moves and swaps that shrink the total deficit
        def total_err() -> int:
            return sum(abs(targets[s] - filled[s]) for s in active)

        improved = True
        rounds = 0
        while improved and total_err() > 0 and rounds < 500:
            improved = False
            rounds += 1
            for gid in group_ids:
                a = placed[gid]
                size = len(groups[gid])
                for b in active:
                    if b == a:
                        continue
                    before = abs(targets[a] - filled[a]) + abs(targets[b] - filled[b])
                    after = abs(targets[a] - (filled[a] - size)) + abs(
                        targets[b] - (filled[b] + size)
                    )
                    if after < before:
                        placed[gid] = b
                        filled[a] -= size
                        filled[b] += size
                        improved = True
                        break
            if improved or total_err() == 0:
                continue
            for g1 in group_ids:
                a = placed[g1]
                z1 = len(groups[g1])
                for g2 in group_ids:
                    b = placed[g2]
                    if b == a:
                        continue
                    z2 = len(groups[g2])
                    if z1 == z2:
                        continue
                    before = abs(targets[a] - filled[a]) + abs(targets[b] - filled[b])
                    after = abs(targets[a] - (filled[a] - z1 + z2)) + abs(
                        targets[b] - (filled[b] + z1 - z2)
                    )
                    if after < before:
                        placed[g1], placed[g2] = b, a
                        filled[a] += z2 - z1
                        filled[b] += z1 - z2
                        improved = True
                        break
                if improved:
                    break

        for gid, split in placed.items():
            for idx in groups[gid]:
                assignment[manifest.entries[idx].path] = split

    out_entries = []
    for entry in manifest.entries:
        e = ManifestEntry(**asdict(entry))
        e.split = SPLITS[assignment[entry.path]]
        out_entries.append(e)
    return Manifest(seed=manifest.seed, entries=out_entries, root=manifest.root)
