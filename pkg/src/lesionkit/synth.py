"""Synthetic skin-lesion images with exact ground truth.

A lesion is a star-shaped region bounded by the radial-harmonic contour

    r(t) = r0 * (1 + sum_k a_k cos(k t + phi_k)) * (1 + s * max(0, cos(t - psi))^2)

where the last factor is a one-sided bulge controlling asymmetry (``s = 0`` gives
the plain harmonic contour). The ground-truth mask is the set of pixel centres with
``|p - c| <= r(angle(p - c))``, nothing else.

Class presets are disjoint on three factor axes:

* border: benign uses only harmonics k <= 3 with a_k <= 0.05; melanoma always has
  at least one harmonic k >= 4 with a_k >= 0.06;
* color: benign is uniform or radial-gradient; melanoma is multi-region;
* skew: benign has s = 0; melanoma has s in [0.15, 0.4].
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgproc import read_image, read_mask, write_image, write_mask

GENERATOR_VERSION = "1.0"
N_HARMONICS = 12
COLOR_MODES = ("uniform", "radial-gradient", "multi-region")
CLASS_NAMES = ("benign", "melanoma")

BACKDROP_COLORS = [(52, 74, 122), (64, 112, 72), (92, 92, 98), (36, 36, 40), (150, 160, 170)]
MELANOMA_COLORS = [(62, 42, 36), (96, 62, 46), (42, 36, 58), (132, 76, 62), (78, 52, 50)]


class SpecError(ValueError):
    pass


@dataclass
class LesionSpec:
    seed: int
    label: int  # 0 benign, 1 melanoma
    radius: float
    amplitudes: list[float]  # a_1 .. a_12
    phases: list[float]
    color_mode: str
    palette: list[list[float]]
    skew: float = 0.0
    skew_angle: float = 0.0
    skin_tone: list[float] = field(default_factory=lambda: [215.0, 170.0, 140.0])
    noise_sigma: float = 3.0
    illumination: float = 0.0
    illumination_angle: float = 0.0
    size: tuple[int, int] = (512, 512)  # (W, H)
    center: tuple[float, float] = (256.0, 256.0)
    backdrop: str | None = None  # side of a non-skin band: top/bottom/left/right
    backdrop_width: int = 0
    backdrop_color: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    blur: float = 0.7

    def validate(self) -> None:
        if self.label not in (0, 1):
            raise SpecError("label must be 0 or 1")
        if self.radius < 16:
            raise SpecError("radius must be >= 16 px")
        if len(self.amplitudes) != N_HARMONICS or len(self.phases) != N_HARMONICS:
            raise SpecError(f"need {N_HARMONICS} amplitudes and phases")
        if any(a < 0 or a > 0.5 for a in self.amplitudes):
            raise SpecError("harmonic amplitudes must lie in [0, 0.5]")
        if self.color_mode not in COLOR_MODES:
            raise SpecError(f"unknown color mode {self.color_mode!r}")
        need = {"uniform": 1, "radial-gradient": 2, "multi-region": 2}[self.color_mode]
        if len(self.palette) < need:
            raise SpecError(f"{self.color_mode} needs at least {need} palette colors")
        if not 0 <= self.skew <= 1:
            raise SpecError("skew must lie in [0, 1]")
        if self.backdrop not in (None, "top", "bottom", "left", "right"):
            raise SpecError(f"unknown backdrop side {self.backdrop!r}")
        theta = np.linspace(0, 2 * np.pi, 2048, endpoint=False)
        r = contour_radius(self, theta)
        if r.min() <= 0.3 * self.radius:
            raise SpecError("contour pinches towards the centre (min r <= 0.3 r0)")
        w, h = self.size
        cx, cy = self.center
        margin = min(cx, cy, w - cx, h - cy) - self._band_reach() - 6
        if r.max() > margin:
            raise SpecError("lesion does not fit inside the skin area")

    def _band_reach(self) -> float:
        return float(self.backdrop_width) if self.backdrop else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        d["center"] = list(self.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LesionSpec:
        d = dict(d)
        d["size"] = tuple(d["size"])
        d["center"] = tuple(d["center"])
        return cls(**d)


def contour_radius(spec: LesionSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    acc = np.zeros(theta.shape)
    for k, (a, phi) in enumerate(zip(spec.amplitudes, spec.phases), start=1):
        if a:  # zero harmonics add nothing
            acc += a * np.cos(k * theta + phi)
    r = 1.0 + acc
    if spec.skew:
        r *= 1.0 + spec.skew * np.maximum(0.0, np.cos(theta - spec.skew_angle)) ** 2
    return spec.radius * r


def _polar(spec: LesionSpec):
    w, h = spec.size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - spec.center[0], yy - spec.center[1]
    d = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    return d, theta, contour_radius(spec, theta)


def lesion_mask(spec: LesionSpec) -> np.ndarray:
    """Rasterized analytic contour: pixel centres inside ``r(theta)``."""
    d, _, big_r = _polar(spec)
    return d <= big_r


def skin_mask(spec: LesionSpec) -> np.ndarray:
    w, h = spec.size
    m = np.ones((h, w), dtype=bool)
    bw = spec.backdrop_width
    if spec.backdrop == "top":
        m[:bw] = False
    elif spec.backdrop == "bottom":
        m[h - bw :] = False
    elif spec.backdrop == "left":
        m[:, :bw] = False
    elif spec.backdrop == "right":
        m[:, w - bw :] = False
    return m


def _lesion_colors(spec: LesionSpec, d, theta, big_r, rng) -> np.ndarray:
    pal = np.asarray(spec.palette, dtype=np.float64)
    h, w = d.shape
    if spec.color_mode == "uniform":
        return np.broadcast_to(pal[0], (h, w, 3)).copy()
    rho = np.clip(d / big_r, 0, 1)[..., None]
    if spec.color_mode == "radial-gradient":
        return pal[0] + (pal[1] - pal[0]) * rho
    # multi-region: Voronoi cells of random seeds in contour-relative polar coordinates
    n = len(pal)
    s_rho = rng.uniform(0.0, 0.75, n)
    s_theta = rng.uniform(-np.pi, np.pi, n)
    px = (rho[..., 0] * np.cos(theta))[..., None]
    py = (rho[..., 0] * np.sin(theta))[..., None]
    dist = (px - s_rho * np.cos(s_theta)) ** 2 + (py - s_rho * np.sin(s_theta)) ** 2
    cells = np.argmin(dist, axis=-1)
    out = pal[cells]
    return ndimage.gaussian_filter(out, sigma=(1.5, 1.5, 0))


def gen_lesion(spec: LesionSpec) -> tuple[np.ndarray, np.ndarray, int]:
    """Render ``(image, gt_mask, label)``; bit-identical for identical specs."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d, theta, big_r = _polar(spec)
    gt = d <= big_r
    h, w = gt.shape

    bg = np.broadcast_to(np.asarray(spec.skin_tone, dtype=np.float64), (h, w, 3)).copy()
    band = ~skin_mask(spec)
    bg[band] = spec.backdrop_color

    lesion = _lesion_colors(spec, d, theta, big_r, rng)
    alpha = np.clip((big_r - d) / 1.5 + 0.5, 0.0, 1.0)[..., None]
    img = bg * (1 - alpha) + lesion * alpha

    if spec.illumination:
        yy, xx = np.mgrid[0:h, 0:w]
        ramp = ((xx - w / 2) * math.cos(spec.illumination_angle) + (yy - h / 2) * math.sin(spec.illumination_angle)) / max(w, h)
        img *= (1.0 + spec.illumination * ramp)[..., None]
    if spec.blur > 0:
        img = ndimage.gaussian_filter(img, sigma=(spec.blur, spec.blur, 0))
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return image, gt, spec.label


# ---------------------------------------------------------------- presets


@dataclass(frozen=True)
class Preset:
    name: str
    size: int = 512
    radius: tuple[float, float] = (55.0, 95.0)
    backdrop_prob: float = 0.35
    default_counts: tuple[int, int] = (100, 100)


PRESETS = {
    "default": Preset("default"),
    "paper-shape": Preset("paper-shape", default_counts=(99, 55)),
    "small": Preset("small", size=256, radius=(28.0, 46.0), default_counts=(10, 10)),
}


def _brown(rng, lo=(90, 55, 40), hi=(150, 95, 70)) -> np.ndarray:
    return rng.uniform(lo, hi)


def _skin_tone(rng) -> list[float]:
    r = rng.uniform(195, 240)
    g = r * rng.uniform(0.72, 0.82)
    b = g * rng.uniform(0.78, 0.92)
    return [float(r), float(g), float(b)]


def sample_spec(preset: Preset | str, label: int, rng: np.random.Generator, max_tries: int = 200) -> LesionSpec:
    """Draw a valid spec of class ``label`` from the preset's distribution."""
    if isinstance(preset, str):
        preset = PRESETS[preset]
    size = preset.size
    scale = size / 512
    for _ in range(max_tries):
        amps = np.zeros(N_HARMONICS)
        phases = rng.uniform(0, 2 * np.pi, N_HARMONICS)
        if label == 0:
            amps[:3] = rng.uniform(0, 0.05, 3)
            if rng.random() < 0.5:
                mode, palette = "uniform", [_brown(rng)]
            else:
                c0 = _brown(rng, (70, 42, 32), (120, 78, 58))
                mode, palette = "radial-gradient", [c0, c0 + rng.uniform(25, 50)]
            skew, skew_angle = 0.0, 0.0
        else:
            amps[:3] = rng.uniform(0, 0.08, 3)
            high = rng.choice(np.arange(3, N_HARMONICS), size=int(rng.integers(2, 5)), replace=False)
            for idx in high:  # idx is k - 1
                top = 0.3 if idx < 6 else 0.12
                amps[idx] = rng.uniform(0.06, top)
            n_col = int(rng.integers(3, 5))
            picks = rng.choice(len(MELANOMA_COLORS), size=n_col, replace=False)
            palette = [np.asarray(MELANOMA_COLORS[i]) + rng.uniform(-10, 10, 3) for i in picks]
            mode = "multi-region"
            skew, skew_angle = float(rng.uniform(0.15, 0.4)), float(rng.uniform(-np.pi, np.pi))

        backdrop, bw, bcol = None, 0, [0.0, 0.0, 0.0]
        if rng.random() < preset.backdrop_prob:
            backdrop = str(rng.choice(["top", "bottom", "left", "right"]))
            bw = int(round(rng.uniform(20, 60) * scale))
            bcol = list(np.asarray(BACKDROP_COLORS[int(rng.integers(len(BACKDROP_COLORS)))], float))
        jitter = 0.05 * size
        spec = LesionSpec(
            seed=int(rng.integers(2**31 - 1)),
            label=label,
            radius=float(rng.uniform(*preset.radius)),
            amplitudes=[float(a) for a in amps],
            phases=[float(p) for p in phases],
            color_mode=mode,
            palette=[[float(v) for v in c] for c in palette],
            skew=skew,
            skew_angle=skew_angle,
            skin_tone=_skin_tone(rng),
            noise_sigma=float(rng.uniform(2.0, 5.0)),
            illumination=float(rng.uniform(0.0, 0.25)),
            illumination_angle=float(rng.uniform(-np.pi, np.pi)),
            size=(size, size),
            center=(float(size / 2 + rng.uniform(-jitter, jitter)), float(size / 2 + rng.uniform(-jitter, jitter))),
            backdrop=backdrop,
            backdrop_width=bw,
            backdrop_color=[float(v) for v in bcol],
        )
        try:
            spec.validate()
        except SpecError:
            continue
        return spec
    raise SpecError(f"could not draw a valid {CLASS_NAMES[label]} spec in {max_tries} tries")


def image_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def corpus_specs(n_benign: int, n_melanoma: int, preset: str, seed: int) -> list[LesionSpec]:
    if n_benign < 1 or n_melanoma < 1:
        raise ValueError("class counts must be >= 1")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    labels = [0] * n_benign + [1] * n_melanoma
    return [sample_spec(preset, lab, image_rng(seed, i)) for i, lab in enumerate(labels)]


# ---------------------------------------------------------------- corpus on disk

MANIFEST_NAME = "manifest.jsonl"


@dataclass
class ManifestEntry:
    image: Path
    mask: Path
    skin_mask: Path
    label: int
    spec: dict

    @property
    def id(self) -> str:
        return self.image.stem


def _write_one(args):
    i, spec, out_dir = args
    image, gt, label = gen_lesion(spec)
    names = (f"img_{i:04d}.png", f"mask_{i:04d}.png", f"skin_{i:04d}.png")
    write_image(out_dir / names[0], image)
    write_mask(out_dir / names[1], gt)
    write_mask(out_dir / names[2], skin_mask(spec))
    return {"image": names[0], "mask": names[1], "skin_mask": names[2], "label": label, "spec": spec.to_dict()}


def gen_corpus(
    n_benign: int, n_melanoma: int, preset: str = "default", seed: int = 0, out_dir: str | Path = "corpus", jobs: int = 1
) -> Path:
    """Write images, masks and a JSON-lines manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    specs = corpus_specs(n_benign, n_melanoma, preset, seed)
    tasks = [(i, s, out_dir) for i, s in enumerate(specs)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            records = list(pool.map(_write_one, tasks))
    else:
        records = [_write_one(t) for t in tasks]
    header = {"kind": "header", "corpus_seed": seed, "generator_version": GENERATOR_VERSION, "preset": preset}
    path = out_dir / MANIFEST_NAME
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def load_manifest(path: str | Path) -> tuple[dict, list[ManifestEntry]]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    base = path.parent
    header, entries = {}, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("kind") == "header":
                header = rec
                continue
            try:
                label = int(rec["label"])
                if label not in (0, 1):
                    raise ValueError(f"label {label} not in {{0, 1}}")
                entries.append(
                    ManifestEntry(
                        base / rec["image"],
                        base / rec["mask"],
                        base / rec.get("skin_mask", rec["mask"]),
                        label,
                        rec.get("spec", {}),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    return header, entries


def load_entry(entry: ManifestEntry):
    return read_image(entry.image), read_mask(entry.mask), read_mask(entry.skin_mask)


def skin_training_pixels(n_images: int = 64, per_image: int = 1500, seed: int = 0):
    """Skin and non-skin RGB samples drawn from generator backgrounds.

    Non-skin samples combine backdrop-band colors with a uniform draw over the RGB
    cube, so lesion colors fall on the non-skin side and are restored by hole filling.
    """
    rng = np.random.default_rng(seed)
    skin, nonskin = [], []
    for i in range(n_images):
        spec = sample_spec("small", i % 2, image_rng(seed, i))
        spec.backdrop = ["top", "bottom", "left", "right"][i % 4]
        spec.backdrop_width = 20
        spec.backdrop_color = list(map(float, BACKDROP_COLORS[i % len(BACKDROP_COLORS)]))
        try:
            image, gt, _ = gen_lesion(spec)
        except SpecError:
            continue
        px = image.reshape(-1, 3)
        sk = (skin_mask(spec) & ~ndimage.binary_dilation(gt, iterations=6)).ravel()
        sel = rng.choice(np.flatnonzero(sk), size=per_image, replace=False)
        skin.append(px[sel])
        band = np.flatnonzero(~skin_mask(spec).ravel())
        nonskin.append(px[rng.choice(band, size=per_image // 4, replace=False)])
    nonskin.append(rng.integers(0, 256, size=(n_images * per_image // 2, 3)))
    return np.concatenate(skin).astype(np.float64), np.concatenate(nonskin).astype(np.float64)
