"""Seeded synthetic slide corpus.

Each slide is a white canvas holding one organically shaped tissue
region with a pink base texture; tumor blobs inside it shift toward
purple by a separability factor delta (0 = classes indistinguishable,
1 = trivially separable). Ground-truth masks are exact by construction
and every byte of output is deterministic per seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DegenerateInputError
from .imageops import morph_close

HEALTHY_RGB = np.array([232.0, 180.0, 200.0])
TUMOR_RGB = np.array([150.0, 105.0, 178.0])
MOD_AMP = 15.0
SPLIT_RATIO = (110, 24, 24)
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class SlideRecipe:
    seed: int
    size: int = 1024
    tumor_blobs: int = 3
    blob_radius: tuple[float, float] = (0.05, 0.12)
    delta: float = 0.6
    noise: float = 6.0

    def __post_init__(self) -> None:
        if self.size < 256:
            raise ValueError("canvas must be at least 256x256")
        if self.tumor_blobs < 1:
            raise ValueError("need at least one tumor blob")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must be in [0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        lo, hi = self.blob_radius
        if not 0 < lo <= hi:
            raise ValueError("blob_radius must be an increasing positive pair")


@dataclass
class CorpusEntry:
    slide_id: str
    split: str
    recipe: SlideRecipe
    image: str
    tumor_mask: str
    tissue_mask: str


@dataclass
class CorpusManifest:
    corpus_id: str
    entries: list[CorpusEntry]
    root: Path = field(default=Path("."), repr=False)
    calibration: dict | None = None

    def slides(self, split: str | None = None) -> list[CorpusEntry]:
        if split is None:
            return list(self.entries)
        return [e for e in self.entries if e.split == split]

    def entry(self, slide_id: str) -> CorpusEntry:
        for e in self.entries:
            if e.slide_id == slide_id:
                return e
        raise KeyError(f"unknown slide {slide_id!r}")


# ---------------------------------------------------------------------------
# blob shapes
# ---------------------------------------------------------------------------


def _radius_profile(rng: np.random.Generator, roughness: float, n_angles: int = 720) -> np.ndarray:
    """Periodic multiplicative radius profile from a smoothed random walk."""
    walk = np.cumsum(rng.normal(0.0, 1.0, n_angles))
    walk -= np.linspace(walk[0], walk[-1], n_angles)  # close the loop
    pad = 24
    kernel = np.ones(2 * pad + 1) / (2 * pad + 1)
    wrapped = np.concatenate([walk[-pad:], walk, walk[:pad]])
    walk = np.convolve(wrapped, kernel, mode="same")[pad:-pad]
    peak = float(np.max(np.abs(walk)))
    if peak == 0.0:
        return np.ones(n_angles)
    return 1.0 + roughness * walk / peak


def _rasterize_blob(
    shape: tuple[int, int],
    center: tuple[float, float],
    radius: float,
    profile: np.ndarray,
    aspect: tuple[float, float],
) -> np.ndarray:
    """Star-shaped blob mask: pixels whose scaled radius is under the profile."""
    cy, cx = center
    margin = int(math.ceil(radius * max(aspect) * (1 + np.max(profile)))) + 2
    y0, y1 = max(0, int(cy) - margin), min(shape[0], int(cy) + margin + 1)
    x0, x1 = max(0, int(cx) - margin), min(shape[1], int(cx) + margin + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy = (yy - cy) / aspect[0]
    dx = (xx - cx) / aspect[1]
    dist = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx)
    idx = ((theta + np.pi) / (2 * np.pi) * len(profile)).astype(int) % len(profile)
    local = dist <= radius * profile[idx]
    mask = np.zeros(shape, dtype=bool)
    mask[y0:y1, x0:x1] = local
    return mask


# ---------------------------------------------------------------------------
# slide generation
# ---------------------------------------------------------------------------


def generate_slide(recipe: SlideRecipe) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render one slide: RGB image, tumor mask, tissue mask.

    Deterministic per recipe seed. Tumor is clipped to tissue, so the
    masks are always consistent.
    """
    rng = np.random.default_rng(recipe.seed)
    size = recipe.size
    shape = (size, size)

    center = (
        size / 2 + rng.uniform(-0.05, 0.05) * size,
        size / 2 + rng.uniform(-0.05, 0.05) * size,
    )
    profile = _radius_profile(rng, roughness=0.22)
    aspect = (rng.uniform(0.8, 1.25), rng.uniform(0.8, 1.25))
    tissue = _rasterize_blob(shape, center, 0.33 * size, profile, aspect)
    tissue = morph_close(tissue, 3)

    tumor = np.zeros(shape, dtype=bool)
    tissue_points = np.argwhere(tissue)
    lo, hi = recipe.blob_radius
    for _ in range(recipe.tumor_blobs):
        placed = False
        for _attempt in range(50):
            cy, cx = tissue_points[rng.integers(len(tissue_points))]
            radius = rng.uniform(lo, hi) * size
            blob_profile = _radius_profile(rng, roughness=0.3)
            blob_aspect = (rng.uniform(0.8, 1.25), rng.uniform(0.8, 1.25))
            blob = _rasterize_blob(shape, (float(cy), float(cx)), radius, blob_profile, blob_aspect)
            if blob.sum() == 0:
                continue
            inside = float((blob & tissue).sum()) / float(blob.sum())
            if inside >= 0.6:
                tumor |= blob & tissue
                placed = True
                break
        if not placed:
            raise DegenerateInputError("could not place a tumor blob inside tissue")

    img = np.full((size, size, 3), 255.0)
    tumor_rgb = HEALTHY_RGB + recipe.delta * (TUMOR_RGB - HEALTHY_RGB)
    base = np.where(tumor[..., None], tumor_rgb, HEALTHY_RGB)

    # Low-frequency drift fields, independent per channel, so no color
    # direction is drift-free and patch statistics genuinely overlap at
    # low delta. The drift is class-blind: at delta 0 tumor and healthy
    # pixels stay identically distributed.
    freqs = rng.uniform(1.0, 3.0, size=(3, 2))
    phases = rng.uniform(0.0, 2 * np.pi, size=(3, 2))
    yy, xx = np.mgrid[0:size, 0:size]
    drift = np.stack(
        [
            MOD_AMP
            * (
                np.sin(2 * np.pi * freqs[c, 0] * xx / size + phases[c, 0])
                + np.sin(2 * np.pi * freqs[c, 1] * yy / size + phases[c, 1])
            )
            for c in range(3)
        ],
        axis=-1,
    )
    noise = rng.normal(0.0, recipe.noise, size=(size, size, 3)) if recipe.noise > 0 else 0.0

    textured = base + drift + noise
    img = np.where(tissue[..., None], textured, img)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return img, tumor, tissue


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------


def split_counts(n: int, ratio: tuple[int, int, int] = SPLIT_RATIO) -> tuple[int, int, int]:
    """Largest-remainder split of n slides into train/val/test."""
    total = sum(ratio)
    exact = [n * r / total for r in ratio]
    counts = [int(math.floor(e)) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    for _ in range(n - sum(counts)):
        k = int(np.argmax(remainders))
        counts[k] += 1
        remainders[k] = -1.0
    return tuple(counts)


def generate_corpus(
    out_dir: str | Path,
    n_slides: int,
    seed: int,
    split: str | None = None,
    delta_range: tuple[float, float] = (0.3, 0.9),
    size: int = 1024,
    blob_count_range: tuple[int, int] = (2, 5),
    noise: float = 6.0,
) -> CorpusManifest:
    """Generate n slides with per-slide recipes and write the manifest.

    Delta varies uniformly across slides to spread rough-segmentation
    difficulty. With split=None, slides are assigned train/val/test by
    the scaled default ratio; otherwise every slide gets the given tag.
    """
    if n_slides < 1:
        raise ValueError("need at least one slide")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    if split is None:
        n_train, n_val, n_test = split_counts(n_slides)
        tags = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    else:
        tags = [split] * n_slides

    entries: list[CorpusEntry] = []
    for k in range(n_slides):
        slide_id = f"slide_{k:03d}"
        recipe = SlideRecipe(
            seed=int(rng.integers(0, 2**63 - 1)),
            size=size,
            tumor_blobs=int(rng.integers(blob_count_range[0], blob_count_range[1] + 1)),
            delta=float(rng.uniform(*delta_range)),
            noise=noise,
        )
        img, tumor, tissue = generate_slide(recipe)
        slide_dir = out_dir / slide_id
        slide_dir.mkdir(exist_ok=True)
        Image.fromarray(img).save(slide_dir / "image.png")
        Image.fromarray(tumor).save(slide_dir / "tumor_mask.png")
        Image.fromarray(tissue).save(slide_dir / "tissue_mask.png")
        with open(slide_dir / "recipe.json", "w") as fh:
            json.dump(asdict(recipe), fh, indent=2, sort_keys=True)
        entries.append(
            CorpusEntry(
                slide_id=slide_id,
                split=tags[k],
                recipe=recipe,
                image=f"{slide_id}/image.png",
                tumor_mask=f"{slide_id}/tumor_mask.png",
                tissue_mask=f"{slide_id}/tissue_mask.png",
            )
        )

    manifest = CorpusManifest(corpus_id=f"corpus_{seed}", entries=entries, root=out_dir)
    write_manifest(manifest)
    return manifest


# ---------------------------------------------------------------------------
# manifest persistence and slide loading
# ---------------------------------------------------------------------------


def write_manifest(manifest: CorpusManifest) -> None:
    payload = {
        "version": 1,
        "corpus_id": manifest.corpus_id,
        "calibration": manifest.calibration,
        "entries": [
            {
                "slide_id": e.slide_id,
                "split": e.split,
                "recipe": asdict(e.recipe),
                "image": e.image,
                "tumor_mask": e.tumor_mask,
                "tissue_mask": e.tissue_mask,
            }
            for e in manifest.entries
        ],
    }
    with open(Path(manifest.root) / MANIFEST_NAME, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(corpus_dir: str | Path) -> CorpusManifest:
    corpus_dir = Path(corpus_dir)
    with open(corpus_dir / MANIFEST_NAME) as fh:
        payload = json.load(fh)
    entries = []
    for rec in payload["entries"]:
        recipe_dict = dict(rec["recipe"])
        recipe_dict["blob_radius"] = tuple(recipe_dict["blob_radius"])
        entries.append(
            CorpusEntry(
                slide_id=rec["slide_id"],
                split=rec["split"],
                recipe=SlideRecipe(**recipe_dict),
                image=rec["image"],
                tumor_mask=rec["tumor_mask"],
                tissue_mask=rec["tissue_mask"],
            )
        )
    return CorpusManifest(
        corpus_id=payload["corpus_id"],
        entries=entries,
        root=corpus_dir,
        calibration=payload.get("calibration"),
    )


def load_slide(manifest: CorpusManifest, slide_id: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Image and masks for one slide, as numpy arrays."""
    e = manifest.entry(slide_id)
    root = Path(manifest.root)
    img = np.asarray(Image.open(root / e.image).convert("RGB"))
    tumor = np.asarray(Image.open(root / e.tumor_mask)).astype(bool)
    tissue = np.asarray(Image.open(root / e.tissue_mask)).astype(bool)
    return img, tumor, tissue
