"""Synthetic scenes and behavioural data with known structure, for offline runs and tests."""

from pathlib import Path

import numpy as np

from .analysis import BehavioralRecord
from .backends.stub import visible_objects
from .config import Manifest, ManifestEntry
from .imageio import save_png


def synthetic_image(rng, height=72, width=96, n_patches=None):
    """Smooth background with a few textured patches (the scene's "objects")."""
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    a, b, c = rng.uniform(-0.3, 0.3, size=3)
    img = np.clip(0.5 + a * xx + b * yy + c * xx * yy, 0.1, 0.9)
    n_patches = int(rng.integers(1, 5)) if n_patches is None else n_patches
    for _ in range(n_patches):
        ph = int(rng.integers(height // 8, height // 3))
        pw = int(rng.integers(width // 8, width // 3))
        y0 = int(rng.integers(0, height - ph))
        x0 = int(rng.integers(0, width - pw))
        mean = rng.uniform(0.2, 0.8)
        img[y0:y0 + ph, x0:x0 + pw] = np.clip(mean + rng.uniform(0.1, 0.25) * rng.standard_normal((ph, pw)), 0, 1)
    return img


def reference_captions(image, rng, n=5):
    """Five human-style captions listing the scene's textured regions."""
    words = [w for w, _ in visible_objects(image)] or ["scene"]
    out = []
    for i in range(n):
        picked = list(dict.fromkeys(rng.permutation(words)[: max(1, len(words) - i % 2)]))
        out.append("People near the " + " and the ".join(picked) + ".")
    return out


def make_synthetic_dataset(out_dir, n_images=10, seed=0, dataset_id="synthetic", height=72, width=96):
    """Write ``n_images`` PNGs and a manifest; returns the :class:`Manifest`."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for k in range(n_images):
        image_id = f"img{k:03d}"
        img = synthetic_image(rng, height, width)
        path = save_png(img, img_dir / f"{image_id}.png")
        entries.append(ManifestEntry(image_id, path, reference_captions(img, rng)))
    manifest = Manifest(dataset_id, entries, created_at="synthetic")
    manifest.save(out_dir / "manifest.json")
    return Manifest.load(out_dir / "manifest.json")


def correlated_with(target, rho, rng):
    """A vector whose sample Pearson correlation with ``target`` is exactly ``rho``."""
    t = np.asarray(target, dtype=np.float64)
    t = t - t.mean()
    t /= np.linalg.norm(t)
    z = rng.standard_normal(t.size)
    z -= z.mean()
    z -= np.dot(z, t) * t
    z /= np.linalg.norm(z)
    return rho * t + np.sqrt(1.0 - rho * rho) * z


def participants_with_means(image_means, n_participants, noise_sd, rng, column="rt_ms", condition="free-viewing"):
    """Records whose per-image average equals ``image_means`` exactly (zero-sum noise)."""
    ids = sorted(image_means)
    means = np.array([image_means[i] for i in ids])
    noise = rng.normal(0.0, noise_sd, size=(n_participants, len(ids)))
    noise -= noise.mean(axis=0, keepdims=True)
    values = means[None, :] + noise
    records = []
    for p in range(n_participants):
        for k, image_id in enumerate(ids):
            v = float(values[p, k])
            if column == "saccade_count":
                v = max(0, int(round(v)))
            records.append(BehavioralRecord(f"P{p:02d}", image_id, condition, **{column: v}))
    return records


def shared_signal_records(n_images, n_participants, noise_sd, rng, base=4000.0, scale=500.0):
    """Each participant = shared per-image signal + independent noise (for consistency checks)."""
    signal = rng.standard_normal(n_images)
    records = []
    for p in range(n_participants):
        noisy = signal + noise_sd * rng.standard_normal(n_images)
        for k in range(n_images):
            records.append(BehavioralRecord(f"P{p:02d}", f"img{k:03d}", rt_ms=base + scale * noisy[k]))
    return records, signal


def behavior_for_manifest(manifest, n_participants=8, seed=0):
    """Plausible behavioural records for a synthetic manifest.

    Free-viewing RT and saccade counts grow with edge density; saccade-limited
    trials echo a reference caption with some words dropped.
    """
    from .baselines import edge_density
    from .imageio import load_image

    rng = np.random.default_rng(seed)
    records = []
    for entry in manifest.entries:
        density = edge_density(load_image(entry.path))
        refs = entry.human_references or ["A scene."]
        for p in range(n_participants):
            pid = f"P{p:02d}"
            rt = 2500.0 + 6000.0 * density + rng.normal(0.0, 300.0)
            sacc = max(1, int(round(4 + 20 * density + rng.normal(0.0, 1.0))))
            records.append(BehavioralRecord(pid, entry.image_id, "free-viewing", rt_ms=rt, saccade_count=sacc))
            for cond, keep in (("2-saccade", 0.6), ("4-saccade", 0.8)):
                words = refs[int(rng.integers(len(refs)))].split()
                kept = [w for w in words if rng.random() < keep] or words[:1]
                records.append(BehavioralRecord(pid, entry.image_id, cond, description=" ".join(kept)))
    return records
