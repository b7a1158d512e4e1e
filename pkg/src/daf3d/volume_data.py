"""Volumes, masks, file I/O, augmentation, synthetic phantoms and folds.

Axis order everywhere is (W, H, L) with L the slice axis.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

DEFAULT_SPACING = (0.5, 0.5, 0.5)
MIN_DIM = 8


class VolumeFormatError(ValueError):
    """File parsed but does not hold a usable 3D grid."""


class PhantomSpecError(ValueError):
    pass


@dataclass
class Volume:
    data: np.ndarray
    spacing: tuple = DEFAULT_SPACING
    id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise VolumeFormatError(f"volume must be 3D, got shape {self.data.shape}")
        if min(self.data.shape) < MIN_DIM:
            raise VolumeFormatError(
                f"volume dimensions must all be >= {MIN_DIM}, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise VolumeFormatError("volume contains non-finite intensities")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def shape(self):
        return self.data.shape


@dataclass
class Mask:
    data: np.ndarray
    spacing: tuple = DEFAULT_SPACING
    id: str = ""

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise VolumeFormatError(f"mask must be 3D, got shape {data.shape}")
        if not np.isin(data, (0, 1)).all():
            raise VolumeFormatError("mask values must be exactly 0 or 1")
        self.data = data.astype(np.uint8)
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def shape(self):
        return self.data.shape


def check_pair(v: Volume, m: Mask):
    if v.shape != m.shape:
        raise VolumeFormatError(f"volume shape {v.shape} != mask shape {m.shape}")


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

def _is_nifti(path):
    name = str(path).lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def _raw_paths(path):
    path = Path(path)
    if path.suffix == ".hdr":
        return path.with_suffix(".raw"), path
    return path, path.with_suffix(".hdr")


def write_raw(path, array, spacing=DEFAULT_SPACING):
    """Write ``array`` as a raw payload plus a text sidecar header.

    Floats are stored as little-endian float32, everything else as uint8.
    """
    raw, hdr = _raw_paths(path)
    array = np.asarray(array)
    if array.dtype.kind == "f":
        payload, dtype = array.astype("<f4"), "float32"
    else:
        payload, dtype = array.astype("u1"), "uint8"
    raw.parent.mkdir(parents=True, exist_ok=True)
    # Fortran order matches NIfTI's on-disk convention (first axis fastest)
    raw.write_bytes(payload.tobytes(order="F"))
    hdr.write_text(
        "shape = " + " ".join(str(n) for n in array.shape) + "\n"
        + "spacing = " + " ".join(repr(float(s)) for s in spacing) + "\n"
        + f"dtype = {dtype}\n"
        + "byteorder = little\n",
        encoding="utf-8",
    )


def read_raw(path):
    raw, hdr = _raw_paths(path)
    try:
        text = hdr.read_text(encoding="utf-8")
        payload = raw.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read raw volume {raw}: {exc}") from exc
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise VolumeFormatError(f"{hdr}: malformed header line {line!r}")
        fields[key.strip()] = value.strip()
    try:
        shape = tuple(int(n) for n in fields["shape"].split())
        dtype = {"float32": "<f4", "uint8": "u1"}[fields.get("dtype", "float32")]
    except (KeyError, ValueError) as exc:
        raise VolumeFormatError(f"{hdr}: bad or missing header field ({exc})") from exc
    spacing = (tuple(float(s) for s in fields["spacing"].split())
               if "spacing" in fields else DEFAULT_SPACING)
    if len(shape) != 3:
        raise VolumeFormatError(f"{raw}: expected 3D data, header declares shape {shape}")
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if len(payload) != expected:
        raise OSError(f"corrupt raw volume {raw}: {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    return np.ascontiguousarray(data), spacing


def _read_nifti(path):
    import nibabel as nib

    try:
        img = nib.load(str(path))
        data = np.asanyarray(img.dataobj)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise OSError(f"cannot read NIfTI file {path}: {exc}") from exc
    if data.ndim != 3:
        raise VolumeFormatError(f"{path}: expected 3D data, got shape {data.shape}")
    zooms = tuple(float(z) for z in img.header.get_zooms()[:3])
    spacing = zooms if all(z > 0 for z in zooms) else DEFAULT_SPACING
    return np.ascontiguousarray(data), spacing


def _write_nifti(path, array, spacing):
    import nibabel as nib

    img = nib.Nifti1Image(array, np.diag(list(spacing) + [1.0]))
    img.header.set_zooms(tuple(spacing))
    img.header.set_xyzt_units("mm")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    nib.save(img, str(path))


def _read_any(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such volume file: {path}")
    if _is_nifti(path):
        return _read_nifti(path)
    if path.suffix in (".raw", ".hdr"):
        return read_raw(path)
    raise VolumeFormatError(f"{path}: unsupported extension (use .nii, .nii.gz, .raw)")


def load_volume(path) -> Volume:
    data, spacing = _read_any(path)
    if not np.issubdtype(data.dtype, np.floating):
        data = data.astype(np.float32)
    return Volume(data, spacing, Path(path).name.split(".")[0])


def load_mask(path) -> Mask:
    data, spacing = _read_any(path)
    return Mask(data, spacing, Path(path).name.split(".")[0])


def save_volume(path, v: Volume):
    data = np.asarray(v.data, dtype=np.float32)
    if _is_nifti(path):
        _write_nifti(path, data, v.spacing)
    else:
        write_raw(path, data, v.spacing)


def save_mask(path, m: Mask):
    data = np.asarray(m.data, dtype=np.uint8)
    if _is_nifti(path):
        _write_nifti(path, data, m.spacing)
    else:
        write_raw(path, data, m.spacing)


# --------------------------------------------------------------------------
# intensity normalization and augmentation
# --------------------------------------------------------------------------

def normalize(v: Volume) -> Volume:
    """Per-volume z-score; a constant volume maps to zeros."""
    x = v.data.astype(np.float64)
    std = x.std()
    if std == 0 or not np.isfinite(std):
        out = np.zeros_like(x)
    else:
        out = (x - x.mean()) / std
    return Volume(out.astype(np.float32), v.spacing, v.id)


@dataclass(frozen=True)
class AugmentParams:
    flip_w: bool = False
    flip_h: bool = False
    rot_k: int = 0


def sample_augment(seed, flips=True, rotations=(0, 1, 2, 3)) -> AugmentParams:
    rng = np.random.default_rng(seed)
    flip_w, flip_h = rng.random(2) < 0.5
    k = int(rng.choice(np.asarray(rotations)))
    if not flips:
        flip_w = flip_h = False
    return AugmentParams(bool(flip_w), bool(flip_h), k % 4)


def apply_augment(a: np.ndarray, p: AugmentParams) -> np.ndarray:
    if p.flip_w:
        a = a[::-1]
    if p.flip_h:
        a = a[:, ::-1]
    a = np.rot90(a, p.rot_k, axes=(0, 1))
    return np.ascontiguousarray(a)


def invert_augment(a: np.ndarray, p: AugmentParams) -> np.ndarray:
    a = np.rot90(a, -p.rot_k, axes=(0, 1))
    if p.flip_h:
        a = a[:, ::-1]
    if p.flip_w:
        a = a[::-1]
    return np.ascontiguousarray(a)


def _augment_spacing(spacing, p):
    sx, sy, sz = spacing
    return (sy, sx, sz) if p.rot_k % 2 else (sx, sy, sz)


def augment(v: Volume, m: Mask, seed, flips=True, rotations=(0, 1, 2, 3)):
    """Seeded flip along W / H and right-angle rotation about the slice axis.

    The same transform is applied to the volume and its mask.
    """
    check_pair(v, m)
    p = sample_augment(seed, flips, rotations)
    spacing = _augment_spacing(v.spacing, p)
    return (Volume(apply_augment(v.data, p), spacing, v.id),
            Mask(apply_augment(m.data, p), _augment_spacing(m.spacing, p), m.id))


# --------------------------------------------------------------------------
# synthetic phantoms
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    shape: tuple = (64, 64, 32)
    semi_axes_min: tuple = (12.0, 10.0, 6.0)
    semi_axes_max: tuple = (18.0, 16.0, 10.0)
    rotation_deg: float = 30.0       # max |angle| about the slice axis
    tilt_deg: float = 10.0           # max |angle| about W and H
    center_jitter: float = 3.0       # voxels
    fg_level: float = 1.0
    bg_level: float = 0.35
    speckle: float = 0.35            # std of the unit-mean multiplicative noise
    speckle_sigma: float = 0.7       # grain size of the speckle field (voxels)
    shadow_angle: tuple = (20.0, 50.0)  # wedge width range (degrees)
    shadow_strength: float = 0.85
    bias: float = 0.3                # log-amplitude of the smooth bias field

    def validate(self):
        if len(self.shape) != 3 or min(self.shape) < MIN_DIM:
            raise PhantomSpecError(f"phantom shape must be 3D with dims >= {MIN_DIM}: {self.shape}")
        for lo, hi, n in zip(self.semi_axes_min, self.semi_axes_max, self.shape):
            if not 0 < lo <= hi:
                raise PhantomSpecError(f"bad semi-axis range ({lo}, {hi})")
            if hi > n / 2:
                raise PhantomSpecError(
                    f"semi-axis {hi} exceeds half the grid size {n / 2} (shape {self.shape})")
        if self.speckle < 0 or self.bias < 0 or not 0 <= self.shadow_strength <= 1:
            raise PhantomSpecError("speckle and bias must be >= 0, shadow_strength in [0, 1]")


def _rotation(yaw, pitch, roll):
    cz, sz = np.cos(yaw), np.sin(yaw)
    cy, sy = np.cos(pitch), np.sin(pitch)
    cx, sx = np.cos(roll), np.sin(roll)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    return rz @ ry @ rx


def synth_phantom(spec: PhantomSpec):
    """Ellipsoid phantom with bias field, speckle and an acoustic-shadow wedge.

    Returns ``(Volume, Mask)``; identical specs give bit-identical arrays.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shape = tuple(int(n) for n in spec.shape)

    axes = rng.uniform(spec.semi_axes_min, spec.semi_axes_max)
    yaw = np.deg2rad(rng.uniform(-spec.rotation_deg, spec.rotation_deg))
    pitch, roll = np.deg2rad(rng.uniform(-spec.tilt_deg, spec.tilt_deg, size=2))
    center = (np.asarray(shape) - 1) / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter, 3)
    rot = _rotation(yaw, pitch, roll)

    grid = np.indices(shape, dtype=np.float64)
    rel = grid - center[:, None, None, None]
    local = np.einsum("ji,j...->i...", rot, rel)  # rot.T @ rel
    radius = np.sqrt(sum((local[i] / axes[i]) ** 2 for i in range(3)))
    mask = (radius <= 1.0).astype(np.uint8)

    image = spec.bg_level + (spec.fg_level - spec.bg_level) * mask.astype(np.float64)

    # smooth bias field: a few low-frequency cosines, exponentiated
    coef = rng.normal(size=(4, 3))
    phase = rng.uniform(0, 2 * np.pi, size=4)
    field_ = np.zeros(shape)
    for c, ph in zip(coef, phase):
        arg = sum(c[i] * np.pi * grid[i] / shape[i] for i in range(3))
        field_ += np.cos(arg + ph)
    if spec.bias > 0:
        image = image * np.exp(spec.bias * field_ / 2.0)

    if spec.speckle > 0:
        k = 1.0 / spec.speckle ** 2
        gamma = rng.gamma(k, 1.0 / k, size=shape)
        if spec.speckle_sigma > 0:
            gamma = ndimage.gaussian_filter(gamma, spec.speckle_sigma)
            gamma /= gamma.mean()
        image = image * gamma

    theta0 = rng.uniform(-np.pi, np.pi)
    width = np.deg2rad(rng.uniform(*spec.shadow_angle))
    if spec.shadow_strength > 0:
        angle = np.arctan2(rel[1], rel[0])
        inside = np.abs(np.angle(np.exp(1j * (angle - theta0)))) <= width / 2
        # attenuation ramps up from half the object radius to past the boundary
        ramp = np.clip((radius - 0.5) / 0.7, 0.0, 1.0)
        ramp = ramp * ramp * (3 - 2 * ramp)
        image = image * np.where(inside, 1.0 - spec.shadow_strength * ramp, 1.0)

    volume = Volume(image.astype(np.float32), DEFAULT_SPACING, f"phantom{spec.seed}")
    return volume, Mask(mask, DEFAULT_SPACING, volume.id)


# --------------------------------------------------------------------------
# manifests and folds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    case_id: str
    volume_path: str
    mask_path: str


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    folds: dict | None = None

    def __post_init__(self):
        ids = [e.case_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate case ids in manifest: {dup}")
        if self.folds is not None:
            if set(self.folds) != set(ids):
                raise ValueError("fold assignment must cover exactly the manifest's case ids")

    def __len__(self):
        return len(self.entries)

    @property
    def case_ids(self):
        return [e.case_id for e in self.entries]

    def check_files(self):
        for e in self.entries:
            for p in (e.volume_path, e.mask_path):
                if not Path(p).exists():
                    raise FileNotFoundError(f"case {e.case_id}: missing file {p}")

    def subset(self, case_ids):
        keep = set(case_ids)
        entries = [e for e in self.entries if e.case_id in keep]
        folds = None if self.folds is None else {e.case_id: self.folds[e.case_id] for e in entries}
        return DatasetManifest(entries, folds)

    def split(self, fold):
        """Return ``(train, test)`` manifests for held-out ``fold``."""
        if self.folds is None:
            raise ValueError("manifest has no fold assignment")
        test = [c for c in self.case_ids if self.folds[c] == fold]
        train = [c for c in self.case_ids if self.folds[c] != fold]
        return self.subset(train), self.subset(test)


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    base = path.parent
    entries, folds = [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"case_id", "volume_path", "mask_path"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain case_id,volume_path,mask_path[,fold]")
        has_fold = "fold" in reader.fieldnames
        for row in reader:
            vp, mp = Path(row["volume_path"]), Path(row["mask_path"])
            entries.append(ManifestEntry(row["case_id"],
                                         str(vp if vp.is_absolute() else base / vp),
                                         str(mp if mp.is_absolute() else base / mp)))
            if has_fold and row.get("fold", "") != "":
                folds[row["case_id"]] = int(row["fold"])
    return DatasetManifest(entries, folds if folds else None)


def write_manifest(path, manifest: DatasetManifest):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["case_id", "volume_path", "mask_path"]
        if manifest.folds is not None:
            header.append("fold")
        w.writerow(header)
        for e in manifest.entries:
            row = [e.case_id, _relpath(e.volume_path, base), _relpath(e.mask_path, base)]
            if manifest.folds is not None:
                row.append(manifest.folds[e.case_id])
            w.writerow(row)


def _relpath(p, base):
    p = Path(p).resolve()
    try:
        return str(p.relative_to(base))
    except ValueError:
        return os.fspath(p)


def make_folds(manifest: DatasetManifest, k=4, seed=0) -> DatasetManifest:
    """Seeded balanced partition into ``k`` folds (sizes differ by at most one)."""
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    n = len(manifest)
    if n < k:
        raise ValueError(f"cannot split {n} cases into {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    folds = {}
    for pos, idx in enumerate(order):
        folds[manifest.entries[idx].case_id] = pos % k
    return replace(manifest, folds=folds)


def load_case(entry: ManifestEntry):
    v = load_volume(entry.volume_path)
    m = load_mask(entry.mask_path)
    check_pair(v, m)
    v.id = m.id = entry.case_id
    return v, m
