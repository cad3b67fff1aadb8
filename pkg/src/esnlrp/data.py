"""Sea-surface-temperature ingestion, ENSO labeling, and sample preparation.

The on-disk container is a flat binary file: magic bytes ``SSTG``, a 16-byte
header of four little-endian u32 values (n_lat, n_lon, n_months, start_year),
then n_months row-major little-endian float32 grids of shape n_lat x n_lon.
Missing values are NaN. The first grid is January of start_year and months
run consecutively. Grids are 89 x 180: cell centers at latitudes -88..88 and
longitudes 0..358, both on a 2-degree step.

From the raw fields this module derives per-cell monthly anomalies against a
1980-2009 seasonal climatology, the normalized Nino-3.4 index (unweighted
mean over the box lat in [-5, 5], lon in [190, 240], divided by the index's
own standard deviation over the reference period), class labels at the +-0.5
thresholds, and a time-ordered 80/20 train/validation split over the
non-neutral months. It also provides the per-model preprocessing, reversible
column permutation, and a synthetic stand-in task with a known ground-truth
signal box.
"""

from __future__ import annotations

import dataclasses
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, DataError
from .lrp import RelevanceMap, inverse_permuted
from .readout import ClassLabel

MAGIC = b"SSTG"
HEADER_SIZE = 20
GRID_N_LAT = 89
GRID_N_LON = 180
EPOCH_YEAR = 1880

CLIP_LIMIT = 5.0
LABEL_THRESHOLD = 0.5
TRAIN_FRACTION = 0.8
REFERENCE_PERIOD = (1980, 2009)
NINO34_LAT = (-5.0, 5.0)
NINO34_LON = (190.0, 240.0)

ENV_DATASET = "ESNLRP_SST"
DEFAULT_DATASET_PATH = Path("data") / "sst.sstg"

# Synthetic-task geometry: the class signal is a Gaussian blob centered at
# 20% of the width (rows centered), sigma d/12 by t/10, zonally stretched.
# The ground-truth box spans 1.5 sigma around the center on both axes.
# Placing the blob early keeps it far from the readout, which is what makes
# forgetting visible when the leak rate grows.
BLOB_ROW_SIGMA_FRACTION = 1.0 / 12.0
BLOB_COL_SIGMA_FRACTION = 1.0 / 10.0
BLOB_COL_CENTER_FRACTION = 0.2
BLOB_BOX_HALF_WIDTH_SIGMAS = 1.5
BLOB_AMPLITUDE_RANGE = (0.75, 2.5)
NOISE_SMOOTHING_SIGMA = 1.5
DEFAULT_NOISE_SCALE = 0.10


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the 2-degree grid plus the static validity mask.

    For the production dataset the mask counts 10,988 valid (ocean) cells;
    the count is data-dependent and checked downstream, not here.
    """

    n_lat: int
    n_lon: int
    lat_centers: np.ndarray
    lon_centers: np.ndarray
    valid_mask: np.ndarray

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())


@dataclass(frozen=True)
class SstDataset:
    """Monthly fields (raw or anomaly), NaN where invalid."""

    fields: np.ndarray
    start_year: int
    month_ids: np.ndarray
    grid: GridSpec

    @property
    def n_months(self) -> int:
        return self.fields.shape[0]


@dataclass(frozen=True)
class LabeledSample:
    """One month's anomaly field with its normalized index and class."""

    field: np.ndarray
    index: float
    label: ClassLabel
    month_id: int

    def __post_init__(self) -> None:
        if self.field.ndim != 2:
            raise DataError(f"sample field must be 2-D, got shape {self.field.shape}")
        finite = self.field[np.isfinite(self.field)]
        if finite.size and np.abs(finite).max() > CLIP_LIMIT:
            raise DataError(f"sample field exceeds the +-{CLIP_LIMIT} clip range")
        if self.label is not label_for_index(self.index):
            raise DataError(f"label {self.label} inconsistent with index {self.index}")


@dataclass(frozen=True)
class SampleSet:
    """Non-neutral samples in time order with their split tags.

    When the set has been column-permuted, `permutation` and `inverse`
    record the bijection so maps and fields can be restored.
    """

    samples: Tuple[LabeledSample, ...]
    split: Tuple[str, ...]
    permutation: Optional[np.ndarray] = None
    inverse: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if len(self.samples) != len(self.split):
            raise DataError(f"{len(self.samples)} samples but {len(self.split)} split tags")
        if any(tag not in ("train", "val") for tag in self.split):
            raise DataError("split tags must be 'train' or 'val'")
        if any(s.label is ClassLabel.NEUTRAL for s in self.samples):
            raise DataError("sample sets must not contain neutral samples")
        if (self.permutation is None) != (self.inverse is None):
            raise DataError("permutation and inverse must be stored together")

    @property
    def train_samples(self) -> List[LabeledSample]:
        return [s for s, tag in zip(self.samples, self.split) if tag == "train"]

    @property
    def val_samples(self) -> List[LabeledSample]:
        return [s for s, tag in zip(self.samples, self.split) if tag == "val"]

    @property
    def n_columns(self) -> int:
        if not self.samples:
            raise DataError("empty sample set has no column count")
        return self.samples[0].field.shape[1]


def _locked(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


def default_grid(valid_mask: np.ndarray) -> GridSpec:
    return GridSpec(
        n_lat=GRID_N_LAT,
        n_lon=GRID_N_LON,
        lat_centers=_locked(-88.0 + 2.0 * np.arange(GRID_N_LAT)),
        lon_centers=_locked(2.0 * np.arange(GRID_N_LON)),
        valid_mask=_locked(np.asarray(valid_mask, dtype=bool)),
    )


def write_sst(path: Union[str, Path], fields: np.ndarray, start_year: int) -> None:
    """Write monthly grids to the binary container described above."""
    fields = np.asarray(fields, dtype=float)
    if fields.ndim != 3 or fields.shape[1:] != (GRID_N_LAT, GRID_N_LON):
        raise DataError(
            f"fields must have shape (n_months, {GRID_N_LAT}, {GRID_N_LON}), got {fields.shape}"
        )
    header = MAGIC + struct.pack("<4I", GRID_N_LAT, GRID_N_LON, fields.shape[0], start_year)
    Path(path).write_bytes(header + np.ascontiguousarray(fields, dtype="<f4").tobytes())


def load_sst(path: Union[str, Path]) -> SstDataset:
    """Load a container file; malformed input errors cite exact byte offsets."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise DataError(
            f"{path}: bad magic at byte 0: found {raw[:len(MAGIC)]!r}, expected {MAGIC!r}"
        )
    if len(raw) < HEADER_SIZE:
        raise DataError(
            f"{path}: truncated header, file ends at byte {len(raw)} but the header "
            f"spans bytes 0..{HEADER_SIZE - 1}"
        )
    n_lat, n_lon, n_months, start_year = struct.unpack_from("<4I", raw, len(MAGIC))
    if (n_lat, n_lon) != (GRID_N_LAT, GRID_N_LON):
        raise DataError(
            f"{path}: grid is {n_lat}x{n_lon} (header bytes 4..11), "
            f"expected {GRID_N_LAT}x{GRID_N_LON}"
        )
    grid_bytes = n_lat * n_lon * 4
    expected = HEADER_SIZE + n_months * grid_bytes
    if len(raw) < expected:
        complete = (len(raw) - HEADER_SIZE) // grid_bytes
        raise DataError(
            f"{path}: truncated payload, file ends at byte {len(raw)} of {expected}; "
            f"grid {complete} of {n_months} starting at byte {HEADER_SIZE + complete * grid_bytes} "
            "is incomplete"
        )
    if len(raw) > expected:
        raise DataError(
            f"{path}: {len(raw) - expected} trailing bytes after the declared payload, "
            f"which ends at byte {expected}"
        )
    fields = (
        np.frombuffer(raw, dtype="<f4", count=n_months * n_lat * n_lon, offset=HEADER_SIZE)
        .reshape(n_months, n_lat, n_lon)
        .astype(float)
    )
    fields.setflags(write=False)
    month_ids = _locked((start_year - EPOCH_YEAR) * 12 + np.arange(n_months))
    valid_mask = np.isfinite(fields).all(axis=0) if n_months else np.zeros((n_lat, n_lon), bool)
    return SstDataset(
        fields=fields,
        start_year=start_year,
        month_ids=month_ids,
        grid=default_grid(valid_mask),
    )


def _reference_slice(dataset: SstDataset, period: Tuple[int, int]) -> slice:
    first, last = period
    lo = (first - dataset.start_year) * 12
    hi = (last - dataset.start_year) * 12 + 12
    if lo < 0 or hi > dataset.n_months:
        raise DataError(
            f"reference period {first}..{last} falls outside the data span "
            f"{dataset.start_year}..{dataset.start_year + dataset.n_months // 12 - 1}"
        )
    return slice(lo, hi)


def compute_anomalies(dataset: SstDataset, period: Tuple[int, int] = REFERENCE_PERIOD) -> SstDataset:
    """Subtract the per-cell, per-calendar-month mean over the reference years.

    Cells with no finite reference values keep NaN everywhere; invalid
    entries stay invalid.
    """
    ref = _reference_slice(dataset, period)
    climatology = np.empty((12,) + dataset.fields.shape[1:])
    for month in range(12):
        vals = dataset.fields[ref][month::12]
        finite = np.isfinite(vals)
        counts = finite.sum(axis=0)
        sums = np.where(finite, vals, 0.0).sum(axis=0)
        climatology[month] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    anomalies = dataset.fields - climatology[np.arange(dataset.n_months) % 12]
    anomalies.setflags(write=False)
    return dataclasses.replace(dataset, fields=anomalies)


def nino34_region(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column indices of cells whose centers fall in the Nino-3.4 box."""
    rows = np.where((grid.lat_centers >= NINO34_LAT[0]) & (grid.lat_centers <= NINO34_LAT[1]))[0]
    cols = np.where((grid.lon_centers >= NINO34_LON[0]) & (grid.lon_centers <= NINO34_LON[1]))[0]
    return rows, cols


def nino34_index(anomalies: SstDataset, period: Tuple[int, int] = REFERENCE_PERIOD) -> np.ndarray:
    """Normalized Nino-3.4 series: box mean over valid cells, unit reference std."""
    rows, cols = nino34_region(anomalies.grid)
    box = anomalies.fields[:, rows][:, :, cols].reshape(anomalies.n_months, -1)
    finite = np.isfinite(box)
    counts = finite.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.argmin(counts))
        raise DataError(f"Nino-3.4 box has no valid cells in month index {bad}")
    regional = np.where(finite, box, 0.0).sum(axis=1) / counts
    ref = _reference_slice(anomalies, period)
    scale = float(regional[ref].std())
    if not scale > 0.0:
        raise DataError(f"Nino-3.4 reference standard deviation is degenerate ({scale})")
    return regional / scale


def label_for_index(index: float) -> ClassLabel:
    if not np.isfinite(index):
        raise DataError(f"index must be finite, got {index}")
    if index >= LABEL_THRESHOLD:
        return ClassLabel.EL_NINO
    if index <= -LABEL_THRESHOLD:
        return ClassLabel.LA_NINA
    return ClassLabel.NEUTRAL


def build_sample_set(anomalies: SstDataset, index: np.ndarray) -> SampleSet:
    """Keep the non-neutral months in time order; first 80% become train."""
    index = np.asarray(index, dtype=float)
    if index.shape != (anomalies.n_months,):
        raise DataError(f"index length {index.shape} does not match {anomalies.n_months} months")
    samples = []
    for i in range(anomalies.n_months):
        label = label_for_index(index[i])
        if label is ClassLabel.NEUTRAL:
            continue
        field = _locked(np.clip(anomalies.fields[i], -CLIP_LIMIT, CLIP_LIMIT))
        samples.append(
            LabeledSample(
                field=field,
                index=float(index[i]),
                label=label,
                month_id=int(anomalies.month_ids[i]),
            )
        )
    if len(samples) < 2:
        raise DataError(f"only {len(samples)} labeled samples; cannot split")
    n_train = int(TRAIN_FRACTION * len(samples))
    split = ("train",) * n_train + ("val",) * (len(samples) - n_train)
    return SampleSet(samples=tuple(samples), split=split)


def preprocess_field(field: np.ndarray) -> np.ndarray:
    """Clip to +-5, scale to [-1, 1], zero invalid cells, prepend a ones column."""
    field = np.asarray(field, dtype=float)
    scaled = np.clip(field, -CLIP_LIMIT, CLIP_LIMIT) / CLIP_LIMIT
    scaled = np.where(np.isfinite(scaled), scaled, 0.0)
    return np.hstack([np.ones((field.shape[0], 1)), scaled])


def preprocess_for_esn(sample: LabeledSample) -> np.ndarray:
    return preprocess_field(sample.field)


def preprocess_for_baseline(sample: LabeledSample, valid_mask: np.ndarray) -> np.ndarray:
    """Clip, scale, and emit the valid cells as one row-major vector."""
    valid_mask = np.asarray(valid_mask, dtype=bool)
    if valid_mask.shape != sample.field.shape:
        raise DataError(f"mask shape {valid_mask.shape} does not match field {sample.field.shape}")
    scaled = np.clip(sample.field, -CLIP_LIMIT, CLIP_LIMIT) / CLIP_LIMIT
    scaled = np.where(np.isfinite(scaled), scaled, 0.0)
    return scaled[valid_mask]


def insert_masked(vector: np.ndarray, valid_mask: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Scatter a baseline vector back onto the grid; invalid cells get `fill`."""
    valid_mask = np.asarray(valid_mask, dtype=bool)
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (int(valid_mask.sum()),):
        raise DataError(f"vector length {vector.shape} does not match {int(valid_mask.sum())} valid cells")
    field = np.full(valid_mask.shape, fill, dtype=float)
    field[valid_mask] = vector
    return field


def permute_columns(sample_set: SampleSet, seed: int) -> SampleSet:
    """Apply one seeded column permutation to every sample's field.

    The dummy ones column is prepended only during preprocessing, so it is
    never part of the permutation. The bijection and its inverse are stored
    on the returned set.
    """
    if sample_set.permutation is not None:
        raise DataError("sample set is already permuted; restore it before permuting again")
    n_cols = sample_set.n_columns
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(n_cols)
    inverse = np.argsort(perm)
    permuted = tuple(
        dataclasses.replace(s, field=_locked(s.field[:, perm])) for s in sample_set.samples
    )
    return SampleSet(
        samples=permuted,
        split=sample_set.split,
        permutation=_locked(perm),
        inverse=_locked(inverse),
    )


def inverse_permute(
    obj: Union[RelevanceMap, np.ndarray], sample_set: SampleSet
) -> Union[RelevanceMap, np.ndarray]:
    """Restore original column order of a field or relevance map."""
    if sample_set.permutation is None:
        raise DataError("sample set carries no permutation to invert")
    inverse = sample_set.inverse
    if isinstance(obj, RelevanceMap):
        if obj.scores.shape[1] != inverse.size:
            raise DataError(
                f"map has {obj.scores.shape[1]} columns but the permutation covers {inverse.size}"
            )
        return inverse_permuted(obj, inverse)
    arr = np.asarray(obj)
    if arr.ndim == 2 and arr.shape[1] == inverse.size:
        return arr[:, inverse]
    if arr.ndim == 1 and arr.shape[0] == inverse.size:
        return arr[inverse]
    raise DataError(f"cannot invert object of shape {arr.shape} with {inverse.size} columns")


def synthetic_blob_box(d: int, t: int) -> Tuple[int, int, int, int]:
    """Inclusive (row_lo, row_hi, col_lo, col_hi) bounds of the signal box."""
    r0 = (d - 1) / 2.0
    c0 = BLOB_COL_CENTER_FRACTION * (t - 1)
    half_r = BLOB_BOX_HALF_WIDTH_SIGMAS * BLOB_ROW_SIGMA_FRACTION * d
    half_c = BLOB_BOX_HALF_WIDTH_SIGMAS * BLOB_COL_SIGMA_FRACTION * t
    return (
        max(0, int(np.ceil(r0 - half_r))),
        min(d - 1, int(np.floor(r0 + half_r))),
        max(0, int(np.ceil(c0 - half_c))),
        min(t - 1, int(np.floor(c0 + half_c))),
    )


def synthesize_task(
    n_samples: int, d: int, t: int, seed: int, noise_scale: float = DEFAULT_NOISE_SCALE
) -> SampleSet:
    """Generate a two-class task with a known localized signal.

    Each sample is amplitude * blob + smoothed noise: the blob is a fixed
    Gaussian bump (see the module constants for its geometry), amplitudes
    have magnitude uniform in [0.75, 2.5] with alternating sign, and the
    noise is white Gaussian smoothed with a sigma-1.5 filter then rescaled
    to the requested standard deviation. The continuous target equals the
    amplitude, so labels follow the +-0.5 index rule exactly and both
    classes appear in any contiguous split. With everything seeded the
    generated set is reproducible bit for bit.
    """
    if d < 8 or t < 8:
        raise ConfigError(f"synthetic grids need d, t >= 8, got {d}, {t}")
    if n_samples < 2:
        raise ConfigError(f"need at least 2 samples, got {n_samples}")
    if noise_scale < 0:
        raise ConfigError(f"noise_scale must be non-negative, got {noise_scale}")
    # The spawn_key puts data generation in its own stream domain, so reusing
    # one seed for both the task and a model never aliases their draws.
    amp_rng, noise_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed, spawn_key=(101,)).spawn(2)
    )
    rr, cc = np.meshgrid(np.arange(d), np.arange(t), indexing="ij")
    r0 = (d - 1) / 2.0
    c0 = BLOB_COL_CENTER_FRACTION * (t - 1)
    sigma_r = BLOB_ROW_SIGMA_FRACTION * d
    sigma_c = BLOB_COL_SIGMA_FRACTION * t
    blob = np.exp(-((rr - r0) ** 2 / (2 * sigma_r**2) + (cc - c0) ** 2 / (2 * sigma_c**2)))

    samples = []
    lo, hi = BLOB_AMPLITUDE_RANGE
    for i in range(n_samples):
        amplitude = float(amp_rng.uniform(lo, hi)) * (1.0 if i % 2 == 0 else -1.0)
        field = amplitude * blob
        if noise_scale > 0:
            noise = gaussian_filter(noise_rng.normal(size=(d, t)), sigma=NOISE_SMOOTHING_SIGMA)
            spread = float(noise.std())
            if spread > 0:
                field = field + noise * (noise_scale / spread)
        samples.append(
            LabeledSample(
                field=_locked(np.clip(field, -CLIP_LIMIT, CLIP_LIMIT)),
                index=amplitude,
                label=label_for_index(amplitude),
                month_id=i,
            )
        )
    n_train = int(TRAIN_FRACTION * n_samples)
    split = ("train",) * n_train + ("val",) * (n_samples - n_train)
    return SampleSet(samples=tuple(samples), split=split)


def box_mass_ratio(scores: np.ndarray, box: Tuple[int, int, int, int]) -> float:
    """How much denser absolute relevance is inside a box than area predicts.

    Returns (mass fraction inside the box) / (areal fraction of the box);
    1.0 means no localization at all.
    """
    mass = np.abs(np.asarray(scores, dtype=float))
    total = float(mass.sum())
    if total <= 0.0:
        return 0.0
    r0, r1, c0, c1 = box
    inside = float(mass[r0 : r1 + 1, c0 : c1 + 1].sum())
    areal = ((r1 - r0 + 1) * (c1 - c0 + 1)) / mass.size
    return (inside / total) / areal


def write_sample_index_csv(path: Union[str, Path], sample_set: SampleSet) -> None:
    """Export month ids, indices, labels, and split tags as CSV."""
    lines = ["month_id,index,label,split"]
    for sample, tag in zip(sample_set.samples, sample_set.split):
        lines.append(f"{sample.month_id},{sample.index:.9g},{sample.label.value},{tag}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def locate_dataset(explicit: Optional[Union[str, Path]] = None) -> Optional[Path]:
    """Resolve the dataset path: explicit flag, ESNLRP_SST, then data/sst.sstg.

    An explicitly named path (flag or environment) that does not exist is an
    error; the conventional default location simply yields None when absent.
    """
    if explicit is not None:
        path = Path(explicit)
        if not path.exists():
            raise DataError(f"dataset file {path} does not exist")
        return path
    env = os.environ.get(ENV_DATASET)
    if env:
        path = Path(env)
        if not path.exists():
            raise DataError(f"{ENV_DATASET} points at {path}, which does not exist")
        return path
    return DEFAULT_DATASET_PATH if DEFAULT_DATASET_PATH.exists() else None


def load_enso_samples(path: Union[str, Path]) -> Tuple[SampleSet, SstDataset]:
    """Full pipeline: load, anomalies, index, labels, split.

    Returns the sample set together with the anomaly dataset (whose grid
    carries the validity mask the baselines need).
    """
    anomalies = compute_anomalies(load_sst(path))
    index = nino34_index(anomalies)
    return build_sample_set(anomalies, index), anomalies
