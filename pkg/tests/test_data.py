import numpy as np
import pytest

from esnlrp import data
from esnlrp.errors import ConfigError, DataError
from esnlrp.lrp import RelevanceMap
from esnlrp.readout import ClassLabel


def small_fields(n_months, seed=0, fill_nan_at=None):
    rng = np.random.default_rng(seed)
    fields = rng.normal(size=(n_months, data.GRID_N_LAT, data.GRID_N_LON)).astype(np.float32)
    if fill_nan_at is not None:
        r, c = fill_nan_at
        fields[:, r, c] = np.nan
    return fields.astype(float)


def test_sst_container_round_trip(tmp_path):
    fields = small_fields(5, fill_nan_at=(3, 17))
    path = tmp_path / "x.sstg"
    data.write_sst(path, fields, start_year=1980)
    loaded = data.load_sst(path)
    np.testing.assert_array_equal(loaded.fields, fields)
    assert loaded.start_year == 1980
    assert loaded.n_months == 5
    np.testing.assert_array_equal(loaded.month_ids, 1200 + np.arange(5))
    assert not loaded.grid.valid_mask[3, 17]
    assert loaded.grid.valid_mask[0, 0]
    assert loaded.grid.n_valid == data.GRID_N_LAT * data.GRID_N_LON - 1


def test_write_sst_rejects_wrong_shape(tmp_path):
    with pytest.raises(DataError):
        data.write_sst(tmp_path / "x.sstg", np.zeros((2, 10, 10)), start_year=1980)


def test_load_sst_bad_magic(tmp_path):
    path = tmp_path / "x.sstg"
    path.write_bytes(b"JUNKxxxxxxxxxxxxxxxxxxx")
    with pytest.raises(DataError, match="byte 0"):
        data.load_sst(path)


def test_load_sst_truncated_header(tmp_path):
    path = tmp_path / "x.sstg"
    path.write_bytes(b"SSTG\x01\x02")
    with pytest.raises(DataError, match="truncated header"):
        data.load_sst(path)


def test_load_sst_wrong_grid(tmp_path):
    import struct

    path = tmp_path / "x.sstg"
    path.write_bytes(b"SSTG" + struct.pack("<4I", 10, 10, 1, 1980) + b"\x00" * 400)
    with pytest.raises(DataError, match=r"header bytes 4\.\.11"):
        data.load_sst(path)


def test_load_sst_truncated_payload_reports_offsets(tmp_path):
    fields = small_fields(3)
    path = tmp_path / "x.sstg"
    data.write_sst(path, fields, start_year=1980)
    raw = path.read_bytes()
    grid_bytes = data.GRID_N_LAT * data.GRID_N_LON * 4
    cut = data.HEADER_SIZE + grid_bytes + grid_bytes // 2  # mid-second-grid
    path.write_bytes(raw[:cut])
    with pytest.raises(DataError) as err:
        data.load_sst(path)
    message = str(err.value)
    assert f"file ends at byte {cut} of {data.HEADER_SIZE + 3 * grid_bytes}" in message
    assert f"grid 1 of 3 starting at byte {data.HEADER_SIZE + grid_bytes}" in message


def test_load_sst_trailing_bytes(tmp_path):
    fields = small_fields(2)
    path = tmp_path / "x.sstg"
    data.write_sst(path, fields, start_year=1980)
    path.write_bytes(path.read_bytes() + b"\x00" * 7)
    with pytest.raises(DataError, match="7 trailing bytes"):
        data.load_sst(path)


def test_load_sst_missing_file(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        data.load_sst(tmp_path / "nope.sstg")


def seasonal_dataset(n_years, start_year=1980, signal=None, seed=0):
    """Fields = per-cell seasonal cycle + optional per-month additive signal.

    The seasonal part repeats exactly every 12 months, so anomalies reduce
    to signal minus its per-calendar-month reference mean.
    """
    rng = np.random.default_rng(seed)
    cycle = rng.normal(size=(12, data.GRID_N_LAT, data.GRID_N_LON)).astype(np.float32)
    n_months = 12 * n_years
    fields = cycle[np.arange(n_months) % 12].astype(float)
    if signal is not None:
        fields = fields + np.asarray(signal, dtype=float)[:, None, None]
    return data.SstDataset(
        fields=fields,
        start_year=start_year,
        month_ids=(start_year - data.EPOCH_YEAR) * 12 + np.arange(n_months),
        grid=data.default_grid(np.ones((data.GRID_N_LAT, data.GRID_N_LON), dtype=bool)),
    )


def test_anomalies_of_pure_seasonal_cycle_are_zero():
    dataset = seasonal_dataset(31)
    anomalies = data.compute_anomalies(dataset)
    np.testing.assert_allclose(anomalies.fields, np.zeros_like(dataset.fields), atol=1e-12)


def test_anomaly_of_bump_outside_reference_period():
    signal = np.zeros(31 * 12)
    signal[30 * 12 + 4] = 1.0  # May 2010, outside the 1980..2009 reference
    anomalies = data.compute_anomalies(seasonal_dataset(31, signal=signal))
    np.testing.assert_allclose(anomalies.fields[30 * 12 + 4], np.ones((89, 180)), atol=1e-9)
    np.testing.assert_allclose(anomalies.fields[30 * 12 + 3], np.zeros((89, 180)), atol=1e-9)


def test_anomalies_have_zero_reference_mean_per_cell():
    rng = np.random.default_rng(5)
    signal = rng.normal(size=30 * 12)
    anomalies = data.compute_anomalies(seasonal_dataset(30, signal=signal))
    for month in range(12):
        per_cell = anomalies.fields[month::12].mean(axis=0)
        np.testing.assert_allclose(per_cell, np.zeros((89, 180)), atol=1e-9)


def test_anomalies_preserve_invalid_cells():
    dataset = seasonal_dataset(30)
    fields = dataset.fields.copy()
    fields[:, 7, 9] = np.nan
    dataset = data.SstDataset(
        fields=fields, start_year=dataset.start_year,
        month_ids=dataset.month_ids, grid=dataset.grid,
    )
    anomalies = data.compute_anomalies(dataset)
    assert np.all(np.isnan(anomalies.fields[:, 7, 9]))
    assert np.all(np.isfinite(anomalies.fields[:, 0, :]))


def test_reference_period_outside_span_is_an_error():
    dataset = seasonal_dataset(10, start_year=1990)
    with pytest.raises(DataError, match="reference period"):
        data.compute_anomalies(dataset, period=(1980, 2009))


def test_nino34_region_bounds():
    grid = data.default_grid(np.ones((89, 180), dtype=bool))
    rows, cols = data.nino34_region(grid)
    np.testing.assert_array_equal(grid.lat_centers[rows], [-4, -2, 0, 2, 4])
    assert grid.lon_centers[cols][0] == 190.0
    assert grid.lon_centers[cols][-1] == 240.0
    assert len(cols) == 26


def test_nino34_index_unit_reference_std_and_scale_invariance():
    rng = np.random.default_rng(11)
    signal = rng.normal(size=32 * 12)
    anomalies = data.compute_anomalies(seasonal_dataset(32, signal=signal))
    index = data.nino34_index(anomalies)
    ref = slice(0, 30 * 12)
    assert abs(float(index[ref].std()) - 1.0) <= 1e-9
    tripled = data.SstDataset(
        fields=anomalies.fields * 3.0, start_year=anomalies.start_year,
        month_ids=anomalies.month_ids, grid=anomalies.grid,
    )
    np.testing.assert_allclose(data.nino34_index(tripled), index, rtol=1e-9)


def test_nino34_index_degenerate_reference():
    flat = data.SstDataset(
        fields=np.zeros((30 * 12, data.GRID_N_LAT, data.GRID_N_LON)),
        start_year=1980,
        month_ids=1200 + np.arange(30 * 12),
        grid=data.default_grid(np.ones((data.GRID_N_LAT, data.GRID_N_LON), dtype=bool)),
    )
    with pytest.raises(DataError, match="degenerate"):
        data.nino34_index(data.compute_anomalies(flat))


def test_nino34_index_empty_box_month():
    dataset = seasonal_dataset(31, signal=np.arange(31 * 12, dtype=float))
    fields = dataset.fields.copy()
    rows, cols = data.nino34_region(dataset.grid)
    fields[np.ix_([5], rows, cols)] = np.nan
    broken = data.SstDataset(
        fields=fields, start_year=dataset.start_year,
        month_ids=dataset.month_ids, grid=dataset.grid,
    )
    with pytest.raises(DataError, match="no valid cells"):
        data.nino34_index(data.compute_anomalies(broken))


def test_label_thresholds():
    assert data.label_for_index(0.5) is ClassLabel.EL_NINO
    assert data.label_for_index(-0.5) is ClassLabel.LA_NINA
    assert data.label_for_index(0.49) is ClassLabel.NEUTRAL
    assert data.label_for_index(-0.49) is ClassLabel.NEUTRAL
    assert data.label_for_index(2.3) is ClassLabel.EL_NINO
    with pytest.raises(DataError):
        data.label_for_index(float("inf"))


def test_build_sample_set_drops_neutral_and_splits_in_order():
    rng = np.random.default_rng(3)
    signal = rng.normal(size=31 * 12)
    anomalies = data.compute_anomalies(seasonal_dataset(31, signal=signal))
    index = np.zeros(31 * 12)
    index[:10] = [1.0, -1.0, 0.0, 0.6, -0.7, 0.2, 0.5, -0.5, 0.49, 3.0]
    sample_set = data.build_sample_set(anomalies, index)
    labels = [s.label for s in sample_set.samples]
    assert labels[:7] == [
        ClassLabel.EL_NINO, ClassLabel.LA_NINA, ClassLabel.EL_NINO, ClassLabel.LA_NINA,
        ClassLabel.EL_NINO, ClassLabel.LA_NINA, ClassLabel.EL_NINO,
    ]
    assert len(sample_set.samples) == 7
    assert sample_set.split == ("train",) * 5 + ("val",) * 2
    assert [s.month_id for s in sample_set.samples] == [1200, 1201, 1203, 1204, 1206, 1207, 1209]
    month_index = {mid: i for i, mid in enumerate(anomalies.month_ids)}
    for sample in sample_set.samples:
        np.testing.assert_array_equal(
            sample.field, np.clip(anomalies.fields[month_index[sample.month_id]], -5, 5)
        )


def test_build_sample_set_rejects_bad_index_length():
    anomalies = data.compute_anomalies(seasonal_dataset(31))
    with pytest.raises(DataError):
        data.build_sample_set(anomalies, np.ones(7))


def test_preprocess_field_clips_scales_and_prepends_ones():
    field = np.array([[5.0, -7.0, np.nan, 2.5]])
    out = data.preprocess_field(field)
    np.testing.assert_array_equal(out, [[1.0, 1.0, -1.0, 0.0, 0.5]])
    assert out.shape == (1, 5)


def test_preprocess_for_esn_width():
    sample = data.LabeledSample(
        field=np.zeros((89, 180)), index=1.0, label=ClassLabel.EL_NINO, month_id=0
    )
    assert data.preprocess_for_esn(sample).shape == (89, 181)


def test_preprocess_for_baseline_ignores_invalid_cells():
    mask = np.ones((4, 5), dtype=bool)
    mask[1, 2] = False
    field = np.arange(20, dtype=float).reshape(4, 5) / 10.0
    sample = data.LabeledSample(field=field, index=1.0, label=ClassLabel.EL_NINO, month_id=0)
    vector = data.preprocess_for_baseline(sample, mask)
    assert vector.shape == (19,)
    poisoned = field.copy()
    poisoned[1, 2] = 4.9  # valid magnitude, still masked out
    sample2 = data.LabeledSample(field=poisoned, index=1.0, label=ClassLabel.EL_NINO, month_id=0)
    np.testing.assert_array_equal(data.preprocess_for_baseline(sample2, mask), vector)
    with pytest.raises(DataError):
        data.preprocess_for_baseline(sample, np.ones((3, 3), dtype=bool))


def test_insert_masked_round_trip():
    mask = np.zeros((3, 4), dtype=bool)
    mask[0, 1] = mask[2, 3] = mask[1, 0] = True
    vector = np.array([9.0, 8.0, 7.0])
    field = data.insert_masked(vector, mask, fill=-1.0)
    np.testing.assert_array_equal(field[mask], vector)
    assert field[0, 0] == -1.0
    with pytest.raises(DataError):
        data.insert_masked(np.ones(2), mask)


def test_permute_columns_round_trip_and_errors():
    sample_set = data.synthesize_task(6, 8, 10, seed=0)
    permuted = data.permute_columns(sample_set, seed=42)
    again = data.permute_columns(sample_set, seed=42)
    np.testing.assert_array_equal(permuted.permutation, again.permutation)
    np.testing.assert_array_equal(np.sort(permuted.permutation), np.arange(10))

    for original, shuffled in zip(sample_set.samples, permuted.samples):
        restored = data.inverse_permute(shuffled.field, permuted)
        np.testing.assert_array_equal(restored, original.field)

    with pytest.raises(DataError, match="already permuted"):
        data.permute_columns(permuted, seed=1)
    with pytest.raises(DataError, match="no permutation"):
        data.inverse_permute(sample_set.samples[0].field, sample_set)


def test_inverse_permute_handles_maps_vectors_and_bad_shapes():
    sample_set = data.synthesize_task(4, 8, 9, seed=1)
    permuted = data.permute_columns(sample_set, seed=5)
    scores = np.arange(2 * 9, dtype=float).reshape(2, 9)
    rmap = RelevanceMap(
        scores=scores[:, permuted.permutation], dummy_scores=np.zeros(2), absorbed=0.0, total=1.0
    )
    restored = data.inverse_permute(rmap, permuted)
    np.testing.assert_array_equal(restored.scores, scores)

    vector = np.arange(9.0)
    np.testing.assert_array_equal(
        data.inverse_permute(vector[permuted.permutation], permuted), vector
    )
    with pytest.raises(DataError):
        data.inverse_permute(np.zeros((2, 4)), permuted)


def test_synthesize_task_validation():
    with pytest.raises(ConfigError):
        data.synthesize_task(10, 7, 20, seed=0)
    with pytest.raises(ConfigError):
        data.synthesize_task(10, 20, 7, seed=0)
    with pytest.raises(ConfigError):
        data.synthesize_task(1, 8, 8, seed=0)
    with pytest.raises(ConfigError):
        data.synthesize_task(10, 8, 8, seed=0, noise_scale=-0.1)


def test_synthesize_task_determinism_and_labels():
    a = data.synthesize_task(12, 10, 16, seed=7)
    b = data.synthesize_task(12, 10, 16, seed=7)
    for s, t in zip(a.samples, b.samples):
        np.testing.assert_array_equal(s.field, t.field)
        assert s.index == t.index
    c = data.synthesize_task(12, 10, 16, seed=8)
    assert not np.array_equal(a.samples[0].field, c.samples[0].field)

    lo, hi = data.BLOB_AMPLITUDE_RANGE
    for i, sample in enumerate(a.samples):
        assert lo <= abs(sample.index) <= hi
        expected_sign = 1.0 if i % 2 == 0 else -1.0
        assert np.sign(sample.index) == expected_sign
        assert sample.label is (ClassLabel.EL_NINO if i % 2 == 0 else ClassLabel.LA_NINA)
        assert sample.month_id == i
    assert a.split == ("train",) * 9 + ("val",) * 3


def test_synthesize_task_zero_noise_is_pure_blob():
    task = data.synthesize_task(4, 12, 20, seed=3, noise_scale=0.0)
    fields = [s.field / s.index for s in task.samples]
    for field in fields[1:]:
        np.testing.assert_allclose(field, fields[0], rtol=1e-12)
    r0, r1, c0, c1 = data.synthetic_blob_box(12, 20)
    peak = np.unravel_index(np.argmax(fields[0]), fields[0].shape)
    assert r0 <= peak[0] <= r1 and c0 <= peak[1] <= c1


def test_synthetic_blob_box_known_geometry():
    r0, r1, c0, c1 = data.synthetic_blob_box(16, 96)
    assert (r0, r1, c0, c1) == (6, 9, 5, 33)
    d, t = 8, 8
    r0, r1, c0, c1 = data.synthetic_blob_box(d, t)
    assert 0 <= r0 <= r1 < d and 0 <= c0 <= c1 < t


def test_box_mass_ratio():
    scores = np.zeros((10, 10))
    scores[2:4, 2:4] = 1.0
    ratio = data.box_mass_ratio(scores, (2, 3, 2, 3))
    assert ratio == pytest.approx(100 / 4)
    assert data.box_mass_ratio(np.ones((10, 10)), (0, 4, 0, 4)) == pytest.approx(1.0)
    assert data.box_mass_ratio(np.zeros((4, 4)), (0, 1, 0, 1)) == 0.0


def test_write_sample_index_csv(tmp_path):
    task = data.synthesize_task(4, 8, 8, seed=2)
    path = tmp_path / "samples.csv"
    data.write_sample_index_csv(path, task)
    lines = path.read_text(encoding="ascii").strip().splitlines()
    assert lines[0] == "month_id,index,label,split"
    assert len(lines) == 5
    first = lines[1].split(",")
    assert first[0] == "0"
    assert first[2] == "elnino"
    assert first[3] == "train"


def test_locate_dataset(tmp_path, monkeypatch):
    monkeypatch.delenv(data.ENV_DATASET, raising=False)
    monkeypatch.chdir(tmp_path)
    assert data.locate_dataset() is None

    with pytest.raises(DataError):
        data.locate_dataset(tmp_path / "missing.sstg")

    real = tmp_path / "present.sstg"
    real.write_bytes(b"SSTG")
    assert data.locate_dataset(real) == real

    monkeypatch.setenv(data.ENV_DATASET, str(tmp_path / "gone.sstg"))
    with pytest.raises(DataError, match=data.ENV_DATASET):
        data.locate_dataset()
    monkeypatch.setenv(data.ENV_DATASET, str(real))
    assert data.locate_dataset() == real

    monkeypatch.delenv(data.ENV_DATASET)
    default = tmp_path / data.DEFAULT_DATASET_PATH
    default.parent.mkdir()
    default.write_bytes(b"SSTG")
    assert data.locate_dataset() == data.DEFAULT_DATASET_PATH


def enso_like_fields(n_years=32, start_year=1980):
    """A full-size container whose Nino-3.4 story is known in advance.

    Reference years alternate +a / -a inside the box (zero monthly means,
    reference std exactly a), the two post-reference years are one neutral
    and one warm year.
    """
    n_months = 12 * n_years
    rng = np.random.default_rng(99)
    cycle = rng.normal(size=(12, data.GRID_N_LAT, data.GRID_N_LON)).astype(np.float32)
    fields = cycle[np.arange(n_months) % 12].astype(float)

    amplitude = 2.0
    box_signal = np.zeros(n_months)
    for year in range(30):
        box_signal[year * 12 : (year + 1) * 12] = amplitude if year % 2 == 0 else -amplitude
    box_signal[30 * 12 : 31 * 12] = 0.1 * amplitude  # neutral year
    box_signal[31 * 12 :] = 2.0 * amplitude  # strongly warm year

    grid = data.default_grid(np.ones((data.GRID_N_LAT, data.GRID_N_LON), dtype=bool))
    rows, cols = data.nino34_region(grid)
    fields[np.ix_(np.arange(n_months), rows, cols)] += box_signal[:, None, None]
    return fields, box_signal / amplitude


def test_full_pipeline_on_constructed_container(tmp_path):
    fields, expected_index = enso_like_fields()
    path = tmp_path / "mini.sstg"
    data.write_sst(path, fields, start_year=1980)
    sample_set, anomalies = data.load_enso_samples(path)

    index = data.nino34_index(anomalies)
    np.testing.assert_allclose(index, expected_index, atol=1e-5)

    # 30 labeled reference years plus the final warm year; the neutral year drops out
    assert len(sample_set.samples) == 31 * 12
    warm = [s for s in sample_set.samples if s.label is ClassLabel.EL_NINO]
    cold = [s for s in sample_set.samples if s.label is ClassLabel.LA_NINA]
    assert len(warm) == 16 * 12
    assert len(cold) == 15 * 12
    n_train = int(data.TRAIN_FRACTION * len(sample_set.samples))
    assert len(sample_set.train_samples) == n_train
    assert len(sample_set.val_samples) == len(sample_set.samples) - n_train
    assert anomalies.grid.n_valid == data.GRID_N_LAT * data.GRID_N_LON
