"""Dataset generation, on-disk format, and split determinism."""

import json

import numpy as np
import pytest

from elastisr import (
    DatasetError,
    DomainSpec,
    LoadCase,
    MaterialParams,
    generate_dataset,
    load_dataset,
    manifest_hash,
    oracle_grid,
    save_dataset,
    split_indices,
)
from elastisr.data import grid_from_bytes, grid_to_bytes, q_schedule
from elastisr.fem import CHANNELS, FieldGrid


def test_q_schedule():
    qs = q_schedule(0.0, 4.0, 0.04)
    assert len(qs) == 101
    np.testing.assert_allclose(qs, np.arange(101) * 0.04, atol=1e-12)
    assert q_schedule(0.0, 4.0, 4.0) == [0.0, 4.0]
    assert q_schedule(1.0, 1.0, 0.5) == [1.0]
    with pytest.raises(ValueError):
        q_schedule(0.0, 4.0, 0.0)
    with pytest.raises(ValueError):
        q_schedule(2.0, 1.0, 0.5)


def test_split_indices_contract():
    train, test = split_indices(101, 0.8, seed=0)
    assert len(train) == 81 and len(test) == 20
    assert sorted(train + test) == list(range(101))
    assert set(train).isdisjoint(test)
    # deterministic in the seed
    assert (train, test) == split_indices(101, 0.8, seed=0)
    assert (train, test) != split_indices(101, 0.8, seed=1)
    with pytest.raises(ValueError):
        split_indices(10, 1.0, seed=0)


def test_oracle_grid_values(mat, domain):
    load = LoadCase(q=2.0)
    grid = oracle_grid(16, load, mat, domain)
    assert grid.resolution == (16, 16)
    assert grid.values.shape == (5, 16, 16)
    X, Y = grid.node_coords()
    assert np.isclose(X[0, 0], 0.5 / 16) and np.isclose(Y[-1, 0], 15.5 / 16)
    from elastisr import analytical_displacement, analytical_stress

    ux, _ = analytical_displacement(X, Y, load)
    np.testing.assert_allclose(grid.channel("ux"), ux, atol=1e-14)
    _, syy, _ = analytical_stress(X, Y, load, mat)
    np.testing.assert_allclose(grid.channel("syy"), syy, atol=1e-14)


def test_grid_blob_round_trip():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(5, 6, 4))
    grid = FieldGrid(values=values, spacing=(0.25, 1 / 6), q=1.5)
    blob = grid_to_bytes(grid)
    assert len(blob) == 5 * 6 * 4 * 8
    back = grid_from_bytes(blob, (4, 6), (0.25, 1 / 6), 1.5)
    np.testing.assert_array_equal(back.values, values)
    with pytest.raises(DatasetError):
        grid_from_bytes(blob[:-8], (4, 6), (0.25, 1 / 6), 1.5)


def test_field_grid_validation():
    with pytest.raises(ValueError):
        FieldGrid(values=np.zeros((4, 8, 8)), spacing=(0.1, 0.1))
    with pytest.raises(ValueError):
        FieldGrid(values=np.zeros((5, 8, 8)), spacing=(0.0, 0.1))


def test_generate_dataset_structure(tiny_dataset):
    ds = tiny_dataset
    assert len(ds) == 5
    np.testing.assert_allclose(ds.q_values, [0.0, 1.0, 2.0, 3.0, 4.0])
    assert ds.samples[0].lr.values.shape == (5, 16, 16)
    assert ds.samples[0].hr.values.shape == (5, 64, 64)
    assert len(ds.train_indices) == 4 and len(ds.test_indices) == 1
    assert all(np.all(np.isfinite(s.lr.values)) for s in ds.samples)
    assert all(np.all(np.isfinite(s.hr.values)) for s in ds.samples)
    # q is strictly increasing and the spacing is exactly dq
    dq = np.diff(ds.q_values)
    assert np.all(dq > 0)
    np.testing.assert_allclose(dq, 1.0, atol=1e-12)


def test_lr_and_hr_sample_same_fields(tiny_dataset):
    """Coarse and fine solves approximate the same problem: grids roughly agree."""
    s = tiny_dataset.samples[-1]  # q=4, largest fields
    lr_up = np.kron(s.lr.values, np.ones((1, 4, 4)))  # crude block upsample
    rel = np.linalg.norm(lr_up - s.hr.values) / np.linalg.norm(s.hr.values)
    assert rel < 0.5


def test_save_load_round_trip(tiny_dataset, tmp_path):
    root = save_dataset(tiny_dataset, tmp_path / "ds")
    back = load_dataset(root)
    assert len(back) == len(tiny_dataset)
    assert back.domain == tiny_dataset.domain
    assert back.material == tiny_dataset.material
    assert back.split == tiny_dataset.split
    for a, b in zip(tiny_dataset.samples, back.samples):
        assert a.q == b.q
        np.testing.assert_array_equal(a.lr.values, b.lr.values)
        np.testing.assert_array_equal(a.hr.values, b.hr.values)
        assert a.lr.spacing == b.lr.spacing
    # manifest is valid JSON with the advertised schema fields
    manifest = json.loads((root / "manifest.json").read_text())
    for key in ("format_version", "channels", "domain", "material", "split", "samples"):
        assert key in manifest
    assert manifest["channels"] == list(CHANNELS)
    assert isinstance(manifest_hash(root), str) and len(manifest_hash(root)) == 64


def test_load_rejects_bad_inputs(tiny_dataset, tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "nonexistent")
    root = save_dataset(tiny_dataset, tmp_path / "ds")
    manifest = json.loads((root / "manifest.json").read_text())
    manifest["format_version"] = 99
    (root / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetError, match="format_version"):
        load_dataset(root)
    manifest["format_version"] = 1
    (root / "manifest.json").write_text(json.dumps(manifest))
    # truncated blob is caught by size validation
    blob_name = manifest["samples"][0]["lr"]
    blob = (root / blob_name).read_bytes()
    (root / blob_name).write_bytes(blob[: len(blob) // 2])
    with pytest.raises(DatasetError, match="bytes"):
        load_dataset(root)
    (root / blob_name).unlink()
    with pytest.raises(DatasetError, match="missing"):
        load_dataset(root)


def test_generate_validates_arguments():
    with pytest.raises(ValueError):
        generate_dataset(q_start=0.0, q_end=5.0, dq=1.0)  # q=5 outside load range
    with pytest.raises(ValueError):
        generate_dataset(hr_source="exact")


def test_analytic_hr_source(mat, domain):
    ds = generate_dataset(
        q_start=1.0,
        q_end=3.0,
        dq=2.0,
        lr_resolution=8,
        hr_resolution=16,
        hr_source="analytic",
        coarse_nodes=41,
        fine_nodes=145,
    )
    assert len(ds) == 2
    ref = oracle_grid(16, LoadCase(q=3.0), mat, domain)
    np.testing.assert_allclose(ds.samples[1].hr.values, ref.values, atol=1e-13)


def test_parallel_generation_matches_serial(domain):
    kwargs = dict(
        q_start=0.0,
        q_end=4.0,
        dq=2.0,
        lr_resolution=8,
        hr_resolution=16,
        hr_source="analytic",
        coarse_nodes=41,
        fine_nodes=145,
    )
    serial = generate_dataset(**kwargs, jobs=1)
    parallel = generate_dataset(**kwargs, jobs=2)
    assert serial.q_values == parallel.q_values
    for a, b in zip(serial.samples, parallel.samples):
        np.testing.assert_array_equal(a.lr.values, b.lr.values)
        np.testing.assert_array_equal(a.hr.values, b.hr.values)
