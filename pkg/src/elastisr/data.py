"""Dataset generation and on-disk layout.

A dataset pairs, per load value q, a low-resolution grid sampled from a coarse
FEM solve with a high-resolution reference grid (fine FEM solve by default, or
the closed-form fields). On disk a dataset is a directory holding
``manifest.json`` plus one little-endian float64 binary blob per grid, laid
out channel-major ``(5, ny, nx)`` in C order.

The HR grids exist for evaluation only; training never reads them.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .elasticity import (
    DomainSpec,
    LoadCase,
    MaterialParams,
    analytical_displacement,
    analytical_stress,
)
from .errors import DatasetError
from .fem import (
    CHANNELS,
    DEFAULT_COARSE_NODES,
    DEFAULT_FINE_NODES,
    ElasticitySolver,
    FieldGrid,
    build_coarse_mesh,
    sample_to_grid,
)

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1
BLOB_DTYPE = "<f8"


@dataclass
class Sample:
    """One load case: LR input grid and HR reference grid."""

    q: float
    lr: FieldGrid
    hr: FieldGrid


@dataclass
class Dataset:
    samples: list[Sample]
    domain: DomainSpec
    material: MaterialParams
    u_ref: float = 1.0
    hr_source: str = "fem"
    split: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def q_values(self) -> list[float]:
        return [s.q for s in self.samples]

    def load_case(self, index: int) -> LoadCase:
        return LoadCase(q=self.samples[index].q, u_ref=self.u_ref)

    @property
    def train_indices(self) -> list[int]:
        return list(self.split.get("train", []))

    @property
    def test_indices(self) -> list[int]:
        return list(self.split.get("test", []))


def split_indices(n: int, ratio: float, seed: int) -> tuple[list[int], list[int]]:
    """Deterministic shuffled split; train size is round(ratio * n)."""
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    n_train = int(round(ratio * n))
    n_train = min(max(n_train, 1), n - 1) if n >= 2 else n_train
    perm = np.random.default_rng(seed).permutation(n)
    train = sorted(int(i) for i in perm[:n_train])
    test = sorted(int(i) for i in perm[n_train:])
    return train, test


def q_schedule(q_start: float, q_end: float, dq: float) -> list[float]:
    """Evenly spaced load values from q_start up to q_end inclusive."""
    if dq <= 0:
        raise ValueError(f"dq must be positive, got {dq}")
    if q_end < q_start:
        raise ValueError("q_end must be >= q_start")
    count = int(np.floor((q_end - q_start) / dq + 1e-9)) + 1
    return [float(q_start + k * dq) for k in range(count)]


def oracle_grid(
    resolution,
    load: LoadCase,
    mat: MaterialParams,
    domain: DomainSpec | None = None,
) -> FieldGrid:
    """Closed-form fields evaluated on a cell-centered uniform grid."""
    domain = DomainSpec() if domain is None else domain
    if np.isscalar(resolution):
        nx = ny = int(resolution)
    else:
        nx, ny = (int(r) for r in resolution)
    hx, hy = domain.width / nx, domain.height / ny
    x = (np.arange(nx) + 0.5) * hx
    y = (np.arange(ny) + 0.5) * hy
    X, Y = np.meshgrid(x, y)
    ux, uy = analytical_displacement(X, Y, load)
    sxx, syy, sxy = analytical_stress(X, Y, load, mat)
    values = np.stack([ux, uy, sxx, syy, sxy])
    return FieldGrid(values=values, spacing=(hx, hy), q=load.q)


def _generate_chunk(args) -> list[tuple[float, np.ndarray, np.ndarray]]:
    (
        domain,
        mat,
        u_ref,
        qs,
        lr_resolution,
        hr_resolution,
        hr_source,
        coarse_nodes,
        fine_nodes,
    ) = args
    coarse = build_coarse_mesh(domain, coarse_nodes)
    coarse_solver = ElasticitySolver(coarse, mat, domain)
    fine_solver = None
    if hr_source == "fem":
        fine = build_coarse_mesh(domain, fine_nodes)
        fine_solver = ElasticitySolver(fine, mat, domain)
    out = []
    for q in qs:
        load = LoadCase(q=q, u_ref=u_ref)
        lr = sample_to_grid(coarse, coarse_solver.solve(load), lr_resolution, domain)
        if fine_solver is not None:
            hr = sample_to_grid(fine, fine_solver.solve(load), hr_resolution, domain)
        else:
            hr = oracle_grid(hr_resolution, load, mat, domain)
        out.append((q, lr.values, hr.values))
    return out


def generate_dataset(
    domain: DomainSpec | None = None,
    mat: MaterialParams | None = None,
    *,
    q_start: float = 0.0,
    q_end: float = 4.0,
    dq: float = 0.04,
    lr_resolution: int = 32,
    hr_resolution: int = 128,
    hr_source: str = "fem",
    coarse_nodes: int = DEFAULT_COARSE_NODES,
    fine_nodes: int = DEFAULT_FINE_NODES,
    u_ref: float = 1.0,
    split_ratio: float = 0.8,
    split_seed: int = 0,
    jobs: int = 1,
) -> Dataset:
    """Solve the coarse (and optionally fine) FEM problem over a q sweep.

    ``hr_source`` selects the HR reference: ``"fem"`` for a fine-mesh solve or
    ``"analytic"`` for the closed-form fields. Distinct q values are
    independent, so ``jobs > 1`` fans them out across processes.
    """
    domain = DomainSpec() if domain is None else domain
    mat = MaterialParams() if mat is None else mat
    if hr_source not in ("fem", "analytic"):
        raise ValueError(f"hr_source must be 'fem' or 'analytic', got {hr_source!r}")
    qs = q_schedule(q_start, q_end, dq)
    for q in qs:
        LoadCase(q=q, u_ref=u_ref)  # validate the whole sweep up front

    base = (domain, mat, u_ref)
    tail = (lr_resolution, hr_resolution, hr_source, coarse_nodes, fine_nodes)
    if jobs > 1 and len(qs) > 1:
        chunks = [list(c) for c in np.array_split(qs, min(jobs, len(qs)))]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_generate_chunk, [base + (c,) + tail for c in chunks]))
        rows = [row for part in parts for row in part]
    else:
        rows = _generate_chunk(base + (qs,) + tail)

    def _grid(values: np.ndarray, resolution: int, q: float) -> FieldGrid:
        nx = ny = int(resolution)
        return FieldGrid(
            values=values, spacing=(domain.width / nx, domain.height / ny), q=q
        )

    samples = [
        Sample(q=q, lr=_grid(lr, lr_resolution, q), hr=_grid(hr, hr_resolution, q))
        for q, lr, hr in rows
    ]
    train, test = split_indices(len(samples), split_ratio, split_seed)
    coarse = build_coarse_mesh(domain, coarse_nodes)
    meta = {
        "coarse_mesh": {
            "family": coarse.family,
            "divisions": coarse.divisions,
            "nodes": coarse.num_nodes,
        },
    }
    if hr_source == "fem":
        fine = build_coarse_mesh(domain, fine_nodes)
        meta["fine_mesh"] = {
            "family": fine.family,
            "divisions": fine.divisions,
            "nodes": fine.num_nodes,
        }
    return Dataset(
        samples=samples,
        domain=domain,
        material=mat,
        u_ref=u_ref,
        hr_source=hr_source,
        split={"ratio": split_ratio, "seed": split_seed, "train": train, "test": test},
        meta=meta,
    )


def grid_to_bytes(grid: FieldGrid) -> bytes:
    return np.ascontiguousarray(grid.values, dtype=BLOB_DTYPE).tobytes()


def grid_from_bytes(
    blob: bytes, resolution: tuple[int, int], spacing: tuple[float, float], q: float
) -> FieldGrid:
    nx, ny = resolution
    expected = len(CHANNELS) * nx * ny * 8
    if len(blob) != expected:
        raise DatasetError(
            f"grid blob holds {len(blob)} bytes, expected {expected} "
            f"for resolution {nx}x{ny}"
        )
    values = np.frombuffer(blob, dtype=BLOB_DTYPE).reshape(len(CHANNELS), ny, nx)
    return FieldGrid(values=values.copy(), spacing=spacing, q=q)


def save_dataset(dataset: Dataset, path) -> Path:
    """Write manifest.json plus one LR and one HR blob per sample."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(dataset.samples):
        lr_name = f"sample_{i:04d}_lr.bin"
        hr_name = f"sample_{i:04d}_hr.bin"
        (root / lr_name).write_bytes(grid_to_bytes(s.lr))
        (root / hr_name).write_bytes(grid_to_bytes(s.hr))
        entries.append({"index": i, "q": s.q, "lr": lr_name, "hr": hr_name})
    lr_nx, lr_ny = dataset.samples[0].lr.resolution
    hr_nx, hr_ny = dataset.samples[0].hr.resolution
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "elastisr-dataset",
        "channels": list(CHANNELS),
        "domain": {
            "width": dataset.domain.width,
            "height": dataset.domain.height,
            "bc_partition": dataset.domain.partition,
        },
        "material": {
            "lame_lambda": dataset.material.lame_lambda,
            "lame_mu": dataset.material.lame_mu,
        },
        "u_ref": dataset.u_ref,
        "lr_resolution": [lr_nx, lr_ny],
        "hr_resolution": [hr_nx, hr_ny],
        "hr_source": dataset.hr_source,
        "split": dataset.split,
        "meta": dataset.meta,
        "samples": entries,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


def load_dataset(path) -> Dataset:
    """Read a dataset directory back; validates version, shapes, and blob sizes."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"unreadable manifest in {root}: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetError(
            f"dataset format_version {version} unsupported (expected {FORMAT_VERSION})"
        )
    dom = manifest["domain"]
    domain = DomainSpec(
        width=dom["width"],
        height=dom["height"],
        bc_partition=tuple(sorted(dom["bc_partition"].items())),
    )
    mat = MaterialParams(**manifest["material"])
    lr_nx, lr_ny = manifest["lr_resolution"]
    hr_nx, hr_ny = manifest["hr_resolution"]
    lr_spacing = (domain.width / lr_nx, domain.height / lr_ny)
    hr_spacing = (domain.width / hr_nx, domain.height / hr_ny)
    samples = []
    for entry in manifest["samples"]:
        q = float(entry["q"])
        try:
            lr_blob = (root / entry["lr"]).read_bytes()
            hr_blob = (root / entry["hr"]).read_bytes()
        except FileNotFoundError as exc:
            raise DatasetError(f"missing sample blob: {exc.filename}") from exc
        samples.append(
            Sample(
                q=q,
                lr=grid_from_bytes(lr_blob, (lr_nx, lr_ny), lr_spacing, q),
                hr=grid_from_bytes(hr_blob, (hr_nx, hr_ny), hr_spacing, q),
            )
        )
    return Dataset(
        samples=samples,
        domain=domain,
        material=mat,
        u_ref=manifest.get("u_ref", 1.0),
        hr_source=manifest.get("hr_source", "fem"),
        split=manifest.get("split", {}),
        meta=manifest.get("meta", {}),
    )


def manifest_hash(path) -> str:
    """SHA-256 of the manifest file, used to tie reports to their dataset."""
    data = (Path(path) / MANIFEST_NAME).read_bytes()
    return hashlib.sha256(data).hexdigest()
