"""Operator-level latency database: storage, grid interpolation, roofline fallback.

Latencies are kept per operator kind and quantization as rectangular grids over
a small set of interpolated axes (token-like dimensions); all remaining shape
dimensions are exact-match keys. Queries off the grid interpolate multilinearly
in log-log space; queries outside the grid follow a configurable extrapolation
policy that can fall back to an analytical speed-of-light (roofline) bound.
"""

from __future__ import annotations

import hashlib
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

SCHEMA_ID = "llmconf-perfdb/1"

QUANT_FORMATS = ("fp16", "fp8", "int8", "int4")
# bytes per element
QUANT_BYTES = {"fp16": 2.0, "fp8": 1.0, "int8": 1.0, "int4": 0.5}

OPERATOR_KINDS = (
    "gemm",
    "attention_context",
    "attention_generation",
    "allreduce",
    "allgather",
    "alltoall",
    "p2p",
    "moe_dispatch",
    "moe_combine",
    "moe_gemm",
    "embedding",
)
ATTENTION_KINDS = ("attention_context", "attention_generation")
COMM_KINDS = ("allreduce", "allgather", "alltoall", "p2p")
MOE_KINDS = ("moe_dispatch", "moe_combine", "moe_gemm")
ATTN_VARIANTS = ("MHA", "GQA", "MLA")
PROVENANCES = ("measured", "synthetic")

EXTRAPOLATION_POLICIES = ("default", "strict", "clamp", "sol")

# required integer dims and the interpolated subset, per kind. attn_kind is a
# categorical dim handled separately; kv_len rides along on attention queries
# (defaults to seq_len) but is neither a grid axis nor an exact-match key.
_KIND_DIMS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "gemm": (("m", "n", "k"), ("m",)),
    "attention_context": (
        ("batch", "seq_len", "num_heads", "kv_heads", "head_dim"),
        ("batch", "seq_len"),
    ),
    "attention_generation": (
        ("batch", "seq_len", "num_heads", "kv_heads", "head_dim"),
        ("batch", "seq_len"),
    ),
    "allreduce": (("message_bytes", "participant_count"), ("message_bytes",)),
    "allgather": (("message_bytes", "participant_count"), ("message_bytes",)),
    "alltoall": (("message_bytes", "participant_count"), ("message_bytes",)),
    "p2p": (("message_bytes", "participant_count"), ("message_bytes",)),
    "moe_dispatch": (("tokens", "experts", "topk", "hidden", "intermediate"), ("tokens",)),
    "moe_combine": (("tokens", "experts", "topk", "hidden", "intermediate"), ("tokens",)),
    "moe_gemm": (("tokens", "experts", "topk", "hidden", "intermediate"), ("tokens",)),
    "embedding": (("tokens", "hidden", "vocab"), ("tokens",)),
}

# fraction of message_bytes that crosses a link in a ring implementation
_COMM_FACTORS = {
    "allreduce": lambda n: 2.0 * (n - 1) / n,
    "allgather": lambda n: (n - 1) / n,
    "alltoall": lambda n: (n - 1) / n,
    "p2p": lambda n: 1.0,
}


class PerfDbError(Exception):
    """Base class for database failures."""


class DbParseError(PerfDbError):
    """Malformed database file (bad JSON, unknown kind, unknown field)."""


class DbValidationError(PerfDbError):
    """Structurally invalid database (duplicates, ragged grids, bad latency)."""


class MissingKeyError(PerfDbError):
    """No grid exists for the requested (kind, quant, fixed dims)."""


class ExtrapolationError(PerfDbError):
    """Query falls outside the grid under the strict policy."""


class UnsupportedOperatorError(PerfDbError):
    """Roofline model cannot price this kind/quant combination."""


@dataclass(frozen=True)
class HardwareSpec:
    """Static platform description used for roofline estimates and memory fits."""

    name: str
    gpu_memory: int  # bytes
    mem_bandwidth: float  # bytes/s
    compute_throughput: Mapping[str, float]  # quant format -> FLOP/s
    intra_node_bandwidth: float  # bytes/s per link
    inter_node_bandwidth: float  # bytes/s
    gpus_per_node: int

    def __post_init__(self) -> None:
        if not self.compute_throughput:
            raise DbValidationError("compute_throughput must not be empty")
        for fmt, rate in self.compute_throughput.items():
            if fmt not in QUANT_FORMATS:
                raise DbValidationError(f"unknown numeric format {fmt!r}")
            if rate <= 0:
                raise DbValidationError(f"compute_throughput[{fmt}] must be positive")
        for attr in ("gpu_memory", "mem_bandwidth", "intra_node_bandwidth", "inter_node_bandwidth"):
            if getattr(self, attr) <= 0:
                raise DbValidationError(f"{attr} must be positive")
        if self.gpus_per_node < 1:
            raise DbValidationError("gpus_per_node must be >= 1")

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "gpu_memory": self.gpu_memory,
            "mem_bandwidth": self.mem_bandwidth,
            "compute_throughput": dict(sorted(self.compute_throughput.items())),
            "intra_node_bandwidth": self.intra_node_bandwidth,
            "inter_node_bandwidth": self.inter_node_bandwidth,
            "gpus_per_node": self.gpus_per_node,
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "HardwareSpec":
        known = {
            "name",
            "gpu_memory",
            "mem_bandwidth",
            "compute_throughput",
            "intra_node_bandwidth",
            "inter_node_bandwidth",
            "gpus_per_node",
        }
        unknown = set(doc) - known
        if unknown:
            raise DbParseError(f"unknown hardware fields: {sorted(unknown)}")
        missing = known - set(doc)
        if missing:
            raise DbParseError(f"missing hardware fields: {sorted(missing)}")
        return cls(
            name=doc["name"],
            gpu_memory=int(doc["gpu_memory"]),
            mem_bandwidth=float(doc["mem_bandwidth"]),
            compute_throughput={k: float(v) for k, v in doc["compute_throughput"].items()},
            intra_node_bandwidth=float(doc["intra_node_bandwidth"]),
            inter_node_bandwidth=float(doc["inter_node_bandwidth"]),
            gpus_per_node=int(doc["gpus_per_node"]),
        )


def load_hardware_spec(path: str | Path) -> HardwareSpec:
    """Load a standalone hardware description (JSON document)."""
    with open(path, encoding="utf-8") as f:
        return HardwareSpec.from_doc(json.load(f))


@dataclass(frozen=True)
class OperatorQuery:
    """One operator invocation: kind, quantization, and named shape dims.

    ``shape`` is stored as a canonical sorted tuple so queries hash and compare
    by value. ``backend`` is optional; when set it must match the database it
    is queried against.
    """

    kind: str
    quant: str
    shape: tuple[tuple[str, int | str], ...]
    backend: str | None = None

    def __init__(self, kind: str, quant: str, shape: Mapping[str, int | str], backend: str | None = None):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "quant", quant)
        object.__setattr__(self, "shape", tuple(sorted(dict(shape).items())))
        object.__setattr__(self, "backend", backend)
        self._validate()

    def _validate(self) -> None:
        if self.kind not in OPERATOR_KINDS:
            raise DbParseError(f"unknown operator kind {self.kind!r}")
        if self.quant not in QUANT_FORMATS:
            raise DbParseError(f"unknown quant format {self.quant!r}")
        dims = self.dims()
        required, _ = _KIND_DIMS[self.kind]
        is_attn = self.kind in ATTENTION_KINDS
        allowed = set(required) | ({"attn_kind", "kv_len"} if is_attn else set())
        unknown = set(dims) - allowed
        if unknown:
            raise DbParseError(f"{self.kind}: unexpected shape dims {sorted(unknown)}")
        missing = set(required) - set(dims)
        if missing:
            raise DbParseError(f"{self.kind}: missing shape dims {sorted(missing)}")
        for name in required:
            value = dims[name]
            if not isinstance(value, int) or value < 1:
                raise DbParseError(f"{self.kind}: dim {name}={value!r} must be an integer >= 1")
        if is_attn:
            if dims.get("attn_kind") not in ATTN_VARIANTS:
                raise DbParseError(f"{self.kind}: attn_kind must be one of {ATTN_VARIANTS}")
            kv = dims.get("kv_len", dims["seq_len"])
            if not isinstance(kv, int) or kv < 1:
                raise DbParseError(f"{self.kind}: kv_len={kv!r} must be an integer >= 1")
        elif "attn_kind" in dims:
            raise DbParseError(f"{self.kind}: attn_kind only valid on attention kinds")
        if self.kind in COMM_KINDS and dims["participant_count"] < 2:
            raise DbParseError(f"{self.kind}: participant_count must be >= 2")

    def dims(self) -> dict[str, int | str]:
        return dict(self.shape)

    def dim(self, name: str) -> int:
        return dict(self.shape)[name]  # type: ignore[return-value]

    def kv_len(self) -> int:
        dims = self.dims()
        return int(dims.get("kv_len", dims["seq_len"]))  # type: ignore[arg-type]

    def interp_axes(self) -> tuple[str, ...]:
        return _KIND_DIMS[self.kind][1]

    def grid_key(self) -> tuple:
        """(kind, quant, fixed dims) identifying the grid this query lands in."""
        _, interp = _KIND_DIMS[self.kind]
        skip = set(interp) | {"kv_len"}
        fixed = tuple((k, v) for k, v in self.shape if k not in skip)
        return (self.kind, self.quant, fixed)

    def coords(self) -> tuple[int, ...]:
        dims = self.dims()
        return tuple(int(dims[a]) for a in self.interp_axes())  # type: ignore[arg-type]

    def with_coords(self, coords: Sequence[int]) -> "OperatorQuery":
        dims = self.dims()
        for axis, value in zip(self.interp_axes(), coords):
            dims[axis] = int(value)
        return OperatorQuery(self.kind, self.quant, dims, self.backend)

    def to_doc(self) -> dict:
        return {"kind": self.kind, "quant": self.quant, "shape": dict(sorted(self.shape))}


@dataclass(frozen=True)
class OperatorRecord:
    """A single measured or synthesized latency sample."""

    query: OperatorQuery
    latency_us: float
    provenance: str = "measured"

    def __post_init__(self) -> None:
        if not (isinstance(self.latency_us, (int, float)) and math.isfinite(self.latency_us)):
            raise DbValidationError(f"latency_us={self.latency_us!r} is not a finite number")
        if self.latency_us <= 0:
            raise DbValidationError(f"latency_us must be > 0, got {self.latency_us}")
        if self.provenance not in PROVENANCES:
            raise DbValidationError(f"provenance must be one of {PROVENANCES}")

    def to_doc(self) -> dict:
        doc = self.query.to_doc()
        doc["latency_us"] = self.latency_us
        doc["provenance"] = self.provenance
        return doc


class _Grid:
    """Rectangular latency grid over the interpolated axes of one key."""

    __slots__ = ("axes", "axis_values", "cells")

    def __init__(self, axes: tuple[str, ...], axis_values: tuple[tuple[int, ...], ...], cells: dict):
        self.axes = axes
        self.axis_values = axis_values
        self.cells = cells


@dataclass(eq=False)
class PerfDatabase:
    """Immutable indexed collection of operator records for one platform/backend."""

    hardware: HardwareSpec
    backend: str
    backend_version: str
    records: tuple[OperatorRecord, ...]
    extrapolation: str = "default"
    _grids: dict = field(default_factory=dict, repr=False)

    def __hash__(self) -> int:
        return id(self)

    @classmethod
    def from_records(
        cls,
        hardware: HardwareSpec,
        backend: str,
        backend_version: str,
        records: Iterable[OperatorRecord],
        extrapolation: str = "default",
    ) -> "PerfDatabase":
        if extrapolation not in EXTRAPOLATION_POLICIES:
            raise DbValidationError(f"unknown extrapolation policy {extrapolation!r}")
        records = tuple(records)
        grids = _build_grids(records)
        return cls(hardware, backend, backend_version, records, extrapolation, grids)

    def grid_keys(self) -> list[tuple]:
        return sorted(self._grids, key=repr)

    def kinds(self) -> set[str]:
        return {key[0] for key in self._grids}


def _build_grids(records: Sequence[OperatorRecord]) -> dict:
    seen: dict[tuple, dict[tuple, int]] = {}
    per_key: dict[tuple, dict] = {}
    for idx, rec in enumerate(records):
        key = rec.query.grid_key()
        coords = rec.query.coords()
        bucket = seen.setdefault(key, {})
        if coords in bucket:
            raise DbValidationError(
                f"duplicate coordinate {coords} for key {key} (records #{bucket[coords]} and #{idx})"
            )
        bucket[coords] = idx
        per_key.setdefault(key, {})[coords] = rec.latency_us

    grids: dict = {}
    for key, cells in per_key.items():
        axes = _KIND_DIMS[key[0]][1]
        axis_values = tuple(tuple(sorted({c[i] for c in cells})) for i in range(len(axes)))
        expected = math.prod(len(v) for v in axis_values)
        if len(cells) != expected:
            raise DbValidationError(
                f"non-rectangular grid for key {key}: {len(cells)} cells, "
                f"expected {expected} from axes {dict(zip(axes, axis_values))}"
            )
        grids[key] = _Grid(axes, axis_values, cells)
    return grids


# ---------------------------------------------------------------------------
# file format

def load_db(path: str | Path, extrapolation: str = "default") -> PerfDatabase:
    """Load a JSON-lines database file: metadata header then one record per line."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DbParseError(f"{path}: empty database file")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DbParseError(f"{path}:1: bad JSON in header: {e}") from None
    known = {"schema", "hardware", "backend", "backend_version"}
    unknown = set(header) - known
    if unknown:
        raise DbParseError(f"{path}:1: unknown header fields: {sorted(unknown)}")
    if header.get("schema") != SCHEMA_ID:
        raise DbParseError(f"{path}:1: schema must be {SCHEMA_ID!r}, got {header.get('schema')!r}")
    hardware = HardwareSpec.from_doc(header["hardware"])

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise DbParseError(f"{path}:{lineno}: bad JSON: {e}") from None
        known_rec = {"kind", "quant", "shape", "latency_us", "provenance"}
        unknown = set(doc) - known_rec
        if unknown:
            raise DbParseError(f"{path}:{lineno}: unknown record fields: {sorted(unknown)}")
        missing = known_rec - set(doc)
        if missing:
            raise DbParseError(f"{path}:{lineno}: missing record fields: {sorted(missing)}")
        try:
            query = OperatorQuery(doc["kind"], doc["quant"], doc["shape"])
            records.append(OperatorRecord(query, doc["latency_us"], doc["provenance"]))
        except (DbParseError, DbValidationError) as e:
            raise type(e)(f"{path}:{lineno}: {e}") from None

    try:
        return PerfDatabase.from_records(
            hardware, header["backend"], header["backend_version"], records, extrapolation
        )
    except DbValidationError as e:
        raise DbValidationError(f"{path}: {e}") from None


def _record_sort_key(rec: OperatorRecord) -> tuple:
    return (rec.query.kind, rec.query.quant, rec.query.shape)


def save_db(db: PerfDatabase, path: str | Path) -> None:
    """Write the canonical JSON-lines form (sorted records, stable float repr)."""
    header = {
        "schema": SCHEMA_ID,
        "hardware": db.hardware.to_doc(),
        "backend": db.backend,
        "backend_version": db.backend_version,
    }
    out = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for rec in sorted(db.records, key=_record_sort_key):
        out.append(json.dumps(rec.to_doc(), sort_keys=True, separators=(",", ":")))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# roofline (speed-of-light) estimation

def sol_estimate(query: OperatorQuery, hw: HardwareSpec) -> float:
    """Analytical lower-bound latency in microseconds: max(memory time, compute time)."""
    dims = query.dims()
    b = QUANT_BYTES[query.quant]
    kind = query.kind

    if kind in COMM_KINDS:
        n = int(dims["participant_count"])
        link = hw.intra_node_bandwidth if n <= hw.gpus_per_node else hw.inter_node_bandwidth
        factor = _COMM_FACTORS[kind](n)
        seconds = int(dims["message_bytes"]) * factor / link
        return seconds * 1e6

    compute = hw.compute_throughput.get(query.quant)
    if compute is None:
        raise UnsupportedOperatorError(
            f"hardware {hw.name!r} has no compute rate for quant {query.quant!r}"
        )

    if kind == "gemm":
        m, n, k = (int(dims[d]) for d in ("m", "n", "k"))
        flops = 2.0 * m * n * k
        bytes_moved = b * (m * k + k * n + m * n)
    elif kind == "attention_context":
        batch, s = int(dims["batch"]), int(dims["seq_len"])
        heads, kvh, hd = int(dims["num_heads"]), int(dims["kv_heads"]), int(dims["head_dim"])
        # causal masking halves the score matrix
        flops = 2.0 * batch * heads * s * s * hd
        bytes_moved = b * batch * s * (2 * heads + 2 * kvh) * hd
    elif kind == "attention_generation":
        batch = int(dims["batch"])
        heads, kvh, hd = int(dims["num_heads"]), int(dims["kv_heads"]), int(dims["head_dim"])
        kv = query.kv_len()
        flops = 4.0 * batch * heads * kv * hd
        # dominated by streaming the full KV cache once per step
        bytes_moved = b * batch * kv * 2 * kvh * hd
    elif kind == "moe_gemm":
        t = int(dims["tokens"])
        e, h, i = int(dims["experts"]), int(dims["hidden"]), int(dims["intermediate"])
        flops = 3.0 * 2.0 * t * h * i
        bytes_moved = b * (3.0 * e * h * i + t * (h + i))
    elif kind in ("moe_dispatch", "moe_combine"):
        t, k_ = int(dims["tokens"]), int(dims["topk"])
        h = int(dims["hidden"])
        seconds = b * t * k_ * h / hw.intra_node_bandwidth
        return seconds * 1e6
    elif kind == "embedding":
        t, h = int(dims["tokens"]), int(dims["hidden"])
        return b * t * h / hw.mem_bandwidth * 1e6
    else:  # pragma: no cover - kinds above are exhaustive
        raise UnsupportedOperatorError(f"no roofline model for kind {kind!r}")

    seconds = max(flops / compute, bytes_moved / hw.mem_bandwidth)
    return seconds * 1e6


# ---------------------------------------------------------------------------
# interpolation

def _axis_position(values: tuple[int, ...], x: int) -> tuple[int, int, float, int]:
    """Locate x on one sorted axis.

    Returns (lo_index, hi_index, weight_on_hi, out_of_bounds) with
    out_of_bounds -1 below the grid, +1 above, 0 inside.
    """
    if x < values[0]:
        return 0, 0, 0.0, -1
    if x > values[-1]:
        n = len(values) - 1
        return n, n, 0.0, +1
    i = bisect_left(values, x)
    if values[i] == x:
        return i, i, 0.0, 0
    lo, hi = i - 1, i
    t = (math.log(x) - math.log(values[lo])) / (math.log(values[hi]) - math.log(values[lo]))
    return lo, hi, t, 0


def _interp_cells(grid: _Grid, coords: Sequence[int]) -> float:
    """Multilinear interpolation in log-latency space; exact on grid points."""
    exact = tuple(coords)
    hit = grid.cells.get(exact)
    if hit is not None:
        return hit

    positions = [_axis_position(vals, c) for vals, c in zip(grid.axis_values, coords)]
    corners: list[tuple[float, tuple[int, ...]]] = [(1.0, ())]
    for (lo, hi, t, _), vals in zip(positions, grid.axis_values):
        nxt = []
        for w, prefix in corners:
            if lo == hi:
                nxt.append((w, prefix + (vals[lo],)))
            else:
                if t < 1.0:
                    nxt.append((w * (1.0 - t), prefix + (vals[lo],)))
                if t > 0.0:
                    nxt.append((w * t, prefix + (vals[hi],)))
        corners = nxt
    if len(corners) == 1:
        return grid.cells[corners[0][1]]
    values = [grid.cells[c] for _, c in corners]
    first = values[0]
    if all(v == first for v in values):
        return first  # constant cells must stay bit-exact, no log/exp noise
    log_lat = sum(w * math.log(v) for (w, _), v in zip(corners, values))
    return math.exp(log_lat)


def query_latency(db: PerfDatabase, query: OperatorQuery, policy: str | None = None) -> float:
    """Latency in microseconds for a query, exact at grid points.

    Off-grid coordinates interpolate inside the bounding box; outside it the
    extrapolation policy applies: "strict" raises, "clamp" uses the nearest
    edge, "sol" scales the roofline bound by the edge cell's efficiency, and
    "default" clamps below the grid and uses the roofline above it.
    """
    if query.backend is not None and query.backend != db.backend:
        raise MissingKeyError(
            f"query targets backend {query.backend!r} but database is {db.backend!r}"
        )
    policy = policy or db.extrapolation
    if policy not in EXTRAPOLATION_POLICIES:
        raise PerfDbError(f"unknown extrapolation policy {policy!r}")

    key = query.grid_key()
    grid = db._grids.get(key)
    if grid is None:
        kinds = sorted({k[0] for k in db._grids})
        raise MissingKeyError(f"no grid for key {key}; database covers kinds {kinds}")

    coords = query.coords()
    oob = [_axis_position(vals, c)[3] for vals, c in zip(grid.axis_values, coords)]
    if all(o == 0 for o in oob):
        return _interp_cells(grid, coords)

    if policy == "strict":
        box = {a: (v[0], v[-1]) for a, v in zip(grid.axes, grid.axis_values)}
        raise ExtrapolationError(f"query coords {dict(zip(grid.axes, coords))} outside grid box {box}")

    clamped = tuple(
        min(max(c, vals[0]), vals[-1]) for c, vals in zip(coords, grid.axis_values)
    )
    use_sol = policy == "sol" or (policy == "default" and any(o > 0 for o in oob))
    if policy == "clamp" or not use_sol:
        return _interp_cells(grid, clamped)

    edge_latency = _interp_cells(grid, clamped)
    edge_query = query.with_coords(clamped)
    efficiency = edge_latency / sol_estimate(edge_query, db.hardware)
    return sol_estimate(query, db.hardware) * efficiency


# ---------------------------------------------------------------------------
# synthetic generation

@dataclass(frozen=True)
class GridAxes:
    """One grid to synthesize: fixed dims plus value lists for each interpolated axis."""

    kind: str
    quant: str
    fixed: tuple[tuple[str, int | str], ...]
    axes: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self) -> None:
        if self.kind not in OPERATOR_KINDS:
            raise DbValidationError(f"unknown kind {self.kind!r}")
        expected = _KIND_DIMS[self.kind][1]
        names = tuple(a for a, _ in self.axes)
        if names != expected:
            raise DbValidationError(f"{self.kind}: axes must be {expected}, got {names}")
        for name, values in self.axes:
            if not values:
                raise DbValidationError(f"{self.kind}: axis {name} is empty")
            if list(values) != sorted(set(values)):
                raise DbValidationError(f"{self.kind}: axis {name} must be strictly ascending")

    def queries(self) -> Iterator[OperatorQuery]:
        fixed = dict(self.fixed)
        names = [a for a, _ in self.axes]
        for combo in product(*(v for _, v in self.axes)):
            dims = dict(fixed)
            dims.update(zip(names, combo))
            yield OperatorQuery(self.kind, self.quant, dims)


def _hash_unit(*parts) -> float:
    """Deterministic hash of the parts to a float in [0, 1)."""
    material = "|".join(str(p) for p in parts).encode()
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


def _efficiency(seed: int, key: tuple, axis_names: Sequence[str], coords: Sequence[int], amplitude: float) -> float:
    """Smooth deterministic factor in [2-amplitude-0.15, 2+amplitude+0.15].

    Low-frequency sinusoids over log2(coordinate) keep adjacent grid points
    within a few percent of each other while still exercising interpolation.
    """
    if amplitude == 0.0:
        return 2.0
    offset = (_hash_unit(seed, key, "offset") - 0.5) * 0.3
    total = 0.0
    for name, x in zip(axis_names, coords):
        omega = 0.03 + 0.02 * _hash_unit(seed, key, name, "omega")
        phase = 2.0 * math.pi * _hash_unit(seed, key, name, "phase")
        total += math.sin(omega * math.log2(x) + phase)
    return 2.0 + offset + amplitude * total / max(len(axis_names), 1)


def generate_synthetic_db(
    hw: HardwareSpec,
    grid_spec: Sequence[GridAxes],
    seed: int,
    backend: str = "trtllm",
    backend_version: str = "synthetic",
    efficiency_amplitude: float = 0.8,
) -> PerfDatabase:
    """Populate every grid coordinate with roofline latency times a smooth efficiency.

    The efficiency factor stays within [1.0, 3.0], is reproducible per seed,
    and with ``efficiency_amplitude=0`` collapses to a constant 2.0, making
    every latency exactly twice its roofline bound (monotone wherever the
    roofline is).
    """
    if not 0.0 <= efficiency_amplitude <= 0.8:
        raise DbValidationError("efficiency_amplitude must be in [0, 0.8]")
    records = []
    for spec in grid_spec:
        axis_names = [a for a, _ in spec.axes]
        for query in spec.queries():
            base = sol_estimate(query, hw)
            eff = _efficiency(seed, (spec.kind, spec.quant, spec.fixed), axis_names, query.coords(), efficiency_amplitude)
            records.append(OperatorRecord(query, base * eff, provenance="synthetic"))
    records.sort(key=_record_sort_key)
    return PerfDatabase.from_records(hw, backend, backend_version, records)


# ---------------------------------------------------------------------------
# validation report

@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    gaps: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.gaps

    def lines(self) -> list[str]:
        return [f"violation: {v}" for v in self.violations] + [f"gap: {g}" for g in self.gaps]


def validate_db(db: PerfDatabase, required_kinds: Iterable[str] = ()) -> ValidationReport:
    """Re-check all invariants from the raw records and report coverage gaps."""
    report = ValidationReport()
    for idx, rec in enumerate(db.records):
        if not (isinstance(rec.latency_us, (int, float)) and math.isfinite(rec.latency_us) and rec.latency_us > 0):
            report.violations.append(f"record #{idx} {rec.query.grid_key()}: latency_us={rec.latency_us}")
        if rec.provenance not in PROVENANCES:
            report.violations.append(f"record #{idx}: provenance={rec.provenance!r}")
    try:
        _build_grids(db.records)
    except DbValidationError as e:
        report.violations.append(str(e))
    present = db.kinds()
    for kind in sorted(set(required_kinds)):
        if kind not in present:
            report.gaps.append(f"operator kind {kind!r} required but absent")
    return report
