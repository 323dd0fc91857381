"""Domain types and the on-disk formats (TMAP, QTV, RTVQ bundle).

TMAP (full-precision checkpoint exchange):

    "TMAP" | version byte 0x01 | u32-LE header length | JSON header | payload

The header is a JSON array of ``{"name", "shape", "offset", "nbytes"}``
in map order; offsets are relative to the payload base, which is the
header end rounded up to 8 bytes, and every tensor offset is itself a
multiple of 8 (gaps zero-filled). Payloads are raw little-endian float32
in row-major order.

QTV (packed quantized artifact):

    "QTV1" | u32-LE header length | JSON header | packed payloads

The header carries the role, provenance metadata, and per-tensor
``{"name", "shape", "bits", "scale", "zero_point", "constant", "offset",
"length"}``; payloads are tightly packed LSB-first bitstreams, one
independent stream per tensor. ``constant`` accompanies the ``scale == 0``
sentinel for zero-range tensors.

An RTVQ bundle is a directory holding ``base.qtv``, one
``offset_<task>.qtv`` per task, and ``manifest.json`` with keys
``{"tasks", "b_base", "b_offset", "n_tasks", "pre_digest"}``.

All values are immutable after construction; read(write(x)) == x at the
bit level.
"""

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from tvq.errors import FormatError, MismatchError, TvqError
from tvq.kernels import VALID_BITS, packed_size

TMAP_MAGIC = b"TMAP"
TMAP_VERSION = 1
QTV_MAGIC = b"QTV1"
_MAX_HEADER = 2**32 - 1


def _align8(n: int) -> int:
    return (n + 7) & ~7


class Role(str, Enum):
    """Reconstruction semantics of a quantized artifact."""

    FQ = "fq"                  # dequantizes directly to a checkpoint
    TVQ = "tvq"                # dequantizes to a task vector (delta)
    RTVQ_BASE = "rtvq_base"    # shared base delta of a bundle
    RTVQ_OFFSET = "rtvq_offset"  # per-task residual delta of a bundle


class TensorMap:
    """Ordered, immutable map of tensor names to float32 arrays."""

    def __init__(self, tensors):
        items = tensors.items() if hasattr(tensors, "items") else tensors
        self._tensors: dict[str, np.ndarray] = {}
        for name, arr in items:
            if not isinstance(name, str) or not name:
                raise TvqError(f"invalid tensor name {name!r}")
            if name in self._tensors:
                raise TvqError(f"duplicate tensor name {name!r}")
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            arr.flags.writeable = False
            self._tensors[name] = arr

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._tensors)

    def items(self):
        return self._tensors.items()

    def arrays(self):
        return self._tensors.values()

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self):
        return iter(self._tensors)

    @property
    def param_count(self) -> int:
        return sum(a.size for a in self._tensors.values())

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self._tensors.values())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self._tensors.items()}

    def digest(self) -> str:
        """SHA-256 over the raw little-endian payload bytes in map order."""
        h = hashlib.sha256()
        for arr in self._tensors.values():
            h.update(_le32(arr).tobytes())
        return h.hexdigest()

    def same_layout(self, other: "TensorMap") -> bool:
        return self.shapes() == other.shapes()

    def require_same_layout(self, other: "TensorMap") -> None:
        if self.names != other.names:
            raise MismatchError("tensor name sets differ")
        for name in self.names:
            if self[name].shape != other[name].shape:
                raise MismatchError(f"shape mismatch for tensor {name!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        if self.names != other.names:
            return False
        return all(
            self[n].shape == other[n].shape
            and self[n].tobytes() == other[n].tobytes()
            for n in self.names
        )

    def __repr__(self) -> str:
        return f"TensorMap({len(self)} tensors, {self.param_count} params)"


def _le32(arr: np.ndarray) -> np.ndarray:
    return arr.astype("<f4", copy=False)


@dataclass(frozen=True)
class QuantizedTensor:
    """One bit-packed tensor plus its quantization parameters."""

    shape: tuple[int, ...]
    bits: int
    scale: float
    zero_point: int
    codes: bytes
    constant: float = 0.0

    def __post_init__(self):
        if self.bits not in VALID_BITS:
            raise FormatError(f"bits must be one of {VALID_BITS}, got {self.bits}")
        if any(s < 0 for s in self.shape):
            raise FormatError(f"negative dimension in shape {self.shape}")
        expect = packed_size(self.size, self.bits)
        if len(self.codes) != expect:
            raise FormatError(
                f"packed payload is {len(self.codes)} bytes, expected {expect}"
            )
        if self.scale < 0:
            raise FormatError("scale must be non-negative")
        tail = (self.size * self.bits) % 8
        if tail and self.codes and self.codes[-1] >> tail:
            raise FormatError("trailing bits of packed payload must be zero")

    @property
    def size(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n

    @property
    def is_constant(self) -> bool:
        return self.scale == 0.0


@dataclass(frozen=True, eq=True)
class ArtifactMeta:
    """Provenance carried inside a QTV file."""

    task: str = ""
    pre_digest: str = ""
    params: dict = field(default_factory=dict)


class QuantizedArtifact:
    """A full quantized checkpoint delta: role, tensors, provenance."""

    def __init__(self, role: Role, tensors, meta: ArtifactMeta | None = None):
        self.role = Role(role)
        items = tensors.items() if hasattr(tensors, "items") else tensors
        self._tensors: dict[str, QuantizedTensor] = {}
        for name, qt in items:
            if not isinstance(name, str) or not name:
                raise TvqError(f"invalid tensor name {name!r}")
            if name in self._tensors:
                raise TvqError(f"duplicate tensor name {name!r}")
            self._tensors[name] = qt
        self.meta = meta or ArtifactMeta()

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._tensors)

    def items(self):
        return self._tensors.items()

    def __getitem__(self, name: str) -> QuantizedTensor:
        return self._tensors[name]

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def param_count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    @property
    def payload_bytes(self) -> int:
        return sum(len(t.codes) for t in self._tensors.values())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._tensors.items()}

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedArtifact):
            return NotImplemented
        return (
            self.role == other.role
            and self.meta == other.meta
            and self.names == other.names
            and all(self[n] == other[n] for n in self.names)
        )

    def __repr__(self) -> str:
        return f"QuantizedArtifact({self.role.value}, {len(self)} tensors)"


@dataclass(frozen=True)
class BundleManifest:
    """Links a base artifact with its per-task offsets."""

    tasks: tuple[str, ...]
    b_base: int
    b_offset: int
    pre_digest: str = ""

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)


class RTVQBundle:
    """One shared base artifact plus one offset artifact per task."""

    def __init__(self, base: QuantizedArtifact, offsets, manifest: BundleManifest):
        if base.role is not Role.RTVQ_BASE:
            raise TvqError(f"base artifact has role {base.role.value}, expected rtvq_base")
        items = offsets.items() if hasattr(offsets, "items") else offsets
        self.base = base
        self.offsets: dict[str, QuantizedArtifact] = dict(items)
        self.manifest = manifest
        if not self.offsets:
            raise TvqError("bundle needs at least one offset artifact")
        if set(self.offsets) != set(manifest.tasks) or len(self.offsets) != manifest.n_tasks:
            raise MismatchError("manifest task list does not match offset artifacts")
        base_shapes = base.shapes()
        for task, art in self.offsets.items():
            if art.role is not Role.RTVQ_OFFSET:
                raise TvqError(f"offset artifact for {task!r} has role {art.role.value}")
            if art.shapes() != base_shapes:
                raise MismatchError(f"offset artifact for {task!r} does not match base shapes")

    @property
    def tasks(self) -> tuple[str, ...]:
        return self.manifest.tasks

    def __eq__(self, other) -> bool:
        if not isinstance(other, RTVQBundle):
            return NotImplemented
        return (
            self.manifest == other.manifest
            and self.base == other.base
            and self.offsets == other.offsets
        )


# ---------------------------------------------------------------------------
# TMAP

def write_tmap(tmap: TensorMap, path) -> None:
    entries = []
    offset = 0
    for name, arr in tmap.items():
        offset = _align8(offset)
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes}
        )
        offset += arr.nbytes
    header = json.dumps(entries, ensure_ascii=False, separators=(",", ":"), sort_keys=True)
    header_bytes = header.encode("utf-8")
    if len(header_bytes) > _MAX_HEADER:
        raise FormatError("header exceeds 2^32 - 1 bytes")
    with open(path, "wb") as f:
        f.write(TMAP_MAGIC)
        f.write(bytes([TMAP_VERSION]))
        f.write(len(header_bytes).to_bytes(4, "little"))
        f.write(header_bytes)
        if entries:
            pos = 9 + len(header_bytes)
            base = _align8(pos)
            f.write(b"\x00" * (base - pos))
            cursor = 0
            for entry, arr in zip(entries, tmap.arrays()):
                f.write(b"\x00" * (entry["offset"] - cursor))
                f.write(_le32(arr).tobytes())
                cursor = entry["offset"] + entry["nbytes"]


def read_tmap(path) -> TensorMap:
    blob = Path(path).read_bytes()
    if len(blob) < 9 or blob[:4] != TMAP_MAGIC:
        raise FormatError(f"bad magic in {path}")
    if blob[4] != TMAP_VERSION:
        raise FormatError(f"unsupported TMAP version {blob[4]}")
    hlen = int.from_bytes(blob[5:9], "little")
    if len(blob) < 9 + hlen:
        raise FormatError(f"truncated header in {path}")
    try:
        entries = json.loads(blob[9 : 9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable header in {path}: {e}") from e
    if not isinstance(entries, list):
        raise FormatError(f"malformed header in {path}")
    base = _align8(9 + hlen)
    tensors = []
    seen = set()
    for entry in entries:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
            nbytes = int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"malformed header entry in {path}: {e}") from e
        if name in seen:
            raise FormatError(f"duplicate tensor name {name!r} in {path}")
        seen.add(name)
        count = 1
        for s in shape:
            if s < 0:
                raise FormatError(f"negative dimension for {name!r} in {path}")
            count *= s
        if nbytes != 4 * count:
            raise FormatError(f"shape/length mismatch for {name!r} in {path}")
        start = base + offset
        if start + nbytes > len(blob):
            raise FormatError(f"truncated payload for {name!r} in {path}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape)
        tensors.append((name, arr))
    return TensorMap(tensors)


# ---------------------------------------------------------------------------
# QTV

def write_qtv(artifact: QuantizedArtifact, path) -> None:
    tensor_entries = []
    offset = 0
    for name, qt in artifact.items():
        tensor_entries.append(
            {
                "name": name,
                "shape": list(qt.shape),
                "bits": qt.bits,
                "scale": qt.scale,
                "zero_point": qt.zero_point,
                "constant": qt.constant,
                "offset": offset,
                "length": len(qt.codes),
            }
        )
        offset += len(qt.codes)
    header = {
        "role": artifact.role.value,
        "meta": {
            "task": artifact.meta.task,
            "pre_digest": artifact.meta.pre_digest,
            "params": artifact.meta.params,
        },
        "tensors": tensor_entries,
    }
    header_bytes = json.dumps(
        header, ensure_ascii=False, separators=(",", ":"), sort_keys=True
    ).encode("utf-8")
    if len(header_bytes) > _MAX_HEADER:
        raise FormatError("header exceeds 2^32 - 1 bytes")
    with open(path, "wb") as f:
        f.write(QTV_MAGIC)
        f.write(len(header_bytes).to_bytes(4, "little"))
        f.write(header_bytes)
        for _, qt in artifact.items():
            f.write(qt.codes)


def read_qtv(path) -> QuantizedArtifact:
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != QTV_MAGIC:
        raise FormatError(f"bad magic in {path}")
    hlen = int.from_bytes(blob[4:8], "little")
    if len(blob) < 8 + hlen:
        raise FormatError(f"truncated header in {path}")
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
        role = Role(header["role"])
        meta = ArtifactMeta(
            task=str(header["meta"]["task"]),
            pre_digest=str(header["meta"]["pre_digest"]),
            params={str(k): int(v) for k, v in header["meta"]["params"].items()},
        )
        entries = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"unreadable header in {path}: {e}") from e
    base = 8 + hlen
    tensors = []
    for entry in entries:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            bits = int(entry["bits"])
            scale = float(entry["scale"])
            zero_point = int(entry["zero_point"])
            constant = float(entry["constant"])
            offset = int(entry["offset"])
            length = int(entry["length"])
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"malformed header entry in {path}: {e}") from e
        start = base + offset
        if start + length > len(blob):
            raise FormatError(f"truncated payload for {name!r} in {path}")
        qt = QuantizedTensor(
            shape=shape,
            bits=bits,
            scale=scale,
            zero_point=zero_point,
            constant=constant,
            codes=blob[start : start + length],
        )
        tensors.append((name, qt))
    return QuantizedArtifact(role=role, tensors=tensors, meta=meta)


# ---------------------------------------------------------------------------
# RTVQ bundle directory

_SAFE_TASK = re.compile(r"[^A-Za-z0-9._-]")


def _offset_filename(task: str) -> str:
    return f"offset_{_SAFE_TASK.sub('_', task)}.qtv"


def write_bundle(bundle: RTVQBundle, dirpath) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    filenames = [_offset_filename(t) for t in bundle.tasks]
    if len(set(filenames)) != len(filenames):
        raise TvqError("task names collide after filename sanitization")
    write_qtv(bundle.base, d / "base.qtv")
    for task, fname in zip(bundle.tasks, filenames):
        write_qtv(bundle.offsets[task], d / fname)
    manifest = {
        "tasks": list(bundle.manifest.tasks),
        "b_base": bundle.manifest.b_base,
        "b_offset": bundle.manifest.b_offset,
        "n_tasks": bundle.manifest.n_tasks,
        "pre_digest": bundle.manifest.pre_digest,
    }
    (d / "manifest.json").write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def read_bundle(dirpath, verify_pre: TensorMap | None = None) -> RTVQBundle:
    d = Path(dirpath)
    manifest_path = d / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"missing manifest in {dirpath}")
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
        manifest = BundleManifest(
            tasks=tuple(str(t) for t in raw["tasks"]),
            b_base=int(raw["b_base"]),
            b_offset=int(raw["b_offset"]),
            pre_digest=str(raw["pre_digest"]),
        )
        n_tasks = int(raw["n_tasks"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed manifest in {dirpath}: {e}") from e
    if n_tasks != manifest.n_tasks:
        raise FormatError(f"manifest n_tasks={n_tasks} but lists {manifest.n_tasks} tasks")
    base = read_qtv(d / "base.qtv")
    offsets = {t: read_qtv(d / _offset_filename(t)) for t in manifest.tasks}
    bundle = RTVQBundle(base=base, offsets=offsets, manifest=manifest)
    if verify_pre is not None and verify_pre.digest() != manifest.pre_digest:
        raise MismatchError("pre-checkpoint digest does not match the bundle manifest")
    return bundle
