"""Binary model files.

Layout (little-endian throughout)::

    magic            4 bytes   b"CNNG" (group) or b"CNNF" (single network)
    version          u16
    -- group files --
    num_networks     u32
    input_dim        u32
    num_classes      u32
    networks         num_networks x NETWORK
    kmeans           u32 k, u32 dim, f64 inertia, u64 seed, u32 iterations, f64[k*dim]
    tree             u32 num_ids, u32 max_depth, u32 min_leaf, u32 min_split,
                     u8 balance, u32 node_count, node_count x NODE (pre-order)
    -- single-network files --
    NETWORK
    -- both --
    metadata         u32 byte length, UTF-8 "key=value\\n" lines sorted by key
    crc32            u32 over every preceding byte

    NETWORK = u32 num_layers, then per layer:
              u32 input_dim, u32 output_dim, u8 activation (0 relu, 1 softmax),
              f64[output_dim*input_dim] weights (row-major), f64[output_dim] bias
    NODE    = u8 tag 0 (internal): u32 feature_index, f64 threshold
              u8 tag 1 (leaf):     u32 network_id, u32 n, f64[n] class_counts
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .cluster import KMeansModel
from .nn import Activation, FeedforwardNetwork, Layer
from .reflect import CnngModel
from .router import DecisionTree, Leaf, Split, TreeParams

GROUP_MAGIC = b"CNNG"
NETWORK_MAGIC = b"CNNF"
FORMAT_VERSION = 1

_ACTIVATION_CODES = {Activation.RELU: 0, Activation.SOFTMAX: 1}
_CODE_ACTIVATIONS = {v: k for k, v in _ACTIVATION_CODES.items()}


class ModelFileError(ValueError):
    """Base class for unreadable model files."""


class BadMagic(ModelFileError):
    pass


class VersionMismatch(ModelFileError):
    pass


class TruncatedFile(ModelFileError):
    pass


class ChecksumMismatch(ModelFileError):
    pass


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *values):
        self.parts.append(struct.pack("<" + fmt, *values))

    def floats(self, arr: np.ndarray):
        self.parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"unexpected end of data at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        values = struct.unpack(fmt, self._take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self._take(8 * count), dtype="<f8").astype(np.float64)


def _write_network(w: _Writer, net: FeedforwardNetwork):
    w.pack("I", len(net.layers))
    for layer in net.layers:
        w.pack("IIB", layer.input_dim, layer.output_dim, _ACTIVATION_CODES[layer.activation])
        w.floats(layer.weights)
        w.floats(layer.bias)


def _read_network(r: _Reader) -> FeedforwardNetwork:
    layers = []
    for _ in range(r.unpack("I")):
        n_in, n_out, code = r.unpack("IIB")
        if code not in _CODE_ACTIVATIONS:
            raise ModelFileError(f"unknown activation code {code}")
        weights = r.floats(n_in * n_out).reshape(n_out, n_in)
        layers.append(Layer(weights, r.floats(n_out), _CODE_ACTIVATIONS[code]))
    try:
        return FeedforwardNetwork(layers)
    except ValueError as exc:
        raise ModelFileError(f"invalid network layout: {exc}") from exc


def _write_tree(w: _Writer, tree: DecisionTree):
    p = tree.params
    w.pack("IIIIB", tree.num_network_ids, p.max_depth, p.min_samples_leaf,
           p.min_samples_split, int(p.balance_classes))
    nodes = [node for node, _ in tree.nodes()]
    w.pack("I", len(nodes))
    for node in nodes:
        if isinstance(node, Split):
            w.pack("BId", 0, node.feature_index, node.threshold)
        else:
            w.pack("BII", 1, node.network_id, len(node.class_counts))
            w.floats(node.class_counts)


def _read_tree(r: _Reader) -> DecisionTree:
    num_ids, depth, min_leaf, min_split, balance = r.unpack("IIIIB")
    params = TreeParams(depth, min_leaf, min_split, bool(balance))
    remaining = [r.unpack("I")]

    def node():
        if remaining[0] == 0:
            raise ModelFileError("tree node count exhausted before the tree was complete")
        remaining[0] -= 1
        tag = r.unpack("B")
        if tag == 0:
            feature, threshold = r.unpack("Id")
            left = node()
            return Split(feature, threshold, left, node())
        if tag == 1:
            net_id, n = r.unpack("II")
            if net_id >= num_ids:
                raise ModelFileError(f"leaf routes to network {net_id} of {num_ids}")
            return Leaf(net_id, r.floats(n))
        raise ModelFileError(f"unknown tree node tag {tag}")

    root = node()
    if remaining[0]:
        raise ModelFileError("tree node count does not match the serialized nodes")
    return DecisionTree(root, num_ids, params)


def _write_metadata(w: _Writer, metadata: dict[str, str]):
    lines = []
    for key in sorted(metadata):
        value = str(metadata[key])
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"metadata entry {key!r} cannot be encoded as key=value")
        lines.append(f"{key}={value}\n")
    blob = "".join(lines).encode("utf-8")
    w.pack("I", len(blob))
    w.parts.append(blob)


def _read_metadata(r: _Reader) -> dict[str, str]:
    blob = r._take(r.unpack("I")).decode("utf-8")
    out = {}
    for line in blob.splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out


def _seal(w: _Writer) -> bytes:
    body = w.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def _open(buf: bytes, magic: bytes) -> _Reader:
    if len(buf) < 6:
        raise TruncatedFile("file too short for a model header")
    if buf[:4] != magic:
        raise BadMagic(f"magic {buf[:4]!r}, expected {magic!r}")
    (version,) = struct.unpack("<H", buf[4:6])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, this build reads {FORMAT_VERSION}")
    if len(buf) < 10:
        raise TruncatedFile("file too short to hold a checksum")
    (stored,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != stored:
        raise ChecksumMismatch("CRC-32 does not match; file is corrupt or truncated")
    return _Reader(buf[:-4], 6)


def _finish(r: _Reader):
    if r.pos != len(r.buf):
        raise ModelFileError(f"{len(r.buf) - r.pos} unexpected trailing bytes")


def model_to_bytes(model: CnngModel) -> bytes:
    w = _Writer()
    w.parts.append(GROUP_MAGIC)
    w.pack("H", FORMAT_VERSION)
    w.pack("III", len(model.networks), model.input_dim, model.num_classes)
    for net in model.networks:
        _write_network(w, net)
    km = model.kmeans
    w.pack("IIdQI", km.k, km.dim, km.inertia, km.seed, km.iterations_run)
    w.floats(km.centroids)
    _write_tree(w, model.task_classifier)
    _write_metadata(w, model.metadata)
    return _seal(w)


def model_from_bytes(buf: bytes) -> CnngModel:
    r = _open(buf, GROUP_MAGIC)
    count, input_dim, num_classes = r.unpack("III")
    if count < 2:
        raise ModelFileError(f"a group needs at least 2 networks, header says {count}")
    nets = [_read_network(r) for _ in range(count)]
    for net in nets:
        if net.input_dim != input_dim or net.num_classes != num_classes:
            raise ModelFileError("network dimensions disagree with the header")
    k, dim, inertia, seed, iterations = r.unpack("IIdQI")
    km = KMeansModel(r.floats(k * dim).reshape(k, dim), inertia, seed, iterations)
    tree = _read_tree(r)
    metadata = _read_metadata(r)
    _finish(r)
    return CnngModel(nets[0], nets[1:], tree, km, metadata)


def network_to_bytes(net: FeedforwardNetwork, metadata: dict[str, str] | None = None) -> bytes:
    w = _Writer()
    w.parts.append(NETWORK_MAGIC)
    w.pack("H", FORMAT_VERSION)
    _write_network(w, net)
    _write_metadata(w, metadata or {})
    return _seal(w)


def network_from_bytes(buf: bytes) -> tuple[FeedforwardNetwork, dict[str, str]]:
    r = _open(buf, NETWORK_MAGIC)
    net = _read_network(r)
    metadata = _read_metadata(r)
    _finish(r)
    return net, metadata


def save_model(model: CnngModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> CnngModel:
    return model_from_bytes(Path(path).read_bytes())


def save_network(net: FeedforwardNetwork, path, metadata: dict[str, str] | None = None) -> None:
    Path(path).write_bytes(network_to_bytes(net, metadata))


def load_network(path) -> tuple[FeedforwardNetwork, dict[str, str]]:
    return network_from_bytes(Path(path).read_bytes())
