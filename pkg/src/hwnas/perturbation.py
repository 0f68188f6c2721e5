"""Weight quantizer and Hessian-weighted quantization perturbation.

A layer's perturbation is its mean Hessian trace times the squared L2
distance between its weights and their quantized version. Traces are
supplied by the user (computed offline); this module never estimates them.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .arch import Architecture, QuantScheme, group_layers, slot_of_layers
from .exceptions import BadProfile


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_channel(weights, bits: int):
    """Symmetric max-abs linear quantization of one channel.

    Returns ``(dequantized, scale)``; an all-zero channel gives zeros and
    scale 0.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("weights must be non-empty")
    if not 2 <= bits <= 8:
        raise ValueError(f"bits must lie in [2, 8], got {bits}")
    qmax = 2 ** (bits - 1) - 1
    scale = float(np.max(np.abs(w))) / qmax
    if scale == 0.0:
        return np.zeros_like(w), 0.0
    q = np.clip(_round_half_away(w / scale), -qmax, qmax)
    return q * scale, scale


def quantize_weights(weights, bits: int):
    """Channel-wise quantization; axis 0 indexes output channels.

    Returns ``(dequantized, scales)`` with ``scales`` of shape ``(C,)``.
    """
    w = np.asarray(weights, dtype=np.float64)
    flat = w.reshape(w.shape[0], -1) if w.ndim > 1 else w.reshape(1, -1)
    qmax = 2 ** (bits - 1) - 1
    scales = np.max(np.abs(flat), axis=1) / qmax
    safe = np.where(scales > 0, scales, 1.0)
    q = np.clip(_round_half_away(flat / safe[:, None]), -qmax, qmax)
    deq = np.where(scales[:, None] > 0, q * scales[:, None], 0.0)
    return deq.reshape(w.shape), scales


def quantization_error(weights, bits: int) -> float:
    """Squared L2 norm of the channel-wise quantization error."""
    w = np.asarray(weights, dtype=np.float64)
    deq, _ = quantize_weights(w, bits)
    d = w - deq
    return float(np.sum(d * d))


@dataclass(frozen=True)
class LayerSensitivity:
    trace: float
    n_params: int
    weights: np.ndarray | None = field(default=None, compare=False, repr=False)
    range: float | None = None

    def __post_init__(self):
        if self.trace < 0:
            raise ValueError("Hessian trace must be non-negative")
        if self.n_params < 1:
            raise ValueError("n_params must be >= 1")


@dataclass(frozen=True)
class SensitivityProfile:
    per_layer: tuple[LayerSensitivity, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_layer", tuple(self.per_layer))

    def __len__(self):
        return len(self.per_layer)

    def __getitem__(self, i):
        return self.per_layer[i]

    def adapt(self, arch: Architecture) -> "SensitivityProfile":
        """Profile matched to ``arch``'s layers.

        Architectures produced by search differ from the profiled network in
        layer count and channel widths. Layer ``i`` reuses entry ``i`` (or,
        past the end, the last entry at the same template slot), and takes its
        parameter count from the actual layer. A stored tensor whose size no
        longer matches is replaced by the analytic model using its max |w|.
        """
        if not self.per_layer:
            raise BadProfile("empty sensitivity profile")
        M = arch.template.M
        n = len(self.per_layer)
        out = []
        for i, layer in enumerate(arch.layers):
            src = i
            while src >= n:
                src -= M
            if src < 0:
                src = n - 1
            e = self.per_layer[src]
            n_params = max(layer.n_weights, 1) if not layer.skipped else max(e.n_params, 1)
            if e.weights is not None and e.weights.size == n_params:
                out.append(e)
                continue
            r = e.range
            if r is None and e.weights is not None:
                r = float(np.max(np.abs(e.weights)))
            out.append(LayerSensitivity(e.trace, n_params, None, r))
        return SensitivityProfile(tuple(out))


def layer_perturbation(layer_index: int, bits: int, profile: SensitivityProfile) -> float:
    """Trace-weighted squared quantization error of one layer.

    Uses the stored weight tensor when present; otherwise the uniform-noise
    expectation ``n * s^2 / 12`` with step ``s = 2 r / (2^bits - 1)``.
    """
    e = profile[layer_index]
    if e.weights is not None:
        return e.trace * quantization_error(e.weights, bits)
    if e.range is not None:
        step = 2.0 * e.range / (2**bits - 1)
        return e.trace * e.n_params * step * step / 12.0
    raise BadProfile(f"layer {layer_index}: profile entry has neither a tensor nor a range")


@dataclass(frozen=True)
class PerturbationReport:
    per_layer: tuple[float, ...]
    total: float

    def to_dict(self) -> dict:
        return {"per_layer": list(self.per_layer), "total": self.total}


def total_perturbation(arch: Architecture, quant: QuantScheme, profile: SensitivityProfile) -> PerturbationReport:
    """Sum of layer perturbations; each layer uses its template slot's weight bits."""
    if len(profile) != arch.N:
        raise BadProfile(f"profile has {len(profile)} entries, architecture has {arch.N} layers")
    slots = slot_of_layers(arch, group_layers(arch))
    per_layer = []
    for i, layer in enumerate(arch.layers):
        if layer.skipped:
            per_layer.append(0.0)
            continue
        per_layer.append(layer_perturbation(i, quant.per_kernel[slots[i]][1], profile))
    return PerturbationReport(tuple(per_layer), float(sum(per_layer)))


def estimate_accuracy_drop(pretrained_acc: float, lam: float, pert: float) -> float:
    """Accuracy after quantization, ``pretrained_acc - lam * pert``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return pretrained_acc - lam * pert


# --- file formats ---------------------------------------------------------

def write_tensor(path, array) -> None:
    """Little-endian ``int32 rank, int32 dims..., float32 data`` (C order, channel-major)."""
    a = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<i", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}i", *a.shape))
        fh.write(a.tobytes())


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (rank,) = struct.unpack_from("<i", data, 0)
    dims = struct.unpack_from(f"<{rank}i", data, 4)
    offset = 4 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    if offset + 4 * count != len(data):
        raise ValueError(f"{path}: size does not match header dims {dims}")
    return arr.reshape(dims).astype(np.float64)


def load_profile(path) -> SensitivityProfile:
    """Read a sensitivity CSV.

    Rows are ``layer,trace,n_params,range`` (analytic) or
    ``layer,trace,tensor_path`` (tensor paths relative to the CSV).
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = sorted(csv.DictReader(fh), key=lambda r: int(r["layer"]))
    entries = []
    for expect, row in enumerate(rows):
        if int(row["layer"]) != expect:
            raise BadProfile(f"profile layers must be numbered 0..N-1; missing {expect}")
        trace = float(row["trace"])
        tpath = (row.get("tensor_path") or "").strip()
        if tpath:
            w = read_tensor(path.parent / tpath)
            entries.append(LayerSensitivity(trace, int(w.size), w, None))
        elif (row.get("range") or "").strip():
            entries.append(LayerSensitivity(trace, int(row["n_params"]), None, float(row["range"])))
        else:
            raise BadProfile(f"layer {expect}: need either range or tensor_path")
    return SensitivityProfile(tuple(entries))


def save_profile(path, profile: SensitivityProfile) -> None:
    """Write an analytic (range-based) profile CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "trace", "n_params", "range"])
        for i, e in enumerate(profile.per_layer):
            r = e.range if e.range is not None else float(np.max(np.abs(e.weights)))
            w.writerow([i, repr(float(e.trace)), e.n_params, repr(float(r))])


def synthetic_profile(arch: Architecture, seed: int = 0, weight_range: float = 0.5) -> SensitivityProfile:
    """Range-based profile with log-uniform traces, for demos and tests."""
    rng = np.random.default_rng(seed)
    entries = []
    for layer in arch.layers:
        trace = float(10 ** rng.uniform(-3, -1))
        entries.append(LayerSensitivity(trace, max(layer.n_weights, 1), None, weight_range))
    return SensitivityProfile(tuple(entries))


def profile_from_tensors(traces: Sequence[float], tensors: Sequence[np.ndarray]) -> SensitivityProfile:
    return SensitivityProfile(
        tuple(LayerSensitivity(float(t), int(np.size(w)), np.asarray(w, dtype=np.float64)) for t, w in zip(traces, tensors))
    )

