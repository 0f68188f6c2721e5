"""Architecture intermediate representation and subgraph grouping.

A network is a linear stack of convolution layers. The accelerator
implements one *subgraph template*: a fixed pipeline of ``M`` convolution
kernels, each of which can be bypassed by a skip signal. Every accelerator
invocation runs one :class:`SubgraphInstance`, so a network is executed as
a sequence of instances produced by :func:`group_layers`.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .exceptions import GroupingError

DEFAULT_CHANNEL_SET = (16, 32, 64, 128, 256, 512, 1024)
DEFAULT_RESOLUTION_SET = (96, 128, 160, 192, 224, 256)
MAX_TEMPLATE_KERNELS = 8
ALLOWED_STRIDES = (1, 2)


class KernelKind(str, enum.Enum):
    FULL = "full"
    DEPTHWISE = "depthwise"


@dataclass(frozen=True, order=True)
class KernelSpec:
    kind: KernelKind
    k: int

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"kernel size must be a positive integer, got {self.k}")

    @property
    def is_depthwise(self) -> bool:
        return self.kind is KernelKind.DEPTHWISE

    def __str__(self):
        tag = "dw" if self.is_depthwise else "conv"
        return f"{self.k}x{self.k}{tag}"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "k": self.k}


def full(k: int) -> KernelSpec:
    return KernelSpec(KernelKind.FULL, k)


def depthwise(k: int) -> KernelSpec:
    return KernelSpec(KernelKind.DEPTHWISE, k)


@dataclass(frozen=True)
class SubgraphTemplate:
    kernels: tuple[KernelSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if not 1 <= len(self.kernels) <= MAX_TEMPLATE_KERNELS:
            raise ValueError(
                f"template must hold 1..{MAX_TEMPLATE_KERNELS} kernels, got {len(self.kernels)}"
            )

    @property
    def M(self) -> int:
        return len(self.kernels)

    def __len__(self):
        return len(self.kernels)

    def __iter__(self):
        return iter(self.kernels)

    def __getitem__(self, j):
        return self.kernels[j]


@dataclass(frozen=True)
class Layer:
    kernel: KernelSpec
    in_h: int
    in_w: int
    in_ch: int
    out_ch: int
    stride: int = 1
    skipped: bool = False

    @property
    def out_h(self) -> int:
        return -(-self.in_h // self.stride)

    @property
    def out_w(self) -> int:
        return -(-self.in_w // self.stride)

    @property
    def n_weights(self) -> int:
        """Weights held by the layer (zero for a skipped identity layer)."""
        if self.skipped:
            return 0
        k2 = self.kernel.k * self.kernel.k
        if self.kernel.is_depthwise:
            return k2 * self.in_ch
        return k2 * self.in_ch * self.out_ch


@dataclass(frozen=True)
class LayerSpec:
    """A layer without spatial dimensions; those are derived from the resolution."""

    kernel: KernelSpec
    in_ch: int
    out_ch: int
    stride: int = 1
    skipped: bool = False

    def to_dict(self) -> dict:
        d = self.kernel.to_dict()
        d.update(stride=self.stride, in_ch=self.in_ch, out_ch=self.out_ch, skipped=self.skipped)
        return d


@dataclass(frozen=True)
class Architecture:
    resolution: int
    layers: tuple[Layer, ...]
    template: SubgraphTemplate

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @classmethod
    def build(cls, resolution: int, template, layers: Iterable) -> "Architecture":
        """Create an architecture, deriving each layer's input height and width.

        ``layers`` holds :class:`LayerSpec` (or :class:`Layer`, whose spatial
        fields are ignored). Spatial size shrinks by ``ceil(dim / stride)``.
        """
        if not isinstance(template, SubgraphTemplate):
            template = SubgraphTemplate(tuple(template))
        h = w = int(resolution)
        built = []
        for spec in layers:
            layer = Layer(spec.kernel, h, w, spec.in_ch, spec.out_ch, spec.stride, spec.skipped)
            built.append(layer)
            h, w = layer.out_h, layer.out_w
        return cls(int(resolution), tuple(built), template)

    @property
    def N(self) -> int:
        return len(self.layers)

    def specs(self) -> list[LayerSpec]:
        return [LayerSpec(l.kernel, l.in_ch, l.out_ch, l.stride, l.skipped) for l in self.layers]

    def with_layers(self, specs: Iterable[LayerSpec]) -> "Architecture":
        return Architecture.build(self.resolution, self.template, specs)

    def with_resolution(self, resolution: int) -> "Architecture":
        return Architecture.build(resolution, self.template, self.specs())

    def final_size(self) -> tuple[int, int]:
        if not self.layers:
            return self.resolution, self.resolution
        last = self.layers[-1]
        return last.out_h, last.out_w

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "template": [k.to_dict() for k in self.template],
            "layers": [s.to_dict() for s in self.specs()],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc: dict) -> "Architecture":
        template = SubgraphTemplate(tuple(KernelSpec(t["kind"], int(t["k"])) for t in doc["template"]))
        specs = [
            LayerSpec(
                KernelSpec(d["kind"], int(d["k"])),
                int(d["in_ch"]),
                int(d["out_ch"]),
                int(d.get("stride", 1)),
                bool(d.get("skipped", False)),
            )
            for d in doc["layers"]
        ]
        return cls.build(int(doc["resolution"]), template, specs)

    @classmethod
    def from_json(cls, text: str) -> "Architecture":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class QuantScheme:
    """Per-kernel ``(activation bits, weight bits)`` plus partial-sum and scale widths."""

    per_kernel: tuple[tuple[int, int], ...]
    q_p: int = 24
    q_s: int = 16

    def __post_init__(self):
        pk = tuple((int(a), int(w)) for a, w in self.per_kernel)
        object.__setattr__(self, "per_kernel", pk)
        for q_a, q_w in pk:
            if not (2 <= q_a <= 8 and 2 <= q_w <= 8):
                raise ValueError(f"bitwidths must lie in [2, 8], got ({q_a}, {q_w})")
        if not 8 <= self.q_p <= 32:
            raise ValueError(f"partial-sum width must lie in [8, 32], got {self.q_p}")
        if not 16 <= self.q_s <= 24:
            raise ValueError(f"scale width must lie in [16, 24], got {self.q_s}")

    @classmethod
    def uniform(cls, M: int, q_a: int = 8, q_w: int = 8, **kw) -> "QuantScheme":
        return cls(tuple((q_a, q_w) for _ in range(M)), **kw)

    @classmethod
    def parse(cls, text: str, **kw) -> "QuantScheme":
        """Parse the ``"qa,qw;qa,qw;..."`` flag grammar."""
        pairs = []
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            a, w = chunk.split(",")
            pairs.append((int(a), int(w)))
        return cls(tuple(pairs), **kw)

    def __str__(self):
        return ";".join(f"{a},{w}" for a, w in self.per_kernel)

    @property
    def M(self) -> int:
        return len(self.per_kernel)

    @property
    def total_bits(self) -> int:
        return sum(a + w for a, w in self.per_kernel)

    def to_dict(self) -> dict:
        return {"per_kernel": [list(p) for p in self.per_kernel], "q_p": self.q_p, "q_s": self.q_s}


@dataclass(frozen=True)
class SubgraphInstance:
    """One accelerator invocation.

    ``slots[j]`` is the index of the layer run by template slot ``j``, or
    ``None`` when no layer was mapped there. ``skip_mask[j]`` is the hardware
    skip signal: set for empty slots and for slots holding a skipped layer.
    """

    slots: tuple[int | None, ...]
    skip_mask: tuple[bool, ...]

    def layer_indices(self) -> list[int]:
        return [i for i in self.slots if i is not None]

    def active(self) -> list[tuple[int, int]]:
        """``(slot, layer_index)`` pairs whose skip signal is clear."""
        return [(j, i) for j, (i, s) in enumerate(zip(self.slots, self.skip_mask)) if not s]


def group_layers(arch: Architecture) -> list[SubgraphInstance]:
    """Map the layer sequence onto template invocations.

    Greedy left-to-right slot matching: each instance walks slots ``1..M`` and
    consumes the next pending layer when its kernel equals the slot's kernel,
    otherwise the slot is skipped.
    """
    template = arch.template.kernels
    layers = arch.layers
    instances = []
    p = 0
    while p < len(layers):
        slots, mask = [], []
        start = p
        for kernel in template:
            if p < len(layers) and layers[p].kernel == kernel:
                slots.append(p)
                mask.append(layers[p].skipped)
                p += 1
            else:
                slots.append(None)
                mask.append(True)
        if p == start:
            raise GroupingError(
                f"layer {p} ({layers[p].kernel}) matches no slot of template "
                f"[{', '.join(str(k) for k in template)}]"
            )
        instances.append(SubgraphInstance(tuple(slots), tuple(mask)))
    return instances


def slot_of_layers(arch: Architecture, instances=None) -> list[int]:
    """Template slot index of every layer."""
    if instances is None:
        instances = group_layers(arch)
    out = [0] * arch.N
    for inst in instances:
        for j, i in enumerate(inst.slots):
            if i is not None:
                out[i] = j
    return out


@dataclass(frozen=True)
class Violation:
    index: int | None
    message: str

    def to_dict(self) -> dict:
        return {"layer": self.index, "message": self.message}

    def __str__(self):
        where = "architecture" if self.index is None else f"layer {self.index}"
        return f"{where}: {self.message}"


def validate(
    arch: Architecture,
    channel_set: Sequence[int] | None = DEFAULT_CHANNEL_SET,
    resolution_set: Sequence[int] | None = DEFAULT_RESOLUTION_SET,
) -> list[Violation]:
    """Return every invariant violation; an empty list means the architecture is valid.

    The first layer's input channel count is the image depth and is exempt
    from channel-set membership. ``None`` disables a membership check.
    """
    out: list[Violation] = []
    channels = set(channel_set) if channel_set is not None else None
    if resolution_set is not None and arch.resolution not in set(resolution_set):
        out.append(Violation(None, f"resolution {arch.resolution} not in {sorted(resolution_set)}"))
    h = w = arch.resolution
    prev_out = None
    for i, layer in enumerate(arch.layers):
        k = layer.kernel
        if k.k % 2 == 0:
            out.append(Violation(i, f"kernel size {k.k} must be odd"))
        if min(layer.in_ch, layer.out_ch) < 1:
            out.append(Violation(i, "channel counts must be positive"))
        if layer.stride not in ALLOWED_STRIDES:
            out.append(Violation(i, f"stride {layer.stride} not in {list(ALLOWED_STRIDES)}"))
        if (layer.in_h, layer.in_w) != (h, w):
            out.append(
                Violation(i, f"input size {layer.in_h}x{layer.in_w} does not follow strides (expected {h}x{w})")
            )
        if prev_out is not None and layer.in_ch != prev_out:
            out.append(Violation(i, f"in_ch {layer.in_ch} does not chain from previous out_ch {prev_out}"))
        if channels is not None and i > 0 and layer.in_ch not in channels:
            out.append(Violation(i, f"in_ch {layer.in_ch} not in channel set {sorted(channels)}"))
        if channels is not None and layer.out_ch not in channels:
            out.append(Violation(i, f"out_ch {layer.out_ch} not in channel set {sorted(channels)}"))
        if k.is_depthwise and layer.out_ch != layer.in_ch:
            out.append(Violation(i, "depthwise layer must keep out_ch == in_ch"))
        if layer.skipped and (layer.out_ch != layer.in_ch or layer.stride != 1):
            out.append(Violation(i, "skipped layer must be the identity (out_ch == in_ch, stride 1)"))
        if k not in arch.template.kernels:
            out.append(Violation(i, f"kernel {k} is not part of the subgraph template"))
        prev_out = layer.out_ch
        h, w = -(-h // max(layer.stride, 1)), -(-w // max(layer.stride, 1))
    if not any(v.message.startswith("kernel ") and "template" in v.message for v in out):
        try:
            group_layers(arch)
        except GroupingError as exc:
            out.append(Violation(None, str(exc)))
    return out


def search_space_size(num_layers: int, choices, channel_set_size: int = 1) -> float:
    """log10 of the number of designs in a layer-wise search space.

    ``choices`` is either a :class:`SubgraphTemplate` (its distinct kernel
    types are the per-layer choices) or a plain per-layer choice count.
    """
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    if isinstance(choices, SubgraphTemplate):
        n_choices = len(set(choices.kernels))
    else:
        n_choices = int(choices)
    return num_layers * math.log10(n_choices * channel_set_size)


def instance_template(arch: Architecture, in_ch: int) -> list[LayerSpec]:
    """Layer specs of one full template instantiation keeping the channel count."""
    return [LayerSpec(k, in_ch, in_ch, 1, False) for k in arch.template.kernels]


def with_layer(specs: list[LayerSpec], i: int, **changes) -> list[LayerSpec]:
    specs = list(specs)
    specs[i] = replace(specs[i], **changes)
    return specs
