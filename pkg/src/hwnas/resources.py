"""FPGA resource model: LUTs, DSP slices and 18-Kb BRAM blocks per kernel."""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from pathlib import Path

from .arch import KernelSpec
from .exceptions import InvalidAllocation

BRAM_BITS = 18432
BITWIDTHS = range(2, 9)


class MapTarget(str, enum.Enum):
    DSP = "DSP"
    LUT = "LUT"


@dataclass(frozen=True)
class LutTable:
    """LUTs per multiplier indexed by ``(q_w, q_a)``."""

    entries: dict = field(hash=False, compare=True)

    def __post_init__(self):
        missing = [(w, a) for w in BITWIDTHS for a in BITWIDTHS if (w, a) not in self.entries]
        if missing:
            raise ValueError(f"LUT table missing entries for {missing[:5]}...")
        for (w, a), v in self.entries.items():
            if v <= 0:
                raise ValueError(f"LUT table entry ({w}, {a}) must be positive")
        for w in BITWIDTHS:
            for a in BITWIDTHS:
                v = self.entries[(w, a)]
                if w > 2 and self.entries[(w - 1, a)] > v or a > 2 and self.entries[(w, a - 1)] > v:
                    raise ValueError(f"LUT table must be non-decreasing in both bitwidths at ({w}, {a})")

    def __call__(self, q_w: int, q_a: int) -> int:
        return self.entries[(q_w, q_a)]

    @classmethod
    def default(cls) -> "LutTable":
        # placeholder: product of bitwidths, monotone like synthesized multipliers
        return cls({(w, a): w * a for w in BITWIDTHS for a in BITWIDTHS})

    @classmethod
    def from_csv(cls, source) -> "LutTable":
        """Read a ``qw,qa,luts`` CSV from a path or an open text stream."""
        if isinstance(source, (str, Path)):
            with open(source, newline="") as fh:
                return cls.from_csv(fh)
        rows = csv.DictReader(source)
        return cls({(int(r["qw"]), int(r["qa"])): int(r["luts"]) for r in rows})

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("qw,qa,luts\n")
        for w in BITWIDTHS:
            for a in BITWIDTHS:
                buf.write(f"{w},{a},{self.entries[(w, a)]}\n")
        return buf.getvalue()


@dataclass(frozen=True, order=True)
class KernelAllocation:
    pi: int
    po: int
    map_to: MapTarget = MapTarget.DSP
    pf: int = 1

    def __post_init__(self):
        object.__setattr__(self, "map_to", MapTarget(self.map_to))
        if self.pi < 1 or self.po < 1 or self.pf < 1:
            raise ValueError("parallelism and partition factors must be >= 1")

    def to_dict(self) -> dict:
        return {"pi": self.pi, "po": self.po, "map_to": self.map_to.value, "pf": self.pf}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelAllocation":
        return cls(int(d["pi"]), int(d["po"]), MapTarget(d.get("map_to", "DSP")), int(d.get("pf", 1)))

    def __str__(self):
        return f"{self.pi},{self.po},{self.map_to.value},{self.pf}"

    @classmethod
    def parse(cls, text: str) -> "KernelAllocation":
        """Inverse of ``str()``: ``"pi,po,MAP[,pf]"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) not in (3, 4):
            raise ValueError(f"bad allocation {text!r}; expected pi,po,MAP[,pf]")
        pf = int(parts[3]) if len(parts) == 4 else 1
        return cls(int(parts[0]), int(parts[1]), MapTarget(parts[2].upper()), pf)


def format_allocations(allocs) -> str:
    return ";".join(str(a) for a in allocs)


def parse_allocations(text: str) -> tuple[KernelAllocation, ...]:
    return tuple(KernelAllocation.parse(t) for t in text.split(";") if t.strip())


@dataclass(frozen=True)
class ResourceReport:
    dsp: int = 0
    luts: int = 0
    bram: int = 0

    def __add__(self, other: "ResourceReport") -> "ResourceReport":
        return ResourceReport(self.dsp + other.dsp, self.luts + other.luts, self.bram + other.bram)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.dsp, self.luts, self.bram)

    def to_dict(self) -> dict:
        return {"dsp": self.dsp, "luts": self.luts, "bram": self.bram}

    @classmethod
    def from_dict(cls, d: dict) -> "ResourceReport":
        return cls(int(d["dsp"]), int(d["luts"]), int(d["bram"]))


@dataclass(frozen=True)
class HardwareBudget:
    t_dsp: int
    t_luts: int
    t_bram: int
    beta: float = 0.5
    bw: int = 64
    lut_table: LutTable = field(default_factory=LutTable.default)
    clock_mhz: float = 200.0

    def __post_init__(self):
        if min(self.t_dsp, self.t_luts, self.t_bram) < 0:
            raise ValueError("resource totals must be non-negative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.bw <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def lut_limit(self) -> float:
        return self.t_luts * self.beta

    def fits(self, res: ResourceReport) -> bool:
        return res.dsp <= self.t_dsp and res.luts <= self.lut_limit and res.bram <= self.t_bram

    def violations(self, res: ResourceReport) -> list[str]:
        out = []
        if res.dsp > self.t_dsp:
            out.append("dsp")
        if res.luts > self.lut_limit:
            out.append("luts")
        if res.bram > self.t_bram:
            out.append("bram")
        return out

    def to_dict(self) -> dict:
        return {
            "t_dsp": self.t_dsp,
            "t_luts": self.t_luts,
            "t_bram": self.t_bram,
            "beta": self.beta,
            "bw_bits_per_cycle": self.bw,
            "clock_mhz": self.clock_mhz,
        }


ZU3EG = dict(t_dsp=360, t_luts=70560, t_bram=432, beta=0.5, bw=64)


def adder_luts(q_p: int) -> int:
    """LUTs of a ``q_p``-bit partial-sum accumulator."""
    return q_p + 7


def weight_buffer_brams(n_w: int, q_w: int, pf: int) -> int:
    """18-Kb blocks for ``n_w`` weights of ``q_w`` bits split into ``pf`` partitions."""
    if n_w <= 0:
        return 0
    # integer form of ceil(n_w * q_w / pf / BRAM_BITS)
    return -(-(n_w * q_w) // (pf * BRAM_BITS)) * pf


def line_buffer_brams(wc_max: int, q_a: int, k: int) -> int:
    """Blocks for ``k`` line-buffer rows of ``wc_max`` activations; 1x1 kernels need none."""
    if k <= 1 or wc_max <= 0:
        return 0
    return -(-(wc_max * q_a) // BRAM_BITS) * k


def mac_count(spec: KernelSpec, alloc: KernelAllocation) -> int:
    k2 = spec.k * spec.k
    if spec.is_depthwise:
        return k2 * alloc.po
    return k2 * alloc.pi * alloc.po


def check_allocation(spec: KernelSpec, alloc: KernelAllocation) -> None:
    if spec.is_depthwise and alloc.pi != 1:
        raise InvalidAllocation(f"depthwise kernels use po only; got pi={alloc.pi}")


def kernel_resources(
    spec: KernelSpec,
    alloc: KernelAllocation,
    quant: tuple[int, int, int, int],
    n_w: int,
    wc_max: int,
    oc_max: int,
    table: LutTable,
    include_quant_unit: bool = True,
) -> ResourceReport:
    """Resources of one kernel: MAC engine, buffers and (optionally) its quantization unit.

    ``quant`` is ``(q_a, q_w, q_p, q_s)``. Full convolutions mapped to DSPs
    pack two MACs per slice; depthwise kernels use one slice per MAC. The
    quantization unit costs ``po`` DSPs and an unpartitioned scale buffer of
    ``oc_max`` entries (scales are read once per output-channel tile).
    """
    check_allocation(spec, alloc)
    q_a, q_w, q_p, q_s = quant
    macs = mac_count(spec, alloc)
    dsp = luts = 0
    if alloc.map_to is MapTarget.DSP:
        dsp = macs if spec.is_depthwise else -(-macs // 2)
    else:
        luts = macs * (table(q_w, q_a) + adder_luts(q_p))
    bram = weight_buffer_brams(n_w, q_w, alloc.pf)
    if spec.k > 1:
        bram += line_buffer_brams(wc_max, q_a, spec.k)
    if include_quant_unit:
        dsp += alloc.po
        bram += weight_buffer_brams(oc_max, q_s, 1)
    return ResourceReport(dsp, luts, bram)


def _read_toml(path: Path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_budget(source="zu3eg") -> HardwareBudget:
    """Load a device budget from a TOML file, or the built-in name ``"zu3eg"``.

    Keys: ``t_dsp``, ``t_luts``, ``t_bram``, ``beta``, ``bw_bits_per_cycle``,
    ``lut_table`` (CSV path, relative to the file) and ``clock_mhz``.
    """
    if isinstance(source, str) and source.lower() == "zu3eg":
        return HardwareBudget(**ZU3EG)
    path = Path(source)
    doc = _read_toml(path)
    table = LutTable.default()
    if doc.get("lut_table"):
        table = LutTable.from_csv(path.parent / doc["lut_table"])
    return HardwareBudget(
        t_dsp=int(doc["t_dsp"]),
        t_luts=int(doc["t_luts"]),
        t_bram=int(doc["t_bram"]),
        beta=float(doc.get("beta", 0.5)),
        bw=int(doc.get("bw_bits_per_cycle", 64)),
        lut_table=table,
        clock_mhz=float(doc.get("clock_mhz", 200.0)),
    )


def network_buffer_sizes(arch, instances=None):
    """Per-slot ``(n_w, oc_max)`` and the network-wide ``(W x C)`` maximum.

    ``n_w`` is the largest weight count among layers mapped to the slot;
    skipped layers hold no weights and are ignored.
    """
    from .arch import group_layers

    if instances is None:
        instances = group_layers(arch)
    M = arch.template.M
    n_w = [0] * M
    oc_max = [0] * M
    wc_max = 0
    for inst in instances:
        for j, i in inst.active():
            layer = arch.layers[i]
            n_w[j] = max(n_w[j], layer.n_weights)
            oc_max[j] = max(oc_max[j], layer.out_ch)
            wc_max = max(wc_max, layer.in_w * layer.in_ch)
    return n_w, oc_max, wc_max


def default_pf(spec: KernelSpec, pi: int, po: int) -> int:
    return po if spec.is_depthwise else pi


def network_resources(arch, quant, allocs, budget: HardwareBudget, include_quant_unit=True, instances=None):
    """Sum of :func:`kernel_resources` over the template slots."""
    n_w, oc_max, wc_max = network_buffer_sizes(arch, instances)
    total = ResourceReport()
    for j, (spec, alloc) in enumerate(zip(arch.template.kernels, allocs)):
        q_a, q_w = quant.per_kernel[j]
        total = total + kernel_resources(
            spec, alloc, (q_a, q_w, quant.q_p, quant.q_s), n_w[j], wc_max, oc_max[j],
            budget.lut_table, include_quant_unit,
        )
    return total

