"""Per-layer parameter-count tables for the built-in and configured models."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .nn import zoo
from .nn.layers import ModelSpec, count_parameters


@dataclass
class CountRow:
    layer: str
    label: str
    count: int
    printed: Optional[int] = None


@dataclass
class CountTable:
    model: str
    rows: list[CountRow]
    total: int
    printed_total: Optional[int] = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"model": self.model, "rows": [r.__dict__ for r in self.rows], "total": self.total,
                "printed_total": self.printed_total, "notes": self.notes}


def count_table(model: ModelSpec, name: str = "model", labels: Optional[dict] = None,
                printed: Optional[dict] = None) -> CountTable:
    labels = labels or {}
    printed = dict(printed or {})
    per_layer, total = count_parameters(model)
    rows, notes = [], []
    for layer in model.layers:
        if not layer.parametric:
            continue
        p = printed.get(layer.name)
        rows.append(CountRow(layer.name, labels.get(layer.name, layer.name), per_layer[layer.name], p))
        if p is not None and p != per_layer[layer.name]:
            d = per_layer[layer.name] - p
            notes.append(f"{labels.get(layer.name, layer.name)}: shape arithmetic gives {per_layer[layer.name]:,}; "
                         f"the published table prints {p:,} (±{abs(d):,})")
    pt = printed.get("total")
    if pt is not None and pt != total:
        notes.append(f"Total: {total:,} from the layers above; published total {pt:,} (±{abs(total - pt):,})")
    return CountTable(name, rows, total, pt, notes)


def builtin_table(name: str, width: float = 1.0) -> CountTable:
    if name not in zoo.BUILTIN:
        raise KeyError(f"unknown built-in model {name!r}; choose from {sorted(zoo.BUILTIN)}")
    build, labels = zoo.BUILTIN[name]
    if name == "alexnet_table4":
        model = build(width)
        printed = {1.0: zoo.ALEXNET_PRINTED, 1.5: zoo.ALEXNET_LARGE_PRINTED}.get(width, {})
    else:
        if width != 1.0:
            raise ValueError(f"{name} has no width variants")
        model, printed = build(), {}
    label = name if width == 1.0 else f"{name} x{width:g}"
    return count_table(model, label, labels, printed)


def format_count_table(t: CountTable) -> str:
    marks = {}
    lines = [f"{t.model}", f"{'layer':<14}{'parameters':>14}"]
    for r in t.rows:
        mark = ""
        if r.printed is not None and r.printed != r.count:
            marks[r.layer] = len(marks) + 1
            mark = "*" * marks[r.layer]
        lines.append(f"{r.label:<14}{r.count:>14,}{mark}")
    lines.append(f"{'Total':<14}{t.total:>14,}")
    if t.printed_total is not None and t.printed_total != t.total:
        lines.append(f"{'Total (pub.)':<14}{t.printed_total:>14,}")
    for i, n in enumerate(t.notes):
        prefix = "*" * (i + 1) if i < len(marks) else "-"
        lines.append(f"{prefix} {n}")
    return "\n".join(lines)
