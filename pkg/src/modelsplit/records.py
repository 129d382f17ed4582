"""Line-delimited JSON result records, one file per experiment and seed."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

KINDS = ("curve", "estimate", "meta")


class RecordError(ValueError):
    pass


class DigestMismatch(RecordError):
    pass


def _clean(v):
    """JSON has no inf/nan; store them as strings and restore on load."""
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


_NONFINITE = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def _restore(v):
    if isinstance(v, str) and v in _NONFINITE:
        return _NONFINITE[v]
    if isinstance(v, dict):
        return {k: _restore(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_restore(x) for x in v]
    return v


@dataclass
class ResultRecord:
    kind: str
    experiment_id: str
    seed: Optional[int] = None
    procedure: Optional[str] = None
    alpha: Optional[float] = None
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RecordError(f"record kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def partition(self) -> Optional[str]:
        return self.payload.get("partition")

    def to_json(self) -> str:
        return json.dumps(_clean(asdict(self)), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ResultRecord":
        d = json.loads(line)
        unknown = set(d) - {"kind", "experiment_id", "seed", "procedure", "alpha", "payload"}
        if unknown:
            raise RecordError(f"unknown record fields {sorted(unknown)}")
        if isinstance(d.get("payload"), dict):
            d["payload"] = _restore(d["payload"])
        return cls(**d)


def curve_id(seed, partition, procedure) -> str:
    return f"{seed}/{partition or '-'}/{procedure}"


def record_file(out_dir, experiment_id: str, seed=None) -> Path:
    name = f"seed-{seed}.jsonl" if seed is not None else "estimates.jsonl"
    return Path(out_dir) / experiment_id / name


def persist_results(records: Iterable[ResultRecord], path) -> Path:
    """Append records to ``path`` (created with its parent directory when missing)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as f:
        for r in records:
            f.write(r.to_json() + "\n")
    return path


def read_records(path) -> list[ResultRecord]:
    out = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(ResultRecord.from_json(line))
            except (json.JSONDecodeError, TypeError, RecordError) as e:
                raise RecordError(f"{path}:{n}: malformed record ({e})") from None
    return out


def load_results(directory) -> list[ResultRecord]:
    """Every record under ``directory``, file by file in sorted order, line order preserved."""
    directory = Path(directory)
    if not directory.exists():
        raise RecordError(f"no such results directory: {directory}")
    files = sorted(directory.rglob("*.jsonl")) if directory.is_dir() else [directory]
    records = []
    for p in files:
        records.extend(read_records(p))
    if not records:
        raise RecordError(f"no result records under {directory}")
    return records


def meta_record(experiment_id: str, config_digest: str, seed=None, **extra) -> ResultRecord:
    return ResultRecord("meta", experiment_id, seed, payload={"config_digest": config_digest, **extra})


def check_resume(path, config_digest: str) -> list[ResultRecord]:
    """Records already in ``path``; refuses when they came from a different config."""
    path = Path(path)
    if not path.exists():
        return []
    existing = read_records(path)
    for r in existing:
        if r.kind == "meta" and r.payload.get("config_digest") != config_digest:
            raise DigestMismatch(
                f"{path} was written by config {r.payload.get('config_digest')}, "
                f"current config is {config_digest}; refusing to mix experiments")
    return existing
