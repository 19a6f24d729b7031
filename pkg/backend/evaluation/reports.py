"""
CSV / JSON report writers with a fixed field order per record kind
"""
import csv
import io
import json
from pathlib import Path

from evaluation.harness import AblationRecord, DominanceRecord, TransferCell, UniversalityRecord
from utils.errors import DataError, InvalidArgumentError


FIELDS = {
    "transfer": ("surrogate", "victim", "attack", "checkpoint", "tasr", "n_images", "seed"),
    "universality": ("perturbation_id", "target", "count"),
    "dominance": ("tap", "mean_cs_benign", "mean_cs_adversarial", "n_images"),
    "ablation": ("label", "attack", "s_l", "s_int", "tap", "lambda", "mean_tasr", "n_images"),
}

_KINDS = {
    TransferCell: "transfer",
    UniversalityRecord: "universality",
    DominanceRecord: "dominance",
    AblationRecord: "ablation",
}


def record_kind(record):
    try:
        return _KINDS[type(record)]
    except KeyError:
        raise InvalidArgumentError(f"no report layout for {type(record).__name__}") from None


def to_row(record):
    """Field name -> value, in report order; list values stay lists"""
    kind = record_kind(record)
    if kind == "transfer":
        values = (record.surrogates, record.victim, record.attack, list(record.checkpoints),
                  [float(v) for v in record.tasr], record.n_images, record.seed)
    elif kind == "universality":
        values = (record.perturbation_id, record.target, record.count)
    elif kind == "dominance":
        values = (record.tap, record.mean_cs_benign, record.mean_cs_adversarial, record.n_images)
    else:
        values = (record.label, record.attack, record.s_l, record.s_int, record.tap, record.lam,
                  record.mean_tasr, record.n_images)
    return dict(zip(FIELDS[kind], values))


def _csv_cell(value):
    if isinstance(value, list):
        return "/".join(_csv_cell(v) for v in value)
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def render_report(records, fmt, kind=None):
    records = list(records)
    if kind is None:
        if not records:
            raise InvalidArgumentError("an empty report needs an explicit kind")
        kind = record_kind(records[0])
    if kind not in FIELDS:
        raise InvalidArgumentError(f"unknown report kind '{kind}'")
    rows = [to_row(r) for r in records]
    if any(record_kind(r) != kind for r in records):
        raise InvalidArgumentError(f"mixed record kinds in a '{kind}' report")

    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(FIELDS[kind])
        for row in rows:
            writer.writerow([_csv_cell(row[name]) for name in FIELDS[kind]])
        return buf.getvalue()
    raise InvalidArgumentError(f"unknown report format '{fmt}' (expected csv or json)")


def emit_report(records, fmt, path, kind=None):
    """Write a report; identical inputs give byte-identical files"""
    text = render_report(records, fmt, kind)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(text.encode("utf-8"))
    except OSError as e:
        raise DataError(f"cannot write report {path}: {e}") from e
    return path
