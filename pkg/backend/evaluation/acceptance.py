"""
Directional checks over emitted JSON reports

Expects a full run: every surrogate attacked with ifgsm, dtmi-ce and dtmi-ce-li, then `eval`.
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List

from utils.errors import DataError


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def _read_rows(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"report not found: {path}") from None
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read report {path}: {e}") from e


def mean_universality(rows):
    """Mean count over universality rows"""
    if not rows:
        raise DataError("no universality rows")
    return sum(r["count"] for r in rows) / len(rows)


def mean_transfer(rows, attack, checkpoint=None):
    """
    Mean TASR of `attack` over single-surrogate cells whose victim is a different model,
    read at `checkpoint` (default: each cell's last checkpoint)
    """
    values = []
    for row in rows:
        if row["attack"] != attack or "+" in row["surrogate"] or row["surrogate"] == row["victim"]:
            continue
        if checkpoint is None:
            values.append(row["tasr"][-1])
        elif checkpoint in row["checkpoint"]:
            values.append(row["tasr"][row["checkpoint"].index(checkpoint)])
        else:
            raise DataError(f"{row['surrogate']}->{row['victim']} ({attack}) has no checkpoint {checkpoint}")
    if not values:
        raise DataError(f"no transfer cells for attack '{attack}'")
    return sum(values) / len(values)


def universality_check(by_attack, broad="dtmi-ce", narrow="ifgsm"):
    """`by_attack` maps attack name -> all universality rows of its single-surrogate runs"""
    a, b = mean_universality(by_attack[broad]), mean_universality(by_attack[narrow])
    return Check(f"universality {broad} > {narrow}", a > b, f"{a:.3f} vs {b:.3f}")


def transfer_check(rows, better="dtmi-ce-li", baseline="dtmi-ce"):
    a, b = mean_transfer(rows, better), mean_transfer(rows, baseline)
    return Check(f"transfer {better} >= {baseline}", a >= b, f"{a:.4f} vs {b:.4f}")


def checkpoint_check(rows, attack="dtmi-ce-li", early=20, late=300):
    a, b = mean_transfer(rows, attack, early), mean_transfer(rows, attack, late)
    return Check(f"{attack} checkpoint {early} <= {late}", a <= b, f"{a:.4f} vs {b:.4f}")


def check_reports(reports_dir, early=20, late=300) -> List[Check]:
    """Run every directional check against `reports_dir`"""
    reports_dir = Path(reports_dir)
    by_attack = {}
    for attack in ("dtmi-ce", "ifgsm"):
        paths = [p for p in sorted(reports_dir.glob(f"universality__{attack}__*.json"))
                 if "+" not in p.stem.split("__")[-1]]
        if not paths:
            raise DataError(f"no universality reports for '{attack}' under {reports_dir}")
        by_attack[attack] = [row for p in paths for row in _read_rows(p)]
    transfer = _read_rows(reports_dir / "transfer.json")
    return [
        universality_check(by_attack),
        transfer_check(transfer),
        checkpoint_check(transfer, early=early, late=late),
    ]

