"""
Output directory manager
- Lays out checkpoints, training logs, snapshot archives, reports and previews
- Stores adversarial snapshots as raw little-endian float32 files plus a JSON manifest
- Writes PNG previews of adversarial examples
"""
import json
from pathlib import Path
from typing import Dict, List

import numpy as np
from PIL import Image

from evaluation.harness import SnapshotSet
from utils.errors import DataError


MANIFEST = "manifest.json"
SNAPSHOT_DTYPE = "<f4"
PREVIEW_SCALE = 4


def run_name(attack, surrogates):
    return f"{attack}__{'+'.join(surrogates)}"


def _to_pixels(img):
    """C x H x W in [0, 1] -> uint8 H x W (grayscale) or H x W x 3"""
    arr = np.rint(np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    return arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)


class DataManager:
    """Manages the run output directory"""

    def __init__(self, data_dir="data"):
        self.data_dir = Path(data_dir)
        self.checkpoints_dir = self.data_dir / "checkpoints"
        self.logs_dir = self.data_dir / "logs"
        self.snapshots_dir = self.data_dir / "snapshots"
        self.reports_dir = self.data_dir / "reports"
        self.previews_dir = self.data_dir / "previews"

        # Create directories
        for directory in (self.checkpoints_dir, self.logs_dir, self.snapshots_dir,
                          self.reports_dir, self.previews_dir):
            directory.mkdir(parents=True, exist_ok=True)

    def log_path(self, model_name):
        return self.logs_dir / f"train_{model_name}.log"

    def report_path(self, name, fmt):
        return self.reports_dir / f"{name}.{fmt}"

    def save_snapshots(self, snaps: SnapshotSet, extra: Dict = None) -> Path:
        """Write one file per (image, checkpoint) plus the manifest; returns the run directory"""
        run_dir = self.snapshots_dir / run_name(snaps.attack, snaps.surrogates)
        run_dir.mkdir(parents=True, exist_ok=True)
        files = {}
        for c in snaps.checkpoints:
            for row, image_id in enumerate(snaps.image_ids):
                fname = f"img{int(image_id):05d}_it{c:04d}.bin"
                (run_dir / fname).write_bytes(np.ascontiguousarray(snaps.deltas[c][row], dtype=SNAPSHOT_DTYPE).tobytes())
                files.setdefault(str(c), []).append(fname)

        manifest = {
            "attack": snaps.attack,
            "surrogates": list(snaps.surrogates),
            "checkpoints": list(snaps.checkpoints),
            "image_ids": [int(i) for i in snaps.image_ids],
            "targets": [int(t) for t in snaps.targets],
            "seed": int(snaps.seed),
            "shape": list(snaps.images.shape[1:]),
            "dtype": SNAPSHOT_DTYPE,
            "white_box_success": [bool(s) for s in snaps.white_box_success],
            "first_success": snaps.first_success,
            "files": files,
        }
        manifest.update(extra or {})
        (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"💾 Saved {len(snaps)} x {len(snaps.checkpoints)} snapshots to {run_dir}")
        return run_dir

    def list_runs(self) -> List[str]:
        if not self.snapshots_dir.exists():
            return []
        return sorted(p.name for p in self.snapshots_dir.iterdir() if (p / MANIFEST).is_file())

    def read_manifest(self, run):
        path = self.snapshots_dir / run / MANIFEST
        if not path.is_file():
            raise DataError(f"missing snapshots for run '{run}': {path} (run `attack` first)")
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"unreadable snapshot manifest {path}: {e}") from e

    def load_snapshots(self, run, images) -> SnapshotSet:
        """
        Rebuild a SnapshotSet; `images` are the benign images, in manifest image_ids order
        """
        manifest = self.read_manifest(run)
        run_dir = self.snapshots_dir / run
        shape = tuple(manifest["shape"])
        images = np.asarray(images, dtype=np.float32)
        if images.shape != (len(manifest["image_ids"]),) + shape:
            raise DataError(f"run '{run}' was made for images {shape}, got {images.shape}")
        count = int(np.prod(shape))
        deltas = {}
        for c in manifest["checkpoints"]:
            rows = []
            for fname in manifest["files"][str(c)]:
                path = run_dir / fname
                try:
                    raw = path.read_bytes()
                except OSError as e:
                    raise DataError(f"missing snapshot file {path}: {e}") from e
                if len(raw) != 4 * count:
                    raise DataError(f"snapshot {path} has {len(raw)} bytes, expected {4 * count}")
                rows.append(np.frombuffer(raw, dtype=SNAPSHOT_DTYPE).reshape(shape).astype(np.float32))
            deltas[int(c)] = np.stack(rows) if rows else np.zeros((0,) + shape, dtype=np.float32)
        return SnapshotSet(
            manifest["attack"], tuple(manifest["surrogates"]), tuple(int(c) for c in manifest["checkpoints"]),
            np.asarray(manifest["image_ids"], dtype=np.int64), images,
            np.asarray(manifest["targets"], dtype=np.int64), deltas, int(manifest["seed"]),
            np.asarray(manifest["white_box_success"], dtype=bool), list(manifest["first_success"]),
        )

    def save_preview(self, run, image_id, x, x_adv, epsilon):
        """Benign | adversarial | perturbation amplified to the full range, side by side"""
        x = np.asarray(x, dtype=np.float64)
        delta = np.asarray(x_adv, dtype=np.float64) - x
        scale = 2 * epsilon if epsilon > 0 else 1.0
        panels = [_to_pixels(x), _to_pixels(x_adv), _to_pixels(delta / scale + 0.5)]
        strip = np.concatenate(panels, axis=1)
        image = Image.fromarray(strip)
        image = image.resize((image.width * PREVIEW_SCALE, image.height * PREVIEW_SCALE), Image.Resampling.NEAREST)
        out_dir = self.previews_dir / run
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"img{int(image_id):05d}.png"
        image.save(path)
        return path

    def _get_directory_size_mb(self, directory: Path) -> float:
        """Get total size of directory in MB"""
        if not directory.exists():
            return 0.0
        total_bytes = sum(f.stat().st_size for f in directory.rglob("*") if f.is_file())
        return total_bytes / (1024 * 1024)

    def get_storage_stats(self) -> Dict:
        """Get storage statistics"""
        return {
            "checkpoints_mb": round(self._get_directory_size_mb(self.checkpoints_dir), 2),
            "snapshots_mb": round(self._get_directory_size_mb(self.snapshots_dir), 2),
            "reports_mb": round(self._get_directory_size_mb(self.reports_dir), 2),
            "previews_mb": round(self._get_directory_size_mb(self.previews_dir), 2),
            "checkpoint_count": len(list(self.checkpoints_dir.glob("*.avlb"))),
            "run_count": len(self.list_runs()),
        }


# Global instances, one per output directory
_data_managers: Dict[Path, DataManager] = {}


def get_data_manager(data_dir="data") -> DataManager:
    """Get or create the data manager for an output directory"""
    key = Path(data_dir).resolve()
    if key not in _data_managers:
        _data_managers[key] = DataManager(data_dir=key)
    return _data_managers[key]
