"""
Checkpoint directory manager
Keeps trained models in memory once loaded so attack and eval runs share them
"""
import threading
from pathlib import Path
from typing import Dict, Tuple

from models.checkpoint import load_checkpoint, save_checkpoint
from models.zoo import Model, build_spec, spec_fingerprint
from utils.errors import DataError


CHECKPOINT_SUFFIX = ".avlb"


class ModelManager:
    """Loads, caches and saves named models under one checkpoint directory"""

    def __init__(self, checkpoint_dir):
        self.checkpoint_dir = Path(checkpoint_dir)
        # (name, spec fingerprint) -> Model
        self._models: Dict[Tuple[str, bytes], Model] = {}
        self._lock = threading.Lock()

    def path_for(self, name):
        return self.checkpoint_dir / f"{name}{CHECKPOINT_SUFFIX}"

    def has(self, name):
        with self._lock:
            cached = any(key[0] == name for key in self._models)
        return cached or self.path_for(name).is_file()

    def save(self, name, model):
        path = save_checkpoint(model, self.path_for(name))
        with self._lock:
            for key in [k for k in self._models if k[0] == name]:
                del self._models[key]
            self._models[(name, spec_fingerprint(model.spec))] = model
        print(f"💾 Saved checkpoint {path}")
        return path

    def load(self, name, architecture, num_classes, input_shape):
        """Model `name` with the given spec, read from its checkpoint on first use"""
        spec = build_spec(architecture, num_classes, input_shape)
        key = (name, spec_fingerprint(spec))
        with self._lock:
            if key in self._models:
                return self._models[key]
        path = self.path_for(name)
        if not path.is_file():
            raise DataError(f"missing checkpoint for model '{name}': {path} (run `train` first)")
        model = load_checkpoint(path, spec)
        with self._lock:
            self._models.setdefault(key, model)
            print(f"✅ Loaded {architecture} '{name}' from {path}")
            return self._models[key]
        path = self.path_for(name)
        if not path.is_file():
            raise DataError(f"missing checkpoint for model '{name}': {path} (run `train` first)")
        model = load_checkpoint(path, build_spec(architecture, num_classes, input_shape))
        with self._lock:
            self._models.setdefault(name, model)
            print(f"✅ Loaded {architecture} '{name}' from {path}")
            return self._models[name]

    def clear(self):
        with self._lock:
            self._models.clear()


# Global instances, one per checkpoint directory
_model_managers: Dict[Path, ModelManager] = {}


def get_model_manager(checkpoint_dir) -> ModelManager:
    """Get or create the manager for a checkpoint directory"""
    key = Path(checkpoint_dir).resolve()
    if key not in _model_managers:
        _model_managers[key] = ModelManager(key)
    return _model_managers[key]
