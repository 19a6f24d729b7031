"""
Transfer evaluation harness

- TASR of adversarial images on a victim
- Transfer matrices: attacks run once per surrogate with snapshots at several
  iteration checkpoints, then every model is evaluated on every snapshot
- Ensemble hold-out transfer and ablation sweeps
- Universality of single perturbations and feature dominance of shared ones
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from attacks.engine import AttackConfig, ensemble_attack
from core.metrics import FractionResult, argmax_predictions, fraction
from models.zoo import predict_logits, run_forward, tap_layer_index
from utils.errors import InvalidArgumentError


def tasr(model, adv_images, targets) -> FractionResult:
    """Fraction of adversarial images the model classifies as their target"""
    adv_images = np.asarray(adv_images)
    targets = np.asarray(targets, dtype=np.int64)
    if adv_images.shape[0] != targets.shape[0]:
        raise InvalidArgumentError(f"{adv_images.shape[0]} images for {targets.shape[0]} targets")
    if targets.size == 0:
        return fraction([])
    return fraction(argmax_predictions(predict_logits(model, adv_images)) == targets)


@dataclass
class TransferCell:
    surrogates: str  # "+"-joined for ensembles
    victim: str
    attack: str
    checkpoints: Tuple[int, ...]
    tasr: Tuple[float, ...]
    n_images: int
    seed: int
    white_box: bool = False


@dataclass
class UniversalityRecord:
    perturbation_id: int
    target: int
    count: int


@dataclass
class DominanceRecord:
    tap: int
    mean_cs_benign: float
    mean_cs_adversarial: float
    n_images: int


@dataclass
class AblationRecord:
    label: str
    attack: str
    s_l: float
    s_int: float
    tap: int
    lam: float
    mean_tasr: float
    n_images: int


@dataclass
class SnapshotSet:
    """Perturbations of one attack run, kept at each checkpoint iteration"""
    attack: str
    surrogates: Tuple[str, ...]
    checkpoints: Tuple[int, ...]
    image_ids: np.ndarray
    images: np.ndarray
    targets: np.ndarray
    deltas: Dict[int, np.ndarray]
    seed: int
    white_box_success: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    first_success: List[Optional[int]] = field(default_factory=list)

    def __len__(self):
        return int(self.images.shape[0])

    @property
    def surrogate_label(self):
        return "+".join(self.surrogates)

    def adversarial(self, checkpoint):
        if checkpoint not in self.deltas:
            raise InvalidArgumentError(f"no snapshot at iteration {checkpoint} (have {sorted(self.deltas)})")
        return self.images + self.deltas[checkpoint]


def _normalize_checkpoints(checkpoints, iterations):
    points = tuple(sorted({int(c) for c in checkpoints})) or (iterations,)
    bad = [c for c in points if not 1 <= c <= iterations]
    if bad:
        raise InvalidArgumentError(f"checkpoints {bad} outside 1..{iterations}")
    return points


def _pool_map(fn, items, workers):
    """Map in submission order over a bounded thread pool"""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def generate_snapshots(surrogates: Mapping[str, object], attack_name, cfg: AttackConfig, images, targets,
                       checkpoints=(), image_ids=None, workers=1, telemetry=False) -> SnapshotSet:
    """
    Attack every image once with the surrogate (ensemble if several) and keep delta at each checkpoint

    image_ids key each image's random stream, so results do not depend on
    batching or thread scheduling.
    """
    names = tuple(surrogates)
    models = [surrogates[n] for n in names]
    images = np.asarray(images, dtype=np.float32)
    targets = np.asarray(targets, dtype=np.int64)
    if images.shape[0] != targets.shape[0]:
        raise InvalidArgumentError(f"{images.shape[0]} images for {targets.shape[0]} targets")
    ids = np.arange(images.shape[0]) if image_ids is None else np.asarray(image_ids, dtype=np.int64)
    points = _normalize_checkpoints(checkpoints, cfg.iterations)
    print(f"🚀 {attack_name} on {'+'.join(names)}: {images.shape[0]} images, "
          f"{cfg.iterations} iterations, snapshots at {list(points)}")

    def run(i):
        return ensemble_attack(models, images[i], targets[i], cfg, image_index=int(ids[i]),
                               checkpoints=points, telemetry=telemetry)

    results = _pool_map(run, list(range(images.shape[0])), workers)
    shape = (images.shape[0],) + images.shape[1:]
    deltas = {c: np.stack([r.snapshots[c] for r in results]) if results else np.zeros(shape, np.float32)
              for c in points}
    success = np.array([r.success for r in results], dtype=bool)
    snaps = SnapshotSet(attack_name, names, points, ids, images, targets, deltas, cfg.seed,
                        success, [r.first_success for r in results])
    rate = fraction(success)
    print(f"✅ {attack_name} white-box success on {'+'.join(names)}: {rate.value:.3f} ({rate.hits}/{rate.total})")
    return snaps


def evaluate_snapshots(snapshots: SnapshotSet, victims: Mapping[str, object]) -> List[TransferCell]:
    """One TransferCell per victim; surrogates listed among the victims give white-box cells"""
    cells = []
    for name, model in victims.items():
        rates = tuple(tasr(model, snapshots.adversarial(c), snapshots.targets).value
                      for c in snapshots.checkpoints)
        cells.append(TransferCell(snapshots.surrogate_label, name, snapshots.attack, snapshots.checkpoints,
                                  rates, len(snapshots), snapshots.seed, name in snapshots.surrogates))
    return cells


def transfer_matrix(models: Mapping[str, object], attacks: Mapping[str, AttackConfig], images, targets,
                    checkpoints=(), workers=1):
    """
    Single-model transfer: every model is a surrogate once and every model is a victim of it

    Returns:
        (cells, snapshot sets) with surrogate order, then victim order as in `models`
    """
    if len(models) < 2:
        raise InvalidArgumentError("a transfer matrix needs at least 2 models")
    cells, snaps = [], []
    for attack_name, cfg in attacks.items():
        for name, model in models.items():
            s = generate_snapshots({name: model}, attack_name, cfg, images, targets, checkpoints, workers=workers)
            snaps.append(s)
            cells.extend(evaluate_snapshots(s, models))
    return cells, snaps


def ensemble_holdout(models: Mapping[str, object], attack_name, cfg: AttackConfig, images, targets,
                     checkpoints=(), workers=1):
    """Each model in turn is the victim of an equal-weight ensemble of all the others"""
    if len(models) < 2:
        raise InvalidArgumentError("ensemble hold-out needs at least 2 models")
    cells = []
    for victim, victim_model in models.items():
        ensemble = {n: m for n, m in models.items() if n != victim}
        snaps = generate_snapshots(ensemble, attack_name, cfg, images, targets, checkpoints, workers=workers)
        cells.extend(evaluate_snapshots(snaps, {victim: victim_model}))
    return cells


def ablation_sweep(surrogate: Tuple[str, object], victims: Mapping[str, object], attack_name,
                   base: AttackConfig, overrides: Sequence[Mapping], images, targets, workers=1):
    """
    Re-run one attack with field overrides (locality scale, tap, lambda, ...) and
    record the final-iterate TASR averaged over the victims
    """
    if not victims:
        raise InvalidArgumentError("ablation needs at least one victim")
    name, model = surrogate
    records = []
    for entry in overrides:
        entry = dict(entry)
        label = str(entry.pop("label", ",".join(f"{k}={v}" for k, v in sorted(entry.items())) or "base"))
        if "lambda" in entry:
            entry["lam"] = entry.pop("lambda")
        cfg = AttackConfig.model_validate({**base.model_dump(), **entry})
        snaps = generate_snapshots({name: model}, attack_name, cfg, images, targets, (cfg.iterations,),
                                   workers=workers)
        rates = [cell.tasr[-1] for cell in evaluate_snapshots(snaps, victims)]
        records.append(AblationRecord(label, attack_name, cfg.s_l, cfg.s_int, cfg.tap, cfg.lam,
                                      float(np.mean(rates)), len(snaps)))
    return records


def universality_counts(model, perturbations, images, targets, perturbation_ids=None, workers=1):
    """
    For each perturbation j, the number of OTHER images i with argmax f(clamp(x_i + delta_j)) == target_j

    Sorted by count descending, ties by perturbation id.
    """
    perturbations = np.asarray(perturbations)
    images = np.asarray(images)
    targets = np.asarray(targets, dtype=np.int64)
    n = images.shape[0]
    if perturbations.shape != images.shape or targets.shape != (n,):
        raise InvalidArgumentError(
            f"need one perturbation and target per image: {perturbations.shape} / {images.shape} / {targets.shape}"
        )
    ids = np.arange(n) if perturbation_ids is None else np.asarray(perturbation_ids, dtype=np.int64)

    def count(j):
        adv = np.clip(images + perturbations[j], 0, 1)
        hits = argmax_predictions(predict_logits(model, adv)) == targets[j]
        hits[j] = False
        return UniversalityRecord(int(ids[j]), int(targets[j]), int(hits.sum()))

    records = _pool_map(count, list(range(n)), workers)
    return sorted(records, key=lambda r: (-r.count, r.perturbation_id))


def _mean_pairwise_cs(features):
    """Mean cosine similarity over unordered pairs of rows; zero rows count as 0"""
    flat = features.reshape(features.shape[0], -1).astype(np.float64)
    norms = np.linalg.norm(flat, axis=1)
    unit = np.divide(flat, norms[:, None], out=np.zeros_like(flat), where=norms[:, None] > 0)
    gram = np.clip(unit @ unit.T, -1.0, 1.0)
    upper = np.triu_indices(flat.shape[0], k=1)
    return float(gram[upper].mean())


def _tap_features(model, images, tap, batch_size=256):
    idx = tap_layer_index(model.spec, tap)
    chunks = [run_forward(model, images[i:i + batch_size]).outputs[idx]
              for i in range(0, images.shape[0], batch_size)]
    return np.concatenate(chunks)


def feature_dominance(model, images, delta, tap=3) -> DominanceRecord:
    """Mean pairwise tap-feature CS of the benign images and of clamp(x_i + delta)"""
    images = np.asarray(images)
    if images.shape[0] < 2:
        raise InvalidArgumentError(f"feature dominance needs at least 2 images, got {images.shape[0]}")
    adv = np.clip(images + np.asarray(delta, dtype=images.dtype), 0, 1)
    benign = _mean_pairwise_cs(_tap_features(model, images, tap))
    adversarial = _mean_pairwise_cs(_tap_features(model, adv, tap))
    return DominanceRecord(int(tap), benign, adversarial, int(images.shape[0]))


def mean_dominance(model, images, perturbations, tap=3) -> DominanceRecord:
    """feature_dominance averaged over several shared perturbations"""
    perturbations = list(perturbations)
    if not perturbations:
        raise InvalidArgumentError("mean_dominance needs at least one perturbation")
    records = [feature_dominance(model, images, d, tap) for d in perturbations]
    return DominanceRecord(int(tap),
                           float(np.mean([r.mean_cs_benign for r in records])),
                           float(np.mean([r.mean_cs_adversarial for r in records])),
                           records[0].n_images)
