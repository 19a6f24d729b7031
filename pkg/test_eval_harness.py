import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from attacks.presets import preset_config
from evaluation.harness import (
    AblationRecord, TransferCell, UniversalityRecord, ablation_sweep, ensemble_holdout, evaluate_snapshots,
    feature_dominance, generate_snapshots, mean_dominance, tasr, transfer_matrix, universality_counts,
)
from evaluation.reports import emit_report, render_report, to_row
from models.zoo import Model, build_model, forward
from utils.errors import InvalidArgumentError


def constant_model(label, num_classes=5):
    """Zero weights except a classifier bias that always picks `label`"""
    template = build_model("ConvNetA", num_classes, (3, 16, 16), seed=0)
    weights = {k: np.zeros_like(v) for k, v in template.weights.items()}
    weights["classifier.bias"][label] = 1.0
    return Model(template.spec, weights)


@pytest.fixture(scope="module")
def zoo():
    return {
        "a": build_model("ConvNetA", 5, (3, 16, 16), seed=1),
        "b": build_model("ConvNetB", 5, (3, 16, 16), seed=2),
        "c": build_model("MiniResNet", 5, (3, 16, 16), seed=3),
    }


@pytest.fixture(scope="module")
def batch():
    rng = np.random.default_rng(0)
    return rng.random((3, 3, 16, 16)).astype(np.float32), np.array([1, 4, 2])


def test_tasr_counts_target_hits():
    targets = np.array([0, 1, 0, 2, 3, 0, 4, 1])
    result = tasr(constant_model(0), np.zeros((8, 3, 16, 16)), targets)
    assert result.value == 0.375
    assert (result.hits, result.total) == (3, 8)


def test_tasr_empty_and_mismatch():
    empty = tasr(constant_model(0), np.zeros((0, 3, 16, 16)), np.zeros(0, dtype=int))
    assert empty.value == 0.0 and empty.empty
    with pytest.raises(InvalidArgumentError):
        tasr(constant_model(0), np.zeros((2, 3, 16, 16)), [0])


def test_snapshots_do_not_depend_on_workers(zoo, batch):
    images, targets = batch
    cfg = preset_config("dtmi-ce-li", iterations=3)
    serial = generate_snapshots({"a": zoo["a"]}, "dtmi-ce-li", cfg, images, targets, (1, 3), telemetry=True)
    threaded = generate_snapshots({"a": zoo["a"]}, "dtmi-ce-li", cfg, images, targets, (3, 1), workers=3)
    assert serial.checkpoints == threaded.checkpoints == (1, 3)
    for c in serial.checkpoints:
        assert_array_equal(serial.deltas[c], threaded.deltas[c])
    assert_array_equal(serial.white_box_success, threaded.white_box_success)
    assert len(serial.first_success) == 3
    assert serial.adversarial(3).shape == images.shape
    with pytest.raises(InvalidArgumentError):
        serial.adversarial(2)


def test_transfer_matrix_has_one_cell_per_pair(zoo, batch):
    images, targets = batch
    models = {"a": zoo["a"], "b": zoo["b"]}
    cells, snaps = transfer_matrix(models, {"ifgsm": preset_config("ifgsm", iterations=2)}, images, targets,
                                   checkpoints=(1, 2))
    assert [(c.surrogates, c.victim) for c in cells] == [("a", "a"), ("a", "b"), ("b", "a"), ("b", "b")]
    assert [c.white_box for c in cells] == [True, False, False, True]
    for cell in cells:
        assert cell.checkpoints == (1, 2) and len(cell.tasr) == 2
        assert all(0.0 <= v <= 1.0 for v in cell.tasr)
        assert cell.n_images == 3
    assert len(snaps) == 2
    with pytest.raises(InvalidArgumentError):
        transfer_matrix({"a": zoo["a"]}, {}, images, targets)


def test_white_box_cell_matches_snapshot_success(zoo, batch):
    images, targets = batch
    snaps = generate_snapshots({"b": zoo["b"]}, "ifgsm", preset_config("ifgsm", iterations=2), images, targets)
    (cell,) = evaluate_snapshots(snaps, {"b": zoo["b"]})
    assert cell.tasr[-1] == pytest.approx(snaps.white_box_success.mean())


def test_ensemble_holdout_leaves_victim_out(zoo, batch):
    images, targets = batch
    cells = ensemble_holdout(zoo, "ifgsm", preset_config("ifgsm", iterations=2), images[:2], targets[:2])
    assert [(c.surrogates, c.victim) for c in cells] == [("b+c", "a"), ("a+c", "b"), ("a+b", "c")]
    assert not any(c.white_box for c in cells)


def test_ablation_sweep_labels_and_fields(zoo, batch):
    images, targets = batch
    base = preset_config("dtmi-ce-li", iterations=2)
    records = ablation_sweep(("a", zoo["a"]), {"b": zoo["b"], "c": zoo["c"]}, "dtmi-ce-li", base,
                             [{"s_l": 0.2}, {"label": "wide", "s_l": 0.1, "s_int": 0.4, "lambda": 0.0, "tap": 2}],
                             images[:2], targets[:2])
    assert [r.label for r in records] == ["s_l=0.2", "wide"]
    assert (records[1].s_int, records[1].lam, records[1].tap) == (0.4, 0.0, 2)
    assert all(0.0 <= r.mean_tasr <= 1.0 and r.n_images == 2 for r in records)
    with pytest.raises(InvalidArgumentError):
        ablation_sweep(("a", zoo["a"]), {}, "dtmi-ce-li", base, [{}], images, targets)


def test_universality_counts_other_images_only():
    images = np.zeros((4, 3, 16, 16))
    targets = np.array([2, 0, 0, 3])
    records = universality_counts(constant_model(0), np.zeros_like(images), images, targets,
                                  perturbation_ids=[10, 11, 12, 13], workers=2)
    assert records == [
        UniversalityRecord(11, 0, 3), UniversalityRecord(12, 0, 3),
        UniversalityRecord(10, 2, 0), UniversalityRecord(13, 3, 0),
    ]


def test_feature_dominance_of_identical_images():
    model = build_model("ConvNetA", 5, (3, 16, 16), seed=4)
    image = np.random.default_rng(1).random((3, 16, 16)).astype(np.float32)
    images = np.stack([image, image, image])
    record = feature_dominance(model, images, np.zeros_like(image), tap=2)
    assert record.mean_cs_benign == pytest.approx(1.0)
    assert record.mean_cs_adversarial == pytest.approx(1.0)
    assert record.n_images == 3 and record.tap == 2


def test_shared_perturbation_raises_feature_similarity():
    model = build_model("ConvNetA", 5, (3, 16, 16), seed=4)
    images = np.random.default_rng(2).random((4, 3, 16, 16)).astype(np.float32) * 0.1
    flood = np.ones((3, 16, 16), dtype=np.float32)
    record = mean_dominance(model, images, [flood, flood], tap=3)
    assert record.mean_cs_adversarial == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        feature_dominance(model, images[:1], flood)
    with pytest.raises(InvalidArgumentError):
        mean_dominance(model, images, [])


def _cell():
    return TransferCell("a+b", "c", "dtmi-ce-li", (20, 100), (0.25, 0.5), 4, 7)


def test_transfer_csv_layout():
    text = render_report([_cell()], "csv")
    assert text == ("surrogate,victim,attack,checkpoint,tasr,n_images,seed\n"
                    "a+b,c,dtmi-ce-li,20/100,0.250000/0.500000,4,7\n")


def test_json_report_keeps_lists():
    rows = json.loads(render_report([_cell()], "json"))
    assert rows == [{"surrogate": "a+b", "victim": "c", "attack": "dtmi-ce-li", "checkpoint": [20, 100],
                     "tasr": [0.25, 0.5], "n_images": 4, "seed": 7}]


def test_ablation_row_uses_lambda_column():
    record = AblationRecord("wide", "dtmi-ce-li", 0.1, 0.4, 3, 0.4, 0.5, 10)
    assert list(to_row(record)) == ["label", "attack", "s_l", "s_int", "tap", "lambda", "mean_tasr", "n_images"]


def test_report_errors():
    assert render_report([], "csv", kind="universality") == "perturbation_id,target,count\n"
    with pytest.raises(InvalidArgumentError):
        render_report([], "csv")
    with pytest.raises(InvalidArgumentError):
        render_report([_cell()], "xml")
    with pytest.raises(InvalidArgumentError):
        render_report([_cell(), UniversalityRecord(0, 1, 2)], "json")


def test_emit_report_is_byte_identical(tmp_path):
    records = [_cell(), TransferCell("a", "a", "ifgsm", (5,), (1.0,), 4, 7, True)]
    first = emit_report(records, "csv", tmp_path / "one" / "transfer.csv")
    second = emit_report(records, "csv", tmp_path / "two" / "transfer.csv")
    assert first.read_bytes() == second.read_bytes()


def test_universality_edge_cases():
    single = universality_counts(constant_model(0), np.zeros((1, 3, 16, 16)), np.zeros((1, 3, 16, 16)), [0])
    assert single == [UniversalityRecord(0, 0, 0)]
    model = build_model("ConvNetA", 5, (3, 16, 16), seed=5)
    images = np.random.default_rng(3).random((5, 3, 16, 16)).astype(np.float32)
    targets = np.array([0, 1, 2, 3, 4])
    records = universality_counts(model, np.zeros_like(images), images, targets)
    predictions = np.argmax(forward(model, images), axis=1)
    for record in records:
        j = record.perturbation_id
        expected = sum(1 for i in range(5) if i != j and predictions[i] == targets[j])
        assert record.count == expected <= 4


def test_zero_perturbation_gives_equal_dominance_means():
    model = build_model("ConvNetB", 5, (3, 16, 16), seed=6)
    images = np.random.default_rng(4).random((4, 3, 16, 16)).astype(np.float32)
    record = feature_dominance(model, images, np.zeros((3, 16, 16)), tap=1)
    assert record.mean_cs_benign == record.mean_cs_adversarial


def test_transfer_cells_match_independent_tasr(zoo, batch):
    images, targets = batch
    cells, snaps = transfer_matrix({"a": zoo["a"], "c": zoo["c"]}, {"dtmi-ce": preset_config("dtmi-ce", iterations=2)},
                                   images, targets)
    assert all(c.checkpoints == (2,) for c in cells)
    for cell in cells:
        source = next(s for s in snaps if s.surrogate_label == cell.surrogates)
        assert cell.tasr[0] == tasr(zoo[cell.victim], source.adversarial(2), targets).value


def test_empty_json_report():
    assert render_report([], "json", kind="transfer") == "[]\n"
