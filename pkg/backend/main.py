"""
advlab command line

    python backend/main.py --config run.json train
    python backend/main.py --config run.json attack --surrogate convnet_a --attack dtmi-ce-li
    python backend/main.py --config run.json eval

Errors print one line `advlab-error[<kind>]: <message>` to stderr and exit with
2 (config), 3 (data), 4 (training divergence) or 1 (anything else).
"""
import argparse
import sys

import numpy as np
from dotenv import load_dotenv

from datasets.dataset import Dataset
from datasets.parsers import load_dataset
from datasets.targets import assign_targets, eval_subset
from evaluation.harness import (
    ablation_sweep, ensemble_holdout, evaluate_snapshots, generate_snapshots, mean_dominance,
    universality_counts,
)
from evaluation.reports import emit_report
from models.model_manager import get_model_manager
from models.zoo import build_spec
from training.trainer import eval_accuracy, train
from utils.config import load_run_config
from utils.data_manager import get_data_manager, run_name
from utils.errors import (
    AdvLabError, CheckpointError, ConfigError, DataError, ParseError, TrainingError,
)


EXIT_CODES = [
    (ConfigError, 2),
    (DataError, 3),
    (ParseError, 3),
    (CheckpointError, 3),
    (TrainingError, 4),
]


def exit_code_for(error):
    for cls, code in EXIT_CODES:
        if isinstance(error, cls):
            return code
    return 1


def _load_split(spec, which, limit=None):
    images = spec.train_images if which == "train" else spec.test_images
    labels = spec.train_labels if which == "train" else spec.test_labels
    dataset = load_dataset(spec.format, images, labels, spec.num_classes)
    if limit is not None and limit < len(dataset):
        dataset = dataset.subset(np.arange(limit), tag=f":{limit}")
    return dataset


class EvalSet:
    """The seeded evaluation subset of the test split and its target classes"""

    def __init__(self, config):
        test = _load_split(config.dataset, "test")
        self.test: Dataset = test
        self.ids = eval_subset(test, min(config.dataset.eval_subset_size, len(test)), config.dataset.seed)
        self.images = test.images[self.ids]
        self.targets = assign_targets(test, config.seed).targets[self.ids]

    def images_for(self, image_ids):
        return self.test.images[np.asarray(image_ids, dtype=np.int64)]


def _load_models(config, input_shape, names=None):
    """{name: Model} for the named (default: all configured) models"""
    dm = get_data_manager(config.output_dir)
    manager = get_model_manager(dm.checkpoints_dir)
    names = names or [m.name for m in config.models]
    models = {}
    for name in names:
        entry = config.model_entry(name)
        models[name] = manager.load(name, entry.architecture, config.dataset.num_classes, input_shape)
    return models


def cmd_train(config):
    """Train every configured model, save checkpoints and logs, print test accuracy"""
    dm = get_data_manager(config.output_dir)
    manager = get_model_manager(dm.checkpoints_dir)
    train_set = _load_split(config.dataset, "train", config.dataset.train_limit)
    test_set = _load_split(config.dataset, "test")

    accuracies = {}
    for entry in config.models:
        print(f"🚀 Training {entry.name} ({entry.architecture}, seed {entry.train_seed})")
        spec = build_spec(entry.architecture, config.dataset.num_classes, train_set.image_shape)
        model = train(spec, train_set, entry.hyper, seed=entry.train_seed, log_path=dm.log_path(entry.name))
        manager.save(entry.name, model)
        acc = eval_accuracy(model, test_set)
        accuracies[entry.name] = acc.value
        print(f"📊 {entry.name} test accuracy: {acc.value:.4f} ({acc.hits}/{acc.total})")
    return accuracies


def cmd_attack(config, surrogates, attack_name, preview=0, telemetry=False):
    """Attack the evaluation subset with one surrogate (or an ensemble) and store snapshots"""
    dm = get_data_manager(config.output_dir)
    cfg = config.attack_config(attack_name)
    checkpoints = sorted({c for c in config.evaluation.transfer_checkpoints if c <= cfg.iterations}
                         | {cfg.iterations})
    evalset = EvalSet(config)
    models = _load_models(config, evalset.test.image_shape, list(surrogates))

    snaps = generate_snapshots(models, attack_name, cfg, evalset.images, evalset.targets, checkpoints,
                               image_ids=evalset.ids, workers=config.threads, telemetry=telemetry)
    run = run_name(attack_name, snaps.surrogates)
    dm.save_snapshots(snaps, extra={"config": cfg.model_dump(by_alias=True), "dataset": evalset.test.provenance})

    final = snaps.adversarial(snaps.checkpoints[-1])
    for row in range(min(preview, len(snaps))):
        path = dm.save_preview(run, snaps.image_ids[row], snaps.images[row], final[row], cfg.epsilon)
        print(f"🖼️  Preview {path}")
    rate = float(snaps.white_box_success.mean()) if len(snaps) else 0.0
    print(f"📊 {run}: white-box success {rate:.4f} on {len(snaps)} images")
    return snaps


def _emit(config, records, name, kind):
    dm = get_data_manager(config.output_dir)
    for fmt in config.evaluation.formats:
        path = emit_report(records, fmt, dm.report_path(name, fmt), kind)
        print(f"💾 Wrote {path}")


def cmd_eval(config):
    """Transfer, universality, dominance, ensemble hold-out and ablation reports"""
    dm = get_data_manager(config.output_dir)
    plan = config.evaluation
    runs = plan.runs if plan.runs is not None else dm.list_runs()
    if not runs:
        raise DataError(f"no snapshots under {dm.snapshots_dir} (run `attack` first)")
    evalset = EvalSet(config)
    models = _load_models(config, evalset.test.image_shape)

    cells = []
    for run in runs:
        manifest = dm.read_manifest(run)
        snaps = dm.load_snapshots(run, evalset.images_for(manifest["image_ids"]))
        cells.extend(evaluate_snapshots(snaps, models))
        if len(snaps.surrogates) != 1:
            continue
        name = snaps.surrogates[0]
        if name not in models:
            raise ConfigError(f"run '{run}' was made with model '{name}', which is not configured")
        surrogate = models[name]
        final = snaps.deltas[snaps.checkpoints[-1]]
        if plan.universality:
            records = universality_counts(surrogate, final, snaps.images, snaps.targets, snaps.image_ids,
                                          workers=config.threads)
            _emit(config, records, f"universality__{run}", "universality")
        if plan.dominance_taps:
            chosen = np.nonzero(snaps.white_box_success)[0][:plan.dominance_perturbations]
            if chosen.size == 0 or len(snaps) < 2:
                print(f"⚠️  {run}: no successful perturbations, skipping feature dominance")
                continue
            records = [mean_dominance(surrogate, snaps.images, final[chosen], tap) for tap in plan.dominance_taps]
            _emit(config, records, f"dominance__{run}", "dominance")
    _emit(config, cells, "transfer", "transfer")

    if plan.ensemble_holdout:
        cfg = config.attack_config(plan.holdout_attack)
        holdout = ensemble_holdout(models, plan.holdout_attack, cfg, evalset.images, evalset.targets,
                                   (cfg.iterations,), workers=config.threads)
        _emit(config, holdout, "ensemble_holdout", "transfer")

    if plan.ablation:
        name = plan.ablation_surrogate or config.models[0].name
        victims = {n: m for n, m in models.items() if n != name} or {name: models[name]}
        records = ablation_sweep((name, models[name]), victims, plan.ablation_attack,
                                 config.attack_config(plan.ablation_attack), plan.ablation,
                                 evalset.images, evalset.targets, workers=config.threads)
        _emit(config, records, "ablation", "ablation")
    stats = dm.get_storage_stats()
    print(f"✅ Evaluated {len(runs)} snapshot run(s); {stats['snapshots_mb']} MB of snapshots, "
          f"{stats['reports_mb']} MB of reports")
    return cells


class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they share the one-line error format"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="advlab", description="Targeted transfer attack lab")
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument("--seed", type=int, help="override the config's global seed")
    parser.add_argument("--threads", type=int, help="worker threads for per-image jobs")
    parser.add_argument("--out", help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", help="train every configured model")

    attack_p = sub.add_parser("attack", help="attack the evaluation subset and store snapshots")
    attack_p.add_argument("--surrogate", nargs="+", required=True, help="one name, or several for an ensemble")
    attack_p.add_argument("--attack", required=True, help="preset or configured attack name")
    attack_p.add_argument("--preview", type=int, default=0, help="write PNG previews for the first N images")
    attack_p.add_argument("--telemetry", action="store_true", help="record the first successful iteration")

    sub.add_parser("eval", help="evaluate stored snapshots and write reports")
    return parser


def main(argv=None):
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
        config = load_run_config(args.config, seed=args.seed, threads=args.threads, out=args.out)
        if args.command == "train":
            cmd_train(config)
        elif args.command == "attack":
            cmd_attack(config, args.surrogate, args.attack, args.preview, args.telemetry)
        else:
            cmd_eval(config)
    except AdvLabError as e:
        message = " ".join(str(e).split())
        print(f"advlab-error[{e.kind}]: {message}", file=sys.stderr)
        return exit_code_for(e)
    return 0


if __name__ == "__main__":
    sys.exit(main())
