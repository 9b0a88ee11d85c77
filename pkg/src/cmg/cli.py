"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training diverged.
"""

import argparse
import logging
import sys

import numpy as np

from . import numerics, pipeline, synthdata
from .errors import CMGError, ConfigError, DataError, TrainingDiverged
from .report import Report

log = logging.getLogger("cmg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _load_config(path):
    if path is None:
        return pipeline.RunConfig()
    return pipeline.RunConfig.from_file(path)


def _load_data(path):
    try:
        return synthdata.load(path)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc


def cmd_gen_data(args):
    cfg = _load_config(args.config)
    dataset = synthdata.generate(cfg.gen)
    synthdata.save(dataset, args.out)
    log.info("wrote %d/%d/%d samples to %s", len(dataset.train_normal),
             len(dataset.test_normal), len(dataset.test_anomaly), args.out)


def cmd_train(args):
    cfg = _load_config(args.config)
    dataset = _load_data(args.data)
    variant = pipeline.Variant.parse(args.variant)
    run_cfg = cfg.with_seed(cfg.seeds[0])
    bundle = pipeline.train_cmg(dataset, run_cfg, variant)
    bundle.save(args.out)
    log.info("saved %s bundle (seed %d) to %s", variant.value, run_cfg.latent.seed, args.out)


def cmd_score(args):
    bundle = pipeline.Bundle.load(args.bundle)
    dataset = _load_data(args.data)
    test, labels = dataset.test_set()
    scored = pipeline.test_scores(bundle, test.images, labels)
    rep = Report({"report": "score", "variant": bundle.variant.value, "seed": bundle.seed,
                  "n_normal": int((labels == 0).sum()), "n_anomaly": int(labels.sum()),
                  "auroc": numerics.auroc(scored), "auprc": numerics.auprc(scored)})
    rep.add_table("scores", ["index", "label", "score"],
                  [[i, int(l), float(s)] for i, (l, s) in enumerate(zip(scored.labels, scored.scores))])
    rep.save(args.out)
    log.info("auroc=%.4f auprc=%.4f", rep.scalars["auroc"], rep.scalars["auprc"])


def cmd_ablate(args):
    cfg = _load_config(args.config)
    dataset = _load_data(args.data)
    report = pipeline.ablate(dataset, cfg, log=log.info)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.dumps())
    for v in report.variants():
        ci = report.ci95(v)
        ci_txt = f" +- {100 * ci:.2f}" if ci is not None else ""
        log.info("%-8s AUROC %.2f%s", v, 100 * report.mean(v), ci_txt)


def cmd_audit(args):
    bundle = pipeline.Bundle.load(args.bundle)
    dataset = _load_data(args.data)
    if not bundle.variant.uses_masking:
        raise ConfigError(f"audit needs a bundle with redundancy masking, got {bundle.variant.value}")
    ent = pipeline.entropy_audit(bundle, dataset.train_normal)
    dcor_raw, dcor_masked = pipeline.redundancy_audit(dataset, bundle)
    rep = Report({"report": "audit", "variant": bundle.variant.value, "seed": bundle.seed,
                  "mask_mode": bundle.mask.mode,
                  "entropy_raw_mean": ent.mean_H_raw, "entropy_masked_mean": ent.mean_H_masked,
                  "dcor_raw_noise": dcor_raw, "dcor_masked_noise": dcor_masked})
    rep.add_table("entropy", ["index", "raw", "masked"],
                  [[i, float(r), float(m)] for i, (r, m) in enumerate(zip(ent.raw, ent.masked))])
    rid_acc = bundle.curves.get("rid_heldout_accuracy")
    if rid_acc:
        rep.scalars["rid_heldout_accuracy"] = float(rid_acc[-1])
    rep.save(args.out)
    log.info("entropy %.4f -> %.4f, dcor %.4f -> %.4f", ent.mean_H_raw, ent.mean_H_masked,
             dcor_raw, dcor_masked)


def build_parser():
    parser = argparse.ArgumentParser(prog="cmg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one variant and save its bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--variant", default="CMG")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score the test split with a trained bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ablate", help="run every variant over every configured seed")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("audit", help="entropy and distance-correlation audits of a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        with np.errstate(over="raise", invalid="raise"):
            args.func(args)
    except TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except FloatingPointError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except CMGError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
