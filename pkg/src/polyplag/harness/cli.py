"""Command-line entry point.

Exit status: 0 on success, 1 for usage errors, 2 for data errors (bad or
missing files, malformed tables, inconsistent models).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .. import nmf
from ..model import PlagiarismModel
from ..pairwise import read_pair_table, restrict, write_pair_table
from . import pipeline
from .config import ConfigError, PipelineConfig, load_config
from .manifest import load_manifest
from .metrics import evaluate
from .synth import SynthConfig, generate_synthetic_pairs

logger = logging.getLogger("polyplag")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    return config


def cmd_synth(args, config):
    synth_cfg = SynthConfig(n_pos=args.pos, n_neg=args.neg,
                            seed=config.synth_seed if args.seed is None else args.seed,
                            sample_rate=config.sample_rate)
    manifest = generate_synthetic_pairs(args.out, synth_cfg)
    print(f"wrote {len(manifest)} pairs to {os.path.join(args.out, 'manifest.csv')}")


def cmd_build_bases(args, config):
    config = config.with_overrides(n_bases=args.n, basis_seed=args.seed)
    manifest = load_manifest(args.manifest)
    basis = pipeline.build_bases(manifest.tracks(), config)
    nmf.save_basis(basis, args.out)
    print(f"wrote {basis.n} bases ({basis.dim} bins) to {args.out}; digest {basis.digest()}")


def cmd_extract(args, config):
    manifest = load_manifest(args.manifest)
    basis = nmf.load_basis(args.bases)
    bundles = pipeline.extract_bundles(manifest.tracks(), config, basis, args.cache)
    vectors = pipeline.pair_vectors(manifest, bundles, config)
    out = args.out or os.path.join(args.cache, "pairs.tsv")
    write_pair_table(vectors, out)
    print(f"wrote {len(vectors)} pair vectors to {out}")


def cmd_train(args, config):
    config = config.with_overrides(trees=args.trees, forest_seed=args.seed,
                                   keep_fraction=args.keep_fraction)
    vectors = read_pair_table(args.pairs)
    if not vectors:
        raise ValueError(f"{args.pairs}: no pair vectors")
    classes = args.classes.split(",") if args.classes else vectors[0].feature_names
    unknown = set(classes) - set(vectors[0].feature_names)
    if unknown:
        raise ValueError(f"classes not in table: {sorted(unknown)}")
    basis_ref = nmf.load_basis(args.bases).digest() if args.bases else ""
    model = pipeline.fit(vectors, config, classes, basis_ref)
    if args.bases:
        model.config["basis_path"] = os.path.abspath(args.bases)
    model.save(args.out)
    print(f"trained {model.tree_count} trees on {len(vectors)} pairs; kept "
          f"{', '.join(model.mask.kept_names)}; wrote {args.out}")


def cmd_predict(args, config):
    model = PlagiarismModel.load(args.model)
    basis_path = args.bases or model.config.get("basis_path")
    if not basis_path:
        raise UsageError("model records no basis file; pass --bases")
    basis = nmf.load_basis(basis_path)
    if model.basis_ref and model.basis_ref != basis.digest():
        raise ValueError("basis file does not match the one the model was trained with")
    label, score, vec = pipeline.predict_pair(args.pair[0], args.pair[1], model, basis, config)
    print(f"label {'+1' if label == 1 else '-1'}")
    print(f"score {score:.6f} (rho {model.rho:.6f})")
    for name, dist in vec.distances.items():
        print(f"  {name:10s} {dist:.6f}")


def cmd_evaluate(args, config):
    model = PlagiarismModel.load(args.model)
    vectors = restrict(read_pair_table(args.pairs), model.feature_names)
    report = evaluate(model, vectors)
    text = report.to_json()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(f"accuracy {report.accuracy:.4f} precision {report.precision:.4f} "
          f"recall {report.recall:.4f} pr_auc {report.auc:.4f} (n={report.n})")


def cmd_study(args, config):
    if args.manifest:
        manifest = load_manifest(args.manifest)
    else:
        if not args.out:
            raise UsageError("study needs --manifest or --out")
        manifest = generate_synthetic_pairs(
            args.out, SynthConfig(n_pos=args.pos, n_neg=args.neg, seed=config.synth_seed,
                                  sample_rate=config.sample_rate))
    result = pipeline.run_study(manifest, config, args.cache)
    for line in result.summary_lines():
        print(line)
    print(f"elapsed {result.seconds:.1f} s")
    if args.report:
        doc = {name: json.loads(rep.to_json()) for name, rep in result.reports.items()}
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polyplag", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file overriding defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic pair corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--pos", type=int, default=60)
    p.add_argument("--neg", type=int, default=60)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-bases", help="draw the exemplar basis pool")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_bases)

    p = sub.add_parser("extract", help="compute features and the pair-vector table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--bases", required=True)
    p.add_argument("--out", help="pair table path (default: CACHE/pairs.tsv)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a forest on a pair table")
    p.add_argument("--pairs", required=True)
    p.add_argument("--trees", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", help="comma-separated feature classes to use")
    p.add_argument("--keep-fraction", type=float)
    p.add_argument("--bases", help="basis file to record in the model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify one pair of audio files")
    p.add_argument("--model", required=True)
    p.add_argument("--bases", help="basis file (default: the one recorded at training)")
    p.add_argument("--pair", nargs=2, required=True, metavar=("A.wav", "B.wav"))
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="evaluate a model on a pair table")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study", help="compare traditional, NMF-only and combined systems")
    p.add_argument("--manifest")
    p.add_argument("--out", help="directory for a freshly synthesized corpus")
    p.add_argument("--pos", type=int, default=60)
    p.add_argument("--neg", type=int, default=60)
    p.add_argument("--cache")
    p.add_argument("--report")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        config = _config(args)
        args.func(args, config)
    except UsageError as exc:
        print(f"polyplag: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"polyplag: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        print(f"polyplag: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
