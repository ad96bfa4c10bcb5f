"""
Command-line front end: ingest, augment, train, eval and retro.

Every command is deterministic given identical inputs and seeds; all
randomness flows from the single --seed flag. Options may also be supplied
through an INI-style config file (one section per subcommand, keys named
like the long flags); explicit flags override file values.

Exit codes: 0 success, 1 input error, 2 empty or degenerate result,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

from . import dataset as ds
from .fingerprint import Fingerprinter
from .molgraph import canonicalize, parse_smiles
from .neural import (
    TrainConfig,
    load_weights,
    nn1pr_spec,
    nn2pr_spec,
    save_weights,
    train,
)
from .pattern import load_templates
from .pipeline import SearchConfig, TargetParseError, run_retro
from .ranking import (
    evaluate_ranking,
    group_rows,
    row_scorer,
    write_report_json,
    write_report_tsv,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_EMPTY = 2
EXIT_INTERNAL = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# Option schema per subcommand: name -> (type, default, help).
_SCHEMA: dict[str, dict[str, tuple]] = {
    "ingest": {
        "reactions": (str, None, "reactions TSV (id, ecs, reactants, products)"),
        "compounds": (str, "", "compound table TSV (id, raw_smiles|UNRESOLVED)"),
        "out-dir": (str, None, "output directory"),
    },
    "augment": {
        "corpus": (str, None, "mono-product corpus TSV from ingest"),
        "templates": (str, None, "template TSV"),
        "out-dir": (str, None, "output directory"),
        "pathways": (str, "", "optional pathways TSV for two-step chains"),
        "seed": (int, 0, "random seed"),
        "neg-fraction": (float, 1.0, "fraction of negatives kept (seeded)"),
        "test-fraction": (float, 0.1, "group fraction reserved for testing"),
        "threads": (int, 1, "worker threads for augmentation"),
    },
    "train": {
        "model": (str, None, "nn1pr or nn2pr"),
        "data": (str, None, "training dataset TSV"),
        "out": (str, None, "output weight file"),
        "history": (str, "", "optional per-epoch loss/accuracy CSV"),
        "epochs": (int, 30, "training epochs"),
        "batch": (int, 128, "batch size"),
        "lr": (float, 0.001, "Adam learning rate"),
        "dropout": (float, 0.2, "hidden-layer dropout rate"),
        "seed": (int, 0, "random seed"),
        "pos-weight": (str, "", "positive class weight: a number or 'auto'"),
    },
    "eval": {
        "weights": (str, None, "trained weight file"),
        "data": (str, None, "test dataset TSV"),
        "out": (str, None, "JSON report path"),
        "tsv": (str, "", "optional per-group rank TSV"),
    },
    "retro": {
        "target": (str, None, "target SMILES"),
        "templates": (str, None, "template TSV"),
        "nn1": (str, None, "one-step ranker weight file"),
        "nn2": (str, "", "optional two-step ranker weight file"),
        "out": (str, None, "JSON search report path"),
        "max-steps": (int, 3, "maximum backward steps"),
        "beam": (int, 10, "beam width per level"),
        "prune": (float, 0.0, "one-step score pruning threshold"),
        "stop-set": (str, "", "file of stop-set SMILES, one per line"),
        "gold": (str, "", "gold pathway TSV (product, precursors per step)"),
        "pathways-tsv": (str, "", "optional reconstructed-pathway TSV"),
        "max-nodes": (int, 100000, "node budget"),
        "threads": (int, 1, "worker threads for expansion"),
    },
}


_FORMATS_EPILOG = """\
file formats (all TSV files are UTF-8 with '#' comment lines):
  reactions:   reaction_id  ec_numbers(';')  reactant_smiles('.')  product_smiles('.')
  compounds:   compound_id  raw_smiles|UNRESOLVED
  templates:   template_id  direction(fwd|bwd)  diameter  ec_numbers(';')  smarts
  pathways:    pathway_id   reaction_ids(';', ordered from the final target)
  datasets:    label  group_key  target  precursors(steps ';', molecules '.')  weight
  stop set:    one SMILES per line
  gold:        product_smiles  precursor_smiles('.')  -- one row per backward step

weight files are little-endian binary: magic "NNPR", u32 version=1,
u32 layer_count, then per layer u32 in_dim, u32 out_dim, u8 activation
(0=relu 1=sigmoid 2=none), f32 dropout, f32 weights row-major (input
index major), f32 biases.
"""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retrobio",
        description="Template-based retrobiosynthesis with neural ranking.",
        epilog=_FORMATS_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", default="", help="INI config file")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, options in _SCHEMA.items():
        sub = subparsers.add_parser(
            command,
            epilog=_FORMATS_EPILOG,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        for name, (kind, default, help_text) in options.items():
            required = default is None
            sub.add_argument(
                f"--{name}",
                type=kind,
                default=argparse.SUPPRESS,
                required=False,
                help=help_text + ("" if required else f" (default {default})"),
            )
    return parser


def _resolve_options(args: argparse.Namespace) -> dict:
    """Merge precedence: explicit flag > config file section > default."""
    schema = _SCHEMA[args.command]
    file_values: dict[str, str] = {}
    if args.config:
        config = configparser.ConfigParser()
        read = config.read(args.config)
        if not read:
            raise CliError(f"config file not found: {args.config}")
        if config.has_section(args.command):
            file_values = dict(config.items(args.command))
    options = {}
    supplied = vars(args)
    for name, (kind, default, _) in schema.items():
        attr = name.replace("-", "_")
        if attr in supplied:
            options[attr] = supplied[attr]
        elif name in file_values:
            options[attr] = kind(file_values[name])
        elif default is None:
            raise CliError(f"missing required option --{name}")
        else:
            options[attr] = default
    return options


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}")
    return p


def _write_mono_tsv(path: Path, monos: list[ds.MonoProductReaction]) -> None:
    # The parent reaction id is kept verbatim (children of one parent share
    # it) so pathway files can still reference their reactions.
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# reaction_id\tec_numbers\treactant_smiles\tproduct_smiles\n")
        for mono in monos:
            fh.write(
                f"{mono.parent_id}\t{';'.join(mono.ec_numbers)}\t"
                f"{'.'.join(mono.reactant_keys)}\t{mono.product_key}\n"
            )


def cmd_ingest(options: dict) -> int:
    reactions = ds.read_reactions_tsv(_require_file(options["reactions"], "reactions file"))
    table_entries = (
        ds.read_compounds_tsv(_require_file(options["compounds"], "compounds file"))
        if options["compounds"]
        else []
    )
    stats = ds.CorpusStats()
    table = ds.build_compound_table(table_entries, stats)
    usable, clean_stats = ds.clean_reactions(reactions, table)
    clean_stats.compounds_unresolved += stats.compounds_unresolved
    clean_stats.generic_fixed = stats.generic_fixed
    monos = ds.split_mono_product(usable, clean_stats)
    ds.flag_disjoint_products(monos, clean_stats)
    out_dir = Path(options["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_mono_tsv(out_dir / "mono_reactions.tsv", monos)
    with open(out_dir / "corpus_stats.json", "w", encoding="utf-8") as fh:
        json.dump(clean_stats.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"ingest: {clean_stats.reactions_in} reactions in, "
        f"{clean_stats.reactions_dropped} dropped, "
        f"{clean_stats.mono_reactions} mono-product reactions, "
        f"{clean_stats.unique_products} unique products"
    )
    if not monos:
        print("ingest: no usable reactions", file=sys.stderr)
        return EXIT_EMPTY
    return EXIT_OK


def cmd_augment(options: dict) -> int:
    corpus = ds.read_reactions_tsv(_require_file(options["corpus"], "corpus file"))
    templates = load_templates(_require_file(options["templates"], "template file"))
    if not templates:
        print("augment: zero templates", file=sys.stderr)
        return EXIT_EMPTY
    usable, stats = ds.clean_reactions(corpus, {})
    positives = ds.split_mono_product(usable, stats)
    negatives = ds.augment_negatives(
        positives, templates, max_workers=options["threads"], stats=stats
    )
    if options["neg_fraction"] < 1.0:
        combined = ds.subsample_negatives(
            positives + negatives, options["neg_fraction"], options["seed"]
        )
    else:
        combined = positives + negatives
    train_set, test_set = ds.split_train_test(
        combined, options["test_fraction"], options["seed"]
    )
    out_dir = Path(options["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ds.write_examples_tsv(out_dir / "onestep_train.tsv", train_set)
    ds.write_examples_tsv(out_dir / "onestep_test.tsv", test_set)

    if options["pathways"]:
        pathways = ds.read_pathways_tsv(
            _require_file(options["pathways"], "pathways file")
        )
        chains = ds.extract_chains(pathways, positives)
        negatives_by_product: dict[str, list[tuple[str, ...]]] = {}
        for neg in negatives:
            negatives_by_product.setdefault(neg.product_key, []).append(
                neg.reactant_keys
            )
        chain_negatives = ds.make_pathway_pairs(chains, negatives_by_product)
        chain_all = chains + chain_negatives
        chain_train, chain_test = ds.split_train_test(
            chain_all, options["test_fraction"], options["seed"]
        )
        ds.write_examples_tsv(out_dir / "twostep_train.tsv", chain_train)
        ds.write_examples_tsv(out_dir / "twostep_test.tsv", chain_test)
        print(
            f"augment: {len(chains)} positive chains, "
            f"{len(chain_negatives)} negative chains"
        )

    with open(out_dir / "augment_stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"augment: {len(positives)} positives, "
        f"{stats.negatives_generated} negatives generated, "
        f"{len(train_set)} train rows, {len(test_set)} test rows"
    )
    return EXIT_OK


_MODEL_SPECS = {"nn1pr": nn1pr_spec, "nn2pr": nn2pr_spec}
_MODEL_WIDTHS = {"nn1pr": 1024, "nn2pr": 1536}


def cmd_train(options: dict) -> int:
    model_name = options["model"]
    if model_name not in _MODEL_SPECS:
        raise CliError(f"unknown model {model_name!r}; use nn1pr or nn2pr")
    rows = ds.read_examples_tsv(_require_file(options["data"], "training data"))
    if not rows:
        print("train: empty dataset", file=sys.stderr)
        return EXIT_EMPTY
    features, labels, weights = ds.features_for(rows)
    expected = _MODEL_WIDTHS[model_name]
    if features.shape[1] != expected:
        print(
            f"train: feature width {features.shape[1]} does not match "
            f"{model_name} input width {expected}",
            file=sys.stderr,
        )
        return EXIT_EMPTY
    pos_weight: float | None = None
    if options["pos_weight"] == "auto":
        n_pos = int(labels.sum())
        n_neg = len(labels) - n_pos
        if n_pos:
            pos_weight = n_neg / n_pos
    elif options["pos_weight"]:
        pos_weight = float(options["pos_weight"])
    config = TrainConfig(
        learning_rate=options["lr"],
        batch_size=options["batch"],
        epochs=options["epochs"],
        seed=options["seed"],
        positive_weight=pos_weight,
    )
    spec = _MODEL_SPECS[model_name](options["dropout"])
    model, history = train(spec, features, labels, config, weights)
    print(
        f"train: {model_name} with {model.parameter_count} parameters, "
        f"{options['epochs']} epochs"
    )
    with open(options["out"], "wb") as fh:
        fh.write(save_weights(model))
    if options["history"]:
        with open(options["history"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,loss,accuracy\n")
            for epoch, (loss, acc) in enumerate(
                zip(history.loss, history.accuracy), 1
            ):
                fh.write(f"{epoch},{loss:.6f},{acc:.6f}\n")
    return EXIT_OK


def cmd_eval(options: dict) -> int:
    with open(_require_file(options["weights"], "weight file"), "rb") as fh:
        model = load_weights(fh.read())
    rows = ds.read_examples_tsv(_require_file(options["data"], "test data"))
    if not rows:
        print("eval: empty dataset", file=sys.stderr)
        return EXIT_EMPTY
    kind = {1024: "nn1pr", 1536: "nn2pr"}.get(model.input_dim)
    if kind is None:
        raise CliError(f"weight file has unexpected input width {model.input_dim}")
    fingerprinter = Fingerprinter()
    units = group_rows(rows)
    model_report = evaluate_ranking(
        row_scorer(kind, fingerprinter, model), units, scorer_name=kind
    )
    baseline_report = evaluate_ranking(
        row_scorer("baseline", fingerprinter), units, scorer_name="baseline"
    )
    write_report_json(options["out"], [model_report, baseline_report])
    if options["tsv"]:
        write_report_tsv(options["tsv"], model_report)
    for report in (model_report, baseline_report):
        top10 = report.coverage.at(10)
        print(f"eval: {report.scorer_name} top-10 coverage {top10:.3f}")
    return EXIT_OK


def _read_stop_set(path: str) -> frozenset[str]:
    keys = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                keys.add(canonicalize(parse_smiles(line)))
    return frozenset(keys)


def _read_gold_tsv(path: str) -> list[tuple[str, tuple[str, ...]]]:
    steps = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            product, precursors = line.split("\t")
            steps.append((product, tuple(precursors.split("."))))
    return steps


def cmd_retro(options: dict) -> int:
    templates = load_templates(_require_file(options["templates"], "template file"))
    if not templates:
        print("retro: zero templates", file=sys.stderr)
        return EXIT_EMPTY
    with open(_require_file(options["nn1"], "nn1 weight file"), "rb") as fh:
        nn1 = load_weights(fh.read())
    nn2 = None
    if options["nn2"]:
        with open(_require_file(options["nn2"], "nn2 weight file"), "rb") as fh:
            nn2 = load_weights(fh.read())
    stop_set = (
        _read_stop_set(_require_file(options["stop_set"], "stop-set file"))
        if options["stop_set"]
        else frozenset()
    )
    gold = (
        _read_gold_tsv(_require_file(options["gold"], "gold pathway file"))
        if options["gold"]
        else None
    )
    config = SearchConfig(
        max_steps=options["max_steps"],
        beam_width=options["beam"],
        prune_threshold=options["prune"],
        stop_set=stop_set,
        max_nodes=options["max_nodes"],
    )
    try:
        report = run_retro(
            options["target"],
            templates,
            nn1,
            nn2,
            config,
            gold_steps=gold,
            max_workers=options["threads"],
        )
    except TargetParseError as exc:
        raise CliError(str(exc)) from exc
    report.save_json(options["out"])
    if options["pathways_tsv"]:
        with open(options["pathways_tsv"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# rank\taggregate_score\tsteps\n")
            for p in report.pathways:
                steps = ";".join(
                    f"{s.product_key}>{'.'.join(s.precursor_keys)}"
                    for s in p.steps
                )
                fh.write(f"{p.aggregate_rank}\t{p.aggregate_score:.6f}\t{steps}\n")
    print(
        f"retro: {len(report.pathways)} pathways, "
        f"{sum(level['generated'] for level in report.levels)} candidates "
        f"generated, budget_exceeded={report.budget_exceeded}"
    )
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "retro": cmd_retro,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        options = _resolve_options(args)
        return _COMMANDS[args.command](options)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # invariant violation
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
