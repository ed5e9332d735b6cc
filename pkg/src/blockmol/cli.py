"""Command line interface for the whole pipeline.

Data goes to stdout, diagnostics to stderr, so streams can be piped and
compared byte for byte.  Config resolution order: built-in defaults, then
a JSON config file with flat namespaced keys (e.g. "search.C"), then
explicit command line flags.  Exit codes: 0 success, 1 usage error, 2
runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import replace

import numpy as np

from . import chem, data, diffusion, metrics
from .chem import ChemError, Vocab, tokenize, try_parse
from .curate import CurationConfig, curate_stream
from .decode import DecodeConfig, Decoder, write_jsonl
from .fragment import FragmentConfig, TooLong, pad_and_partition
from .oracle import OracleError, SurrogateOracle, list_profiles, load_profile
from .search import GateConfig, SearchConfig, run_search

log = logging.getLogger("blockmol")

DEFAULTS = {
    "seed": 42,
    "workers": 1,
    "search.N_max": 10000,
    "search.C": 2.1,
    "search.lambda": 0.5,
    "search.beta": 2.0,
    "search.C_init": 20,
    "search.C_base": 8,
    "search.C_min": 8,
    "search.C_max": 10,
    "search.M": 64,
    "search.n_sim": 1,
    "search.D_max": 100,
    "gate.tau_qed": 0.5,
    "gate.tau_sa": 5.0,
    "gate.R_pen": -1.0,
    "sample.temperature": 1.1,
    "sample.nucleus": 1.0,
    "sample.K": 8,
    "sample.L": 512,
    "sample.T": 128,
    "sample.mode": "confidence",
    "train.epochs": 5,
    "train.lr": 0.1,
    "train.dim": 24,
    "train.window": 12,
    "train.K": 8,
    "train.L": 48,
}


class UsageError(Exception):
    """Raised instead of argparse's default SystemExit(2)."""


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(message)


def load_config_file(path) -> dict:
    with open(path) as fh:
        loaded = json.load(fh)
    unknown = sorted(set(loaded) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return loaded


def resolve(args, flag_map: dict) -> dict:
    """defaults <- config file <- explicit flags, in that order."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config_file(args.config))
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _read_lines(path):
    fh = sys.stdin if path == "-" else open(path)
    try:
        for line in fh:
            line = line.strip()
            if line:
                yield line
    finally:
        if fh is not sys.stdin:
            fh.close()


def _load_samples(path) -> list[str]:
    """SMILES list from a plain file or decode/search JSON-lines output."""
    out = []
    for line in _read_lines(path):
        if line.startswith("{"):
            out.append(json.loads(line)["smiles"])
        else:
            out.append(line)
    return out


def _manifest(path, command: str, cfg: dict, extra: dict):
    if not path:
        return
    record = {"command": command, "config": cfg, **extra,
              "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")


# -- subcommands


def cmd_validate(args) -> int:
    failures = total = 0
    for total, smiles in enumerate(_read_lines(args.infile), start=1):
        _, err = try_parse(smiles)
        if err is not None:
            failures += 1
        sys.stdout.write(json.dumps({
            "smiles": smiles,
            "valid": err is None,
            "error": type(err).__name__ if err else None,
            "position": getattr(err, "position", None) if err else None,
        }) + "\n")
    log.info("validate: %d lines, %d failures", total, failures)
    return 0


def cmd_curate(args) -> int:
    cfg = CurationConfig()
    accepted, report = curate_stream(_read_lines(args.infile), cfg)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w")
    try:
        for mol in accepted:
            out.write(mol.smiles + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report.to_json() + "\n")
    else:
        sys.stderr.write(report.to_json() + "\n")
    return 0


def _tokenized_corpus(lines, frag: FragmentConfig):
    token_lists, skipped = [], 0
    for smiles in lines:
        tokens = tokenize(smiles)
        if len(tokens) > frag.length - 2:
            skipped += 1
            continue
        token_lists.append(tokens)
    if skipped:
        log.warning("skipped %d over-length molecules", skipped)
    return token_lists


def cmd_train(args) -> int:
    cfg = resolve(args, {"epochs": "train.epochs", "lr": "train.lr",
                         "dim": "train.dim", "window": "train.window",
                         "block": "train.K", "length": "train.L",
                         "seed": "seed"})
    frag = FragmentConfig(cfg["train.L"], cfg["train.K"])
    lines = data.toy_corpus(args.toy) if args.infile is None \
        else list(_read_lines(args.infile))
    token_lists = _tokenized_corpus(lines, frag)
    vocab = Vocab.build(token_lists)
    corpus = [pad_and_partition(t, frag, vocab) for t in token_lists]
    params = diffusion.PredictorParams.init(
        len(vocab), cfg["train.dim"], cfg["train.window"], seed=cfg["seed"])
    params, history = diffusion.train(
        params, corpus, epochs=cfg["train.epochs"], lr=cfg["train.lr"],
        seed=cfg["seed"])
    diffusion.save_checkpoint(args.out, params, vocab, cfg["seed"])
    sys.stdout.write(json.dumps({
        "examples": len(corpus), "vocab_size": len(vocab),
        "epochs": cfg["train.epochs"], "nelbo_history": history,
    }) + "\n")
    _manifest(args.manifest, "train", cfg, {"checkpoint": args.out})
    return 0


def _decode_config(cfg: dict) -> DecodeConfig:
    return DecodeConfig(
        block=cfg["sample.K"], length=cfg["sample.L"], budget=cfg["sample.T"],
        temperature=cfg["sample.temperature"], nucleus_p=cfg["sample.nucleus"],
        mode=cfg["sample.mode"], seed=cfg["seed"])


def cmd_sample(args) -> int:
    cfg = resolve(args, {"k_sample": "sample.K", "length": "sample.L",
                         "temp": "sample.temperature", "nucleus": "sample.nucleus",
                         "steps": "sample.T", "mode": "sample.mode",
                         "seed": "seed"})
    params, vocab, _ = diffusion.load_checkpoint(args.checkpoint)
    decoder = Decoder(params, _decode_config(cfg), vocab)
    prefix = tokenize(args.prefix) if args.prefix else None
    records = decoder.generate(args.n, prefix)
    write_jsonl(records, sys.stdout, cfg["seed"])
    _manifest(args.manifest, "sample", cfg, {"checkpoint": args.checkpoint,
                                             "n": args.n})
    return 0


def cmd_search(args) -> int:
    cfg = resolve(args, {
        "budget": "search.N_max", "c": "search.C", "lam": "search.lambda",
        "beta": "search.beta", "c_init": "search.C_init",
        "c_base": "search.C_base", "c_min": "search.C_min",
        "c_max": "search.C_max", "m": "search.M", "n_sim": "search.n_sim",
        "d_max": "search.D_max", "qed": "gate.tau_qed", "sa": "gate.tau_sa",
        "k_sample": "sample.K", "length": "sample.L", "steps": "sample.T",
        "temp": "sample.temperature", "nucleus": "sample.nucleus",
        "seed": "seed"})
    if args.unconstrained:
        cfg["gate.tau_qed"], cfg["gate.tau_sa"] = 0.0, math.inf
    params, vocab, _ = diffusion.load_checkpoint(args.checkpoint)
    profile = load_profile(args.target)
    search_cfg = SearchConfig(
        n_max=cfg["search.N_max"], c=cfg["search.C"], lam=cfg["search.lambda"],
        beta=cfg["search.beta"], c_init=cfg["search.C_init"],
        c_base=cfg["search.C_base"], c_min=cfg["search.C_min"],
        c_max=cfg["search.C_max"], m=cfg["search.M"], n_sim=cfg["search.n_sim"],
        d_max=cfg["search.D_max"], decode=_decode_config(cfg),
        gate=GateConfig(cfg["gate.tau_qed"], cfg["gate.tau_sa"],
                        cfg["gate.R_pen"]),
        seed=cfg["seed"])
    outcome = run_search(search_cfg, params, vocab, SurrogateOracle(profile))
    for result in outcome.results:
        sys.stdout.write(result.to_json_line() + "\n")
    sys.stdout.write(json.dumps(outcome.summary()) + "\n")
    if args.rollouts:
        with open(args.rollouts, "w") as fh:
            for result in outcome.rollouts:
                fh.write(result.to_json_line() + "\n")
    _manifest(args.manifest, "search", cfg,
              {"target": profile.name, "checkpoint": args.checkpoint,
               "iterations": outcome.iterations, "aborted": outcome.aborted})
    return 0


def cmd_eval(args) -> int:
    samples = _load_samples(args.infile)
    oracle = SurrogateOracle(load_profile(args.target))
    report = metrics.standard_metrics(samples, oracle)
    sys.stdout.write(json.dumps(report.to_dict()) + "\n")
    return 0


# -- selftest


def _selftests():
    from . import decode as dec
    from . import search as srch
    from .curate import classify
    from .oracle import surrogate_qed

    def roundtrip():
        for s in ("CC(=O)Oc1ccccc1C(=O)O", "C[C@@H](N)C(=O)O", "c1ccc2ccccc2c1"):
            assert chem.detokenize(tokenize(s)) == s

    def aspirin_mw():
        mol, err = try_parse("CC(=O)Oc1ccccc1C(=O)O")
        assert err is None
        mw = chem.descriptors(mol).approx_mw
        assert abs(mw - 180.16) < 0.01, mw

    def tanimoto_self():
        mol, _ = try_parse("c1ccncc1")
        fp = chem.fingerprint(mol)
        assert chem.tanimoto(fp, fp) == 1.0

    def uniform_nelbo():
        # one masked token, uniform 4-token model, t=0.5: weight 2, CE ln 4
        vocab = Vocab.build([["C", "N", "O", "F"]])
        frag = FragmentConfig(4, 2)
        params = diffusion.PredictorParams.zeros(len(vocab), 4, 1)
        bt = pad_and_partition(["C"], frag, vocab)
        noised = bt.ids.copy()
        noised[1] = Vocab.MASK_ID
        report = diffusion.nelbo_loss(params, bt, np.array([0.5, 0.5]), noised)
        assert abs(report.nelbo - 2 * math.log(len(vocab))) < 1e-12

    def train_mask():
        for K in (2, 4):
            frag = FragmentConfig(8, K)
            mask = diffusion.build_train_mask(frag).matrix
            L = frag.length
            for q in range(2 * L):
                for k in range(2 * L):
                    if q < L and k < L:
                        want = k // K == q // K  # bidirectional inside block
                    elif q < L:
                        want = (k - L) // K < q // K  # clean strictly before
                    elif k < L:
                        want = False
                    else:
                        want = (k - L) // K <= (q - L) // K
                    assert mask[q, k] == want

    def first_hitting_mean():
        mean = np.mean([dec.first_hitting_step(1.0, 4, dec.key_uniform(9, i))
                        for i in range(10_000)])
        assert abs(mean - 4 / 5) < 0.02, mean

    def mcts_arithmetic():
        node = srch.SearchNode(partial=np.zeros(1, dtype=np.int64), depth=0,
                               cap=8)
        node.n, node.r_bar, node.r_max = 1, 1.0, 2.0
        score = srch.uct_score(node, parent_n=1, lam=0.5, c=2.1)
        assert score == 1.5  # ln 1 = 0 kills the exploration term
        parent = srch.SearchNode(partial=np.zeros(1, dtype=np.int64), depth=0,
                                 cap=8)
        parent.r_bar = 0.0
        child = srch.SearchNode(partial=np.zeros(1, dtype=np.int64), depth=1,
                                cap=8)
        child.n, child.r_bar = 1, 4.7
        parent.children.append(child)
        assert srch.adaptive_cap(parent, 2.0, 8, 10) == 9
        fresh = srch.SearchNode(partial=np.zeros(1, dtype=np.int64), depth=0,
                                cap=8)
        srch.backpropagate([fresh], 1.0)
        srch.backpropagate([fresh], 3.0)
        assert fresh.n == 2 and fresh.r_bar == 2.0 and fresh.r_max == 3.0

    def qed_points():
        perfect = chem.DescriptorSet(
            heavy_atoms=20, ring_count=2, max_ring_size=6, bridgehead_count=0,
            approx_mw=300.0, rotatable_proxy=3, hbd_proxy=1, hba_proxy=3,
            tpsa_proxy=50.0, logp_proxy=2.0, element_set=frozenset({"C"}),
            charge_total=0, radical_flag=False)
        assert surrogate_qed(perfect) == 1.0
        heavy = replace(perfect, approx_mw=600.0)
        assert abs(surrogate_qed(heavy) - math.exp(-1)) < 1e-12

    def curation_counts():
        lines = ["CCCCCCCCCCCCCCCC", "CC(=O)Nc1ccc(O)cc1", "CC(=O)Nc1ccc(O)cc1"]
        accepted, report = curate_stream(lines, CurationConfig())
        assert len(accepted) == 1
        assert report.rejections["physchem"] == 1
        assert report.rejections["diversity"] == 1
        assert report.reconciles()

    def circle_counts():
        mol, _ = try_parse("c1ccccc1")
        fp = chem.fingerprint(mol)
        assert metrics.circles([fp] * 5) == 1

    return [
        ("tokenize-roundtrip", roundtrip),
        ("aspirin-mw", aspirin_mw),
        ("tanimoto-identity", tanimoto_self),
        ("uniform-nelbo", uniform_nelbo),
        ("train-mask-predicates", train_mask),
        ("first-hitting-mean", first_hitting_mean),
        ("mcts-arithmetic", mcts_arithmetic),
        ("qed-reference-points", qed_points),
        ("curation-goldens", curation_counts),
        ("circles-trivial", circle_counts),
    ]


def cmd_selftest(args) -> int:
    failures = 0
    for name, check in _selftests():
        try:
            check()
        except Exception as failure:
            failures += 1
            sys.stdout.write(f"FAIL {name}: {failure!r}\n")
        else:
            sys.stdout.write(f"PASS {name}\n")
    sys.stdout.write(f"{'OK' if not failures else 'FAILED'}: "
                     f"{len(_selftests()) - failures}/{len(_selftests())}\n")
    return 2 if failures else 0


# -- wiring


def build_parser() -> Parser:
    parser = Parser(prog="blockmol", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--workers", type=int, default=None,
                        help="concurrency budget (sequential baseline uses 1)")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("validate", help="per-line SMILES validity report")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("curate", help="run the curation pipeline")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", help="train the reference predictor")
    p.add_argument("--in", dest="infile", default=None,
                   help="SMILES file; omit to use the built-in toy corpus")
    p.add_argument("--toy", type=int, default=500,
                   help="toy corpus size when --in is omitted")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--block", type=int, default=None)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate molecules from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--k-sample", type=int, default=None)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--temp", type=float, default=None)
    p.add_argument("--nucleus", type=float, default=None)
    p.add_argument("--steps", type=int, default=None, help="per-block budget")
    p.add_argument("--mode", choices=("confidence", "sample"), default=None)
    p.add_argument("--prefix", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("search", help="gated tree search against a target")
    p.add_argument("--target", required=True,
                   help=f"profile name ({', '.join(list_profiles())}) or path")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--budget", type=int, default=None, help="iterations N_max")
    p.add_argument("--qed", type=float, default=None)
    p.add_argument("--sa", type=float, default=None)
    p.add_argument("--unconstrained", action="store_true")
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--c-init", type=int, default=None)
    p.add_argument("--c-base", type=int, default=None)
    p.add_argument("--c-min", type=int, default=None)
    p.add_argument("--c-max", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--n-sim", type=int, default=None)
    p.add_argument("--d-max", type=int, default=None)
    p.add_argument("--k-sample", type=int, default=None)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--temp", type=float, default=None)
    p.add_argument("--nucleus", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--rollouts", default=None,
                   help="also write every valid rollout to this file")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="metrics report over a sample file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--target", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the embedded example checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as usage:
        sys.stderr.write(f"error: {usage}\n")
        return 1
    except SystemExit as stop:  # --help
        return int(stop.code or 0)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as usage:
        sys.stderr.write(f"error: {usage}\n")
        return 1
    except (ChemError, OracleError, TooLong, diffusion.OutOfRange,
            diffusion.VocabMismatch, diffusion.EmptyCorpus,
            OSError, ValueError, RuntimeError, json.JSONDecodeError) as failure:
        log.error("%s", failure)
        return 2


if __name__ == "__main__":
    sys.exit(main())
