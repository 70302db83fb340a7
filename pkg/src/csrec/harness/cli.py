"""``csrec`` command line.

Exit codes: 0 success, 1 invalid input or usage, 2 a verification suite failed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from ..exceptions import CsrecError
from . import pipeline, storage
from .config import ExperimentConfig, config_from_dict, load_config
from .verify import SUITES, run_suite

EXIT_OK, EXIT_INVALID, EXIT_VERIFY = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _floats(text):
    return [float(x) for x in text.split(",") if x]


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="csrec", description="Causal sequential recommendation experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="experiment config (JSON); defaults apply when omitted")

    g = sub.add_parser("gen-data", help="simulate catalog, users and sequences")
    with_config(g)
    g.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="fit the observational model or CSRec")
    with_config(t)
    t.add_argument("--mode", choices=("obs", "csrec"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--ftilde", help="observational checkpoint (required for --mode csrec)")
    t.add_argument("--out", required=True, help="checkpoint path; the loss trace goes next to it")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    with_config(e)
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--mode", choices=("obs", "intv"), required=True)
    e.add_argument("--alpha", type=_floats, help="comma-separated, e.g. 0.2,0.5")
    e.add_argument("--k", type=_ints, help="comma-separated, e.g. 5,10,20")
    e.add_argument("--beta", type=int)
    e.add_argument("--split", choices=("train", "valid", "test"))
    e.add_argument("--rollout", action="store_true", help="feed back predicted decisions within the beta window")
    e.add_argument("--out", required=True, help="report directory")

    r = sub.add_parser("ter", help="per-item treatment effects")
    r.add_argument("--data", required=True)
    r.add_argument("--ckpt", required=True, help="interventional model checkpoint")
    r.add_argument("--ftilde", required=True, help="observational checkpoint")
    r.add_argument("--items", type=_ints, help="comma-separated item ids (default: whole catalog)")
    r.add_argument("--context", choices=("own", "intv", "obs"), default="own")
    r.add_argument("--split", choices=("train", "valid", "test", "all"), default="test")
    r.add_argument("--out", required=True, help="CSV path")

    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("--suite", choices=SUITES + ("all",), required=True)

    run = sub.add_parser("run", help="full pipeline: data, both models, reports, TER")
    with_config(run)
    run.add_argument("--out", help="run directory (default: output_dir of the config)")
    return p


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else config_from_dict({})


def _eval_config(args, cfg: ExperimentConfig):
    overrides = {"alpha": args.alpha, "k": args.k, "beta": args.beta, "split": args.split}
    raw = {**vars(cfg.eval), **{k: v for k, v in overrides.items() if v is not None}}
    if args.rollout:
        raw["mode"] = "rollout"
    return config_from_dict({"eval": raw}).eval


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            manifest = pipeline.gen_data(_config(args.config), args.out)
            print(f"dataset {manifest['dataset_hash']} written to {args.out}")
        elif args.command == "train":
            cfg = _config(args.config)
            ckpt = pipeline.train(args.mode, args.data, cfg, args.out, ftilde_path=args.ftilde)
            print(f"{ckpt.role} checkpoint {storage.sha256_file(args.out)} written to {args.out}")
        elif args.command == "eval":
            cfg = _config(args.config)
            ev = _eval_config(args, cfg)
            report = pipeline.evaluate(args.data, args.ckpt, args.mode, ev, cfg.seed)
            name = f"{report.metadata['role']}_{args.mode}"
            pipeline.write_report(report, args.out, name)
            sys.stdout.write(report.to_markdown())
        elif args.command == "ter":
            rows = pipeline.ter_rows(args.data, args.ckpt, args.ftilde, args.items, args.context, args.split)
            os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
            storage.write_text(args.out, storage.ter_csv(rows))
            print(json.dumps(pipeline.summarize_ter(rows)))
        elif args.command == "verify":
            names = SUITES if args.suite == "all" else (args.suite,)
            ok = True
            for name in names:
                res = run_suite(name)
                print("\n".join(res.lines()))
                ok &= res.passed
            return EXIT_OK if ok else EXIT_VERIFY
        elif args.command == "run":
            cfg = _config(args.config)
            out = args.out or cfg.output_dir
            manifest = pipeline.run_pipeline(cfg, out)
            print(f"run written to {out} (dataset {manifest['dataset_hash']})")
    except (CsrecError, ValueError, OSError) as exc:
        print(f"csrec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
