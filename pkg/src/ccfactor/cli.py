"""Command-line entry point: ``ccfactor <verb> ...``.

Exit status is 0 on success, 2 for invalid input (bad config, manifest,
checkpoint or arguments) and 3 for numerical failures (divergence, NaN
gradients, failed gradient check). Set ``CCFACTOR_LOG`` to a logging level
name (``DEBUG``, ``INFO``, ``WARNING``) to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .autodiff import Graph, NumericalError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
log = logging.getLogger("ccfactor")


def _configure_logging() -> None:
    level = os.environ.get("CCFACTOR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_gen_corpus(args) -> int:
    from .noise import SyntheticCorpusSpec, generate_synthetic_corpus, write_corpus

    try:
        data = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read corpus spec {args.spec}: {exc}") from None
    try:
        spec = SyntheticCorpusSpec.from_dict(data)
    except TypeError as exc:
        raise ValidationError(f"corpus spec: {exc}") from None
    manifest = write_corpus(generate_synthetic_corpus(spec), args.out, spec)
    _emit({"manifest": str(manifest), "utterances": spec.n_utterances})
    return EXIT_OK


def _load_config(path: str):
    from .config import RunConfig

    if not Path(path).exists():
        raise ValidationError(f"config {path} not found")
    return RunConfig.load(path)


def cmd_train(args) -> int:
    from .train import run_training

    cfg = _load_config(args.config)
    if args.out_dir:
        cfg = cfg.with_(out_dir=args.out_dir)
    result = run_training(cfg, resume=args.resume)
    summary = {"run_dir": str(result.run_dir), "steps": len(result.trace), "checkpoint": str(result.checkpoint)}
    if result.trace:
        summary["final"] = {k: v for k, v in result.trace[-1].items() if k.startswith("L_")}
    if result.report is not None:
        summary["report"] = result.report.to_dict()
    _emit(summary)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .noise import ALPHA_GRID, MixSpec
    from .train import run_evaluation

    if not Path(args.checkpoint).exists():
        raise ValidationError(f"checkpoint {args.checkpoint} not found")
    if not Path(args.manifest).exists():
        raise ValidationError(f"manifest {args.manifest} not found")
    alphas = ALPHA_GRID if args.grid else (args.alpha or [])
    specs = [MixSpec(a, seed=args.mix_seed, domain=args.domain) for a in alphas] or None
    report = run_evaluation(args.checkpoint, args.manifest, specs, probes=args.probes)
    if args.out:
        report.to_json(args.out)
    print(report.to_json())
    return EXIT_OK


def gradcheck_config(cfg, n_frames: int = 6, directions: int = 2, seed: int = 0, eps: float = 1e-5):
    """Directional gradient check of the full objective on a random tiny batch built from ``cfg``."""
    from .gradcheck import check_gradients, jitter_biases
    from .model import Batch, FactorModel
    from .noise import SyntheticCorpusSpec

    vocab_size = len(SyntheticCorpusSpec.from_dict(cfg.corpus).vocab) if cfg.corpus else 4
    model = FactorModel(cfg, vocab_size)
    rng = np.random.default_rng(seed)
    params = jitter_biases(model.init_params(seed), rng)
    n = max(2, cfg.contrastive.M)
    d = model.frame_dim
    lengths = rng.integers(max(2, n_frames // 2), n_frames + 1, size=n)
    lengths[0] = n_frames
    frames = rng.standard_normal((n, n_frames, d))
    params["mask_embedding"] = rng.standard_normal(d) * 0.1
    batch = Batch(
        inputs=frames,
        targets=frames + 0.1 * rng.standard_normal(frames.shape),
        frame_mask=rng.random((n, n_frames)) < cfg.pi_mask,
        lengths=lengths,
        labels=[list(rng.integers(1, vocab_size, size=1 + int(lengths[i]) // 3)) for i in range(n)],
        context_ids=[None] * n,
        ids=[f"gc{i}" for i in range(n)],
    )

    def loss_fn(g: Graph, p):
        nodes = g.bind(p)
        return model.losses(g, nodes, batch, np.random.default_rng(seed + 1))["L_total"]

    return check_gradients(loss_fn, params, eps=eps, directions=directions, seed=seed)


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args.config)
    report = gradcheck_config(cfg, directions=args.directions)
    name, worst = report.worst()
    _emit({"max_relative_error": worst, "worst_parameter": name, "tolerance": args.tol, "eps": report.eps,
           "parameters": len(report.errors)})
    if not report.passed(args.tol):
        log.error("gradient check failed: %s has relative error %.3g", name, worst)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import build_report

    outputs = build_report(args.run_dir, svg=not args.no_svg)
    _emit({k: str(v) for k, v in outputs.items()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccfactor", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("gen-corpus", help="synthesize a factor-labelled corpus")
    s.add_argument("spec")
    s.add_argument("out")
    s.set_defaults(fn=cmd_gen_corpus)

    s = sub.add_parser("train", help="train from a run configuration")
    s.add_argument("config")
    s.add_argument("--resume", help="epoch checkpoint written by the same configuration")
    s.add_argument("--out-dir", help="override the configured output directory")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="error rates and probes for a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("--alpha", type=float, action="append", help="mix rate (repeatable)")
    s.add_argument("--grid", action="store_true", help="evaluate the full mix-rate grid 0, 0.1, 0.25, 0.3")
    s.add_argument("--domain", choices=("waveform", "feature"), default="waveform")
    s.add_argument("--mix-seed", type=int, default=0)
    s.add_argument("--probes", action="store_true", help="run linear probes when context ids exist")
    s.add_argument("--out", help="write the report JSON here as well")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    s.add_argument("config")
    s.add_argument("--directions", type=int, default=2)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("report", help="per-epoch CSV and SVG loss plots for a run directory")
    s.add_argument("run_dir")
    s.add_argument("--no-svg", action="store_true")
    s.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
