"""Command-line entry point: ``eeo run|lemma-check|gradcheck|diagnose|version``.

Exit codes: 0 success, 1 a check or run failed, 2 usage or config error.
"""
import argparse
import sys

import numpy as np

from .. import __version__, rng
from ..diagnostics import snapshot
from ..errors import CheckpointError, ConfigError, EEOError, ExperimentError
from ..linalg import singular_values
from ..optimizer import StepReport
from .checkpoint import load_checkpoint
from .config import parse_config
from .experiment import build_task, run_experiment
from .gradcheck import TOL, gradient_check_suite
from .lemmas import CHECKS, lemma_check

OK, FAILED, USAGE = 0, 1, 2


def _fmt_metrics(metrics):
    return "  ".join(
        f"{split}: " + " ".join(f"{k}={v:.6g}" for k, v in vals.items()) for split, vals in metrics.items()
    )


def cmd_run(args):
    cfg = parse_config(args.config)
    log = run_experiment(cfg, args.out)
    print(f"experiment {cfg.experiment} ({cfg.task}): {len(log.reports)} steps, {log.escaped_count} escapes")
    print(f"last iterate loss {log.final_loss:.6g} (metrics below use the EMA weights)")
    print(f"metrics   {_fmt_metrics(log.metrics)}")
    if log.baseline:
        print(f"baseline  {_fmt_metrics(log.baseline)}")
    print(f"outputs in {log.out_dir}")
    return OK


def cmd_lemma_check(args):
    text, passed = lemma_check(args.which, args.seed)
    sys.stdout.write(text)
    return OK if passed else FAILED


def cmd_gradcheck(args):
    passed = True
    for name, err in gradient_check_suite(args.seed, args.points):
        ok = err <= TOL
        passed &= ok
        print(f"{name:28s} worst relative error {err:.3e}  {'PASS' if ok else 'FAIL'}")
    return OK if passed else FAILED


def cmd_diagnose(args):
    cfg = parse_config(args.config)
    task = build_task(cfg)
    w = load_checkpoint(args.checkpoint, expected_dim=task.obj.dim)
    loss = float(task.obj.loss(w))
    report = StepReport(-1, loss, loss, float(np.linalg.norm(task.obj.grad(w))), False, False, None, 0.0)
    Z_repr = A = None
    if task.probe is not None:
        Z_repr, A = task.probe(w)
    rec = snapshot(-1, report, Z_repr, A)
    for key in ("loss", "grad_norm", "erank_repr", "erank_attn", "nuclear_attn", "attn_entropy"):
        value = getattr(rec, key)
        print(f"# {key} = {'' if value is None else repr(value)}")
    print(f"# metrics {_fmt_metrics(task.evaluate(w))}")
    if Z_repr is not None:
        text = singular_values(Z_repr).to_csv()
        if args.spectrum:
            with open(args.spectrum, "w", encoding="utf-8") as f:
                f.write(text)
        else:
            sys.stdout.write(text)
    return OK


def cmd_version(args):
    print(f"eeopt {__version__} ({rng.GENERATOR_ID})")
    return OK


def build_parser():
    p = argparse.ArgumentParser(prog="eeo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides out_dir)")
    r.set_defaults(func=cmd_run)

    lc = sub.add_parser("lemma-check", help="numerical checks of the local guarantees")
    lc.add_argument("which", choices=CHECKS + ("all",))
    lc.add_argument("--seed", type=int, default=0)
    lc.set_defaults(func=cmd_lemma_check)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--points", type=int, default=10)
    g.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("diagnose", help="diagnostics for a saved checkpoint")
    d.add_argument("checkpoint")
    d.add_argument("config")
    d.add_argument("--spectrum", help="write the representation spectrum CSV here instead of stdout")
    d.set_defaults(func=cmd_diagnose)

    v = sub.add_parser("version", help="print version and generator id")
    v.set_defaults(func=cmd_version)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except (ExperimentError, CheckpointError, EEOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
