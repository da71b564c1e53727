import argparse
import sys

from cascadesr import version
from cascadesr.errors import CascadeError
from cascadesr.models import TrainConfig
from cascadesr.workspace import Workspace


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadesr",
        description="Scale-cascaded diffusion posterior sampling for super-resolution.",
    )
    parser.add_argument("--workdir", default=".", help="root of every relative path")
    parser.add_argument("--quiet", action="store_true", help="no status lines or bars")
    parser.add_argument("--version", action="version", version=f"%(prog)s {version}")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="write synthetic train/test phantoms")
    gen.add_argument("--kind", choices=["ellipses", "texture"], default="texture")
    gen.add_argument("--size", type=int, default=32)
    gen.add_argument("--train", type=int, default=200)
    gen.add_argument("--test", type=int, default=20)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--exponent", type=float, default=2.0)
    gen.add_argument("--channels", type=int, choices=[1, 2], default=1)

    train = commands.add_parser("train", help="train one denoiser")
    train.add_argument("--level", type=int, choices=[0, 1, 2, 3], required=True)
    train.add_argument("--levels", type=int, choices=[2, 3], default=3)
    train.add_argument("--data", default="data/train")
    train.add_argument("--out", default=None)
    train.add_argument("--hidden", type=int, default=256)
    train.add_argument("--layers", type=int, default=3)
    train.add_argument("--iterations", type=int, default=2000)
    train.add_argument("--lr", type=float, default=5e-3)
    train.add_argument("--momentum", type=float, default=0.9)
    train.add_argument("--batch", type=int, default=16)
    train.add_argument("--seed", type=int, default=0)

    solve = commands.add_parser("solve", help="super-resolve one field")
    solve.add_argument(
        "--algo", choices=["diffpir", "dps", "cascade", "level1"], required=True
    )
    solve.add_argument("--factor", type=int, choices=[2, 4, 8], required=True)
    solve.add_argument("--levels", type=int, choices=[1, 2, 3], default=3)
    solve.add_argument("--input", required=True)
    solve.add_argument("--models", default="models")
    solve.add_argument("--train-data", default="data/train")
    solve.add_argument("--seed", type=int, default=None)
    solve.add_argument("--sigma-n", type=float, default=0.0)
    solve.add_argument("--config", default=None, help="key=value sampler config")
    solve.add_argument("--out", required=True)

    run = commands.add_parser("run", help="score algorithms on the test set")
    run.add_argument("--task", choices=["SR2", "SR4"], default="SR4")
    run.add_argument("--algos", default="diffpir,cascade2,cascade3")
    run.add_argument("--data", default="data/test")
    run.add_argument("--train-data", default="data/train")
    run.add_argument("--models", default="models")
    run.add_argument("--count", type=int, default=None)
    run.add_argument("--sigma-n", type=float, default=0.0)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--config", default=None)
    run.add_argument("--out", default="results")

    evaluate = commands.add_parser("eval", help="PSNR/SSIM of predictions")
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--ref", required=True)
    evaluate.add_argument("--out", default="metrics.csv")

    bench = commands.add_parser("bench", help="cost estimate and wall clock")
    bench.add_argument("--factor", type=int, choices=[2, 4], default=4)
    bench.add_argument("--data", default="data/test")
    bench.add_argument("--train-data", default="data/train")
    bench.add_argument("--models", default="models")
    bench.add_argument("--count", type=int, default=20)
    bench.add_argument("--sigma-n", type=float, default=0.0)
    bench.add_argument("--algos", default="diffpir,cascade2,cascade3")
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--config", default=None)
    bench.add_argument("--out", default="bench.csv")

    dec = commands.add_parser("decompose", help="write the Laplacian pyramid of a field")
    dec.add_argument("--input", required=True)
    dec.add_argument("--levels", type=int, default=3)
    dec.add_argument("--out-prefix", required=True)

    rec = commands.add_parser("reconstruct", help="collapse a pyramid written by decompose")
    rec.add_argument("--in-prefix", required=True)
    rec.add_argument("--levels", type=int, default=3)
    rec.add_argument("--out", required=True)
    return parser


def _algos(value: str):
    return [a.strip() for a in value.split(",") if a.strip()]


def run_command(args: argparse.Namespace, workspace: Workspace):
    if args.command == "gen-data":
        return workspace.gen_data(
            kind=args.kind,
            size=args.size,
            train=args.train,
            test=args.test,
            seed=args.seed,
            exponent=args.exponent,
            channels=args.channels,
        )
    if args.command == "train":
        config = TrainConfig.from_raw(
            {
                "iterations": args.iterations,
                "lr": args.lr,
                "momentum": args.momentum,
                "batch": args.batch,
                "seed": args.seed,
            }
        )
        return workspace.train(
            level=args.level,
            levels=args.levels,
            data=args.data,
            out=args.out,
            hidden=args.hidden,
            layers=args.layers,
            config=config,
        )
    if args.command == "solve":
        return workspace.solve(
            algo=args.algo,
            factor=args.factor,
            input=args.input,
            out=args.out,
            levels=args.levels,
            models=args.models,
            train_data=args.train_data,
            seed=args.seed,
            sigma_n=args.sigma_n,
            config=args.config,
        )
    if args.command == "run":
        return workspace.experiment(
            task=args.task,
            algos=_algos(args.algos),
            models=args.models,
            data=args.data,
            train_data=args.train_data,
            out=args.out,
            count=args.count,
            sigma_n=args.sigma_n,
            seed=args.seed,
            config=args.config,
        )
    if args.command == "eval":
        return workspace.evaluate(pred=args.pred, ref=args.ref, out=args.out)
    if args.command == "bench":
        return workspace.bench(
            factor=args.factor,
            data=args.data,
            models=args.models,
            train_data=args.train_data,
            count=args.count,
            sigma_n=args.sigma_n,
            algos=_algos(args.algos),
            seed=args.seed,
            repeats=args.repeats,
            out=args.out,
            config=args.config,
        )
    if args.command == "decompose":
        return workspace.decompose(args.input, args.levels, args.out_prefix)
    return workspace.reconstruct(args.in_prefix, args.levels, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    workspace = Workspace(
        workdir=args.workdir, to_print=not args.quiet, show_progress=not args.quiet
    )
    try:
        run_command(args, workspace)
    except CascadeError as e:
        print(str(e), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
