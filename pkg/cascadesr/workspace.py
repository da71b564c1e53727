# Imports

import os
from typing import Optional, Sequence

from cascadesr.errors import ConfigurationError
from cascadesr.grid import Field, Rng, load_field, save_field
from cascadesr.harness import (
    ModelStore,
    benchmark,
    build_level_datasets,
    cascade_model_path,
    generate_phantoms,
    load_fields,
    run_experiment,
    save_fields,
    single_model_path,
    solve,
)
from cascadesr.metrics import evaluate_pairs
from cascadesr.models import (
    ALGORITHMS,
    BenchReport,
    ExperimentConfig,
    MetricReport,
    NoiseSchedule,
    PhantomSpec,
    SamplerConfig,
    TrainConfig,
)
from cascadesr.networks import MlpDenoiser, save_checkpoint, train_denoiser
from cascadesr.operators import Measurement, make_sr_operator
from cascadesr.pyramid import decompose, load_pyramid, reconstruct, save_pyramid
from cascadesr.utils import print_bench, print_metrics, read_kv_file


class Workspace:
    """High-level entry point rooted at a working directory, one method per CLI command.

    Relative paths are resolved against `workdir`. Status lines are printed
    when `to_print` is set.
    """

    def __init__(
        self,
        workdir=".",
        to_print=True,
        show_progress=False,
        schedule: Optional[NoiseSchedule] = None,
    ):
        self.__workdir = workdir
        self.__to_print = to_print
        self.__show_progress = show_progress
        self.__schedule = schedule or NoiseSchedule()

    def __emit(self, message, to_print=None):
        should_print = self.__to_print if to_print is None else to_print
        if should_print:
            print(message)

    def __path(self, path):
        if path is None or os.path.isabs(path):
            return path
        return os.path.join(self.__workdir, path)

    def __sampler_config(self, config=None, seed=None) -> SamplerConfig:
        raw = read_kv_file(self.__path(config)) if config else {}
        if seed is not None:
            raw["seed"] = seed
        return SamplerConfig.from_raw(raw)

    @property
    def workdir(self):
        return self.__workdir

    def path(self, path):
        return self.__path(path)

    ## Data
    def gen_data(
        self,
        kind="texture",
        size=32,
        train=200,
        test=20,
        seed=0,
        exponent=2.0,
        channels=1,
        max_ellipses=8,
    ):
        """Write `train` + `test` phantoms to data/train and data/test.

        Both splits come from one generated set, so they never overlap.
        """

        spec = PhantomSpec.from_raw(
            {
                "kind": kind,
                "size": size,
                "count": train + test,
                "seed": seed,
                "exponent": exponent,
                "channels": channels,
                "max_ellipses": max_ellipses,
            }
        )
        phantoms = generate_phantoms(spec)
        train_paths = save_fields(phantoms[:train], self.__path("data/train"))
        test_paths = save_fields(phantoms[train:], self.__path("data/test"))
        self.__emit(
            f"[ 🟢 ] {len(train_paths)} train and {len(test_paths)} test "
            f"{spec.kind.value} phantoms of size {size} written."
        )
        return train_paths, test_paths

    ## Training
    def train(
        self,
        level: int,
        levels: int = 3,
        data="data/train",
        out=None,
        hidden=256,
        layers=3,
        config: Optional[TrainConfig] = None,
    ) -> str:
        """Train the level-`level` model of a `levels`-level cascade (0: single-scale)."""
        config = config or TrainConfig()
        images = [f for _, f in load_fields(self.__path(data))]
        if not images:
            raise ConfigurationError(f"No training fields in {self.__path(data)}")

        if level == 0:
            dataset = [(x, []) for x in images]
            out = out or single_model_path("models")
        else:
            if not 1 <= level <= levels:
                raise ConfigurationError(f"Level {level} out of range 1..{levels}")
            dataset = build_level_datasets(images, levels)[level]
            out = out or cascade_model_path("models", levels, level)

        target, cond = dataset[0]
        model = MlpDenoiser(
            target.shape,
            [c.shape for c in cond],
            hidden=hidden,
            num_layers=layers,
            seed=config.seed,
        )
        result = train_denoiser(
            model, dataset, self.__schedule, config, self.__show_progress
        )

        path = self.__path(out)
        save_checkpoint(result.model, path, self.__schedule, level)
        self.__emit(
            f"[ 🟢 ] Level {level} model ({model.parameter_count} parameters) "
            f"trained: loss {result.losses[0]:.4g} -> {result.losses[-1]:.4g}, "
            f"saved to {path}"
        )
        return path

    ## Solving
    def solve(
        self,
        algo: str,
        factor: int,
        input,
        out,
        levels: int = 3,
        models="models",
        train_data="data/train",
        seed=None,
        sigma_n=0.0,
        config=None,
    ) -> Field:
        """Reconstruct the high-resolution field behind the low-resolution `input`."""
        name = algo
        if algo == "cascade":
            if levels not in (2, 3):
                raise ConfigurationError(f"cascade needs --levels 2 or 3, got {levels}")
            name = f"cascade{levels}"
        if name not in ALGORITHMS:
            raise ConfigurationError(f"Unknown algorithm {algo!r}")

        cfg = self.__sampler_config(config, seed)
        y = load_field(self.__path(input))
        shape = (y.height * factor, y.width * factor, y.channels)
        m = Measurement(y, make_sr_operator(factor, shape), sigma_n)
        store = ModelStore(self.__path(models), self.__path(train_data))
        x_hat = solve(name, m, store, cfg, Rng(cfg.seed), self.__show_progress)

        path = self.__path(out)
        save_field(x_hat, path)
        self.__emit(f"[ 🟢 ] {name} reconstruction {x_hat.shape} saved to {path}")
        return x_hat

    def experiment(
        self,
        task: str = "SR4",
        algos: Sequence[str] = (),
        models="models",
        data="data/test",
        train_data="data/train",
        out="results",
        count=None,
        sigma_n=0.0,
        seed=None,
        config=None,
    ) -> MetricReport:
        cfg = ExperimentConfig.from_raw(
            {
                "task": task,
                "algos": list(algos),
                "test_dir": self.__path(data),
                "train_dir": self.__path(train_data),
                "models_dir": self.__path(models),
                "output_dir": self.__path(out),
                "sampler": self.__sampler_config(config, seed),
                "sigma_n": sigma_n,
                "count": count,
            }
        )
        report = run_experiment(cfg, self.__to_print, self.__show_progress)
        if self.__to_print and report.total_rows:
            print_metrics(report.aggregate())
        return report

    ## Evaluation
    def evaluate(self, pred, ref, out=None) -> MetricReport:
        report = evaluate_pairs(self.__path(pred), self.__path(ref))
        if out is not None:
            report.to_csv(self.__path(out))
        if self.__to_print:
            print_metrics(report.aggregate())
        self.__emit(f"[ 🟢 ] {report.total_rows} images evaluated.")
        return report

    def bench(
        self,
        factor: int = 4,
        data="data/test",
        models="models",
        train_data="data/train",
        count=20,
        sigma_n=0.0,
        algos: Sequence[str] = ("diffpir", "cascade2", "cascade3"),
        seed=None,
        repeats=3,
        out="bench.csv",
        config=None,
    ) -> BenchReport:
        cfg = ExperimentConfig.from_raw(
            {
                "task": f"SR{factor}",
                "algos": list(algos),
                "test_dir": self.__path(data),
                "train_dir": self.__path(train_data),
                "models_dir": self.__path(models),
                "sampler": self.__sampler_config(config, seed),
                "sigma_n": sigma_n,
                "count": count,
            }
        )
        report = benchmark(cfg, repeats, self.__to_print, self.__show_progress)
        if out is not None:
            report.to_csv(self.__path(out))
        if self.__to_print:
            print_bench(report.to_frame())
        return report

    ## Pyramids
    def decompose(self, input, levels, out_prefix):
        x = load_field(self.__path(input))
        paths = save_pyramid(decompose(x, levels), self.__path(out_prefix))
        self.__emit(f"[ 🟢 ] {levels} levels written: {', '.join(paths)}")
        return paths

    def reconstruct(self, in_prefix, levels, out) -> Field:
        x = reconstruct(load_pyramid(self.__path(in_prefix), levels))
        path = self.__path(out)
        save_field(x, path)
        self.__emit(f"[ 🟢 ] Reconstruction {x.shape} saved to {path}")
        return x
