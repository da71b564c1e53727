import math
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cascadesr.errors import ConfigurationError
from cascadesr.utils import write_csv


def _pick(raw: Dict[str, Any], *keys, default=None):
    for key in keys:
        if key in raw and raw[key] is not None:
            return raw[key]
    return default


def _check_known(raw: Dict[str, Any], known: set, what: str):
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"Unknown {what} keys: {', '.join(unknown)}")


def _build(cls, what: str, **values):
    values = {k: v for k, v in values.items() if v is not None}
    try:
        return cls(**values)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid {what}: {e}") from e


class NoiseSchedule(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sigma_min: float = Field(default=0.01, gt=0)
    sigma_max: float = Field(default=10.0, gt=0)
    rho: float = 7.0
    num_steps: int = Field(default=200, ge=2)

    @model_validator(mode="after")
    def _ordered(self):
        if self.sigma_min >= self.sigma_max:
            raise ValueError(
                f"sigma_min ({self.sigma_min}) must be below sigma_max ({self.sigma_max})"
            )
        return self

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump()


class SamplerConfig(BaseModel):
    """Sampler settings shared by every posterior solver.

    ``lam`` is the data-consistency strength (key ``lambda`` in config files),
    ``zeta`` the DPS guidance scale.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    total_steps: int = Field(default=200, ge=2)
    lam: float = Field(default=1.0, gt=0)
    zeta: float = Field(default=0.3, ge=0)
    seed: int = Field(default=0, ge=0)
    sigma_min: float = Field(default=0.01, gt=0)
    sigma_max: float = Field(default=10.0, gt=0)
    rho: float = 7.0
    cg_tol: float = Field(default=1e-8, gt=0)
    cg_max_iter: int = Field(default=500, ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.sigma_min >= self.sigma_max:
            raise ValueError(
                f"sigma_min ({self.sigma_min}) must be below sigma_max ({self.sigma_max})"
            )
        return self

    @property
    def schedule(self) -> NoiseSchedule:
        return self.schedule_for(self.total_steps)

    def schedule_for(self, num_steps: int) -> NoiseSchedule:
        return NoiseSchedule(
            sigma_min=self.sigma_min,
            sigma_max=self.sigma_max,
            rho=self.rho,
            num_steps=num_steps,
        )

    @classmethod
    def from_raw(cls, raw: Dict[str, Any]):
        known = {
            "total_steps",
            "T",
            "steps",
            "lam",
            "lambda",
            "zeta",
            "seed",
            "sigma_min",
            "sigma_max",
            "rho",
            "cg_tol",
            "cg_max_iter",
        }
        _check_known(raw, known, "sampler config")
        return _build(
            cls,
            "sampler config",
            total_steps=_pick(raw, "total_steps", "T", "steps"),
            lam=_pick(raw, "lam", "lambda"),
            zeta=_pick(raw, "zeta"),
            seed=_pick(raw, "seed"),
            sigma_min=_pick(raw, "sigma_min"),
            sigma_max=_pick(raw, "sigma_max"),
            rho=_pick(raw, "rho"),
            cg_tol=_pick(raw, "cg_tol"),
            cg_max_iter=_pick(raw, "cg_max_iter"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump()


class TrainConfig(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    iterations: int = Field(default=2000, ge=1)
    batch_size: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=5e-3, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    seed: int = Field(default=0, ge=0)

    @classmethod
    def from_raw(cls, raw: Dict[str, Any]):
        known = {
            "iterations",
            "steps",
            "batch_size",
            "batch",
            "learning_rate",
            "lr",
            "momentum",
            "seed",
        }
        _check_known(raw, known, "training config")
        return _build(
            cls,
            "training config",
            iterations=_pick(raw, "iterations", "steps"),
            batch_size=_pick(raw, "batch_size", "batch"),
            learning_rate=_pick(raw, "learning_rate", "lr"),
            momentum=_pick(raw, "momentum"),
            seed=_pick(raw, "seed"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump()


class PhantomKind(str, Enum):
    ELLIPSES = "ellipses"
    TEXTURE = "texture"


class PhantomSpec(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: PhantomKind = PhantomKind.TEXTURE
    size: int = Field(default=32, gt=0)
    count: int = Field(default=200, ge=0)
    seed: int = Field(default=0, ge=0)
    spectral_exponent: float = 2.0
    max_ellipses: int = Field(default=8, ge=1)
    channels: int = Field(default=1, ge=1, le=2)

    @model_validator(mode="after")
    def _divisible(self):
        if self.size % 4:
            raise ValueError(f"size must be divisible by 4, got {self.size}")
        return self

    @classmethod
    def from_raw(cls, raw: Dict[str, Any]):
        known = {
            "kind",
            "size",
            "count",
            "seed",
            "spectral_exponent",
            "exponent",
            "max_ellipses",
            "channels",
        }
        _check_known(raw, known, "phantom spec")
        return _build(
            cls,
            "phantom spec",
            kind=_pick(raw, "kind"),
            size=_pick(raw, "size"),
            count=_pick(raw, "count"),
            seed=_pick(raw, "seed"),
            spectral_exponent=_pick(raw, "spectral_exponent", "exponent"),
            max_ellipses=_pick(raw, "max_ellipses"),
            channels=_pick(raw, "channels"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


class SRTask(str, Enum):
    SR2 = "SR2"
    SR4 = "SR4"

    @property
    def factor(self) -> int:
        return {"SR2": 2, "SR4": 4}[self.value]


ALGORITHMS = ("diffpir", "dps", "cascade2", "cascade3", "level1")


class ExperimentConfig(BaseModel):
    """One evaluation run: every algorithm in `algos` on every test image."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    task: SRTask = SRTask.SR4
    algos: List[str] = Field(default_factory=list)
    test_dir: str = "data/test"
    train_dir: str = "data/train"
    models_dir: str = "models"
    output_dir: str = "results"
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    sigma_n: float = Field(default=0.0, ge=0)
    count: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _known_algos(self):
        unknown = [a for a in self.algos if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"Unknown algorithms {unknown}; choose from {ALGORITHMS}")
        if "level1" in self.algos and self.task != SRTask.SR2:
            raise ValueError("level1 only solves the SR2 task")
        return self

    @classmethod
    def from_raw(cls, raw: Dict[str, Any]):
        known = {
            "task",
            "algos",
            "test_dir",
            "train_dir",
            "models_dir",
            "output_dir",
            "sampler",
            "sigma_n",
            "count",
        }
        _check_known(raw, known, "experiment config")
        algos = _pick(raw, "algos", default=[])
        if isinstance(algos, str):
            algos = [a.strip() for a in algos.split(",") if a.strip()]
        sampler = _pick(raw, "sampler")
        if isinstance(sampler, dict):
            sampler = SamplerConfig.from_raw(sampler)
        return _build(
            cls,
            "experiment config",
            task=_pick(raw, "task"),
            algos=list(algos),
            test_dir=_pick(raw, "test_dir"),
            train_dir=_pick(raw, "train_dir"),
            models_dir=_pick(raw, "models_dir"),
            output_dir=_pick(raw, "output_dir"),
            sampler=sampler,
            sigma_n=_pick(raw, "sigma_n"),
            count=_pick(raw, "count"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def __repr__(self) -> str:
        return (
            f"ExperimentConfig(task={self.task.value}, algos={self.algos}, "
            f"test_dir={self.test_dir!r})"
        )


class MetricRow(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    filename: str
    psnr_db: float
    ssim: float = Field(ge=-1.0, le=1.0)
    algo: Optional[str] = None


class MetricReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rows: List[MetricRow] = Field(default_factory=list)

    @property
    def total_rows(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        columns = ["filename", "psnr_db", "ssim"]
        if any(row.algo is not None for row in self.rows):
            columns = ["algo"] + columns
        return pd.DataFrame([row.model_dump() for row in self.rows], columns=columns)

    def aggregate(self) -> pd.DataFrame:
        """Mean and std of each metric, per algorithm when rows carry one."""
        frame = self.to_frame()
        if frame.empty:
            return pd.DataFrame(
                columns=["algo", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"]
            )
        if "algo" not in frame.columns:
            frame["algo"] = ""
        finite = frame.replace([np.inf, -np.inf], np.nan)
        grouped = finite.groupby("algo", sort=False)
        return pd.DataFrame(
            {
                "psnr_mean": grouped["psnr_db"].mean(),
                "psnr_std": grouped["psnr_db"].std(ddof=0),
                "ssim_mean": grouped["ssim"].mean(),
                "ssim_std": grouped["ssim"].std(ddof=0),
            }
        ).reset_index()

    def mean_psnr(self, algo: Optional[str] = None) -> float:
        values = [
            row.psnr_db for row in self.rows if algo is None or row.algo == algo
        ]
        finite = [v for v in values if math.isfinite(v)]
        return float(np.mean(finite)) if finite else math.inf

    def to_csv(self, path) -> None:
        write_csv(self.to_frame(), path, float_format="%.17g")

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump()

    def __repr__(self) -> str:
        return f"MetricReport(total_rows={self.total_rows})"


class BenchRow(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    algo: str
    flops: float
    median_seconds: float
    seconds: List[float] = Field(default_factory=list)


class BenchReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rows: List[BenchRow] = Field(default_factory=list)

    def row(self, algo: str) -> BenchRow:
        for row in self.rows:
            if row.algo == algo:
                return row
        raise KeyError(algo)

    def to_csv(self, path) -> None:
        write_csv(self.to_frame(), path)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "algo": r.algo,
                    "flops": r.flops,
                    "median_seconds": r.median_seconds,
                }
                for r in self.rows
            ],
            columns=["algo", "flops", "median_seconds"],
        )

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump()

    def __repr__(self) -> str:
        return f"BenchReport(algos={[r.algo for r in self.rows]})"
