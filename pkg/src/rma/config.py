"""Experiment configuration and construction of problems from it."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from .mesh import Field as NodalField
from .mesh import Mesh, interval_mesh, unit_square_mesh
from .objective import InverseProblem, synthesize_data
from .optimizer import SolverConfig
from .pde import ForwardProblem, boundary_mask
from .prior import Prior
from .sketch import SketchDistribution

SCHEMA_VERSION = 1


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProblemSpec(_Model):
    dim: Literal[1, 2] = 2
    resolution: PositiveInt = 36
    bi: PositiveFloat = 0.1
    flux_side: Optional[str] = None
    observe: Literal["all", "boundary"] = "all"


class SinusoidTruth(_Model):
    kind: Literal["sinusoid"] = "sinusoid"
    amplitude: float = 1.0
    frequency: float = 1.0


class BlobTruth(_Model):
    kind: Literal["gaussian-blob"] = "gaussian-blob"
    amplitude: float = 1.0
    center: tuple[float, float] = (0.5, 0.6)
    width: PositiveFloat = 0.15


class FileTruth(_Model):
    kind: Literal["file"] = "file"
    path: str


Truth = Annotated[Union[SinusoidTruth, BlobTruth, FileTruth], Field(discriminator="kind")]


class NoiseSpec(_Model):
    fraction: float = Field(0.001, ge=0.0)
    sigma: Optional[PositiveFloat] = None


class PriorSpec(_Model):
    gamma: PositiveFloat = 0.1
    delta: PositiveFloat = 1.0
    u0: str = "zero"  # or a field CSV path


class SketchSpec(_Model):
    kind: str = "achlioptas"
    s: Optional[PositiveFloat] = None
    n: PositiveInt = 50

    def distribution(self) -> SketchDistribution:
        if self.s is not None:
            if self.kind != "sparse":
                raise ValueError("sparsity s is only accepted with kind 'sparse'")
            return SketchDistribution.sparse(self.s)
        return SketchDistribution.from_name(self.kind)


class SolverSpec(_Model):
    tol_cost: PositiveFloat = 1e-6
    tol_grad: PositiveFloat = 1e-6
    tol_step: PositiveFloat = 1e-6
    max_newton: PositiveInt = 200
    cg_max: Optional[PositiveInt] = None

    def build(self) -> SolverConfig:
        return SolverConfig(**self.model_dump())


class SeedSpec(_Model):
    noise: int = Field(0, ge=0)
    sketch: int = Field(0, ge=0)


class ExperimentConfig(_Model):
    schema_: Literal[1] = Field(SCHEMA_VERSION, alias="schema")
    problem: ProblemSpec = ProblemSpec()
    truth: Truth = BlobTruth()
    noise: NoiseSpec = NoiseSpec()
    prior: PriorSpec = PriorSpec()
    sketch: Optional[SketchSpec] = None
    solver: SolverSpec = SolverSpec()
    seeds: SeedSpec = SeedSpec()
    output: str = "out"

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _check(self):
        if self.problem.dim == 1 and self.truth.kind == "gaussian-blob":
            raise ValueError("the gaussian-blob truth is two-dimensional")
        if self.problem.dim == 2 and self.truth.kind == "sinusoid":
            raise ValueError("the sinusoid truth is one-dimensional")
        if self.sketch is not None:
            self.sketch.distribution()
        return self

    @classmethod
    def desk_2d(cls, **updates) -> "ExperimentConfig":
        return cls.model_validate({"schema": 1, **updates})

    @classmethod
    def desk_1d(cls, **updates) -> "ExperimentConfig":
        base = {"schema": 1, "problem": {"dim": 1, "resolution": 1024},
                "truth": {"kind": "sinusoid"}, "noise": {"fraction": 0.01}}
        return cls.model_validate({**base, **updates})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.model_validate(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_updates(self, **updates) -> "ExperimentConfig":
        return type(self).model_validate({**self.to_dict(), **updates})


def build_mesh(spec: ProblemSpec) -> Mesh:
    if spec.dim == 1:
        return interval_mesh(spec.resolution, spec.flux_side or "left")
    return unit_square_mesh(spec.resolution, flux_side=spec.flux_side or "bottom")


def build_truth(cfg: ExperimentConfig, mesh: Mesh) -> np.ndarray:
    t = cfg.truth
    if t.kind == "file":
        return NodalField.from_csv(mesh, t.path).values
    x = mesh.nodes[:, 0]
    if t.kind == "sinusoid":
        return t.amplitude * np.sin(2.0 * np.pi * t.frequency * x)
    y = mesh.nodes[:, 1]
    cx, cy = t.center
    return t.amplitude * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * t.width**2))


def build_forward(cfg: ExperimentConfig) -> ForwardProblem:
    mesh = build_mesh(cfg.problem)
    mask = boundary_mask(mesh) if cfg.problem.observe == "boundary" else None
    return ForwardProblem(mesh, cfg.problem.bi, mask)


def synthesize(cfg: ExperimentConfig, forward: ForwardProblem | None = None):
    """Return ``(forward, truth, data, noise_std)`` for the configured truth."""
    forward = forward or build_forward(cfg)
    truth = build_truth(cfg, forward.mesh)
    data, std = synthesize_data(forward, truth, cfg.noise.fraction, cfg.seeds.noise)
    return forward, truth, data, std


def build_problem(cfg: ExperimentConfig, data=None) -> InverseProblem:
    """Inverse problem with synthesized data unless ``data`` is supplied.

    The whitening sigma is ``noise.sigma`` when given, else the synthetic
    noise level.
    """
    forward, truth, synth, std = synthesize(cfg)
    sigma = cfg.noise.sigma if cfg.noise.sigma is not None else std
    if sigma <= 0:
        raise ValueError("noise fraction is 0; set noise.sigma to whiten the data")
    u0 = None if cfg.prior.u0 == "zero" else NodalField.from_csv(forward.mesh, cfg.prior.u0).values
    prior = Prior(forward.mesh, cfg.prior.gamma, cfg.prior.delta, u0)
    return InverseProblem(forward, prior, synth if data is None else data, sigma, truth)
