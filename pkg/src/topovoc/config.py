"""Pipeline configuration and its TOML loader."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .embedding import EmbeddingParams
from .spectral import SpectralConfig

STAGES = ("all", "features", "cluster", "report")


@dataclass
class DPMMConfig:
    k_target: float = 5.0
    alpha: float | None = None  # None -> solved from k_target
    iters: int = 10000
    burnin: int = 4000
    thin: int = 1
    seed: int = 0
    init: str = "kmeans"  # "kmeans" uses round(k_target) centres; also "one", "singletons", "kmeansN"

    def __post_init__(self):
        if self.iters <= self.burnin:
            raise ValueError(f"dpmm.iters ({self.iters}) must exceed dpmm.burnin ({self.burnin})")

    @property
    def init_spec(self):
        if self.init == "kmeans":
            return f"kmeans{max(1, round(self.k_target))}"
        return self.init


@dataclass
class PipelineConfig:
    manifest: Path
    output_dir: Path
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    embedding: EmbeddingParams = field(default_factory=EmbeddingParams)
    dpmm: DPMMConfig = field(default_factory=DPMMConfig)
    glm_alpha: float = 0.05
    garbage_fraction: float = 0.005
    max_duration: float = 10.0
    stage: str = "all"
    workers: int = 1
    dump_diagrams: bool = False

    def __post_init__(self):
        self.manifest = Path(self.manifest)
        self.output_dir = Path(self.output_dir)
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if not 0 < self.glm_alpha < 1:
            raise ValueError("glm_alpha must lie in (0, 1)")


def _build(cls, table, section):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ValueError(f"[{section}] unknown keys: {sorted(unknown)}")
    return cls(**table)


def load_config(path, **overrides) -> PipelineConfig:
    """Read a TOML config; relative paths resolve against the config file's directory.

    Layout::

        manifest = "manifest.csv"
        output_dir = "out"
        [spectral]   # SpectralConfig fields
        [embedding]  # EmbeddingParams fields
        [dpmm]       # k_target, alpha, iters, burnin, thin, seed, init
        [glm]        # alpha_level
        [pipeline]   # stage, workers, garbage_fraction, max_duration, dump_diagrams
    """
    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    base = path.parent
    top = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    for key in ("manifest", "output_dir"):
        if key not in top:
            raise ValueError(f"config is missing required key {key!r}")
        p = Path(top[key])
        top[key] = p if p.is_absolute() else base / p
    pipe = dict(raw.get("pipeline", {}))
    glm = dict(raw.get("glm", {}))
    kwargs = dict(
        manifest=top["manifest"],
        output_dir=top["output_dir"],
        spectral=_build(SpectralConfig, raw.get("spectral", {}), "spectral"),
        embedding=_build(EmbeddingParams, raw.get("embedding", {}), "embedding"),
        dpmm=_build(DPMMConfig, raw.get("dpmm", {}), "dpmm"),
        glm_alpha=glm.pop("alpha_level", 0.05),
        **pipe,
    )
    if glm:
        raise ValueError(f"[glm] unknown keys: {sorted(glm)}")
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**kwargs)
