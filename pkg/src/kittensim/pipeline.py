"""End-to-end experiment pipeline: source -> link -> detection -> reconstruction.

A single INI config describes the run; every stage is also reachable through
the CLI on the same helper functions, so stage-by-stage runs reproduce the
one-shot pipeline bit for bit (all randomness derives from the config seed).
"""

from __future__ import annotations

import configparser
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .fock import (
    FockDensityMatrix,
    GaussianStateSpec,
    best_cat_fidelity,
    gaussian_state,
    loss_channel,
    phase_diffusion,
    photon_subtract,
    save_density_matrix,
    variance_from_db,
    db_from_variance,
)
from .quadrature import (
    QuadratureDataset,
    dataset_from_angle_blocks,
    sample_quadratures,
    save_samples_csv,
)
from .tomography import (
    BootstrapResult,
    ReconstructionConfig,
    ReconstructionResult,
    bootstrap_metric,
    mle_reconstruct,
)
from .util import atomic_write_text, sha256_file

DEFAULT_SIM_NMAX = 20
_BOOTSTRAP_SEED_OFFSET = 10_000_019


@dataclass(frozen=True)
class StateSection:
    v_x_db: float
    v_p_db: float
    subtract: bool = True
    purity_mix: float = 1.0  # weight of the subtracted state in the convex mix
    nmax: int = DEFAULT_SIM_NMAX

    def __post_init__(self) -> None:
        if not 0.0 <= self.purity_mix <= 1.0:
            raise ValidationError("purity_mix must lie in [0, 1]")
        if self.nmax < 2:
            raise ValidationError("state nmax must be >= 2")


@dataclass(frozen=True)
class ChannelSection:
    link_eta: float = 1.0
    phase_sigma_deg: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.link_eta <= 1.0:
            raise ValidationError("link_eta must lie in (0, 1]")
        if self.phase_sigma_deg < 0.0:
            raise ValidationError("phase_sigma_deg must be >= 0")


@dataclass(frozen=True)
class DetectionSection:
    hd_eta: float = 1.0
    correct_loss: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.hd_eta <= 1.0:
            raise ValidationError("hd_eta must lie in (0, 1]")


@dataclass(frozen=True)
class SamplingSection:
    angles_deg: tuple[float, ...] = (0.0, 30.0, 60.0, 90.0, 120.0, 150.0)
    per_angle_count: int = 5000
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.angles_deg) < 1:
            raise ValidationError("need at least one sampling angle")
        if self.per_angle_count < 1:
            raise ValidationError("per_angle_count must be >= 1")


@dataclass(frozen=True)
class ReconstructionSection:
    nmax: int = 12
    bin_width: float = 0.1
    bin_min: float = -6.0
    bin_max: float = 6.0
    max_iters: int = 2000
    loglik_tol: float = 1e-9
    bootstrap_resamples: int = 50

    def __post_init__(self) -> None:
        if self.bin_width <= 0.0 or self.bin_max <= self.bin_min:
            raise ValidationError("reconstruction bin grid is degenerate")
        if self.bootstrap_resamples < 0:
            raise ValidationError("bootstrap_resamples must be >= 0")

    def bin_edges(self) -> np.ndarray:
        n = int(round((self.bin_max - self.bin_min) / self.bin_width))
        return np.linspace(self.bin_min, self.bin_max, n + 1)

    def to_config(self, eta_correction: float = 1.0) -> ReconstructionConfig:
        return ReconstructionConfig(
            nmax=self.nmax,
            bin_edges=self.bin_edges(),
            eta_correction=eta_correction,
            max_iters=self.max_iters,
            loglik_tol=self.loglik_tol,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    state: StateSection
    channel: ChannelSection = field(default_factory=ChannelSection)
    detection: DetectionSection = field(default_factory=DetectionSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    reconstruction: ReconstructionSection = field(default_factory=ReconstructionSection)
    outputs: str = "run"


_SECTION_TYPES = {
    "state": StateSection,
    "channel": ChannelSection,
    "detection": DetectionSection,
    "sampling": SamplingSection,
    "reconstruction": ReconstructionSection,
}

_BOOL_KEYS = {"subtract", "correct_loss"}
_INT_KEYS = {"nmax", "per_angle_count", "seed", "max_iters", "bootstrap_resamples"}


def _parse_value(section: str, key: str, raw: str):
    raw = raw.strip()
    if key == "angles_deg":
        try:
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        except ValueError as exc:
            raise ValidationError(f"[{section}] {key}: bad angle list {raw!r}") from exc
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValidationError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError as exc:
            raise ValidationError(f"[{section}] {key}: expected an integer, got {raw!r}") from exc
    try:
        return float(raw)
    except ValueError as exc:
        raise ValidationError(f"[{section}] {key}: expected a number, got {raw!r}") from exc


def load_config(path) -> ExperimentConfig:
    """Parse and validate an INI experiment config; unknown keys are errors."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValidationError(f"config file not found: {path}")
    kwargs = {}
    for section in parser.sections():
        if section == "outputs":
            keys = dict(parser.items(section))
            unknown = set(keys) - {"directory"}
            if unknown:
                raise ValidationError(f"[outputs] unknown keys: {sorted(unknown)}")
            if "directory" in keys:
                kwargs["outputs"] = keys["directory"]
            continue
        cls = _SECTION_TYPES.get(section)
        if cls is None:
            raise ValidationError(f"unknown config section [{section}]")
        allowed = set(cls.__dataclass_fields__)
        values = {}
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ValidationError(f"[{section}] unknown key {key!r}")
            values[key] = _parse_value(section, key, raw)
        kwargs[section] = cls(**values)
    if "state" not in kwargs:
        raise ValidationError("config must contain a [state] section")
    return ExperimentConfig(**kwargs)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_config(config: ExperimentConfig, path) -> None:
    lines = []
    for section in ("state", "channel", "detection", "sampling", "reconstruction"):
        obj = getattr(config, section)
        lines.append(f"[{section}]")
        for key in obj.__dataclass_fields__:
            lines.append(f"{key} = {_format_value(getattr(obj, key))}")
        lines.append("")
    lines.append("[outputs]")
    lines.append(f"directory = {config.outputs}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def config_as_dict(config: ExperimentConfig) -> dict:
    out = {s: asdict(getattr(config, s)) for s in _SECTION_TYPES}
    out["sampling"]["angles_deg"] = list(out["sampling"]["angles_deg"])
    out["outputs"] = config.outputs
    return out


# ---------------------------------------------------------------------------
# Stage helpers (shared by run_pipeline and the CLI subcommands)
# ---------------------------------------------------------------------------

def simulate_source_state(state: StateSection) -> tuple[FockDensityMatrix, float | None]:
    """Squeezed-thermal source, optionally photon-subtracted and purity-mixed.

    Returns (state, subtraction_weight); the weight is None when subtract=False.
    With 0 < purity_mix < 1 the output models imperfect heralding: a convex mix
    of the subtracted state and the unsubtracted background.
    """
    spec = GaussianStateSpec(
        variance_from_db(state.v_x_db), variance_from_db(state.v_p_db)
    )
    rho_sqz = gaussian_state(spec, nmax=state.nmax)
    if not state.subtract:
        return rho_sqz, None
    rho_sub, weight = photon_subtract(rho_sqz)
    xi = state.purity_mix
    if xi < 1.0:
        # drop the squeezed state's (empty) top level to match dimensions
        trunc = rho_sqz.entries[: rho_sub.dim, : rho_sub.dim]
        trunc = trunc / np.trace(trunc).real
        mixed = xi * rho_sub.entries + (1.0 - xi) * trunc
        rho_sub = FockDensityMatrix(nmax=rho_sub.nmax, entries=mixed)
    return rho_sub, weight


def apply_link(rho: FockDensityMatrix, channel: ChannelSection) -> FockDensityMatrix:
    out = loss_channel(rho, channel.link_eta)
    sigma = math.radians(channel.phase_sigma_deg)
    if sigma > 0.0:
        out = phase_diffusion(out, sigma)
    return out


def sample_homodyne_dataset(
    rho: FockDensityMatrix,
    angles: list[float],
    count: int,
    seed: int,
) -> QuadratureDataset:
    """Sample `count` quadratures at each angle (radians), deterministically.

    Per-angle streams derive from SeedSequence([seed, index]) in list order, so
    any caller with the same (angles, count, seed) reproduces the same dataset.
    """
    blocks = {}
    for i, th in enumerate(angles):
        sub_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        blocks[float(th)] = sample_quadratures(rho, float(th), count, seed=sub_seed)
    return dataset_from_angle_blocks(blocks)


# ---------------------------------------------------------------------------
# Run orchestration
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    config: dict
    metrics: dict
    manifest: dict
    timings: dict
    out_dir: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config,
                "metrics": self.metrics,
                "manifest": self.manifest,
                "timings_s": self.timings,
                "out_dir": self.out_dir,
            },
            indent=2,
            sort_keys=True,
        )


@dataclass
class PipelineRun:
    report: RunReport
    source: FockDensityMatrix
    transmitted: FockDensityMatrix
    dataset: QuadratureDataset
    uncorrected: ReconstructionResult
    corrected: ReconstructionResult | None
    bootstrap: BootstrapResult | None


def run_pipeline(config: ExperimentConfig, out_dir=None) -> PipelineRun:
    """Execute every stage and write the artifact set to the output directory.

    Fixed config (including seed) gives byte-identical metrics.json and
    identical manifest hashes across reruns.
    """
    out = Path(out_dir) if out_dir is not None else Path(config.outputs)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    tic = time.perf_counter()
    source, weight = simulate_source_state(config.state)
    timings["prepare_state"] = time.perf_counter() - tic

    tic = time.perf_counter()
    transmitted = apply_link(source, config.channel)
    timings["link_channel"] = time.perf_counter() - tic

    tic = time.perf_counter()
    detected = loss_channel(transmitted, config.detection.hd_eta)
    angles = [math.radians(a) for a in config.sampling.angles_deg]
    dataset = sample_homodyne_dataset(
        detected, angles, config.sampling.per_angle_count, config.sampling.seed
    )
    timings["sample"] = time.perf_counter() - tic

    tic = time.perf_counter()
    recon_uncorr = mle_reconstruct(dataset, config.reconstruction.to_config(1.0))
    corrected = None
    if config.detection.correct_loss and config.detection.hd_eta < 1.0:
        corrected = mle_reconstruct(
            dataset, config.reconstruction.to_config(config.detection.hd_eta)
        )
    timings["reconstruct"] = time.perf_counter() - tic

    primary = corrected if corrected is not None else recon_uncorr
    primary_cfg = config.reconstruction.to_config(
        config.detection.hd_eta if corrected is not None else 1.0
    )

    boot = None
    if config.reconstruction.bootstrap_resamples > 0:
        tic = time.perf_counter()
        boot = bootstrap_metric(
            primary.rho,
            primary_cfg,
            per_angle_counts={th: config.sampling.per_angle_count for th in angles},
            n_resamples=config.reconstruction.bootstrap_resamples,
            seed=config.sampling.seed + _BOOTSTRAP_SEED_OFFSET,
        )
        timings["bootstrap"] = time.perf_counter() - tic

    tic = time.perf_counter()
    alpha_star, cat_fid = best_cat_fidelity(primary.rho)
    timings["cat_fit"] = time.perf_counter() - tic

    metrics = {
        "w00": primary.metrics["w00"],
        "w00_uncorrected": recon_uncorr.metrics["w00"],
        "w00_corrected": None if corrected is None else corrected.metrics["w00"],
        "w00_std": None if boot is None else boot.std,
        "bootstrap_failures": None if boot is None else boot.failures,
        "var_deg": primary.metrics["var_deg"],
        "var_db": {
            k: db_from_variance(v) for k, v in primary.metrics["var_deg"].items()
        },
        "alpha_star": alpha_star,
        "cat_fidelity": cat_fid,
        "subtract_weight": weight,
        "iterations": primary.metrics["iterations"],
        "converged": primary.metrics["converged"],
        "loglik": primary.metrics["loglik"],
    }

    tic = time.perf_counter()
    save_density_matrix(source, out / "rho_source.json")
    save_density_matrix(transmitted, out / "rho_transmitted.json")
    save_samples_csv(dataset, out / "samples.csv")
    save_density_matrix(recon_uncorr.rho, out / "rho_uncorrected.json")
    artifact_names = [
        "rho_source.json",
        "rho_transmitted.json",
        "samples.csv",
        "rho_uncorrected.json",
    ]
    if corrected is not None:
        save_density_matrix(corrected.rho, out / "rho_corrected.json")
        artifact_names.append("rho_corrected.json")
    atomic_write_text(out / "metrics.json", json.dumps(metrics, indent=2, sort_keys=True))
    artifact_names.append("metrics.json")
    manifest = {name: sha256_file(out / name) for name in artifact_names}
    timings["write_artifacts"] = time.perf_counter() - tic

    report = RunReport(
        config=config_as_dict(config),
        metrics=metrics,
        manifest=manifest,
        timings=timings,
        out_dir=str(out),
    )
    atomic_write_text(out / "report.json", report.to_json())
    return PipelineRun(
        report=report,
        source=source,
        transmitted=transmitted,
        dataset=dataset,
        uncorrected=recon_uncorr,
        corrected=corrected,
        bootstrap=boot,
    )


def verify_run_dir(run_dir) -> dict:
    """Re-hash the artifacts listed in a run's report; raise on any mismatch."""
    run_dir = Path(run_dir)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise ValidationError(f"{run_dir} does not contain report.json")
    report = json.loads(report_path.read_text())
    manifest = report.get("manifest", {})
    for name, digest in manifest.items():
        target = run_dir / name
        if not target.exists():
            raise ValidationError(f"artifact missing: {name}")
        actual = sha256_file(target)
        if actual != digest:
            raise ValidationError(
                f"artifact hash mismatch for {name}: {actual} != {digest}"
            )
    return report
