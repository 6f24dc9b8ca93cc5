"""
Run configuration: per-stage dataclasses plus named profiles.

Profiles live in config/run_profiles.json so the desk-scale and the full-size
hyperparameters can be tuned without code changes. A run is assembled as

    profile defaults  <  user config file (JSON)  <  command-line overrides

and every section validates its own invariants, raising ConfigError.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

from src.core.errors import ConfigError

OUTPUT_ROOT_ENV = "DUET_OUTPUT_ROOT"


@dataclass
class DatasetConfig:
    """
    Synthetic dataset parameters.

    Attributes:
        skeleton: Skeleton name ("toy8", "amass22", "smplx55") or path to a JSON file
        layout: "IH262" or "IX56x6"
        count: Number of clips to synthesize
        frame_min: Shortest clip length
        frame_max: Longest clip length (inclusive)
        seed: Generator seed
        fps: Frame rate used for finite-difference velocities
    """
    skeleton: str = "toy8"
    layout: str = "IH262"
    count: int = 256
    frame_min: int = 32
    frame_max: int = 32
    seed: int = 0
    fps: float = 20.0

    def validate(self) -> None:
        if self.layout not in ("IH262", "IX56x6"):
            raise ConfigError(f"layout must be IH262 or IX56x6, got {self.layout}")
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if not 2 <= self.frame_min <= self.frame_max:
            raise ConfigError(
                f"frame range must satisfy 2 <= min <= max, got [{self.frame_min}, {self.frame_max}]"
            )
        if self.fps <= 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")


@dataclass
class DHVAEConfig:
    """
    Hierarchical VAE hyperparameters.

    feature_dim = 0 means "infer from the dataset". max_frames bounds the
    learned positional tables of encoder and decoders.
    """
    feature_dim: int = 0
    latent_dim: int = 64
    latent_tokens: int = 1
    hidden_dim: int = 256
    heads: int = 4
    dropout: float = 0.1
    enc_layers_individual: int = 4
    cotransformer_layers: int = 3
    dec_layers: int = 4
    kl_weight: float = 0.001
    joint_weight: float = 1.0
    triplet_weight: float = 0.1
    max_frames: int = 64
    fusion: str = "cotransformer"  # or "residual_mlp"
    use_global_latent: bool = True
    share_person_weights: bool = True

    def validate(self) -> None:
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim ({self.hidden_dim}) must be divisible by heads ({self.heads})"
            )
        if self.latent_tokens < 1:
            raise ConfigError(f"latent_tokens must be >= 1, got {self.latent_tokens}")
        for name in ("kl_weight", "joint_weight", "triplet_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.fusion not in ("cotransformer", "residual_mlp"):
            raise ConfigError(f"fusion must be cotransformer or residual_mlp, got {self.fusion}")
        if min(self.enc_layers_individual, self.cotransformer_layers, self.dec_layers) < 1:
            raise ConfigError("layer counts must be >= 1")


@dataclass
class ContrastiveConfig:
    """
    Positive/negative ground-plane translation sampling and triplet margin.

    sigma_c: jitter scale (metres) for positives of contact clips
    sigma_u: jitter scale for positives of non-contact clips, and the negative band unit
    """
    sigma_c: float = 0.05
    sigma_u: float = 0.30
    neg_low_mult: float = 1.5
    neg_high_mult: float = 3.0
    margin: float = 1.0
    distance: str = "L2"

    def validate(self) -> None:
        if not 0 < self.sigma_c < self.sigma_u:
            raise ConfigError(
                f"need 0 < sigma_c < sigma_u, got sigma_c={self.sigma_c}, sigma_u={self.sigma_u}"
            )
        if not 0 < self.neg_low_mult < self.neg_high_mult:
            raise ConfigError(
                f"need 0 < neg_low_mult < neg_high_mult, got {self.neg_low_mult}, {self.neg_high_mult}"
            )
        if self.margin <= 0:
            raise ConfigError(f"margin must be positive, got {self.margin}")
        if self.distance != "L2":
            raise ConfigError(f"only L2 distance is supported, got {self.distance}")


@dataclass
class DiffusionConfig:
    """
    Noise schedule, DDIM sampling and classifier-free guidance settings.
    """
    schedule_kind: str = "scaled_linear"
    beta_start: float = 0.00085
    beta_end: float = 0.012
    timesteps: int = 1000
    inference_steps: int = 50
    cfg_scale: float = 3.5
    uncond_ratio: float = 0.1
    eta: float = 0.0

    def validate(self) -> None:
        if self.schedule_kind not in ("linear", "scaled_linear"):
            raise ConfigError(f"schedule_kind must be linear or scaled_linear, got {self.schedule_kind}")
        if not 1 <= self.inference_steps <= self.timesteps:
            raise ConfigError(
                f"inference_steps must be in [1, {self.timesteps}], got {self.inference_steps}"
            )
        if not 0.0 <= self.uncond_ratio <= 1.0:
            raise ConfigError(f"uncond_ratio must be in [0, 1], got {self.uncond_ratio}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")


@dataclass
class DenoiserConfig:
    """
    AdaLN-zero transformer denoiser settings.

    token_scale is the s_l divisor for the individual latents; training
    recomputes it from the encoded dataset and stores it in the checkpoint.
    """
    layers: int = 13
    hidden_dim: int = 256
    heads: int = 4
    dropout: float = 0.1
    text_dim: int = 64
    token_scale: float = 1.0
    segment_count: int = 3
    positional: str = "segment"  # or "sinusoidal"
    token_scaling: bool = True
    skip_connections: bool = True

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim ({self.hidden_dim}) must be divisible by heads ({self.heads})"
            )
        if self.token_scale <= 0:
            raise ConfigError(f"token_scale must be positive, got {self.token_scale}")
        if self.segment_count != 3:
            raise ConfigError(f"segment_count is fixed at 3, got {self.segment_count}")
        if self.positional not in ("segment", "sinusoidal"):
            raise ConfigError(f"positional must be segment or sinusoidal, got {self.positional}")


@dataclass
class TrainingConfig:
    """
    Optimization settings shared by both training stages.

    Both stages use AdamW; weight_decay is its decoupled decay coefficient.
    """
    seed: int = 0
    vae_epochs: int = 40
    denoiser_epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    output_dir: str = ""

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.vae_epochs < 0 or self.denoiser_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")


@dataclass
class EvalConfig:
    """
    Evaluation settings: feature extractor, subset sizes and voxel parameters.
    """
    feature_dim: int = 64
    feature_frames: int = 32
    diversity_subset: int = 32
    multimodality_subset: int = 4
    r_precision_pool: int = 32
    voxel_resolution: float = 0.02
    dilation_voxels: int = 1
    severe_threshold_voxels: int = 27
    seed: int = 0

    def validate(self) -> None:
        if self.voxel_resolution <= 0:
            raise ConfigError(f"voxel_resolution must be positive, got {self.voxel_resolution}")
        if self.dilation_voxels < 0:
            raise ConfigError(f"dilation_voxels must be >= 0, got {self.dilation_voxels}")
        if self.r_precision_pool < 2:
            raise ConfigError(f"r_precision_pool must be >= 2, got {self.r_precision_pool}")


@dataclass
class RunConfig:
    """
    Everything one end-to-end run needs. seed lives in training and dataset.
    """
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    dhvae: DHVAEConfig = field(default_factory=DHVAEConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    profile: str = "custom"

    def validate(self) -> "RunConfig":
        for section in _SECTIONS:
            getattr(self, section).validate()
        return self

    def to_dict(self) -> Dict:
        data = {section: asdict(getattr(self, section)) for section in _SECTIONS}
        data["profile"] = self.profile
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "RunConfig":
        config = cls(profile=data.get("profile", "custom"))
        apply_overrides(config, {k: v for k, v in data.items() if k != "profile"})
        return config

    def __repr__(self) -> str:
        return (
            f"RunConfig(profile='{self.profile}', layout={self.dataset.layout}, "
            f"skeleton={self.dataset.skeleton}, latent={self.dhvae.latent_dim})"
        )


_SECTIONS = ("dataset", "dhvae", "contrastive", "diffusion", "denoiser", "training", "evaluation")


def apply_overrides(config: RunConfig, overrides: Dict) -> RunConfig:
    """
    Merge a nested {section: {key: value}} mapping into config in place.

    Raises:
        ConfigError: On an unknown section or key
    """
    for section, values in overrides.items():
        if section not in _SECTIONS:
            raise ConfigError(f"Unknown config section '{section}'. Sections: {list(_SECTIONS)}")
        target = getattr(config, section)
        known = {f.name for f in fields(target)}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"Unknown key '{section}.{key}'. Keys: {sorted(known)}")
            setattr(target, key, value)
    return config


class RunProfiles:
    """
    Named run profiles loaded from config/run_profiles.json.

    Examples:
        >>> profiles = RunProfiles()
        >>> profiles.names()
        ['interhuman', 'interx', 'toy']
        >>> profiles.build("toy").dataset.skeleton
        'toy8'
    """

    def __init__(self, config_path: Optional[Path] = None):
        """
        Args:
            config_path: Optional path to a profiles file
                         (defaults to config/run_profiles.json)

        Raises:
            FileNotFoundError: If the profiles file is missing
        """
        if config_path is None:
            project_root = Path(__file__).parent.parent.parent
            config_path = project_root / "config" / "run_profiles.json"

        with open(config_path, "r") as f:
            config = json.load(f)

        self.profiles: Dict[str, Dict] = config["profiles"]
        self.version = config.get("version", "unknown")

    def names(self) -> List[str]:
        return sorted(self.profiles)

    def build(self, profile: str) -> RunConfig:
        """
        Build a validated RunConfig from a named profile.

        Raises:
            KeyError: If the profile doesn't exist
        """
        if profile not in self.profiles:
            raise KeyError(f"Profile '{profile}' not found. Available profiles: {self.names()}")

        sections = {k: v for k, v in self.profiles[profile].items() if k != "description"}
        config = RunConfig(profile=profile)
        return apply_overrides(config, sections).validate()

    def __repr__(self) -> str:
        return f"RunProfiles(version={self.version}, profiles={self.names()})"


def load_run_config(
    profile: str = "toy",
    config_file: Optional[Path] = None,
    overrides: Optional[Dict] = None,
    profiles_path: Optional[Path] = None,
) -> RunConfig:
    """
    Assemble a run configuration with precedence overrides > config file > profile.

    Args:
        profile: Profile name in run_profiles.json
        config_file: Optional JSON file with {section: {key: value}} overrides
        overrides: Optional overrides from the command line, same shape
        profiles_path: Optional alternative profiles file

    Returns:
        Validated RunConfig
    """
    config = RunProfiles(profiles_path).build(profile)
    if config_file is not None:
        with open(config_file, "r") as f:
            apply_overrides(config, json.load(f))
    if overrides:
        apply_overrides(config, overrides)
    return config.validate()


def default_output_root() -> Path:
    """
    Output root: $DUET_OUTPUT_ROOT when set, else ./runs.
    """
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
