"""Run configuration: hyperparameters, module/loss toggles, seeds and paths."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

# Hyperparameter lattice searched by grid search.
SEARCH_SPACE = {
    "experts_K": (2, 4, 6, 8, 10),
    "top_k": (1, 2, 3, 4),
    "embed_dim": (48, 64, 80, 96, 112),
    "max_text_len": (20, 30, 40, 50, 60),
}

# Ablation name -> config overrides. Removing a module drops its score from
# the overall score and its loss term; removing a loss keeps the module.
ABLATIONS = {
    "w/o L_T": {"loss_T": False},
    "w/o L_V": {"loss_V": False},
    "w/o L_C": {"loss_C": False},
    "w/o L_O": {"loss_O": False},
    "w/o IntraMoE-T": {"use_intra_text": False},
    "w/o IntraMoE-V": {"use_intra_visual": False},
    "w/o InterMoE": {"use_inter": False},
    "w/o SMoE": {"use_smoe": False},
}

# Fields that determine parameter tensor shapes.
ARCHITECTURE_FIELDS = (
    "encoder", "native_dim", "embed_dim", "experts_K", "smoe_layers", "expert_hidden_mult",
    "fuse_hidden_mult", "use_intra_text", "use_intra_visual", "use_inter", "use_smoe",
)


@dataclass(frozen=True)
class RunConfig:
    seed: int
    # architecture
    experts_K: int = 4
    top_k: int = 2
    embed_dim: int = 96
    smoe_layers: int = 1
    expert_hidden_mult: int = 4
    fuse_hidden_mult: int = 1
    # encoder
    encoder: str = "toy"
    native_dim: int = 32
    num_patches: int = 32
    max_text_len: int = 50
    encoder_seed: int = 0
    # optimisation
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 10
    patience: int = 0  # 0 disables early stopping
    eval_chunk: int = 256
    # module / loss toggles
    use_intra_text: bool = True
    use_intra_visual: bool = True
    use_inter: bool = True
    use_smoe: bool = True
    loss_O: bool = True
    loss_T: bool = True
    loss_V: bool = True
    loss_C: bool = True
    # description enhancement
    backend: str = "mock"
    backend_endpoint: str = ""
    backend_model: str = ""
    backend_seed: int = 0
    max_inflight: int = 1
    separator: str = " [SEP] "
    context_hash: str = "blake2b-64"
    max_error_fraction: float = 0.0
    # data
    subsample_rng: str = "PCG64"
    train_path: str = ""
    valid_path: str = ""
    test_path: str = ""
    catalog_path: str = ""
    kb_path: str = ""
    out_dir: str = "runs"

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ValueError("seed must be an integer")
        for name in ("experts_K", "top_k", "embed_dim", "smoe_layers", "expert_hidden_mult",
                     "fuse_hidden_mult", "native_dim", "num_patches", "max_text_len", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (self.use_intra_text or self.use_intra_visual or self.use_inter):
            raise ValueError("at least one matching module must stay enabled")

    @property
    def effective_top_k(self) -> int:
        return min(self.top_k, self.experts_K)

    @property
    def enabled_channels(self) -> tuple[str, ...]:
        """Loss channels that contribute to the objective."""
        module_on = {"O": True, "T": self.use_intra_text, "V": self.use_intra_visual, "C": self.use_inter}
        return tuple(c for c in "OTVC" if module_on[c] and getattr(self, f"loss_{c}"))

    @property
    def toggles(self) -> tuple[str, ...]:
        """Names of the ablations active in this config (empty for the full model)."""
        base = RunConfig(seed=self.seed)
        return tuple(name for name, over in ABLATIONS.items()
                     if all(getattr(self, k) == v != getattr(base, k) for k, v in over.items()))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in values:
            raise ValueError("config must set 'seed'")
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise ValueError(f"{path}: config must be a flat JSON object")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def fingerprint(self) -> str:
        """Digest of the fields that fix parameter shapes."""
        arch = {k: getattr(self, k) for k in ARCHITECTURE_FIELDS}
        blob = json.dumps(arch, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def backend_config(self) -> dict:
        return {"backend": self.backend, "endpoint": self.backend_endpoint, "model": self.backend_model,
                "seed": self.backend_seed, "max_inflight": self.max_inflight}

    def encoder_config(self) -> dict:
        return {"encoder": self.encoder, "native_dim": self.native_dim, "num_patches": self.num_patches,
                "max_text_len": self.max_text_len, "encoder_seed": self.encoder_seed}
