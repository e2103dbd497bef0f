from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass
class LawConfig:
    gamma: float = 0.2
    tau: float = 3.0
    w_min: float = 1e-3
    w_max: float = 2.0
    lambda_dice: float = 1.0
    beta_T: float = 0.05
    beta_D: float = 0.05
    eps_s: float = 1e-6
    # ablation toggles
    use_ratio: bool = True
    use_delta: bool = True
    use_norm: bool = True
    use_min_clamp: bool = True
    use_max_clamp: bool = True
    use_dice: bool = True
    # unresolved-detail switches
    weight_grad: str = "detached"  # or "through"
    norm_scope: str = "sample"  # or "batch"
    degenerate_fallback: bool = True
    phi_hidden: int = 32
    phi_layers: int = 3

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma={self.gamma} outside [0, 1]")
        if self.tau <= 0:
            raise ValueError(f"tau={self.tau} must be positive")
        if not 0.0 < self.w_min <= self.w_max:
            raise ValueError(f"need 0 < w_min <= w_max, got {self.w_min}, {self.w_max}")
        if self.weight_grad not in ("detached", "through"):
            raise ValueError(f"weight_grad must be 'detached' or 'through', got {self.weight_grad!r}")
        if self.norm_scope not in ("sample", "batch"):
            raise ValueError(f"norm_scope must be 'sample' or 'batch', got {self.norm_scope!r}")
        if self.phi_layers < 2:
            raise ValueError("phi needs at least 2 layers")

    @classmethod
    def uniform(cls, **kw) -> "LawConfig":
        """Every weighting toggle off: plain MSE weighting."""
        off = dict(use_ratio=False, use_delta=False, use_norm=False,
                   use_min_clamp=False, use_max_clamp=False, use_dice=False)
        off.update(kw)
        return cls(**off)

    def to_dict(self) -> dict:
        return asdict(self)


# Component ladder: ratio prior, then each stabiliser added in turn.
LADDER = {
    "ratio_prior": dict(use_delta=False, use_norm=False, use_min_clamp=False, use_max_clamp=False, use_dice=False),
    "delta_no_norm": dict(use_delta=True, use_norm=False, use_min_clamp=False, use_max_clamp=False, use_dice=False),
    "plus_norm": dict(use_delta=True, use_norm=True, use_min_clamp=False, use_max_clamp=False, use_dice=False),
    "plus_clamp": dict(use_delta=True, use_norm=True, use_min_clamp=True, use_max_clamp=True, use_dice=False),
    "law_full": dict(use_delta=True, use_norm=True, use_min_clamp=True, use_max_clamp=True, use_dice=True),
}
