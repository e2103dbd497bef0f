from __future__ import annotations

from dataclasses import asdict, dataclass, field

NUM_STAGES = 5


@dataclass
class OrderConfig:
    channels: list[int] = field(default_factory=lambda: [4, 8, 16, 24, 32])
    attn_stages: tuple[int, ...] = (0, 1)
    heads: int = 1
    in_channels: int = 3
    input_size: int = 256
    gate_enabled: bool = True
    # attention runs on at most attn_grid x attn_grid tokens per stage
    attn_grid: int | None = 40

    def __post_init__(self):
        self.channels = [int(c) for c in self.channels]
        self.attn_stages = tuple(sorted({int(s) for s in self.attn_stages}))
        if len(self.channels) != NUM_STAGES:
            raise ValueError(f"need {NUM_STAGES} stage widths, got {self.channels}")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])) or self.channels[0] <= 0:
            raise ValueError(f"channels must be positive and strictly increasing: {self.channels}")
        bad = [s for s in self.attn_stages if not 0 <= s < NUM_STAGES]
        if bad:
            raise ValueError(f"attention stages {bad} outside 0..{NUM_STAGES - 1}")
        if self.heads != 1:
            raise ValueError("only single-head attention is supported")
        if self.input_size % 16:
            raise ValueError(f"input size {self.input_size} not divisible by 16")
        if self.attn_grid is not None and self.attn_grid < 1:
            raise ValueError("attn_grid must be positive or None")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attn_stages"] = list(self.attn_stages)
        return d


# Stage selections compared in the attention-placement ablation.
STAGE_SWEEP = {
    "none": (),
    "early_3_4": (3, 4),
    "mid_2_3": (2, 3),
    "late_0_1": (0, 1),
    "all": (0, 1, 2, 3, 4),
}
