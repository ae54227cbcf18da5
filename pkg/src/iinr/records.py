from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


@dataclass
class RunRecord:
    """Everything a single training run leaves behind.

    ``final`` maps a label (``"steps=2"``, ``"baseline"``, ...) to a metric dict
    with keys among psnr / ssim / iou / mse.
    """

    seed: int = 0
    label: str = ""
    config: dict = field(default_factory=dict)
    losses: list[float] = field(default_factory=list)
    checkpoints: list[dict] = field(default_factory=list)
    final: dict[str, dict] = field(default_factory=dict)
    parameter_count: int = 0
    flops: dict = field(default_factory=dict)
    wall_time: float = 0.0
    failed: bool = False
    message: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))
