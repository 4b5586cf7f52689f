"""Engine and lookup configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

DEFAULT_SCALE_FACTORS = (0.125, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0)


@dataclass(frozen=True)
class LookupConfig:
    """Parameters of the correlation retrieval schemes.

    ``radius`` and ``num_levels`` drive the pyramid lookup; ``scale_factors``
    is the multiplicative probe grid of the scale lookup (three samples per
    factor: the scaled position and its two one-pixel neighbours).
    """

    radius: int = 4
    num_levels: int = 2
    scale_factors: tuple[float, ...] = DEFAULT_SCALE_FACTORS

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if self.num_levels < 1:
            raise ValueError(f"num_levels must be >= 1, got {self.num_levels}")
        factors = tuple(float(s) for s in self.scale_factors)
        if not factors:
            raise ValueError("scale_factors must not be empty")
        if any(s <= 0 for s in factors):
            raise ValueError("scale_factors must be strictly positive")
        if any(b <= a for a, b in zip(factors, factors[1:])):
            raise ValueError("scale_factors must be sorted ascending")
        object.__setattr__(self, "scale_factors", factors)

    @property
    def pl_samples(self) -> int:
        """Values retrieved per pixel by the pyramid lookup."""
        return self.num_levels * (2 * self.radius + 1)

    @property
    def sl_samples(self) -> int:
        """Values retrieved per pixel by the scale lookup."""
        return 3 * len(self.scale_factors)


@dataclass(frozen=True)
class EngineConfig:
    """All mechanism hyperparameters of the recurrent engine.

    Defaults follow the reference settings: eta=1/2, eps=0.05, 8 scale-update
    iterations out of 32 total, lookup radius 4 over a 2-level pyramid, and
    the 8-factor scale grid.
    """

    eta: float = 0.5
    eps: float = 0.05
    su_iters: int = 8
    total_iters: int = 32
    lookup: LookupConfig = field(default_factory=LookupConfig)
    hidden_channels: int = 64
    feat_channels: int = 64
    context_channels: int = 64
    aux_channels: int = 32
    corr_channels: int = 64
    disp_channels: int = 16
    head_channels: int = 64
    upsample_factor: int = 4

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if not 0 <= self.su_iters <= self.total_iters:
            raise ValueError(
                f"need 0 <= su_iters <= total_iters, got "
                f"su_iters={self.su_iters} total_iters={self.total_iters}"
            )
        if self.upsample_factor != 4:
            raise ValueError("only upsample_factor=4 is supported")
        for name in ("hidden_channels", "feat_channels", "context_channels",
                     "corr_channels", "disp_channels", "head_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.aux_channels < 0:
            raise ValueError("aux_channels must be >= 0 (0 disables the aux path)")
