from dataclasses import asdict, dataclass, fields

from ..errors import InvalidConfig

ENCODERS = ("resnet18",)
DECODERS = ("pyramid-pooling",)
LOSSES = ("cross-entropy", "dice", "combined")

# encoder base width (channels of the first stage); ResNet-18 proper is 64
FULL_WIDTH = 64
REDUCED_WIDTH = 16
TINY_WIDTH = 4


@dataclass(frozen=True)
class ModelConfig:
    encoder: str = "resnet18"
    decoder: str = "pyramid-pooling"
    in_channels: int = 3
    classes: int = 2
    width: int = FULL_WIDTH
    batch_size: int = 16
    learning_rate: float = 1e-3
    max_epochs: int = 20
    loss: str = "combined"
    holdout_fraction: float = 0.1
    seed: int = 0

    def validate(self):
        if self.encoder not in ENCODERS:
            raise InvalidConfig(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.decoder not in DECODERS:
            raise InvalidConfig(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.in_channels != 3:
            raise InvalidConfig("in_channels must be 3 (B8A, B03, B12)")
        if self.classes != 2:
            raise InvalidConfig("classes must be 2 (burned / not burned)")
        if self.loss not in LOSSES:
            raise InvalidConfig(f"loss must be one of {LOSSES}, got {self.loss!r}")
        for name in ("width", "batch_size", "max_epochs"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise InvalidConfig("holdout_fraction must be in [0, 1)")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown model config keys: {sorted(unknown)}")
        try:
            return cls(**data).validate()
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None
