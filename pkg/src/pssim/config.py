"""Run configuration: every knob of a simulated training run.

Field names double as the config-file keys; ``validate`` reports the first
offending field by name.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .compression import GLOBAL_LARGEST, PER_TENSOR_LARGEST, VARIANTS, SelectionPolicy
from .errors import ConfigurationError
from .server import ADACOMP, ASGD, COMP_ASGD, PROTOCOLS, ProtocolConfig

ARCHES = ("mlp", "cnn")
DATASETS = ("synthetic", "mnist")

_PROTOCOL_DEFAULT_SELECTION = {
    ADACOMP: PER_TENSOR_LARGEST,
    COMP_ASGD: GLOBAL_LARGEST,
    ASGD: "",
}


@dataclass
class RunConfig:
    seed: int = 1
    workers: int = 4  # n
    batch_size: int = 10  # b
    ratio: float = 0.01  # compression ratio c (ignored by asgd)
    learning_rate: float = 0.1  # alpha
    iterations: int = 1000  # update budget I
    protocol: str = ADACOMP
    selection: str = ""  # empty -> protocol default variant
    arch: str = "mlp"
    dataset: str = "synthetic"
    data_dir: str = "data/mnist"
    shard_fraction: float = 1.0
    crash_prob: float = 0.0  # p, drawn after every push
    speed_mix: list[float] = field(default_factory=lambda: [1.0, 0.0, 0.0])
    eval_every: int = 0  # 0 -> max(1, iterations // 200)
    ma_window: int = 25
    parallel: bool = False
    # synthetic dataset shape (ignored for mnist)
    synthetic_train: int = 4000
    synthetic_test: int = 1000
    synthetic_features: int = 32
    synthetic_classes: int = 10

    def validate(self) -> None:
        def bad(name: str, reason: str):
            return ConfigurationError(f"{name}: {reason}")

        if not isinstance(self.seed, int):
            raise bad("seed", "must be an integer")
        for name in ("workers", "batch_size", "iterations"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise bad(name, "must be a positive integer")
        if not 0.0 < self.ratio <= 1.0:
            raise bad("ratio", f"{self.ratio} not in (0, 1]")
        if not 0.0 < self.learning_rate <= 1.0:
            raise bad("learning_rate", f"{self.learning_rate} not in (0, 1]")
        if self.protocol not in PROTOCOLS:
            raise bad("protocol", f"{self.protocol!r} not one of {PROTOCOLS}")
        if self.selection and self.selection not in VARIANTS:
            raise bad("selection", f"{self.selection!r} not one of {VARIANTS}")
        if self.arch not in ARCHES:
            raise bad("arch", f"{self.arch!r} not one of {ARCHES}")
        if self.dataset not in DATASETS:
            raise bad("dataset", f"{self.dataset!r} not one of {DATASETS}")
        if not 0.0 < self.shard_fraction <= 1.0:
            raise bad("shard_fraction", f"{self.shard_fraction} not in (0, 1]")
        if not 0.0 <= self.crash_prob <= 1.0:
            raise bad("crash_prob", f"{self.crash_prob} not in [0, 1]")
        if (
            len(self.speed_mix) != 3
            or any(f < 0 for f in self.speed_mix)
            or abs(sum(self.speed_mix) - 1.0) > 1e-9
        ):
            raise bad("speed_mix", "must be three nonnegative fractions summing to 1")
        if not isinstance(self.eval_every, int) or self.eval_every < 0:
            raise bad("eval_every", "must be a nonnegative integer (0 = auto)")
        if not isinstance(self.ma_window, int) or self.ma_window < 1:
            raise bad("ma_window", "must be a positive integer")
        if not isinstance(self.parallel, bool):
            raise bad("parallel", "must be a boolean")
        for name in ("synthetic_train", "synthetic_test", "synthetic_features"):
            if getattr(self, name) < 1:
                raise bad(name, "must be positive")
        if self.synthetic_classes < 2:
            raise bad("synthetic_classes", "need at least two classes")
        try:
            self.protocol_config()
        except ConfigurationError as exc:
            raise bad("selection", str(exc)) from exc

    def resolved_selection(self) -> str:
        return self.selection or _PROTOCOL_DEFAULT_SELECTION[self.protocol]

    def selection_policy(self) -> SelectionPolicy | None:
        variant = self.resolved_selection()
        if self.protocol == ASGD:
            if variant:
                raise ConfigurationError("asgd sends dense updates; leave selection empty")
            return None
        return SelectionPolicy(variant, self.ratio)

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(
            protocol=self.protocol,
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            selection=self.selection_policy(),
        )

    def resolved_eval_every(self) -> int:
        return self.eval_every if self.eval_every else max(1, self.iterations // 200)


CONFIG_FIELDS = tuple(f.name for f in fields(RunConfig))
