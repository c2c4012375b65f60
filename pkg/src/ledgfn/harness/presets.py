"""Named experiment presets."""

from __future__ import annotations

from ..exceptions import ConfigError
from ..led import DecompositionConfig
from .config import EnvConfig, RunConfig

BAG_ENV = {"entity_types": 7, "capacity": 15, "special_repeat": 7}


def _bag(objective: str) -> RunConfig:
    return RunConfig(
        env=EnvConfig("bag", dict(BAG_ENV)), objective=objective, rounds=2000, batch_size=32,
        learning_rate=1e-4, hidden=(16, 16), epsilon=0.01, label=f"bag-{objective}",
    )


def _set(objective: str) -> RunConfig:
    return RunConfig(
        env=EnvConfig("set", {"entity_types": 30, "capacity": 20}), objective=objective, rounds=2000,
        batch_size=16, learning_rate=1e-3, hidden=(256, 256), epsilon=0.0, label=f"set-{objective}",
    )


def _sequence(objective: str) -> RunConfig:
    return RunConfig(
        env=EnvConfig("sequence", {"vocab": 4, "length": 8, "reward_exponent": 3.0}), objective=objective,
        rounds=5000, batch_size=16, learning_rate=1e-4, hidden=(128, 128), epsilon=0.01,
        label=f"sequence-{objective}",
    )


def _tiny(objective: str) -> RunConfig:
    return RunConfig(
        env=EnvConfig("tiny-bag"), objective=objective, rounds=2000, batch_size=64,
        learning_rate=3e-3, log_z_learning_rate=0.1, hidden=(64, 64), epsilon=0.1,
        fit="exact", label=f"tiny-{objective}",
    )


PRESETS = {
    "bag-db": lambda: _bag("DB"),
    "bag-subtb": lambda: _bag("SubTB"),
    "set-db": lambda: _set("DB"),
    "sequence-subtb": lambda: _sequence("SubTB"),
    "tiny-exact": lambda: _tiny("TB"),
}

# LED settings that accompany each preset when its objective is switched to an LED variant
LED_DEFAULTS = {
    "bag-db": dict(keep_prob=0.8, n_inner_steps=8, batch_size=32, learning_rate=1e-3),
    "bag-subtb": dict(keep_prob=0.8, n_inner_steps=8, batch_size=32, learning_rate=1e-3),
    "set-db": dict(keep_prob=0.8, n_inner_steps=8, batch_size=16, learning_rate=1e-3, use_buffer=False),
    "sequence-subtb": dict(keep_prob=0.9, n_inner_steps=8, batch_size=16, learning_rate=1e-3),
    "tiny-exact": dict(keep_prob=0.9, n_inner_steps=8, batch_size=64, learning_rate=1e-3),
}


def preset(name: str, objective: str | None = None) -> RunConfig:
    """Fully populated config for ``name``, optionally with another objective."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}")
    config = PRESETS[name]()
    if objective is not None:
        config = with_objective(config, objective, name)
    return config


def with_objective(config: RunConfig, objective: str, preset_name: str | None = None) -> RunConfig:
    """Copy of ``config`` training ``objective``; LED arms get the preset's LED settings."""
    from ..gfn import ObjectiveKind

    kind = ObjectiveKind.parse(objective)
    led = None
    if kind.is_led:
        led = DecompositionConfig(**LED_DEFAULTS.get(preset_name, {}))
    label = config.label.rsplit("-", 1)[0] + "-" + kind.value if config.label else ""
    fields = {f: getattr(config, f) for f in config.__dataclass_fields__}
    fields.update(objective=kind, led=led, label=label)
    return RunConfig(**fields)
