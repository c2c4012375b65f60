"""Run configuration and its INI-style text format.

Sections: ``[env]``, ``[gfn]``, ``[led]`` (LED objectives only) and ``[run]``.
Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field

from ..envs import BagEnv, SequenceEnv, SetEnv
from ..exceptions import ConfigError
from ..gfn import ObjectiveKind
from ..led import DecompositionConfig, Redistribution, default_keep_prob

ENV_KINDS = {
    "bag": (BagEnv, {"entity_types": int, "capacity": int, "special_repeat": int, "base_reward": float,
                     "reward_exponent": float, "mode_threshold": float}),
    "set": (SetEnv, {"entity_types": int, "capacity": int, "utility_seed": int,
                     "reward_exponent": float, "mode_threshold": float}),
    "sequence": (SequenceEnv, {"vocab": int, "length": int, "landscape_seed": int, "reward_exponent": float,
                               "mode_quantile": float, "mode_threshold": float}),
}
TINY_DEFAULTS = {
    "tiny-bag": ("bag", {"entity_types": 3, "capacity": 4, "special_repeat": 3}),
    "tiny-set": ("set", {"entity_types": 4, "capacity": 2}),
}


def _parse_bool(value: str, key: str) -> bool:
    low = str(value).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _convert(value, typ, key):
    try:
        if typ is bool:
            return _parse_bool(value, key)
        if typ is int:
            return int(str(value).strip())
        if typ is float:
            return float(str(value).strip())
        return typ(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from exc


def _int_list(value, key) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    parts = [p for p in str(value).replace(" ", "").split(",") if p]
    if not parts:
        raise ConfigError(f"{key}: expected a comma-separated list of integers")
    return tuple(_convert(p, int, key) for p in parts)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


@dataclass
class EnvConfig:
    kind: str = "bag"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind in TINY_DEFAULTS:
            base, defaults = TINY_DEFAULTS[self.kind]
            self.kind = base
            self.params = {**defaults, **self.params}
        if self.kind not in ENV_KINDS:
            raise ConfigError(f"unknown env {self.kind!r}; expected one of {sorted(ENV_KINDS) + sorted(TINY_DEFAULTS)}")
        allowed = ENV_KINDS[self.kind][1]
        clean = {}
        for key, value in self.params.items():
            if key not in allowed:
                raise ConfigError(f"env.{key}: unknown key for env {self.kind!r}; allowed {sorted(allowed)}")
            clean[key] = _convert(value, allowed[key], f"env.{key}")
        self.params = clean

    def build(self):
        cls = ENV_KINDS[self.kind][0]
        try:
            return cls(**self.params)
        except TypeError as exc:
            raise ConfigError(f"env: {exc}") from exc


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    objective: ObjectiveKind = ObjectiveKind.DB
    rounds: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-4
    log_z_learning_rate: float = 0.1
    hidden: tuple = (16, 16)
    activation: str = "leaky_relu"
    epsilon: float = 0.01
    subtb_lambda: float = 0.9
    fl_memoize: bool = True
    led: DecompositionConfig | None = None
    seeds: tuple = (0, 1, 2)
    eval_every: int = 25
    output_dir: str = "runs"
    label: str = ""
    record_wall_time: bool = False
    checkpoint_every: int = 0
    fit: str = "auto"

    def __post_init__(self):
        self.objective = ObjectiveKind.parse(self.objective)
        self.hidden = _int_list(self.hidden, "gfn.hidden")
        self.seeds = _int_list(self.seeds, "run.seeds")
        if self.objective.is_led and self.led is None:
            self.led = DecompositionConfig(
                keep_prob=default_keep_prob(self.env.build().max_trajectory_length),
                batch_size=self.batch_size)
        if not self.objective.is_led and self.led is not None:
            raise ConfigError(f"[led] settings given but objective {self.objective.value} is not an LED objective")
        for name in ("learning_rate", "log_z_learning_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"gfn.{name} must be positive, got {getattr(self, name)}")
        if self.rounds < 0:
            raise ConfigError(f"run.rounds must be >= 0, got {self.rounds}")
        if self.batch_size < 1 or self.eval_every < 1 or self.checkpoint_every < 0:
            raise ConfigError("run.batch_size and run.eval_every must be >= 1, checkpoint_every >= 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"gfn.epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0.0 < self.subtb_lambda <= 1.0:
            raise ConfigError(f"gfn.subtb_lambda must lie in (0, 1], got {self.subtb_lambda}")
        if self.activation not in ("leaky_relu", "tanh", "linear"):
            raise ConfigError(f"gfn.activation: unknown activation {self.activation!r}")
        if self.fit not in ("auto", "exact", "off"):
            raise ConfigError(f"run.fit must be auto, exact or off, got {self.fit!r}")

    @property
    def arm_label(self) -> str:
        return self.label or self.objective.value

    # --- text format ------------------------------------------------------
    _GFN_KEYS = {
        "objective": str, "learning_rate": float, "log_z_learning_rate": float, "hidden": "ints",
        "activation": str, "epsilon": float, "subtb_lambda": float, "fl_memoize": bool,
    }
    _RUN_KEYS = {
        "rounds": int, "batch_size": int, "seeds": "ints", "eval_every": int, "output_dir": str,
        "label": str, "record_wall_time": bool, "checkpoint_every": int, "fit": str,
    }
    _LED_KEYS = {
        "keep_prob": float, "n_inner_steps": int, "batch_size": int, "redistribution": str,
        "learning_rate": float, "buffer_capacity": int, "use_buffer": bool, "method": str,
    }

    def to_text(self) -> str:
        lines = ["[env]", f"kind = {self.env.kind}"]
        lines += [f"{k} = {_fmt(v)}" for k, v in sorted(self.env.params.items())]
        lines += ["", "[gfn]"]
        lines += [f"{k} = {_fmt(getattr(self, k))}" for k in self._GFN_KEYS]
        if self.led is not None:
            lines += ["", "[led]"]
            lines += [f"{k} = {_fmt(getattr(self.led, k))}" for k in self._LED_KEYS]
        lines += ["", "[run]"]
        lines += [f"{k} = {_fmt(getattr(self, k))}" for k in self._RUN_KEYS]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, strict=True)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        unknown = set(parser.sections()) - {"env", "gfn", "led", "run"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        env_items = dict(parser.items("env")) if parser.has_section("env") else {}
        env = EnvConfig(env_items.pop("kind", "bag"), env_items)
        kwargs = {"env": env}
        for section, keys in (("gfn", cls._GFN_KEYS), ("run", cls._RUN_KEYS)):
            if not parser.has_section(section):
                continue
            for key, value in parser.items(section):
                if key not in keys:
                    raise ConfigError(f"{section}.{key}: unknown key; allowed {sorted(keys)}")
                typ = keys[key]
                kwargs[key] = value if typ == "ints" else _convert(value, typ, f"{section}.{key}")
        if parser.has_section("led"):
            led_kwargs = {}
            for key, value in parser.items("led"):
                if key not in cls._LED_KEYS:
                    raise ConfigError(f"led.{key}: unknown key; allowed {sorted(cls._LED_KEYS)}")
                led_kwargs[key] = _convert(value, cls._LED_KEYS[key], f"led.{key}")
            objective = ObjectiveKind.parse(kwargs.get("objective", ObjectiveKind.DB))
            if not objective.is_led:
                raise ConfigError(f"[led] section given but objective {objective.value} is not an LED objective")
            defaults = DecompositionConfig(
                keep_prob=default_keep_prob(env.build().max_trajectory_length),
                batch_size=kwargs.get("batch_size", cls.batch_size))
            kwargs["led"] = dataclasses.replace(defaults, **led_kwargs)
        return cls(**kwargs)

    def hash(self) -> str:
        """Digest of everything that affects training (output location and label excluded)."""
        text = dataclasses.replace(self, output_dir="", label="", seeds=(0,)).to_text()
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, overrides) -> "RunConfig":
        """Apply ``section.key=value`` (or unambiguous bare ``key=value``) strings."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string(self.to_text())
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, value = (s.strip() for s in item.split("=", 1))
            if "." in key:
                section, key = key.split(".", 1)
            else:
                section = self._section_of(key, parser)
            if section == "env" and key == "kind":
                parser.remove_section("env")
                parser.add_section("env")
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, key, value)
            if section == "gfn" and key == "objective" and not ObjectiveKind.parse(value).is_led:
                parser.remove_section("led")
        buf = io.StringIO()
        parser.write(buf)
        return RunConfig.from_text(buf.getvalue())

    def _section_of(self, key, parser) -> str:
        candidates = [s for s, keys in (("gfn", self._GFN_KEYS), ("run", self._RUN_KEYS), ("led", self._LED_KEYS))
                      if key in keys]
        if key in ENV_KINDS[self.env.kind][1] or key == "kind":
            candidates.append("env")
        if not candidates:
            raise ConfigError(f"override key {key!r} is unknown")
        if len(candidates) > 1:
            raise ConfigError(f"override key {key!r} is ambiguous; prefix it with one of {candidates}")
        return candidates[0]


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_text(fh.read())


__all__ = ["EnvConfig", "RunConfig", "load_config", "Redistribution"]
