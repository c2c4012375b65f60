"""The training loop: sample, decompose, update; with metrics and checkpoints."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..diffcore import AdamState, SeededRng, Tape, adam_step, backward
from ..envs import EnergyOracle
from ..envs.enumerate import DEFAULT_LIMIT, enumerate_terminals
from ..exceptions import ConfigError, IntegrityError, RuntimeAbort
from ..gfn import PolicyModel, balance_loss, fl_energy_gains, plain_gains, sample_trajectories
from ..led import (
    PotentialModel, ProxyModel, ReplayBuffer, assign_potentials, train_potentials, train_proxy,
)
from ..metrics import FitReport, ModeTracker, TopKTracker, goodness_of_fit, record_round
from . import checkpoint as ckpt
from .config import RunConfig

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("round", "samples", "modes", "topk_mean", "loss_policy", "loss_potential",
               "oracle_terminal", "oracle_intermediate", "wall_ms")
CSV_VERSION = 1
AUTO_FIT_LIMIT = 10_000

# independent random streams per seed
STREAM_POLICY_INIT = 1
STREAM_POTENTIAL_INIT = 2
STREAM_SAMPLING = 3
STREAM_ORACLE = 4
STREAM_BUFFER = 5
STREAM_MASKS = 6


@dataclass
class RunRecord:
    seed: int
    rows: list = field(default_factory=list)
    fit: FitReport | None = None

    def column(self, name):
        return [row[name] for row in self.rows]

    @property
    def final_modes(self) -> int:
        return self.rows[-1]["modes"] if self.rows else 0


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(rows) -> str:
    lines = [f"# ledgfn metrics v{CSV_VERSION} (package {__version__}); columns: {','.join(CSV_COLUMNS)}",
             ",".join(CSV_COLUMNS)]
    lines += [",".join(_fmt(row[c]) for c in CSV_COLUMNS) for row in rows]
    return "\n".join(lines) + "\n"


def _to_json_key(key):
    if isinstance(key, tuple):
        return [_to_json_key(k) for k in key]
    if isinstance(key, (np.integer,)):
        return int(key)
    return key


def _from_json_key(obj):
    if isinstance(obj, list):
        return tuple(_from_json_key(k) for k in obj)
    return obj


def _opt_arrays(state: AdamState) -> dict:
    out = {}
    for name, m in state.first_moment.items():
        out["m:" + name] = np.asarray(m, dtype=np.float64)
        out["v:" + name] = np.asarray(state.second_moment[name], dtype=np.float64)
    return out


def _opt_load(state: AdamState, arrays: dict, step: int) -> None:
    state.step = int(step)
    state.first_moment = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("m:")}
    state.second_moment = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("v:")}


class Trainer:
    """One training run for a ``(config, seed)`` pair.

    Each round draws a batch from the policy; LED objectives then insert it
    into the replay buffer, take the inner potential steps and assign
    potentials before the single policy step. Baselines go straight to the
    policy step.
    """

    def __init__(self, config: RunConfig, seed: int, record_events: bool = False, env=None):
        self.config = config
        self.seed = int(seed)
        self.env = env if env is not None else config.env.build()
        self.objective = config.objective
        if self.objective.is_fl and not self.env.has_intermediate_energy:
            raise ConfigError(
                f"objective {self.objective.value} needs intermediate energies, which env "
                f"{config.env.kind!r} does not define")
        self.rng_sampling = SeededRng(self.seed, STREAM_SAMPLING)
        self.rng_masks = SeededRng(self.seed, STREAM_MASKS)
        self.policy = PolicyModel.for_env(self.env, config.hidden, SeededRng(self.seed, STREAM_POLICY_INIT),
                                          config.activation)
        self.policy_opt = AdamState(learning_rate=config.learning_rate)
        self.log_z_opt = AdamState(learning_rate=config.log_z_learning_rate)
        self.oracle = EnergyOracle(self.env, rng=SeededRng(self.seed, STREAM_ORACLE))
        self.potential = None
        self.potential_opt = None
        self.buffer = None
        if self.objective.is_led:
            led = config.led
            init_rng = SeededRng(self.seed, STREAM_POTENTIAL_INIT)
            if led.method == "proxy":
                self.potential = ProxyModel.for_env(self.env, config.hidden, init_rng, config.activation)
            else:
                self.potential = PotentialModel.for_env(self.env, config.hidden, init_rng, config.activation)
            self.potential_opt = AdamState(learning_rate=led.learning_rate)
            if led.use_buffer:
                self.buffer = ReplayBuffer(led.buffer_capacity, SeededRng(self.seed, STREAM_BUFFER))
        self.modes = ModeTracker(self.env.mode_threshold)
        self.topk = TopKTracker(100)
        self.round = 0
        self.samples = 0
        self.rows: list[dict] = []
        self._pending_policy: list[float] = []
        self._pending_potential: list[float] = []
        self.record_events = record_events
        self.events: list[tuple] = []
        self._wall_start = time.perf_counter()

    # --- one round -------------------------------------------------------
    def _event(self, *item):
        if self.record_events:
            self.events.append((self.round, *item))

    def step(self) -> float:
        cfg = self.config
        batch = sample_trajectories(self.env, self.policy, cfg.batch_size, cfg.epsilon,
                                    self.rng_sampling, self.oracle)
        self._event("sample", len(batch))
        record_round(self.modes, self.topk, self.env, batch)
        potential_loss = None
        if self.objective.is_led:
            source = batch
            if self.buffer is not None:
                self.buffer.add(batch)
                self._event("buffer_add", len(self.buffer))
                source = self.buffer
            hook = lambda i: self._event("potential_step", i)  # noqa: E731
            if isinstance(self.potential, ProxyModel):
                potential_loss = train_proxy(self.potential, source, cfg.led, self.potential_opt, hook)
            else:
                potential_loss = train_potentials(self.potential, source, cfg.led, self.potential_opt,
                                                  self.rng_masks, hook)
            gains = assign_potentials(self.potential, batch, cfg.led.redistribution)
            self._event("assign_potentials")
        elif self.objective.is_fl:
            gains = fl_energy_gains(self.oracle, batch, cfg.fl_memoize)
        else:
            gains = plain_gains(batch)
        self._event("policy_gradient")
        tape = Tape()
        loss = balance_loss(self.policy, self.env, batch, gains, tape, self.objective.family, cfg.subtb_lambda)
        value = loss.item()
        if not np.isfinite(value):
            self._abort(f"non-finite policy loss {value} at round {self.round + 1}")
        params = self.policy.parameters()
        grads = backward(tape, loss, params)
        log_z = params.pop("log_z")
        g_z = grads.pop("log_z")
        new_net, _ = adam_step(params, grads, self.policy_opt)
        new_z, _ = adam_step({"log_z": log_z}, {"log_z": g_z}, self.log_z_opt)
        new_net.update(new_z)
        self.policy.load(new_net)
        self._event("policy_step")
        self.round += 1
        self.samples += len(batch)
        self._pending_policy.append(value)
        if potential_loss is not None:
            self._pending_potential.append(potential_loss)
        if self.round % cfg.eval_every == 0 or self.round == cfg.rounds:
            self._emit_row()
        return value

    def _emit_row(self):
        wall = int((time.perf_counter() - self._wall_start) * 1000) if self.config.record_wall_time else 0
        self.rows.append({
            "round": self.round,
            "samples": self.samples,
            "modes": self.modes.count,
            "topk_mean": self.topk.mean,
            "loss_policy": float(np.mean(self._pending_policy)) if self._pending_policy else None,
            "loss_potential": float(np.mean(self._pending_potential)) if self._pending_potential else None,
            "oracle_terminal": self.oracle.terminal_calls,
            "oracle_intermediate": self.oracle.intermediate_calls,
            "wall_ms": wall,
        })
        self._pending_policy = []
        self._pending_potential = []

    def _abort(self, message):
        path = os.path.join(self.config.output_dir, f"abort-seed{self.seed}.ckpt")
        try:
            os.makedirs(self.config.output_dir, exist_ok=True)
            self.save(path)
            message += f"; diagnostic checkpoint written to {path}"
        except OSError as exc:
            message += f"; diagnostic checkpoint could not be written ({exc})"
        raise RuntimeAbort(message)

    def run_until(self, rounds: int, on_round=None) -> "Trainer":
        while self.round < rounds:
            self.step()
            if on_round is not None:
                on_round(self)
        return self

    def record(self, fit: bool = True) -> RunRecord:
        report = self.final_fit() if fit else None
        return RunRecord(self.seed, [dict(r) for r in self.rows], report)

    def final_fit(self) -> FitReport | None:
        mode = self.config.fit
        if mode == "off":
            return None
        count = self.env.terminal_count()
        if mode == "auto" and (count is None or count > AUTO_FIT_LIMIT):
            return None
        target = enumerate_terminals(self.env, limit=DEFAULT_LIMIT)
        return goodness_of_fit(self.env, self.policy, exact=True, target=target)

    # --- persistence -----------------------------------------------------
    def state_sections(self) -> dict:
        meta = {
            "format": "ledgfn-trainer", "package_version": __version__,
            "config": self.config.to_text(), "config_hash": self.config.hash(),
            "seed": self.seed, "round": self.round, "samples": self.samples,
            "rows": self.rows, "pending_policy": self._pending_policy,
            "pending_potential": self._pending_potential,
            "policy_opt_step": self.policy_opt.step, "log_z_opt_step": self.log_z_opt.step,
            "potential_opt_step": self.potential_opt.step if self.potential_opt else 0,
        }
        state = {
            "rng": {"sampling": self.rng_sampling.get_state(), "masks": self.rng_masks.get_state(),
                    "oracle": self.oracle.rng.get_state()},
            "oracle": {"terminal": self.oracle.terminal_calls, "intermediate": self.oracle.intermediate_calls},
            "modes": {"seen": sorted((_to_json_key(k) for k in self.modes.seen), key=repr),
                      "discovered": sorted((_to_json_key(k) for k in self.modes.discovered), key=repr),
                      "history": self.modes.history},
            "topk": {"k": self.topk.k, "best": [[_to_json_key(k), v] for k, v in self.topk.best.items()]},
        }
        sections = {"meta": meta, "state": state,
                    "policy": {k: np.asarray(v, dtype=np.float64) for k, v in self.policy.parameters().items()},
                    "policy_opt": _opt_arrays(self.policy_opt), "log_z_opt": _opt_arrays(self.log_z_opt)}
        if self.potential is not None:
            sections["potential"] = {k: np.asarray(v, dtype=np.float64)
                                     for k, v in self.potential.parameters().items()}
            sections["potential_opt"] = _opt_arrays(self.potential_opt)
        if self.buffer is not None:
            sections["buffer"] = self.buffer.to_json(self.env)
        return sections

    def save(self, path) -> None:
        ckpt.save(path, self.state_sections())

    @classmethod
    def restore(cls, path, config: RunConfig | None = None, record_events: bool = False) -> "Trainer":
        """Rebuild a trainer from a checkpoint.

        When ``config`` is given its hash must match the stored one.
        """
        sections = ckpt.load(path)
        try:
            meta = sections["meta"]
            stored = RunConfig.from_text(meta["config"])
        except KeyError as exc:
            raise IntegrityError(f"checkpoint is missing section or field {exc}") from None
        if config is not None and config.hash() != meta["config_hash"]:
            raise ConfigError(
                f"checkpoint config hash {meta['config_hash']} does not match the given config {config.hash()}")
        config = config if config is not None else stored
        trainer = cls(config, meta["seed"], record_events=record_events)
        trainer.load_sections(sections)
        return trainer

    def load_sections(self, sections: dict) -> None:
        meta, state = sections["meta"], sections["state"]
        self.round = int(meta["round"])
        self.samples = int(meta["samples"])
        self.rows = [dict(r) for r in meta["rows"]]
        self._pending_policy = list(meta["pending_policy"])
        self._pending_potential = list(meta["pending_potential"])
        self.policy.load(sections["policy"])
        _opt_load(self.policy_opt, sections["policy_opt"], meta["policy_opt_step"])
        _opt_load(self.log_z_opt, sections["log_z_opt"], meta["log_z_opt_step"])
        if self.potential is not None:
            self.potential.load(sections["potential"])
            _opt_load(self.potential_opt, sections.get("potential_opt", {}), meta["potential_opt_step"])
        if self.buffer is not None:
            self.buffer.load_json(sections["buffer"], self.env)
        self.rng_sampling.set_state(state["rng"]["sampling"])
        self.rng_masks.set_state(state["rng"]["masks"])
        self.oracle.rng.set_state(state["rng"]["oracle"])
        self.oracle.terminal_calls = int(state["oracle"]["terminal"])
        self.oracle.intermediate_calls = int(state["oracle"]["intermediate"])
        self.modes.seen = {_from_json_key(k) for k in state["modes"]["seen"]}
        self.modes.discovered = {_from_json_key(k) for k in state["modes"]["discovered"]}
        self.modes.history = list(state["modes"]["history"])
        self.topk.k = int(state["topk"]["k"])
        self.topk.best = {_from_json_key(k): float(v) for k, v in state["topk"]["best"]}


def write_csv(path, rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(csv_text(rows))


def run_seed(config: RunConfig, seed: int, output_dir=None, write=True) -> RunRecord:
    """Train one seed to ``config.rounds``, writing metrics and checkpoints."""
    out = output_dir if output_dir is not None else config.output_dir
    trainer = Trainer(config, seed)
    stem = os.path.join(out, f"{config.arm_label}-seed{seed}")

    def periodic(t: Trainer):
        if write and config.checkpoint_every and t.round % config.checkpoint_every == 0:
            t.save(stem + ".ckpt")

    if write:
        os.makedirs(out, exist_ok=True)
    trainer.run_until(config.rounds, periodic)
    record = trainer.record()
    if write:
        write_csv(stem + ".csv", record.rows)
        trainer.save(stem + ".ckpt")
    return record


def run(config: RunConfig, output_dir=None, write=True) -> list[RunRecord]:
    """Train every seed in the config sequentially."""
    return [run_seed(config, s, output_dir, write) for s in config.seeds]
