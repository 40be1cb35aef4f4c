"""Slot-by-slot frequency-hopping simulation against jammer processes.

Each slot the prediction source marks channels it believes are jammed, the
hop policy picks a channel, and the slot is delivered iff that channel is not
in the jammer's true footprint. Backscatter frequency shifting is modelled only
as a bound on how far one hop may move (``shift_limit_channels``).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import raster, synth
from .errors import ConfigurationError

JAMMER_PROCESS_KINDS = ("static_band", "sweep", "random_hopper", "broadband")
PREDICTOR_KINDS = ("oracle", "trained_model", "always_clear", "random")


@dataclass(frozen=True)
class ChannelPlan:
    """Channel grid; defaults follow the 2.4 GHz 16-channel layout (fb.11 ... fb.26)."""

    n_channels: int = 16
    channel_bandwidth_hz: float = 2e6
    base_freq_hz: float = 2.405e9
    channel_spacing_hz: float = 5e6
    first_label: int = 11

    def __post_init__(self):
        if self.n_channels < 2:
            raise ConfigurationError("a channel plan needs at least two channels")
        if not (self.channel_bandwidth_hz > 0 and self.channel_spacing_hz > 0):
            raise ConfigurationError("channel bandwidth and spacing must be positive")

    def centers(self) -> np.ndarray:
        return self.base_freq_hz + self.channel_spacing_hz * np.arange(self.n_channels)

    def label(self, ch) -> str:
        return f"fb.{self.first_label + ch}"


@dataclass(frozen=True)
class JammerProcess:
    kind: str
    channels: tuple = ()
    sweep_period_slots: int = 8
    sweep_width: int = 1
    hop_seed: int = 0
    n_hop_channels: int = 1
    center_hz: float | None = None
    bandwidth_hz: float | None = None

    def __post_init__(self):
        if self.kind not in JAMMER_PROCESS_KINDS:
            raise ConfigurationError(f"unknown jammer process {self.kind!r}")
        object.__setattr__(self, "channels", tuple(sorted(set(int(c) for c in self.channels))))
        if self.kind == "sweep" and (self.sweep_period_slots < 1 or self.sweep_width < 1):
            raise ConfigurationError("sweep period and width must be >= 1")
        if self.kind == "random_hopper" and self.n_hop_channels < 1:
            raise ConfigurationError("random hopper must jam at least one channel")
        if self.kind == "broadband" and (self.center_hz is None or not (self.bandwidth_hz or 0) > 0):
            raise ConfigurationError("broadband process needs center_hz and a positive bandwidth_hz")

    @classmethod
    def broadband_over(cls, plan: ChannelPlan, first, last, margin=0.5):
        """Broadband process whose band covers channel centres ``first..last``."""
        c = plan.centers()
        lo, hi = c[first], c[last]
        width = hi - lo + 2 * margin * plan.channel_spacing_hz
        return cls("broadband", center_hz=(lo + hi) / 2, bandwidth_hz=width)


def jammed_channels(proc: JammerProcess, slot_index, plan: ChannelPlan = ChannelPlan()) -> frozenset:
    """Set of channels the process occupies during ``slot_index``."""
    if slot_index < 0:
        raise ConfigurationError("slot_index must be >= 0")
    n = plan.n_channels
    if proc.kind == "static_band":
        bad = [c for c in proc.channels if not 0 <= c < n]
        if bad:
            raise ConfigurationError(f"channels {bad} outside the plan")
        return frozenset(proc.channels)
    if proc.kind == "sweep":
        start = (slot_index * n) // proc.sweep_period_slots
        return frozenset((start + i) % n for i in range(min(proc.sweep_width, n)))
    if proc.kind == "random_hopper":
        rng = np.random.default_rng([int(proc.hop_seed), int(slot_index)])
        k = min(proc.n_hop_channels, n)
        return frozenset(int(c) for c in rng.choice(n, size=k, replace=False))
    half = proc.bandwidth_hz / 2
    centers = plan.centers()
    inside = (centers >= proc.center_hz - half) & (centers <= proc.center_hz + half)
    return frozenset(int(c) for c in np.flatnonzero(inside))


def broadband_blocks(proc: JammerProcess, plan: ChannelPlan, channel) -> bool:
    """Whether the process is a broadband blocker for ``channel`` in the strict sense."""
    p = synth.BroadbandParams(proc.center_hz, proc.bandwidth_hz, plan.channel_bandwidth_hz,
                              float(plan.centers()[channel]))
    return synth.is_broadband_blocking(p)


# ---------------------------------------------------------------------------
# hop policy

@dataclass(frozen=True)
class HopPolicyConfig:
    shift_limit_channels: int | None = 4
    tie_break: str = "lowest_index"
    stay_if_clear: bool = True
    start_channel: int = 0

    def __post_init__(self):
        if self.shift_limit_channels is not None and self.shift_limit_channels < 1:
            raise ConfigurationError("shift_limit_channels must be >= 1 or None (unlimited)")
        if self.tie_break != "lowest_index":
            raise ConfigurationError(f"unsupported tie_break {self.tie_break!r}")


def choose_channel(current, predictions, cfg: HopPolicyConfig = HopPolicyConfig()) -> int:
    """Pick the next channel given per-channel jam predictions (True = jammed).

    Stay on a clear current channel when ``stay_if_clear``; otherwise hop to
    the lowest-index predicted-clear channel within reach; with nothing else
    reachable keep ``current``.
    """
    pred = np.asarray(predictions, dtype=bool)
    if not 0 <= current < pred.size:
        raise ConfigurationError(f"current channel {current} outside 0..{pred.size - 1}")
    if cfg.stay_if_clear and not pred[current]:
        return int(current)
    limit = pred.size if cfg.shift_limit_channels is None else cfg.shift_limit_channels
    idx = np.arange(pred.size)
    ok = ~pred & (np.abs(idx - current) <= limit) & (idx != current)
    if ok.any():
        return int(idx[ok][0])
    return int(current)


# ---------------------------------------------------------------------------
# prediction sources

@dataclass
class PredictionSource:
    """Emits a jam prediction for every (slot, channel).

    ``trained_model`` sources synthesise each channel's slot waveform, render
    it with the dataset pipeline and classify it; they need ``model``,
    ``norm_stats`` and ``dataset_config``.
    """

    kind: str
    random_p: float = 0.5
    model: object = None
    norm_stats: raster.NormStats | None = None
    dataset_config: ds.DatasetConfig | None = None
    jsr_db: float = 10.0
    waveforms: dict = field(default_factory=lambda: {
        "static_band": "single_tone", "sweep": "sawtooth",
        "random_hopper": "multi_tone", "broadband": "broadband"})
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ConfigurationError(f"unknown prediction source {self.kind!r}")
        if self.kind == "trained_model":
            if self.model is None or self.norm_stats is None or self.dataset_config is None:
                raise ConfigurationError("trained_model source needs model, norm_stats and dataset_config")
            spec = _model_of(self.model).spec
            cfg = self.dataset_config
            if spec.input_size != cfg.image_size or spec.in_channels != raster.N_CHANNELS:
                raise ConfigurationError(
                    f"model expects {spec.in_channels}x{spec.input_size}^2 grids, "
                    f"dataset renders {raster.N_CHANNELS}x{cfg.image_size}^2")

    def predict(self, slot, truth, n_channels, proc_kind, rng):
        if self.kind == "oracle":
            return np.isin(np.arange(n_channels), list(truth))
        if self.kind == "always_clear":
            return np.zeros(n_channels, dtype=bool)
        if self.kind == "random":
            return rng.random(n_channels) < self.random_p
        return self._classify(slot, truth, n_channels, proc_kind, rng)

    def _classify(self, slot, truth, n_channels, proc_kind, rng):
        from .detector import network

        cfg = self.dataset_config
        kind = self.waveforms[proc_kind]
        grids = []
        for ch in range(n_channels):
            seed = int(rng.integers(0, 2 ** 63))
            jk = kind if ch in truth else "none"
            buf = _slot_waveform(cfg, seed, jk, self.jsr_db)
            grids.append(raster.normalize(ds.render_example(buf, cfg), self.norm_stats).values)
        prob = network.predict_proba(_model_of(self.model), np.stack(grids))
        return prob >= self.threshold


def _model_of(m):
    return getattr(m, "model_", m)


def _slot_waveform(cfg, seed, jammer_kind, jsr_db):
    # a channel jammed for the whole slot is observed with the jammer switching
    # on inside the observation window, as in the training corpus
    return ds.synthesize_example(cfg, seed, jammer_kind, jsr_db)[0]


# ---------------------------------------------------------------------------
# simulation

@dataclass
class SlotRecord:
    slot: int
    channel: int
    predicted_jammed: list
    true_jammed: list
    delivered: bool
    hopped: bool


@dataclass
class SimulationReport:
    slots: list
    delivery_ratio: float
    hop_count: int
    prediction_precision: float
    prediction_recall: float
    n_slots: int
    config: dict = field(default_factory=dict)

    @property
    def delivered_count(self):
        return sum(r.delivered for r in self.slots)

    def summary(self):
        return {
            "n_slots": self.n_slots,
            "delivered": self.delivered_count,
            "undelivered": self.n_slots - self.delivered_count,
            "delivery_ratio": self.delivery_ratio,
            "hop_count": self.hop_count,
            "prediction_precision": self.prediction_precision,
            "prediction_recall": self.prediction_recall,
            "config": self.config,
        }

    def write(self, out_dir, prefix="simulation"):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{prefix}_slots.jsonl", "w") as fh:
            for r in self.slots:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")
        (out / f"{prefix}_summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def run_simulation(plan: ChannelPlan, proc: JammerProcess, source: PredictionSource,
                   policy: HopPolicyConfig = HopPolicyConfig(), n_slots=1000, seed=0) -> SimulationReport:
    if n_slots < 1:
        raise ConfigurationError("n_slots must be >= 1")
    if not 0 <= policy.start_channel < plan.n_channels:
        raise ConfigurationError("start channel outside the plan")
    rng = np.random.default_rng(seed)
    n = plan.n_channels
    current = policy.start_channel
    records = []
    tp = fp = fn = 0
    hops = 0
    for slot in range(n_slots):
        truth = jammed_channels(proc, slot, plan)
        pred = np.asarray(source.predict(slot, truth, n, proc.kind, rng), dtype=bool)
        true_mask = np.isin(np.arange(n), list(truth))
        tp += int(np.sum(pred & true_mask))
        fp += int(np.sum(pred & ~true_mask))
        fn += int(np.sum(~pred & true_mask))
        chosen = choose_channel(current, pred, policy)
        hopped = chosen != current
        hops += hopped
        records.append(SlotRecord(slot, chosen, np.flatnonzero(pred).tolist(), sorted(truth),
                                  chosen not in truth, hopped))
        current = chosen
    delivered = sum(r.delivered for r in records)
    config = {
        "plan": asdict(plan), "jammer": asdict(proc), "predictor": source.kind,
        "policy": asdict(policy), "n_slots": n_slots, "seed": seed,
    }
    return SimulationReport(records, delivered / n_slots, hops,
                            tp / (tp + fp) if tp + fp else 0.0,
                            tp / (tp + fn) if tp + fn else 0.0, n_slots, config)
