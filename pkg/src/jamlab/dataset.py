"""Balanced corpora of clean and jammed slot images.

A dataset lives in one directory::

    manifest.jsonl      header line, then one ExampleRecord per line
    grids/<id>.jgrd     raw (un-normalised) feature grids

Normalisation statistics are computed over the training split only and stored
in the manifest header; :func:`iterate_split` applies them on the fly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import raster, synth
from .errors import ConfigurationError, FormatError, IntegrityError
from .raster import NormStats, RunningChannelStats

JAMMER_KINDS = ("single_tone", "multi_tone", "chirp", "sawtooth", "broadband")
MANIFEST_NAME = "manifest.jsonl"
MANIFEST_FORMAT = "jamlab-manifest"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class DatasetConfig:
    n_examples: int = 1000
    train_fraction: float = 0.8
    test_count: int | None = None
    jammer_kinds: tuple = JAMMER_KINDS
    jsr_range_db: tuple = (-10.0, 20.0)
    snr_range_db: tuple = (5.0, 25.0)
    label_threshold_db: float = -5.0
    # fraction of clean-labelled examples that carry a sub-threshold jammer
    weak_negative_fraction: float = 0.0
    slot_durations_s: tuple = (0.5e-3, 1e-3, 2e-3)
    sample_rate_hz: float = synth.DEFAULT_SAMPLE_RATE_HZ
    band_hz: tuple = (-350e3, 350e3)
    channel_bandwidth_hz: float = 100e3
    onset_subslots: int = 20
    onset_min_fraction: float = 0.2
    onset_max_fraction: float = 0.6
    image_size: int = raster.GRID_SIZE
    resize_to: int | None = None
    ofdm: synth.OfdmConfig = field(default_factory=synth.OfdmConfig)

    def __post_init__(self):
        object.__setattr__(self, "jammer_kinds", tuple(self.jammer_kinds))
        object.__setattr__(self, "jsr_range_db", tuple(float(v) for v in self.jsr_range_db))
        object.__setattr__(self, "snr_range_db", tuple(float(v) for v in self.snr_range_db))
        object.__setattr__(self, "slot_durations_s", tuple(float(v) for v in self.slot_durations_s))
        object.__setattr__(self, "band_hz", tuple(float(v) for v in self.band_hz))
        if isinstance(self.ofdm, dict):
            object.__setattr__(self, "ofdm", synth.OfdmConfig(**self.ofdm))
        if self.n_examples < 2:
            raise ConfigurationError(f"need at least 2 examples, got {self.n_examples}")
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError("train_fraction must lie in (0, 1)")
        if self.test_count is not None and not 0 < self.test_count < self.n_examples:
            raise ConfigurationError("test_count must lie strictly between 0 and n_examples")
        lo, hi = self.band_hz
        if not hi > lo:
            raise ConfigurationError(f"empty jammer band {self.band_hz}")
        if max(abs(lo), abs(hi)) > self.sample_rate_hz / 2:
            raise ConfigurationError("jammer band exceeds the Nyquist interval")
        if not self.jammer_kinds or any(k not in JAMMER_KINDS for k in self.jammer_kinds):
            raise ConfigurationError(f"jammer_kinds must be a non-empty subset of {JAMMER_KINDS}")
        if not self.slot_durations_s or min(self.slot_durations_s) <= 0:
            raise ConfigurationError("slot durations must be positive")
        jlo, jhi = self.jsr_range_db
        if jhi < jlo or self.snr_range_db[1] < self.snr_range_db[0]:
            raise ConfigurationError("ranges must be ordered (low, high)")
        if jhi < self.label_threshold_db:
            raise ConfigurationError("JSR range lies entirely below the label threshold")
        if self.weak_negative_fraction > 0 and jlo >= self.label_threshold_db:
            raise ConfigurationError("weak negatives need JSR range below the label threshold")
        if not 0 <= self.weak_negative_fraction <= 1:
            raise ConfigurationError("weak_negative_fraction must lie in [0, 1]")
        if not 0 <= self.onset_min_fraction < self.onset_max_fraction <= 1 or self.onset_subslots < 1:
            raise ConfigurationError("invalid onset settings")
        if self.image_size < 1:
            raise ConfigurationError("image_size must be positive")

    @property
    def effective_resize_to(self):
        if self.resize_to is None:
            return raster.scaled_resize_target(self.image_size)
        return self.resize_to

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("ofdm"), dict):
            d["ofdm"] = synth.OfdmConfig(**d["ofdm"])
        return cls(**d)


PROFILES = {
    "desk": DatasetConfig(n_examples=1000),
    "acceptance": DatasetConfig(n_examples=1200),
    "ci": DatasetConfig(n_examples=1200, image_size=100),
    "full": DatasetConfig(n_examples=4398, test_count=1002),
}


@dataclass(frozen=True)
class ExampleRecord:
    id: str
    grid_path: str
    label: int
    jammer_kind: str
    jsr_db: float | None
    snr_db: float
    slot_duration_s: float
    seed: int
    onset_s: float = 0.0
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class DatasetManifest:
    records: list
    split: dict
    norm_stats: NormStats
    generation_config: DatasetConfig
    master_seed: int
    root: Path | None = field(default=None, compare=False)

    def ids(self, split=None):
        return [r.id for r in self.records if split is None or self.split[r.id] == split]

    def records_in(self, split):
        return [r for r in self.records if self.split[r.id] == split]

    def grid_file(self, rec: ExampleRecord) -> Path:
        p = Path(rec.grid_path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def counts(self):
        out = {}
        for s in ("train", "test"):
            recs = self.records_in(s)
            out[s] = {"total": len(recs), "positive": sum(r.label for r in recs)}
        return out


def label_example(jammer_kind, jsr_db, threshold_db=-5.0) -> int:
    if jammer_kind in (None, "none") or jsr_db is None:
        return 0
    return int(jsr_db >= threshold_db)


def example_seed(master_seed, index) -> int:
    """Per-example u64 seed derived from the master seed and the example index."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# per-example synthesis

def _jammer_buffer(kind, cfg: DatasetConfig, duration_s, rng):
    fs = cfg.sample_rate_hz
    lo, hi = cfg.band_hz
    if kind == "single_tone":
        p = synth.SingleToneParams(1.0, rng.uniform(lo, hi), rng.uniform(0, 2 * np.pi))
        return synth.gen_single_tone(p, fs, duration_s), asdict(p)
    if kind == "multi_tone":
        p = synth.MultiToneParams.random(int(rng.integers(2, 6)), cfg.band_hz, rng)
        return synth.gen_multi_tone(p, fs, duration_s), {"tones": [list(t) for t in p.tones]}
    if kind == "chirp":
        f0, f1 = rng.uniform(lo, hi, size=2)
        p = synth.ChirpParams(1.0, f0, (f1 - f0) / duration_s, rng.uniform(0, 2 * np.pi), duration_s)
        return synth.gen_linear_sweep(p, fs), asdict(p)
    if kind == "sawtooth":
        period = duration_s / int(rng.integers(1, 5))
        span = rng.uniform(0.1, 0.5) * (hi - lo)
        carrier = rng.uniform(lo, hi - span)
        p = synth.SawtoothSweepParams(1.0, carrier, span / period, period,
                                      synth.EnvelopeMode.CONSTANT, rng.uniform(0, 2 * np.pi))
        d = asdict(p)
        d["envelope_mode"] = p.envelope_mode.value
        return synth.gen_sawtooth_sweep(p, fs, duration_s), d
    if kind == "broadband":
        width = rng.uniform(5.05 * cfg.channel_bandwidth_hz, fs)
        # centre chosen so the communication centre (DC) stays inside the jammer band
        center = rng.uniform(-width / 2, width / 2) * 0.9
        p = synth.BroadbandParams(center, width, cfg.channel_bandwidth_hz, 0.0)
        assert synth.is_broadband_blocking(p)
        seed = int(rng.integers(0, 2 ** 63))
        return synth.gen_broadband_noise(p, fs, duration_s, seed), asdict(p)
    raise ConfigurationError(f"unknown jammer kind {kind!r}")


def synthesize_example(cfg: DatasetConfig, seed, jammer_kind, jsr_db):
    """Build one slot buffer; returns ``(buffer, slot_duration_s, snr_db, onset_s, params)``."""
    rng = np.random.default_rng(seed)
    slot = float(rng.choice(cfg.slot_durations_s))
    snr = float(rng.uniform(*cfg.snr_range_db))
    fs = cfg.sample_rate_hz
    signal = synth.gen_ofdm(cfg.ofdm, fs, slot, seed=int(rng.integers(0, 2 ** 63)))
    noise_seed = int(rng.integers(0, 2 ** 63))
    if jammer_kind == "none":
        return synth.mix(signal, None, 0.0, snr, None, noise_seed), slot, snr, 0.0, {}
    jam, params = _jammer_buffer(jammer_kind, cfg, slot, rng)
    n_sub = cfg.onset_subslots
    first = int(round(n_sub * cfg.onset_min_fraction))
    last = max(first + 1, int(round(n_sub * cfg.onset_max_fraction)))
    onset_idx = int(rng.integers(first, last))
    mask = synth.SlotMask([i >= onset_idx for i in range(n_sub)], slot / n_sub)
    buf = synth.mix(signal, jam, jsr_db, snr, mask, noise_seed)
    return buf, slot, snr, onset_idx * slot / n_sub, params


def render_example(buf, cfg: DatasetConfig) -> raster.FeatureGrid:
    return raster.preprocess(buf, cfg.image_size, cfg.effective_resize_to)


# ---------------------------------------------------------------------------
# corpus generation

def _plan_examples(cfg: DatasetConfig, rng):
    """Return per-index ``(label, jammer_kind, jsr_db)`` with exact class balance."""
    n = cfg.n_examples
    n_pos = n // 2
    labels = np.array([1] * n_pos + [0] * (n - n_pos))
    rng.shuffle(labels)
    jlo, jhi = cfg.jsr_range_db
    thr = cfg.label_threshold_db
    plan = []
    k_pos = k_weak = 0
    for lab in labels:
        if lab == 1:
            kind = cfg.jammer_kinds[k_pos % len(cfg.jammer_kinds)]
            k_pos += 1
            plan.append((1, kind, float(rng.uniform(max(jlo, thr), jhi))))
        elif rng.random() < cfg.weak_negative_fraction:
            kind = cfg.jammer_kinds[k_weak % len(cfg.jammer_kinds)]
            k_weak += 1
            jsr = float(rng.uniform(jlo, min(thr, jhi)))
            # uniform draws can land exactly on the threshold; keep the label clean
            plan.append((0, kind, float(np.nextafter(thr, -np.inf)) if jsr >= thr else jsr))
        else:
            plan.append((0, "none", None))
    return plan


def stratified_split(ids, labels, cfg: DatasetConfig, rng):
    split = {}
    labels = np.asarray(labels)
    n = len(ids)
    n_test_total = cfg.test_count if cfg.test_count is not None else n - int(round(cfg.train_fraction * n))
    classes = [0, 1]
    counts = {c: int(np.sum(labels == c)) for c in classes}
    # allocate test slots proportionally, remainder to the larger class
    n_test = {c: int(np.floor(n_test_total * counts[c] / n)) for c in classes}
    for c in sorted(classes, key=lambda c: -counts[c]):
        if sum(n_test.values()) < n_test_total:
            n_test[c] += 1
    for c in classes:
        members = [ids[i] for i in np.flatnonzero(labels == c)]
        order = rng.permutation(len(members))
        for rank, j in enumerate(order):
            split[members[j]] = "test" if rank < n_test[c] else "train"
    return {i: split[i] for i in ids}


def generate_dataset(config: DatasetConfig, master_seed, out_dir, progress=None) -> DatasetManifest:
    """Synthesise, rasterise and store a balanced corpus under ``out_dir``."""
    if config.n_examples < 1:
        raise ConfigurationError("count must be positive")
    out = Path(out_dir)
    (out / "grids").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([int(master_seed), 0x5eed])
    plan = _plan_examples(config, rng)
    records = []
    for i, (label, kind, jsr) in enumerate(plan):
        seed = example_seed(master_seed, i)
        ex_id = f"ex{i:06d}"
        buf, slot, snr, onset, params = synthesize_example(config, seed, kind, jsr)
        grid = render_example(buf, config)
        rel = f"grids/{ex_id}.jgrd"
        raster.save_grid(grid, out / rel)
        rec = ExampleRecord(ex_id, rel, label, kind, jsr, snr, slot, seed, onset, params)
        assert rec.label == label_example(kind, jsr, config.label_threshold_db)
        records.append(rec)
        if progress is not None:
            progress(i + 1, len(plan))
    split = stratified_split([r.id for r in records], [r.label for r in records], config, rng)
    manifest = DatasetManifest(records, split, None, config, int(master_seed), out)
    manifest.norm_stats = train_norm_stats(manifest)
    save_manifest(manifest, out / MANIFEST_NAME)
    return manifest


def train_norm_stats(manifest: DatasetManifest) -> NormStats:
    acc = RunningChannelStats()
    for rec in manifest.records_in("train"):
        acc.update(_load_checked(manifest, rec).values)
    return acc.result()


# ---------------------------------------------------------------------------
# manifest I/O

def _header(manifest):
    return {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "master_seed": manifest.master_seed,
        "norm_stats": manifest.norm_stats.to_dict(),
        "generation_config": manifest.generation_config.to_dict(),
    }


def save_manifest(manifest: DatasetManifest, path):
    lines = [json.dumps(_header(manifest), sort_keys=True)]
    for rec in manifest.records:
        d = rec.to_dict()
        d["split"] = manifest.split[rec.id]
        lines.append(json.dumps(d, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def manifest_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_manifest(path, check_files=True) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise IntegrityError(f"manifest not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise IntegrityError(f"{path}: empty manifest")
    try:
        head = json.loads(lines[0])
        if head.get("format") != MANIFEST_FORMAT or head.get("version") != MANIFEST_VERSION:
            raise IntegrityError(f"{path}: not a version-{MANIFEST_VERSION} manifest")
        records = []
        split = {}
        for ln in lines[1:]:
            d = json.loads(ln)
            s = d.pop("split")
            if s not in ("train", "test"):
                raise IntegrityError(f"record {d.get('id')}: bad split {s!r}")
            rec = ExampleRecord(**d)
            records.append(rec)
            split[rec.id] = s
        manifest = DatasetManifest(
            records, split, NormStats.from_dict(head["norm_stats"]),
            DatasetConfig.from_dict(head["generation_config"]), int(head["master_seed"]), path.parent)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: malformed manifest ({exc})") from exc
    if len(split) != len(records):
        raise IntegrityError(f"{path}: duplicate record ids")
    if check_files:
        missing = [r.id for r in records if not manifest.grid_file(r).exists()]
        if missing:
            raise IntegrityError(f"missing grid files for records: {', '.join(missing[:20])}")
    return manifest


def _load_checked(manifest, rec):
    path = manifest.grid_file(rec)
    if not path.exists():
        raise IntegrityError(f"record {rec.id}: missing grid file {path}")
    try:
        return raster.load_grid(path)
    except FormatError as exc:
        raise IntegrityError(f"record {rec.id}: {exc}") from exc


def iterate_split(manifest: DatasetManifest, split, batch_size=8, shuffle_seed=None, normalize=True):
    """Yield ``(X, y)`` batches; order is deterministic per ``shuffle_seed``.

    ``X`` has shape ``(b, C, H, W)`` (float32); ``shuffle_seed=None`` keeps
    manifest order.
    """
    recs = manifest.records_in(split)
    if shuffle_seed is not None:
        recs = [recs[i] for i in np.random.default_rng(shuffle_seed).permutation(len(recs))]
    for start in range(0, len(recs), batch_size):
        chunk = recs[start:start + batch_size]
        X = np.stack([_load_checked(manifest, r).values for r in chunk])
        if normalize:
            X = raster.normalize_array(X, manifest.norm_stats).astype(np.float32)
        yield X, np.array([r.label for r in chunk], dtype=np.int64)


def load_split(manifest: DatasetManifest, split, normalize=True):
    """Whole split as ``(X, y)`` arrays in manifest order."""
    Xs, ys = [], []
    for X, y in iterate_split(manifest, split, batch_size=64, normalize=normalize):
        Xs.append(X)
        ys.append(y)
    return np.concatenate(Xs), np.concatenate(ys)


def with_overrides(cfg: DatasetConfig, **kw) -> DatasetConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
