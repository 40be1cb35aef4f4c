"""Command-line entry point: synth, dataset, train, eval, simulate, inspect.

Every command writes its outputs plus a ``<command>_resolved_config.json``
snapshot into the output directory (``--out``, else ``$JAMLAB_OUT``, else
``./jamlab_out``). Settings resolve as: built-in defaults < ``--config`` JSON
file < command-line flags. Exit codes: 0 ok, 1 runtime/validation failure,
2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import hopsim, raster, synth
from .detector import checkpoint, network, training
from .errors import ConfigurationError, FormatError, JamlabError

log = logging.getLogger("jamlab")

OUT_ENV = "JAMLAB_OUT"
DEFAULT_OUT = "jamlab_out"

SYNTH_KINDS = ("single-tone", "multi-tone", "chirp", "sawtooth", "broadband", "ofdm")

DEFAULTS = {
    "synth": {"sample_rate": synth.DEFAULT_SAMPLE_RATE_HZ, "duration": 1.0, "phase": 0.0,
              "amplitude": 1.0, "f0": 1000.0, "carrier": 0.0, "slope": 0.0,
              "envelope": "constant", "comm_center": 0.0, "subcarriers": 64, "cp": 16,
              "occupied": 52 / 64, "raster": False, "spectrum": False, "image_size": raster.GRID_SIZE},
    "dataset": {"profile": "desk"},
    "train": {"epochs": 50, "lr": 0.003, "momentum": 0.9, "batch_size": 8,
              "shuffle_seed": None, "dropout_seed": None, "init_seed": None},
    "eval": {"split": "test", "threshold": 0.5},
    "simulate": {"jammer": "sweep", "jam_channels": "3", "sweep_period": 8, "sweep_width": 1,
                 "hop_channels": 1, "bb_first": 0, "bb_last": 15, "predictor": "oracle",
                 "random_p": 0.5, "jsr": 10.0, "shift_limit": "4", "stay_if_clear": True,
                 "start_channel": 0, "channels": 16, "slots": 1000},
}


# ---------------------------------------------------------------------------
# argument parsing

def _global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=d, help="JSON file of option defaults")
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0, help="master seed")
    parser.add_argument("--out", metavar="DIR", default=d, help="output directory")
    parser.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = argparse.ArgumentParser(prog="jamlab", description=__doc__.splitlines()[0])
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    # synth ---------------------------------------------------------------
    ps = sub.add_parser("synth", parents=[common], help="synthesise a waveform to a JSIQ file")
    kinds = ps.add_subparsers(dest="kind", required=True)
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--sample-rate", type=float)
    shared.add_argument("--duration", type=float, help="seconds")
    shared.add_argument("--name", help="output file stem (default: the kind)")
    shared.add_argument("--raster", action="store_true", default=None, help="also write a JGRD grid")
    shared.add_argument("--image-size", type=int)
    shared.add_argument("--spectrum", action="store_true", default=None,
                        help="also write a frequency/power table")

    k = kinds.add_parser("single-tone", parents=[common, shared])
    k.add_argument("--power", type=float, required=True)
    k.add_argument("--freq", type=float, required=True)
    k.add_argument("--phase", type=float)

    k = kinds.add_parser("multi-tone", parents=[common, shared])
    k.add_argument("--tone", action="append", required=True, metavar="POWER,FREQ,PHASE")

    k = kinds.add_parser("chirp", parents=[common, shared])
    k.add_argument("--slope", type=float, required=True, help="Hz/s")
    k.add_argument("--f0", type=float)
    k.add_argument("--amplitude", type=float)
    k.add_argument("--phase", type=float)

    k = kinds.add_parser("sawtooth", parents=[common, shared])
    k.add_argument("--period", type=float, required=True, help="sweep period, s")
    k.add_argument("--slope", type=float)
    k.add_argument("--carrier", type=float)
    k.add_argument("--amplitude", type=float)
    k.add_argument("--phase", type=float)
    k.add_argument("--envelope", choices=[m.value for m in synth.EnvelopeMode])

    k = kinds.add_parser("broadband", parents=[common, shared])
    k.add_argument("--center", type=float, required=True)
    k.add_argument("--bandwidth", type=float, required=True)
    k.add_argument("--channel-bandwidth", type=float, required=True)
    k.add_argument("--comm-center", type=float)

    k = kinds.add_parser("ofdm", parents=[common, shared])
    k.add_argument("--subcarriers", type=int)
    k.add_argument("--cp", type=int)
    k.add_argument("--occupied", type=float)

    # dataset -------------------------------------------------------------
    pd = sub.add_parser("dataset", parents=[common], help="generate a labelled corpus")
    pd.add_argument("--profile", choices=sorted(ds.PROFILES))
    pd.add_argument("--count", type=int)
    pd.add_argument("--image-size", type=int)
    pd.add_argument("--threshold", type=float, help="label threshold, dB JSR")
    pd.add_argument("--jsr-range", type=float, nargs=2, metavar=("LO", "HI"))
    pd.add_argument("--snr-range", type=float, nargs=2, metavar=("LO", "HI"))
    pd.add_argument("--weak-negative-fraction", type=float)

    # train ---------------------------------------------------------------
    pt = sub.add_parser("train", parents=[common], help="train the detector")
    pt.add_argument("--manifest", required=True)
    pt.add_argument("--epochs", type=int)
    pt.add_argument("--lr", type=float)
    pt.add_argument("--momentum", type=float)
    pt.add_argument("--batch-size", type=int)
    pt.add_argument("--init-seed", type=int)
    pt.add_argument("--shuffle-seed", type=int)
    pt.add_argument("--dropout-seed", type=int)

    # eval ----------------------------------------------------------------
    pe = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--manifest", required=True)
    pe.add_argument("--split", choices=["train", "test"])
    pe.add_argument("--threshold", type=float)

    # simulate ------------------------------------------------------------
    pm = sub.add_parser("simulate", parents=[common], help="run the frequency-hopping simulator")
    pm.add_argument("--jammer", choices=["static", "sweep", "random", "broadband"])
    pm.add_argument("--jam-channels", help="comma-separated channels for a static jammer")
    pm.add_argument("--sweep-period", type=int)
    pm.add_argument("--sweep-width", type=int)
    pm.add_argument("--hop-channels", type=int, help="channels a random hopper jams per slot")
    pm.add_argument("--bb-first", type=int, help="first channel covered by a broadband jammer")
    pm.add_argument("--bb-last", type=int, help="last channel covered by a broadband jammer")
    pm.add_argument("--predictor", choices=["oracle", "always_clear", "random", "trained"])
    pm.add_argument("--random-p", type=float)
    pm.add_argument("--checkpoint")
    pm.add_argument("--manifest", help="dataset whose config and norm stats the model was trained on")
    pm.add_argument("--jsr", type=float, help="JSR of synthesised jammed slots (trained predictor)")
    pm.add_argument("--shift-limit", help="max channels per hop, or 'none'")
    pm.add_argument("--no-stay", dest="stay_if_clear", action="store_false", default=None)
    pm.add_argument("--start-channel", type=int)
    pm.add_argument("--channels", type=int)
    pm.add_argument("--slots", type=int)

    # inspect -------------------------------------------------------------
    pi = sub.add_parser("inspect", parents=[common], help="print the header of a JSIQ/JGRD/JNET file")
    pi.add_argument("path")
    return p


def resolve(args):
    """Merge defaults, the config file and explicit flags into one dict."""
    cfg = dict(DEFAULTS.get(args.command, {}))
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a JSON object")
        section = loaded.get(args.command, loaded)
        cfg.update({k.replace("-", "_"): v for k, v in section.items() if not isinstance(v, dict)})
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "quiet", "out"):
            cfg[key] = value
    cfg.setdefault("seed", 0)
    return cfg


def out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(out, command, cfg):
    (out / f"{command}_resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _emit(text, quiet=False):
    if not quiet:
        print(text)


# ---------------------------------------------------------------------------
# commands

def _parse_tone(text):
    try:
        power, freq, phase = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"tone must be POWER,FREQ,PHASE, got {text!r}") from None
    return power, freq, phase


def build_synth(cfg):
    kind = cfg["kind"]
    fs = float(cfg["sample_rate"])
    dur = float(cfg["duration"])
    seed = int(cfg["seed"])
    if kind == "single-tone":
        return synth.gen_single_tone(synth.SingleToneParams(cfg["power"], cfg["freq"], cfg["phase"]), fs, dur)
    if kind == "multi-tone":
        tones = [_parse_tone(t) if isinstance(t, str) else tuple(t) for t in cfg["tone"]]
        return synth.gen_multi_tone(synth.MultiToneParams(tuple(tones)), fs, dur)
    if kind == "chirp":
        p = synth.ChirpParams(cfg["amplitude"], cfg["f0"], cfg["slope"], cfg["phase"], dur)
        return synth.gen_linear_sweep(p, fs)
    if kind == "sawtooth":
        p = synth.SawtoothSweepParams(cfg["amplitude"], cfg["carrier"], cfg["slope"], cfg["period"],
                                      cfg["envelope"], cfg["phase"])
        return synth.gen_sawtooth_sweep(p, fs, dur, seed)
    if kind == "broadband":
        p = synth.BroadbandParams(cfg["center"], cfg["bandwidth"], cfg["channel_bandwidth"], cfg["comm_center"])
        return synth.gen_broadband_noise(p, fs, dur, seed)
    if kind == "ofdm":
        oc = synth.OfdmConfig(n_subcarriers=cfg["subcarriers"], cp_len=cfg["cp"], occupied_fraction=cfg["occupied"])
        return synth.gen_ofdm(oc, fs, dur, seed)
    raise ConfigurationError(f"unknown synth kind {kind!r}")


def cmd_synth(args, cfg, out):
    buf = build_synth(cfg)
    stem = cfg.get("name") or cfg["kind"]
    iq = out / f"{stem}.jsiq"
    synth.save_iq(buf, iq)
    written = [iq]
    if cfg["raster"]:
        size = int(cfg["image_size"])
        path = out / f"{stem}.jgrd"
        raster.save_grid(raster.preprocess(buf, size, raster.scaled_resize_target(size)), path)
        written.append(path)
    if cfg["spectrum"]:
        f, pw = synth.power_spectrum(buf)
        path = out / f"{stem}_spectrum.txt"
        np.savetxt(path, np.column_stack([f, pw]), fmt="%.9g", header="frequency_hz power", comments="# ")
        written.append(path)
    _emit(f"{cfg['kind']}: {len(buf)} samples at {buf.sample_rate_hz:g} Hz, "
          f"mean power {buf.power():.6g}", args.quiet)
    for pth in written:
        _emit(f"wrote {pth}", args.quiet)
    return 0


def dataset_config(cfg) -> ds.DatasetConfig:
    base = ds.PROFILES[cfg["profile"]]
    return ds.with_overrides(
        base, n_examples=cfg.get("count"), image_size=cfg.get("image_size"),
        label_threshold_db=cfg.get("threshold"),
        jsr_range_db=tuple(cfg["jsr_range"]) if cfg.get("jsr_range") else None,
        snr_range_db=tuple(cfg["snr_range"]) if cfg.get("snr_range") else None,
        weak_negative_fraction=cfg.get("weak_negative_fraction"))


def cmd_dataset(args, cfg, out):
    if cfg.get("count") is not None and cfg["count"] < 1:
        raise ConfigurationError(f"count must be positive, got {cfg['count']}")
    dcfg = dataset_config(cfg)
    m = ds.generate_dataset(dcfg, cfg["seed"], out)
    c = m.counts()
    _emit(f"{c['train']['total']} train / {c['test']['total']} test", args.quiet)
    for s in ("train", "test"):
        _emit(f"  {s}: {c[s]['positive']} jammed, {c[s]['total'] - c[s]['positive']} clean", args.quiet)
    _emit(f"manifest sha256 {ds.manifest_checksum(out / ds.MANIFEST_NAME)}", args.quiet)
    return 0


def cmd_train(args, cfg, out):
    m = ds.load_manifest(cfg["manifest"])
    seed = int(cfg["seed"])
    tcfg = training.TrainConfig(
        epochs=int(cfg["epochs"]), learning_rate=float(cfg["lr"]), momentum=float(cfg["momentum"]),
        batch_size=int(cfg["batch_size"]),
        shuffle_seed=seed if cfg["shuffle_seed"] is None else int(cfg["shuffle_seed"]),
        dropout_seed=seed if cfg["dropout_seed"] is None else int(cfg["dropout_seed"]))
    init_seed = seed if cfg["init_seed"] is None else int(cfg["init_seed"])
    spec = network.NetworkSpec(input_size=m.generation_config.image_size)
    model = network.DetectorModel(spec, init_seed)
    started = time.time()

    def report(s):
        _emit(f"epoch {s.epoch:3d}  train loss {s.mean_loss:.6f}", args.quiet)

    model, hist = training.train(model, m, tcfg, on_epoch=report)
    checkpoint.save_model(model, out / "model.jnet")
    with open(out / "loss_curve.tsv", "w") as fh:
        fh.write("epoch\tmean_train_loss\tmin_batch_loss\n")
        for e in hist.epochs:
            fh.write(f"{e.epoch}\t{e.mean_loss:.9g}\t{e.min_batch_loss:.9g}\n")
    summary = {
        "final_train_loss": hist.final_loss, "min_epoch_train_loss": hist.min_loss,
        "min_batch_loss": min(e.min_batch_loss for e in hist.epochs),
        "epochs": tcfg.epochs, "train_config": tcfg.to_dict(), "init_seed": init_seed,
        "spec": asdict(spec), "flatten_len": spec.flatten_len,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_seconds": round(time.time() - started, 3),
    }
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    first, last = hist.losses[0], hist.losses[-1]
    trend = "decreasing" if last < first else "not decreasing"
    _emit(f"loss {first:.4f} -> {last:.4f} ({trend}); wrote {out / 'model.jnet'}", args.quiet)
    return 0


def cmd_eval(args, cfg, out):
    model = checkpoint.load_model(cfg["checkpoint"])
    m = ds.load_manifest(cfg["manifest"])
    if model.spec.input_size != m.generation_config.image_size:
        raise ConfigurationError(
            f"checkpoint expects {model.spec.input_size}px grids, dataset has {m.generation_config.image_size}px")
    rep = training.evaluate(model, m, cfg["split"], float(cfg["threshold"]))
    (out / "metrics.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    table = rep.table()
    (out / "metrics.txt").write_text(table + "\n")
    _emit(table, args.quiet)
    _emit(f"mean loss {rep.mean_loss:.6f}", args.quiet)
    return 0


def build_simulation(cfg):
    plan = hopsim.ChannelPlan(n_channels=int(cfg["channels"]))
    kind = cfg["jammer"]
    if kind == "static":
        chans = cfg["jam_channels"]
        chans = [int(c) for c in str(chans).split(",") if str(c).strip()] if isinstance(chans, str) else chans
        proc = hopsim.JammerProcess("static_band", channels=tuple(chans))
    elif kind == "sweep":
        proc = hopsim.JammerProcess("sweep", sweep_period_slots=int(cfg["sweep_period"]),
                                    sweep_width=int(cfg["sweep_width"]))
    elif kind == "random":
        proc = hopsim.JammerProcess("random_hopper", hop_seed=int(cfg["seed"]),
                                    n_hop_channels=int(cfg["hop_channels"]))
    else:
        proc = hopsim.JammerProcess.broadband_over(plan, int(cfg["bb_first"]), int(cfg["bb_last"]))
    limit = str(cfg["shift_limit"]).lower()
    policy = hopsim.HopPolicyConfig(None if limit in ("none", "unlimited", "0") else int(limit),
                                    stay_if_clear=bool(cfg["stay_if_clear"]),
                                    start_channel=int(cfg["start_channel"]))
    pred = cfg["predictor"]
    if pred == "trained":
        if not cfg.get("checkpoint") or not cfg.get("manifest"):
            raise ConfigurationError("trained predictor needs --checkpoint and --manifest")
        model = checkpoint.load_model(cfg["checkpoint"])
        m = ds.load_manifest(cfg["manifest"], check_files=False)
        source = hopsim.PredictionSource("trained_model", model=model, norm_stats=m.norm_stats,
                                         dataset_config=m.generation_config, jsr_db=float(cfg["jsr"]))
    else:
        source = hopsim.PredictionSource(pred, random_p=float(cfg["random_p"]))
    return plan, proc, source, policy


def cmd_simulate(args, cfg, out):
    plan, proc, source, policy = build_simulation(cfg)
    rep = hopsim.run_simulation(plan, proc, source, policy, int(cfg["slots"]), int(cfg["seed"]))
    rep.write(out)
    s = rep.summary()
    _emit(f"delivery_ratio {s['delivery_ratio']:.4f}  hops {s['hop_count']}  "
          f"precision {s['prediction_precision']:.4f}  recall {s['prediction_recall']:.4f}", args.quiet)
    return 0


def inspect_file(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == synth.JSIQ_MAGIC:
        return synth.read_iq_header(path)
    if magic == raster.JGRD_MAGIC:
        return raster.read_grid_header(path)
    if magic == checkpoint.MAGIC:
        h = checkpoint.read_header(path)
        h = dict(h)
        h["spec"] = asdict(h["spec"])
        h["flatten_len"] = network.NetworkSpec(**h["spec"]).flatten_len
        return h
    raise FormatError(f"{path}: unrecognised magic {magic!r}")


def cmd_inspect(args, cfg, out):
    print(json.dumps(inspect_file(cfg["path"]), indent=2, sort_keys=True))
    return 0


COMMANDS = {"synth": cmd_synth, "dataset": cmd_dataset, "train": cmd_train, "eval": cmd_eval,
            "simulate": cmd_simulate, "inspect": cmd_inspect}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.quiet = bool(getattr(args, "quiet", False))
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        if args.command == "inspect":
            return cmd_inspect(args, cfg, None)
        out = out_dir(args)
        _snapshot(out, args.command, cfg)
        return COMMANDS[args.command](args, cfg, out)
    except (JamlabError, ValueError, OSError) as exc:
        print(f"jamlab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
