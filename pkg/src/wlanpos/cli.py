"""Command-line entry point: synthesize, decode, survey, train, evaluate.

Exit codes: 0 = ran to completion (even with zero decodes), 1 = usage error,
2 = I/O or format error.  Every run leaves a reproducibility stanza (seed,
config hash, version) in a `.meta.json` sidecar next to its outputs.
"""

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, channel, engine, fingerprint, frames, iqfile, modem
from .resample import Resampler


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_hash(params: dict) -> str:
    canonical = json.dumps(params, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def write_meta(out_path, params: dict, seed) -> None:
    meta = {"seed": seed, "config_sha256": _config_hash(params),
            "version": __version__, "params": params}
    Path(str(out_path) + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def _parse_taps(text: str) -> tuple:
    try:
        return tuple(complex(part) for part in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad tap list {text!r}: {exc}") from exc


def _add_engine_flags(sub):
    sub.add_argument("--config", help="key = value engine config file")
    sub.add_argument("--buffer-size", type=int)
    sub.add_argument("--threshold", type=float,
                     help="0.7-1.0 or the front panel's 700-1000 scale")
    sub.add_argument("--lut", action=argparse.BooleanOptionalAction)
    sub.add_argument("--matched-filter", action=argparse.BooleanOptionalAction)
    sub.add_argument("--sleep", action=argparse.BooleanOptionalAction)
    sub.add_argument("--sleep-ms", type=float)
    sub.add_argument("--eq-level", choices=["chip", "symbol"])
    sub.add_argument("--n-taps", type=int)
    sub.add_argument("--wlan-channel", type=int)
    sub.add_argument("--max-packets", type=int)
    sub.add_argument("--cal-offset-db", type=float)
    sub.add_argument("--single-thread", action="store_true",
                     help="run producer and consumer interleaved")


_FLAG_TO_FIELD = {
    "buffer_size": "buffer_size", "threshold": "threshold",
    "lut": "lut_enabled", "matched_filter": "matched_filter_enabled",
    "sleep": "sleep_enabled", "sleep_ms": "sleep_ms",
    "eq_level": "eq_level", "n_taps": "n_taps",
    "wlan_channel": "wlan_channel", "max_packets": "max_packets",
    "cal_offset_db": "cal_offset_db",
}


def _engine_config(args) -> engine.EngineConfig:
    cfg = engine.EngineConfig()
    if getattr(args, "config", None):
        cfg = engine.load_engine_config(args.config, cfg)
    for flag, field_name in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg = replace(cfg, **{field_name: value})
    if getattr(args, "single_thread", False):
        cfg = replace(cfg, pipelined=False)
    return cfg


def _print_summary(summary: engine.SessionSummary):
    print(f"records written : {summary.n_records}")
    rejects = ", ".join(f"{k}={v}" for k, v in sorted(summary.rejects.items()))
    print(f"rejects         : {rejects if rejects else 'none'}")
    print(f"stream length   : {summary.stream_seconds:.3f} s "
          f"({summary.n_source_samples} samples)")
    print(f"wall time       : {summary.wall_seconds:.3f} s "
          f"({summary.packets_per_second:.2f} packets/s)")
    if summary.dropped_blocks:
        print(f"dropped blocks  : {summary.dropped_blocks}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_beacon(args) -> int:
    ssid_bytes = args.ssid.encode("utf-8")
    if len(ssid_bytes) > 32:
        raise UsageError(f"SSID exceeds 32 bytes ({len(ssid_bytes)})")
    try:
        mac = frames.mac_from_str(args.mac)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    profile = channel.ChannelProfile(
        taps=_parse_taps(args.taps), cfo_hz=args.cfo_hz,
        delay_samples=args.delay, gain_db=args.gain_db,
        snr_db=args.snr_db if args.snr_db is not None else float("inf"))
    bits = frames.build_beacon(args.ssid, mac, seq=0, timestamp=0,
                               interval_tu=args.interval_tu)
    wave = modem.tx_waveform(bits, sample_rate=modem.PROC_RATE)
    lead = int(args.lead_us * modem.PROC_RATE / 1e6)
    stream = np.concatenate([np.zeros(lead, np.complex64), wave,
                             np.zeros(lead, np.complex64)])
    stream = channel.apply_channel(stream, profile, seed=args.seed)
    if args.sample_rate == modem.CAPTURE_RATE:
        stream = Resampler(25, 22).apply(stream)
    elif args.sample_rate != modem.PROC_RATE:
        raise UsageError("--sample-rate must be 22e6 or 25e6")
    iqfile.write_capture(args.out, stream, args.sample_rate, scale=args.scale)
    params = {"ssid": args.ssid, "mac": args.mac, "channel": args.channel,
              "taps": args.taps, "cfo_hz": args.cfo_hz, "snr_db": args.snr_db,
              "gain_db": args.gain_db, "delay": args.delay,
              "sample_rate": args.sample_rate, "interval_tu": args.interval_tu}
    write_meta(args.out, params, args.seed)
    print(f"wrote {args.out}")
    return 0


def cmd_gen_survey(args) -> int:
    params = channel.SurveyModelParams(
        ap_xy=(args.ap_x, args.ap_y), corr_length_m=args.corr_length_m,
        decay_db_per_tap=args.decay_db_per_tap, rician_k=args.rician_k,
        pathloss_exp=args.pathloss_exp, ref_snr_db=args.ref_snr_db,
        n_taps=args.n_taps or 5)
    scenario = channel.make_survey_scenario(
        rows=args.rows, cols=args.cols, spacing_m=args.spacing_m,
        params=params, seed=args.seed, n_points=args.n_rps,
        beacons_per_rp=args.beacons_per_rp,
        beacon_interval_tu=args.interval_tu,
        ssid=args.ssid, bssid=frames.mac_from_str(args.mac),
        wlan_channel=args.wlan_channel or 1,
        sample_rate_hz=args.sample_rate)
    out = channel.synth_survey(scenario, seed=args.seed, out_dir=args.out_dir,
                               workers=args.workers)
    stanza = {"rows": args.rows, "cols": args.cols, "n_rps": args.n_rps,
              "spacing_m": args.spacing_m, "beacons_per_rp": args.beacons_per_rp,
              "interval_tu": args.interval_tu, "model": asdict(params),
              "sample_rate": args.sample_rate}
    write_meta(Path(args.out_dir) / "survey", stanza, args.seed)
    print(f"wrote {len(out['captures'])} capture files and "
          f"{out['manifest']} (scale {out['scale']:.3f})")
    return 0


def cmd_decode(args) -> int:
    cfg = _engine_config(args)
    if args.out:
        cfg = replace(cfg, output_path=args.out)
    source = engine.FileSource(args.infile)
    summary = engine.run(source, cfg)
    engine.write_records(summary.records, cfg.output_path, cfg.n_taps)
    write_meta(cfg.output_path, {"input": str(args.infile),
                                 "config": asdict(cfg)}, seed=None)
    _print_summary(summary)
    return 0


def _survey_decode_one(job):
    rp_id, capture, out_path, cfg_dict = job
    cfg = engine.EngineConfig(**cfg_dict)
    summary = engine.run(engine.FileSource(capture), cfg)
    engine.write_records(summary.records, out_path, cfg.n_taps)
    return rp_id, summary.n_records, summary.rejects


def cmd_survey(args) -> int:
    in_dir = Path(args.in_dir)
    captures = sorted(in_dir.glob("capture_rp*.iq"))
    if not captures:
        raise FileNotFoundError(f"no capture_rp*.iq files under {in_dir}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = _engine_config(args)
    base = out_dir / "records.tsv"
    jobs = []
    for cap in captures:
        rp_id = int(cap.stem.replace("capture_rp", ""))
        out_path = engine.numbered_output_path(base, rp_id)
        jobs.append((rp_id, str(cap), str(out_path), asdict(cfg)))
    total = 0
    rejects = {}
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_survey_decode_one, jobs))
    else:
        results = [_survey_decode_one(job) for job in jobs]
    for rp_id, n, rej in results:
        total += n
        for k, v in rej.items():
            rejects[k] = rejects.get(k, 0) + v
    write_meta(base, {"in_dir": str(in_dir), "config": asdict(cfg)}, seed=None)
    print(f"decoded {len(jobs)} locations, {total} records total")
    if rejects:
        print("rejects: " + ", ".join(f"{k}={v}" for k, v in sorted(rejects.items())))
    return 0


def _records_by_rp(records_dir) -> dict:
    files = {}
    for path in sorted(Path(records_dir).glob("records_*.tsv")):
        files[int(path.stem.replace("records_", ""))] = path
    if not files:
        raise FileNotFoundError(f"no records_*.tsv files under {records_dir}")
    return files


def cmd_train(args) -> int:
    files = _records_by_rp(args.records_dir)
    grid = channel.grid_from_manifest(args.manifest)
    rmap = fingerprint.build_radio_map(files, grid, args.scenario,
                                       n_taps=args.n_taps or 5)
    train_map, _ = fingerprint.split_train_test(rmap, args.n_train,
                                                args.n_test, args.seed)
    model = fingerprint.svm_train(train_map, kernel=args.kernel, C=args.C)
    model.split_spec = {"n_train": args.n_train, "n_test": args.n_test,
                        "seed": args.seed, "scenario": args.scenario}
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    map_path = out_dir / f"radiomap_{args.scenario}.tsv"
    model_path = out_dir / f"model_{args.scenario}.joblib"
    fingerprint.write_radio_map(rmap, map_path)
    fingerprint.save_model(model, model_path)
    params = {"scenario": args.scenario, "kernel": model.kernel_spec,
              "n_train": args.n_train, "n_test": args.n_test,
              "records_dir": str(args.records_dir)}
    write_meta(model_path, params, args.seed)
    print(f"trained {args.scenario}: {model.n_pair_classifiers} pair "
          f"classifiers over {model.classes.size} RPs")
    print(f"wrote {map_path} and {model_path}")
    return 0


def cmd_evaluate(args) -> int:
    model_path = Path(args.model)
    if not model_path.exists():
        raise FileNotFoundError(f"missing model file: {model_path}")
    map_path = Path(args.radiomap)
    if not map_path.exists():
        raise FileNotFoundError(f"missing radio-map file: {map_path}")
    model = fingerprint.load_model(model_path)
    rmap = fingerprint.read_radio_map(map_path)
    split = model.split_spec
    train_map, test_map = fingerprint.split_train_test(
        rmap, split["n_train"], split["n_test"], split["seed"])
    report = fingerprint.evaluate(model, test_map)
    report.metadata["scenario"] = split.get("scenario", "?")
    if args.knn_k:
        knn = fingerprint.knn_baseline(train_map, test_map, k=args.knn_k)
        report.metadata["knn_accuracy_pct"] = round(knn.prediction_accuracy, 2)
        report.metadata["knn_mean_m"] = round(knn.mean_m, 4)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = split.get("scenario", "eval")
    report_path = out_dir / f"report_{scenario}.txt"
    cdf_path = out_dir / f"cdf_{scenario}.tsv"
    report_path.write_text(report.format_table() + "\n")
    report.save_cdf(cdf_path)
    write_meta(report_path, {"model": str(model_path), "split": split},
               split.get("seed"))
    print(report.format_table())
    print(f"wrote {report_path} and {cdf_path}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="wlanpos", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    g = subs.add_parser("gen-beacon", help="one beacon through a channel into a capture file")
    g.add_argument("--ssid", default="TEST-B")
    g.add_argument("--mac", default="A4-2B-8C-04-E8-9D")
    g.add_argument("--channel", type=int, default=1)
    g.add_argument("--out", default="beacon.iq")
    g.add_argument("--taps", default="1")
    g.add_argument("--cfo-hz", type=float, default=0.0)
    g.add_argument("--snr-db", type=float, default=None)
    g.add_argument("--gain-db", type=float, default=0.0)
    g.add_argument("--delay", type=int, default=256)
    g.add_argument("--interval-tu", type=int, default=100)
    g.add_argument("--lead-us", type=float, default=200.0)
    g.add_argument("--sample-rate", type=float, default=modem.CAPTURE_RATE)
    g.add_argument("--scale", type=float, default=iqfile.DEFAULT_SCALE)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_beacon)

    s = subs.add_parser("gen-survey", help="synthesize a survey: captures + manifest")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--rows", type=int, default=7)
    s.add_argument("--cols", type=int, default=10)
    s.add_argument("--n-rps", type=int, default=69)
    s.add_argument("--spacing-m", type=float, default=0.6096)
    s.add_argument("--beacons-per-rp", type=int, default=600)
    s.add_argument("--interval-tu", type=int, default=100)
    s.add_argument("--ssid", default="TEST-B")
    s.add_argument("--mac", default="A4-2B-8C-04-E8-9D")
    s.add_argument("--wlan-channel", type=int, default=1)
    s.add_argument("--sample-rate", type=float, default=modem.CAPTURE_RATE)
    s.add_argument("--ap-x", type=float, default=2.7)
    s.add_argument("--ap-y", type=float, default=1.8)
    s.add_argument("--corr-length-m", type=float, default=2.0)
    s.add_argument("--decay-db-per-tap", type=float, default=6.0)
    s.add_argument("--rician-k", type=float, default=5.0)
    s.add_argument("--pathloss-exp", type=float, default=2.0)
    s.add_argument("--ref-snr-db", type=float, default=30.0)
    s.add_argument("--n-taps", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_gen_survey)

    d = subs.add_parser("decode", help="process a capture file into records")
    d.add_argument("infile")
    d.add_argument("--out")
    _add_engine_flags(d)
    d.set_defaults(func=cmd_decode)

    v = subs.add_parser("survey", help="batch-decode per-RP captures into numbered record files")
    v.add_argument("--in-dir", required=True)
    v.add_argument("--out-dir", required=True)
    v.add_argument("--workers", type=int, default=1)
    _add_engine_flags(v)
    v.set_defaults(func=cmd_survey)

    t = subs.add_parser("train", help="build radio map and SVM model from records")
    t.add_argument("--records-dir", required=True)
    t.add_argument("--manifest", required=True)
    t.add_argument("--scenario", choices=fingerprint.FEATURE_SETS,
                   default="rss_plus_taps")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--n-train", type=int, default=500)
    t.add_argument("--n-test", type=int, default=100)
    t.add_argument("--n-taps", type=int, default=5)
    t.add_argument("--kernel", choices=["rbf", "linear"], default="rbf")
    t.add_argument("--C", type=float, default=10.0)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = subs.add_parser("evaluate", help="score a trained model on the held-out split")
    e.add_argument("--model", required=True)
    e.add_argument("--radiomap", required=True)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--knn-k", type=int, default=0,
                   help="also run a KNN baseline with this k")
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
