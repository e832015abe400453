"""``epsfp`` command-line entry point.

Every command writes only under ``--out`` and stores the resolved
configuration next to its outputs in ``run.json``. Rerunning a command with the
same inputs reproduces its outputs byte for byte; wall-clock time appears only
in log lines.

Exit codes: 0 ok, 1 acceptance or evaluation failure, 2 usage or config error,
3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, cnn
from .config import PopulationConfig, RunConfig, load_config
from .dataset import (SCENARIOS, DatasetHeader, PayloadKind, Record, build_scenario, iter_dataset,
                      save_scenario, write_dataset)
from .eps import eps_of_frame, write_eps_table
from .errors import DatasetFormatError, NumericalError, ValidationError
from .evaluation import (MODEL_KINDS, EvalConfig, emit_report, evaluate_cross_domain, evaluate_same_domain,
                         features_from_records, model_input, named_features)
from .registry import Registry, Verdict, load_registry, save_registry
from .waveform import FIGURE3_CFOS_HZ, FIGURE3_DURATION_S, SAMPLE_RATE_HZ, figure3_humps

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("epsfp")


class UsageError(Exception):
    pass


# helpers

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out: Path, command: str, payload: dict) -> None:
    doc = {"tool": "epsfp", "version": __version__, "command": command, **payload}
    (out / "run.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _resolve_config(args) -> RunConfig:
    """Config file values, then explicit flags on top."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "frames", None) is not None:
        changes["frames_per_device"] = args.frames
    if getattr(args, "devices", None) is not None:
        changes["population"] = PopulationConfig(**{**cfg.population.__dict__, "n_devices": args.devices})
    if getattr(args, "scenario", None) is not None:
        changes["scenario"] = replace(cfg.scenario, name=args.scenario)
    if getattr(args, "epochs", None) is not None:
        changes["train"] = cnn.TrainConfig(**{**cfg.train.__dict__, "epochs": args.epochs})
    return cfg.replace(**changes) if changes else cfg


def _dataset_features(path, name=None):
    header, recs = iter_dataset(path)
    return features_from_records(header, recs, name or Path(path).stem)


def _fmt(x: float) -> str:
    return repr(float(x))


# commands

def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    population = cfg.population.build()
    ds = build_scenario(population, cfg.scenario, cfg.frames_per_device, cfg.seed)
    path = out / f"{cfg.scenario.name}.epsf"
    save_scenario(path, ds)
    log.info("wrote %d records to %s", len(ds.records), path)
    _write_run(out, "simulate", {"config": cfg.to_dict(), "outputs": [path.name, path.name + ".json"]})
    return EXIT_OK


def cmd_eps(args) -> int:
    out = _out_dir(args)
    header, recs = iter_dataset(args.dataset)
    if header.payload_kind is not PayloadKind.IQ:
        raise UsageError("eps expects an IQ dataset")
    tables = out / "eps_tables"
    tables.mkdir(exist_ok=True)
    seen: set[tuple] = set()
    n_fft, fs = None, header.sample_rate_hz

    def converted():
        nonlocal n_fft
        for rec in recs:
            t = eps_of_frame(rec.to_frame(fs))
            n_fft = t.n_fft
            key = (rec.device_id, rec.domain.day, rec.domain.location)
            if key not in seen:
                # first frame of each device and domain, for plotting
                seen.add(key)
                write_eps_table(tables / f"dev{key[0]}_day{key[1]}_loc{key[2]}.tsv", t)
            yield Record(rec.device_id, rec.domain, t.as_array().reshape(-1))

    path = out / (Path(args.dataset).stem + "-eps.epsf")
    # the first tensor fixes the row length recorded in the header
    stream = converted()
    first = next(stream, None)
    if first is None:
        raise ValidationError("dataset has no records")
    stored = write_dataset(path, DatasetHeader(fs, n_fft, 0, PayloadKind.EPS), _chain(first, stream))
    log.info("wrote %d EPS records to %s", stored.record_count, path)
    _write_run(out, "eps", {"inputs": [str(args.dataset)], "outputs": [path.name, "eps_tables/"],
                            "records": stored.record_count})
    return EXIT_OK


def _chain(first, rest):
    yield first
    yield from rest


def cmd_figure3(args) -> int:
    out = _out_dir(args)
    cfos = tuple(args.cfo) if args.cfo else FIGURE3_CFOS_HZ
    results = figure3_humps(cfos, args.duration)
    lines = ["cfo_hz\thump_count\testimate\tpeak_times_s"]
    for cfo, ha in results:
        peaks = ",".join(f"{p / SAMPLE_RATE_HZ:.6g}" for p in ha.peak_samples)
        lines.append(f"{cfo:g}\t{ha.count}\t{ha.estimate:.4f}\t{peaks}")
        with open(out / f"envelope_cfo{cfo:g}.tsv", "w") as fh:
            fh.write("# time_s envelope\n")
            for t, e in zip(ha.envelope_times_s, ha.envelope):
                fh.write(f"{_fmt(t)} {_fmt(e)}\n")
        print(f"cfo {cfo:g} Hz: {ha.count} humps")
    (out / "hump_counts.tsv").write_text("\n".join(lines) + "\n")
    _write_run(out, "figure3", {"cfos_hz": list(cfos), "duration_s": args.duration})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    if args.model == "nearest_centroid":
        raise UsageError("train fits the CNN models; nearest_centroid needs no checkpoint")
    fs = _dataset_features(args.dataset)
    x = model_input(fs, args.model)
    if x.shape[-1] == 0:
        raise UsageError(f"{args.model} needs an IQ dataset")
    class_ids = np.unique(fs.device_ids)
    y = np.searchsorted(class_ids, fs.device_ids)
    arch = cnn.CnnArchitecture(n_classes=class_ids.size, input_width=x.shape[-1])
    tcfg = cnn.TrainConfig(**{**cfg.train.__dict__, "seed": cfg.seed})
    res = cnn.train(x, y, arch, tcfg, log=log.info)
    path = out / f"{args.model}.ckpt"
    cnn.save_checkpoint(path, res.params)
    (out / "losses.tsv").write_text("epoch\tloss\taccuracy\n" + "".join(
        f"{i + 1}\t{_fmt(l)}\t{_fmt(a)}\n" for i, (l, a) in enumerate(zip(res.epoch_losses, res.epoch_accuracies))))
    _write_run(out, "train", {"config": cfg.to_dict(), "model": args.model, "dataset": str(args.dataset),
                              "class_ids": class_ids.tolist(), "outputs": [path.name, "losses.tsv"]})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    train_names = list(args.train or cfg.train_domains or ["A"])
    test_names = list(args.test or cfg.test_domains or train_names)
    models = list(args.model or cfg.models)
    ecfg = EvalConfig(k=cfg.folds, seed=cfg.seed, train=cfg.train, cross_domain_models=cfg.cross_domain_models)
    population = cfg.population.build()
    cache = {}

    def feats(name):
        if name not in cache:
            cache[name] = named_features(name, population, cfg.frames_per_device, cfg.seed, cfg.scenario,
                                         args.jobs)
        return cache[name]

    reports = []
    for tr in train_names:
        for model in models:
            if model not in MODEL_KINDS:
                raise UsageError(f"unknown model {model!r}")
            same = [t for t in test_names if t == tr]
            cross = [feats(t) for t in test_names if t != tr]
            if same:
                reports.append(evaluate_same_domain(feats(tr), model, ecfg, log=log.info))
            if cross:
                reports.extend(evaluate_cross_domain(feats(tr), cross, model, ecfg, log.info))
    emit_report(reports, out / "report.csv")
    for r in reports:
        print(f"{r.train_domain} -> {r.test_domain} {r.model_kind}: {r.mean_accuracy:.4f}")
    _write_run(out, "evaluate", {"config": cfg.to_dict(), "train_domains": train_names,
                                 "test_domains": test_names, "models": models, "outputs": ["report.csv"]})
    if args.min_accuracy is not None and any(r.mean_accuracy < args.min_accuracy for r in reports):
        return EXIT_FAIL
    return EXIT_OK


def _registry(args, out: Path) -> Registry:
    path = Path(args.registry) if args.registry else out / "registry.epsr"
    if args.registry and not path.exists():
        raise UsageError(f"registry {path} does not exist")
    reg = Registry(path=None, audit_log=out / "audit.log", clock=lambda: args.timestamp)
    if path.exists():
        reg.templates = load_registry(path)
    return reg


def _frames_of(path, device_id=None):
    header, recs = iter_dataset(path)
    for rec in recs:
        if device_id is not None and rec.device_id != device_id:
            continue
        if header.payload_kind is PayloadKind.IQ:
            yield rec.to_frame(header.sample_rate_hz)
        else:
            yield rec.eps_rows().astype(np.float64).reshape(-1)


def cmd_enroll(args) -> int:
    out = _out_dir(args)
    reg = _registry(args, out)
    ids = args.device if args.device else sorted({r.device_id for r in iter_dataset(args.dataset)[1]})
    for dev in ids:
        frames = list(_frames_of(args.dataset, dev))
        if args.max_frames:
            frames = frames[:args.max_frames]
        t = reg.enroll(dev, frames, labels_from_frames=False)
        print(f"enrolled {dev}: threshold {t.threshold:.4f} from {t.n_enroll_frames} frames")
    save_registry(out / "registry.epsr", reg.templates)
    _write_run(out, "enroll", {"dataset": str(args.dataset), "devices": [int(d) for d in ids],
                               "timestamp": args.timestamp, "outputs": ["registry.epsr", "audit.log"]})
    return EXIT_OK


def cmd_verify(args) -> int:
    out = _out_dir(args)
    reg = _registry(args, out)
    lines = ["index\ttrue_id\tclaimed_id\tmatched_id\tscore\tthreshold\tverdict"]
    header, recs = iter_dataset(args.dataset)
    n_bad = 0
    for i, rec in enumerate(recs):
        frame = rec.to_frame(header.sample_rate_hz) if header.payload_kind is PayloadKind.IQ \
            else rec.eps_rows().astype(np.float64).reshape(-1)
        claim = rec.device_id if args.claim is None else args.claim
        d = reg.verify(frame, claim)
        n_bad += d.verdict is not Verdict.ACCEPTED
        lines.append(f"{i}\t{rec.device_id}\t{claim}\t{d.matched_id}\t{_fmt(d.score)}\t{_fmt(d.threshold_used)}"
                     f"\t{d.verdict.value}")
    (out / "decisions.tsv").write_text("\n".join(lines) + "\n")
    print(f"{len(lines) - 1 - n_bad}/{len(lines) - 1} accepted")
    _write_run(out, "verify", {"dataset": str(args.dataset), "claim": args.claim, "outputs": ["decisions.tsv"]})
    return EXIT_OK


def cmd_auth(args) -> int:
    out = _out_dir(args)
    reg = _registry(args, out)
    frames = list(_frames_of(args.dataset))
    if not frames:
        raise ValidationError("dataset has no records")
    first = reg.verify(frames[0], args.claim)
    if first.verdict is not Verdict.ACCEPTED:
        print(f"initial verification of {args.claim} rejected (score {first.score:.4f})")
        (out / "decisions.tsv").write_text("index\tmean_score\tthreshold\tverdict\n")
        _write_run(out, "auth", {"dataset": str(args.dataset), "claim": args.claim, "window": args.window,
                                 "outputs": ["decisions.tsv"]})
        return EXIT_FAIL
    sid = reg.open_session(first)
    lines = ["index\tmatched_id\tmean_score\tthreshold\tverdict"]
    first_alert = None
    for i, d in enumerate(reg.continuous_auth(frames, sid, args.window)):
        if d.verdict is Verdict.ALERT and first_alert is None:
            first_alert = i
        lines.append(f"{i}\t{d.matched_id}\t{_fmt(d.score)}\t{_fmt(d.threshold_used)}\t{d.verdict.value}")
    (out / "decisions.tsv").write_text("\n".join(lines) + "\n")
    print("no alert" if first_alert is None else f"first alert at frame {first_alert}")
    _write_run(out, "auth", {"dataset": str(args.dataset), "claim": args.claim, "window": args.window,
                             "outputs": ["decisions.tsv"]})
    return EXIT_OK


def cmd_accept(args) -> int:
    from .acceptance import CRITERIA, format_results, run_acceptance

    only = [c.strip().upper() for c in args.only.split(",")] if args.only else None
    if only:
        bad = [c for c in only if c not in CRITERIA]
        if bad:
            raise UsageError(f"unknown criteria {bad}")
    results = run_acceptance(args.profile, args.jobs, only, log=log.info, echo=print)
    summary = format_results(results)
    print(summary.splitlines()[-1])
    if args.out:
        out = _out_dir(args)
        (out / "acceptance.txt").write_text(summary)
        (out / "acceptance.json").write_text(json.dumps(
            [{"id": r.cid, "title": r.title, "passed": r.passed, "detail": r.detail,
              "metrics": r.metrics, "seconds": round(r.seconds, 1), "budget_s": r.budget_s} for r in results], indent=1, sort_keys=True, default=_json_default) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epsfp", description="Envelope power spectrum RF fingerprinting toolkit.")
    p.add_argument("--version", action="version", version=f"epsfp {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True, config=False):
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        if config:
            sp.add_argument("--config", help="JSON run configuration")
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("simulate", help="synthesise an IQ dataset for one scenario")
    common(sp, config=True)
    sp.add_argument("--scenario", choices=SCENARIOS)
    sp.add_argument("--devices", type=int)
    sp.add_argument("--frames", type=int, help="frames per device per domain")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("eps", help="convert an IQ dataset to EPS tensors")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.set_defaults(func=cmd_eps)

    sp = sub.add_parser("figure3", help="envelope hump counts for the long-burst CFO sweep")
    common(sp)
    sp.add_argument("--cfo", type=float, action="append", help="CFO in Hz (repeatable)")
    sp.add_argument("--duration", type=float, default=FIGURE3_DURATION_S)
    sp.set_defaults(func=cmd_figure3)

    sp = sub.add_parser("train", help="train a CNN on a dataset")
    common(sp, config=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--model", choices=MODEL_KINDS, default="eps_cnn")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="same- and cross-domain evaluation on synthetic domains")
    common(sp, config=True)
    sp.add_argument("--train", action="append", help="training domain (A, B, C, random, day0-2)")
    sp.add_argument("--test", action="append", help="test domain (repeatable)")
    sp.add_argument("--model", action="append", choices=MODEL_KINDS)
    sp.add_argument("--devices", type=int)
    sp.add_argument("--frames", type=int, help="frames per device per domain")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--min-accuracy", type=float, help="exit 1 if any mean accuracy is below this")
    sp.set_defaults(func=cmd_evaluate)

    for name, func, hlp in (("enroll", cmd_enroll, "enroll devices from a dataset"),
                            ("verify", cmd_verify, "verify every frame of a dataset against its claim"),
                            ("auth", cmd_auth, "continuous authentication over a frame stream")):
        sp = sub.add_parser(name, help=hlp)
        common(sp)
        sp.add_argument("--dataset", required=True)
        sp.add_argument("--registry", help="existing registry file (default: <out>/registry.epsr)")
        sp.add_argument("--timestamp", type=float, default=0.0, help="enrollment time stamped into templates")
        if name == "enroll":
            sp.add_argument("--device", type=int, action="append", help="device id (default: all in dataset)")
            sp.add_argument("--max-frames", type=int)
        elif name == "verify":
            sp.add_argument("--claim", type=int, help="claimed id (default: each record's own label)")
        else:
            sp.add_argument("--claim", type=int, required=True)
            sp.add_argument("--window", type=int, default=5)
        sp.set_defaults(func=func)

    sp = sub.add_parser("accept", help="run the acceptance criteria")
    common(sp, out_required=False)
    sp.add_argument("--profile", choices=("default", "extended"), default="default")
    sp.add_argument("--only", help="comma-separated criterion ids, e.g. A1,A5")
    sp.set_defaults(func=cmd_accept)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"epsfp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"epsfp: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, FileNotFoundError, NumericalError) as exc:
        print(f"epsfp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
