"""Command-line surface: world generation, training, anonymization,
content redaction, trial construction, evaluation, and report/radar output.

Every subcommand writes its artifacts under ``--out`` together with a
``manifest.json`` recording inputs, seeds, and content hashes so that a
rerun with identical inputs produces identical bytes.  Exit codes:
0 success, 2 configuration error, 3 numerical divergence, 4 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .anonymizer import (AnonymizerConfig, WeightStrategy, anonymize_dataset,
                         load_anonymizer, load_mapping, save_anonymizer,
                         save_mapping, train_anonymizer)
from .backbone import BackboneConfig, load_backbone, save_backbone, train_backbone
from .content import (ReplacementPool, anonymize_content, build_gazetteer,
                      save_edit_reports, save_gazetteer)
from .errors import ConfigError, DataError, DivergenceError, InputError
from .evaluation import (build_trials, load_trials, run_attack, save_scores,
                         save_trials)
from .flowmath import IntegrationSpec
from .worldgen import (generate_world, load_dataset, make_world_params,
                       sample_speaker_embedding, save_dataset)


# ---------------------------------------------------------------------------
# radar normalization

@dataclass(frozen=True)
class RadarEntry:
    name: str
    v_min: float
    v_max: float
    direction: str   # "higher" | "lower"

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ConfigError(f"radar range for {self.name} needs v_min < v_max")
        if self.direction not in ("higher", "lower"):
            raise ConfigError(f"unknown radar direction {self.direction!r}")


RADAR_DEFAULTS = (
    RadarEntry("WER", 0.0, 50.0, "lower"),
    RadarEntry("UTMOS", 1.0, 4.5, "higher"),
    RadarEntry("SECS", 0.0, 0.7, "higher"),
    RadarEntry("WA", 0.0, 90.0, "higher"),
    RadarEntry("A-EER", 0.0, 75.0, "higher"),
    RadarEntry("C-EER", 0.0, 50.0, "higher"),
)


def radar_normalize(v_raw: float, entry: RadarEntry) -> float:
    """Map a raw metric onto [0,1] so larger is always better, clamped."""
    x = (v_raw - entry.v_min) / (entry.v_max - entry.v_min)
    if entry.direction == "lower":
        x = 1.0 - x
    return float(min(1.0, max(0.0, x)))


# ---------------------------------------------------------------------------
# manifest plumbing

def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, inputs: dict,
                   seeds: dict, outputs) -> None:
    """inputs: name -> existing path (hashed); outputs: paths inside out_dir."""
    manifest = {
        "command": command,
        "version": __version__,
        "seeds": seeds,
        "inputs": {k: {"file": Path(p).name, "sha256": _sha256_file(Path(p))}
                   for k, p in inputs.items()},
        "outputs": {Path(p).name: _sha256_file(Path(p)) for p in outputs},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _load_config(path, section: str) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    sec = doc.get(section, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    return sec


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_world(args) -> int:
    cfg = {"D": 16, "F": 24, "v_common": 80, "n_speakers": 12,
           "utts_per_speaker": 8, "noise_sigma": 0.05,
           "duration_range": (6.0, 12.0), "pii_frac": 0.4}
    cfg.update(_load_config(args.config, "world"))
    seed = args.seed if args.seed is not None else 0
    params = make_world_params(
        D=cfg["D"], F=cfg["F"], v_common=cfg["v_common"],
        n_speakers=cfg["n_speakers"], noise_sigma=cfg["noise_sigma"],
        seed=seed)
    ds = generate_world(params, cfg["n_speakers"], cfg["utts_per_speaker"],
                        np.random.default_rng(seed),
                        duration_range=tuple(cfg["duration_range"]),
                        pii_frac=cfg["pii_frac"])
    out = _outdir(args)
    save_dataset(ds, out)
    write_manifest(out, "gen-world", {}, {"seed": seed},
                   [out / n for n in ("world.json", "speakers.jsonl",
                                      "utterances.jsonl",
                                      "replacement_pool.jsonl")])
    return 0


def cmd_train_backbone(args) -> int:
    ds = load_dataset(args.data)
    cfg_dict = _load_config(args.config, "backbone")
    cfg_dict.setdefault("codebook_size", ds.params.V + 64)
    seed = args.seed if args.seed is not None else 0
    cfg_dict["seed"] = seed
    config = BackboneConfig.from_dict({**BackboneConfig().to_dict(),
                                       **cfg_dict})
    model, trace = train_backbone(ds, config, np.random.default_rng(seed))
    out = _outdir(args)
    save_backbone(model, out / "backbone")
    with open(out / "trace.jsonl", "w") as f:
        for t in trace[:: max(1, len(trace) // 200)]:
            f.write(json.dumps(t) + "\n")
    write_manifest(out, "train-backbone",
                   {"world": Path(args.data) / "world.json"}, {"seed": seed},
                   [out / "backbone.ckpt", out / "backbone.json"])
    return 0


def cmd_train_anonymizer(args) -> int:
    ds = load_dataset(args.data)
    cfg_dict = _load_config(args.config, "anonymizer")
    n_embeddings = int(cfg_dict.pop("n_embeddings", 10_000))
    seed = args.seed if args.seed is not None else 0
    cfg_dict["seed"] = seed
    cfg_dict.setdefault("level_dims", _level_dims_for(ds.params.D))
    config = AnonymizerConfig.from_dict({**AnonymizerConfig().to_dict(),
                                         **cfg_dict})
    rng = np.random.default_rng(seed)
    genders = ["male", "female"]
    emb = np.stack([sample_speaker_embedding(ds.params, genders[i % 2], rng)
                    for i in range(n_embeddings)])
    model, _ = train_anonymizer(emb, config, rng)
    out = _outdir(args)
    save_anonymizer(model, out / "anonymizer")
    write_manifest(out, "train-anonymizer",
                   {"world": Path(args.data) / "world.json"}, {"seed": seed},
                   [out / "anonymizer.ckpt", out / "anonymizer.json"])
    return 0


def _level_dims_for(d: int) -> tuple:
    dims = [d]
    while dims[-1] > 2:
        dims.append(max(2, dims[-1] // 2))
    return tuple(dims + dims[-2::-1])


def cmd_anonymize(args) -> int:
    ds = load_dataset(args.data)
    backbone = load_backbone(Path(args.backbone))
    anonymizer = load_anonymizer(Path(args.anonymizer))
    strategy = WeightStrategy.parse(args.strategy)
    steps = args.steps if args.steps is not None else 16
    spec = IntegrationSpec(steps=steps, t_start=1.0, t_end=0.0)
    seed = args.seed if args.seed is not None else 0
    anon, mapping = anonymize_dataset(backbone, anonymizer, ds, strategy,
                                      spec, np.random.default_rng(seed))
    out = _outdir(args)
    save_dataset(anon, out)
    save_mapping(mapping, out / "mapping.tsv")
    write_manifest(out, "anonymize",
                   {"world": Path(args.data) / "world.json",
                    "backbone": Path(args.backbone).with_suffix(".ckpt"),
                    "anonymizer": Path(args.anonymizer).with_suffix(".ckpt")},
                   {"seed": seed, "strategy": args.strategy},
                   [out / "utterances.jsonl", out / "mapping.tsv"])
    return 0


def cmd_seca(args) -> int:
    ds = load_dataset(args.data)
    backbone = load_backbone(Path(args.backbone))
    gaz = build_gazetteer(ds)
    pool = ReplacementPool(ds.pool)
    steps = args.steps if args.steps is not None else 16
    spec = IntegrationSpec(steps=steps, t_start=0.0, t_end=1.0)
    seed = args.seed if args.seed is not None else 0
    mapping = load_mapping(args.mapping) if args.mapping else None
    source = "anonymized" if mapping is not None else "original"
    edited, reports = anonymize_content(
        backbone, ds, pool, gaz, spec, np.random.default_rng(seed),
        speaker_source=source, mapping=mapping, p_asr=args.p_asr)
    out = _outdir(args)
    save_dataset(edited, out)
    save_gazetteer(gaz, out / "gazetteer.jsonl")
    save_edit_reports(reports, out / "edits.jsonl")
    write_manifest(out, "seca",
                   {"world": Path(args.data) / "world.json",
                    "backbone": Path(args.backbone).with_suffix(".ckpt")},
                   {"seed": seed, "p_asr": args.p_asr},
                   [out / "utterances.jsonl", out / "edits.jsonl"])
    return 0


def cmd_build_trials(args) -> int:
    ds = load_dataset(args.data)
    seed = args.seed if args.seed is not None else 0
    trials = build_trials(ds, args.mode, np.random.default_rng(seed))
    out = _outdir(args)
    save_trials(trials, out / "trials.tsv")
    write_manifest(out, "build-trials",
                   {"world": Path(args.data) / "world.json"},
                   {"seed": seed, "mode": args.mode}, [out / "trials.tsv"])
    return 0


def cmd_evaluate(args) -> int:
    ds_orig = load_dataset(args.data)
    ds_anon = load_dataset(args.anon)
    mapping = load_mapping(args.mapping) if args.mapping else None
    attacker = {"ignorant": "ignorant", "lazy": "lazy_informed",
                "lazy_informed": "lazy_informed"}[args.attacker]
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    kwargs = {}
    if attacker == "lazy_informed":
        if args.anonymizer is None or args.strategy is None:
            raise ConfigError("lazy attacker needs --anonymizer and --strategy")
        kwargs["anonymizer"] = load_anonymizer(Path(args.anonymizer))
        kwargs["strategy"] = WeightStrategy.parse(args.strategy)
        steps = args.steps if args.steps is not None else 16
        kwargs["spec"] = IntegrationSpec(steps=steps, t_start=1.0, t_end=0.0)
    trials = load_trials(args.trials) if args.trials else None
    capture = {}
    report = run_attack(ds_orig, ds_anon, mapping, attacker, args.mode, rng,
                        trials=trials, capture=capture, **kwargs)
    out = _outdir(args)
    save_trials(capture["trials"], out / "trials.tsv")
    save_scores(capture["trials"], capture["scores"], out / "scores.tsv")
    doc = report.to_dict()
    doc["config"] = {"attacker": args.attacker, "mode": args.mode,
                     "seed": seed, "strategy": args.strategy}
    (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True)
                                     + "\n")
    inputs = {"world": Path(args.data) / "world.json",
              "anon": Path(args.anon) / "utterances.jsonl"}
    if args.mapping:
        inputs["mapping"] = Path(args.mapping)
    write_manifest(out, "evaluate", inputs,
                   {"seed": seed, "attacker": args.attacker, "mode": args.mode},
                   [out / "trials.tsv", out / "scores.tsv", out / "report.json"])
    return 0


def cmd_report(args) -> int:
    """Aggregate raw metric values into a radar CSV (metric, raw, normalized)."""
    try:
        metrics = json.loads(Path(args.metrics).read_text())
    except FileNotFoundError as e:
        raise DataError(f"metrics file not found: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"metrics file is not valid JSON: {e}") from e
    spec = {e.name: e for e in RADAR_DEFAULTS}
    out = _outdir(args)
    lines = ["metric,raw,normalized"]
    for name in sorted(metrics):
        if name not in spec:
            raise ConfigError(f"no radar range declared for metric {name!r}")
        v = float(metrics[name])
        lines.append(f"{name},{v:.9g},{radar_normalize(v, spec[name]):.4f}")
    (out / "radar.csv").write_text("\n".join(lines) + "\n")
    write_manifest(out, "report", {"metrics": Path(args.metrics)}, {},
                   [out / "radar.csv"])
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anonflow")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None)
        if data:
            p.add_argument("--data", required=True,
                           help="dataset directory from gen-world")

    p = sub.add_parser("gen-world", help="generate a synthetic speaker world")
    common(p, data=False)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train-backbone", help="train frame reconstruction")
    common(p)
    p.set_defaults(func=cmd_train_backbone)

    p = sub.add_parser("train-anonymizer", help="train the identity flow")
    common(p)
    p.set_defaults(func=cmd_train_anonymizer)

    p = sub.add_parser("anonymize", help="re-voice a dataset")
    common(p)
    p.add_argument("--backbone", required=True)
    p.add_argument("--anonymizer", required=True)
    p.add_argument("--strategy", default="fixed:0",
                   help="fixed:W | range:A:B | pool")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("seca", help="redact PII spans and regenerate them")
    common(p)
    p.add_argument("--backbone", required=True)
    p.add_argument("--mapping", default=None,
                   help="voice edits with the anonymized identities")
    p.add_argument("--p-asr", type=float, default=0.0, dest="p_asr")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_seca)

    p = sub.add_parser("build-trials", help="write a verification trial list")
    common(p)
    p.add_argument("--mode", choices=("acoustic", "content"),
                   default="acoustic")
    p.set_defaults(func=cmd_build_trials)

    p = sub.add_parser("evaluate", help="run an attacker and report EER")
    common(p)
    p.add_argument("--anon", required=True, help="anonymized dataset dir")
    p.add_argument("--mapping", default=None)
    p.add_argument("--attacker", choices=("ignorant", "lazy", "lazy_informed"),
                   default="ignorant")
    p.add_argument("--mode", choices=("acoustic", "content"),
                   default="acoustic")
    p.add_argument("--anonymizer", default=None)
    p.add_argument("--strategy", default=None)
    p.add_argument("--trials", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="radar-normalize a metrics table")
    p.add_argument("--metrics", required=True, help="JSON {metric: raw value}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (DataError, InputError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
