"""Command-line pipeline: data generation, encoding, training, verification,
and energy reporting.

Exit codes: 0 success, 2 config/input validation, 3 training divergence,
4 verification failure.  Every subcommand is deterministic under a fixed
seed and config; report paths write a PNG figure next to the delimited
output files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import report
from .datasets import DatasetConfig, build_dataset
from .energy import load_rows, replay_rows
from .events import EventFormatError, load_events, save_events
from .losses import StIouConfig
from .mestor import MestorConfig, encode
from .network import (ChecksumError, Network, convtiny, load_checkpoint, mlp2,
                      save_checkpoint, verify_equivalence)
from .neurons import FsnConfig
from .train import LossSpec, TrainConfig, encode_clips, evaluate, train
from .verify import gradient_check

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3
EXIT_VERIFY_FAILED = 4

EQUIVALENCE_THRESHOLD = 1e-9
GRADIENT_THRESHOLD = 1e-4


class ConfigError(ValueError):
    """Configuration document failed validation."""


# ---------------------------------------------------------------------------
# config schema: section -> {key: default}; None means required, no default.

_CLASS_KEYS = {"kind", "velocity", "size", "object_rate"}

SCHEMA: dict[str, dict] = {
    "data": {"width": None, "height": None, "duration_ms": None, "count": None,
             "seed": 0, "noise_rate": 0.0, "classes": None},
    "mestor": {"K": 5, "alpha": 1.0, "n_bins": None, "delta_t_us": None,
               "kernel": None, "keep_threshold": None, "normalization": "max",
               "clamp_cap": 8.0},
    "network": {"arch": "convtiny", "outputs": None, "K": 5,
                "input_alpha": 1.0, "hidden_alpha": 3.0},
    "train": {"epochs": 30, "batch_size": 32, "lr": 1e-3, "weight_decay": 1e-2,
              "step_size": 10, "gamma": 0.5, "seed": 0, "rounding": "floor"},
    "loss": {"kind": "classification", "a": 0.5, "b": 1.0,
             "literal_combination": False, "objectness_weight": 1.0},
    "energy": {"spec": None, "rows": None},
}


def validate_config(doc: dict, required: tuple[str, ...] = ()) -> dict:
    """Reject unknown keys anywhere in the document; fill defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section in required:
        if section not in doc:
            raise ConfigError(f"missing required config section '{section}'")
    merged: dict = {}
    for section, content in doc.items():
        if not isinstance(content, dict):
            raise ConfigError(f"section '{section}' must be an object")
        keys = SCHEMA[section]
        bad = set(content) - set(keys)
        if bad:
            raise ConfigError(f"unknown keys in '{section}': {sorted(bad)}")
        out = {k: v for k, v in keys.items() if v is not None}
        out.update(content)
        if section in required:
            missing = [k for k, v in keys.items() if v is None and k not in out]
            # data.classes etc. are required when the section is used
            if missing and section != "mestor" and section != "energy":
                raise ConfigError(f"missing keys in '{section}': {missing}")
        if section == "data":
            for i, cls in enumerate(out.get("classes") or []):
                bad = set(cls) - _CLASS_KEYS
                if bad:
                    raise ConfigError(f"unknown keys in data.classes[{i}]: {sorted(bad)}")
        merged[section] = out
    return merged


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _dataset_config(section: dict, seed_override: int | None, count_override: int | None) -> DatasetConfig:
    try:
        return DatasetConfig(
            width=int(section["width"]),
            height=int(section["height"]),
            duration_ms=float(section["duration_ms"]),
            count=int(count_override if count_override is not None else section["count"]),
            classes=tuple(section["classes"]),
            noise_rate=float(section["noise_rate"]),
            seed=int(seed_override if seed_override is not None else section["seed"]),
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid data section: {exc}") from None


def _mestor_config(section: dict) -> MestorConfig:
    try:
        kwargs = dict(
            continuity=FsnConfig(alpha=float(section["alpha"]), K=int(section["K"])),
            n_bins=section.get("n_bins"),
            delta_t_us=section.get("delta_t_us"),
            keep_threshold=section.get("keep_threshold"),
            normalization=section["normalization"],
            clamp_cap=float(section["clamp_cap"]),
        )
        if section.get("kernel") is not None:
            kwargs["kernel"] = np.asarray(section["kernel"], dtype=np.float64)
        return MestorConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid mestor section: {exc}") from None


def _build_network(section: dict, input_shape: tuple[int, int, int], seed: int) -> Network:
    arch = section["arch"]
    outputs = int(section["outputs"])
    k = int(section["K"])
    ia, ha = float(section["input_alpha"]), float(section["hidden_alpha"])
    if arch == "mlp2":
        specs = mlp2(input_shape, outputs, K=k, input_alpha=ia, hidden_alpha=ha)
    elif arch == "convtiny":
        specs = convtiny(input_shape, outputs, K=k, input_alpha=ia, hidden_alpha=ha)
    else:
        raise ConfigError(f"unknown network arch {arch!r} (expected mlp2 or convtiny)")
    return Network.build(specs, input_shape, seed=seed)


def _loss_spec(section: dict) -> LossSpec:
    try:
        return LossSpec(
            kind=section["kind"],
            st_iou=StIouConfig(a=float(section["a"]), b=float(section["b"]),
                               literal_combination=bool(section["literal_combination"])),
            objectness_weight=float(section["objectness_weight"]),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid loss section: {exc}") from None


def _write_pgm(path, channel: np.ndarray) -> None:
    """ASCII PGM (P2), 8-bit, rows top to bottom."""
    levels = np.clip(np.rint(channel * 255.0), 0, 255).astype(int)
    h, w = levels.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{w} {h}\n255\n")
        for row in levels:
            fh.write(" ".join(str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    cfg = validate_config(load_config(args.config), required=("data",))
    ds_cfg = _dataset_config(cfg["data"], args.seed, args.count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clips = build_dataset(ds_cfg)
    manifest = {"width": ds_cfg.width, "height": ds_cfg.height, "clips": []}
    for i, clip in enumerate(clips):
        name = f"clip_{i:04d}.evt1"
        save_events(clip.stream, out / name, "evt1")
        manifest["clips"].append({"file": name, "class": clip.label,
                                  "box": list(clip.box)})
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {len(clips)} clips + manifest.json to {out}")
    return EXIT_OK


def _load_manifest_clips(data_dir: Path):
    from .events import LabeledClip

    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"dataset missing: no manifest.json in {data_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    clips = []
    for entry in manifest["clips"]:
        stream = load_events(data_dir / entry["file"], "evt1")
        clips.append(LabeledClip(stream, entry["class"], tuple(entry["box"])))
    return clips


def cmd_encode(args) -> int:
    doc = load_config(args.config) if args.config else {}
    cfg = validate_config(doc)
    mcfg = _mestor_config(cfg.get("mestor", validate_config({"mestor": {}})["mestor"]))
    path = Path(args.events)
    fmt = "csv" if path.suffix == ".csv" else "evt1"
    geometry = None
    if args.geometry:
        w, h = args.geometry.split("x")
        geometry = (int(w), int(h))
    stream = load_events(path, fmt, geometry=geometry)
    frame = encode(stream, mcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    _write_pgm(out / f"{stem}_st.pgm", frame.st)
    _write_pgm(out / f"{stem}_s.pgm", frame.s)
    _write_pgm(out / f"{stem}_t.pgm", frame.t)
    stats = {
        "event_count": len(stream),
        "kept_pixel_count": int(frame.st.sum()),
        "kept_pixel_ratio": float(frame.st.mean()),
        "channel_max": {"st": float(frame.st.max()), "s": float(frame.s.max()),
                        "t": float(frame.t.max())},
    }
    with open(out / f"{stem}_stats.json", "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    report.save_channel_panel(frame, out / f"{stem}_channels.png")
    print(f"encoded {len(stream)} events; kept {stats['kept_pixel_count']} pixels; "
          f"outputs in {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = validate_config(load_config(args.config),
                          required=("network", "train", "loss") if args.data else
                                   ("data", "network", "train", "loss"))
    mcfg = _mestor_config(cfg.get("mestor", validate_config({"mestor": {}})["mestor"]))
    if args.data:
        clips = _load_manifest_clips(Path(args.data))
    else:
        clips = build_dataset(_dataset_config(cfg["data"], None, None))
    dataset = encode_clips(clips, mcfg)
    seed = args.seed if args.seed is not None else int(cfg["train"]["seed"])
    input_shape = dataset.frames.shape[1:]
    net = _build_network(cfg["network"], input_shape, seed)
    tcfg = TrainConfig(
        epochs=int(cfg["train"]["epochs"]),
        batch_size=int(cfg["train"]["batch_size"]),
        lr=float(cfg["train"]["lr"]),
        weight_decay=float(cfg["train"]["weight_decay"]),
        step_size=int(cfg["train"]["step_size"]),
        gamma=float(cfg["train"]["gamma"]),
        seed=seed,
        rounding=cfg["train"]["rounding"],
    )
    loss_spec = _loss_spec(cfg["loss"])
    result = train(net, dataset, loss_spec, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.jsonl", "w") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    save_checkpoint(net, out / "checkpoint.ckpt", epoch=len(result.log))
    if result.log:
        report.save_training_curves(result.log, out / "training_curves.png")
    if result.diverged:
        print(f"training diverged after {len(result.log)} finite epochs; "
              f"last good weights checkpointed to {out}")
        return EXIT_DIVERGED
    loss, metric = evaluate(net, dataset, loss_spec)
    name = "accuracy" if loss_spec.kind == "classification" else "mean CIoU"
    print(f"finished {len(result.log)} epochs: loss={loss:.4f} {name}={metric:.4f}; "
          f"outputs in {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = validate_config(load_config(args.config), required=("network",))
    seed = args.seed if args.seed is not None else 0
    if args.checkpoint:
        net, _ = load_checkpoint(args.checkpoint)
    else:
        side = int(args.input_side)
        net = _build_network(cfg["network"], (3, side, side), seed)
    failed = False

    if args.rounding == "floor":
        disc = verify_equivalence(net, args.samples, seed=seed, rounding="floor")
        ok = disc < EQUIVALENCE_THRESHOLD
        failed |= not ok
        print(f"dual-mode max discrepancy: {disc:.3e} "
              f"({'PASS' if ok else 'FAIL'}, threshold {EQUIVALENCE_THRESHOLD:.0e})")
    else:
        disc = verify_equivalence(net, args.samples, seed=seed, rounding=args.rounding)
        print(f"dual-mode max discrepancy: {disc:.3e} "
              f"(reported only; equivalence check skipped in {args.rounding} rounding)")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    check_net = _build_network(
        {"arch": "mlp2", "outputs": 3, "K": cfg["network"]["K"],
         "input_alpha": cfg["network"]["input_alpha"],
         "hidden_alpha": cfg["network"]["hidden_alpha"]},
        (3, 4, 4), seed)
    x = rng.uniform(0.0, 1.0, (4, 3, 4, 4))
    labels = rng.integers(0, 3, size=4)
    res = gradient_check(check_net, x, labels, max_weights=args.grad_weights, seed=seed)
    ok = res.max_rel_error < GRADIENT_THRESHOLD
    failed |= not ok
    print(f"gradient max relative error: {res.max_rel_error:.3e} over {res.n_checked} "
          f"weights, {res.n_skipped_kink} skipped at clip kinks "
          f"({'PASS' if ok else 'FAIL'}, threshold {GRADIENT_THRESHOLD:.0e})")
    return EXIT_VERIFY_FAILED if failed else EXIT_OK


def cmd_energy(args) -> int:
    try:
        rows = load_rows(args.spec)
    except FileNotFoundError:
        raise ConfigError(f"energy spec not found: {args.spec}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid energy spec: {exc}") from None
    results = replay_rows(rows)
    header = f"{'name':34s} {'model':5s} {'computed mJ':>12s} {'expected mJ':>12s} {'status':>8s}"
    lines = [header, "-" * len(header)]
    for r in results:
        exp = f"{r['expected_mj']:.2f}" if r["expected_mj"] is not None else "-"
        status = ("ok" if r.get("within_tolerance") else "MISMATCH") if "within_tolerance" in r else "-"
        flag = "*" if r["self_implemented"] else ""
        lines.append(f"{r['name'] + flag:34s} {r['model']:5s} {r['computed_mj']:12.4f} "
                     f"{exp:>12s} {status:>8s}")
    table = "\n".join(lines)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "energy_table.txt").write_text(table + "\n")
        with open(out / "energy_table.csv", "w") as fh:
            fh.write("name,model,computed_mj,expected_mj,within_tolerance,self_implemented\n")
            for r in results:
                exp = "" if r["expected_mj"] is None else f"{r['expected_mj']}"
                wt = "" if "within_tolerance" not in r else str(r["within_tolerance"]).lower()
                fh.write(f"{r['name']},{r['model']},{r['computed_mj']:.6g},{exp},{wt},"
                         f"{str(r['self_implemented']).lower()}\n")
        report.save_energy_chart(results, out / "energy_chart.png")
        print(f"table, CSV, and chart written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewspikes",
        description="Spiking/quantized dual-mode training pipeline for event streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic clips + manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None, help="override data.count")
    p.add_argument("--seed", type=int, default=None, help="override data.seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("encode", help="encode an event file into the 3-channel frame")
    p.add_argument("--events", required=True, help=".csv or .evt1 event file")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="config with a mestor section")
    p.add_argument("--geometry", default=None, help="WxH (required for CSV input)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None, help="gen-data output dir (default: generate in memory)")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="dual-mode equivalence + gradient check")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rounding", default="floor", choices=["floor", "round"])
    p.add_argument("--input-side", type=int, default=16, dest="input_side")
    p.add_argument("--grad-weights", type=int, default=200, dest="grad_weights")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("energy", help="replay an energy-table spec")
    p.add_argument("--spec", required=True, help="JSON rows file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_energy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, EventFormatError, ChecksumError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
