"""Command-line entry point: ``gamma-desk <subcommand> [options]``.

Configuration files use sectioned ``key = value`` lines (``#`` or ``;``
comments). Values are typed by the defaults below. Precedence is defaults, then the ``--config`` file, then each
``--set section.key=value`` override. Every run writes into ``--out``:

* ``config.resolved``  the fully resolved configuration (re-parseable)
* ``summary.jsonl``    format header plus one status record
* ``FAILED``           only when the run raised, holding the error text
* subcommand artifacts (datasets, model directories, reports, heatmaps)

Exit status is 0 on success, 1 on a failed run and 2 on usage errors.
``GAMMA_DESK_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import io
import json
import logging
import os
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .attention import export_attention_heatmap
from .data import (CLASS_NAMES, TERRESTRIAL, UNDERWATER, DetectionSample, DomainDataset, MixSpec, fingerprint,
                   load_detection_dataset, load_domain_dataset, mix_split, save_detection_dataset,
                   save_domain_dataset, synth_detection_set, synth_domain_pair, write_detections)
from .data.records import ANNOTATION_NAME, RECORD_VERSION, write_jsonl
from .detection import AttentiveDetector, attend, backbone_forward
from .metrics import RandomConvEncoder, fid_between
from .translation import CycleGANTranslator

logger = logging.getLogger("gamma_desk")

SUMMARY_FORMAT = "gamma-desk/summary"
CONFIG_FORMAT = "gamma-desk/config"

DEFAULTS: dict[str, dict[str, object]] = {
    "data": {
        "size": 64, "n_x": 300, "n_y": 100, "n_train": 400, "n_test": 100, "classes": 3,
        "turbidity": False, "domain": UNDERWATER,
    },
    "cyclegan": {
        "lam": 10.0, "lr": 2e-4, "constant_epochs": 100, "decay_epochs": 100, "steps_per_epoch": 0,
        "batch_size": 1, "beta1": 0.9, "beta2": 0.999, "ngf": 8, "ndf": 16, "n_res": 3,
        "non_saturating": False, "fid_every": 20, "probe_size": 64, "checkpoint_every": 0, "max_steps": 0,
    },
    "detector": {
        "iterations": 3600, "lr_boundary": 1600, "lr": 1e-3, "lr_after": 1e-4, "batch_size": 4,
        "momentum": 0.9, "weight_decay": 5e-4, "hflip": True, "fc_dim": 128, "scaled_attention": False,
        "score_threshold": 0.05, "nms_threshold": 0.3, "checkpoint_every": 0,
    },
    "mix": {"existing_fraction": 0.6, "augmented_fraction": 0.4, "total": 0},
    "eval": {"iou_threshold": 0.5},
    "attn": {"count": 4, "alpha": 0.5},
}

class UsageError(Exception):
    pass


# --- configuration -------------------------------------------------------------

def _coerce(section: str, key: str, raw: str):
    if section not in DEFAULTS:
        raise UsageError(f"unknown config section '{section}'")
    if key not in DEFAULTS[section]:
        raise UsageError(f"unknown config key '{section}.{key}'")
    default = DEFAULTS[section][key]
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise UsageError(f"bad value for '{section}.{key}': {raw!r}") from None
    return text


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _read_sections(text: str, source: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise UsageError(f"{source}: {exc}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


@dataclass
class RunConfig:
    command: str
    seed: int
    out: str
    config_path: str = ""
    overrides: tuple[str, ...] = ()
    inputs: dict[str, str] = field(default_factory=dict)
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def section(self, name: str) -> dict[str, object]:
        return self.values[name]

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {CONFIG_FORMAT} v{RECORD_VERSION}\n")
        buf.write("[run]\n")
        buf.write(f"command = {self.command}\nseed = {self.seed}\nout = {self.out}\n")
        buf.write(f"config_path = {self.config_path}\n")
        buf.write(f"overrides = {json.dumps(list(self.overrides))}\n")
        buf.write("\n[inputs]\n")
        for k in sorted(self.inputs):
            buf.write(f"{k} = {self.inputs[k]}\n")
        for sec in DEFAULTS:
            buf.write(f"\n[{sec}]\n")
            for k in DEFAULTS[sec]:
                buf.write(f"{k} = {_format_value(self.values[sec][k])}\n")
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        sections = _read_sections(text, "<snapshot>")
        run = sections.pop("run")
        inputs = sections.pop("inputs", {})
        values = resolve_values(sections)
        return cls(run["command"], int(run["seed"]), run["out"], run.get("config_path", ""),
                   tuple(json.loads(run.get("overrides", "[]"))), dict(inputs), values)


def resolve_values(file_sections: dict[str, dict[str, str]] | None = None,
                   overrides: Sequence[str] = ()) -> dict[str, dict[str, object]]:
    values = {s: dict(v) for s, v in DEFAULTS.items()}
    for sec, items in (file_sections or {}).items():
        for key, raw in items.items():
            values.setdefault(sec, {})[key] = _coerce(sec, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"override must look like section.key=value, got '{item}'")
        lhs, raw = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        values[sec][key] = _coerce(sec, key, raw)
    return values


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="run seed (all randomness derives from it)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default="", help="sectioned key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gamma-desk", description="Augmentation and attentive detection pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth-data", help="render synthetic domain and detection datasets")
    _add_common(p)
    p.add_argument("--kind", choices=("all", "domain", "detection"), default="all")

    p = sub.add_parser("train-cyclegan", help="train the X<->Y translators")
    _add_common(p)
    p.add_argument("--x", required=True, help="domain-X dataset directory")
    p.add_argument("--y", required=True, help="domain-Y dataset directory")

    p = sub.add_parser("translate", help="map a dataset through a trained generator")
    _add_common(p)
    p.add_argument("--model", required=True, help="translator directory written by train-cyclegan")
    p.add_argument("--data", required=True, help="domain or detection dataset directory")
    p.add_argument("--direction", choices=("x2y", "y2x"), default="x2y")

    p = sub.add_parser("mix", help="combine existing and augmented detection data")
    _add_common(p)
    p.add_argument("--existing", required=True)
    p.add_argument("--augmented", required=True)
    p.add_argument("--eval-data", default="", help="held-out set the mix must not overlap")

    p = sub.add_parser("train-detector", help="train the attentive detector")
    _add_common(p)
    p.add_argument("--data", required=True, help="detection dataset directory")
    p.add_argument("--eval-data", default="", help="dataset scored after training (default: training data)")
    p.add_argument("--no-sea", action="store_true", help="build the detector without self-attention")

    for name in ("eval", "fid"):
        p = sub.add_parser(name, help="FID or detection report" if name == "eval" else "shorthand for eval --task fid")
        _add_common(p)
        p.add_argument("--task", choices=("fid", "detect"), default="fid" if name == "fid" else "detect")
        p.add_argument("--model", default="", help="detector directory (detect)")
        p.add_argument("--data", default="", help="dataset to score (detect) or first image set (fid)")
        p.add_argument("--reference", default="", help="second image set (fid)")

    p = sub.add_parser("attn-maps", help="export attention heatmaps and overlays")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    return parser


_INPUT_KEYS = ("kind", "x", "y", "model", "data", "direction", "existing", "augmented", "eval_data", "no_sea",
               "task", "reference")


def parse_and_validate(argv: Sequence[str]) -> RunConfig:
    """argv to RunConfig; raises SystemExit(2) on usage errors (argparse convention)."""
    parser = build_parser()
    args = parser.parse_args(list(argv))
    try:
        file_sections = {}
        if args.config:
            path = Path(args.config)
            if not path.is_file():
                raise UsageError(f"config file {path} not found")
            file_sections = _read_sections(path.read_text(), str(path))
            for reserved in ("run", "inputs"):
                file_sections.pop(reserved, None)
        values = resolve_values(file_sections, args.overrides)
    except UsageError as exc:
        parser.exit(2, f"{parser.prog}: error: {exc}\n")
    command = "eval" if args.command == "fid" else args.command
    inputs = {k: str(getattr(args, k)) for k in _INPUT_KEYS if hasattr(args, k)}
    return RunConfig(command, args.seed, args.out, args.config, tuple(args.overrides), inputs, values)


# --- run bookkeeping --------------------------------------------------------------

class RunLock:
    """Exclusive ``.lock`` file in the output directory."""

    def __init__(self, out: Path):
        self.path = out / ".lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"{self.path.parent} is in use by another run (remove {self.path} if stale)") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        self.path.unlink(missing_ok=True)


def _fp(path: str) -> str:
    return fingerprint(path) if path else ""


def _detection_dir(path: str) -> tuple[list[DetectionSample], list[str]]:
    samples, names = load_detection_dataset(path)
    return samples, names or list(CLASS_NAMES)


def _images_of(path: str) -> np.ndarray:
    root = Path(path)
    if (root / ANNOTATION_NAME).is_file():
        return np.stack([s.image for s in load_detection_dataset(root)[0]])
    return load_domain_dataset(root).images


def _detector_from(cfg: RunConfig, class_names, use_sea: bool) -> AttentiveDetector:
    d = cfg.section("detector")
    size = cfg.section("data")["size"]
    return AttentiveDetector(class_names=tuple(class_names), image_size=size, use_sea=use_sea,
                             scaled_attention=d["scaled_attention"], iterations=d["iterations"],
                             lr_boundary=d["lr_boundary"], lr=d["lr"], lr_after=d["lr_after"],
                             batch_size=d["batch_size"], momentum=d["momentum"], weight_decay=d["weight_decay"],
                             hflip=d["hflip"], fc_dim=d["fc_dim"], score_threshold=d["score_threshold"],
                             nms_threshold=d["nms_threshold"], checkpoint_every=d["checkpoint_every"],
                             random_state=cfg.seed)


def _translator_from(cfg: RunConfig) -> CycleGANTranslator:
    c = dict(cfg.section("cyclegan"))
    c["steps_per_epoch"] = c["steps_per_epoch"] or None
    c["max_steps"] = c["max_steps"] or None
    return CycleGANTranslator(image_size=cfg.section("data")["size"], random_state=cfg.seed, **c)


# --- subcommands -----------------------------------------------------------------

def cmd_synth_data(cfg: RunConfig, out: Path) -> dict:
    d = cfg.section("data")
    kind = cfg.inputs["kind"]
    summary = {}
    if kind in ("all", "domain"):
        x, y = synth_domain_pair(cfg.seed, d["n_x"], d["n_y"], d["size"])
        save_domain_dataset(out / "domain_X", x)
        save_domain_dataset(out / "domain_Y", y)
        summary["domain_X"] = fingerprint(out / "domain_X")
        summary["domain_Y"] = fingerprint(out / "domain_Y")
    if kind in ("all", "detection"):
        flags = ("turbidity",) if d["turbidity"] else ()
        names = CLASS_NAMES[:d["classes"]] if d["classes"] <= len(CLASS_NAMES) else \
            tuple(f"class_{i}" for i in range(d["classes"]))
        for split, n in (("train", d["n_train"]), ("test", d["n_test"])):
            samples = synth_detection_set(cfg.seed, n, d["size"], d["classes"], flags, d["domain"], tag=split)
            save_detection_dataset(out / f"det_{split}", samples, names)
            summary[f"det_{split}"] = fingerprint(out / f"det_{split}")
        if d["domain"] == UNDERWATER:
            # terrestrial renders of the same annotation family, raw material for augmentation
            src = synth_detection_set(cfg.seed, d["n_train"], d["size"], d["classes"], flags, TERRESTRIAL,
                                      tag="source")
            save_detection_dataset(out / "det_source", src, names)
            summary["det_source"] = fingerprint(out / "det_source")
    return {"fingerprints": summary}


def cmd_train_cyclegan(cfg: RunConfig, out: Path) -> dict:
    x = load_domain_dataset(cfg.inputs["x"], seed=cfg.seed)
    y = load_domain_dataset(cfg.inputs["y"], seed=cfg.seed)
    est = _translator_from(cfg)
    est.checkpoint_dir = str(out / "checkpoints")
    est.fit(x, y)
    est.checkpoint_dir = None
    est.save(out / "model")
    encoder = RandomConvEncoder().fit()
    generated = est.transform(x.images)
    return {
        "fid_x_y": fid_between(x.images, y.images, encoder),
        "fid_gx_y": fid_between(generated, y.images, encoder),
        "reconstruction_l1": est.reconstruction_error(x.images),
        "steps": est.trace_[-1]["step"] if est.trace_ else 0,
        "fingerprints": {"x": _fp(cfg.inputs["x"]), "y": _fp(cfg.inputs["y"])},
    }


def cmd_translate(cfg: RunConfig, out: Path) -> dict:
    est = CycleGANTranslator.load(cfg.inputs["model"])
    fwd = cfg.inputs["direction"] == "x2y"
    root = Path(cfg.inputs["data"])
    if (root / ANNOTATION_NAME).is_file():
        samples, names = _detection_dir(str(root))
        images = np.stack([s.image for s in samples])
        mapped = est.transform(images) if fwd else est.inverse_transform(images)
        tagged = [DetectionSample(img, s.annotations, source=f"aug_{s.source}") for img, s in zip(mapped, samples)]
        save_detection_dataset(out / "data", tagged, names)
    else:
        ds = load_domain_dataset(root)
        mapped = est.transform(ds.images) if fwd else est.inverse_transform(ds.images)
        save_domain_dataset(out / "data", DomainDataset(UNDERWATER if fwd else TERRESTRIAL, mapped,
                                                        names=ds.names))
    return {"count": int(len(mapped)), "fingerprints": {"input": _fp(str(root)), "output": fingerprint(out / "data")}}


def cmd_mix(cfg: RunConfig, out: Path) -> dict:
    m = cfg.section("mix")
    existing, names = _detection_dir(cfg.inputs["existing"])
    augmented, _ = _detection_dir(cfg.inputs["augmented"])
    evaluation = _detection_dir(cfg.inputs["eval_data"])[0] if cfg.inputs["eval_data"] else ()
    spec = MixSpec(m["existing_fraction"], m["augmented_fraction"], seed=cfg.seed)
    total = m["total"] or int(len(existing) + len(augmented))
    if not m["total"]:
        total = min(total, int(len(existing) / max(spec.existing_fraction, 1e-12)),
                    int(len(augmented) / max(spec.augmented_fraction, 1e-12)))
    chosen = mix_split(existing, augmented, spec, total, evaluation)
    save_detection_dataset(out / "data", chosen, names)
    augmented_ids = {id(s) for s in augmented}
    n_aug = sum(1 for s in chosen if id(s) in augmented_ids)
    return {"total": len(chosen), "existing": len(chosen) - n_aug, "augmented": n_aug,
            "fingerprints": {"existing": _fp(cfg.inputs["existing"]), "augmented": _fp(cfg.inputs["augmented"]),
                             "output": fingerprint(out / "data")}}


def cmd_train_detector(cfg: RunConfig, out: Path) -> dict:
    samples, names = _detection_dir(cfg.inputs["data"])
    use_sea = cfg.inputs["no_sea"] != "True"
    est = _detector_from(cfg, names, use_sea)
    est.checkpoint_dir = str(out / "checkpoints")
    est.fit(samples)
    est.checkpoint_dir = None
    est.save(out / "model")
    write_jsonl(out / "trace.jsonl", {"format": "gamma-desk/detector-trace", "version": RECORD_VERSION},
                [{"iteration": i, "lr": lr, **loss} for i, (lr, loss) in enumerate(zip(est.lr_trace_, est.loss_trace_))])
    eval_path = cfg.inputs["eval_data"] or cfg.inputs["data"]
    eval_samples = _detection_dir(eval_path)[0] if cfg.inputs["eval_data"] else samples
    result = est.evaluate(eval_samples, iou_threshold=cfg.section("eval")["iou_threshold"])
    return {"use_sea": use_sea, "final_loss": est.loss_trace_[-1]["total"] if est.loss_trace_ else None,
            "eval": result.to_dict(names), "mAP": result.mAP,
            "fingerprints": {"train": _fp(cfg.inputs["data"]), "eval": _fp(eval_path)}}


def cmd_eval(cfg: RunConfig, out: Path) -> dict:
    if cfg.inputs["task"] == "fid":
        if not cfg.inputs["data"] or not cfg.inputs["reference"]:
            raise UsageError("eval --task fid needs --data and --reference")
        value = fid_between(_images_of(cfg.inputs["data"]), _images_of(cfg.inputs["reference"]),
                            RandomConvEncoder().fit())
        report = {"task": "fid", "fid": value}
    else:
        if not cfg.inputs["model"] or not cfg.inputs["data"]:
            raise UsageError("eval --task detect needs --model and --data")
        est = AttentiveDetector.load(cfg.inputs["model"])
        d = cfg.section("detector")
        est.score_threshold, est.nms_threshold = d["score_threshold"], d["nms_threshold"]
        samples, names = _detection_dir(cfg.inputs["data"])
        preds = est.predict([s.image for s in samples])
        from .metrics import evaluate_detections
        result = evaluate_detections(preds, [s.annotations for s in samples], len(names),
                                     cfg.section("eval")["iou_threshold"])
        write_detections(out / "detections.jsonl", [f"{s.source}.png" for s in samples], preds)
        report = {"task": "detect", "mAP": result.mAP, "eval": result.to_dict(names)}
    report["fingerprints"] = {"data": _fp(cfg.inputs["data"]), "reference": _fp(cfg.inputs["reference"])}
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    return report


def cmd_attn_maps(cfg: RunConfig, out: Path) -> dict:
    est = AttentiveDetector.load(cfg.inputs["model"])
    model = est.model_
    if model.sea is None:
        raise RuntimeError("the detector was trained without self-attention; no maps to export")
    root = Path(cfg.inputs["data"])
    images = _images_of(str(root))[:cfg.section("attn")["count"]]
    written = []
    for i, img in enumerate(images):
        attend(backbone_forward(img, model), model)
        path, overlay = export_attention_heatmap(model.sea.last_output, img, out / f"attn_{i:03d}.png",
                                                 alpha=cfg.section("attn")["alpha"])
        written += [path.name, overlay.name]
    return {"files": written, "gamma": float(model.sea.params.gamma.data),
            "fingerprints": {"data": _fp(str(root))}}


HANDLERS = {
    "synth-data": cmd_synth_data, "train-cyclegan": cmd_train_cyclegan, "translate": cmd_translate,
    "mix": cmd_mix, "train-detector": cmd_train_detector, "eval": cmd_eval, "attn-maps": cmd_attn_maps,
}


def _write_summary(out: Path, cfg: RunConfig, status: str, payload: dict) -> None:
    record = {"command": cfg.command, "seed": cfg.seed, "status": status, **payload}
    write_jsonl(out / "summary.jsonl", {"format": SUMMARY_FORMAT, "version": RECORD_VERSION,
                                        "package_version": __version__}, [record])


def _thread_limit():
    raw = os.environ.get("GAMMA_DESK_THREADS", "")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"GAMMA_DESK_THREADS must be an integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, n))


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    with RunLock(out):
        (out / "config.resolved").write_text(cfg.dumps())
        try:
            with _thread_limit():
                payload = HANDLERS[cfg.command](cfg, out)
        except Exception as exc:  # any module error marks the run failed, keeping partial artifacts
            logger.error("run failed: %s", exc)
            (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n\n{traceback.format_exc()}")
            _write_summary(out, cfg, "failed", {"error": f"{type(exc).__name__}: {exc}"})
            return 2 if isinstance(exc, UsageError) else 1
        _write_summary(out, cfg, "success", payload)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("GAMMA_DESK_LOG", "WARNING"), format="%(levelname)s %(message)s")
    cfg = parse_and_validate(sys.argv[1:] if argv is None else argv)
    try:
        return run(cfg)
    except RuntimeError as exc:  # lock contention
        print(f"gamma-desk: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
