"""Command-line surface and the six-stage pipeline orchestrator.

Subcommands are thin shells over module operations; the `pipeline` command
chains ingest, co-segmentation, stage-1 training, mask generation, stage-2
training, and evaluation, persisting every intermediate under a run
directory and resuming from the first stage whose recorded output is
missing. Setting WSS_CACHE_DIR relocates intermediates; the run manifest and
final report stay in the chosen output directory.
"""

import argparse
import dataclasses
import hashlib
import os
import shutil
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig, load_config, save_config
from .core import (PASCAL_CLASSES, ClassTaxonomy, ImageRecord, LabelVector,
                   load_manifest, read_image, write_manifest, write_mask)
from .coseg import ConsensusBaseline, OracleSource, cosegment_manifest
from .evaluate import (ablation_run, evaluate_model, evaluate_predictions,
                       mean_iou, write_ablation_table, write_iou_report)
from .infer import generate_target_masks, predict_mask
from .ingest import (DirectoryFetcher, FetchRequest, UrlListFetcher,
                     build_retrieved_corpus, fetch_class_images,
                     group_from_files, prepare_target_images)
from .model import load_checkpoint, save_checkpoint
from .synthbench import (SynthSpec, generate_retrieved_groups,
                         generate_target_set, materialize_retrieved,
                         synth_taxonomy)
from .train import train_stage

STAGES = ("corpus", "cosegmasks", "initial_ckpt", "genmasks", "final_ckpt",
          "report")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclasses.dataclass(frozen=True)
class PipelineRunManifest:
    """Record of one pipeline run: stage outputs, hashes, config, seed."""

    run_id: str
    seed: int
    config_sha: str
    stages: dict  # stage name -> (path string, content sha256)

    def stage_path(self, name: str) -> Path:
        return Path(self.stages[name][0])


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _sha256_path(path: Path) -> str:
    """Content hash of a file, or of a directory's sorted (name, hash) list."""
    if path.is_file():
        return _sha256_file(path)
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(path)).encode())
        h.update(b"\t")
        h.update(_sha256_file(f).encode())
        h.update(b"\n")
    return h.hexdigest()


def write_run_manifest(manifest: PipelineRunManifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"run_id\t{manifest.run_id}\n")
        fh.write(f"seed\t{manifest.seed}\n")
        fh.write(f"config_sha256\t{manifest.config_sha}\n")
        for name, (p, sha) in manifest.stages.items():
            fh.write(f"stage\t{name}\t{p}\t{sha}\n")


def read_run_manifest(path) -> PipelineRunManifest:
    run_id = None
    seed = None
    config_sha = None
    stages = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            parts = raw.rstrip("\n").split("\t")
            if parts[0] == "run_id":
                run_id = parts[1]
            elif parts[0] == "seed":
                seed = int(parts[1])
            elif parts[0] == "config_sha256":
                config_sha = parts[1]
            elif parts[0] == "stage" and len(parts) == 4:
                stages[parts[1]] = (parts[2], parts[3])
    if run_id is None or seed is None or config_sha is None:
        raise ValueError(f"malformed run manifest: {path}")
    return PipelineRunManifest(run_id, seed, config_sha, stages)


@dataclasses.dataclass(frozen=True)
class PipelineSources:
    """Where the pipeline reads its raw inputs from."""

    taxonomy: ClassTaxonomy
    class_dirs: dict  # class index -> directory of source images
    coseg_source: str  # "oracle" | "consensus"
    target_manifest: Path
    val_manifest: Path
    sidecar_dir: Path | None = None
    max_per_class: int = 10000

    def __post_init__(self):
        if self.coseg_source not in ("oracle", "consensus"):
            raise ValueError(f"bad coseg source {self.coseg_source!r}")
        if self.coseg_source == "oracle" and self.sidecar_dir is None:
            raise ValueError("oracle co-segmentation needs a sidecar directory")
        if not self.class_dirs:
            raise ValueError("no class source directories given")


def _config_bytes(config: PipelineConfig) -> bytes:
    lines = []
    for f in dataclasses.fields(PipelineConfig):
        lines.append(f"{f.name} = {getattr(config, f.name)!r}")
    return "\n".join(lines).encode()


def run_pipeline(config: PipelineConfig, sources: PipelineSources, out,
                 seed: int = 0, workers: int = 1) -> PipelineRunManifest:
    """Execute (or resume) the six-stage pipeline under `out`.

    A stage is considered complete when its recorded output still exists
    (directories must hold their manifest.tsv); execution restarts at the
    first incomplete stage and always reruns everything after it. The
    `workers` argument is a concurrency hint; this implementation runs
    single-process.
    """
    del workers  # hint only; all stages run in-process
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    tax = sources.taxonomy

    config_sha = hashlib.sha256(_config_bytes(config)).hexdigest()
    run_id = hashlib.sha256(_config_bytes(config) + str(seed).encode()
                            ).hexdigest()[:12]
    cache_env = os.environ.get("WSS_CACHE_DIR")
    cache = Path(cache_env) / run_id if cache_env else out
    cache.mkdir(parents=True, exist_ok=True)

    cfg_path = out / "run.cfg"
    if cfg_path.exists():
        prior = load_config(cfg_path)
        if _config_bytes(prior) != _config_bytes(config):
            raise ValueError(f"{out} already holds a run with a different "
                             f"config; use a fresh output directory")
    else:
        save_config(config, cfg_path)

    manifest_path = out / "run_manifest.txt"
    recorded = {}
    if manifest_path.exists():
        prev = read_run_manifest(manifest_path)
        if prev.run_id != run_id or prev.seed != seed:
            raise ValueError(f"{out} holds run {prev.run_id} (seed {prev.seed}); "
                             f"refusing to mix with run {run_id} (seed {seed})")
        recorded = dict(prev.stages)

    paths = {
        "corpus": cache / "01_ingest",
        "cosegmasks": cache / "02_coseg",
        "initial_ckpt": cache / "03_initial.npz",
        "genmasks": cache / "04_genmasks",
        "final_ckpt": cache / "05_final.npz",
        "report": out / "06_report.csv",
    }

    def complete(name: str) -> bool:
        # a stage counts as done only if it was recorded AND its output is
        # still present at the current layout
        if name not in recorded:
            return False
        p = paths[name]
        if name == "corpus":
            return all((p / sub / "manifest.tsv").exists()
                       for sub in ("retrieved", "target", "val"))
        if name in ("cosegmasks", "genmasks"):
            return (p / "manifest.tsv").exists()
        return p.exists()

    start = len(STAGES)
    for i, name in enumerate(STAGES):
        if not complete(name):
            start = i
            break

    def _corpus():
        d = paths["corpus"]
        if d.exists():
            shutil.rmtree(d)
        groups = []
        for cls in sorted(sources.class_dirs):
            files = fetch_class_images(
                FetchRequest(query=tax.names[cls],
                             max_results=sources.max_per_class,
                             destination=d / "fetch" / tax.names[cls]),
                DirectoryFetcher(sources.class_dirs[cls]))
            groups.append(group_from_files(cls, files, tax))
        corpus_m = build_retrieved_corpus(groups, config, d / "retrieved")
        write_manifest(corpus_m, d / "retrieved" / "manifest.tsv", tax)
        for sub, src, split in (("target", sources.target_manifest, "train"),
                                ("val", sources.val_manifest, "val")):
            m = load_manifest(src, tax, split=split)
            prepped = prepare_target_images(m, config, d / sub)
            write_manifest(prepped, d / sub / "manifest.tsv", tax)

    def _cosegmasks():
        d = paths["cosegmasks"]
        if d.exists():
            shutil.rmtree(d)
        corpus_m = load_manifest(paths["corpus"] / "retrieved" / "manifest.tsv", tax)
        if sources.coseg_source == "oracle":
            src = OracleSource(sources.sidecar_dir)
        else:
            src = ConsensusBaseline()
        m = cosegment_manifest(corpus_m, src, config.fg_min, config.fg_max, d, tax)
        if len(m) == 0:
            raise ValueError("foreground filter removed every retrieved mask")
        write_manifest(m, d / "manifest.tsv", tax)

    def _initial():
        m = load_manifest(paths["cosegmasks"] / "manifest.tsv", tax)
        params, _ = train_stage(m, config, "initial", seed, tax,
                                log_csv=cache / "03_initial_log.csv")
        save_checkpoint(params, paths["initial_ckpt"])

    def _genmasks():
        d = paths["genmasks"]
        if d.exists():
            shutil.rmtree(d)
        target_m = load_manifest(paths["corpus"] / "target" / "manifest.tsv", tax)
        params = load_checkpoint(paths["initial_ckpt"])
        gen_m = generate_target_masks(target_m, params, config, d)
        write_manifest(gen_m, d / "manifest.tsv", tax)

    def _final():
        m = load_manifest(paths["genmasks"] / "manifest.tsv", tax)
        params, _ = train_stage(m, config, "final", seed + 1, tax,
                                log_csv=cache / "05_final_log.csv")
        save_checkpoint(params, paths["final_ckpt"])

    def _report():
        val_m = load_manifest(paths["corpus"] / "val" / "manifest.tsv", tax,
                              split="val")
        params = load_checkpoint(paths["final_ckpt"])
        cm = evaluate_model(params, val_m, scales=config.inference_scales,
                            crf=config.crf() if config.eval_crf else None)
        write_iou_report(tax, cm, paths["report"])

    runners = {"corpus": _corpus, "cosegmasks": _cosegmasks,
               "initial_ckpt": _initial, "genmasks": _genmasks,
               "final_ckpt": _final, "report": _report}

    stages_out = {name: (str(paths[name]), _sha256_path(paths[name]))
                  for name in STAGES[:start]}
    for name in STAGES[start:]:
        try:
            runners[name]()
        except Exception as exc:
            manifest = PipelineRunManifest(run_id, seed, config_sha, stages_out)
            write_run_manifest(manifest, manifest_path)
            raise StageError(name, exc) from exc
        stages_out[name] = (str(paths[name]), _sha256_path(paths[name]))
        manifest = PipelineRunManifest(run_id, seed, config_sha, stages_out)
        write_run_manifest(manifest, manifest_path)

    final = PipelineRunManifest(run_id, seed, config_sha, stages_out)
    for name in STAGES:
        if not Path(final.stages[name][0]).exists():
            raise StageError(name, "output missing at run completion")
    return final


# ---------------------------------------------------------------------------
# argument plumbing

def _taxonomy_from(arg: str) -> ClassTaxonomy:
    if arg == "pascal":
        return ClassTaxonomy(PASCAL_CLASSES)
    if arg == "synth":
        return synth_taxonomy()
    return ClassTaxonomy(tuple(n.strip() for n in arg.split(",")))


def _scales_from(arg: str):
    return tuple(float(s) for s in arg.split(","))


def _load_or_default_config(arg) -> PipelineConfig:
    return load_config(arg) if arg else PipelineConfig()


def _cmd_ingest(args) -> int:
    tax = _taxonomy_from(args.classes)
    cls = tax.index_of(args.class_name)
    if cls == ClassTaxonomy.background_index:
        raise ValueError("cannot ingest the background class")
    config = _load_or_default_config(args.config)
    out = Path(args.out)
    fetcher = (DirectoryFetcher(args.src) if args.fetcher == "dir"
               else UrlListFetcher(args.src))
    files = fetch_class_images(
        FetchRequest(query=args.class_name, max_results=args.max,
                     destination=out / "fetch"), fetcher)
    group = group_from_files(cls, files, tax)
    manifest = build_retrieved_corpus([group], config, out / "corpus")
    write_manifest(manifest, out / "corpus" / "manifest.tsv", tax)
    print(f"ingested {len(manifest)} image(s) for class {args.class_name!r}")
    return 0


def _cmd_coseg(args) -> int:
    tax = _taxonomy_from(args.classes)
    manifest = load_manifest(args.group, tax)
    if args.source == "oracle":
        if not args.sidecars:
            raise ValueError("--source oracle requires --sidecars")
        src = OracleSource(args.sidecars)
    else:
        src = ConsensusBaseline()
    out_m = cosegment_manifest(manifest, src, args.fg_min, args.fg_max,
                               args.out, tax)
    write_manifest(out_m, Path(args.out) / "manifest.tsv", tax)
    print(f"kept {len(out_m)} of {len(manifest)} mask(s)")
    return 0


def _cmd_train(args) -> int:
    tax = _taxonomy_from(args.classes)
    config = _load_or_default_config(args.config)
    manifest = load_manifest(args.manifest, tax)
    params, _ = train_stage(manifest, config, args.stage, args.seed, tax,
                            log_csv=args.log,
                            checkpoint_dir=args.checkpoint_dir)
    save_checkpoint(params, args.out)
    print(f"saved {args.stage} checkpoint to {args.out}")
    return 0


def _cmd_genmasks(args) -> int:
    tax = _taxonomy_from(args.classes)
    config = _load_or_default_config(args.config)
    config = dataclasses.replace(config,
                                 inference_scales=_scales_from(args.scales),
                                 genmask_crf=args.crf == "on")
    manifest = load_manifest(args.manifest, tax)
    params = load_checkpoint(args.ckpt)
    out_m = generate_target_masks(manifest, params, config, args.out)
    write_manifest(out_m, Path(args.out) / "manifest.tsv", tax)
    print(f"generated {len(out_m)} mask(s)")
    return 0


def _cmd_infer(args) -> int:
    tax = _taxonomy_from(args.classes)
    config = _load_or_default_config(args.config)
    params = load_checkpoint(args.ckpt)
    rec = ImageRecord(id=Path(args.image).stem, pixels=read_image(args.image))
    y = None
    if args.labels:
        idx = [tax.index_of(n.strip()) for n in args.labels.split(",")]
        y = LabelVector.from_indices(idx, params.num_classes)
    scales = _scales_from(args.scales) if args.scales else config.inference_scales
    crf = config.crf() if args.crf == "on" else None
    mask = predict_mask(rec, params, y, scales, crf)
    write_mask(mask, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    tax = _taxonomy_from(args.classes)
    manifest = load_manifest(args.gt_manifest, tax, split="val")
    cm = evaluate_predictions(manifest, args.pred_dir, tax.count)
    write_iou_report(tax, cm, args.out)
    print(f"mean_iou {mean_iou(cm):.6f}")
    return 0


def _cmd_ablate(args) -> int:
    tax = _taxonomy_from(args.classes)
    run_dir = Path(args.run)
    run_m = read_run_manifest(run_dir / "run_manifest.txt")
    config = load_config(args.config) if args.config else load_config(
        run_dir / "run.cfg")
    initial = load_checkpoint(run_m.stage_path("initial_ckpt"))
    final = load_checkpoint(run_m.stage_path("final_ckpt"))
    generated = load_manifest(run_m.stage_path("genmasks") / "manifest.tsv", tax)
    val = load_manifest(run_m.stage_path("corpus") / "val" / "manifest.tsv",
                        tax, split="val")
    rows = ablation_run(initial, generated, val, config, args.seed, tax,
                        final_params=final)
    write_ablation_table(rows, args.out)
    for name, miou in rows:
        print(f"{name}\t{miou:.6f}")
    return 0


def _cmd_synthbench(args) -> int:
    values = {}
    if args.spec:
        for lineno, raw in enumerate(
                Path(args.spec).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{args.spec}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    retrieved = int(values.get("retrieved_per_class", args.retrieved))
    target = int(values.get("target_images", args.target))
    val = int(values.get("val_images", args.val))
    canvas = int(values.get("canvas", args.canvas))
    noise = float(values.get("noise_level", args.noise))
    clutter = values.get("clutter", "on" if args.clutter else "off"
                         ).lower() in ("true", "1", "yes", "on")
    seed = int(values.get("rng_seed", args.seed))
    out = Path(args.out)

    groups, sidecars = generate_retrieved_groups(
        SynthSpec(retrieved, canvas, noise, clutter, seed))
    class_dirs, sidecar_dir = materialize_retrieved(groups, sidecars,
                                                    out / "retrieved")
    tax = synth_taxonomy()
    t_m = generate_target_set(SynthSpec(target, canvas, noise, clutter, seed + 1),
                              out / "target", tag="tgt")
    write_manifest(t_m, out / "target" / "manifest.tsv", tax)
    v_m = generate_target_set(SynthSpec(val, canvas, noise, clutter, seed + 2),
                              out / "val", split="val", tag="val")
    write_manifest(v_m, out / "val" / "manifest.tsv", tax)
    print(f"retrieved {retrieved * 3}, target {target}, val {val} -> {out}")
    return 0


def _cmd_pipeline(args) -> int:
    config = _load_or_default_config(args.config)
    out = Path(args.out)
    if args.synth:
        cache_env = os.environ.get("WSS_CACHE_DIR")
        synth_root = (Path(cache_env) if cache_env else out) / "00_synth"
        marker = synth_root / ".complete"
        fingerprint = (f"{args.synth_retrieved},{args.synth_target},"
                       f"{args.synth_val},{args.synth_canvas},"
                       f"{args.synth_noise},{not args.synth_no_clutter},"
                       f"{args.seed}")
        if not marker.exists() or marker.read_text() != fingerprint:
            if synth_root.exists():
                shutil.rmtree(synth_root)
            ns = argparse.Namespace(
                spec=None, retrieved=args.synth_retrieved,
                target=args.synth_target, val=args.synth_val,
                canvas=args.synth_canvas, noise=args.synth_noise,
                clutter=not args.synth_no_clutter, seed=args.seed,
                out=synth_root)
            _cmd_synthbench(ns)
            marker.write_text(fingerprint)
        tax = synth_taxonomy()
        sources = PipelineSources(
            taxonomy=tax,
            class_dirs={i: synth_root / "retrieved" / tax.names[i]
                        for i in (1, 2, 3)},
            coseg_source=args.coseg,
            target_manifest=synth_root / "target" / "manifest.tsv",
            val_manifest=synth_root / "val" / "manifest.tsv",
            sidecar_dir=synth_root / "retrieved" / "sidecars",
            max_per_class=args.max_per_class)
    else:
        tax = _taxonomy_from(args.classes)
        class_dirs = {}
        for spec_str in args.class_dir or ():
            name, _, path = spec_str.partition("=")
            class_dirs[tax.index_of(name)] = Path(path)
        if not args.target_manifest or not args.val_manifest:
            raise ValueError("non-synthetic runs need --target-manifest "
                             "and --val-manifest")
        sources = PipelineSources(
            taxonomy=tax, class_dirs=class_dirs, coseg_source=args.coseg,
            target_manifest=Path(args.target_manifest),
            val_manifest=Path(args.val_manifest),
            sidecar_dir=Path(args.sidecars) if args.sidecars else None,
            max_per_class=args.max_per_class)
    manifest = run_pipeline(config, sources, out, seed=args.seed,
                            workers=args.workers)
    print(f"pipeline run {manifest.run_id} complete; report at "
          f"{manifest.stage_path('report')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wss",
        description="Weakly supervised segmentation pipeline tools")
    sub = parser.add_subparsers(dest="command", required=True)

    def classes_opt(p, default="pascal"):
        p.add_argument("--classes", default=default,
                       help="'pascal', 'synth', or comma-separated class "
                            "names starting with background")

    p = sub.add_parser("ingest", help="fetch and normalize one class's images")
    p.add_argument("--class", dest="class_name", required=True)
    p.add_argument("--fetcher", choices=("dir", "urllist"), default="dir")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max", type=int, default=1000)
    p.add_argument("--config")
    classes_opt(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("coseg", help="produce filtered pseudo-masks for a group")
    p.add_argument("--group", required=True, help="retrieved manifest file")
    p.add_argument("--source", choices=("oracle", "consensus"),
                   default="consensus")
    p.add_argument("--sidecars", help="sidecar mask directory (oracle source)")
    p.add_argument("--out", required=True)
    p.add_argument("--fg-min", type=float, default=0.2)
    p.add_argument("--fg-max", type=float, default=0.8)
    classes_opt(p)
    p.set_defaults(func=_cmd_coseg)

    p = sub.add_parser("train", help="train one stage from a manifest")
    p.add_argument("--stage", choices=("initial", "final"), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="CSV training log path")
    p.add_argument("--checkpoint-dir")
    classes_opt(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("genmasks", help="write label-constrained masks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scales", default="0.75,1.0,1.25")
    p.add_argument("--crf", choices=("on", "off"), default="off")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    classes_opt(p)
    p.set_defaults(func=_cmd_genmasks)

    p = sub.add_parser("infer", help="predict a mask for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--labels", help="comma-separated class names to allow")
    p.add_argument("--out", required=True)
    p.add_argument("--scales")
    p.add_argument("--crf", choices=("on", "off"), default="off")
    p.add_argument("--config")
    classes_opt(p)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="score predictions against gt masks")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-manifest", required=True)
    p.add_argument("--out", required=True)
    classes_opt(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="four-row ablation table from a run")
    p.add_argument("--run", required=True, help="completed pipeline output dir")
    p.add_argument("--config", help="config override (defaults to the run's)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    classes_opt(p, default="synth")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("synthbench", help="generate the synthetic benchmark")
    p.add_argument("--spec", help="key = value spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--retrieved", type=int, default=66,
                   help="retrieved images per class")
    p.add_argument("--target", type=int, default=100)
    p.add_argument("--val", type=int, default=40)
    p.add_argument("--canvas", type=int, default=96)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--no-clutter", dest="clutter", action="store_false")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synthbench)

    p = sub.add_parser("pipeline", help="run the full two-stage pipeline")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--coseg", choices=("oracle", "consensus"), default="oracle")
    p.add_argument("--synth", action="store_true",
                   help="generate and use the synthetic benchmark as input")
    p.add_argument("--synth-retrieved", type=int, default=66)
    p.add_argument("--synth-target", type=int, default=100)
    p.add_argument("--synth-val", type=int, default=40)
    p.add_argument("--synth-canvas", type=int, default=96)
    p.add_argument("--synth-noise", type=float, default=0.15)
    p.add_argument("--synth-no-clutter", action="store_true")
    p.add_argument("--class-dir", action="append",
                   help="name=path source directory (repeatable)")
    p.add_argument("--sidecars")
    p.add_argument("--target-manifest")
    p.add_argument("--val-manifest")
    p.add_argument("--max-per-class", type=int, default=10000)
    classes_opt(p)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one machine-parsable line, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
