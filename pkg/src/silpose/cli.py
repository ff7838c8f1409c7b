"""Command-line entry point.

Stages communicate only through files::

    silpose synth --shape creature --n 50 --seed 7 --out data
    silpose estimate --dataset data --templates data/templates/template0.obj --out run
    silpose infer-template --dataset data --templates data/templates/template0.obj --out run
    silpose resolve --dataset data --templates data/templates/template0.obj --out run
    silpose eval --dataset data --poses run/poses_final.jsonl --out run/eval_final
    silpose report --reports run/eval_silhouette run/eval_final --out run/report

Settings come from, in increasing precedence: built-in defaults, a JSON
config file (``--config``) and command-line flags. Invalid input exits
with status 2; a failure during computation exits with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import errors
from .dataset import (
    filter_instances,
    front_back_labels,
    load_dataset,
    prune_semantic_classes,
    read_ground_truth,
    synth_dataset,
    write_synth,
    VIEW_SETS,
)
from .evaluation import evaluate, histogram_png, read_report, write_report
from .pose import (
    PipelineConfig,
    parse_resolution_schedule,
    read_hypotheses,
    read_poses,
    run_resolution_phase,
    run_silhouette_phase,
    write_hypotheses,
    write_poses,
)
from .remesh import RemeshConfig, heldout_iou, load_template, remesh, save_grid
from .semantics import export_colored_obj, infer_templates_from_estimates
from .semantics import load_template as load_semantic_template
from .semantics import save_template as save_semantic_template

log = logging.getLogger("silpose")

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "tau": 0.01,
    "agr_threshold": 0.3,
    "ntop": 100,
    "eps_smooth": 1e-3,
    "resolution_schedule": "128:30,192:60,256:100",
    "multi_template": False,
    "filter": True,
    "n": 50,
    "view_set": "profile",
    "resolution": 384,
    "shape": None,
    "max_steps": None,
    "views_per_step": 1,
}

SHAPES = ("creature", "creature-symmetric", "box")
SILHOUETTE_POSES = "poses_silhouette.jsonl"
FINAL_POSES = "poses_final.jsonl"
HYPOTHESES = "hypotheses.jsonl"


class UsageError(errors.SilposeError):
    """Invalid or missing command-line input."""


# ---------------------------------------------------------------- parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="silpose", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=False, templates=False):
        sp.add_argument("--config", type=Path, help="JSON file with settings (flags override it)")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        if dataset:
            sp.add_argument("--dataset", type=Path, help="dataset root")
        if templates:
            sp.add_argument("--templates", type=Path, nargs="+", help="template OBJ files")

    def thresholds(sp):
        sp.add_argument("--multi-template", action="store_const", const=True, default=None,
                        help="fit several templates jointly (with hypothesis pruning)")
        sp.add_argument("--tau", type=float, default=None, help="confidence temperature")
        sp.add_argument("--agr-threshold", type=float, default=None, help="ambiguity cutoff on v_agr")
        sp.add_argument("--ntop", type=int, default=None, help="images per semantic template")
        sp.add_argument("--eps-smooth", type=float, default=None, help="semantic template smoothing")
        sp.add_argument("--resolution-schedule", default=None, help="e.g. 128:30,192:60,256:100")
        sp.add_argument("--no-filter", dest="filter", action="store_const", const=False, default=None,
                        help="skip the instance quality filters")

    sp = sub.add_parser("remesh", help="fit sphere grids to raw template meshes")
    common(sp, templates=True)
    sp.add_argument("--max-steps", type=int, default=None, help="stop early (for quick runs)")
    sp.add_argument("--views-per-step", type=int, default=None)

    sp = sub.add_parser("estimate", help="silhouette-phase pose estimation")
    common(sp, dataset=True, templates=True)
    thresholds(sp)

    sp = sub.add_parser("infer-template", help="infer semantic templates from silhouette poses")
    common(sp, dataset=True, templates=True)
    thresholds(sp)
    sp.add_argument("--poses", type=Path, help=f"silhouette poses (default OUT/{SILHOUETTE_POSES})")

    sp = sub.add_parser("resolve", help="resolve ambiguities with semantic templates")
    common(sp, dataset=True, templates=True)
    thresholds(sp)
    sp.add_argument("--hypotheses", type=Path, help=f"default OUT/{HYPOTHESES}")
    sp.add_argument("--poses", type=Path, help=f"silhouette poses (default OUT/{SILHOUETTE_POSES})")
    sp.add_argument("--sem-templates", type=Path, nargs="+", help="default OUT/semantic_template*.txt")

    sp = sub.add_parser("eval", help="compare poses with reference poses")
    common(sp, dataset=True)
    sp.add_argument("--poses", type=Path, help="pose file to evaluate")
    sp.add_argument("--reference", type=Path, help="reference pose file (default DATASET/poses_gt.jsonl)")

    sp = sub.add_parser("synth", help="render a synthetic benchmark dataset")
    common(sp, templates=True)
    sp.add_argument("--shape", choices=SHAPES, default=None, help="built-in template instead of --templates")
    sp.add_argument("--n", type=int, default=None, help="number of images")
    sp.add_argument("--view-set", choices=VIEW_SETS, default=None)
    sp.add_argument("--resolution", type=int, default=None)

    sp = sub.add_parser("report", help="GD histograms of evaluation reports as CSV and PNG")
    common(sp)
    sp.add_argument("--reports", type=Path, nargs="+", help="eval output directories or report.json files")
    return p


def resolve_settings(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None) is not None:
        path = args.config
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        for key, value in data.items():
            key = key.replace("-", "_")
            if key in ("templates", "dataset", "out", "reports", "poses", "hypotheses", "sem_templates", "reference"):
                value = [Path(v) for v in value] if isinstance(value, list) else Path(value)
            cfg[key] = value
    for key, value in vars(args).items():
        if value is not None and key != "config":
            cfg[key] = value
    return cfg


def pipeline_config(cfg: dict) -> PipelineConfig:
    try:
        schedule = parse_resolution_schedule(str(cfg["resolution_schedule"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not cfg["tau"] > 0:
        raise UsageError("--tau must be positive")
    if not cfg["eps_smooth"] > 0:
        raise UsageError("--eps-smooth must be positive")
    if int(cfg["ntop"]) < 1:
        raise UsageError("--ntop must be at least 1")
    if int(cfg["threads"]) < 1:
        raise UsageError("--threads must be at least 1")
    iterations = schedule[-1][1]
    return PipelineConfig(
        iterations=iterations,
        resolution_schedule=schedule,
        tau=float(cfg["tau"]),
        agr_threshold=float(cfg["agr_threshold"]),
        eps_smooth=float(cfg["eps_smooth"]),
        ntop=int(cfg["ntop"]),
        multi_template=bool(cfg["multi_template"]),
        threads=int(cfg["threads"]),
        lr_decay_after=min(80, iterations),
        prune_after=tuple(last for _, last in schedule[:-1]),
    )


def _require(cfg: dict, key: str, command: str):
    value = cfg.get(key)
    if value is None or (isinstance(value, list) and not value):
        raise UsageError(f"{command}: missing required argument --{key.replace('_', '-')}")
    return value


def _existing(paths, what: str):
    for p in paths:
        if not Path(p).exists():
            raise UsageError(f"{what} not found: {p}")
    return [Path(p) for p in paths]


def _out_dir(cfg: dict, command: str) -> Path:
    out = Path(_require(cfg, "out", command))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_config(out: Path, command: str, cfg: dict) -> None:
    doc = {"command": command}
    for k, v in sorted(cfg.items()):
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, list):
            v = [str(x) if isinstance(x, Path) else x for x in v]
        doc[k] = v
    (out / f"run_config.{command}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_templates(cfg: dict, command: str):
    paths = _existing(_require(cfg, "templates", command), "template file")
    meshes = [load_template(p) for p in paths]
    if len(meshes) > 1 and not cfg["multi_template"]:
        raise UsageError(f"{command}: {len(meshes)} templates given; pass --multi-template to fit several")
    return meshes


def _load_records(cfg: dict, command: str):
    root = Path(_require(cfg, "dataset", command))
    if not root.is_dir():
        raise UsageError(f"dataset directory not found: {root}")
    manifest = load_dataset(root)
    if cfg["filter"]:
        manifest = filter_instances(manifest.records, manifest.class_names, manifest.category)
    if manifest.n_classes:
        manifest = prune_semantic_classes(manifest)
    return manifest


# ---------------------------------------------------------------- commands


def cmd_remesh(cfg: dict) -> None:
    paths = _existing(_require(cfg, "templates", "remesh"), "template file")
    out = _out_dir(cfg, "remesh")
    raws = [load_template(p) for p in paths]
    rc = RemeshConfig(seed=int(cfg["seed"]), max_steps=cfg["max_steps"],
                      views_per_step=int(cfg["views_per_step"]))
    grids = remesh(raws, rc, log=lambda k, loss, lr: log.info("step %d loss %.5f lr %.2e", k, loss, lr))
    lines = []
    for p, raw, grid in zip(paths, raws, grids):
        save_grid(grid, out / f"{p.stem}.obj")
        lines.append(f"{p.stem} heldout_iou {heldout_iou(grid, raw):.6f}")
    (out / "remesh_report.txt").write_text("\n".join(lines) + "\n")
    _write_run_config(out, "remesh", cfg)


def cmd_estimate(cfg: dict) -> None:
    pcfg = pipeline_config(cfg)
    templates = _load_templates(cfg, "estimate")
    manifest = _load_records(cfg, "estimate")
    out = _out_dir(cfg, "estimate")
    t0 = time.perf_counter()
    sets, ests, failures = run_silhouette_phase(manifest.records, templates, pcfg)
    log.info("fitted %d images in %.1f s", len(ests), time.perf_counter() - t0)
    write_poses(ests, out / SILHOUETTE_POSES)
    write_hypotheses(sets, out / HYPOTHESES)
    (out / "filter_report.json").write_text(
        json.dumps({"rejected": manifest.rejected, "failed": failures,
                    "class_names": manifest.class_names}, indent=1, sort_keys=True) + "\n"
    )
    _write_run_config(out, "estimate", cfg)


def cmd_infer_template(cfg: dict) -> None:
    pcfg = pipeline_config(cfg)
    templates = _load_templates(cfg, "infer-template")
    manifest = _load_records(cfg, "infer-template")
    out = _out_dir(cfg, "infer-template")
    poses = _existing([cfg.get("poses") or out / SILHOUETTE_POSES], "silhouette pose file")[0]
    if manifest.n_classes == 0:
        raise UsageError("infer-template: the dataset has no semantic classes left after pruning")
    ests = read_poses(poses)
    sem = infer_templates_from_estimates(ests, manifest.records, templates, manifest.n_classes, pcfg)
    for tid, st in enumerate(sem):
        if st is None:
            raise errors.EmptySelection(f"no usable image for template {tid}")
        save_semantic_template(st, out / f"semantic_template{tid}.txt")
        export_colored_obj(templates[tid], st, out / f"semantic_template{tid}.obj")
    _write_run_config(out, "infer-template", cfg)


def cmd_resolve(cfg: dict) -> None:
    pcfg = pipeline_config(cfg)
    templates = _load_templates(cfg, "resolve")
    manifest = _load_records(cfg, "resolve")
    out = _out_dir(cfg, "resolve")
    hyp = _existing([cfg.get("hypotheses") or out / HYPOTHESES], "hypothesis file")[0]
    poses = _existing([cfg.get("poses") or out / SILHOUETTE_POSES], "silhouette pose file")[0]
    sets = read_hypotheses(hyp)
    ests = read_poses(poses)
    if manifest.n_classes == 0:
        log.info("no semantic classes; final poses are the silhouette poses")
        write_poses(ests, out / FINAL_POSES)
        _write_run_config(out, "resolve", cfg)
        return
    sem_paths = cfg.get("sem_templates") or [out / f"semantic_template{t}.txt" for t in range(len(templates))]
    sem_templates = [load_semantic_template(p) for p in _existing(sem_paths, "semantic template")]
    if len(sem_templates) != len(templates):
        raise UsageError(f"resolve: {len(templates)} templates but {len(sem_templates)} semantic templates")
    for t, st in zip(templates, sem_templates):
        if st.n_vertices != t.n_vertices or st.n_classes != manifest.n_classes:
            raise UsageError("resolve: semantic template does not match its mesh or the dataset classes")
    final = run_resolution_phase(sets, ests, manifest.records, templates, sem_templates, pcfg)
    write_poses(final, out / FINAL_POSES)
    _write_run_config(out, "resolve", cfg)


def cmd_eval(cfg: dict) -> None:
    poses = _existing([_require(cfg, "poses", "eval")], "pose file")[0]
    out = _out_dir(cfg, "eval")
    if cfg.get("reference") is not None:
        ref = {e.image_id: e for e in read_poses(_existing([cfg["reference"]], "reference file")[0])}
    else:
        ref = read_ground_truth(_require(cfg, "dataset", "eval"))
    ests = read_poses(poses)
    rep = evaluate(ests, ref)
    write_report(rep, out, ests, title=poses.name)
    _write_run_config(out, "eval", cfg)


def cmd_synth(cfg: dict) -> None:
    out = _out_dir(cfg, "synth")
    if cfg.get("shape"):
        from .geometry import save_obj
        from .shapes import box_mesh, creature

        path = out / "templates" / "template0.obj"
        path.parent.mkdir(exist_ok=True)
        if cfg["shape"] == "box":
            save_obj(box_mesh(), path)
        else:
            save_grid(creature(symmetric=(cfg["shape"] == "creature-symmetric")), path)
        meshes = [load_template(path)]
    else:
        meshes = [load_template(p) for p in _existing(_require(cfg, "templates", "synth"), "template file")]
    n = int(cfg["n"])
    if n < 1:
        raise UsageError("synth: --n must be at least 1")
    manifest, gts = synth_dataset(
        meshes, n, int(cfg["seed"]), resolution=int(cfg["resolution"]), view_set=cfg["view_set"],
        vertex_labels=[front_back_labels(m) for m in meshes],
    )
    write_synth(manifest, gts, out)
    _write_run_config(out, "synth", cfg)


def cmd_report(cfg: dict) -> None:
    paths = _existing(_require(cfg, "reports", "report"), "report")
    out = _out_dir(cfg, "report")
    reps = []
    for p in paths:
        f = p / "report.json" if p.is_dir() else p
        reps.append((p.name if p.is_dir() else p.parent.name, read_report(_existing([f], "report")[0])))
    edges = reps[0][1]["histogram_edges"]
    header = ["bin_lo", "bin_hi"] + [f"{name}_all" for name, _ in reps] + [f"{name}_accepted" for name, _ in reps]
    rows = [",".join(header)]
    for k in range(len(edges) - 1):
        cells = [f"{edges[k]:.2f}", f"{edges[k + 1]:.2f}"]
        cells += [str(r["histogram"][k]) for _, r in reps]
        cells += [str(r["histogram_accepted"][k]) for _, r in reps]
        rows.append(",".join(cells))
    (out / "gd_histograms.csv").write_text("\n".join(rows) + "\n")
    summary = ["name,images,recall,gd_accepted,gd_all"]
    for name, r in reps:
        summary.append(",".join([name, str(r["n_images"]), f"{r['recall']:.6f}",
                                 "null" if r["gd_accepted"] is None else f"{r['gd_accepted']:.6f}",
                                 "null" if r["gd_all"] is None else f"{r['gd_all']:.6f}"]))
    (out / "summary.csv").write_text("\n".join(summary) + "\n")
    for name, r in reps:
        histogram_png(r, out / f"gd_histogram_{name}.png")


COMMANDS = {
    "remesh": cmd_remesh,
    "estimate": cmd_estimate,
    "infer-template": cmd_infer_template,
    "resolve": cmd_resolve,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "report": cmd_report,
}

# input problems the user can fix by changing arguments or files
VALIDATION_ERRORS = (
    UsageError,
    errors.MissingFile,
    errors.MalformedManifest,
    errors.MissingReference,
    errors.ShapeMismatch,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = resolve_settings(args)
        COMMANDS[args.command](cfg)
    except VALIDATION_ERRORS as exc:
        print(f"silpose {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (errors.SilposeError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"silpose {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
