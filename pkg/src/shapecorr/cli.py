"""Command-line pipeline: classify | regions | segment | match | eval | record."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import classify as zsc
from . import fmap as fm
from . import metrics as mt
from . import regions as rg
from . import segment3d as s3d
from .dataset import DatasetError, load_dataset, synthetic_truth
from .mesh import MeshLoadError, load_mesh, normalize_unit_sphere, save_obj
from .oracle import (
    BackendUnavailableError,
    FixtureMissError,
    HttpOracle,
    OracleBackend,
    OracleError,
    ProtocolError,
    RecordingOracle,
    ReplayOracle,
    SyntheticNoise,
    SyntheticOracle,
    SyntheticTruth,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FIXTURE_MISS = 3
EXIT_BACKEND = 4
EXIT_INVARIANT = 5

SIDECAR_URL_ENV = "SHAPECORR_SIDECAR_URL"


@dataclass
class PipelineConfig:
    oracle_mode: str = "synthetic"  # http | replay | synthetic
    sidecar_url: str = "http://127.0.0.1:8008"
    k_class_views: int = 12
    v_seg_views: int = 180
    radii: tuple[float, ...] = (2.0, 1.75, 1.5)
    box_threshold: float = 3.7
    basis_k: int = 60
    icp_iters: int = 10
    seed: int = 0
    image_size: int = 512
    output_dir: str = "runs/out"
    fixture_dir: str = "fixtures"
    synthetic_truth: str | None = None
    noise: dict = field(default_factory=dict)

    def validate(self):
        if self.oracle_mode not in ("http", "replay", "synthetic"):
            raise ValueError(f"oracle_mode must be http, replay, or synthetic, not {self.oracle_mode!r}")
        for name in ("k_class_views", "v_seg_views", "basis_k", "image_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.icp_iters < 0:
            raise ValueError("icp_iters must be >= 0")
        if self.v_seg_views % len(self.radii) != 0:
            raise ValueError(f"v_seg_views={self.v_seg_views} must be divisible by the radius count {len(self.radii)}")
        return self

    def canonical(self) -> dict:
        """Semantic knobs only (no paths), in a stable order."""
        return {
            "oracle_mode": self.oracle_mode,
            "k_class_views": self.k_class_views,
            "v_seg_views": self.v_seg_views,
            "radii": list(self.radii),
            "box_threshold": self.box_threshold,
            "basis_k": self.basis_k,
            "icp_iters": self.icp_iters,
            "seed": self.seed,
            "image_size": self.image_size,
            "noise": dict(sorted(self.noise.items())),
        }

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @staticmethod
    def load(path=None, overrides: dict | None = None) -> "PipelineConfig":
        data: dict = {}
        if path is not None:
            raw = json.loads(Path(path).read_text())
            known = {f.name for f in fields(PipelineConfig)}
            unknown = set(raw) - known
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            data.update(raw)
        if overrides:
            data.update({k: v for k, v in overrides.items() if v is not None})
        if "radii" in data:
            data["radii"] = tuple(float(r) for r in data["radii"])
        cfg = PipelineConfig(**data)
        env_url = os.environ.get(SIDECAR_URL_ENV)
        if env_url:
            cfg.sidecar_url = env_url
        return cfg.validate()


def make_backend(config: PipelineConfig) -> OracleBackend:
    if config.oracle_mode == "http":
        return HttpOracle(config.sidecar_url)
    if config.oracle_mode == "replay":
        return ReplayOracle(config.fixture_dir)
    truth_path = config.synthetic_truth
    if not truth_path:
        raise ValueError("synthetic mode requires a truth file (--synthetic-truth)")
    truth = SyntheticTruth.from_json(json.loads(Path(truth_path).read_text()))
    noise = SyntheticNoise(**config.noise) if config.noise else None
    return SyntheticOracle(truth, noise=noise, seed=config.seed)


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")


class StageRunner:
    """Runs named stages, tracking artifacts for the MANIFEST and the failure point."""

    def __init__(self, out_dir: Path, config: PipelineConfig, pair_id: str | None = None):
        self.out_dir = out_dir
        self.config = config
        self.pair_id = pair_id
        self.stages: list[dict] = []
        self.failed_stage: str | None = None

    def run(self, name: str, fn):
        t0 = time.perf_counter()
        try:
            artifacts = fn()
        except Exception:
            self.failed_stage = name
            self.write_manifest()
            raise
        dt = time.perf_counter() - t0
        print(f"[stage] {name}: {dt:.2f}s", file=sys.stderr)
        self.stages.append({"name": name, "artifacts": sorted(artifacts or [])})
        return artifacts

    def write_manifest(self):
        manifest = {
            "config_hash": self.config.config_hash(),
            "config": self.config.canonical(),
            "stages": self.stages,
        }
        if self.pair_id is not None:
            manifest["pair_id"] = self.pair_id
        if self.failed_stage is not None:
            manifest["failed_stage"] = self.failed_stage
        _write_json(self.out_dir / "MANIFEST.json", manifest)


def _classify_one(mesh, oracle, config, voting: bool):
    proposals = zsc.propose_classes(mesh, oracle, k=config.k_class_views, image_size=config.image_size)
    if voting:
        return zsc.majority_vote(proposals)
    return zsc.unify_classes(proposals, oracle)


def cmd_classify(args) -> int:
    config = _config_from_args(args)
    oracle = make_backend(config)
    mesh = normalize_unit_sphere(load_mesh(args.mesh))
    label = _classify_one(mesh, oracle, config, args.baseline_voting)
    report = {"shape": mesh.id, "label": label.label, "method": label.method}
    out = Path(config.output_dir)
    _write_json(out / "classes.json", report)
    print(json.dumps(report))
    return EXIT_OK


def cmd_regions(args) -> int:
    config = _config_from_args(args)
    oracle = make_backend(config)
    r1, r2, mapping = rg.generate_regions_and_mapping(args.class1, args.class2, oracle)
    report = rg.to_json(r1, r2, mapping)
    _write_json(Path(config.output_dir) / "regions.json", report)
    print(json.dumps(report))
    return EXIT_OK


def cmd_segment(args) -> int:
    config = _config_from_args(args)
    oracle = make_backend(config)
    mesh = normalize_unit_sphere(load_mesh(args.mesh))
    region_names = [r.strip() for r in args.regions.split(",") if r.strip()]
    regions = rg.RegionSet(class_name=args.class_name or "", regions=tuple(region_names))
    fl, vl, _ = s3d.segment(
        mesh, regions, oracle,
        views=config.v_seg_views, image_size=config.image_size,
        radii=config.radii, box_threshold=config.box_threshold,
    )
    out = Path(config.output_dir)
    _write_json(out / "segmentation.json", s3d.segmentation_to_json(fl, vl))
    save_obj(out / "segmented.obj", mesh, s3d.vertex_label_colors(vl))
    print(f"wrote {out / 'segmentation.json'}")
    return EXIT_OK


def run_match(mesh1, mesh2, config: PipelineConfig, oracle: OracleBackend, out_dir: Path,
              pair_id: str, skip_dense: bool = False) -> Path:
    """Full pipeline over a normalized mesh pair; artifacts under ``out_dir``."""
    runner = StageRunner(out_dir, config, pair_id=pair_id)
    state: dict = {}

    def stage_classify():
        label1 = _classify_one(mesh1, oracle, config, voting=False)
        label2 = _classify_one(mesh2, oracle, config, voting=False)
        state["labels"] = (label1, label2)
        _write_json(out_dir / "classes.json", {
            "shape1": {"shape": mesh1.id, "label": label1.label, "method": label1.method},
            "shape2": {"shape": mesh2.id, "label": label2.label, "method": label2.method},
        })
        return ["classes.json"]

    def stage_regions():
        label1, label2 = state["labels"]
        r1, r2, mapping = rg.generate_regions_and_mapping(label1.label, label2.label, oracle)
        state["regions"] = (r1, r2, mapping)
        _write_json(out_dir / "regions.json", rg.to_json(r1, r2, mapping))
        return ["regions.json"]

    def make_stage_segment(which: int):
        def stage():
            mesh = mesh1 if which == 1 else mesh2
            regions = state["regions"][which - 1]
            fl, vl, _ = s3d.segment(
                mesh, regions, oracle,
                views=config.v_seg_views, image_size=config.image_size,
                radii=config.radii, box_threshold=config.box_threshold,
            )
            state[f"seg{which}"] = (fl, vl)
            _write_json(out_dir / f"segmentation{which}.json", s3d.segmentation_to_json(fl, vl))
            save_obj(out_dir / f"segmented{which}.obj", mesh, s3d.vertex_label_colors(vl))
            return [f"segmentation{which}.json", f"segmented{which}.obj"]
        return stage

    def stage_coarse():
        r1, r2, mapping = state["regions"]
        fl1, vl1 = state["seg1"]
        fl2, vl2 = state["seg2"]
        corr = s3d.coarse_correspondence(fl1, fl2, mapping, r1, r2)
        state["coarse"] = corr
        _write_json(out_dir / "coarse.json", {
            "pairs": [
                {
                    "source_region": p.source_region,
                    "target_region": p.target_region,
                    "source_faces": p.source_faces.tolist(),
                    "target_faces": p.target_faces.tolist(),
                }
                for p in corr.pairs
            ],
            "unmatched_source": corr.unmatched_source.tolist(),
            "unmatched_target": corr.unmatched_target.tolist(),
            "regions1": list(corr.regions1),
            "regions2": list(corr.regions2),
        })
        c1, c2 = s3d.coarse_vertex_colors(corr, vl1, vl2)
        save_obj(out_dir / "coarse1.obj", mesh1, c1)
        save_obj(out_dir / "coarse2.obj", mesh2, c2)
        return ["coarse.json", "coarse1.obj", "coarse2.obj"]

    def stage_dense():
        fl1, _ = state["seg1"]
        fl2, _ = state["seg2"]
        pm, _ = fm.dense_correspondence(
            mesh1, mesh2, state["coarse"], fl1, fl2,
            k=config.basis_k, icp_iters=config.icp_iters,
        )
        _write_json(out_dir / "pointmap.json", pm.target_to_source.tolist())
        src_colors = fm.coordinate_colors(mesh1)
        save_obj(out_dir / "source_colors1.obj", mesh1, src_colors)
        save_obj(out_dir / "transfer2.obj", mesh2, fm.transfer_colors(pm, src_colors))
        return ["pointmap.json", "source_colors1.obj", "transfer2.obj"]

    runner.run("classify", stage_classify)
    runner.run("regions", stage_regions)
    runner.run("segment_shape1", make_stage_segment(1))
    runner.run("segment_shape2", make_stage_segment(2))
    runner.run("coarse_correspondence", stage_coarse)
    if not skip_dense:
        runner.run("dense_correspondence", stage_dense)
    runner.write_manifest()
    return out_dir


def cmd_match(args) -> int:
    config = _config_from_args(args)
    oracle = make_backend(config)
    mesh1 = normalize_unit_sphere(load_mesh(args.mesh1))
    mesh2 = normalize_unit_sphere(load_mesh(args.mesh2))
    pair_id = args.pair_id or f"{mesh1.id}__{mesh2.id}"
    out_dir = Path(config.output_dir) / pair_id
    run_match(mesh1, mesh2, config, oracle, out_dir, pair_id, skip_dense=args.skip_dense)
    print(f"wrote artifacts under {out_dir}")
    return EXIT_OK


def _load_results_dir(results_dir: Path):
    runs = []
    for sub in sorted(results_dir.iterdir()):
        manifest_path = sub / "MANIFEST.json"
        if sub.is_dir() and manifest_path.exists():
            manifest = json.loads(manifest_path.read_text())
            runs.append((sub, manifest))
    return runs


def cmd_eval(args) -> int:
    config = _config_from_args(args)
    annotations = {a.pair_id: a for a in load_dataset(args.manifest)}
    results_dir = Path(args.results_dir)
    if not results_dir.is_dir():
        raise DatasetError(f"results directory not found: {results_dir}")

    synonyms = mt.SynonymTable.load(args.synonyms) if args.synonyms else mt.SynonymTable.load()
    rows = []
    skipped = []
    class_hits: list[int] = []
    for sub, manifest in _load_results_dir(results_dir):
        pair_id = manifest.get("pair_id", sub.name)
        ann = annotations.get(pair_id)
        if ann is None:
            skipped.append({"pair": pair_id, "reason": "no annotation in manifest"})
            continue
        try:
            row = _eval_pair(sub, manifest, ann, synonyms)
        except FileNotFoundError as err:
            skipped.append({"pair": pair_id, "reason": f"missing artifact: {err}"})
            continue
        rows.append(row)
        class_hits.extend(row.pop("_class_hits"))

    columns = ["v", "zs_class_acc", "srgen_f1_regions", "srgen_f1_mapping", "sriou", "kp_label_acc", "geodesic_error"]
    aggregate = {c: _mean_of(rows, c) for c in columns if c != "v"}
    aggregate["zs_class_acc"] = float(np.mean(class_hits)) if class_hits else None
    sweep = _v_sweep(rows)
    report = {"pairs": rows, "aggregate": aggregate, "skipped": skipped, "v_sweep": sweep}
    out = Path(config.output_dir)
    _write_json(out / "report.json", report)
    table = mt.metrics_table(rows, columns)
    (out / "report.txt").write_text(table + "\n")
    print(table)
    print(f"\naggregate: {json.dumps(aggregate)}")
    if skipped:
        print(f"skipped: {json.dumps(skipped)}")
    return EXIT_OK


def _eval_pair(sub: Path, manifest: dict, ann, synonyms) -> dict:
    classes = json.loads((sub / "classes.json").read_text())
    regions_data = json.loads((sub / "regions.json").read_text())
    r1, r2, mapping = rg.from_json(regions_data)
    fl1, vl1 = s3d.segmentation_from_json(json.loads((sub / "segmentation1.json").read_text()))
    fl2, vl2 = s3d.segmentation_from_json(json.loads((sub / "segmentation2.json").read_text()))

    hits = [
        int(synonyms.matches(classes["shape1"]["label"], ann.gt_class1)) if ann.gt_class1 in synonyms else int(
            mt.exact_table().matches(classes["shape1"]["label"], ann.gt_class1)),
        int(synonyms.matches(classes["shape2"]["label"], ann.gt_class2)) if ann.gt_class2 in synonyms else int(
            mt.exact_table().matches(classes["shape2"]["label"], ann.gt_class2)),
    ]
    f1_regions = 0.5 * (
        mt.srgen_f1(r1, ann.gt_regions1, synonyms) + mt.srgen_f1(r2, ann.gt_regions2, synonyms)
    )
    f1_mapping = mt.srgen_f1(mapping, ann.gt_mapping, synonyms)
    _, _, i12 = mt.sriou(fl1, fl2, ann)
    kp_acc = mt.kp_label_acc(vl1, vl2, ann, ann.gt_mapping, synonyms)

    geo = None
    pm_path = sub / "pointmap.json"
    if pm_path.exists():
        mesh1, _ = ann.load_meshes()
        mesh1 = normalize_unit_sphere(mesh1)
        indices = np.asarray(json.loads(pm_path.read_text()), dtype=np.int64)
        pm = fm.PointMap(target_to_source=indices, n_source=mesh1.n_vertices)
        geo = mt.avg_geodesic_error(pm, ann, mesh1)

    return {
        "pair": ann.pair_id,
        "v": manifest.get("config", {}).get("v_seg_views"),
        "zs_class_acc": float(np.mean(hits)),
        "srgen_f1_regions": f1_regions,
        "srgen_f1_mapping": f1_mapping,
        "sriou": i12,
        "kp_label_acc": kp_acc,
        "geodesic_error": geo,
        "_class_hits": hits,
    }


def _mean_of(rows, key):
    vals = [r[key] for r in rows if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def _v_sweep(rows):
    groups: dict[int, list[dict]] = {}
    for r in rows:
        if r.get("v") is not None:
            groups.setdefault(r["v"], []).append(r)
    sweep = []
    for v in sorted(groups):
        sweep.append({
            "v": v,
            "sriou": _mean_of(groups[v], "sriou"),
            "kp_label_acc": _mean_of(groups[v], "kp_label_acc"),
            "pairs": len(groups[v]),
        })
    return sweep


def cmd_record(args) -> int:
    config = _config_from_args(args)
    if config.oracle_mode != "http":
        raise ValueError("record requires oracle_mode=http")
    store = Path(config.fixture_dir)
    if store.exists() and any(store.iterdir()) and not args.force:
        raise ValueError(f"fixture store {store} already exists; pass --force to re-record")
    http = HttpOracle(config.sidecar_url)
    health = http.health()  # raises BackendUnavailableError with detail when down
    print(f"sidecar healthy: {json.dumps(health)}", file=sys.stderr)
    oracle = RecordingOracle(http, store)

    pair_lines = [l.split() for l in Path(args.pair_list).read_text().splitlines() if l.strip()]
    for parts in pair_lines:
        if len(parts) < 2:
            raise ValueError(f"pair list line needs two mesh paths, got {parts!r}")
        mesh1 = normalize_unit_sphere(load_mesh(parts[0]))
        mesh2 = normalize_unit_sphere(load_mesh(parts[1]))
        pair_id = parts[2] if len(parts) > 2 else f"{mesh1.id}__{mesh2.id}"
        out_dir = Path(config.output_dir) / pair_id
        run_match(mesh1, mesh2, config, oracle, out_dir, pair_id, skip_dense=args.skip_dense)
    print(f"recorded fixtures under {store}")
    return EXIT_OK


def _config_from_args(args) -> PipelineConfig:
    overrides = {
        "oracle_mode": getattr(args, "oracle", None),
        "sidecar_url": getattr(args, "sidecar_url", None),
        "k_class_views": getattr(args, "class_views", None),
        "v_seg_views": getattr(args, "views", None),
        "box_threshold": getattr(args, "box_threshold", None),
        "basis_k": getattr(args, "basis_k", None),
        "icp_iters": getattr(args, "icp_iters", None),
        "seed": getattr(args, "seed", None),
        "image_size": getattr(args, "image_size", None),
        "output_dir": getattr(args, "output", None),
        "fixture_dir": getattr(args, "fixtures", None),
        "synthetic_truth": getattr(args, "synthetic_truth", None),
    }
    return PipelineConfig.load(getattr(args, "config", None), overrides)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--oracle", choices=["http", "replay", "synthetic"], help="oracle backend mode")
    p.add_argument("--sidecar-url", dest="sidecar_url")
    p.add_argument("--fixtures", help="fixture store directory (replay/record)")
    p.add_argument("--synthetic-truth", dest="synthetic_truth", help="ground-truth JSON for the synthetic oracle")
    p.add_argument("--output", help="output directory")
    p.add_argument("--views", type=int, help="segmentation view count")
    p.add_argument("--class-views", dest="class_views", type=int, help="classification view count (12 or 24)")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--box-threshold", dest="box_threshold", type=float)
    p.add_argument("--basis-k", dest="basis_k", type=int)
    p.add_argument("--icp-iters", dest="icp_iters", type=int)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapecorr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="zero-shot classification of one mesh")
    p.add_argument("mesh")
    p.add_argument("--baseline-voting", action="store_true", help="use majority voting instead of chat unification")
    _add_common(p)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("regions", help="generate region sets and the mapping for two classes")
    p.add_argument("class1")
    p.add_argument("class2")
    _add_common(p)
    p.set_defaults(fn=cmd_regions)

    p = sub.add_parser("segment", help="SAM-3D segmentation of one mesh")
    p.add_argument("mesh")
    p.add_argument("--regions", required=True, help="comma-separated region names")
    p.add_argument("--class-name", dest="class_name", default="")
    _add_common(p)
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("match", help="full correspondence pipeline for a mesh pair")
    p.add_argument("mesh1")
    p.add_argument("mesh2")
    p.add_argument("--pair-id", dest="pair_id")
    p.add_argument("--skip-dense", action="store_true", help="stop after the coarse correspondence")
    _add_common(p)
    p.set_defaults(fn=cmd_match)

    p = sub.add_parser("eval", help="metric suite over a results directory")
    p.add_argument("results_dir")
    p.add_argument("manifest")
    p.add_argument("--synonyms", help="synonym table JSON (defaults to the bundled asset)")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("record", help="run the pipeline against the sidecar, recording fixtures")
    p.add_argument("pair_list", help="text file: one 'mesh1 mesh2 [pair_id]' per line")
    p.add_argument("--force", action="store_true", help="overwrite an existing fixture store")
    p.add_argument("--skip-dense", action="store_true")
    _add_common(p)
    p.set_defaults(fn=cmd_record)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FixtureMissError as err:
        print(f"fixture miss: {err}", file=sys.stderr)
        return EXIT_FIXTURE_MISS
    except BackendUnavailableError as err:
        print(f"backend unavailable: {err}", file=sys.stderr)
        return EXIT_BACKEND
    except rg.RegionParseError as err:
        print(f"invariant violation: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except (MeshLoadError, DatasetError, FileNotFoundError, ValueError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (ProtocolError, OracleError, AssertionError) as err:
        print(f"invariant violation: {err}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
