import os
import sys
import json
import logging
import argparse
import tempfile
import traceback
from dataclasses import replace

from utils.config import get_default_jobs, get_log_level, get_output_dir_override
from utils.storage import PASS_FILES, COLOR_PASSES, write_png
from assets.mesh import EmptyMeshError, MeshIndexError, MeshParseError, load_mesh
from assets.rig import RigError, build_capsule_rig, load_rig
from assets.grasp import (DEFAULT_CONTACT_THRESHOLD, GraspFileError, ProbeModel, build_probe_mesh,
                          convert_grasp_file, load_grasp_pose, validate_grasp)
from core.viewsphere import SphereConfig, generate_viewpoints, plot_viewpoints
from core.pipeline import (FrameGenerationError, FrameSpec, GenerationConfig, benchmark, generate_dataset,
                           lighting_seed, load_assets, load_generation_config, parse_generation_config)
from core.renderer import RenderHandler
from core.scene import assemble_scene
from core.evaluation import EvaluationError, EvaluationHandler, load_predictions

# Configure logging
logging.basicConfig(level=get_log_level(), format='%(asctime)s - %(levelname)s - %(message)s')

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_IO = 3

ASSET_ERRORS = (OSError, MeshParseError, EmptyMeshError, MeshIndexError, RigError, GraspFileError,
                FrameGenerationError)


def emit(rows, fmt, columns=None, title=None):
    """Print rows as a markdown table or as one JSON object per line."""
    if fmt == 'json-lines':
        for row in rows:
            print(json.dumps(row, sort_keys=True))
        return
    columns = columns or (list(rows[0].keys()) if rows else [])
    if title:
        print(f"\n## {title}\n")
    print("| " + " | ".join(columns) + " |")
    print("|" + "|".join("-" * (len(c) + 2) for c in columns) + "|")
    for row in rows:
        cells = []
        for column in columns:
            value = row.get(column)
            cells.append(f"{value:.6f}" if isinstance(value, float) else str(value))
        print("| " + " | ".join(cells) + " |")


def resolve_output_dir(args_out, cfg: GenerationConfig):
    """--out wins over GRASPSPHERE_OUTPUT_DIR, which wins over the config's output_dir."""
    if args_out:
        return args_out
    override = get_output_dir_override()
    if override:
        return override
    return cfg.resolve(cfg.output_dir) if cfg.output_dir else None


def cmd_generate(args):
    cfg = load_generation_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, global_seed=args.seed)
    output_dir = resolve_output_dir(args.out, cfg)
    if not output_dir:
        print("error: no output directory (use --out, GRASPSPHERE_OUTPUT_DIR or output_dir in the config)",
              file=sys.stderr)
        return EXIT_USAGE
    frames = None if args.frame is None else [args.frame]
    manifest = generate_dataset(cfg, jobs=args.jobs, output_dir=output_dir, frame_indices=frames,
                                show_progress=not args.quiet)
    if manifest is None:
        emit([{'frame_index': args.frame, 'output_dir': output_dir}], args.format)
    else:
        emit([{'split': name, 'frames': len(indices)} for name, indices in manifest.splits.items()]
             + [{'split': 'total', 'frames': manifest.frame_count}], args.format, title="Generated frames")
    return EXIT_OK


def cmd_viewpoints(args):
    sphere = SphereConfig(args.r_sph, args.r_circ, not args.no_poles, frozenset(args.exclude or []))
    viewpoints = generate_viewpoints(sphere)
    rows = []
    for vp in viewpoints:
        data = vp.to_dict()
        rows.append({
            'index': vp.index,
            'theta_deg': data['theta_deg'],
            'phi_deg': data['phi_deg'],
            'x': float(vp.position[0]), 'y': float(vp.position[1]), 'z': float(vp.position[2]),
            'roll': vp.euler_deg[0], 'pitch': vp.euler_deg[1], 'yaw': vp.euler_deg[2],
        })
    emit(rows, args.format, ['index', 'theta_deg', 'phi_deg', 'x', 'y', 'z', 'roll', 'pitch', 'yaw'])
    if args.plot:
        plot_viewpoints(viewpoints, args.plot, args.r_sph)
    return EXIT_OK


def cmd_preview(args):
    pose = load_grasp_pose(args.grasp)
    if args.config:
        cfg = load_generation_config(args.config)
    else:
        cfg = GenerationConfig(grasp_files=[os.path.abspath(args.grasp)], split={pose.grasp_id: 'train'})
    cfg = replace(cfg, grasp_files=[os.path.abspath(args.grasp)], split={pose.grasp_id: 'train'})
    assets = load_assets(cfg)
    if args.viewpoint not in assets.viewpoints:
        print(f"error: viewpoint {args.viewpoint} not in {sorted(assets.viewpoints)[0]}.."
              f"{sorted(assets.viewpoints)[-1]}", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed if args.seed is not None else cfg.global_seed
    spec = FrameSpec(0, pose.grasp_id, args.viewpoint, args.distance, 0, 0, lighting_seed(seed, 0))
    scene, camera, record = assemble_scene(spec, assets)
    frames = RenderHandler(cfg.render_settings()).render_frameset(scene, camera, record)
    write_png(args.out, frames.quantized()[args.pass_name], args.pass_name in COLOR_PASSES)
    logging.info(f"Wrote {args.pass_name} preview of grasp '{pose.grasp_id}' to {args.out}")
    return EXIT_OK


def cmd_validate(args):
    report = EvaluationHandler(args.dataset).validate(args.depth_sample, show_progress=not args.quiet)
    if args.format == 'json-lines':
        print(json.dumps(report.to_dict(), sort_keys=True))
    else:
        print(f"Checked {report.frame_count} frames: {'PASSED' if report.passed else 'FAILED'}")
        if report.issues:
            emit([issue.to_dict() for issue in report.issues], 'table', ['check', 'frame_index', 'message'])
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_eval(args):
    predictions = load_predictions(args.pred)
    report = EvaluationHandler(args.dataset).evaluate(predictions, args.split)
    if args.format == 'json-lines':
        print(json.dumps(report.to_dict(), sort_keys=True))
    else:
        print(report.to_markdown())
    return EXIT_OK


def cmd_stats(args):
    handler = EvaluationHandler(args.dataset)
    stats = handler.stats()
    if args.format == 'json-lines':
        print(json.dumps(stats, sort_keys=True))
    else:
        emit([{'factor': k, 'count': v} for k, v in stats['factor_counts'].items()], 'table', title="Factors")
        emit([{'split': k, 'frames': v} for k, v in stats['split_counts'].items()]
             + [{'split': 'total', 'frames': stats['frame_count']}], 'table', title="Splits")
    if args.benchmark:
        snapshot = handler.manifest.config
        cfg = parse_generation_config(snapshot, snapshot.get('base_dir', '.'))
        with tempfile.TemporaryDirectory() as scratch:
            count, elapsed, rate = benchmark(cfg, args.benchmark, scratch)
        emit([{'frames': count, 'seconds': elapsed, 'frames_per_second': rate}], args.format, title="Benchmark")
    return EXIT_OK


def cmd_grasp_check(args):
    pose = load_grasp_pose(args.grasp)
    if args.convert:
        convert_grasp_file(args.grasp, args.convert)
    rig = load_rig(args.rig) if args.rig else build_capsule_rig()
    probe_mesh = load_mesh(args.probe, 'probe') if args.probe else build_probe_mesh()
    probe = ProbeModel(probe_mesh) if args.z_offset is None else ProbeModel(probe_mesh, args.z_offset)
    report = validate_grasp(rig, pose, probe, args.threshold)
    emit([report.to_dict()], args.format,
         ['grasp_id', 'contact_count', 'min_distance_m', 'penetration', 'hand_vertex_count'])
    return EXIT_VALIDATION if report.penetration else EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help="global seed (overrides the config's global_seed)")
    common.add_argument('--jobs', type=int, default=get_default_jobs(),
                        help="worker processes (default: GRASPSPHERE_JOBS or 1)")
    common.add_argument('--format', choices=['table', 'json-lines'], default='table', help="output format")
    common.add_argument('--quiet', action='store_true', help="hide progress bars")

    parser = argparse.ArgumentParser(prog='graspsphere',
                                     description="Synthetic hand-probe grasp frame generation and evaluation")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate', parents=[common], help="render a dataset from a generation config")
    p.add_argument('--config', required=True, help="generation config JSON")
    p.add_argument('--out', default=None, help="output directory (overrides GRASPSPHERE_OUTPUT_DIR and config)")
    p.add_argument('--frame', type=int, default=None, help="re-render only this frame index")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser('viewpoints', parents=[common], help="print the viewpoint table")
    p.add_argument('--r-sph', type=float, default=0.8, help="sphere radius in meters")
    p.add_argument('--r-circ', type=float, default=0.15, help="surface circle radius in meters")
    p.add_argument('--no-poles', action='store_true', help="leave out the two pole viewpoints")
    p.add_argument('--exclude', type=int, nargs='*', help="viewpoint indices to drop")
    p.add_argument('--plot', default=None, help="also save a 3D plot of the viewpoints to this PNG")
    p.set_defaults(handler=cmd_viewpoints)

    p = sub.add_parser('preview', parents=[common], help="render one grasp from one viewpoint")
    p.add_argument('--grasp', required=True, help="grasp pose file (.json or .mat)")
    p.add_argument('--viewpoint', type=int, required=True, help="viewpoint index")
    p.add_argument('--distance', type=float, default=0.8, help="camera distance in meters")
    p.add_argument('--config', default=None, help="generation config supplying sphere and render settings")
    p.add_argument('--pass', dest='pass_name', choices=sorted(PASS_FILES), default='rgb_gt_overlay',
                   help="which pass to write")
    p.add_argument('--out', default='preview.png', help="output PNG path")
    p.set_defaults(handler=cmd_preview)

    p = sub.add_parser('validate', parents=[common], help="check a generated dataset")
    p.add_argument('dataset', help="dataset directory")
    p.add_argument('--depth-sample', type=int, default=8, help="frames checked for depth/segmentation consistency")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser('eval', parents=[common], help="MPJPE of predictions against a dataset split")
    p.add_argument('--pred', required=True, help="predictions JSON")
    p.add_argument('--dataset', required=True, help="dataset directory")
    p.add_argument('--split', choices=['train', 'val', 'test'], default='test')
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('stats', parents=[common], help="factor counts and split totals of a dataset")
    p.add_argument('dataset', help="dataset directory")
    p.add_argument('--benchmark', type=int, default=0, metavar='N',
                   help="render N frames of the dataset's config to a scratch directory and report frames/s")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser('grasp-check', parents=[common], help="contact and penetration report for a grasp")
    p.add_argument('grasp', help="grasp pose file (.json or .mat)")
    p.add_argument('--rig', default=None, help="rig JSON (default: built-in capsule rig)")
    p.add_argument('--probe', default=None, help="probe OBJ (default: built-in probe)")
    p.add_argument('--z-offset', type=float, default=None, help="probe z offset in meters")
    p.add_argument('--threshold', type=float, default=DEFAULT_CONTACT_THRESHOLD, help="contact threshold in meters")
    p.add_argument('--convert', default=None, metavar='OUT_JSON', help="also write the grasp as JSON")
    p.set_defaults(handler=cmd_grasp_check)
    return parser


def run(argv=None):
    """Parse argv, dispatch the subcommand and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    if getattr(args, 'jobs', 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE

    try:
        return args.handler(args)
    except EvaluationError as e:
        print(f"error: {str(e)}", file=sys.stderr)
        return EXIT_VALIDATION
    except ASSET_ERRORS as e:
        print(f"error: {str(e)}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {str(e)}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:
        logging.error(f"Unhandled exception: {str(e)}\n{traceback.format_exc()}")
        print(f"error: {str(e)}", file=sys.stderr)
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(run(sys.argv[1:]))
