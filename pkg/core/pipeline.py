import os
import math
import time
import logging
import itertools
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
from tqdm import tqdm

from assets.grasp import (ARM_COLOR, DEFAULT_Z_OFFSET, GLOVE_COLORS, ProbeModel, build_probe_mesh,
                          load_grasp_pose)
from assets.mesh import load_mesh
from assets.rig import build_capsule_rig, load_rig
from core.renderer import RenderHandler, RenderSettings
from core.scene import SceneAssets, assemble_scene
from core.viewsphere import SphereConfig, generate_viewpoints, viewpoint_from_angles
from utils.config import DEFAULT_RENDER_SETTINGS, get_render_settings, load_json_file
from utils.storage import DatasetStorage

CONFIG_FORMAT_VERSION = 'graspsphere.config/1'
MANIFEST_FORMAT_VERSION = 'graspsphere.manifest/1'

SPLITS = ('train', 'val', 'test')


class FrameGenerationError(RuntimeError):
    def __init__(self, frame_index, message):
        super().__init__(frame_index, message)
        self.frame_index = frame_index
        self.message = message

    def __str__(self):
        return f"Frame {self.frame_index} failed: {self.message}"


BackgroundEntry = Union[str, Tuple[float, float, float]]


@dataclass
class GenerationConfig:
    """
    Parsed generation config. Paths are kept as written; `resolve` turns
    them into paths relative to `base_dir` (the config file's directory).
    """
    grasp_files: List[str]
    split: Dict[str, str]
    distances: List[float] = field(default_factory=lambda: [0.5, 0.8])
    backgrounds: List[BackgroundEntry] = field(default_factory=lambda: [(1.0, 1.0, 1.0)])
    glove_colors: List[Tuple[float, float, float]] = field(default_factory=lambda: [tuple(c) for c in GLOVE_COLORS])
    arm_color: Tuple[float, float, float] = ARM_COLOR
    sphere: SphereConfig = field(default_factory=SphereConfig)
    viewpoints: Optional[List[Tuple[float, float]]] = None
    global_seed: int = 0
    render: Dict = field(default_factory=lambda: dict(DEFAULT_RENDER_SETTINGS))
    output_dir: Optional[str] = None
    rig_file: Optional[str] = None
    probe_file: Optional[str] = None
    probe_z_offset: float = DEFAULT_Z_OFFSET
    base_dir: str = '.'

    def __post_init__(self):
        for name in ('grasp_files', 'distances', 'backgrounds', 'glove_colors'):
            if not getattr(self, name):
                error_msg = f"Generation config needs at least one entry in '{name}'"
                logging.error(error_msg)
                raise ValueError(error_msg)
        if any(not d > 0 for d in self.distances):
            raise ValueError(f"Camera distances must be positive, got {self.distances}")
        unknown = sorted(set(self.split.values()) - set(SPLITS))
        if unknown:
            raise ValueError(f"Unknown split names {unknown}, expected {SPLITS}")
        if self.viewpoints is not None and not self.viewpoints:
            raise ValueError("Explicit viewpoint list is empty")

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    def render_settings(self):
        return RenderSettings.from_settings(self.render)

    def grasp_ids(self):
        """Grasp ids in config order, read from the grasp files."""
        return [load_grasp_pose(self.resolve(p)).grasp_id for p in self.grasp_files]

    def resolve_viewpoints(self):
        if self.viewpoints is not None:
            return [viewpoint_from_angles(i, math.radians(theta), math.radians(phi), self.sphere.r_sph)
                    for i, (theta, phi) in enumerate(self.viewpoints)]
        return generate_viewpoints(self.sphere)

    def to_dict(self):
        """Config snapshot for the manifest; the output directory is left out."""
        return {
            'format_version': CONFIG_FORMAT_VERSION,
            'grasp_files': list(self.grasp_files),
            'split': dict(self.split),
            'distances': list(self.distances),
            'backgrounds': [b if isinstance(b, str) else {'color': list(b)} for b in self.backgrounds],
            'glove_colors': [list(c) for c in self.glove_colors],
            'arm_color': list(self.arm_color),
            'sphere': self.sphere.to_dict(),
            'viewpoints': None if self.viewpoints is None else
            [{'theta_deg': t, 'phi_deg': p} for t, p in self.viewpoints],
            'global_seed': self.global_seed,
            'render': dict(self.render),
            'rig_file': self.rig_file,
            'probe_file': self.probe_file,
            'probe_z_offset': self.probe_z_offset,
            'base_dir': self.base_dir,
        }


def load_generation_config(path, settings_path=None) -> GenerationConfig:
    """Read a generation config JSON file; relative paths resolve against its directory."""
    data = load_json_file(path, 'Generation config')
    cfg = parse_generation_config(data, os.path.dirname(os.path.abspath(path)), settings_path, source=path)
    logging.info(f"Loaded generation config {path}")
    return cfg


def parse_generation_config(data, base_dir, settings_path=None, source='config') -> GenerationConfig:
    """Build a GenerationConfig from its JSON form; render keys override settings.json."""
    if data.get('format_version') != CONFIG_FORMAT_VERSION:
        error_msg = f"Config {source} has format {data.get('format_version')!r}, expected {CONFIG_FORMAT_VERSION!r}"
        logging.error(error_msg)
        raise ValueError(error_msg)

    render = get_render_settings(settings_path)
    unknown = sorted(set(data.get('render', {})) - set(render))
    if unknown:
        logging.warning(f"Ignoring unknown render keys in {source}: {', '.join(unknown)}")
    render.update({k: v for k, v in data.get('render', {}).items() if k in render})

    backgrounds = []
    for entry in data.get('backgrounds', [{'color': [1.0, 1.0, 1.0]}]):
        if isinstance(entry, dict) and 'color' in entry:
            backgrounds.append(tuple(float(c) for c in entry['color']))
        elif isinstance(entry, str):
            backgrounds.append(entry)
        else:
            error_msg = f"Background entry {entry!r} in {source} must be an image path or {{'color': [r, g, b]}}"
            logging.error(error_msg)
            raise ValueError(error_msg)

    sphere_data = data.get('sphere', {})
    viewpoints = data.get('viewpoints')
    try:
        cfg = GenerationConfig(
            grasp_files=list(data['grasp_files']),
            split=dict(data['split']),
            distances=[float(d) for d in data.get('distances', [0.5, 0.8])],
            backgrounds=backgrounds,
            glove_colors=[tuple(float(c) for c in g) for g in data.get('glove_colors', GLOVE_COLORS)],
            arm_color=tuple(float(c) for c in data.get('arm_color', ARM_COLOR)),
            sphere=SphereConfig(
                r_sph=float(sphere_data.get('r_sph', 0.8)),
                r_circ=float(sphere_data.get('r_circ', 0.15)),
                include_poles=bool(sphere_data.get('include_poles', True)),
                excluded_indices=frozenset(sphere_data.get('excluded_indices', [])),
                center=tuple(sphere_data.get('center', (0.0, 0.0, 0.0))),
            ),
            viewpoints=None if viewpoints is None else
            [(float(v['theta_deg']), float(v['phi_deg'])) for v in viewpoints],
            global_seed=int(data.get('global_seed', 0)),
            render=render,
            output_dir=data.get('output_dir'),
            rig_file=data.get('rig_file'),
            probe_file=data.get('probe_file'),
            probe_z_offset=float(data.get('probe_z_offset', DEFAULT_Z_OFFSET)),
            base_dir=base_dir,
        )
    except KeyError as e:
        error_msg = f"Config {source} is missing required field {str(e)}"
        logging.error(error_msg)
        raise ValueError(error_msg)
    return cfg


@dataclass(frozen=True)
class FrameSpec:
    frame_index: int
    grasp_id: str
    viewpoint_index: int
    distance: float
    background_index: int
    glove_index: int
    lighting_seed: int

    def to_dict(self):
        return {
            'frame_index': self.frame_index,
            'grasp_id': self.grasp_id,
            'viewpoint_index': self.viewpoint_index,
            'distance': self.distance,
            'background_index': self.background_index,
            'glove_index': self.glove_index,
            'lighting_seed': self.lighting_seed,
        }


def lighting_seed(global_seed, frame_index):
    """32-bit seed derived from (global_seed, frame_index) only."""
    return int(np.random.SeedSequence([global_seed, frame_index]).generate_state(1, dtype=np.uint32)[0])


def enumerate_frames(cfg: GenerationConfig, grasp_ids: Optional[Sequence[str]] = None,
                     viewpoint_indices: Optional[Sequence[int]] = None) -> List[FrameSpec]:
    """
    Cartesian product of the config's factors, grasp outermost, then
    viewpoint, distance, background and glove innermost.
    """
    grasp_ids = list(grasp_ids) if grasp_ids is not None else cfg.grasp_ids()
    if viewpoint_indices is None:
        viewpoint_indices = [vp.index for vp in cfg.resolve_viewpoints()]
    factors = (grasp_ids, list(viewpoint_indices), list(cfg.distances),
               range(len(cfg.backgrounds)), range(len(cfg.glove_colors)))
    for name, values in zip(('grasps', 'viewpoints', 'distances', 'backgrounds', 'glove_colors'), factors):
        if len(values) == 0:
            error_msg = f"Cannot enumerate frames: factor '{name}' is empty"
            logging.error(error_msg)
            raise ValueError(error_msg)

    specs = []
    for index, (grasp_id, viewpoint, distance, background, glove) in enumerate(itertools.product(*factors)):
        specs.append(FrameSpec(index, grasp_id, int(viewpoint), float(distance), background, glove,
                               lighting_seed(cfg.global_seed, index)))
    return specs


def split_dataset(frames, assignment: Dict[str, str]) -> Dict[str, List[int]]:
    """
    Frame indices per split; a frame follows its grasp. `frames` holds FrameSpecs
    or manifest frame entries (dicts with frame_index and grasp_id).
    """
    splits = {name: [] for name in SPLITS}
    for frame in frames:
        grasp_id = frame['grasp_id'] if isinstance(frame, dict) else frame.grasp_id
        index = frame['frame_index'] if isinstance(frame, dict) else frame.frame_index
        if grasp_id not in assignment:
            error_msg = f"Grasp '{grasp_id}' has no split assignment"
            logging.error(error_msg)
            raise ValueError(error_msg)
        split = assignment[grasp_id]
        if split not in splits:
            error_msg = f"Grasp '{grasp_id}' assigned to unknown split '{split}'"
            logging.error(error_msg)
            raise ValueError(error_msg)
        splits[split].append(index)
    for indices in splits.values():
        indices.sort()
    return splits


@dataclass
class DatasetManifest:
    config: Dict
    frame_count: int
    factor_counts: Dict[str, int]
    splits: Dict[str, List[int]]
    frames: List[Dict]
    flagged_frames: List[int] = field(default_factory=list)
    format_version: str = MANIFEST_FORMAT_VERSION

    def to_dict(self):
        return {
            'format_version': self.format_version,
            'config': self.config,
            'frame_count': self.frame_count,
            'factor_counts': self.factor_counts,
            'splits': self.splits,
            'frames': self.frames,
            'flagged_frames': self.flagged_frames,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get('format_version') != MANIFEST_FORMAT_VERSION:
            raise ValueError(f"Manifest has format {data.get('format_version')!r}, "
                             f"expected {MANIFEST_FORMAT_VERSION!r}")
        return cls(data['config'], int(data['frame_count']), dict(data['factor_counts']),
                   {k: list(v) for k, v in data['splits'].items()}, list(data['frames']),
                   list(data.get('flagged_frames', [])))


def _load_background(cfg, entry, size):
    if not isinstance(entry, str):
        return tuple(entry)
    path = cfg.resolve(entry)
    if not os.path.exists(path):
        error_msg = f"Background image not found: {path}"
        logging.error(error_msg)
        raise FileNotFoundError(error_msg)
    image = cv2.imread(path, cv2.IMREAD_COLOR)
    if image is None:
        error_msg = f"Could not decode background image {path}"
        logging.error(error_msg)
        raise ValueError(error_msg)
    image = cv2.resize(image, size, interpolation=cv2.INTER_AREA)
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0


def load_assets(cfg: GenerationConfig) -> SceneAssets:
    """Load rig, probe, grasps, viewpoints and backgrounds named by the config."""
    settings = cfg.render_settings()
    size = (settings.width, settings.height)
    rig = load_rig(cfg.resolve(cfg.rig_file)) if cfg.rig_file else build_capsule_rig()
    probe_mesh = load_mesh(cfg.resolve(cfg.probe_file), 'probe') if cfg.probe_file else build_probe_mesh()
    probe = ProbeModel(probe_mesh, cfg.probe_z_offset)
    if not probe_mesh.is_watertight():
        logging.warning("Probe mesh is not watertight")

    grasps = {}
    for path in cfg.grasp_files:
        pose = load_grasp_pose(cfg.resolve(path))
        if pose.grasp_id in grasps:
            error_msg = f"Duplicate grasp id '{pose.grasp_id}' in {path}"
            logging.error(error_msg)
            raise ValueError(error_msg)
        grasps[pose.grasp_id] = pose

    missing = sorted(set(grasps) - set(cfg.split))
    extra = sorted(set(cfg.split) - set(grasps))
    if missing or extra:
        error_msg = f"Split assignment must cover every grasp exactly once (unassigned: {missing}, unknown: {extra})"
        logging.error(error_msg)
        raise ValueError(error_msg)

    viewpoints = {vp.index: vp for vp in cfg.resolve_viewpoints()}
    backgrounds = tuple(_load_background(cfg, entry, size) for entry in cfg.backgrounds)
    return SceneAssets(rig, probe, grasps, viewpoints, backgrounds, tuple(tuple(c) for c in cfg.glove_colors),
                       tuple(cfg.arm_color), size, settings.vfov_deg, float(cfg.render['ambient']),
                       cfg.sphere.center)


# Per-process state, filled by the pool initializer.
_WORKER = {}


def _init_worker(cfg, output_dir, assets=None, single_thread=True):
    if single_thread:
        import numba
        numba.set_num_threads(1)
    _WORKER['cfg'] = cfg
    _WORKER['assets'] = assets if assets is not None else load_assets(cfg)
    _WORKER['storage'] = DatasetStorage(output_dir)
    _WORKER['renderer'] = RenderHandler(cfg.render_settings())


def _render_frame(spec: FrameSpec):
    """Render and store one frame; returns its index and behind-camera flag."""
    try:
        cfg, storage = _WORKER['cfg'], _WORKER['storage']
        scene, camera, record = assemble_scene(spec, _WORKER['assets'])
        frames = _WORKER['renderer'].render_frameset(scene, camera, record)
        storage.save_frameset(spec.frame_index, frames, bool(cfg.render['depth_sidecar']))
        storage.save_annotation(spec.frame_index, record.to_dict())
        return spec.frame_index, bool(record.behind_camera)
    except FrameGenerationError:
        raise
    except Exception as e:
        logging.error(f"Error rendering frame {spec.frame_index}: {str(e)}")
        raise FrameGenerationError(spec.frame_index, f"{type(e).__name__}: {str(e)}") from e


class DatasetHandler:
    """Renders a generation config into a dataset directory."""

    def __init__(self, cfg: GenerationConfig, output_dir=None):
        self.cfg = cfg
        self.output_dir = output_dir or cfg.output_dir
        if not self.output_dir:
            error_msg = "No output directory given (use --out, GRASPSPHERE_OUTPUT_DIR or the config's output_dir)"
            logging.error(error_msg)
            raise ValueError(error_msg)

    def build_manifest(self, specs, assets, flagged):
        storage = DatasetStorage(self.output_dir, create=False)
        depth_sidecar = bool(self.cfg.render['depth_sidecar'])
        frames = []
        for spec in specs:
            entry = spec.to_dict()
            entry['files'] = storage.frame_files(spec.frame_index, depth_sidecar)
            frames.append(entry)
        factor_counts = {
            'grasps': len(assets.grasps),
            'viewpoints': len(assets.viewpoints),
            'distances': len(self.cfg.distances),
            'backgrounds': len(self.cfg.backgrounds),
            'glove_colors': len(self.cfg.glove_colors),
        }
        return DatasetManifest(self.cfg.to_dict(), len(specs), factor_counts,
                               split_dataset(specs, self.cfg.split), frames, sorted(flagged))

    def generate(self, jobs=1, frame_indices=None, show_progress=True) -> Optional[DatasetManifest]:
        """
        Render every frame (or only `frame_indices`) with `jobs` worker processes.

        The manifest is written last and only for full runs; a directory
        without a manifest is an incomplete dataset.
        """
        jobs = max(1, int(jobs))
        assets = load_assets(self.cfg)
        specs = enumerate_frames(self.cfg, list(assets.grasps), sorted(assets.viewpoints))
        full_run = frame_indices is None
        if full_run:
            todo = specs
        else:
            wanted = set(int(i) for i in frame_indices)
            bad = sorted(i for i in wanted if not 0 <= i < len(specs))
            if bad:
                error_msg = f"Frame indices {bad} outside 0..{len(specs) - 1}"
                logging.error(error_msg)
                raise ValueError(error_msg)
            todo = [spec for spec in specs if spec.frame_index in wanted]

        storage = DatasetStorage(self.output_dir)
        if full_run:
            storage.remove_manifest()
        logging.info(f"Rendering {len(todo)} of {len(specs)} frames to {self.output_dir} with {jobs} worker(s)")

        flagged = []
        progress = tqdm(total=len(todo), desc="frames", unit="frame", disable=not show_progress)
        if jobs == 1:
            _init_worker(self.cfg, self.output_dir, assets, single_thread=False)
            for spec in todo:
                index, behind = _render_frame(spec)
                if behind:
                    flagged.append(index)
                progress.update(1)
        else:
            context = multiprocessing.get_context('spawn')
            with ProcessPoolExecutor(max_workers=jobs, mp_context=context, initializer=_init_worker,
                                     initargs=(self.cfg, self.output_dir)) as executor:
                chunksize = max(1, len(todo) // (jobs * 8))
                for index, behind in executor.map(_render_frame, todo, chunksize=chunksize):
                    if behind:
                        flagged.append(index)
                    progress.update(1)
        progress.close()

        if not full_run:
            return None
        manifest = self.build_manifest(specs, assets, flagged)
        storage.save_manifest(manifest.to_dict())
        logging.info(f"Generated {manifest.frame_count} frames; splits "
                     + ", ".join(f"{k}={len(v)}" for k, v in manifest.splits.items()))
        return manifest


def generate_dataset(cfg: GenerationConfig, jobs=1, output_dir=None, frame_indices=None, show_progress=True):
    return DatasetHandler(cfg, output_dir).generate(jobs, frame_indices, show_progress)


def benchmark(cfg: GenerationConfig, frame_count, scratch_dir):
    """Render the first `frame_count` frames into scratch_dir; returns frames per second."""
    handler = DatasetHandler(cfg, scratch_dir)
    count = min(frame_count, len(enumerate_frames(cfg)))
    start = time.perf_counter()
    handler.generate(jobs=1, frame_indices=range(count), show_progress=False)
    elapsed = time.perf_counter() - start
    return count, elapsed, count / elapsed if elapsed > 0 else float('inf')
