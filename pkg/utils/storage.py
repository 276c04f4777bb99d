import json
import os
import logging

import cv2
import numpy as np

PNG_PARAMS = [cv2.IMWRITE_PNG_COMPRESSION, 3]

PASS_FILES = {
    'rgb': 'rgb.png',
    'depth': 'depth.png',
    'depth_hand': 'depth_hand.png',
    'depth_probe': 'depth_probe.png',
    'rgb_no_hand': 'rgb_no_hand.png',
    'rgb_no_probe': 'rgb_no_probe.png',
    'segmentation': 'segmentation.png',
    'rgb_gt_overlay': 'rgb_gt_overlay.png',
}
COLOR_PASSES = ('rgb', 'rgb_no_hand', 'rgb_no_probe', 'rgb_gt_overlay')
SIDECAR_PASSES = ('depth', 'depth_hand', 'depth_probe')

ANNOTATION_FILE = 'annotation.json'
MANIFEST_FILE = 'manifest.json'
FRAMES_DIR = 'frames'


def frame_dir_name(frame_index):
    return f"frame_{frame_index:06d}"


def write_png(path, image, is_color):
    """Write an RGB (is_color) or single-channel image as PNG with fixed compression."""
    if is_color:
        image = cv2.cvtColor(np.ascontiguousarray(image), cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(path, image, PNG_PARAMS):
        error_msg = f"Failed to write image {path}"
        logging.error(error_msg)
        raise OSError(error_msg)


class DatasetStorage:
    """
    On-disk dataset layout:

        <base_dir>/manifest.json
        <base_dir>/frames/frame_000000/{rgb,depth,...}.png + annotation.json

    JSON is written with sorted keys and no timestamps so reruns are byte-identical.
    """

    def __init__(self, base_dir='dataset', create=True):
        self.base_dir = base_dir
        if create:
            os.makedirs(os.path.join(base_dir, FRAMES_DIR), exist_ok=True)

    def frame_path(self, frame_index, filename=''):
        return os.path.join(self.base_dir, FRAMES_DIR, frame_dir_name(frame_index), filename)

    def frame_files(self, frame_index, depth_sidecar=False):
        """Relative paths of a frame's files, keyed by pass name plus 'annotation'."""
        relative = f"{FRAMES_DIR}/{frame_dir_name(frame_index)}"
        files = {name: f"{relative}/{filename}" for name, filename in PASS_FILES.items()}
        files['annotation'] = f"{relative}/{ANNOTATION_FILE}"
        if depth_sidecar:
            for name in SIDECAR_PASSES:
                files[f"{name}_raw"] = f"{relative}/{name}.npy"
        return files

    def create_frame(self, frame_index):
        path = self.frame_path(frame_index)
        os.makedirs(path, exist_ok=True)
        return path

    def list_frames(self):
        frames_dir = os.path.join(self.base_dir, FRAMES_DIR)
        if not os.path.isdir(frames_dir):
            return []
        indices = []
        for name in os.listdir(frames_dir):
            if name.startswith('frame_') and name[6:].isdigit():
                indices.append(int(name[6:]))
        return sorted(indices)

    def save_frameset(self, frame_index, frames, depth_sidecar=False):
        """Write every pass of a FrameSet as PNG (and float depth .npy sidecars when asked)."""
        self.create_frame(frame_index)
        for name, image in frames.quantized().items():
            write_png(self.frame_path(frame_index, PASS_FILES[name]), image, name in COLOR_PASSES)
        if depth_sidecar:
            for name in SIDECAR_PASSES:
                np.save(self.frame_path(frame_index, f"{name}.npy"), getattr(frames, name).astype(np.float32))

    def get_image(self, frame_index, pass_name):
        """Read one pass back; color passes are returned RGB. None when the file is missing."""
        path = self.frame_path(frame_index, PASS_FILES[pass_name])
        if not os.path.exists(path):
            return None
        image = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        if image is None:
            error_msg = f"Could not decode image {path}"
            logging.error(error_msg)
            raise ValueError(error_msg)
        if pass_name in COLOR_PASSES:
            image = cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
        return image

    def save_annotation(self, frame_index, annotation):
        self.create_frame(frame_index)
        self._save_json(self.frame_path(frame_index, ANNOTATION_FILE), annotation)

    def get_annotation(self, frame_index):
        return self._load_json(self.frame_path(frame_index, ANNOTATION_FILE))

    def save_manifest(self, manifest):
        self._save_json(os.path.join(self.base_dir, MANIFEST_FILE), manifest)
        logging.info(f"Wrote manifest to {os.path.join(self.base_dir, MANIFEST_FILE)}")

    def get_manifest(self):
        return self._load_json(os.path.join(self.base_dir, MANIFEST_FILE))

    def remove_manifest(self):
        """Drop a stale manifest so an interrupted run is recognisable as incomplete."""
        path = os.path.join(self.base_dir, MANIFEST_FILE)
        if os.path.exists(path):
            os.remove(path)

    def _save_json(self, filepath, data):
        with open(filepath, 'w') as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write('\n')

    def _load_json(self, filepath):
        try:
            with open(filepath, 'r') as f:
                return json.load(f)
        except FileNotFoundError:
            return None
