import os
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from core.pipeline import DatasetManifest, SPLITS
from core.scene import AnnotationRecord, reproject
from utils.config import load_json_file
from utils.storage import PASS_FILES, DatasetStorage

PREDICTIONS_FORMAT_VERSION = 'graspsphere.predictions/1'

HAND_KEYPOINTS = 21
OBJECT_KEYPOINTS = 8
SEGMENTATION_LABELS = (0, 1, 2, 3)
PROJECTION_TOLERANCE_PX = 1e-6
DEFAULT_DEPTH_SAMPLE = 8


class EvaluationError(ValueError):
    pass


def mpjpe(pred, gt):
    """Mean Euclidean distance between matching keypoints, meters in, millimeters out."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        error_msg = f"Keypoint shapes must match as (N, 3), got {pred.shape} and {gt.shape}"
        logging.error(error_msg)
        raise EvaluationError(error_msg)
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)) * 1000.0)


def mean_pixel_error(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise EvaluationError(f"2D keypoint shapes differ: {pred.shape} vs {gt.shape}")
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


@dataclass(eq=False)
class FramePrediction:
    frame_index: int
    hand_joints_3d: np.ndarray
    object_corners_3d: np.ndarray
    hand_joints_2d: Optional[np.ndarray] = None
    object_corners_2d: Optional[np.ndarray] = None

    def __post_init__(self):
        self.hand_joints_3d = np.asarray(self.hand_joints_3d, dtype=np.float64)
        self.object_corners_3d = np.asarray(self.object_corners_3d, dtype=np.float64)
        if self.hand_joints_3d.shape != (HAND_KEYPOINTS, 3):
            raise EvaluationError(f"Frame {self.frame_index}: hand_joints_3d has shape "
                                  f"{self.hand_joints_3d.shape}, expected ({HAND_KEYPOINTS}, 3)")
        if self.object_corners_3d.shape != (OBJECT_KEYPOINTS, 3):
            raise EvaluationError(f"Frame {self.frame_index}: object_corners_3d has shape "
                                  f"{self.object_corners_3d.shape}, expected ({OBJECT_KEYPOINTS}, 3)")
        for name, count in (('hand_joints_2d', HAND_KEYPOINTS), ('object_corners_2d', OBJECT_KEYPOINTS)):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=np.float64)
                if value.shape != (count, 2):
                    raise EvaluationError(f"Frame {self.frame_index}: {name} has shape {value.shape}, "
                                          f"expected ({count}, 2)")
                setattr(self, name, value)

    @property
    def has_2d(self):
        return self.hand_joints_2d is not None and self.object_corners_2d is not None

    def to_dict(self):
        data = {
            'frame_index': self.frame_index,
            'hand_joints_3d': self.hand_joints_3d.tolist(),
            'object_corners_3d': self.object_corners_3d.tolist(),
        }
        if self.has_2d:
            data['hand_joints_2d'] = self.hand_joints_2d.tolist()
            data['object_corners_2d'] = self.object_corners_2d.tolist()
        return data


@dataclass
class PredictionSet:
    frames: Dict[int, FramePrediction] = field(default_factory=dict)

    def add(self, prediction: FramePrediction):
        if prediction.frame_index in self.frames:
            raise EvaluationError(f"Duplicate prediction for frame {prediction.frame_index}")
        self.frames[prediction.frame_index] = prediction

    def to_dict(self):
        return {
            'format_version': PREDICTIONS_FORMAT_VERSION,
            'frames': [self.frames[i].to_dict() for i in sorted(self.frames)],
        }


def load_predictions(path) -> PredictionSet:
    data = load_json_file(path, 'Prediction file')
    if data.get('format_version') != PREDICTIONS_FORMAT_VERSION:
        error_msg = (f"Prediction file {path} has format {data.get('format_version')!r}, "
                     f"expected {PREDICTIONS_FORMAT_VERSION!r}")
        logging.error(error_msg)
        raise EvaluationError(error_msg)
    predictions = PredictionSet()
    try:
        for entry in data['frames']:
            predictions.add(FramePrediction(int(entry['frame_index']), entry['hand_joints_3d'],
                                            entry['object_corners_3d'], entry.get('hand_joints_2d'),
                                            entry.get('object_corners_2d')))
    except (KeyError, TypeError) as e:
        error_msg = f"Prediction file {path} has malformed entries: {str(e)}"
        logging.error(error_msg)
        raise EvaluationError(error_msg)
    return predictions


def save_predictions(predictions: PredictionSet, path):
    with open(path, 'w') as f:
        json.dump(predictions.to_dict(), f, indent=2, sort_keys=True)


def _load_manifest(dataset_dir):
    storage = DatasetStorage(dataset_dir, create=False)
    data = storage.get_manifest()
    if data is None:
        error_msg = f"No manifest in {dataset_dir}; the dataset is missing or incomplete"
        logging.error(error_msg)
        raise FileNotFoundError(error_msg)
    return storage, DatasetManifest.from_dict(data)


def _load_annotation(storage, index) -> AnnotationRecord:
    annotation = storage.get_annotation(index)
    if annotation is None:
        error_msg = f"Annotation for frame {index} is missing from {storage.base_dir}"
        logging.error(error_msg)
        raise EvaluationError(error_msg)
    return AnnotationRecord.from_dict(annotation)


def ground_truth_predictions(dataset_dir, split=None) -> PredictionSet:
    """Predictions copied from the stored annotations (a perfect predictor)."""
    storage, manifest = _load_manifest(dataset_dir)
    indices = manifest.splits[split] if split else range(manifest.frame_count)
    predictions = PredictionSet()
    for index in indices:
        record = _load_annotation(storage, index)
        predictions.add(FramePrediction(index, record.hand_joints_3d, record.object_corners_3d,
                                        record.hand_joints_2d, record.object_corners_2d))
    return predictions


@dataclass
class MetricsReport:
    """
    Errors in millimeters. Per frame, total pools all 29 keypoints; the
    dataset values are means over frames in frame-index order.
    """
    split: str
    frame_count: int
    mpjpe_total_mm: float
    mpjpe_hand_mm: float
    mpjpe_object_mm: float
    per_frame: List[Dict]
    hand_2d_px: Optional[float] = None
    object_2d_px: Optional[float] = None

    def to_dict(self):
        return {
            'split': self.split,
            'frame_count': self.frame_count,
            'mpjpe_total_mm': self.mpjpe_total_mm,
            'mpjpe_hand_mm': self.mpjpe_hand_mm,
            'mpjpe_object_mm': self.mpjpe_object_mm,
            'hand_2d_px': self.hand_2d_px,
            'object_2d_px': self.object_2d_px,
        }

    def to_markdown(self):
        markdown_output = f"\n## MPJPE ({self.split}, {self.frame_count} frames)\n\n"
        markdown_output += "| Hand (mm) | Object (mm) | Total (mm) |\n"
        markdown_output += "|-----------|-------------|------------|\n"
        markdown_output += f"| {self.mpjpe_hand_mm:.2f} | {self.mpjpe_object_mm:.2f} | {self.mpjpe_total_mm:.2f} |\n"
        if self.hand_2d_px is not None:
            markdown_output += f"\n2D error: hand {self.hand_2d_px:.2f} px, object {self.object_2d_px:.2f} px\n"
        return markdown_output


class EvaluationHandler:
    """Keypoint metrics and integrity checks over a generated dataset directory."""

    def __init__(self, dataset_dir):
        self.dataset_dir = dataset_dir
        self.storage, self.manifest = _load_manifest(dataset_dir)

    def evaluate(self, predictions: PredictionSet, split='test') -> MetricsReport:
        if split not in self.manifest.splits:
            raise EvaluationError(f"Unknown split '{split}', expected one of {sorted(self.manifest.splits)}")
        unknown = sorted(set(predictions.frames) - set(range(self.manifest.frame_count)))
        if unknown:
            error_msg = f"Predictions reference frames not in the dataset: {unknown[:10]}"
            logging.error(error_msg)
            raise EvaluationError(error_msg)

        indices = sorted(self.manifest.splits[split])
        missing = [i for i in indices if i not in predictions.frames]
        if missing:
            error_msg = f"Missing predictions for frame {missing[0]}" + \
                        (f" and {len(missing) - 1} more" if len(missing) > 1 else "")
            logging.error(error_msg)
            raise EvaluationError(error_msg)
        if not indices:
            raise EvaluationError(f"Split '{split}' has no frames")

        per_frame = []
        use_2d = all(predictions.frames[i].has_2d for i in indices)
        for index in indices:
            record = _load_annotation(self.storage, index)
            pred = predictions.frames[index]
            row = {
                'frame_index': index,
                'hand_mm': mpjpe(pred.hand_joints_3d, record.hand_joints_3d),
                'object_mm': mpjpe(pred.object_corners_3d, record.object_corners_3d),
                'total_mm': mpjpe(np.concatenate([pred.hand_joints_3d, pred.object_corners_3d]),
                                  np.concatenate([record.hand_joints_3d, record.object_corners_3d])),
            }
            if use_2d:
                row['hand_px'] = mean_pixel_error(pred.hand_joints_2d, record.hand_joints_2d)
                row['object_px'] = mean_pixel_error(pred.object_corners_2d, record.object_corners_2d)
            per_frame.append(row)

        def mean_of(key):
            return float(np.mean([row[key] for row in per_frame]))

        report = MetricsReport(split, len(per_frame), mean_of('total_mm'), mean_of('hand_mm'), mean_of('object_mm'),
                               per_frame, mean_of('hand_px') if use_2d else None,
                               mean_of('object_px') if use_2d else None)
        logging.info(f"Evaluated {report.frame_count} {split} frames: total {report.mpjpe_total_mm:.3f} mm")
        return report

    def validate(self, depth_sample=DEFAULT_DEPTH_SAMPLE, show_progress=False):
        return validate_dataset(self.dataset_dir, depth_sample, show_progress)

    def stats(self):
        return dataset_stats(self.dataset_dir)


def evaluate(predictions: PredictionSet, dataset_dir, split='test') -> MetricsReport:
    return EvaluationHandler(dataset_dir).evaluate(predictions, split)


@dataclass
class ValidationIssue:
    check: str
    message: str
    frame_index: Optional[int] = None

    def to_dict(self):
        return {'check': self.check, 'frame_index': self.frame_index, 'message': self.message}


@dataclass
class ValidationReport:
    frame_count: int
    issues: List[ValidationIssue] = field(default_factory=list)
    checks_run: List[str] = field(default_factory=list)

    @property
    def passed(self):
        return not self.issues

    def fail(self, check, message, frame_index=None):
        self.issues.append(ValidationIssue(check, message, frame_index))

    def to_dict(self):
        return {
            'passed': self.passed,
            'frame_count': self.frame_count,
            'checks': self.checks_run,
            'issues': [issue.to_dict() for issue in self.issues],
        }


def _sample_frames(count, sample):
    if sample <= 0 or count == 0:
        return set()
    if sample >= count:
        return set(range(count))
    return set(int(i) for i in np.linspace(0, count - 1, sample).round())


def _check_depth_consistency(report, index, images):
    depth = images['depth'].astype(np.int64)
    seg = images['segmentation']
    hand = images['depth_hand'].astype(np.int64)
    probe = images['depth_probe'].astype(np.int64)
    if np.any((seg == 0) != (depth == 0)):
        report.fail('depth_segmentation', "background pixels disagree between depth and segmentation", index)
    if np.any((seg == 1) & (depth != hand)):
        report.fail('depth_segmentation', "hand-labelled pixels whose depth is not the hand depth", index)
    if np.any((seg == 3) & (depth != probe)):
        report.fail('depth_segmentation', "probe-labelled pixels whose depth is not the probe depth", index)
    for name, single in (('depth_hand', hand), ('depth_probe', probe)):
        if np.any((single > 0) & ((depth == 0) | (depth > single))):
            report.fail('depth_segmentation', f"depth exceeds {name} where that object is hit", index)


def _check_projection(report, index, record: AnnotationRecord):
    behind = set(record.behind_camera)
    for prefix, points_3d, points_2d in (('hand', record.hand_joints_3d, record.hand_joints_2d),
                                         ('corner', record.object_corners_3d, record.object_corners_2d)):
        front = points_3d[:, 2] > 0
        flagged = {f"{prefix}_{i}" for i in np.flatnonzero(~front)}
        if flagged != {name for name in behind if name.startswith(prefix)}:
            report.fail('projection', f"{prefix} behind-camera flags do not match stored depths", index)
        if not np.any(front):
            continue
        error = np.abs(reproject(record.intrinsics, points_3d[front]) - points_2d[front])
        if np.max(error) > PROJECTION_TOLERANCE_PX:
            worst = int(np.flatnonzero(front)[np.argmax(error.max(axis=1))])
            report.fail('projection', f"{prefix} keypoint {worst} reprojects {np.max(error):.3g} px "
                                      f"away from its stored 2D point", index)


def validate_dataset(dataset_dir, depth_sample=DEFAULT_DEPTH_SAMPLE, show_progress=False) -> ValidationReport:
    """
    Integrity checks over a generated dataset: files, image sizes, labels,
    2D/3D projection consistency, sampled depth/segmentation consistency,
    split partition and frame count.
    """
    storage, manifest = _load_manifest(dataset_dir)
    report = ValidationReport(manifest.frame_count)
    report.checks_run = ['frame_count', 'splits', 'files', 'dimensions', 'segmentation_labels',
                         'projection', 'depth_segmentation']

    counts = manifest.factor_counts
    expected = int(np.prod([counts[k] for k in ('grasps', 'viewpoints', 'distances', 'backgrounds', 'glove_colors')]))
    if manifest.frame_count != expected or len(manifest.frames) != expected:
        report.fail('frame_count', f"manifest lists {len(manifest.frames)} frames (count {manifest.frame_count}), "
                                   f"factor product is {expected}")

    seen = []
    for split in SPLITS:
        seen.extend(manifest.splits.get(split, []))
    if len(seen) != len(set(seen)) or sorted(seen) != list(range(manifest.frame_count)):
        report.fail('splits', "split lists do not partition the frame range")
    assignment = manifest.config.get('split', {})
    frame_split = {i: s for s in SPLITS for i in manifest.splits.get(s, [])}
    for entry in manifest.frames:
        wanted = assignment.get(entry['grasp_id'])
        if frame_split.get(entry['frame_index']) != wanted:
            report.fail('splits', f"frame is in split {frame_split.get(entry['frame_index'])!r}, its grasp "
                                  f"'{entry['grasp_id']}' is assigned {wanted!r}", entry['frame_index'])

    sampled = _sample_frames(manifest.frame_count, depth_sample)
    for entry in tqdm(manifest.frames, desc="validate", unit="frame", disable=not show_progress):
        index = entry['frame_index']
        missing = [name for name, rel in entry['files'].items()
                   if not os.path.exists(os.path.join(dataset_dir, rel))]
        for name in missing:
            report.fail('files', f"missing {name} file {entry['files'][name]}", index)

        annotation = storage.get_annotation(index) if 'annotation' not in missing else None
        record = None
        if annotation is not None:
            try:
                record = AnnotationRecord.from_dict(annotation)
            except (KeyError, ValueError, TypeError) as e:
                report.fail('files', f"unreadable annotation: {str(e)}", index)
        if record is not None:
            _check_projection(report, index, record)

        images = {name: storage.get_image(index, name) for name in PASS_FILES if name not in missing}
        shapes = {name: image.shape[:2] for name, image in images.items()}
        if record is not None:
            expected_shape = (int(record.image_size[1]), int(record.image_size[0]))
        else:
            expected_shape = next(iter(shapes.values()), None)
        wrong = sorted(name for name, shape in shapes.items() if shape != expected_shape)
        if wrong:
            report.fail('dimensions', f"passes {', '.join(wrong)} differ from {expected_shape}", index)

        if 'segmentation' in images:
            labels = set(np.unique(images['segmentation']).tolist())
            if not labels <= set(SEGMENTATION_LABELS):
                report.fail('segmentation_labels', f"unexpected labels {sorted(labels - set(SEGMENTATION_LABELS))}",
                            index)

        if index in sampled and not wrong and all(n in images for n in ('depth', 'depth_hand', 'depth_probe',
                                                                         'segmentation')):
            _check_depth_consistency(report, index, images)

    status = "passed" if report.passed else f"failed with {len(report.issues)} issue(s)"
    logging.info(f"Validation of {dataset_dir} {status}")
    return report


def dataset_stats(dataset_dir):
    """Factor counts, frame count and per-split totals from the manifest."""
    _, manifest = _load_manifest(dataset_dir)
    return {
        'frame_count': manifest.frame_count,
        'factor_counts': manifest.factor_counts,
        'split_counts': {name: len(indices) for name, indices in manifest.splits.items()},
        'flagged_frames': len(manifest.flagged_frames),
    }
