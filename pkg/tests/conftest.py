import os
import json

import numpy as np
import pytest

from assets.grasp import GraspPose

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
GRASP_DIR = os.path.join(REPO_ROOT, 'assets', 'data', 'grasps')

CUBE_OBJ = """\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


@pytest.fixture
def cube_obj(tmp_path):
    path = tmp_path / 'cube.obj'
    path.write_text(CUBE_OBJ)
    return str(path)


def flat_pose(grasp_id='flat', translation=(0.0, 0.0, 0.0), euler=(0.0, 0.0, 0.0), joints=21):
    return GraspPose(grasp_id, translation, np.zeros((joints, 3)), euler)


def grasp_path(name):
    return os.path.join(GRASP_DIR, f"{name}.json")


def write_config(directory, grasps=('grasp_00', 'grasp_09'), splits=('train', 'test'), size=32,
                 viewpoints=((60.0, 0.0), (120.0, 180.0)), distances=(0.5, 0.8), gloves=2, seed=7,
                 **render):
    """Toy generation config in `directory`; returns its path."""
    data = {
        'format_version': 'graspsphere.config/1',
        'grasp_files': [grasp_path(g) for g in grasps],
        'split': dict(zip(grasps, splits)),
        'viewpoints': [{'theta_deg': t, 'phi_deg': p} for t, p in viewpoints],
        'distances': list(distances),
        'backgrounds': [{'color': [1.0, 1.0, 1.0]}],
        'glove_colors': [[0.5647058824, 0.5921568627, 0.768627451],
                         [0.38039215686, 0.61960784314, 0.8666666667]][:gloves],
        'global_seed': seed,
        'render': dict({'image_width': size, 'image_height': size}, **render),
    }
    path = os.path.join(str(directory), 'config.json')
    with open(path, 'w') as f:
        json.dump(data, f, indent=2)
    return path


@pytest.fixture
def toy_config(tmp_path):
    """16-frame config (2 grasps x 2 viewpoints x 2 distances x 2 gloves) at 32x32."""
    return write_config(tmp_path)
