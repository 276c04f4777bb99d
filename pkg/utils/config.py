import os
import json
import logging
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

SETTINGS_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'settings.json')

DEFAULT_RENDER_SETTINGS = {
    'image_width': 256,
    'image_height': 256,
    'vfov_deg': 60.0,
    'ambient': 0.25,
    'shadows': False,
    'aa_samples': 1,
    'aa_seed': 0,
    'depth_sidecar': False,
    'contact_threshold': 0.005,
    'bps_count': 1024,
    'bps_seed': 0,
}


def get_output_dir_override():
    return os.getenv('GRASPSPHERE_OUTPUT_DIR')


def get_default_jobs():
    value = os.getenv('GRASPSPHERE_JOBS', '1')
    try:
        return max(1, int(value))
    except ValueError:
        logging.warning(f"Ignoring non-integer GRASPSPHERE_JOBS value: {value}")
        return 1


def get_log_level():
    return os.getenv('GRASPSPHERE_LOG_LEVEL', 'INFO').upper()


def get_render_settings(settings_path=None):
    """
    Get render defaults from settings.json merged over the built-in defaults.

    Args:
        settings_path: Optional path to a settings file; the repository's
            settings.json is used when omitted

    Returns:
        Dictionary of render settings
    """
    settings = dict(DEFAULT_RENDER_SETTINGS)
    path = settings_path or SETTINGS_PATH
    if not os.path.exists(path):
        logging.info(f"No settings file at {path}, using built-in render defaults")
        return settings

    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        error_msg = f"Error parsing settings file {path}: {str(e)}"
        logging.error(error_msg)
        raise ValueError(error_msg)

    unknown = sorted(set(data) - set(DEFAULT_RENDER_SETTINGS))
    if unknown:
        logging.warning(f"Ignoring unknown settings keys: {', '.join(unknown)}")
    for key in DEFAULT_RENDER_SETTINGS:
        if key in data:
            settings[key] = data[key]
    return settings


def load_json_file(path, what='file'):
    """
    Load a JSON document, raising FileNotFoundError / ValueError with a logged message.
    """
    if not os.path.exists(path):
        error_msg = f"{what} not found: {path}"
        logging.error(error_msg)
        raise FileNotFoundError(error_msg)
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        error_msg = f"Error parsing {what} {path}: {str(e)}"
        logging.error(error_msg)
        raise ValueError(error_msg)
