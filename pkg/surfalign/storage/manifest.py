"""
Run manifest: the index of every artifact written into a run directory.
"""
import os
import sys
import json
import logging
import threading
from datetime import datetime

import numpy as np
import pandas as pd

# Add the project root to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..')))
from config import MANIFEST_NAME, RESOLVED_CONFIG_NAME

logger = logging.getLogger(__name__)


def sanitize_for_json(data):
    """
    Sanitize data for JSON serialization, handling NaN values and numpy types.

    Args:
        data: Data to sanitize

    Returns:
        Sanitized data that can be JSON serialized
    """
    if data is None:
        return None
    elif isinstance(data, bool):
        return data
    elif isinstance(data, (int, np.integer)):
        return int(data)
    elif isinstance(data, (float, np.floating)):
        value = float(data)
        return value if np.isfinite(value) else None
    elif isinstance(data, str):
        return data
    elif isinstance(data, datetime):
        return data.isoformat()
    elif isinstance(data, pd.DataFrame):
        return [sanitize_for_json(record) for record in data.to_dict(orient='records')]
    elif isinstance(data, (pd.Series, np.ndarray)):
        return [sanitize_for_json(item) for item in data.tolist()]
    elif isinstance(data, dict):
        return {str(k): sanitize_for_json(v) for k, v in data.items()}
    elif isinstance(data, (list, tuple)):
        return [sanitize_for_json(item) for item in data]
    elif hasattr(data, 'value'):
        return sanitize_for_json(data.value)
    return str(data)


class RunManifest:
    """
    JSON index of a run directory: artifacts, commands and their config hashes.
    """

    def __init__(self, run_dir):
        self.run_dir = run_dir
        self._path = os.path.join(run_dir, MANIFEST_NAME)
        self._lock = threading.RLock()
        self._artifacts = {}
        self._commands = []
        os.makedirs(run_dir, exist_ok=True)
        self._load()

    @property
    def path(self):
        return self._path

    def _load(self):
        if not os.path.exists(self._path):
            return
        try:
            with open(self._path, 'r') as f:
                data = json.load(f)
            self._artifacts = data.get('artifacts', {})
            self._commands = data.get('commands', [])
            logger.info(f"Loaded manifest from {self._path}")
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error loading manifest {self._path}: {str(e)}")

    def _save(self):
        payload = {'artifacts': self._artifacts, 'commands': self._commands}
        with open(self._path, 'w') as f:
            json.dump(sanitize_for_json(payload), f, indent=2, sort_keys=True)
        logger.debug(f"Saved manifest to {self._path}")

    def record_command(self, command, config_hash, **params):
        """
        Append a command invocation.

        Args:
            command (str): subcommand name
            config_hash (str): resolved config hash
            **params: command parameters worth keeping
        """
        with self._lock:
            self._commands.append({
                'command': command,
                'config_hash': config_hash,
                'started': datetime.now().isoformat(timespec='seconds'),
                'params': sanitize_for_json(params),
            })
            self._save()

    def add_artifact(self, name, path, config_hash, kind=None, **extra):
        """
        Register a written file under ``name``.

        Args:
            name (str): artifact key
            path (str): file path (stored relative to the run directory)
            config_hash (str): hash of the config that produced it
            kind (str, optional): artifact type, e.g. 'checkpoint', 'table'
        """
        with self._lock:
            self._artifacts[name] = {
                'path': os.path.relpath(path, self.run_dir),
                'config_hash': config_hash,
                'kind': kind,
                **sanitize_for_json(extra),
            }
            self._save()

    def get(self, name):
        with self._lock:
            return self._artifacts.get(name)

    def artifact_path(self, name):
        entry = self.get(name)
        return None if entry is None else os.path.join(self.run_dir, entry['path'])

    def artifacts(self):
        with self._lock:
            return dict(self._artifacts)

    @property
    def commands(self):
        with self._lock:
            return list(self._commands)


def write_resolved_config(run_dir, config, config_hash):
    """
    Echo the fully resolved config into the run directory.

    Returns:
        str: path written
    """
    path = os.path.join(run_dir, RESOLVED_CONFIG_NAME)
    os.makedirs(run_dir, exist_ok=True)
    with open(path, 'w') as f:
        json.dump({'config_hash': config_hash, 'config': config.model_dump(mode='json')}, f,
                  indent=2, sort_keys=True)
    logger.info(f"Saved resolved config to {path}")
    return path
