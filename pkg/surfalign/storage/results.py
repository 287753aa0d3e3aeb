"""
Result tables: CSV files and JSON summaries stamped with the producing config hash.
"""
import os
import json
import logging

import pandas as pd

from surfalign.storage.manifest import sanitize_for_json

logger = logging.getLogger(__name__)

HASH_PREFIX = '# config_hash='


def save_table(df, path, config_hash, float_format='%.10g'):
    """
    Save a DataFrame to CSV behind a ``# config_hash=...`` comment line.

    Args:
        df (pandas.DataFrame): table to save
        path (str): output CSV
        config_hash (str): provenance hash
        float_format (str): printf format for floats

    Returns:
        str: path written
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as f:
        f.write(f"{HASH_PREFIX}{config_hash}\n")
        df.to_csv(f, index=False, float_format=float_format, lineterminator='\n')
    logger.info(f"Saved {len(df)} rows to {path}")
    return path


def load_table(path):
    """
    Load a table written by save_table.

    Returns:
        tuple: (pandas.DataFrame, config hash or None)
    """
    config_hash = None
    with open(path, 'r') as f:
        first = f.readline()
    skip = 0
    if first.startswith(HASH_PREFIX):
        config_hash = first[len(HASH_PREFIX):].strip()
        skip = 1
    df = pd.read_csv(path, skiprows=skip)
    logger.info(f"Loaded {len(df)} rows from {path}")
    return df, config_hash


def save_summary(data, path, config_hash):
    """
    Save a JSON summary with its config hash.

    Returns:
        str: path written
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        json.dump({'config_hash': config_hash, **sanitize_for_json(data)}, f, indent=2, sort_keys=True)
    logger.info(f"Saved summary to {path}")
    return path
