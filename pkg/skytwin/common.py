"""Module of commonly used helpers shared by the skytwin modules: vectors, seeding, unit
conversion, file paths and CSV/JSON writers.
"""

import hashlib
import json
import os
import numpy as np
import pandas as pd
from typing import Dict, List, NamedTuple, Optional, Sequence, Union


class Vec3(NamedTuple):
    """A point or displacement in the mission area, in meters."""

    x: float
    y: float
    z: float

    def array(self) -> np.ndarray:
        """Returns the vector as a float64 numpy array."""
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def ground(self) -> "Vec3":
        """Returns the projection of the point onto the ground plane (z = 0)."""
        return Vec3(self.x, self.y, 0.0)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Vec3":
        """Creates a Vec3 from any length-3 sequence."""
        if len(values) != 3:
            raise ValueError("A Vec3 requires exactly three components.")
        return cls(float(values[0]), float(values[1]), float(values[2]))


def distance(p0: Sequence[float], p1: Sequence[float]) -> float:
    """Euclidean distance between two 3-D points."""
    return float(np.linalg.norm(np.asarray(p0, dtype=float) - np.asarray(p1, dtype=float)))


def ground_distance(p0: Sequence[float], p1: Sequence[float]) -> float:
    """Horizontal (x, y) distance between two points."""
    return float(np.hypot(p0[0] - p1[0], p0[1] - p1[1]))


def dbm_to_watt(p_dbm: float) -> float:
    """Converts a power from dBm to watts.

    Args:
        p_dbm (float): The power in dBm.

    Returns:
        float: The power in watts, 10^((p_dBm - 30) / 10).
    """
    return float(10.0 ** ((p_dbm - 30.0) / 10.0))


def db_to_linear(value_db: float) -> float:
    """Converts a power ratio from dB to a linear factor."""
    return float(10.0 ** (value_db / 10.0))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Creates an independent random stream derived from a master seed.

    Each distinct tuple of keys yields a statistically independent stream, so every simulated
    entity (world generation, fading, exploration noise, replay sampling, ...) owns its own
    generator and parallel runs never share state.

    Args:
        seed (int): The master seed.
        *keys (int): Spawn keys identifying the stream.

    Returns:
        numpy.random.Generator: A PCG64 generator.
    """
    if seed is None:
        raise ValueError("A master seed is required for reproducible runs.")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(sequence)


def derive_seed(seed: int, *keys: int) -> int:
    """Derives a child integer seed, e.g. for episode layouts or sweep points."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def check_dir(dir_path: str, make_dirs: Optional[bool] = True) -> str:
    """Checks if a directory exists and creates it if it does not.

    Args:
        dir_path (str): The path to the directory.
        make_dirs (bool, optional): Whether to create the directory if it does not exist. Defaults to True.

    Raises:
        FileNotFoundError: If the directory could not be found.
        TypeError: If the input directory path is not a string.

    Returns:
        str: The path to the directory.
    """
    if isinstance(dir_path, os.PathLike):
        dir_path = os.fspath(dir_path)
    if not isinstance(dir_path, str):
        raise TypeError("The provided directory path must be a string.")

    dir_path = os.path.abspath(os.path.expanduser(dir_path))
    if not os.path.exists(dir_path) and make_dirs:
        os.makedirs(dir_path)

    if os.path.exists(dir_path):
        return dir_path
    raise FileNotFoundError(f"The provided directory could not be found: {dir_path}")


def check_file_path(file_path: str, make_dirs: Optional[bool] = True) -> str:
    """Gets the absolute file path and creates the parent directory if needed.

    Args:
        file_path (str): The path to the file.
        make_dirs (bool, optional): Whether to create the directory if it does not exist. Defaults to True.

    Raises:
        TypeError: If the input file path is not a string.

    Returns:
        str: The absolute path to the file.
    """
    if isinstance(file_path, os.PathLike):
        file_path = os.fspath(file_path)
    if not isinstance(file_path, str):
        raise TypeError("The provided file path must be a string.")

    file_path = os.path.abspath(os.path.expanduser(file_path))
    file_dir = os.path.dirname(file_path)
    if not os.path.exists(file_dir) and make_dirs:
        os.makedirs(file_dir)
    return file_path


def dict_to_json(data: Dict, file_path: str, indent: Optional[int] = 2) -> str:
    """Writes a dictionary to a JSON file with sorted keys.

    Args:
        data (dict): A dictionary.
        file_path (str): The path to the JSON file.
        indent (int, optional): The indentation of the JSON file. Defaults to 2.

    Raises:
        TypeError: If the input data is not a dictionary.

    Returns:
        str: The absolute path of the written file.
    """
    if not isinstance(data, dict):
        raise TypeError("The provided data must be a dictionary.")

    file_path = check_file_path(file_path)
    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=indent, sort_keys=True)
        f.write("\n")
    return file_path


def json_to_dict(file_path: str) -> Dict:
    """Reads a JSON file into a dictionary.

    Args:
        file_path (str): The path to the JSON file.

    Raises:
        FileNotFoundError: If the file does not exist.

    Returns:
        dict: The parsed document.
    """
    file_path = os.path.abspath(os.path.expanduser(file_path))
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"{file_path} does not exist.")
    with open(file_path, "r", encoding="utf-8") as f:
        return json.load(f)


def config_hash(cfg: Dict) -> str:
    """Hashes a resolved configuration.

    Args:
        cfg (dict | box.Box): The configuration.

    Returns:
        str: The first 12 hex characters of the SHA-256 of the canonical JSON.
    """
    if hasattr(cfg, "to_dict"):
        cfg = cfg.to_dict()
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def df_to_csv(
    df: pd.DataFrame,
    file_path: str,
    cfg_hash: Optional[str] = None,
    comments: Optional[Dict[str, str]] = None,
    float_format: Optional[str] = "%.10g",
) -> str:
    """Writes a DataFrame to a UTF-8 CSV with leading ``# key=value`` comment lines.

    Args:
        df (pandas.DataFrame): The table to write.
        file_path (str): The output file path.
        cfg_hash (str, optional): The config hash recorded in the first comment line. Defaults to None.
        comments (dict, optional): Extra comment lines, e.g. the variant tag. Defaults to None.
        float_format (str, optional): The float format passed to pandas. Defaults to "%.10g".

    Returns:
        str: The absolute path of the written file.
    """
    file_path = check_file_path(file_path)
    lines = []
    if cfg_hash is not None:
        lines.append(f"# config_hash={cfg_hash}")
    for key, value in (comments or {}).items():
        lines.append(f"# {key}={value}")

    with open(file_path, "w", encoding="utf-8", newline="") as f:
        for line in lines:
            f.write(line + "\n")
        df.to_csv(f, index=False, float_format=float_format, lineterminator="\n")
    return file_path


def csv_to_df(in_csv: str, **kwargs) -> pd.DataFrame:
    """Reads a CSV written by :func:`df_to_csv`, skipping the comment lines.

    Args:
        in_csv (str): The input CSV file.

    Returns:
        pandas.DataFrame: The table.
    """
    if not os.path.exists(in_csv):
        raise FileNotFoundError(f"{in_csv} does not exist.")
    return pd.read_csv(in_csv, comment="#", **kwargs)


def read_csv_comments(in_csv: str) -> Dict[str, str]:
    """Returns the ``# key=value`` header comments of a CSV file as a dictionary."""
    result = {}
    with open(in_csv, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            result[key.strip()] = value.strip()
    return result


def sliding_stats(values: Union[List[float], np.ndarray], window: Optional[int] = 20):
    """Trailing sliding-window mean and standard deviation.

    Args:
        values (list | numpy.ndarray): The series.
        window (int, optional): The window size. Defaults to 20.

    Returns:
        tuple: Two numpy arrays (mean, std), same length as the series.
    """
    series = pd.Series(np.asarray(values, dtype=float))
    rolling = series.rolling(window=window, min_periods=1)
    return rolling.mean().to_numpy(), rolling.std(ddof=0).fillna(0.0).to_numpy()
