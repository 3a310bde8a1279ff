"""Database files: pose section (MMPD) plus feature section (MMFD), with a JSON provenance sidecar."""
import io
import json

from . import storage
from .errors import InputError
from .feature_db import build_feature_db, feature_db_arrays, feature_db_from_arrays
from .pose_db import pose_db_arrays, pose_db_from_arrays

MAGIC = b"MMPD"
FEATURES = b"MMFD"


def database_bytes(poses, features=None):
    features = build_feature_db(poses) if features is None else features

    def write(fh):
        storage.write_header(fh, MAGIC)
        storage.write_section(fh, MAGIC, *pose_db_arrays(poses))
        storage.write_section(fh, FEATURES, *feature_db_arrays(features))
    return storage.to_bytes(write)


def sidecar_text(params):
    return json.dumps(params, sort_keys=True, indent=2) + "\n"


def save_database(path, poses, features=None, params=None):
    """Write the database and ``<path>.json``; each file is replaced atomically."""
    data = database_bytes(poses, features)
    storage.atomic_write(path, data)
    storage.atomic_write(path + ".json", sidecar_text(params or {}).encode("utf-8"))


def database_from_bytes(data):
    fh = io.BytesIO(data)
    storage.read_header(fh, MAGIC)
    poses = pose_db_from_arrays(*storage.read_section(fh, MAGIC))
    features = feature_db_from_arrays(*storage.read_section(fh, FEATURES))
    if len(features) != len(poses):
        raise InputError("pose and feature sections have different lengths")
    return poses, features


def load_database(path):
    try:
        with open(path, "rb") as fh:
            return database_from_bytes(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read database {path}: {exc}") from exc


def load_sidecar(path):
    try:
        with open(path + ".json", "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        return {}
