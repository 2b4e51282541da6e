import json
import os

import yaml
from werkzeug.utils import secure_filename

CONFIG_EXTENSIONS = {".yaml", ".yml", ".json"}


def normalize_ext(filename: str) -> str:
    safe_name = secure_filename(filename or "")
    return os.path.splitext(safe_name)[1].lower()


def is_allowed_filename(filename: str, allowed_exts: set[str]) -> bool:
    ext = normalize_ext(filename)
    return bool(ext) and ext in allowed_exts


def parse_config_upload(filename: str, data: bytes) -> dict:
    """Decode an uploaded experiment config into a flat mapping; raises ValueError on bad input."""
    if not data:
        raise ValueError("Uploaded config is empty.")
    ext = normalize_ext(filename)
    try:
        text = data.decode("utf-8")
        parsed = json.loads(text) if ext == ".json" else yaml.safe_load(text)
    except (UnicodeDecodeError, json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValueError(f"Failed to parse config: {exc}") from exc
    if not isinstance(parsed, dict):
        raise ValueError("Config must be a flat key: value mapping.")
    return parsed
