from pydantic_settings import BaseSettings
from typing import Any, Dict, Optional
from pathlib import Path
import tomllib


class Settings(BaseSettings):
    # Dataset geometry
    num_classes: int = 4800
    rgb_dim: int = 1024
    audio_dim: int = 128
    
    # Evaluation
    top_k: int = 20
    
    # Runtime
    seed: int = 0
    float32: bool = False
    threads: int = 4
    log_level: str = "INFO"
    environment: str = "development"
    
    class Config:
        env_file = ".env"
        env_prefix = "YT8M_"
        case_sensitive = False


def load_config_file(path: Optional[str], section: Optional[str] = None) -> Dict[str, Any]:
    """
    Read a TOML experiment file.
    
    Top-level keys apply to every subcommand; a table named after the
    subcommand (e.g. ``[train]`` or ``[ensemble.stack]``) overrides them for
    that subcommand only. Dashes in keys are normalized to underscores.
    """
    if not path:
        return {}
    with open(Path(path), "rb") as fh:
        raw = tomllib.load(fh)

    values = {k.replace("-", "_"): v for k, v in raw.items() if not isinstance(v, dict)}
    table: Any = raw
    for part in (section or "").split("."):
        table = table.get(part) if part and isinstance(table, dict) else None
    if section and isinstance(table, dict):
        values.update({k.replace("-", "_"): v for k, v in table.items() if not isinstance(v, dict)})
    return values


settings = Settings()
