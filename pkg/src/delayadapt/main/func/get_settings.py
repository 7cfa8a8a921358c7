# Resolve settings blocks from files, environment and packaged defaults
# contributer = smlee

# History
# 2025-02-10 | v3.0 - settings for experiment runs instead of database secrets
# 2024-12-22 | v2.0 - vault became no priority, making path a priority
# 2024-03-27 | v1.0 - first commit

# Module import
import os
import copy
from importlib import resources
from typing import Any, Dict, Optional
from dotenv import load_dotenv
load_dotenv()
import yaml
import logging
logger = logging.getLogger('delayadapt')
from delayadapt.conf import log
from delayadapt.conf.errors import ConfigError

_DEFAULTS:Optional[Dict[str, Any]] = None

# Main
def load_file(path:str) -> Any:
    """Read a YAML or JSON document (JSON is valid YAML)

    Args:
        path: file path
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read settings file {path}: {e}")
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse settings file {path}: {e}")


def load_defaults() -> Dict[str, Any]:
    """Packaged defaults as a fresh copy
    """
    global _DEFAULTS
    if _DEFAULTS is None:
        text = resources.files("delayadapt.conf").joinpath("defaults.yaml").read_text(encoding="utf-8")
        _DEFAULTS = yaml.safe_load(text)
    return copy.deepcopy(_DEFAULTS)


@log(set_logger=logger)
def get_settings(name:str,
                 *,
                 path:str=str()) -> Any:
    """Get a named settings block

    Args:
        name: block name, e.g. train, gbbw, density
        path: settings file; a file holding several blocks is indexed by name,
              otherwise the whole document is returned

    Returns:
        the settings block merged over packaged defaults when both are mappings
    """
    defaults = load_defaults().get(name)

    if not path:
        path = os.environ.get(f"DELAY_ADAPT_{name.upper()}", str())

    if path:
        document = load_file(path)
        if isinstance(document, dict) and name in document:
            document = document[name]
        elif isinstance(document, dict) and defaults is not None and set(document) & set(load_defaults()):
            # multi-block file without this block
            return defaults
        if document is None:
            raise ConfigError(f"Settings file {path} is empty")
        if isinstance(defaults, dict) and isinstance(document, dict):
            merged = dict(defaults)
            merged.update(document)
            return merged
        return document

    if defaults is None:
        raise ConfigError(f"No settings found for {name}. Pass a file path or set DELAY_ADAPT_{name.upper()}.")
    return defaults
