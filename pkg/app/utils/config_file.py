from enum import Enum
from io import StringIO
from typing import Dict, Optional

from dotenv.parser import parse_stream

from app.exceptions import ConfigError
from app.schemas.run_config import RunConfig


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    Parse line-oriented `key = value` text with python-dotenv's parser

    Blank lines and lines starting with `#` are skipped; a trailing
    `# comment` after a value is dropped and quoted values are unquoted.
    A repeated key keeps its last value.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Raw string values keyed by name

    Raises:
        ConfigError: On a line dotenv cannot parse or a key without `=`
    """
    values: Dict[str, str] = {}
    for binding in parse_stream(StringIO(text)):
        line = binding.original.string.strip()
        if binding.error:
            raise ConfigError(None, f"{source}:{binding.original.line}: expected 'key = value', got {line!r}")
        if binding.key is None:
            continue
        if binding.value is None:
            raise ConfigError(binding.key, f"{source}:{binding.original.line}: expected 'key = value', got {line!r}")
        values[binding.key] = binding.value
    return values


def read_config_file(path: str) -> Dict[str, str]:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e.strerror}")
    return parse_key_values(text, source=path)


def format_config_value(value) -> Optional[str]:
    if value is None:
        return None
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_config_value(item) for item in value)
    return str(value)


def emit_config(config: RunConfig) -> str:
    """
    Render a RunConfig as `key = value` lines that parse back to the same config

    The subcommand is not written; it is given on the command line.
    """
    lines = [f"# {config.subcommand}"]
    for name in RunConfig.model_fields:
        if name == "subcommand":
            continue
        rendered = format_config_value(getattr(config, name))
        if rendered is not None:
            lines.append(f"{name} = {rendered}")
    return "\n".join(lines) + "\n"
