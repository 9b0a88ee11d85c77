"""Flat ``key = value`` text files used for configs and reports."""

from .errors import ConfigError


def parse_keyvalue(text):
    """Parse ``key = value`` lines into a dict of strings.

    Blank lines and ``#`` comments are skipped. Duplicate keys are an error.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_keyvalue(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_keyvalue(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def format_keyvalue(items):
    return "".join(f"{k} = {format_value(v)}\n" for k, v in items)
