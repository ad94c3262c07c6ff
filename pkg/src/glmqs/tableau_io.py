"""Reading and writing tableaus as YAML files.

Layout::

    schema: glmqs-tableau/1
    name: GLMQS-2
    p: 2
    s: 3
    r: 3
    lambda: 0.4127594486653355
    coeff_digits: 16
    c: [0.0, 0.5, 1.0]
    A:
      - [0.4127594486653355, 0.0, 0.0]
      ...

Floats are written with ``repr`` so a round trip is exact.
"""

import numpy as np
import yaml

from .tableau import GlmTableau, TableauError

SCHEMA = "glmqs-tableau/1"
_MATRICES = ("A", "U", "B", "V")


def _num(x):
    text = repr(float(x))
    if "e" in text and "." not in text.split("e")[0]:
        mant, exp = text.split("e")
        text = f"{mant}.0e{exp}"
    return text


def _row(values):
    return "[" + ", ".join(_num(v) for v in values) + "]"


def dumps(tab):
    lines = [
        f"schema: {SCHEMA}",
        f"name: {tab.name}",
        f"p: {tab.p}",
        f"s: {tab.s}",
        f"r: {tab.r}",
        f"lambda: {_num(tab.lam)}",
        f"coeff_digits: {tab.coeff_digits}",
        f"c: {_row(tab.c)}",
    ]
    for key in _MATRICES:
        lines.append(f"{key}:")
        lines.extend(f"  - {_row(row)}" for row in getattr(tab, key))
    return "\n".join(lines) + "\n"


def save(tab, path):
    with open(path, "w") as fh:
        fh.write(dumps(tab))


def _float_array(value, field, ndim):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise TableauError(f"{field}: entries must be numbers ({exc})") from None
    if arr.ndim != ndim:
        raise TableauError(f"{field}: expected a {'vector' if ndim == 1 else 'matrix'}")
    return arr


def loads(text, source="<string>"):
    """Parse a tableau document; errors name the offending field."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise TableauError(f"{source}: not valid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise TableauError(f"{source}: expected a mapping")
    if data.get("schema") != SCHEMA:
        raise TableauError(f"{source}: schema must be {SCHEMA!r}, got {data.get('schema')!r}")
    missing = [k for k in ("name", "p", "lambda", "c", *_MATRICES) if k not in data]
    if missing:
        raise TableauError(f"{source}: missing field(s) {', '.join(missing)}")
    try:
        p = int(data["p"])
        lam = float(data["lambda"])
    except (TypeError, ValueError):
        raise TableauError(f"{source}: p must be an integer and lambda a number") from None
    kwargs = {key: _float_array(data[key], key, 2) for key in _MATRICES}
    tab = GlmTableau(
        name=str(data["name"]), p=p, lam=lam, c=_float_array(data["c"], "c", 1),
        coeff_digits=int(data.get("coeff_digits", 16)), **kwargs,
    )
    for key in ("s", "r"):
        if key in data and data[key] != getattr(tab, key):
            raise TableauError(f"{source}: {key}: declared {data[key]!r}, matrices imply {getattr(tab, key)}")
    return tab


def load(path):
    with open(path) as fh:
        return loads(fh.read(), source=str(path))
