"""Serialization helpers: JSON/CSV with 17 significant digits, gnuplot scripts."""
import math
from fractions import Fraction

import numpy as np


def fmt_float(v):
    v = float(v)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return format(v, ".17g")


def to_jsonable(obj):
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps(obj, indent=2, _level=0):
    """Deterministic JSON: sorted keys, floats with 17 significant digits."""
    obj = to_jsonable(obj) if _level == 0 else obj
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}{_str(k)}: {dumps(obj[k], indent, _level + 1)}' for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return fmt_float(obj)
    if isinstance(obj, str):
        return _str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _str(s):
    import json
    return json.dumps(str(s))


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj) + "\n")


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)


def gnuplot_script(title, blocks, plots, xlabel="", ylabel="", logx=False, logy=False, extra=()):
    """Self-contained gnuplot text with inline data blocks.

    ``blocks`` maps a name to rows; ``plots`` are plot clauses referring to
    ``$name`` blocks or functions.
    """
    lines = [f"# {title}", "set terminal pngcairo size 900,600", f"set output '{_slug(title)}.png'",
             f"set title {_str(title)}"]
    if xlabel:
        lines.append(f"set xlabel {_str(xlabel)}")
    if ylabel:
        lines.append(f"set ylabel {_str(ylabel)}")
    if logx:
        lines.append("set logscale x 2")
    if logy:
        lines.append("set logscale y")
    lines.extend(extra)
    for name, rows in blocks.items():
        lines.append(f"${name} << EOD")
        for row in rows:
            lines.append(" ".join(_cell(v) for v in row))
        lines.append("EOD")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def _slug(s):
    return "".join(c if c.isalnum() else "_" for c in s).strip("_").lower() or "plot"
