"""Shared plumbing for the figure scripts: dataclass configs on the command line and CSV output."""

import argparse
import csv
import dataclasses
import math
from pathlib import Path


def parse_config(cls, argv=None, description=None):
    """Build an argparse parser from the fields of dataclass ``cls``.

    Tuple fields take space-separated values; bool fields become flags
    that flip the default.
    """
    p = argparse.ArgumentParser(description=description)
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        flag = "--" + f.name.replace("_", "-")
        if isinstance(default, bool):
            p.add_argument(flag, action="store_false" if default else "store_true")
        elif isinstance(default, tuple):
            kind = type(default[0]) if default else float
            p.add_argument(flag, type=kind, nargs="+", default=list(default))
        else:
            p.add_argument(flag, type=type(default) if default is not None else str, default=default)
    ns = vars(p.parse_args(argv))
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in ns.items()})


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    if isinstance(x, (bool, str)):
        return str(x)
    return f"{float(x):.12g}" if isinstance(x, float) or hasattr(x, "dtype") else str(x)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    print(f"wrote {len(rows)} rows to {path}")
    return path
