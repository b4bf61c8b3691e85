"""Plain CSV/JSON readers and writers for datasets, fields and chains."""

import csv
import json

import numpy as np

from .errors import ArgumentError
from .gp import Dataset
from .inference import Chain


class ParseError(ArgumentError):
    """Malformed input file; ``line`` is 1-based."""

    def __init__(self, path, line, msg):
        self.path, self.line = path, line
        super().__init__(f"{path}:{line}: {msg}")


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path, header, columns):
    columns = [np.asarray(c).reshape(-1) for c in columns]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def read_table(path):
    """Header and float rows of a CSV file."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ParseError(path, 1, "empty file")
    header = [h.strip() for h in rows[0]]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
        try:
            data.append([float(v) for v in row])
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def write_dataset(path, data, coords):
    write_table(path, [*coords, "y"], [*data.X.T, data.y])


def read_dataset(path, domain=None):
    header, arr = read_table(path)
    if len(header) < 2 or header[-1] != "y":
        raise ParseError(path, 1, "dataset header must be x_1..x_D,y")
    if len(arr) == 0:
        raise ParseError(path, 2, "no observations")
    return Dataset(arr[:, :-1], arr[:, -1], domain)


def write_chain(path, chain, param_names):
    header = ["step", *param_names, "potential", "accepted"]
    steps = np.arange(len(chain.samples))
    cols = [steps, *chain.samples.T, chain.potentials, chain.accepted_steps.astype(int)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def read_chain(path, alpha=1.0):
    header, arr = read_table(path)
    if header[0] != "step" or header[-2:] != ["potential", "accepted"] or len(header) < 4:
        raise ParseError(path, 1, "chain header must be step,theta_1..theta_q,potential,accepted")
    names = header[1:-2]
    chain = Chain(arr[:, 1:-2], -alpha * arr[:, -2], arr[:, -1].astype(bool), seed=-1, alpha=alpha)
    return chain, names


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
