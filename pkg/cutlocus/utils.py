import ast
import csv
import json
import logging
import os

from typing import Callable, Iterable, List, Sequence

import numpy as np

from cutlocus.geometry.schema import ConfigError, to_jsonable


EXPRESSION_NAMESPACE = {
    "pi": np.pi,
    "e": np.e,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "arcsin": np.arcsin,
    "arccos": np.arccos,
    "arctan": np.arctan,
    "arctan2": np.arctan2,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "where": np.where,
}

_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Compare,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.Mod,
    ast.USub,
    ast.UAdd,
    ast.Lt,
    ast.LtE,
    ast.Gt,
    ast.GtE,
)


def compile_expression(expression: str, variables: Sequence[str]) -> Callable:
    """Compile a numpy expression over `variables`; only arithmetic and the functions above are allowed."""
    try:
        tree = ast.parse(expression.strip(), mode="eval")
    except SyntaxError as e:
        raise ConfigError(f"cannot parse expression {expression!r}: {e}")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(f"expression {expression!r}: {type(node).__name__} is not allowed")
        if isinstance(node, ast.Name) and node.id not in variables and node.id not in EXPRESSION_NAMESPACE:
            raise ConfigError(f"expression {expression!r}: unknown name {node.id}")
        if isinstance(node, ast.Call) and getattr(node.func, "id", None) not in EXPRESSION_NAMESPACE:
            raise ConfigError(f"expression {expression!r}: only the builtin math functions may be called")
    code = compile(tree, f"<{expression}>", "eval")

    def evaluate(*args):
        if len(args) != len(variables):
            raise ConfigError(f"expression {expression!r} takes {len(variables)} arguments")
        scope = dict(EXPRESSION_NAMESPACE)
        scope.update(zip(variables, args))
        return eval(code, {"__builtins__": {}}, scope)

    return evaluate


def load_json_file(file_path: str):
    if not os.path.exists(file_path):
        logging.error(f"{file_path} not found.")
        return False
    with open(file_path, "r") as fp:
        return json.load(fp)


def write_json(path: str, data) -> str:
    with open(path, "w") as fp:
        json.dump(to_jsonable(data), fp, indent=2, sort_keys=True)
    logging.debug(f"wrote {path}")
    return path


def write_csv(path: str, header: List[str], rows: Iterable[Sequence]) -> str:
    count = 0
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
            count += 1
    logging.debug(f"wrote {count} rows to {path}")
    return path


def write_obj(path: str, vertices: np.ndarray, faces: np.ndarray) -> str:
    """Wavefront OBJ; faces are zero-based here and written one-based."""
    with open(path, "w") as fp:
        for v in vertices:
            fp.write("v " + " ".join(f"{c:.9g}" for c in v) + "\n")
        for f in faces:
            fp.write("f " + " ".join(str(int(i) + 1) for i in f) + "\n")
    logging.debug(f"wrote {len(vertices)} vertices and {len(faces)} faces to {path}")
    return path
