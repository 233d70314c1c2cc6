"""JSON and CSV persistence for modes, fields, chains and reports."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .chaos_basis import build_basis
from .random_field import GpcField, HyperPrior, KLModes, SquaredExponential

KLMODES_FORMAT = "gpcal.klmodes/1"
FIELD_FORMAT = "gpcal.gpcfield/1"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def _array(a):
    a = np.asarray(a)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _from_array(d, dtype=float):
    return np.asarray(d["data"], dtype=dtype).reshape(d["shape"])


def _prior_dict(p: HyperPrior):
    return {"family": p.family, "shape": p.shape, "scale": p.scale, "coverage": list(p.coverage)}


def _prior_from(d):
    return HyperPrior(d["family"], d["shape"], d.get("scale", 1.0), tuple(d.get("coverage", (0.001, 0.999))))


def klmodes_to_dict(m: KLModes) -> dict:
    return {
        "format": KLMODES_FORMAT,
        "kernel": {"type": "squared_exponential"},
        "priors": [_prior_dict(p) for p in m.priors],
        "domain": list(m.domain),
        "basis_size": m.basis_size,
        "n_quad": m.n_quad,
        "bounds": [list(b) for b in m.bounds],
        "hyper_degrees": _array(m.hyper_degrees),
        "l": _array(m.l),
        "c": _array(m.c),
        "s": _array(m.s),
        "node_theta": _array(m.node_theta),
        "node_values": _array(m.node_values),
        "node_vectors": _array(m.node_vectors),
    }


def klmodes_from_dict(d: dict) -> KLModes:
    if d.get("format") != KLMODES_FORMAT:
        raise ValueError(f"unsupported KL modes format {d.get('format')!r}")
    return KLModes(
        kernel=SquaredExponential(),
        priors=tuple(_prior_from(p) for p in d["priors"]),
        domain=tuple(d["domain"]),
        basis_size=int(d["basis_size"]),
        hyper_degrees=_from_array(d["hyper_degrees"], np.int64),
        bounds=tuple(tuple(b) for b in d["bounds"]),
        l=_from_array(d["l"]),
        c=_from_array(d["c"]),
        s=_from_array(d["s"]),
        node_theta=_from_array(d["node_theta"]),
        node_values=_from_array(d["node_values"]),
        node_vectors=_from_array(d["node_vectors"]),
        n_quad=int(d.get("n_quad", 32)),
    )


def field_to_dict(f: GpcField) -> dict:
    return {
        "format": FIELD_FORMAT,
        "basis": {"germ_dim": f.basis.germ_dim, "order": f.basis.order, "size": f.basis.size},
        "x": f.x.tolist(),
        "coeffs": _array(f.coeffs),
    }


def field_from_dict(d: dict) -> GpcField:
    if d.get("format") != FIELD_FORMAT:
        raise ValueError(f"unsupported field format {d.get('format')!r}")
    basis = build_basis(d["basis"]["germ_dim"], d["basis"]["order"])
    coeffs = _from_array(d["coeffs"])
    if coeffs.shape[0] != basis.size:
        raise ValueError("coefficient table does not match the basis size")
    return GpcField(np.asarray(d["x"], dtype=float), coeffs, basis)


def write_json(path, obj, cfg_hash: str | None = None):
    obj = dict(obj)
    if cfg_hash is not None:
        obj["config_hash"] = cfg_hash
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, default=_default) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows, cfg_hash: str | None = None):
    """CSV with an optional ``# config_hash=...`` first line; floats use ``repr``."""
    with open(path, "w", newline="") as fh:
        if cfg_hash is not None:
            fh.write(f"# config_hash={cfg_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    """Return ``(header, rows as float array, config hash or None)``."""
    lines = Path(path).read_text().splitlines()
    h = None
    if lines and lines[0].startswith("# config_hash="):
        h = lines[0].split("=", 1)[1]
        lines = lines[1:]
    reader = csv.reader(lines)
    header = next(reader)
    rows = np.array([[float(v) for v in r] for r in reader], dtype=float).reshape(-1, len(header))
    return header, rows, h


def write_chain(path, chain, cfg_hash=None):
    d = chain.samples.shape[1]
    header = [f"xi{i}" for i in range(d)] + ["log_post"]
    rows = np.column_stack([chain.samples, chain.log_post])
    write_csv(path, header, rows.tolist(), cfg_hash)
