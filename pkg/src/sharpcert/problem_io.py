"""Problem files, random instances and report serialization.

A problem file is a JSON object::

    {
      "schema": 1,
      "m": 2, "n": 3, "p": 3,
      "groups": [[0, 1], [2]],
      "Phi": [[1, 1, 0], [1, 0, -1]],
      "D": "identity",
      "x0": [0, 1, 0],
      "seed": 7
    }

``Phi`` may be replaced by ``"Phi_generator": {"kind": "gaussian", "seed": 1}``
(i.i.d. standard normal entries from a counter-based stream); giving both is
an error.  ``D`` is ``"identity"`` or an ``n x p`` row-major matrix.  Group
indices are 0-based.
"""

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .certificates import VERDICTS, CertificateReport
from .groups import GroupStructure, Problem
from .linalg import InvalidInputError
from .recovery import RateFit

SCHEMA_VERSION = 1


class ProblemFileError(InvalidInputError):
    """A problem file that does not parse or does not describe a valid problem."""


def _stream(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *key])))


def _field(doc, name, kind):
    if name not in doc:
        raise ProblemFileError(f"missing field {name!r}")
    value = doc[name]
    if kind is int and (not isinstance(value, int) or isinstance(value, bool) or value < 0):
        raise ProblemFileError(f"field {name!r} must be a non-negative integer")
    return value


def _matrix(value, rows, cols, name):
    try:
        a = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ProblemFileError(f"field {name!r} must be numeric") from None
    if a.ndim == 1 and a.size == rows * cols:
        a = a.reshape(rows, cols)
    if a.shape != (rows, cols):
        raise ProblemFileError(f"field {name!r} has shape {a.shape}, expected ({rows}, {cols})")
    if not np.all(np.isfinite(a)):
        raise ProblemFileError(f"field {name!r} contains non-finite entries")
    return a


def gaussian_matrix(m, n, seed):
    return _stream(seed, 0).standard_normal((m, n))


def problem_from_dict(doc):
    if not isinstance(doc, dict):
        raise ProblemFileError("problem file must contain a JSON object")
    schema = doc.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ProblemFileError(f"unsupported schema version {schema!r}")
    m, n, p = (_field(doc, k, int) for k in ("m", "n", "p"))
    if "Phi" in doc and "Phi_generator" in doc:
        raise ProblemFileError("fields 'Phi' and 'Phi_generator' are mutually exclusive")
    if "Phi_generator" in doc:
        gen = doc["Phi_generator"]
        if not isinstance(gen, dict) or gen.get("kind", "gaussian") != "gaussian":
            raise ProblemFileError("field 'Phi_generator' must be {'kind': 'gaussian', 'seed': int}")
        phi = gaussian_matrix(m, n, int(gen.get("seed", doc.get("seed", 0))))
    else:
        phi = _matrix(_field(doc, "Phi", list), m, n, "Phi")
    D = doc.get("D", "identity")
    if D == "identity":
        if p != n:
            raise ProblemFileError(f"identity D needs p == n, got p={p}, n={n}")
        D = None
    else:
        D = _matrix(D, n, p, "D")
    groups = _field(doc, "groups", list)
    if not all(isinstance(g, list) and all(isinstance(i, int) for i in g) for g in groups):
        raise ProblemFileError("field 'groups' must be a list of integer lists")
    try:
        gs = GroupStructure(p, groups)
    except InvalidInputError as exc:
        raise ProblemFileError(f"field 'groups': {exc}") from None
    x0 = _field(doc, "x0", list)
    try:
        x0 = np.asarray(x0, dtype=np.float64)
    except (TypeError, ValueError):
        raise ProblemFileError("field 'x0' must be numeric") from None
    if x0.shape != (n,):
        raise ProblemFileError(f"field 'x0' has length {x0.size}, expected {n}")
    try:
        return Problem(phi, gs, x0, D=D)
    except InvalidInputError as exc:
        raise ProblemFileError(str(exc)) from None


def load_problem(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ProblemFileError(f"{path}: {exc.strerror}") from None
    return problem_from_dict(doc)


def problem_to_dict(prob, seed=None):
    doc = {
        "schema": SCHEMA_VERSION,
        "m": prob.m,
        "n": prob.n,
        "p": prob.p,
        "groups": [list(g) for g in prob.groups.groups],
        "Phi": prob.phi.tolist(),
        "D": "identity" if prob.identity_D else prob.D.tolist(),
        "x0": prob.x0.tolist(),
    }
    if seed is not None:
        doc["seed"] = int(seed)
    return doc


def save_problem(prob, path, seed=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(problem_to_dict(prob, seed), fh)
        fh.write("\n")


# random instances --------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleSpec:
    """Gaussian measurements of a signal supported on ``k`` random groups."""

    m: int
    n: int
    q: int
    G: int
    k: int
    seed: int = 0

    def __post_init__(self):
        if self.q * self.G != self.n:
            raise InvalidInputError(f"q * G = {self.q * self.G} differs from n = {self.n}")
        if not 0 <= self.k <= self.q:
            raise InvalidInputError(f"active group count {self.k} outside 0..{self.q}")
        if self.m <= 0:
            raise InvalidInputError("m must be positive")


def generate_instance(spec, trial=0):
    """Instance number ``trial`` of the ensemble; deterministic in ``(spec, trial)``.

    Independent Philox streams keyed by ``(seed, trial, purpose)`` draw the
    measurement matrix, the active groups and the active entries.
    """
    phi = _stream(spec.seed, trial, 0).standard_normal((spec.m, spec.n))
    chooser = _stream(spec.seed, trial, 1)
    active = np.sort(chooser.choice(spec.q, size=spec.k, replace=False)) if spec.k else []
    values = _stream(spec.seed, trial, 2).standard_normal(spec.k * spec.G)
    x0 = np.zeros(spec.n)
    for j, g in enumerate(active):
        x0[g * spec.G : (g + 1) * spec.G] = values[j * spec.G : (j + 1) * spec.G]
    return Problem(phi, GroupStructure.contiguous(spec.n, spec.G), x0)


# emission ------------------------------------------------------------------------


def fmt(value):
    """Numbers as 12-significant-digit decimal strings; other scalars lowercased."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".12g")
    return str(value)


def report_to_dict(rep):
    """Flat mapping of a :class:`CertificateReport` with string-encoded numbers."""
    out = {"verdict": rep.verdict, "decided_by": rep.decided_by,
           "thresholds": rep.thresholds.name}
    for key in ("tau", "rho", "rho_lo", "rho_hi", "gamma", "zeta"):
        if hasattr(rep.thresholds, key):
            out[f"threshold_{key}"] = fmt(getattr(rep.thresholds, key))
    out["consistency_ok"] = bool(rep.consistency_ok)
    for name in ("tau", "rho", "gamma", "zeta", "ic"):
        coef = getattr(rep, name)
        out[name] = fmt(coef.value)
        out[f"{name}_status"] = coef.status
        out[f"{name}_gap"] = fmt(coef.gap)
    out["ri_holds"] = bool(rep.ri_holds) if rep.ri_holds is not None else None
    out["c1"] = fmt(rep.c1)
    out["sri_holds"] = bool(rep.sri_holds) if rep.sri_holds is not None else None
    for name in ("sharpness_constant_c", "lipschitz_L", "phi_pinv_norm", "kappa",
                 "kappa_lower_bound"):
        out[name] = fmt(getattr(rep, name))
    out["kappa_samples"] = fmt(rep.kappa_samples)
    out["notes"] = "; ".join(rep.notes)
    return out


RATE_COLUMNS = ("delta", "draw", "mode", "error", "bound", "iterations", "kkt_residual")
TALLY_COLUMNS = ("verdict", "count")


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def tally_rows(tally):
    order = [v for v in VERDICTS if v in tally] + sorted(k for k in tally if k not in VERDICTS)
    return [(v, tally[v]) for v in order]


def render(obj, fmt_name="json"):
    """Serialize a report, a rate fit, a tally (verdict -> count) or row table."""
    if isinstance(obj, CertificateReport):
        data = report_to_dict(obj)
        if fmt_name == "json":
            return json.dumps(data, indent=2, sort_keys=False) + "\n"
        return _csv_text(("field", "value"), [(k, v) for k, v in data.items()])
    if isinstance(obj, RateFit):
        rows = [[r[c] for c in RATE_COLUMNS] for r in obj.rows]
        if fmt_name == "csv":
            return _csv_text(RATE_COLUMNS, rows)
        data = {
            "verdict": obj.verdict,
            "deltas": [fmt(d) for d in obj.deltas],
            "slopes": {k: fmt(v) for k, v in obj.slopes.items()},
            "intercepts": {k: fmt(v) for k, v in obj.intercepts.items()},
            "medians": {k: [fmt(v) for v in a] for k, a in obj.medians.items()},
            "bounds": {k: [fmt(v) for v in a] for k, a in obj.bounds.items()},
            "failures": obj.failures,
            "rows": [dict(zip(RATE_COLUMNS, (fmt(v) for v in row))) for row in rows],
        }
        return json.dumps(data, indent=2) + "\n"
    if isinstance(obj, dict):
        rows = tally_rows(obj)
        if fmt_name == "csv":
            return _csv_text(TALLY_COLUMNS, rows)
        return json.dumps({k: v for k, v in rows}, indent=2) + "\n"
    if isinstance(obj, tuple) and len(obj) == 2:
        header, rows = obj
        if fmt_name == "csv":
            return _csv_text(header, rows)
        return json.dumps([dict(zip(header, (fmt(v) for v in r))) for r in rows], indent=2) + "\n"
    raise TypeError(f"cannot render {type(obj).__name__}")


def emit_report(obj, fmt_name="json", path=None):
    """Write :func:`render` output to ``path`` (or return it when ``path`` is None)."""
    text = render(obj, fmt_name)
    if path is None:
        return text
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return text
