"""Process and utility specs: JSON objects, spec files and CLI shorthands.

JSON form::

    {"kind": "catalog", "name": "gbm_dynamic", "params": {"mu": 0.05, "sigma": 0.2}, "x0": 1}
    {"kind": "expr", "source": "ln(x)", "domain": [0, "inf"]}
    {"kind": "expr", "source": {"drift": "0.05*x", "diffusion": "0.2*x"}, "domain": [0, "inf"], "x0": 1}

Infinite interval ends are written ``"-inf"`` / ``"inf"``. On the command
line a spec is a catalog name with optional inline parameters
(``gbm:mu=0.05,sigma=0.2``), ``expr:<source>`` (a dynamic is
``expr:<drift>;<diffusion>``) or ``@path/to/spec.json``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from . import catalog
from .functions import ValidationError, make_process_from_expr, make_utility_from_expr

__all__ = ["parse_interval", "format_interval", "load_spec", "parse_cli_spec", "UTILITY", "DYNAMIC"]

UTILITY = "utility"
DYNAMIC = "dynamic"


def _bound(v) -> float:
    if isinstance(v, str):
        key = v.strip().lower()
        if key in ("inf", "+inf", "infinity"):
            return math.inf
        if key in ("-inf", "-infinity"):
            return -math.inf
        try:
            return float(key)
        except ValueError:
            raise ValidationError(f"bad interval bound {v!r}") from None
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    raise ValidationError(f"bad interval bound {v!r}")


def parse_interval(obj) -> tuple[float, float]:
    if isinstance(obj, str):
        obj = obj.strip().strip("()[]").split(",")
    if not isinstance(obj, (list, tuple)) or len(obj) != 2:
        raise ValidationError(f"domain must be a pair [lo, hi], got {obj!r}")
    lo, hi = _bound(obj[0]), _bound(obj[1])
    if not lo < hi:
        raise ValidationError(f"empty domain [{lo}, {hi}]")
    return lo, hi


def format_interval(iv) -> list:
    return [("inf" if v > 0 else "-inf") if math.isinf(v) else v for v in iv]


def load_spec(obj, role: str | None = None, defaults: dict | None = None):
    """Build a utility or process from a JSON spec object (or file path).

    ``defaults`` fill catalog parameters the spec leaves out (the CLI passes
    ``--a_u``/``--b_u``/``--x0`` this way).
    """
    if isinstance(obj, (str, Path)):
        path = Path(obj)
        if not path.exists():
            raise ValidationError(f"spec file {str(path)!r} does not exist")
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ValidationError(f"spec file {str(path)!r} is not valid JSON: {err}") from None
    if not isinstance(obj, dict):
        raise ValidationError("a spec must be a JSON object")
    kind = obj.get("kind")
    if kind == "catalog":
        name = obj.get("name")
        if not isinstance(name, str):
            raise ValidationError("catalog spec needs a string 'name'")
        return _catalog(name, dict(obj.get("params") or {}), obj.get("x0"), role, defaults)
    if kind == "expr":
        source = obj.get("source")
        domain = parse_interval(obj.get("domain", ["-inf", "inf"]))
        if isinstance(source, str):
            if role == DYNAMIC:
                raise ValidationError("a dynamic spec needs 'source': {'drift': ..., 'diffusion': ...}")
            return make_utility_from_expr(source, domain)
        if isinstance(source, dict):
            if role == UTILITY:
                raise ValidationError("a utility spec needs a single 'source' expression")
            if "drift" not in source or "diffusion" not in source:
                raise ValidationError("dynamic 'source' needs 'drift' and 'diffusion'")
            x0 = obj.get("x0", (defaults or {}).get("x0"))
            if x0 is None:
                raise ValidationError("a dynamic spec needs 'x0'")
            return make_process_from_expr(source["drift"], source["diffusion"], domain, float(x0),
                                          name=obj.get("name", "expr"))
        raise ValidationError("expr spec needs 'source'")
    raise ValidationError(f"spec 'kind' must be 'catalog' or 'expr', got {kind!r}")


def _catalog(name, params, x0, role, defaults):
    key = catalog.canonical_name(name)
    if catalog.is_utility(key):
        if role == DYNAMIC:
            raise ValidationError(f"{name!r} is a utility, a dynamic was expected")
        return catalog.catalog_lookup(key, params)
    if catalog.is_dynamic(key):
        if role == UTILITY:
            raise ValidationError(f"{name!r} is a dynamic, a utility was expected")
        if x0 is not None:
            params["x0"] = x0
        needed = {"additive_dynamic": ("a", "b"), "gbm_dynamic": ("mu", "sigma"),
                  "cramer_dynamic": ("a_u", "b_u"), "exp_test_dynamic": ("a_u", "b_u")}[key]
        for k, v in (defaults or {}).items():
            if v is not None and k not in params and (k in needed or k == "x0"):
                params[k] = v
        return catalog.catalog_lookup(key, params)
    return catalog.catalog_lookup(key, params)  # raises with the list of names


def parse_cli_spec(text: str, role: str, domain=None, defaults: dict | None = None):
    """Interpret a ``--utility`` / ``--dynamic`` argument."""
    text = text.strip()
    if text.startswith("@"):
        return load_spec(text[1:], role, defaults)
    if text.startswith("expr:"):
        body = text[5:]
        dom = parse_interval(domain) if domain is not None else (-math.inf, math.inf)
        if role == DYNAMIC:
            parts = body.split(";")
            if len(parts) != 2:
                raise ValidationError("dynamic expression must be 'expr:<drift>;<diffusion>'")
            x0 = (defaults or {}).get("x0")
            if x0 is None:
                raise ValidationError("an expression dynamic needs --x0")
            return make_process_from_expr(parts[0], parts[1], dom, float(x0))
        return make_utility_from_expr(body, dom)
    name, _, inline = text.partition(":")
    params = {}
    if inline:
        for item in inline.split(","):
            k, eq, v = item.partition("=")
            if not eq:
                raise ValidationError(f"bad inline parameter {item!r}; use key=value")
            params[k.strip()] = v.strip()
    x0 = params.pop("x0", None)
    return _catalog(name, params, x0, role, defaults)
