"""Run configuration: JSON schema, dotted-path overrides, and h-rules.

A config file has four sections.  ``model`` declares either the built-in
recursive-utility benchmark, the zero-dynamics validation model, or a fully
generic coefficient model given by expression strings.  ``scheme`` holds the
discretization parameters; dt, epsilon, and k_sl may be written as rules in
terms of h ("h/15", "h", "sqrt(h)", "2*h", or a plain number) so mesh studies
stay consistent when h changes.  ``study`` lists the h / cost / control-count
sweeps, ``output`` the artifact directory and formats.

Expressions for the generic model are compiled through a restricted ast
evaluator: names are limited to the declared arguments, model params, and a
numpy whitelist, so configs stay data, not code.
"""

from __future__ import annotations

import ast
import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import levy
from .exceptions import ConfigurationError
from .model import (BenchmarkParams, ProblemSpec, recursive_utility_spec,
                    zero_dynamics_spec)

__all__ = ["RunConfig", "load_config", "apply_overrides", "resolve_rule",
           "build_spec", "scheme_kwargs"]

_REQUIRED_SECTIONS = ("model", "scheme")
_MODEL_KINDS = ("recursive_utility", "zero_dynamics", "expressions")


@dataclass
class RunConfig:
    """Parsed and validated configuration."""

    model: dict
    scheme: dict
    study: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"model": self.model, "scheme": self.scheme,
                "study": self.study, "output": self.output}


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    """Load a JSON config, apply --set overrides, and validate."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"config parse error in {path} at line {exc.lineno}, "
            f"column {exc.colno}: {exc.msg}")
    if overrides:
        raw = apply_overrides(raw, overrides)
    return _validate(raw)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply repeatable --set key=value flags via dotted paths.

    Values are parsed as JSON when possible and kept as strings otherwise,
    so --set scheme.h=0.005 and --set scheme.dt_rule=h/15 both work.
    """
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"--set path {key!r} crosses a non-section")
        node[parts[-1]] = value
    return raw


def _validate(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    for section in _REQUIRED_SECTIONS:
        if section not in raw:
            raise ConfigurationError(f"missing required config section {section!r}")
        if not isinstance(raw[section], dict):
            raise ConfigurationError(f"config section {section!r} must be an object")
    model = raw["model"]
    kind = model.get("kind")
    if kind not in _MODEL_KINDS:
        raise ConfigurationError(
            f"model.kind must be one of {_MODEL_KINDS}, got {kind!r}")
    scheme = raw["scheme"]
    if "h" not in scheme:
        raise ConfigurationError("scheme.h is required")
    study = raw.get("study", {})
    hs = study.get("h_values")
    if hs is not None and list(hs) != sorted(hs, reverse=True):
        raise ConfigurationError("study.h_values must be sorted descending")
    return RunConfig(model=model, scheme=scheme,
                     study=study, output=raw.get("output", {}))


def resolve_rule(rule, h: float, name: str) -> float:
    """Resolve a scheme rule given h: a number, "h", "h/15", "2*h", "sqrt(h)"."""
    if isinstance(rule, (int, float)):
        return float(rule)
    if not isinstance(rule, str):
        raise ConfigurationError(f"{name}: rule must be a number or string")
    text = rule.replace(" ", "")
    if text == "h":
        return h
    if text == "sqrt(h)":
        return math.sqrt(h)
    for sep, op in (("/", lambda a, b: a / b), ("*", lambda a, b: a * b)):
        if sep in text:
            lhs, _, rhs = text.partition(sep)
            try:
                if lhs == "h":
                    return op(h, float(rhs))
                if rhs == "h":
                    return op(float(lhs), h)
            except ValueError:
                break
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(
            f"{name}: cannot resolve rule {rule!r} "
            '(use a number, "h", "h/15", "2*h", or "sqrt(h)")')


_ALLOWED_FUNCS = {
    name: getattr(np, name)
    for name in ("exp", "log", "sqrt", "abs", "minimum", "maximum", "sin",
                 "cos", "tanh", "where", "sign")
}
_ALLOWED_FUNCS["min"] = np.minimum
_ALLOWED_FUNCS["max"] = np.maximum
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub,
    ast.UAdd, ast.Compare, ast.Gt, ast.GtE, ast.Lt, ast.LtE, ast.IfExp,
)


def compile_expr(expr: str, argnames: tuple[str, ...], params: dict):
    """Compile a coefficient expression into a vectorized callable.

    Only the listed argument names, numeric model params, and a numpy
    function whitelist may appear; anything else is rejected up front.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"bad expression {expr!r}: {exc}")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigurationError(
                f"expression {expr!r}: {type(node).__name__} not allowed")
        if isinstance(node, ast.Name) and node.id not in argnames \
                and node.id not in params and node.id not in _ALLOWED_FUNCS:
            raise ConfigurationError(
                f"expression {expr!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Call) and (
                not isinstance(node.func, ast.Name)
                or node.func.id not in _ALLOWED_FUNCS):
            raise ConfigurationError(
                f"expression {expr!r}: only whitelisted functions callable")
    code = compile(tree, "<config-expression>", "eval")
    namespace = dict(_ALLOWED_FUNCS)
    namespace.update({k: v for k, v in params.items()
                      if isinstance(v, (int, float))})

    def fn(*args):
        local = dict(zip(argnames, args))
        return eval(code, {"__builtins__": {}}, {**namespace, **local})

    return fn


def _expressions_spec(model: dict, epsilon: float) -> ProblemSpec:
    params = model.get("params", {})
    exprs = model.get("coefficients")
    if not isinstance(exprs, dict):
        raise ConfigurationError("expressions model needs a 'coefficients' object")

    def need(key, argnames):
        if key not in exprs:
            raise ConfigurationError(f"expressions model: missing coefficient {key!r}")
        return compile_expr(exprs[key], argnames, params)

    g = need("terminal", ("x",))
    density = need("density", ("e",))
    gamma = None
    if "driver_weight" in exprs:
        gamma = need("driver_weight", ("x", "e"))
    measure = levy.LevyMeasure(
        density=lambda e: np.asarray(density(e), dtype=float),
        epsilon=epsilon,
        e_max=float(model.get("e_max", 5.0)),
        bins_per_unit=int(model.get("bins_per_unit", 400)),
    )
    ext_expr = exprs.get("exterior")
    ext = (compile_expr(ext_expr, ("t", "x"), params) if ext_expr
           else (lambda t, x: np.asarray(g(x), dtype=float)))
    return ProblemSpec(
        drift=need("drift", ("alpha", "x")),
        diffusion=need("diffusion", ("alpha", "x")),
        jump_amp=need("jump_amp", ("alpha", "x", "e")),
        driver=need("driver", ("alpha", "t", "x", "y", "z", "k")),
        obstacle=need("obstacle", ("t", "x")),
        terminal=lambda x: np.asarray(g(x), dtype=float),
        control_interval=tuple(model.get("control_interval", (0.0, 1.0))),
        measure=measure,
        domain=tuple(model["domain"]),
        horizon=float(model["T"]),
        exterior=lambda t, x: np.asarray(ext(t, x), dtype=float),
        driver_weight=gamma,
        lip_y=float(model.get("lip_y", 0.0)),
        lip_z=float(model.get("lip_z", 0.0)),
        lip_k=float(model.get("lip_k", 0.0)),
        f0_bound=float(model.get("f0_bound", 0.0)),
        time_dependent_ext=bool(model.get("time_dependent_ext", ext_expr is not None)),
        time_dependent_obstacle=bool(model.get("time_dependent_obstacle", True)),
    )


def build_spec(cfg: RunConfig, h: float, *, domain=None,
               b_override: float | None = None) -> ProblemSpec:
    """Instantiate the ProblemSpec of cfg.model at mesh size h.

    The measure truncation follows scheme.eps_rule (default eps = h); study
    cells may override the domain or (for the benchmark) the risky drift.
    """
    model = cfg.model
    epsilon = resolve_rule(cfg.scheme.get("eps_rule", "h"), h, "scheme.eps_rule")
    kind = model["kind"]
    if kind == "recursive_utility":
        fields = {k: model[k] for k in
                  ("beta", "kappa", "b", "sigma", "mu", "T", "x0", "r",
                   "psi_scale") if k in model}
        if b_override is not None:
            fields["b"] = b_override
        if domain is None:
            domain = tuple(model.get("domain", (0.0, 2.0)))
        p = BenchmarkParams(domain=tuple(domain), **fields)
        return recursive_utility_spec(
            p, epsilon,
            e_max=float(model.get("e_max", 5.0)),
            bins_per_unit=int(model.get("bins_per_unit", 400)))
    if kind == "zero_dynamics":
        return zero_dynamics_spec(
            g0=float(model.get("g0", 0.5)),
            c0=float(model.get("c0", 0.2)),
            beta=float(model.get("beta", 0.2)),
            obstacle_level=float(model.get("obstacle_level", -10.0)),
            T=float(model.get("T", 1.0)),
            domain=tuple(domain or model.get("domain", (0.0, 1.0))))
    if domain is not None:
        model = dict(model, domain=list(domain))
    return _expressions_spec(model, epsilon)


def scheme_kwargs(cfg: RunConfig, h: float, *, cost=None, dt_rule=None) -> dict:
    """Resolve the SchemeParams keyword arguments for mesh size h."""
    s = cfg.scheme
    dt = resolve_rule(dt_rule if dt_rule is not None else s.get("dt_rule", "h/15"),
                      h, "scheme.dt_rule")
    eps = resolve_rule(s.get("eps_rule", "h"), h, "scheme.eps_rule")
    k_rule = s.get("k_sl_rule")
    out = dict(
        h=h, dt=dt, epsilon=eps,
        theta=float(s.get("theta", 1 / 40)),
        cost=float(cost if cost is not None else s.get("cost", 1 / 640)),
        picard_tol=float(s.get("picard_tol", 1e-10)),
        picard_max=int(s.get("picard_max", 200)),
        record_policy=bool(s.get("record_policy", False)),
        parallel_components=bool(s.get("parallel_components", False)),
        n_threads=s.get("n_threads"),
    )
    if k_rule is not None:
        out["k_sl"] = resolve_rule(k_rule, h, "scheme.k_sl_rule")
    return out
