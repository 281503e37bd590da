"""TOML run configuration.

A config file describes the projection matrix, the flux law, and optionally a
macro problem, a homogenization sweep, two-scale test functions and ergodic
averaging times.  Everything stays declarative: coefficients are trig
polynomial term lists, macro functions are grammar-checked strings.

    [matrix]
    name = "fibonacci"              # catalogue entry, or explicit entries

    [model]
    family = "linear-scalar"        # linear-matrix | power-law | regularized-power-law
    p = 2.0
    n = 1
    mu = "1"                        # optional macro factor
    [[model.terms]]
    amplitude = 2.0
    k = [0, 0]
    phase = "cos"

    [cell]
    bandlimit = 16
    xi = [1.0]

    [macro]
    lengths = [1.0]
    elements = [512]
    source = "1"

    [sweep]
    eta0 = 0.05
    levels = 6
    elements_per_period = 20

    [[test_functions]]
    psi = "sin(pi*x)"
    k = [1, 0]
    phase = "cos"

    [ergodic]
    T = [10.0, 100.0, 10000.0]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import tomli

from .fields import FourierField
from .flux import FluxModel, make_model
from .fem import MacroProblem
from .projection import ProjectionMatrix, matrix_from_config
from .symbolic import compile_macro_expression


class ConfigError(ValueError):
    pass


@dataclass
class CellSettings:
    bandlimit: int
    xi: np.ndarray
    residual_tol: float | None = None
    grid_points: int | None = None
    max_iterations: int = 400


@dataclass
class SweepSettings:
    eta0: float
    levels: int
    elements_per_period: float = 20.0
    lp: float = 2.0


@dataclass
class TestFunctionSpec:
    psi_source: str
    k: tuple
    phase: str


@dataclass
class RunConfig:
    pm: ProjectionMatrix
    model: FluxModel | None
    cell: CellSettings | None
    macro: MacroProblem | None
    sweep: SweepSettings | None
    test_functions: list
    ergodic_T: list
    criterion_radius: int
    raw: dict


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError("missing %r in [%s]" % (key, where))
    return section[key]


def _build_model(section: dict) -> FluxModel:
    family = _require(section, "family", "model")
    n = int(_require(section, "n", "model"))
    p = float(section.get("p", 2.0))
    terms = section.get("terms")
    if not terms:
        raise ConfigError("[model] needs at least one [[model.terms]] entry")
    m = len(terms[0]["k"])
    K = max(max(abs(int(v)) for v in t["k"]) for t in terms)
    K = max(K, 1)
    if family == "linear-matrix":
        coeff = FourierField.zeros(m, K, n * n)
        for t in terms:
            i, j = (int(v) for v in _require(t, "entry", "model.terms"))
            sub = FourierField.from_terms(m, K, [(float(t["amplitude"]), t["k"], t.get("phase", "cos"))])
            coeff.coeffs[i * n + j] += sub.coeffs
            if i != j:
                coeff.coeffs[j * n + i] += sub.coeffs
    else:
        coeff = FourierField.from_terms(
            m, K, [(float(t["amplitude"]), t["k"], t.get("phase", "cos")) for t in terms]
        )
    declared = section.get("declared", {})
    return make_model(
        family=family, p=p, coefficient=coeff, n=n,
        mu_source=section.get("mu"), reg_eps=float(section.get("reg_eps", 0.0)),
        declared={k: float(v) for k, v in declared.items()},
        label=section.get("label", ""),
    )


def _build_macro(section: dict, n: int) -> MacroProblem:
    lengths = section.get("lengths", [1.0] * n)
    elements = _require(section, "elements", "macro")
    source = compile_macro_expression(str(_require(section, "source", "macro")), n)
    return MacroProblem(
        n=n,
        lengths=tuple(float(v) for v in np.atleast_1d(lengths)),
        elements=tuple(int(v) for v in np.atleast_1d(elements)),
        source=source,
        p=float(section.get("p", 2.0)),
        newton_tol=float(section.get("newton_tol", 1e-9)),
        max_newton=int(section.get("max_newton", 60)),
    )


def parse_config(data: dict) -> RunConfig:
    if "matrix" not in data:
        raise ConfigError("config needs a [matrix] section")
    try:
        pm = matrix_from_config(data["matrix"])
    except (KeyError, TypeError) as exc:
        raise ConfigError("bad [matrix] section: %s" % exc) from exc
    criterion_radius = int(data["matrix"].get("criterion_radius", 200))

    model = None
    if "model" in data:
        model = _build_model(data["model"])
        if model.m != pm.m:
            raise ConfigError("model coefficient lives on a %d-torus, matrix has m=%d" % (model.m, pm.m))
        if model.n != pm.n:
            raise ConfigError("model n=%d, matrix n=%d" % (model.n, pm.n))

    cell = None
    if "cell" in data:
        sec = data["cell"]
        cell = CellSettings(
            bandlimit=int(_require(sec, "bandlimit", "cell")),
            xi=np.asarray(sec.get("xi", [1.0] * pm.n), dtype=float),
            residual_tol=float(sec["residual_tol"]) if "residual_tol" in sec else None,
            grid_points=int(sec["grid_points"]) if "grid_points" in sec else None,
            max_iterations=int(sec.get("max_iterations", 400)),
        )
        if cell.xi.shape != (pm.n,):
            raise ConfigError("[cell] xi must have %d components" % pm.n)

    macro = None
    if "macro" in data:
        macro = _build_macro(data["macro"], pm.n)
        if model is not None and macro.p == 2.0 and model.p != 2.0:
            macro = MacroProblem(n=macro.n, lengths=macro.lengths, elements=macro.elements,
                                 source=macro.source, p=model.p,
                                 newton_tol=macro.newton_tol, max_newton=macro.max_newton)

    sweep = None
    if "sweep" in data:
        sec = data["sweep"]
        sweep = SweepSettings(
            eta0=float(_require(sec, "eta0", "sweep")),
            levels=int(_require(sec, "levels", "sweep")),
            elements_per_period=float(sec.get("elements_per_period", 20.0)),
            lp=float(sec.get("lp", 2.0)),
        )
        if sweep.levels < 2:
            raise ConfigError("[sweep] needs at least 2 levels")

    tfs = []
    for sec in data.get("test_functions", []):
        psi = str(_require(sec, "psi", "test_functions"))
        compile_macro_expression(psi, pm.n)  # validate against the grammar now
        k = tuple(int(v) for v in _require(sec, "k", "test_functions"))
        if len(k) != pm.m:
            raise ConfigError("test function mode must have %d components" % pm.m)
        phase = sec.get("phase", "cos")
        if phase not in ("cos", "sin"):
            raise ConfigError("test function phase must be 'cos' or 'sin'")
        tfs.append(TestFunctionSpec(psi_source=psi, k=k, phase=phase))

    ergodic_T = [float(v) for v in data.get("ergodic", {}).get("T", [])]

    return RunConfig(pm=pm, model=model, cell=cell, macro=macro, sweep=sweep,
                     test_functions=tfs, ergodic_T=ergodic_T,
                     criterion_radius=criterion_radius, raw=data)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read config %r: %s" % (path, exc)) from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("config %r is not valid TOML: %s" % (path, exc)) from exc
    return parse_config(data)
