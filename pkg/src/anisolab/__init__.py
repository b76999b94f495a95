"""Numerics for the anisotropic slow-diffusion equation ``u_t = sum_i d_i(|d_i u|^(p_i-2) d_i u)``.

Submodules are imported on first attribute access so the command line can
fix the worker count before numba starts.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "derive_exponents": "exponents",
    "validate_admissible": "exponents",
    "ExponentData": "exponents",
    "Grid": "grid",
    "Field": "grid",
    "read_field": "grid",
    "write_field": "grid",
    "evolve": "solver",
    "SolverConfig": "solver",
    "ScaleTransform": "geometry",
    "transform_field": "geometry",
    "krylov_safonov_select": "geometry",
    "build_barenblatt": "fokker_planck",
    "FixedPointConfig": "fokker_planck",
    "IsotropicBarenblatt": "oracle",
    "parse_config": "config",
    "run_scenario": "runner",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
