"""Pfaffian, Brouwer degree and Whitney-cube numerics."""

import json as _json

from ._curvlab import (
    ConfigError,
    Error,
    audit_names,
    box_dimension,
    brouwer_degree,
    ellipsoid_band,
    fractal_area,
    gauss_map,
    integrate_top_form,
    pfaffian,
    run,
    scenario_schema,
    set_thread_count,
    sphere_band,
    validate_scenario,
    whitney,
)


def run_scenario(config, out_dir):
    """Run a scenario given as a dict or JSON text; returns (exit_code, result)."""
    text = config if isinstance(config, str) else _json.dumps(config)
    r = run(text, str(out_dir))
    return r["exit_code"], r["result"]


__all__ = [
    "ConfigError",
    "Error",
    "audit_names",
    "box_dimension",
    "brouwer_degree",
    "ellipsoid_band",
    "fractal_area",
    "gauss_map",
    "integrate_top_form",
    "pfaffian",
    "run",
    "run_scenario",
    "scenario_schema",
    "set_thread_count",
    "sphere_band",
    "validate_scenario",
    "whitney",
]
