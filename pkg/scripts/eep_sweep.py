"""Entropy / production ratios over cosine perturbations for the built-in models."""

import argparse

from hkflow.diagnostics import eep_ratio_sweep
from hkflow.entropy import make_arctangential, make_log_potential, make_power_law, normalize_equilibrium
from hkflow.expr import Expression
from hkflow.flow import FlowKind
from hkflow.grid import Grid
from hkflow.suites import EEP_AMPLITUDES, cosine_family


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, default=256)
    ap.add_argument("--kind", choices=[k.value for k in FlowKind if k is not FlowKind.FITNESS],
                    default="spherical")
    args = ap.parse_args()
    grid = Grid.circle(args.cells)
    family = cosine_family(grid, EEP_AMPLITUDES)
    models = [make_power_law(1.0), make_log_potential(Expression("cos(2*pi*x)")), make_arctangential()]
    for model in models:
        model = normalize_equilibrium(model, grid).model
        rep = eep_ratio_sweep(model, grid, family, FlowKind(args.kind))
        ratios = " ".join(f"{r:.4g}" for r in rep.ratios)
        print(f"{model.name}: sup {rep.sup_ratio:.5g} at member {rep.argmax_case}\n  {ratios}")


if __name__ == "__main__":
    main()
