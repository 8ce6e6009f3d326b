"""Command-line entry point.

Every subcommand accepts the full set of configuration flags (the
kebab-case form of each :class:`~autoclock.io.RunConfig` field) plus
``--config FILE``. Flags override the file, which overrides built-in
defaults.

Exit codes: 0 success, 1 validation failure (failed check or invalid
parameters), 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from dataclasses import fields
from pathlib import Path

from . import __version__, chain, model, quantum, sweep, validate
from .exceptions import ClockError, ConfigError, InvalidParameters
from .io import (
    RunConfig,
    curves_to_csv,
    format_number,
    records_to_csv,
    resolve_config,
    table_to_csv,
    write_text,
)

EXIT_OK, EXIT_VALIDATION, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3

SUBCOMMANDS = ("simulate", "chain", "analytic", "sweep", "figure3", "power-estimate", "validate")

_HELP = {
    "simulate": "evolve the full quantum model and report tick statistics",
    "chain": "exact first-passage statistics of the classical ladder",
    "analytic": "closed-form weak-coupling quantities",
    "sweep": "statistics over a (d, E_c) grid, with optional iso-curves",
    "figure3": "weak-coupling accuracy against dissipated heat",
    "power-estimate": "minimal power for a target tick rate and accuracy (SI units)",
    "validate": "run the self-check battery",
}


def _flag_names(name: str) -> list[str]:
    kebab = name.replace("_", "-")
    names = [f"--{kebab}"]
    if name == "output":
        names.insert(0, "-o")
    # lower-case alias, except where it would read as a different parameter
    if kebab.lower() != kebab and name != "Gamma":
        names.append(f"--{kebab.lower()}")
    return names


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key = value configuration file")
    group = common.add_argument_group("configuration")
    for f in fields(RunConfig):
        if f.name in ("mode", "deterministic"):
            continue
        if f.name == "quick":
            group.add_argument("--quick", dest="quick", action="store_const", const="true",
                               help="reduced validation battery")
            continue
        group.add_argument(*_flag_names(f.name), dest=f.name, metavar="VALUE", default=None)
    common.add_argument("--inject-fault", choices=validate.FAULTS, help=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="autoclock", description="Autonomous thermal clock toolkit.")
    parser.add_argument("--version", action="version", version=f"autoclock {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True, metavar="COMMAND")
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=_HELP[name], description=_HELP[name])
    return parser


def _config_from_args(args) -> RunConfig:
    text = None
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc.strerror or exc}") from None
    flags = {
        f.name: getattr(args, f.name)
        for f in fields(RunConfig)
        if getattr(args, f.name, None) is not None and f.name != "mode"
    }
    return resolve_config(text, flags, mode=args.mode)


def _check_outputs(cfg: RunConfig) -> None:
    paths = [p for p in (cfg.output, cfg.contour_output, cfg.wtd_output, cfg.operator_dump)
             if p not in ("", "-")]
    resolved = [str(Path(p).resolve()) for p in paths]
    if len(set(resolved)) != len(resolved):
        raise ConfigError("output, contour_output, wtd_output and operator_dump must be distinct paths")


def _single_record(params, stats, backend):
    Q_c, Q_h, _ = model.heats(params)
    return sweep.SweepRecord(
        d=params.d, E_c=params.E_c, Q_c=Q_c, Q_h=Q_h, dS_tick=model.entropy_per_tick(params),
        t_tick=stats.t_tick, dt_tick=stats.dt_tick, nu_tick=stats.nu_tick, N=stats.N,
        backend=backend, flags=model.validity_flags(params),
    )


def _warn_validity(params):
    for flag in model.validity_flags(params):
        print(f"warning: parameters violate the {flag.replace('_', '-')} condition", file=sys.stderr)


def run_simulate(cfg: RunConfig) -> int:
    params = cfg.clock_params()
    _warn_validity(params)
    G = quantum.NoclickGenerator(quantum.build_operators(params), frame="rotating")
    if cfg.operator_dump:
        quantum.dump_operator(G.matrix, cfg.operator_dump, name="noclick_generator", frame=G.frame)
    wtd = quantum.evolve(G, quantum.initial_state(params), t_end=cfg.t_end, tol=cfg.rtol,
                         atol=cfg.atol, eps=cfg.eps)
    meta = {k: v for k, v in wtd.metadata.items() if k != "final_state"}
    extra = {"evolution": " ".join(f"{k}={_text(v)}" for k, v in meta.items())}
    if cfg.wtd_output:
        table = {"t": wtd.t, "P0": wtd.P0, "W": wtd.W, "dW": wtd.dW}
        write_text(table_to_csv(table, cfg, extra), cfg.wtd_output)
    stats = quantum.tick_moments_quadrature(wtd)
    write_text(records_to_csv([_single_record(params, stats, "quantum")], cfg, extra), cfg.output)
    return EXIT_OK


def _text(value):
    return format_number(value) if isinstance(value, float) else str(value)


def run_chain(cfg: RunConfig) -> int:
    params = cfg.clock_params()
    _warn_validity(params)
    spec = chain.ChainSpec.from_params(params, cfg.boundary)
    stats = chain.first_passage_moments(spec)
    extra = {"chain": f"boundary={spec.boundary} p_up={format_number(spec.p_up)} "
                      f"p_down={format_number(spec.p_down)}"}
    write_text(records_to_csv([_single_record(params, stats, "chain")], cfg, extra), cfg.output)
    return EXIT_OK


def run_analytic(cfg: RunConfig) -> int:
    params = cfg.clock_params()
    _warn_validity(params)
    vq = model.virtual_qubit(params)
    nu = model.analytic_resolution(params)
    N = model.analytic_accuracy(params)
    columns = {
        "beta_v": [vq.beta_v], "Z_v": [vq.Z_v], "p_up": [vq.p_up], "p_down": [vq.p_down],
        "Q_c": [vq.Q_c], "Q_h": [vq.Q_h], "dS_tick": [vq.delta_S_tick],
        "nu_tick": [nu], "N": [N], "N_large_d": [model.large_d_accuracy(vq.Q_c, vq.Q_h, params.beta_c, params.beta_h)],
        "flags": [";".join(model.validity_flags(params))],
    }
    write_text(table_to_csv(columns, cfg), cfg.output)
    return EXIT_OK


def run_sweep_command(cfg: RunConfig) -> int:
    grid = sweep.SweepGrid(
        d_values=cfg.d_values, E_c_values=cfg.E_c_values, template=cfg.clock_params(),
        backend=cfg.backend, boundary=cfg.boundary, quantum_method=cfg.quantum_method,
        quantum_d_max=cfg.quantum_d_max, rtol=cfg.rtol, atol=cfg.atol, eps=cfg.eps,
        workers=cfg.workers,
    )
    records = sweep.run_sweep(grid)
    failed = sum(not r.ok for r in records)
    if failed:
        print(f"warning: {failed} of {len(records)} grid points failed (see flags column)", file=sys.stderr)
    write_text(records_to_csv(records, cfg), cfg.output)
    if cfg.contour_output:
        curves = []
        if cfg.iso_nu:
            curves += sweep.extract_iso_curves(records, "nu_tick", cfg.iso_nu)
        if cfg.iso_N:
            curves += sweep.extract_iso_curves(records, "N", cfg.iso_N)
        if cfg.iso_rate:
            curves += sweep.fixed_entropy_frontier(records, cfg.iso_rate, cfg.rate_measure)
        if not curves:
            raise ConfigError("contour_output needs at least one of iso_nu, iso_N, iso_rate")
        extra = {
            "contours": "method=linear interpolation on grid edges "
                        f"grid={len(cfg.d_values)}x{len(cfg.E_c_values)} "
                        f"rate_measure={cfg.rate_measure}"
        }
        write_text(curves_to_csv(curves, cfg, extra), cfg.contour_output)
    return EXIT_OK


def run_figure3(cfg: RunConfig) -> int:
    params = cfg.clock_params()
    Q_c = [cfg.Q_c_max * i / (cfg.Q_c_points - 1) for i in range(cfg.Q_c_points)]
    curves = sweep.figure3_curves(cfg.d_list, Q_c, params.beta_c, params.beta_h, params.E_w)
    columns = {"Q_c": Q_c}
    columns.update({f"N_d{d}": list(N) for d, N in curves.items()})
    write_text(table_to_csv(columns, cfg), cfg.output)
    return EXIT_OK


def run_power(cfg: RunConfig) -> int:
    power = model.min_power_estimate(cfg.nu_hz, cfg.accuracy, cfg.T_c_kelvin, cfg.T_h_kelvin)
    columns = {"nu_hz": [cfg.nu_hz], "N": [cfg.accuracy], "T_c_K": [cfg.T_c_kelvin],
               "T_h_K": [cfg.T_h_kelvin], "power_W": [power]}
    write_text(table_to_csv(columns, cfg), cfg.output)
    return EXIT_OK


def run_validate(cfg: RunConfig, fault: str | None = None) -> int:
    def show(result):
        print(result.line() + f"  ({result.seconds:.1f}s)", flush=True)

    if fault:
        with validate.inject_fault(fault):
            results = validate.run_checks(cfg.quick, cfg.workers, progress=show)
    else:
        results = validate.run_checks(cfg.quick, cfg.workers, progress=show)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed"
          + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_VALIDATION if failed else EXIT_OK


_RUNNERS = {
    "simulate": run_simulate,
    "chain": run_chain,
    "analytic": run_analytic,
    "sweep": run_sweep_command,
    "figure3": run_figure3,
    "power-estimate": run_power,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        cfg = _config_from_args(args)
        _check_outputs(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", model.WeakCouplingWarning)
            warnings.simplefilter("ignore", model.ReabsorptionWarning)
            if cfg.mode == "validate":
                return run_validate(cfg, args.inject_fault)
            return _RUNNERS[cfg.mode](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidParameters as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ClockError, ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
