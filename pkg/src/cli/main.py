"""
Gate Energetics - CLI
Órdenes para simular, barrer, ajustar y calibrar; cada una escribe CSV o JSON.
"""

import argparse
import logging
import math
import re
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from colorama import Fore, Style
from colorama import just_fix_windows_console

from core import calibration, energetics, fitting, io_formats, synthetic, toy_model
from core.dynamics import Postselect, dynamics_frame
from core.error_processor import GateEnergeticsError, InputFileError, get_error_processor
from core.log_manager import get_log_manager
from core.run_config import RunConfig
from core.settings import APP_NAME, APP_VERSION

logger = logging.getLogger("gate_energetics.cli")

_THETA = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*(\*?\s*pi)?\s*$")


def parse_theta(text: str) -> float:
    """Ángulo en radianes; acepta '1.6pi', 'pi', '2*pi' o un número"""
    match = _THETA.match(text)
    if not match or (match.group(1) is None and match.group(2) is None):
        raise argparse.ArgumentTypeError(f"invalid angle {text!r}")
    value = float(match.group(1)) if match.group(1) is not None else 1.0
    return value * math.pi if match.group(2) else value


def _info(args: argparse.Namespace, message: str) -> None:
    if not args.quiet:
        print(f"{Fore.GREEN}{message}{Style.RESET_ALL}")


def _warn(message: str) -> None:
    print(f"{Fore.YELLOW}warning: {message}{Style.RESET_ALL}", file=sys.stderr)


def _out(args: argparse.Namespace, config: RunConfig, default: str) -> Path:
    return Path(args.out or config.out or default)


# --- órdenes -----------------------------------------------------------------

def cmd_simulate_power(args: argparse.Namespace, config: RunConfig) -> int:
    theta = args.theta if args.theta is not None else config.dynamics.theta
    traces = energetics.power_traces(theta, config.rates(), config.setup())
    t_ns = traces.times * 1e9 + config.delay_ns
    out = _out(args, config, "power.csv")
    io_formats.write_csv(out, {
        "t_ns": t_ns,
        "flux_none": traces.traces[Postselect.NONE].flux,
        "flux_g": traces.traces[Postselect.G].flux,
        "flux_e": traces.traces[Postselect.E].flux,
    }, io_formats.FLUX_COLUMNS)

    postselect = Postselect(args.postselect)
    frame = dynamics_frame(traces.rho, traces.effects[postselect], config.delay_ns)
    io_formats.write_csv(io_formats.dynamics_path(out), frame, io_formats.DYNAMICS_COLUMNS)

    n_out = energetics.integrate_photon_number(traces.traces[Postselect.NONE])
    _info(args, f"theta={theta / math.pi:.3f}pi n_in={traces.n_in:.4f} "
                f"delta_n={n_out - traces.n_in:+.5f} -> {out}")
    return 0


def cmd_sweep_delta_n(args: argparse.Namespace, config: RunConfig) -> int:
    thetas = energetics.sweep_thetas(config.sweep.theta_max, config.sweep.steps)
    sweep = energetics.delta_n_sweep(thetas, config.rates(), config.setup(),
                                     chunk_size=config.sweep.chunk_size, progress=not args.quiet)
    out = _out(args, config, "sweep.csv")
    io_formats.write_csv(out, energetics.sweep_rows(sweep), io_formats.SWEEP_COLUMNS)
    errors = energetics.sweep_errors(sweep)
    if errors:
        _warn(f"{len(errors)} sweep point(s) without result (see the log for details)")
    _info(args, f"{len(thetas)} rotation angles -> {out}")
    return 0


def cmd_toy_distributions(args: argparse.Namespace, config: RunConfig) -> int:
    theta = args.theta if args.theta is not None else config.toy.theta
    table = toy_model.distribution_table(theta, config.gamma_a_t_d, config.toy.convention)
    out = _out(args, config, "toy_distributions.csv")
    io_formats.write_csv(out, table, io_formats.DISTRIBUTION_COLUMNS)
    _info(args, f"photon distributions at theta={theta / math.pi:.3f}pi -> {out}")
    return 0


def cmd_toy_backaction(args: argparse.Namespace, config: RunConfig) -> int:
    toy = config.toy
    updates = {}
    if args.theta_max is not None:
        updates["backaction_theta_max"] = args.theta_max
    if args.steps is not None:
        updates["backaction_steps"] = args.steps
    if updates:
        config = config.model_copy(update={"toy": toy.model_copy(update=updates)})
    points = toy_model.backaction_difference(config.backaction_thetas(), config.gamma_a_t_d,
                                             config.toy.convention)
    out = _out(args, config, "toy_backaction.csv")
    io_formats.write_csv(out, {
        "theta_over_pi": [p.theta / math.pi for p in points],
        "dn_g": [p.dn_g for p in points],
        "dn_e_shifted_rescaled": [p.dn_e_shifted_rescaled for p in points],
        "difference": [p.difference for p in points],
    }, io_formats.BACKACTION_COLUMNS)
    _info(args, f"{len(points)} backaction points -> {out}")
    return 0


def cmd_fit_reflection(args: argparse.Namespace, config: RunConfig) -> int:
    frame = io_formats.read_csv(_required_input(args), io_formats.REFLECTION_COLUMNS)
    points = [
        fitting.ReflectionPoint(2 * math.pi * row.delta_hz, complex(row.re_r, row.im_r))
        for row in frame.itertuples(index=False)
    ]
    fixed = fitting.BlochParams.from_constants(config.constants, config.reflection.omega_a)
    fit = fitting.fit_reflection(points, fixed, config.reflection.init_gamma_a,
                                 config.reflection.init_omega_a)
    out = _out(args, config, "reflection_fit.json")
    io_formats.write_json(out, fit.to_dict())
    _info(args, f"Gamma_a/2pi={fit.gamma_a / (2 * math.pi):.1f} Hz "
                f"Omega_a/2pi={fit.omega_a / (2 * math.pi):.1f} Hz -> {out}")
    return 0


def cmd_calibrate_readout(args: argparse.Namespace, config: RunConfig) -> int:
    frame = io_formats.read_csv(_required_input(args), io_formats.IQ_COLUMNS)
    samples = frame["i_volts"].to_numpy() + 1j * frame["q_volts"].to_numpy()
    readout = config.readout
    model = calibration.em_fit(samples, readout.k, config.seed, readout.max_iter, readout.tol)
    report: Dict = {"model": model.to_dict()}
    if readout.k >= 2:
        fidelity = calibration.fidelity_report(model, samples, config.p_outcome_given_state(),
                                               readout.radius_factor)
        report.update(fidelity.to_dict())
    else:
        labels = calibration.classify_with_rejection(model, samples, readout.radius_factor)
        report["rejection_fraction"] = float(np.mean(labels == calibration.REJECTED))

    if args.decay:
        decay = io_formats.read_csv(args.decay, io_formats.DECAY_COLUMNS)
        fit = calibration.fit_conditional_model(decay["t_w_us"].to_numpy() * 1e-6,
                                                decay["probability"].to_numpy(),
                                                config.constants.T1, config.constants.p_g_th)
        report["conditional_model"] = {"P_xx0": fit.P_gg0, "P_xy0": fit.P_ge0,
                                       "residual_rms": fit.residual_rms}

    out = _out(args, config, "readout.json")
    io_formats.write_json(out, report)
    _info(args, f"readout model with {readout.k} components -> {out}")
    return 0


def cmd_calibrate_power(args: argparse.Namespace, config: RunConfig) -> int:
    source = _required_input(args)
    frame = io_formats.read_csv(source, io_formats.POWER_COLUMNS)
    scalars = io_formats.read_sidecar(args.sidecar or io_formats.sidecar_path(source))
    record = calibration.PowerRecord(
        p_raw=frame["p_raw_W"].to_numpy(),
        p_vac=scalars["p_vac"],
        p_ref=scalars["p_ref"],
        p_c_plus_vac=scalars["p_c_plus_vac"],
        omega_a=scalars["omega_a"],
        gamma_a=scalars["gamma_a"],
    )
    out = _out(args, config, "flux.csv")
    io_formats.write_csv(out, {"t_ns": frame["t_ns"].to_numpy(), "flux": calibration.power_to_flux(record)},
                         io_formats.CALIBRATED_FLUX_COLUMNS)
    _info(args, f"gain G={record.gain:.4g} W s/photon -> {out}")
    return 0


def cmd_gen_synthetic(args: argparse.Namespace, config: RunConfig) -> int:
    seed = config.seed
    constants = config.constants
    out = _out(args, config, f"synthetic_{args.kind}.csv")

    if args.kind == "reflection":
        params = fitting.BlochParams.from_constants(constants, config.reflection.omega_a)
        deltas = synthetic.reflection_detunings(params.gamma_2, config.reflection.points,
                                                config.reflection.span)
        points = synthetic.generate_reflection_points(params, deltas, config.reflection.noise, seed)
        io_formats.write_csv(out, {
            "delta_hz": [p.delta / (2 * math.pi) for p in points],
            "re_r": [p.r.real for p in points],
            "im_r": [p.r.imag for p in points],
        }, io_formats.REFLECTION_COLUMNS)
    elif args.kind == "iq":
        transit = args.transit_fraction if args.transit_fraction is not None else config.readout.transit_fraction
        data = synthetic.generate_iq_samples(config.readout.samples, sigma_iq=config.readout.sigma_iq,
                                             seed=seed, transit_fraction=transit)
        io_formats.write_csv(out, {"i_volts": data.samples.real, "q_volts": data.samples.imag},
                             io_formats.IQ_COLUMNS)
    elif args.kind == "decay":
        t_w = synthetic.waiting_times(constants.T1)
        probability = synthetic.generate_decay_data(t_w, constants.T1, constants.p_g_th,
                                                    constants.P_gg0, 0.0, noise=0.005, seed=seed)
        io_formats.write_csv(out, {"t_w_us": t_w * 1e6, "probability": probability},
                             io_formats.DECAY_COLUMNS)
    else:
        theta = args.theta if args.theta is not None else config.dynamics.theta
        setup = config.setup()
        spec = setup.spec(theta)
        trace = energetics.flux_trace(spec, config.rates(), setup.grid, p_e_initial=setup.p_e_initial)
        omega_a = float(spec.rabi(constants.t_d / 2))
        record = synthetic.forward_power_record(trace.flux, config.power.gain, omega_a,
                                                constants.gamma_a, config.power.p_vac, config.power.p_c)
        io_formats.write_csv(out, {"t_ns": trace.grid.times * 1e9, "p_raw_W": record.p_raw},
                             io_formats.POWER_COLUMNS)
        io_formats.write_sidecar(io_formats.sidecar_path(out), {
            "p_vac": record.p_vac,
            "p_ref": record.p_ref,
            "p_c_plus_vac": record.p_c_plus_vac,
            "omega_a": record.omega_a,
            "gamma_a": record.gamma_a,
        })

    _info(args, f"synthetic {args.kind} data (seed {seed}) -> {out}")
    return 0


def _required_input(args: argparse.Namespace) -> Path:
    if not args.input:
        raise InputFileError("--in is required for this command", path="")
    return Path(args.input)


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "simulate-power": cmd_simulate_power,
    "sweep-delta-n": cmd_sweep_delta_n,
    "toy-distributions": cmd_toy_distributions,
    "toy-backaction": cmd_toy_backaction,
    "fit-reflection": cmd_fit_reflection,
    "calibrate-readout": cmd_calibrate_readout,
    "calibrate-power": cmd_calibrate_power,
    "gen-synthetic": cmd_gen_synthetic,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="64-bit random seed")
    common.add_argument("--out", help="output file")
    common.add_argument("--delay-ns", type=float, dest="delay_ns", help="time shift applied to emitted traces")
    common.add_argument("--quiet", action="store_true", help="no progress bars or summaries")

    parser = argparse.ArgumentParser(prog=APP_NAME, description="Energetics of a driven qubit gate")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-power", parents=[common], help="flux traces for one rotation angle")
    p.add_argument("--theta", type=parse_theta)
    p.add_argument("--postselect", choices=[o.value for o in Postselect], default=Postselect.NONE.value)

    p = sub.add_parser("sweep-delta-n", parents=[common], help="delta n versus rotation angle")
    p.add_argument("--theta-max", type=parse_theta, dest="theta_max")
    p.add_argument("--steps", type=int)

    p = sub.add_parser("toy-distributions", parents=[common], help="post-selected photon distributions")
    p.add_argument("--theta", type=parse_theta)

    p = sub.add_parser("toy-backaction", parents=[common], help="backaction difference versus angle")
    p.add_argument("--theta-max", type=parse_theta, dest="theta_max")
    p.add_argument("--steps", type=int)

    p = sub.add_parser("fit-reflection", parents=[common], help="fit Gamma_a and Omega_a")
    p.add_argument("--in", dest="input")

    p = sub.add_parser("calibrate-readout", parents=[common], help="IQ mixture, rejection and fidelities")
    p.add_argument("--in", dest="input")
    p.add_argument("--decay", help="CSV t_w_us, probability for the conditional model")

    p = sub.add_parser("calibrate-power", parents=[common], help="raw power to photon flux")
    p.add_argument("--in", dest="input")
    p.add_argument("--sidecar", help="YAML scalars (defaults to the input with .yaml suffix)")

    p = sub.add_parser("gen-synthetic", parents=[common], help="synthetic inputs with known parameters")
    p.add_argument("--kind", choices=["reflection", "iq", "power", "decay"], required=True)
    p.add_argument("--theta", type=parse_theta)
    p.add_argument("--transit-fraction", type=float, dest="transit_fraction")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    just_fix_windows_console()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    get_log_manager()
    try:
        config = RunConfig.load(args.config).with_overrides(
            seed=args.seed,
            delay_ns=args.delay_ns,
            theta_max=getattr(args, "theta_max", None) if args.command == "sweep-delta-n" else None,
            steps=getattr(args, "steps", None) if args.command == "sweep-delta-n" else None,
        )
        return COMMANDS[args.command](args, config)
    except Exception as exc:
        processor = get_error_processor()
        record = processor.process_error(exc, context={"command": args.command})
        if not isinstance(exc, GateEnergeticsError):
            logger.exception("Error inesperado")
        print(f"{Fore.RED}error: {record['message']}{Style.RESET_ALL}", file=sys.stderr)
        return processor.exit_code(exc)
