"""Command-line entry point: ``rmxpipe <subcommand> ...``.

Every subcommand is a thin wrapper over library calls; results go to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import kernel, rmxio, sched, spectrum, synth
from .core import CaseDefinition, EnergyMesh, RmxError
from .eigen import diagonalize_block, solve_case, surface_amplitudes

log = logging.getLogger("rmxpipe")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _shapes(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        n, _, m = item.strip().lower().partition("x")
        out.append((int(n), int(m)))
    return out


def _pair(text: str) -> tuple[float, float]:
    lo, hi = _floats(text)
    return lo, hi


def _write(path, data: bytes | str) -> None:
    if isinstance(data, str):
        data = data.encode()
    Path(path).write_bytes(data)
    log.info("wrote %s (%d bytes)", path, len(data))


def _case_from_args(args) -> CaseDefinition:
    if getattr(args, "case", None):
        return synth.read_case(args.case)
    return CaseDefinition(
        args.channels,
        args.poles,
        (args.emin, args.emax),
        boundary_seed=args.seed + 1 if args.boundary_seed is None else args.boundary_seed,
        hamiltonian_seed=args.seed,
    )


def _add_case_flags(p):
    p.add_argument("--case", help="case file (key=value lines); overrides the flags below")
    p.add_argument("--channels", type=int, default=20)
    p.add_argument("--poles", type=int, default=200)
    p.add_argument("--seed", type=int, default=0, help="Hamiltonian seed")
    p.add_argument("--boundary-seed", type=int, default=None, help="defaults to seed+1")
    p.add_argument("--emin", type=float, default=-2.0, help="lowest pole energy (Ry)")
    p.add_argument("--emax", type=float, default=8.0, help="highest pole energy (Ry)")


def _mesh_for(args, poles) -> EnergyMesh:
    start = args.start if args.start is not None else float(poles.min()) - 0.5
    stop = args.stop if args.stop is not None else float(poles.max()) + 0.5
    return spectrum.mesh_avoiding_poles(start, stop, args.points, poles)


# -- subcommands -----------------------------------------------------------------------


def cmd_gen(args):
    case = _case_from_args(args)
    es, amps = solve_case(case)
    rmxio.write_hfile(args.out, case, es, amps)
    log.info("wrote %s", args.out)
    if args.case_out:
        synth.write_case(args.case_out, case)
    if args.dipole_out:
        rmxio.write_dipole(args.dipole_out, synth.build_dipole_blocks(case, args.dipole_states))
        log.info("wrote %s", args.dipole_out)


def cmd_diag(args):
    (data,) = rmxio.read_hfile(args.hfile, "root_read_broadcast", 1)
    es = diagonalize_block(synth.build_hamiltonian(data.case), name=str(args.hfile))
    drift = float(np.max(np.abs(es.eigenvalues - data.eigensystem.eigenvalues)))
    if args.regenerate:
        proj = synth.build_boundary_projector(data.case)
        rmxio.write_hfile(args.hfile, data.case, es, surface_amplitudes(proj, es))
        log.info("regenerated eigendata in %s", args.hfile)
        return 0
    ortho = data.eigensystem.orthogonality_error()
    log.info("eigenvalue drift %.3e Ry, stored orthogonality error %.3e", drift, ortho)
    if drift > 1e-10 or ortho > 1e-10:
        raise RmxError(f"{args.hfile}: stored eigendata inconsistent (drift {drift:.2e}, ortho {ortho:.2e})")
    return 0


def cmd_sweep(args):
    data = rmxio.read_hfile(args.hfile, args.read_mode, 1)[0]
    poles = data.eigensystem.eigenvalues
    mesh = _mesh_for(args, poles)
    s = spectrum.sweep_response(data.amplitudes, poles, mesh, args.variant, n_workers=args.workers)
    spectrum.write_spectrum_csv(args.out, s)


def cmd_convolve(args):
    s = spectrum.read_spectrum_csv(args.input)
    out = spectrum.convolve_gaussian(s, spectrum.mev_to_ry(args.fwhm_mev))
    spectrum.write_spectrum_csv(args.out, out)


def cmd_admix(args):
    spectra = [spectrum.read_spectrum_csv(p) for p in args.inputs]
    spectrum.write_spectrum_csv(args.out, spectrum.admix(spectra, _floats(args.weights)))


def cmd_fit(args):
    s = spectrum.read_spectrum_csv(args.input)
    fit = spectrum.fit_resonance(s, _pair(args.window))
    _write(args.out, json.dumps(asdict(fit), indent=2) + "\n")


def cmd_reduce(args):
    size = rmxio.reduce_dipole(args.input, _ints(args.keep), args.out)
    log.info("reduced dipole file is %d bytes", size)


def cmd_bench_scale(args):
    case = _case_from_args(args)
    es, _ = solve_case(case)
    mesh = _mesh_for(args, es.eigenvalues)
    report = sched.run_scaling_bench(case, mesh, _ints(args.workers), args.variant, repeats=args.repeats)
    _write(args.out, sched.render_report(report, "csv"))
    sys.stdout.write(sched.render_report(report, "text-table").decode())


def cmd_bench_kernel(args):
    variants = [v.strip() for v in args.variants.split(";")]
    rows = kernel.bench_kernels(_shapes(args.shapes), variants, repeats=args.repeats, seed=args.seed)
    _write(args.out, kernel.kernel_table_csv(rows))
    sys.stdout.write(kernel.kernel_table_csv(rows))


def cmd_report(args):
    if args.input:
        report = sched.parse_report_csv(Path(args.input).read_bytes())
    else:
        report = sched.TimingReport.from_timings(_ints(args.workers), _floats(args.seconds))
    rendered = sched.render_report(report, args.format)
    if args.out:
        _write(args.out, rendered)
    else:
        sys.stdout.write(rendered.decode())


def cmd_stripe(args):
    policy = rmxio.StripePolicy.from_env()
    for p in args.files:
        size = Path(p).stat().st_size
        sys.stdout.write(f"{p}\t{size}\t{rmxio.stripe_count_for_size(size, policy)}\n")
    if args.trace_out:
        trace = []
        for p in args.files:
            trace.extend(rmxio.chunked_read(p, args.chunk_size, args.readers)[1])
        _write(args.trace_out, rmxio.format_trace_csv(trace))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmxpipe", description="Outer-region R-matrix desk pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize a case and write its H-file")
    _add_case_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--case-out")
    p.add_argument("--dipole-out")
    p.add_argument("--dipole-states", type=int, default=10)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("diag", help="check (or regenerate) H-file eigendata")
    p.add_argument("hfile")
    p.add_argument("--regenerate", action="store_true")
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("sweep", help="response spectrum over an energy mesh")
    p.add_argument("--hfile", required=True)
    p.add_argument("--start", type=float, help="Ry")
    p.add_argument("--stop", type=float, help="Ry")
    p.add_argument("--points", type=int, default=4096)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--variant", default="gemm")
    p.add_argument("--read-mode", choices=rmxio.READ_MODES, default="root_read_broadcast")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("convolve", help="Gaussian broadening")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--fwhm-mev", type=float, default=60.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convolve)

    p = sub.add_parser("admix", help="weighted average of spectra")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--weights", required=True, help="e.g. 2,1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_admix)

    p = sub.add_parser("fit", help="Lorentzian width fit")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--window", required=True, help="lo,hi in Ry")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("reduce", help="keep a subset of dipole-file states")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--keep", required=True, help="e.g. 0,1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("bench-scale", help="strong-scaling sweep benchmark")
    _add_case_flags(p)
    p.add_argument("--start", type=float)
    p.add_argument("--stop", type=float)
    p.add_argument("--points", type=int, default=200_000)
    p.add_argument("--workers", default="1,2,4")
    p.add_argument("--variant", default="gemm")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_scale)

    p = sub.add_parser("bench-kernel", help="kernel variant timings")
    p.add_argument("--shapes", default="64x512,267x258,308x300")
    p.add_argument("--variants", default="naive;gemm;gemm_blocked(32)", help="';'-separated")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_kernel)

    p = sub.add_parser("report", help="render a timing report")
    p.add_argument("--in", dest="input", help="timing CSV from bench-scale")
    p.add_argument("--workers", help="worker counts, e.g. 1024,2048")
    p.add_argument("--seconds", help="wall seconds per worker count")
    p.add_argument("--format", choices=("text-table", "csv"), default="text-table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("stripe", help="stripe counts (and optional read trace) for files")
    p.add_argument("files", nargs="+")
    p.add_argument("--chunk-size", type=int, default=1 << 20)
    p.add_argument("--readers", type=int, default=4)
    p.add_argument("--trace-out")
    p.set_defaults(func=cmd_stripe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "report" and not args.input and not (args.workers and args.seconds):
        parser.error("report needs --in or both --workers and --seconds")
    try:
        return args.func(args) or 0
    except (RmxError, OSError, ValueError) as exc:
        sys.stderr.write(f"rmxpipe {args.command}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
