"""Command-line front end.

Every subcommand reads an optional plain-text config ("key = value", '#'
comments), applies command-line overrides, writes CSV files (17 significant
digits) and a run manifest into the output directory.

Exit codes: 0 success, 1 domain error, 2 convergence error, 3 audit or
acceptance failure, 64 usage error.
"""
import argparse
import csv
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy

from . import __version__
from .errors import AuditFailure, ConvergenceError, DomainError, KacError

EXIT_OK, EXIT_DOMAIN, EXIT_CONVERGENCE, EXIT_AUDIT, EXIT_USAGE = 0, 1, 2, 3, 64


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    beta: float = 1.5
    L: float = 20.0
    n_points: int = 801
    boundary: str = "neumann"
    epsilon: float = 0.05
    R: float = 1.0
    T: float = 1.0
    S: float = 50.0
    kappa: float = 2.0
    lam: float = 1.0
    zeta: float = None
    ell_minus: float = 1.0
    ell_plus: float = 4.0
    alpha_star: float = 0.01
    dt: float = 0.05
    output_dir: str = "kacfront-out"
    seed: int = 0

    def validate(self):
        for k in ("beta", "L", "epsilon", "R", "T", "S", "kappa", "lam", "ell_minus",
                  "ell_plus", "alpha_star", "dt"):
            if not getattr(self, k) > 0:
                raise DomainError(f"{k} must be positive")
        if self.zeta is not None and not self.zeta > 0:
            raise DomainError("zeta must be positive")
        if self.n_points < 3:
            raise DomainError("n_points must be at least 3")
        if not self.lam < self.kappa:
            raise DomainError("need lam < kappa")
        if self.boundary not in ("neumann", "truncated_line", "periodic"):
            raise DomainError(f"unknown boundary {self.boundary!r}")
        return self


_ALIASES = {"lambda": "lam", "eps": "epsilon", "boundary_mode": "boundary", "out": "output_dir"}


def _coerce(name, text):
    types = {f.name: f.type for f in fields(RunConfig)}
    t = types[name]
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    try:
        if t in (int, "int"):
            return int(text)
        if t in (str, "str"):
            return text
        return float(text)
    except ValueError:
        raise UsageError(f"bad value for {name}: {text!r}")


def parse_config_text(text):
    out = {}
    valid = {f.name for f in fields(RunConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        k = _ALIASES.get(k.strip(), k.strip())
        if k not in valid:
            raise UsageError(f"config line {lineno}: unknown key {k!r}")
        out[k] = _coerce(k, v)
    return out


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        if not os.path.isfile(path):
            raise UsageError(f"config file not found: {path}")
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return RunConfig(**values).validate()


# ---------------------------------------------------------------- output helpers

def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_summary(path, items):
    write_csv(path, ["key", "value"], list(items.items()))


def write_manifest(directory, command, cfg, seconds, status, extra=None):
    lines = [f"command = {command}", f"exit_status = {status}"]
    lines += [f"config.{k} = {fmt(v)}" for k, v in asdict(cfg).items()]
    lines += [f"version.kacfront = {__version__}", f"version.numpy = {np.__version__}",
              f"version.scipy = {scipy.__version__}",
              f"version.python = {platform.python_version()}",
              f"wall_time_seconds = {seconds:.3f}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {fmt(v)}")
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------- shared setup

def _instanton(cfg):
    from .grid import Grid1D
    from .statics import ModelParams, compute_instanton
    grid = Grid1D(cfg.L, cfg.n_points, cfg.boundary)
    return compute_instanton(ModelParams(cfg.beta), grid)


def _analysis_params(cfg):
    from .analysis import AnalysisParams
    return AnalysisParams(zeta=cfg.zeta, ell_minus=cfg.ell_minus, ell_plus=cfg.ell_plus,
                          epsilon=cfg.epsilon, kappa=cfg.kappa, lam=cfg.lam, S=cfg.S,
                          alpha_star=cfg.alpha_star)


def _problem(cfg, inst):
    from .macro import MacroProblem, mobility
    return MacroProblem(cfg.R, cfg.T, inst.F_bar, mobility(inst), cfg.epsilon)


def _profile(args, cfg, inst):
    from .grid import load_profile
    from .statics import multi_instanton
    if getattr(args, "profile", None):
        x, m = load_profile(args.profile)
        if x.size != inst.grid.n_points or abs(x[-1] - inst.grid.L) > 1e-9:
            raise DomainError("profile nodes do not match the configured grid")
        return m
    centers = [float(c) for c in args.centers.split(",")] if args.centers else [0.0]
    return multi_instanton(inst, centers, inst.grid, min_gap=0)


def _slab_rows(rep):
    e = rep.slab_edges
    return [(j, e[j], e[j + 1], rep.slab_costs[j], rep.good[j]) for j in range(len(rep.slab_costs))]


def _report_summary(rep, F_bar):
    return {"total_cost": rep.total, "total_cost_over_F": rep.total / F_bar,
            "free_energy_change": rep.free_energy_change, "gradient_term": rep.gradient_term,
            "reversibility_rhs": rep.reversibility_rhs,
            "reversibility_slack": rep.reversibility_slack,
            "quadratic_cost": rep.quadratic_cost, "bad_slabs": rep.bad_count,
            "delta": rep.delta}


# ---------------------------------------------------------------- subcommands

def cmd_instanton(args, cfg, out):
    from .statics import calibrate_ell_star
    inst = _instanton(cfg)
    x = inst.grid.x
    write_csv(os.path.join(out, "instanton.csv"), ["x", "m", "dm"],
              zip(x, inst.profile, inst.mprime))
    write_summary(os.path.join(out, "summary.csv"), {
        "beta": cfg.beta, "m_beta": inst.m_beta, "decay_alpha": inst.decay_alpha,
        "decay_a": inst.decay_a, "fit_residual": inst.fit_residual,
        "fit_window_lo": inst.fit_window[0], "fit_window_hi": inst.fit_window[1],
        "residual": inst.residual, "sweeps": inst.sweeps,
        "norm_mprime_nu_sq": inst.norm_mprime_nu_sq, "F_bar": inst.F_bar,
        "mobility": 4 / inst.norm_mprime_nu_sq, "ell_star": calibrate_ell_star(inst)})
    print(f"m_beta = {inst.m_beta:.12g}, F(m_bar) = {inst.F_bar:.10g}, alpha = {inst.decay_alpha:.6g}")
    return EXIT_OK


def cmd_action_eval(args, cfg, out):
    from .action import action
    from .dynamics import Trajectory
    from .macro import build_moving_instanton
    inst = _instanton(cfg)
    ap = _analysis_params(cfg)
    if args.trajectory:
        traj = Trajectory.load(args.trajectory)
    else:
        traj = build_moving_instanton(_problem(cfg, inst), inst, inst.grid, dt=max(cfg.dt, 0.5))
    rep = action(traj, inst.params, cfg.S, ap.delta)
    write_csv(os.path.join(out, "slabs.csv"), ["slab", "t_start", "t_end", "cost", "good"],
              _slab_rows(rep))
    write_csv(os.path.join(out, "cost_rate.csv"), ["t", "rate", "cumulative"],
              zip(rep.times, rep.rate, rep.cumulative))
    s = _report_summary(rep, inst.F_bar)
    if not args.trajectory:
        s["moving_instanton_reference"] = 0.25 * inst.norm_mprime_nu_sq * cfg.R ** 2 / cfg.T
    write_summary(os.path.join(out, "summary.csv"), s)
    print(f"I = {rep.total:.10g} ({rep.bad_count} bad slabs)")
    return EXIT_OK


def cmd_contours(args, cfg, out):
    from .analysis import block_average, extract_contours, phase_indicator
    inst = _instanton(cfg)
    ap = _analysis_params(cfg)
    m = _profile(args, cfg, inst)
    dec = extract_contours(m, inst.grid, inst, ap)
    zeta = ap.zeta_for(inst)
    e_m, avg_m = block_average(m, inst.grid, cfg.ell_minus)
    e_p, eta = phase_indicator(m, inst.grid, inst.m_beta, zeta, cfg.ell_plus)
    write_csv(os.path.join(out, "contours.csv"), ["x_minus", "x_plus", "kind", "weight"],
              [(c.x_minus, c.x_plus, c.kind, c.weight) for c in dec.contours])
    write_csv(os.path.join(out, "blocks_minus.csv"), ["left_edge", "average"], zip(e_m, avg_m))
    write_csv(os.path.join(out, "indicator_plus.csv"), ["left_edge", "eta"], zip(e_p, eta))
    b = dec.bounds(_problem(cfg, inst).P, inst.F_bar, inst.decay_alpha, 0.01, 1.0)
    write_summary(os.path.join(out, "summary.csv"), b)
    print(f"{len(dec)} contours, {len(dec.mixed)} mixed")
    return EXIT_OK


def cmd_centers(args, cfg, out):
    from .analysis import distance_to_manifold, find_centers
    inst = _instanton(cfg)
    m = _profile(args, cfg, inst)
    cs = find_centers(m, inst.grid, inst, params=_analysis_params(cfg))
    write_csv(os.path.join(out, "centers.csv"), ["index", "sigma", "center", "residual"],
              [(i + 1, s, c, r) for i, (s, c, r) in enumerate(zip(cs.sigma, cs.centers, cs.residuals))])
    d = distance_to_manifold(m, inst.grid, inst, cs.centers)
    write_summary(os.path.join(out, "summary.csv"), {"count": len(cs.centers), "distance_nu": d})
    print("centers: " + ", ".join(f"{c:.12g}" for c in cs.centers))
    return EXIT_OK


def cmd_spectral_gap(args, cfg, out):
    from .analysis import spectral_gap, spectral_gap_dense
    from .grid import Grid1D
    from .statics import compute_instanton
    inst = _instanton(cfg)
    sg = spectral_gap(inst, seed=cfg.seed)
    items = {"omega": sg.omega, "zero_mode_residual": sg.zero_mode_residual,
             "iterations": sg.iterations, "residual": sg.residual}
    if args.dense:
        coarse = compute_instanton(inst.params, Grid1D.from_spacing(10.0, 0.2, cfg.boundary))
        dense, ev = spectral_gap_dense(coarse)
        items["dense_omega_101_nodes"] = dense
        items["relative_difference"] = abs(sg.omega - dense) / dense
        write_csv(os.path.join(out, "dense_spectrum.csv"), ["k", "eigenvalue"], enumerate(ev))
    write_summary(os.path.join(out, "spectral_gap.csv"), items)
    write_csv(os.path.join(out, "modes.csv"), ["x", "zero_mode", "top_eigvec"],
              zip(inst.grid.x, sg.zero_mode, sg.eigvec))
    print(f"omega = {sg.omega:.10g}")
    return EXIT_OK


def cmd_optimize(args, cfg, out):
    from .macro import macro_cost, optimal_nucleation_count
    inst = _instanton(cfg)
    pb = _problem(cfg, inst)
    n_opt, w = optimal_nucleation_count(pb, args.n_max)
    n_max = args.n_max or max(10, 2 * n_opt + 2)
    write_csv(os.path.join(out, "w_n.csv"), ["n", "w_n"],
              [(n, macro_cost(pb, n)) for n in range(n_max + 1)])
    write_summary(os.path.join(out, "summary.csv"), {
        "R": pb.R, "T": pb.T, "V": pb.V, "mu": pb.mu, "F_bar": pb.F_bar, "ratio": pb.ratio,
        "n_opt": n_opt, "w_opt": w})
    print(f"minimizer n = {n_opt}, w_n = {w:.17g}")
    return EXIT_OK


def _strategy(args, cfg, inst):
    from .macro import build_upper_bound_strategy, optimal_nucleation_count
    pb = _problem(cfg, inst)
    n = args.n if args.n is not None else optimal_nucleation_count(pb)[0]
    return pb, build_upper_bound_strategy(pb, n, inst)


def cmd_strategy(args, cfg, out):
    from .action import action
    from .macro import macro_cost, optimal_nucleation_count
    inst = _instanton(cfg)
    ap = _analysis_params(cfg)
    pb, st = _strategy(args, cfg, inst)
    rep = action(st.segments, inst.params, cfg.S, ap.delta)
    write_csv(os.path.join(out, "slabs.csv"), ["slab", "t_start", "t_end", "cost", "good"],
              _slab_rows(rep))
    st.schedule.save(os.path.join(out, "schedule.csv"))
    rows = []
    for t in np.linspace(0, st.horizon, args.snapshots):
        prof = st.profile_at(min(t, st.horizon))
        rows.extend((t, x, m) for x, m in zip(st.grid.x[::args.space_stride],
                                               prof[::args.space_stride]))
    write_csv(os.path.join(out, "snapshots.csv"), ["t", "x", "m"], rows)
    s = _report_summary(rep, inst.F_bar)
    s.update({"n": st.n, "w_n": macro_cost(pb, st.n), "inf_w": optimal_nucleation_count(pb)[1],
              "horizon": st.horizon, "L": st.grid.L})
    s.update({k: v for k, v in st.info.items() if np.isscalar(v)})
    write_summary(os.path.join(out, "summary.csv"), s)
    print(f"n = {st.n}: I = {rep.total:.10g}, w_n = {s['w_n']:.10g}, inf w = {s['inf_w']:.10g}")
    return EXIT_OK


def cmd_particle_model(args, cfg, out):
    from .macro import ParticleSchedule, simulate_particles
    inst = _instanton(cfg)
    pb = _problem(cfg, inst)
    if args.schedule:
        sched = ParticleSchedule.load(args.schedule)
    else:
        sched = _strategy(args, cfg, inst)[1].schedule
    bound = simulate_particles(pb, sched, inst)
    write_summary(os.path.join(out, "bounds.csv"), asdict(bound))
    sched.save(os.path.join(out, "schedule.csv"))
    msgs = sched.check_rules()
    print(f"lower bound = {bound.lower_bound:.10g}, bare bound = {bound.bare_bound:.10g}")
    if msgs or not bound.feasible:
        for m in msgs:
            print(m, file=sys.stderr)
        raise AuditFailure("schedule violates the particle-model rules", worst=len(msgs))
    return EXIT_OK


def cmd_audit(args, cfg, out):
    from .action import action, quadratic_error_audit
    from .macro import audit_bad_intervals, build_moving_instanton
    inst = _instanton(cfg)
    ap = _analysis_params(cfg)
    pb, st = _strategy(args, cfg, inst)
    rep = action(st.segments, inst.params, cfg.S, ap.delta)
    aud = audit_bad_intervals(st, rep, inst, ap)
    write_csv(os.path.join(out, "bad_components.csv"),
              ["t_start", "t_end", "cost", "displacement", "mismatch", "scale"],
              [(c["t_start"], c["t_end"], c["cost"], c["displacement"], c["mismatch"], c["scale"])
               for c in aud.components])
    mov = build_moving_instanton(pb, inst, dt=2.0)
    qa = quadratic_error_audit(mov, ap.Delta, inst)
    frac = aud.total_displacement / pb.displacement
    write_summary(os.path.join(out, "summary.csv"), {
        "n": st.n, "bad_slabs": rep.bad_count, "displacement": aud.total_displacement,
        "displacement_fraction": frac, "fitted_c": aud.fitted_c, **asdict(qa),
        "quadratic_audit_holds": qa.holds})
    print(f"bad-slab displacement = {aud.total_displacement:.6g} ({100 * frac:.3g}% of eps^-1 R); "
          f"quadratic audit kappa = {qa.kappa:.3g}")
    if frac >= 0.05:
        raise AuditFailure("bad-slab displacement exceeds 5% of eps^-1 R", worst=frac)
    return EXIT_OK


def cmd_selftest(args, cfg, out):
    from .acceptance import run_all
    nums = [int(x) for x in args.only.split(",")] if args.only else None
    res = run_all(nums)
    write_csv(os.path.join(out, "acceptance.csv"),
              ["number", "name", "passed", "seconds", "budget", "detail"],
              [(r.number, r.name, r.passed, r.seconds, r.budget, r.detail) for r in res])
    failed = [r.number for r in res if not r.passed]
    print(f"{len(res) - len(failed)}/{len(res)} criteria passed")
    return EXIT_AUDIT if failed else EXIT_OK


COMMANDS = {
    "instanton": (cmd_instanton, "instanton profile and derived constants (instanton.csv: x,m,dm)"),
    "action-eval": (cmd_action_eval, "cost of a stored trajectory or of the moving instanton "
                                     "(slabs.csv: slab,t_start,t_end,cost,good)"),
    "contours": (cmd_contours, "contour decomposition (contours.csv: x_minus,x_plus,kind,weight)"),
    "centers": (cmd_centers, "front centers (centers.csv: index,sigma,center,residual)"),
    "spectral-gap": (cmd_spectral_gap, "spectral gap omega (spectral_gap.csv: key,value)"),
    "optimize": (cmd_optimize, "w_n table (w_n.csv: n,w_n) and its minimizer"),
    "strategy": (cmd_strategy, "upper-bound strategy (slabs.csv, schedule.csv, snapshots.csv: t,x,m)"),
    "particle-model": (cmd_particle_model, "particle-model bounds (bounds.csv: key,value)"),
    "audit": (cmd_audit, "bad-interval and quadratic-error audits (bad_components.csv)"),
    "selftest": (cmd_selftest, "acceptance suite (acceptance.csv: number,name,passed,...)"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="kacfront", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, helptext) in COMMANDS.items():
        s = sub.add_parser(name, help=helptext, description=helptext)
        s.add_argument("--config", help="plain-text 'key = value' config file")
        s.add_argument("--out", dest="output_dir", help="output directory")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
        for k in ("beta", "R", "T", "eps", "S", "dt"):
            s.add_argument(f"--{k}", type=float, default=None)
        s.add_argument("--seed", type=int, default=None)
        if name in ("contours", "centers"):
            s.add_argument("--profile", help="CSV with header x,m on the configured grid")
            s.add_argument("--centers", help="comma-separated centers of a multi-instanton")
        if name == "action-eval":
            s.add_argument("--trajectory", help="directory written by Trajectory.save")
        if name == "spectral-gap":
            s.add_argument("--dense", action="store_true", help="also run the 101-node dense oracle")
        if name == "optimize":
            s.add_argument("--n-max", type=int, default=None)
        if name in ("strategy", "particle-model", "audit"):
            s.add_argument("--n", type=int, default=None, help="number of nucleations")
        if name == "strategy":
            s.add_argument("--snapshots", type=int, default=21)
            s.add_argument("--space-stride", type=int, default=4)
        if name == "particle-model":
            s.add_argument("--schedule", help="CSV with header time,kind,index,position")
        if name == "selftest":
            s.add_argument("--only", help="comma-separated criterion numbers")
    return p


def _overrides(args):
    ov = {"beta": args.beta, "R": args.R, "T": args.T, "epsilon": args.eps, "S": args.S,
          "dt": args.dt, "seed": args.seed, "output_dir": args.output_dir}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        k = _ALIASES.get(k.strip(), k.strip())
        if k not in {f.name for f in fields(RunConfig)}:
            raise UsageError(f"unknown key {k!r}")
        ov[k] = _coerce(k, v)
    return ov


def main(argv=None):
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, _overrides(args))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    np.random.seed(cfg.seed)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    fun = COMMANDS[args.command][0]
    try:
        status = fun(args, cfg, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        status = EXIT_USAGE
    except AuditFailure as exc:
        print(f"audit failure: {exc}", file=sys.stderr)
        status = EXIT_AUDIT
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        status = EXIT_CONVERGENCE
    except KacError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        status = EXIT_DOMAIN
    write_manifest(out, " ".join(["kacfront", args.command] + (argv or sys.argv[1:])[1:]),
                   cfg, time.perf_counter() - t0, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
