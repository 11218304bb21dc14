"""Batch command-line front end.

Subcommands: orbit, minimax, mane, spectrum, verify.  All outputs are
JSON-lines records (CSV for eigenvalue tables, two-column text for
plottable traces), contain no timestamps, and embed the config hash, RNG
seed, tool version and tolerance set, so reruns with the same config and
seed are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .action import (DiscreteLoop, LoopEvaluator, discrete_hessian, iterate,
                     nullity_partition, nullity_via_monodromy, perturb_loop)
from .config import RunConfig, load_config
from .errors import BrokenOrbitsError, ConfigError, MinimizerNotFound
from .fixtures import CounterexampleModel, CounterexampleParams, reference_orbits
from .flow import integrate
from .mane import (LoopCertificate, SubsolutionCertificate, mane_estimate,
                   verify_c_lower, verify_c_upper)
from .models import TangentState
from .search import (DescentOptions, descend, find_local_minimizer,
                     multiplicity_scan)


def _write_jsonl(path: Path, records: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fp:
        for rec in records:
            fp.write(json.dumps(rec, sort_keys=True) + "\n")


def _envelope(cfg: RunConfig, rec: dict) -> dict:
    out = dict(rec)
    out.update(cfg.provenance())
    return out


def _descent_options(cfg: RunConfig, epsilon: float | None = None) -> DescentOptions:
    tol = cfg.tolerances
    cap = cfg.tau_cap if cfg.tau_cap > 0 else (epsilon if epsilon else 1.0)
    return DescentOptions(
        tol_crit=tol["tol_crit"],
        tol_rank=(tol["tol_rank"] or None),
        tau_floor=1e-4 * cap,
        tau_cap=cap,
    )


def _auto_h(cfg: RunConfig, fallback: int = 24) -> int:
    return cfg.h if cfg.h > 0 else fallback


def _trace_for_record(model, rec_loop: DiscreteLoop, k: float, out: Path, tag: str):
    ev = LoopEvaluator(model, k)
    segs = ev.segments(rec_loop)
    s0 = TangentState.make(model.torus, rec_loop.points[0], segs[0].nu_minus)
    traj = integrate(model, s0, rec_loop.period, n_samples=32 * rec_loop.h)
    traj.save(out / f"trace_{tag}.txt")


def cmd_orbit(cfg: RunConfig, out: Path) -> int:
    model = cfg.build_model()
    k = cfg.k if cfg.k is not None else 0.25
    opts = _descent_options(cfg)
    rng = cfg.rng()
    records = []
    mode = cfg.orbit_mode
    if mode == "auto":
        mode = "refine" if isinstance(model, CounterexampleModel) else "minimize"

    if mode == "refine":
        params = CounterexampleParams(r1=model.p.r1, r2=model.p.r2, R=model.p.R)
        h = _auto_h(cfg, 64)
        for tag, orbit in zip(("fast", "slow"), reference_orbits(params, k)):
            loop, _ = orbit.loop(model, h)
            seed_loop = perturb_loop(loop, rng, amp_q=cfg.perturb,
                                     amp_tau=cfg.perturb)
            crit = DescentOptions(**{**opts.__dict__, "mode": "critical"})
            rec = descend(model, k, seed_loop, opts=crit)
            records.append(_envelope(cfg, {**rec.to_record(), "tag": tag}))
            _trace_for_record(model, rec.loop, k, out, tag)
    else:
        try:
            rec = find_local_minimizer(model, k, h=_auto_h(cfg),
                                       n_descents=cfg.seed_budget, opts=opts)
            records.append(_envelope(cfg, rec.to_record()))
            _trace_for_record(model, rec.loop, k, out, "minimizer")
        except MinimizerNotFound as exc:
            records.append(_envelope(cfg, {
                "type": "orbit", "status": "not_found", "k": k,
                "detail": str(exc)}))
    _write_jsonl(out / "orbits.jsonl", records)
    return 0


def cmd_minimax(cfg: RunConfig, out: Path) -> int:
    if cfg.n_max < 1:
        raise ConfigError("n_max must be a positive integer")
    model = cfg.build_model()
    k = cfg.k if cfg.k is not None else 0.2
    opts = _descent_options(cfg)
    scan = multiplicity_scan(model, k, cfg.n_max, h=_auto_h(cfg), opts=opts,
                             n_nodes=cfg.n_nodes, max_sweeps=cfg.max_sweeps)
    records = [_envelope(cfg, {
        "type": "minimax_summary",
        "k": k,
        "values": scan.minimax_values,
        "n_records": len(scan.records),
        "dedup_hausdorff": scan.dedup_hausdorff,
        "dedup_period_rel": scan.dedup_period_rel,
    })]
    for rec in scan.records:
        records.append(_envelope(cfg, rec.to_record()))
    _write_jsonl(out / "minimax.jsonl", records)
    return 0


def cmd_mane(cfg: RunConfig, out: Path, verify: bool) -> int:
    model = cfg.build_model()
    est = mane_estimate(model, family_size=cfg.family_size,
                        k_grid=cfg.k_grid, h=_auto_h(cfg))
    rec = _envelope(cfg, est.as_dict())
    status = 0
    if verify:
        ok_up = (est.upper_certificate is None
                 or verify_c_upper(model, est.upper_certificate))
        ok_lo = (est.lower_certificate is None
                 or verify_c_lower(model, est.lower_certificate))
        rec["verified"] = bool(ok_up and ok_lo)
        if not rec["verified"]:
            status = 1
    _write_jsonl(out / "mane.jsonl", [rec])
    return status


def _loop_from_record(rec: dict) -> DiscreteLoop:
    return DiscreteLoop(points=np.asarray(rec["points"], dtype=float),
                        tau=float(rec["tau"]))


def cmd_spectrum(cfg: RunConfig, out: Path, orbits_path: str, iterates: int) -> int:
    model = cfg.build_model()
    tol = cfg.tolerances
    records = []
    rows = []
    with open(orbits_path, "r", encoding="utf-8") as fp:
        orbit_recs = [json.loads(line) for line in fp if line.strip()]
    for idx, orec in enumerate(orbit_recs):
        if orec.get("type") != "orbit" or "points" not in orec:
            continue
        loop = _loop_from_record(orec)
        k = float(orec["k"])
        rep = discrete_hessian(model, k, loop,
                               tol_crit=100 * tol["tol_crit"],
                               tol_rank=(tol["tol_rank"] or None))
        rec = {"type": "spectrum", "orbit_index": idx, "k": k,
               **rep.to_record()}
        if iterates > 1:
            rec["nullity_partition"] = [
                {"rep": m, "nullity": nu, "members": members}
                for m, nu, members in nullity_partition(rep.monodromy, iterates)]
            rec["iterate_nullities"] = [
                nullity_via_monodromy(rep.monodromy, m)
                for m in range(1, iterates + 1)]
        records.append(_envelope(cfg, rec))
        for name, eigs in (("hessian_full", rep.eigs_H),
                           ("hessian_restricted", rep.eigs_h)):
            for j, val in enumerate(eigs):
                rows.append([idx, name, j, float(val), 0.0])
        for j, lam in enumerate(rep.monodromy_eigenvalues):
            rows.append([idx, "monodromy", j, float(lam.real), float(lam.imag)])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "spectrum.csv", "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["orbit_index", "matrix", "position", "real", "imag"])
        writer.writerows(rows)
    _write_jsonl(out / "spectrum.jsonl", records)
    return 0


def cmd_verify(cfg: RunConfig, out: Path, records_path: str) -> int:
    model = cfg.build_model()
    tol = cfg.tolerances
    reports = []
    failures = 0
    with open(records_path, "r", encoding="utf-8") as fp:
        recs = [json.loads(line) for line in fp if line.strip()]
    for idx, rec in enumerate(recs):
        rtype = rec.get("type")
        report = {"type": "verification", "index": idx, "record_type": rtype}
        try:
            if rtype == "orbit" and "points" in rec:
                loop = _loop_from_record(rec)
                k = float(rec["k"])
                ev = LoopEvaluator(model, k)
                grad, segs = ev.gradient_and_segments(loop)
                action = loop.h * loop.tau * k + sum(s.action for s in segs)
                checks = {
                    "gradient_small": grad.norm() <= 100 * tol["tol_crit"],
                    "action_matches": abs(action - rec["action"])
                    <= 1e-7 * (1 + abs(rec["action"])),
                    "energy_on_level": ev.energy_deviation(loop, segs)
                    <= tol["energy_tol"],
                }
                report["checks"] = checks
                report["passed"] = all(checks.values())
            elif rtype == "mane":
                ok_up = ok_lo = True
                if rec.get("upper_certificate"):
                    cert = SubsolutionCertificate(**rec["upper_certificate"])
                    ok_up = verify_c_upper(model, cert)
                if rec.get("lower_certificate"):
                    cert = LoopCertificate(**rec["lower_certificate"])
                    ok_lo = verify_c_lower(model, cert)
                report["checks"] = {"upper": ok_up, "lower": ok_lo}
                report["passed"] = ok_up and ok_lo
            else:
                report["passed"] = True
                report["skipped"] = True
        except BrokenOrbitsError as exc:
            report["passed"] = False
            report["error"] = str(exc)
        if not report["passed"]:
            failures += 1
        reports.append(_envelope(cfg, report))
    _write_jsonl(out / "verification.jsonl", reports)
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brokenorbits",
        description="Periodic-orbit search for Tonelli systems on the flat 2-torus")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--k", type=float, default=None, help="energy override")
        p.add_argument("--h", type=int, default=None, help="discretization override")
        p.add_argument("--seed", type=int, default=None, help="RNG seed override")
        p.add_argument("--out", default=None, help="output directory override")

    p_orbit = sub.add_parser("orbit", help="descend/refine to periodic orbits")
    common(p_orbit)
    p_min = sub.add_parser("minimax", help="mountain-pass multiplicity scan")
    common(p_min)
    p_mane = sub.add_parser("mane", help="critical-energy interval estimate")
    common(p_mane)
    p_mane.add_argument("--verify", action="store_true",
                        help="re-verify certificates after writing")
    p_spec = sub.add_parser("spectrum", help="index/nullity reports for stored orbits")
    common(p_spec)
    p_spec.add_argument("--orbits", required=True, help="orbit records JSONL")
    p_spec.add_argument("--iterates", type=int, default=1,
                        help="also tabulate iterate nullities up to this count")
    p_ver = sub.add_parser("verify", help="re-validate stored records")
    common(p_ver)
    p_ver.add_argument("--records", required=True, help="records JSONL to verify")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"k": args.k, "h": args.h, "seed": args.seed, "out": args.out}
    try:
        try:
            cfg = load_config(args.config, overrides)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "orbit":
            return cmd_orbit(cfg, out)
        if args.command == "minimax":
            return cmd_minimax(cfg, out)
        if args.command == "mane":
            return cmd_mane(cfg, out, args.verify)
        if args.command == "spectrum":
            return cmd_spectrum(cfg, out, args.orbits, args.iterates)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.records)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(json.dumps({"type": "error", "error": "ConfigError",
                          "message": str(exc)}), file=sys.stderr)
        return 2
    except BrokenOrbitsError as exc:
        print(json.dumps({"type": "error", "error": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
