"""Batch front end: design search, rate-region sweeps, benchmarks, simulation,
and validation suites driven by JSON configs, emitting RFC-4180 CSV.

Outputs are reproducible: every row carries the package build id, the seed,
and the sample count, and reruns with identical inputs are byte-identical.
Exit codes: 0 success, 1 validation failure, 2 invalid config or schema,
3 no feasible design.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__, constellations, linksim, rates, scheme

WORKERS_ENV = "TINLINK_WORKERS"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_NO_DESIGN = 3


class ConfigError(ValueError):
    """Malformed experiment configuration."""


# ---------------------------------------------------------------------------
# Build id and formatting
# ---------------------------------------------------------------------------

def build_id() -> str:
    """Short content hash of the installed package sources."""
    digest = hashlib.sha1()
    digest.update(__version__.encode())
    pkg_dir = Path(__file__).parent
    for source in sorted(pkg_dir.glob("*.py")):
        digest.update(source.name.encode())
        digest.update(source.read_bytes())
    return digest.hexdigest()[:12]


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def _write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _orders_str(orders) -> str:
    return "|".join(",".join(str(m) for m in row) for row in orders)


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    version = cfg.get("schema_version", 1)
    if version != 1:
        raise ConfigError(f"unsupported schema_version {version}")
    if "system" not in cfg:
        raise ConfigError("config is missing the 'system' section")
    return cfg


def spec_from_config(cfg: Mapping) -> scheme.SystemSpec:
    try:
        return scheme.SystemSpec.from_dict(cfg["system"])
    except scheme.SpecError as exc:
        raise ConfigError(str(exc)) from exc


def sampling_params(cfg: Mapping, args) -> tuple[int, int]:
    sampling = cfg.get("sampling", {})
    samples = args.samples if args.samples is not None else int(
        sampling.get("n_noise_samples", 20_000))
    seed = args.seed if args.seed is not None else int(sampling.get("seed", 0))
    if samples < rates.MIN_NOISE_SAMPLES:
        raise ConfigError(
            f"n_noise_samples must be >= {rates.MIN_NOISE_SAMPLES}")
    return samples, seed


def worker_count(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


# ---------------------------------------------------------------------------
# design
# ---------------------------------------------------------------------------

def cmd_design(cfg: Mapping, args) -> int:
    spec = spec_from_config(cfg)
    samples, seed = sampling_params(cfg, args)
    section = cfg.get("design", {})
    weights = section.get("weights", [1.0] * spec.K)
    cap = int(section.get("max_sub_block_order", scheme.DEFAULT_ORDER_CAP))
    pareto_only = bool(section.get("pareto_only", True))
    explicit = section.get("orders")
    workers = worker_count(args)

    if explicit is not None:
        candidates = _evaluate_explicit(spec, explicit, weights, samples,
                                        seed, workers)
        explanation = None if candidates else "no feasible plan among the configured order matrices"
        result = scheme.DesignSearchResult(tuple(candidates), explanation)
    else:
        result = scheme.design_search(
            spec, weights, n_noise_samples=samples, seed=seed,
            max_sub_block_order=cap, pareto_only=pareto_only,
            workers=workers)

    header = (["build_id", "seed", "n_noise_samples", "rank", "orders",
               "weighted_sum", "feasible", "min_order_slack"]
              + [f"R_{k + 1}" for k in range(spec.K)]
              + [f"k_{k + 1}" for k in range(spec.K)]
              + [f"n_{k + 1}" for k in range(spec.K)])
    rows = []
    bid = build_id()
    for rank, cand in enumerate(result.candidates):
        report = scheme.check_modulation_constraints(cand.orders, spec)
        slack = min((r.slack for r in report.rows if r.kind == "order_sum"),
                    default=math.inf)
        rows.append([bid, seed, samples, rank, _orders_str(cand.orders),
                     cand.weighted_sum, "yes", slack]
                    + list(cand.rate_result.rates)
                    + list(cand.info_bits)
                    + list(cand.codeword_bits))
    _write_csv(args.out, header, rows)
    if args.plan_out and result.candidates:
        with open(args.plan_out, "w") as fh:
            json.dump(result.candidates[0].plan.to_dict(), fh, indent=2,
                      sort_keys=True)
    if not result.candidates:
        print(result.explanation or "no feasible design", file=sys.stderr)
        return EXIT_NO_DESIGN
    return EXIT_OK


def _evaluate_explicit(spec, order_list, weights, samples, seed, workers=1):
    cache: dict = {}
    scored = []
    for orders in order_list:
        try:
            plan = scheme.assign_power(orders, spec)
        except (scheme.InfeasiblePlanError, scheme.SpecError):
            continue
        result = rates.compute_plan_rates(
            plan, n_noise_samples=samples, seed=seed, stats_cache=cache,
            workers=workers)
        ws = sum(w * r for w, r in zip(weights, result.rates))
        info = tuple(max(0, math.floor(u.rate * u.n_symbols))
                     for u in result.users)
        scored.append(scheme.DesignCandidate(
            orders=plan.orders, plan=plan, rate_result=result,
            weighted_sum=ws, info_bits=info,
            codeword_bits=plan.codeword_lengths, pareto=True))
    scored.sort(key=lambda c: (-c.weighted_sum,
                               tuple(m for row in c.orders for m in row)))
    return scored


# ---------------------------------------------------------------------------
# rate-region and benchmark sweeps
# ---------------------------------------------------------------------------

def _power_splits(spec: scheme.SystemSpec, layout, steps: int):
    """Grid over benchmark power allocations (user, sub_block) -> power.

    Free parameters are the per-sub-block totals (under the frame-average
    total power constraint) and the within-sub-block shares; each is swept
    over `steps` points.
    """
    lengths = [sb.length for sb in layout.sub_blocks]
    n_total = layout.boundaries[-1]
    active = [j for j, L in enumerate(lengths) if L > 0]
    grid = np.linspace(0.0, 1.0, steps)

    def total_combos(index, remaining):
        if index == len(active) - 1:
            yield {active[index]: remaining}
            return
        j = active[index]
        for frac in grid:
            spent = frac * remaining
            rest = remaining - spent
            for tail in total_combos(index + 1, rest):
                combo = {j: spent}
                combo.update(tail)
                yield combo

    budget = n_total * spec.P
    for totals_raw in total_combos(0, budget):
        totals = {j: totals_raw[j] / lengths[j] for j in active}
        share_axes = []
        for j in active:
            participants = layout.sub_blocks[j].participants
            if len(participants) == 1:
                share_axes.append([(1.0,)])
            else:
                share_axes.append(_simplex_grid(len(participants), steps))
        for shares in itertools.product(*share_axes):
            powers = {}
            for j, share in zip(active, shares):
                for user, frac in zip(layout.sub_blocks[j].participants, share):
                    powers[(user, j)] = totals[j] * frac
            yield powers


def _simplex_grid(dims: int, steps: int):
    """Fractions over a simplex with `steps` points per axis."""
    grid = np.linspace(0.0, 1.0, steps)
    out = []

    def recurse(prefix, remaining):
        if len(prefix) == dims - 1:
            out.append(tuple(prefix) + (remaining,))
            return
        for frac in grid:
            recurse(prefix + [frac * remaining], remaining - frac * remaining)

    recurse([], 1.0)
    return out


def _param_str(powers: Mapping[tuple[int, int], float]) -> str:
    items = sorted(powers.items())
    return ";".join(f"{u + 1}.{j + 1}={p:.6g}" for (u, j), p in items)


def cmd_rate_region(cfg: Mapping, args, benchmarks_only: bool = False) -> int:
    spec = spec_from_config(cfg)
    layout = scheme.build_layout(spec)
    samples, seed = sampling_params(cfg, args)
    section = cfg.get("rate_region", {})
    steps = int(section.get("power_steps", 17))
    cap = int(section.get("max_sub_block_order", scheme.DEFAULT_ORDER_CAP))
    include_qam = not benchmarks_only and bool(section.get("include_qam", True))
    workers = worker_count(args)

    header = (["build_id", "seed", "n_noise_samples", "point_type", "param",
               "orders"]
              + [f"R_{k + 1}" for k in range(spec.K)])
    rows = []
    bid = build_id()

    if include_qam:
        result = scheme.design_search(
            spec, [1.0] * spec.K, n_noise_samples=samples, seed=seed,
            max_sub_block_order=cap, pareto_only=False, workers=workers)
        if not result.candidates:
            print(result.explanation or "no feasible design", file=sys.stderr)
            _write_csv(args.out, header, [])
            return EXIT_NO_DESIGN
        for cand in result.candidates:
            rows.append([bid, seed, samples, "qam_tin", "",
                         _orders_str(cand.orders)]
                        + list(cand.rate_result.rates))

    splits = list(_power_splits(spec, layout, steps))

    def bench_rows(powers):
        local = []
        for mode in ("sic", "tin"):
            gauss = rates.bc_gaussian_rates(spec, layout, powers, mode=mode)
            local.append([bid, seed, samples, f"gauss_{mode}",
                          _param_str(powers), ""]
                         + [r.rate for r in gauss])
        shell = rates.bc_shell_rates(spec, layout, powers, mode="sic")
        if all(r is not None for r in shell):
            local.append([bid, seed, samples, "shell_sic",
                          _param_str(powers), ""]
                         + [r.rate for r in shell])
        return local

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(bench_rows, splits):
                rows.extend(chunk)
    else:
        for powers in splits:
            rows.extend(bench_rows(powers))

    _write_csv(args.out, header, rows)
    return EXIT_OK


def cmd_benchmark(cfg: Mapping, args) -> int:
    return cmd_rate_region(cfg, args, benchmarks_only=True)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: Mapping, args) -> int:
    spec = spec_from_config(cfg)
    samples, seed = sampling_params(cfg, args)
    section = cfg.get("simulate", {})
    orders = section.get("orders")
    if orders is None:
        raise ConfigError("simulate requires simulate.orders")
    n_frames = int(section.get("n_frames", 50))
    try:
        plan = scheme.assign_power(orders, spec)
    except scheme.InfeasiblePlanError as exc:
        print(f"infeasible orders: {exc}", file=sys.stderr)
        return EXIT_NO_DESIGN

    header = ["build_id", "seed", "n_noise_samples", "user", "n_frames",
              "n_bits", "bit_errors", "uncoded_ber", "mean_symbol_power",
              "zero_noise_roundtrip"]
    rows = []
    bid = build_id()
    for k in range(spec.K):
        n_bits = 0
        n_err = 0
        power_acc = 0.0
        power_n = 0
        clean_ok = True
        for f in range(n_frames):
            payloads = linksim.random_payloads(plan, seed + 7919 * f)
            frame = linksim.simulate_frame(plan, payloads, seed + 104729 * f + 1)
            llr = linksim.demap_frame(frame, k, plan)
            sent = _active_bits(payloads[k], k, plan)
            errs = int(np.count_nonzero(linksim.hard_bits(llr) != sent))
            n_err += errs
            n_bits += sent.size
            power_acc += float(np.sum(np.abs(frame.x) ** 2))
            power_n += frame.x.size
            if f == 0:
                quiet = linksim.simulate_frame(plan, payloads, seed,
                                               noise_scale=0.0)
                llr0 = linksim.demap_frame(quiet, k, plan)
                clean_ok = bool(np.array_equal(linksim.hard_bits(llr0), sent))
        rows.append([bid, seed, samples, k + 1, n_frames, n_bits, n_err,
                     (n_err / n_bits) if n_bits else 0.0,
                     power_acc / power_n if power_n else 0.0,
                     "yes" if clean_ok else "no"])
    _write_csv(args.out, header, rows)
    return EXIT_OK


def _active_bits(payload: np.ndarray, user: int, plan: scheme.SchemePlan
                 ) -> np.ndarray:
    """Bits that land on non-empty sub-blocks, in demapper order."""
    keep = []
    pos = 0
    for sb in plan.layout.sub_blocks[:user + 1]:
        m = plan.entries[(user, sb.index)].order
        take = sb.length * m
        if sb.length > 0 and m > 0:
            keep.append(payload[pos:pos + take])
        pos += take
    return np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def _validation_checks(samples: int, seed: int):
    """Fast invariant suite over all modules; yields (name, passed, detail)."""
    # constellation energy and distance identities
    for m in range(1, 7):
        c = constellations.build_gray_qam(m)
        expected = constellations.grid_energy((m + 1) // 2, m // 2)
        ok = (abs(c.energy - expected) <= 1e-12
              and abs(c.mean) <= 1e-12
              and abs(c.min_pairwise_distance() - 1.0) <= 1e-12
              and c.is_gray())
        yield f"qam_order_{m}", ok, f"energy={c.energy:.6g}"
    comp = constellations.superimpose(
        [constellations.build_gray_qam(2), constellations.build_gray_qam(4)])
    ok = (comp.size == 64
          and abs(comp.min_pairwise_distance() - 1.0) <= 1e-12
          and abs(comp.energy - 63.0 / 6.0) <= 1e-12)
    yield "superposition_64", ok, f"d_min={comp.min_pairwise_distance():.6g}"

    # q function inverse round trip
    worst = 0.0
    for p in (0.5, 1e-2, 1e-4, 1e-6, 1e-9):
        x = rates.qfunc_inv(p)
        worst = max(worst, abs(rates.qfunc(x) - p) / p)
    yield "qfunc_roundtrip", worst <= 1e-12, f"max_rel_err={worst:.3g}"

    # estimator against the quadrature oracle
    c4 = constellations.build_gray_qam(2)
    pts = c4.points / math.sqrt(c4.energy)
    stats = rates.estimate_mi_dispersion(pts, [], 1.0, max(samples, 2000), seed)
    oracle = rates.quadrature_mi(pts, 1.0)
    gap = abs(stats.mi - oracle)
    tol = 3.0 * max(stats.std_err_mi, 1e-9)
    yield "estimator_vs_quadrature", gap <= tol, f"gap={gap:.3g} tol={tol:.3g}"

    # randomized plans: power accounting and minimum distances
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(25):
        spec = _random_spec(rng)
        plan = _random_feasible_plan(spec, rng)
        if plan is None:
            continue
        if not _accounting_ok(plan) or not all(
                r.ok for r in scheme.verify_min_distances(plan)):
            bad += 1
    yield "random_plan_invariants", bad == 0, f"violations={bad}"

    # zero-noise LLR round trip on a mixed design
    spec = scheme.SystemSpec.create(1.0, [
        scheme.UserSpec(16, 1e-6, math.sqrt(10 ** 1.8)),
        scheme.UserSpec(24, 1e-4, math.sqrt(10 ** 0.5))])
    plan = scheme.assign_power([[2], [4, 4]], spec)
    payloads = linksim.random_payloads(plan, seed)
    frame = linksim.simulate_frame(plan, payloads, seed, noise_scale=0.0)
    ok = True
    for k in range(spec.K):
        llr = linksim.demap_frame(frame, k, plan)
        ok = ok and bool(np.array_equal(
            linksim.hard_bits(llr), _active_bits(payloads[k], k, plan)))
    yield "zero_noise_llr_roundtrip", ok, ""


def _random_spec(rng) -> scheme.SystemSpec:
    k = int(rng.integers(1, 4))
    lengths = np.sort(rng.integers(8, 64, size=k))
    users = []
    mags = 10 ** rng.uniform(0.0, 1.2, size=k)
    while np.unique(np.round(mags, 6)).size < k:
        mags = 10 ** rng.uniform(0.0, 1.2, size=k)
    phases = rng.uniform(0, 2 * np.pi, size=k)
    for i in range(k):
        users.append(scheme.UserSpec(
            int(lengths[i]), float(rng.uniform(1e-7, 0.4)),
            mags[i] * complex(np.cos(phases[i]), np.sin(phases[i]))))
    return scheme.SystemSpec.create(float(10 ** rng.uniform(-0.2, 1.0)), users)


def _random_feasible_plan(spec, rng, attempts: int = 40):
    layout = scheme.build_layout(spec)
    for _ in range(attempts):
        orders = []
        for k in range(spec.K):
            orders.append([int(rng.integers(0, 5)) for _ in range(k + 1)])
        report = scheme.check_modulation_constraints(orders, spec, layout)
        if report.feasible and any(m > 0 for row in orders for m in row):
            return scheme.assign_power(orders, spec, layout, check=False)
    return None


def _accounting_ok(plan, tol: float = 1e-9) -> bool:
    """Per-sub-block powers sum to the budget wherever anyone transmits."""
    spec = plan.spec
    for sb in plan.layout.sub_blocks:
        if sb.length == 0:
            continue
        total = sum(plan.entries[(u, sb.index)].power for u in sb.participants)
        active = any(plan.entries[(u, sb.index)].order > 0
                     for u in sb.participants)
        target = spec.P if active else 0.0
        if abs(total - target) > tol * max(1.0, spec.P):
            return False
    # frame-average total power
    n_total = plan.layout.boundaries[-1]
    frame_avg = sum(sb.length * sum(plan.entries[(u, sb.index)].power
                                    for u in sb.participants)
                    for sb in plan.layout.sub_blocks) / n_total
    full = all(
        any(plan.entries[(u, sb.index)].order > 0 for u in sb.participants)
        for sb in plan.layout.sub_blocks if sb.length > 0)
    return not full or abs(frame_avg - spec.P) <= tol * max(1.0, spec.P)


def cmd_validate(cfg: Mapping, args) -> int:
    samples, seed = sampling_params(cfg, args)
    plan_path = cfg.get("validate", {}).get("plan")
    rows = []
    bid = build_id()
    if plan_path:
        try:
            with open(plan_path) as fh:
                data = json.load(fh)
            scheme.plan_from_dict(data)
        except (OSError, json.JSONDecodeError, scheme.SpecError) as exc:
            print(f"plan schema error: {exc}", file=sys.stderr)
            return EXIT_BAD_CONFIG
        rows.append([bid, seed, samples, "plan_schema", "yes", plan_path])
    failures = 0
    for name, passed, detail in _validation_checks(samples, seed):
        rows.append([bid, seed, samples, name, "yes" if passed else "no",
                     detail])
        failures += 0 if passed else 1
    header = ["build_id", "seed", "n_noise_samples", "check", "passed",
              "detail"]
    if args.out:
        _write_csv(args.out, header, rows)
    for row in rows:
        print(f"{row[3]}: {'PASS' if row[4] == 'yes' else 'FAIL'} {row[5]}")
    return EXIT_OK if failures == 0 else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tinlink",
        description="Superimposed-QAM downlink design and finite-blocklength "
                    "rate experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_out in (("design", True), ("rate-region", True),
                            ("benchmark", True), ("simulate", True),
                            ("validate", False)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=needs_out)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        if name == "design":
            p.add_argument("--plan-out", default=None)
    return parser


_COMMANDS = {
    "design": cmd_design,
    "rate-region": cmd_rate_region,
    "benchmark": cmd_benchmark,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        declared = cfg.get("command")
        if declared is not None and declared != args.command:
            raise ConfigError(
                f"config declares command {declared!r}, invoked {args.command!r}")
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, scheme.SpecError, rates.RateEngineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
