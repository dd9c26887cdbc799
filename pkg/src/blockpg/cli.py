"""Config-driven command line: validation, rates, sampling, invariance,
stability and contraction experiments, all emitting CSV artifacts.

Subcommands: validate | rates | sample | invariance | stability | contraction.
Flags override config values; the effective config is echoed into the output
directory so runs are reproducible.  Exit codes: 0 ok, 1 validation failure,
2 runtime error.  Reruns with the same seed write byte-identical CSVs
(timings live in meta.json, which is excluded from that contract).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import chi2

from . import exact, kernels, pg, rates
from .blocking import BlockCover, build_cover, explicit_cover, validate_cover
from .errors import BlockPgError, CoverError, ModelError
from .hmm import (
    LogTables,
    ObservationRecord,
    TabularHmm,
    load_model,
    mixing_profile,
    model_from_config,
    simulate,
)
from .rng import DOMAIN_CHAIN, DOMAIN_OBS, Stream, derive_key
from .sweeps import (
    AutocorrCollector,
    ChainState,
    KernelConfig,
    SiteMarginalCollector,
    SweepSchedule,
    TraceCollector,
    UpdateRateCollector,
    init_chain,
    run_chain,
    sweep,
)


@dataclass
class RunContext:
    config: dict
    model: TabularHmm
    obs: Optional[ObservationRecord]
    cover: Optional[BlockCover]
    out_dir: str
    seed: int
    threads: int
    cap_states: int
    trace: bool
    dump_block_update: bool


def _load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _build_context(args) -> RunContext:
    cfg = _load_config(args.config)
    base = os.path.dirname(os.path.abspath(args.config))

    if "model_config" in cfg:
        model, obs = model_from_config(cfg["model_config"])
    elif "model" in cfg:
        model_path = os.path.join(base, cfg["model"])
        if not os.path.exists(model_path):
            raise BlockPgError(f"model file not found: {model_path}")
        model, obs = load_model(model_path)
    else:
        raise BlockPgError("config needs 'model' (path) or 'model_config' (inline)")

    cover = None
    cover_cfg = cfg.get("cover")
    if cover_cfg is not None:
        if "blocks" in cover_cfg:
            T = cover_cfg.get("T", obs.T if obs is not None else None)
            if T is None:
                raise BlockPgError("explicit cover needs T when the model has no observations")
            cover = explicit_cover(int(T), cover_cfg["blocks"])
        else:
            T = cover_cfg.get("T", obs.T if obs is not None else None)
            if T is None:
                raise BlockPgError("cover needs T when the model has no observations")
            cover = build_cover(int(T), int(cover_cfg["L"]), int(cover_cfg["p"]))

    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    threads = args.threads if args.threads is not None else int(cfg.get("threads", 1))
    out_dir = args.out if args.out is not None else cfg.get("out", "out")
    cap_states = args.cap_states if args.cap_states is not None else int(
        cfg.get("cap_states", exact.DEFAULT_STATE_CAP)
    )
    return RunContext(
        config=cfg, model=model, obs=obs, cover=cover, out_dir=out_dir,
        seed=seed, threads=threads, cap_states=cap_states,
        trace=bool(args.trace), dump_block_update=bool(getattr(args, "dump_block_update", False)),
    )


def _echo_config(ctx: RunContext, command: str) -> None:
    os.makedirs(ctx.out_dir, exist_ok=True)
    effective = dict(ctx.config)
    effective["_resolved"] = {
        "command": command,
        "seed": ctx.seed,
        "threads": ctx.threads,
        "cap_states": ctx.cap_states,
        "cover": ctx.cover.canonical() if ctx.cover is not None else None,
        "compiled_kernel": kernels.COMPILED,
    }
    with open(os.path.join(ctx.out_dir, "effective_config.json"), "w", encoding="utf-8") as fh:
        json.dump(effective, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _validate(ctx: RunContext) -> list:
    """Model + cover validation shared by every subcommand (fail fast)."""
    problems = []
    if ctx.cover is not None:
        problems += validate_cover(ctx.cover)
        if ctx.obs is not None and ctx.cover.T != ctx.obs.T:
            problems.append(f"cover: T={ctx.cover.T} does not match observations T={ctx.obs.T}")
    if ctx.obs is not None:
        try:
            LogTables(ctx.model, ctx.obs)
        except BlockPgError as exc:
            problems.append(f"model: {exc}")
    return problems


def _kernel_from_config(cfg: dict) -> KernelConfig:
    kc = cfg.get("kernel", {"kind": "ideal"})
    if kc.get("kind") == "pg":
        return KernelConfig.pg(int(kc["n_particles"]))
    return KernelConfig.ideal()


def _schedule_from_config(cfg: dict) -> SweepSchedule:
    return SweepSchedule(kind=cfg.get("schedule", "lr"))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_validate(ctx: RunContext) -> int:
    problems = _validate(ctx)
    if ctx.cover is None:
        problems.append("cover: no cover specified in the config")
    if not problems:
        print(f"ok: model K={ctx.model.num_states}, cover {ctx.cover.canonical()}")
        return 0
    for problem in problems:
        print(f"violation: {problem}")
    return 1


def cmd_rates(ctx: RunContext) -> int:
    problems = _validate(ctx)
    if problems:
        for problem in problems:
            print(f"violation: {problem}")
        return 1
    if ctx.obs is None:
        raise BlockPgError("rates needs observations (the emission ratio bound scans y)")
    cfg = ctx.config
    h = int(cfg.get("h", 1))
    profile = mixing_profile(ctx.model, ctx.obs, h)

    grid = cfg.get("rates", {})
    def as_list(value, fallback):
        if value is None:
            return [fallback] if fallback is not None else []
        return value if isinstance(value, list) else [value]

    default_L = ctx.cover.common_L if ctx.cover is not None else None
    default_p = ctx.cover.common_p if ctx.cover is not None else None
    kernel_cfg = cfg.get("kernel", {})
    default_n = kernel_cfg.get("n_particles", 2)
    l_values = as_list(grid.get("L"), default_L)
    p_values = as_list(grid.get("p"), default_p)
    n_values = as_list(grid.get("N"), default_n)
    if not l_values or not p_values or not n_values:
        raise BlockPgError("rates needs L, p, N values (from the grid or the cover/kernel)")

    _echo_config(ctx, "rates")
    rows = []
    for L in l_values:
        for p in p_values:
            if not 0 <= p < L:
                continue
            for n in n_values:
                rows.append(rates.rate_pg_common(profile, int(L), int(p), int(n)))

    path = os.path.join(ctx.out_dir, "rates.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(rates.RATE_CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_row() + "\n")

    fields = ["L", "p", "N", "epsilon", "lambda_ideal", "beta", "lambda_lumped",
              "w_hat", "lambda_pg_par", "lambda_pg_lr"]
    print(f"alpha={rates.alpha(profile):.6g} h={h} (density convention: uniform nu, m = K*P)")
    print("  ".join(f"{name:>12}" for name in fields) + "  flags")
    for row in rows:
        vals = [row.L, row.p, row.n_particles, row.epsilon, row.lambda_ideal, row.beta,
                row.lambda_lumped, row.w_hat, row.lambda_pg_par, row.lambda_pg_lr]
        line = "  ".join(
            f"{v:>12}" if isinstance(v, int) else f"{v:>12.6g}" for v in vals
        )
        print(line + "  " + ("|".join(row.flags) if row.flags else "-"))
    print(f"wrote {path}")
    return 0


def cmd_sample(ctx: RunContext) -> int:
    problems = _validate(ctx)
    if problems or ctx.cover is None:
        for problem in problems or ["cover: missing"]:
            print(f"violation: {problem}")
        return 1
    if ctx.obs is None:
        raise BlockPgError("sample needs observations in the model file")
    cfg = ctx.config
    schedule = _schedule_from_config(cfg)
    kernel = _kernel_from_config(cfg)
    num_sweeps = int(cfg.get("sweeps", 100))
    burn_in = int(cfg.get("burn_in", 0))
    _echo_config(ctx, "sample")

    tables = LogTables(ctx.model, ctx.obs)
    T = ctx.obs.T
    collectors = [
        UpdateRateCollector(T),
        AutocorrCollector(T, lags=(1, 5), burn_in=burn_in),
    ]
    if ctx.trace:
        collectors.append(TraceCollector())

    if ctx.dump_block_update and kernel.kind == "pg":
        chain0 = init_chain(ctx.model, ctx.obs, ctx.seed)
        key = derive_key(ctx.seed, 2, 0, 1)  # sweep 0, block 1 (DOMAIN_BLOCK = 2)
        _, system = pg.pg_block_step_recorded(
            ctx.model, ctx.obs, chain0.x, ctx.cover.block(1), kernel.n_particles, key,
            tables=tables,
        )
        system.to_csv(os.path.join(ctx.out_dir, "blockdump.csv"))

    init = init_chain(ctx.model, ctx.obs, ctx.seed)
    trace = run_chain(
        ctx.model, ctx.obs, ctx.cover, schedule, kernel, init, num_sweeps,
        collectors=collectors, threads=ctx.threads, tables=tables,
    )

    update_rate = trace.stats["update_rate"]
    acf = trace.stats["autocorr"]
    summary_path = os.path.join(ctx.out_dir, "summary.csv")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("site,update_rate,acf1,acf5\n")
        for t in range(T):
            fh.write(
                f"{t + 1},{repr(float(update_rate[t]))},"
                f"{repr(float(acf[1][t]))},{repr(float(acf[5][t]))}\n"
            )

    if ctx.trace:
        trace_path = os.path.join(ctx.out_dir, "trace.csv")
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write("sweep,site,value\n")
            for sweep_index, x in trace.stats["trace"]:
                for t in range(T):
                    fh.write(f"{sweep_index},{t + 1},{x[t]}\n")

    meta = {
        "timings": trace.timings,
        "sweeps": num_sweeps,
        "threads": ctx.threads,
        "schedule": schedule.kind,
        "kernel": kernel.kind,
        "compiled_kernel": kernels.COMPILED,
        "cover": ctx.cover.canonical(),
    }
    with open(os.path.join(ctx.out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    per_sweep = trace.timings.get("sweep_seconds", 0.0) / max(1, num_sweeps)
    print(f"{num_sweeps} sweeps ({schedule.kind}, {kernel.kind}), "
          f"{per_sweep * 1e3:.3f} ms/sweep; wrote {summary_path}")
    for phase in ("odd", "even"):
        key = f"{phase}_phase_seconds"
        if key in trace.timings:
            print(f"  {phase} phase total {trace.timings[key]:.4f} s")
    return 0


def cmd_invariance(ctx: RunContext) -> int:
    problems = _validate(ctx)
    if problems or ctx.cover is None:
        for problem in problems or ["cover: missing"]:
            print(f"violation: {problem}")
        return 1
    cfg = ctx.config
    inv = cfg.get("invariance", {})
    mode = inv.get("mode", "exact")
    schedule = _schedule_from_config(cfg)
    kernel = _kernel_from_config(cfg)
    _echo_config(ctx, "invariance")
    tables = LogTables(ctx.model, ctx.obs)

    if mode == "exact":
        kern = ("pg", kernel.n_particles) if kernel.kind == "pg" else ("ideal",)
        op = exact.sweep_operator(
            ctx.model, ctx.obs, ctx.cover, schedule.kind, kern,
            tables=tables, cap_states=ctx.cap_states,
        )
        residual = float(np.abs(op.target @ op.matrix - op.target).sum())
        path = os.path.join(ctx.out_dir, "invariance_exact.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("schedule,kernel,l1_residual\n")
            fh.write(f"{schedule.kind},{'/'.join(str(v) for v in kern)},{repr(residual)}\n")
        print(f"L1 residual of phi under one {schedule.kind} sweep: {residual:.3e}")
        return 0

    if mode != "statistical":
        raise BlockPgError(f"unknown invariance mode {mode!r}")
    chains = int(inv.get("chains", 100000))
    threshold = float(inv.get("p_threshold", 0.001))
    k, T = ctx.model.num_states, ctx.obs.T
    phi = exact.jsd_vector(ctx.model, ctx.obs, tables=tables)
    cum_phi = np.cumsum(phi)
    expected = exact.site_marginals(phi, k, T) * chains

    counts = np.zeros((T, k), dtype=np.int64)
    sites = np.arange(T)
    draw = Stream(derive_key(ctx.seed, DOMAIN_CHAIN))
    for i in range(chains):
        idx = int(np.searchsorted(cum_phi, draw.uniform() * cum_phi[-1]))
        state = ChainState(
            x=exact.index_traj(idx, k, T), sweep_count=0,
            seed=derive_key(ctx.seed, DOMAIN_CHAIN, i),
        )
        state = sweep(state, ctx.model, ctx.obs, ctx.cover, schedule, kernel, tables=tables)
        counts[sites, state.x] += 1

    path = os.path.join(ctx.out_dir, "invariance_sites.csv")
    worst = 1.0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("site,chi2,p_value,p_bonferroni\n")
        for t in range(T):
            mask = expected[t] > 0
            stat = float(((counts[t, mask] - expected[t, mask]) ** 2 / expected[t, mask]).sum())
            dof = int(mask.sum()) - 1
            p = float(chi2.sf(stat, dof)) if dof >= 1 else 1.0
            p_bonf = min(1.0, p * T)
            worst = min(worst, p_bonf)
            fh.write(f"{t + 1},{repr(stat)},{repr(p)},{repr(p_bonf)}\n")
    verdict = "pass" if worst > threshold else "FAIL"
    print(f"{chains} one-sweep chains from phi; worst Bonferroni p = {worst:.4g} "
          f"(threshold {threshold}): {verdict}; wrote {path}")
    return 0


def cmd_stability(ctx: RunContext) -> int:
    problems = []
    if ctx.obs is None:
        pass  # stability synthesizes observations per T
    cfg = ctx.config
    st = cfg.get("stability", {})
    t_grid = st.get("T_grid", [26, 50, 98, 194])
    L = int(st.get("L", 10))
    p = int(st.get("p", 2))
    n_particles = int(st.get("n_particles", 20))
    num_sweeps = int(st.get("sweeps", 400))
    burn_in = int(st.get("burn_in", 50))
    replications = int(st.get("replications", 20))
    obs_seed = int(st.get("obs_seed", ctx.seed))
    for T in t_grid:
        try:
            cover = build_cover(int(T), L, p)
            problems += validate_cover(cover)
        except BlockPgError as exc:
            problems.append(f"cover: T={T}: {exc}")
    if problems:
        for problem in problems:
            print(f"violation: {problem}")
        return 1
    _echo_config(ctx, "stability")

    path = os.path.join(ctx.out_dir, "stability.csv")
    rows = []
    t_start = time.perf_counter()
    for T in t_grid:
        T = int(T)
        _, obs = simulate(ctx.model, T, Stream(derive_key(obs_seed, DOMAIN_OBS, T)))
        tables = LogTables(ctx.model, obs)
        for label, cover in (
            ("blocked", build_cover(T, L, p)),
            ("single", build_cover(T, T, 0)),
        ):
            acf1 = np.zeros(T)
            acf5 = np.zeros(T)
            rate_sum = np.zeros(T)
            for rep in range(replications):
                seed_rep = derive_key(ctx.seed, DOMAIN_CHAIN, T, rep, 1 if label == "blocked" else 0)
                init = init_chain(ctx.model, obs, seed_rep)
                collectors = [
                    UpdateRateCollector(T),
                    AutocorrCollector(T, lags=(1, 5), burn_in=burn_in),
                ]
                trace = run_chain(
                    ctx.model, obs, cover, SweepSchedule("lr"),
                    KernelConfig.pg(n_particles), init, num_sweeps,
                    collectors=collectors, threads=ctx.threads, tables=tables,
                )
                acf = trace.stats["autocorr"]
                acf1 += acf[1]
                acf5 += acf[5]
                rate_sum += trace.stats["update_rate"]
            acf1 /= replications
            acf5 /= replications
            rate_sum /= replications
            boundary = sorted(cover.boundary_sites())
            interior = [t for t in range(1, T + 1) if t not in boundary]
            rows.append({
                "T": T,
                "kernel": label,
                "median_acf1": float(np.median(acf1)),
                "median_acf5": float(np.median(acf5)),
                "interior_acf1": float(np.median(acf1[[t - 1 for t in interior]])),
                "boundary_acf1": float(np.median(acf1[[t - 1 for t in boundary]])) if boundary else math.nan,
                "mean_update_rate": float(rate_sum.mean()),
            })
            print(f"T={T:4d} {label:8s} median acf1={rows[-1]['median_acf1']:.4f} "
                  f"acf5={rows[-1]['median_acf5']:.4f} update={rows[-1]['mean_update_rate']:.3f}")

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("T,kernel,median_acf1,median_acf5,interior_acf1,boundary_acf1,"
                 "mean_update_rate,replications,sweeps\n")
        for row in rows:
            fh.write(
                f"{row['T']},{row['kernel']},{repr(row['median_acf1'])},"
                f"{repr(row['median_acf5'])},{repr(row['interior_acf1'])},"
                f"{repr(row['boundary_acf1'])},{repr(row['mean_update_rate'])},"
                f"{replications},{num_sweeps}\n"
            )
    print(f"wrote {path} ({time.perf_counter() - t_start:.1f} s)")
    return 0


def cmd_contraction(ctx: RunContext) -> int:
    problems = _validate(ctx)
    if problems or ctx.cover is None:
        for problem in problems or ["cover: missing"]:
            print(f"violation: {problem}")
        return 1
    if ctx.obs is None:
        raise BlockPgError("contraction needs observations in the model file")
    cfg = ctx.config
    ct = cfg.get("contraction", {})
    max_sweeps = int(ct.get("max_sweeps", 10))
    init_kind = ct.get("init", "point")
    h = int(cfg.get("h", 1))
    _echo_config(ctx, "contraction")

    tables = LogTables(ctx.model, ctx.obs)
    profile = mixing_profile(ctx.model, ctx.obs, h)
    a = rates.alpha(profile)
    w_list = rates.cover_wasserstein_matrices(a, h, ctx.cover)
    a1 = rates.verify_A1(ctx.cover, w_list)

    n = ctx.model.num_states ** ctx.obs.T
    if init_kind == "uniform":
        init = np.full(n, 1.0 / n)
    else:
        init = np.zeros(n)
        init[0] = 1.0

    path = os.path.join(ctx.out_dir, "contraction.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("schedule,sweep,tv,envelope\n")
        for schedule in ("lr", "par"):
            op = exact.sweep_operator(
                ctx.model, ctx.obs, ctx.cover, schedule, ("ideal",),
                tables=tables, cap_states=ctx.cap_states,
            )
            order = (list(range(1, ctx.cover.m + 1)) if schedule == "lr" else
                     list(range(1, ctx.cover.m + 1, 2)) + list(range(2, ctx.cover.m + 1, 2)))
            norm = rates.sweep_matrix_norm(w_list, order)
            for k in range(max_sweeps + 1):
                tv = exact.tv_to_target(op, init, k)
                env = ctx.obs.T * a1.lam ** (k - 1) * norm if k >= 1 else math.nan
                fh.write(f"{schedule},{k},{repr(tv)},{repr(env)}\n")
    status = "holds" if a1.satisfied else "VIOLATED (envelope vacuous)"
    print(f"alpha={a:.6g} lambda={a1.lam:.6g} ({status}); wrote {path}")
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="blockpg",
        description="Blocked Particle Gibbs sampling for HMMs: validation, "
                    "rate bounds, sampling, invariance and stability experiments.",
    )
    parser.add_argument("command", choices=[
        "validate", "rates", "sample", "invariance", "stability", "contraction",
    ])
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
    parser.add_argument("--threads", type=int, default=None, help="workers for PAR phases")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--trace", action="store_true", help="retain and write the full trace")
    parser.add_argument("--cap-states", type=int, default=None, dest="cap_states",
                        help="max K^T for exact enumeration")
    parser.add_argument("--dump-block-update", action="store_true", dest="dump_block_update",
                        help="write one recorded block update (particles/weights/ancestors)")
    args = parser.parse_args(argv)

    commands = {
        "validate": cmd_validate,
        "rates": cmd_rates,
        "sample": cmd_sample,
        "invariance": cmd_invariance,
        "stability": cmd_stability,
        "contraction": cmd_contraction,
    }
    try:
        ctx = _build_context(args)
    except (CoverError, ModelError) as exc:
        # Invalid cover parameters or model invariants are validation
        # failures, not runtime errors.
        print(f"violation: {exc}", file=sys.stderr)
        return 1
    except (BlockPgError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return commands[args.command](ctx)
    except BlockPgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
