"""Command-line entry point: ``stdgmrf <subcommand> [options]``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key=value`` lines, then explicit flags.  Usage errors exit with status 2;
runtime failures exit with status 1 and print a JSON diagnostic to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import datagen, infer, io, metrics, oracle
from .errors import STDGMRFError, TooLarge
from .graph import GraphSpec, build_periodic_lattice, lattice_node, precompute_spectrum
from .layers import row_stencil, temporal_stencil
from .observations import ObservationSet
from .prior import ModelParams
from .vi import TrainConfig, VariationalParams, train

log = logging.getLogger("stdgmrf")

DEFAULTS = {
    "side": 30,
    "k": 20,
    "w": 9,
    "sigma": 0.01,
    "markov_order": 1,
    "l_spatial": 2,
    "l_temporal": 4,
    "temporal_variant": "advection_diffusion",
    "time_invariant": True,
    "vi_temporal": True,
    "iterations": 10000,
    "lr": 0.01,
    "mc_samples": 1,
    "seed": 0,
    "n_posterior_samples": 100,
}
_TYPES = {k: type(v) for k, v in DEFAULTS.items()}


class UsageError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _coerce(key: str, value):
    typ = _TYPES[key]
    if typ is bool:
        return value if isinstance(value, bool) else _parse_bool(value)
    try:
        return typ(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None


def read_config(path: str | Path) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = _coerce(key, val)
    return cfg


# ---------------------------------------------------------------------------
# helpers

def lattice_graph(side: int) -> GraphSpec:
    g = build_periodic_lattice(side)
    return precompute_spectrum(g, method="dense" if g.n_nodes <= 4096 else "lattice")


def _sim_config(meta: dict) -> datagen.SimConfig:
    fields = datagen.SimConfig.__dataclass_fields__
    kw = {k[4:]: v for k, v in meta.items() if k.startswith("sim_") and k[4:] in fields}
    if "v" in kw:
        kw["v"] = tuple(kw["v"])
    return datagen.SimConfig(**kw)


def oracle_posterior(ds: datagen.SyntheticDataset, obs: ObservationSet) -> oracle.DensePosterior:
    """Exact posterior under the generating model, conditioned on ``obs``."""
    g = build_periodic_lattice(ds.side)
    ssm = datagen.true_ssm(g, _sim_config(ds.meta))
    omega = ssm.dense_precision()
    eta = omega @ ssm.prior_mean().ravel()
    return oracle.posterior_from_precision(omega, eta, obs)


def true_stencil(side: int, meta: dict, radius: int) -> dict:
    g = build_periodic_lattice(side)
    sim = _sim_config(meta)
    f = datagen.build_adv_diff_transition(g, sim.D_diff, sim.v, sim.steps_per_frame)
    center = lattice_node(side // 2, side // 2, side)
    return row_stencil(g, f.getrow(center).toarray().ravel(), center, radius)


def learned_stencil(m: ModelParams, g: GraphSpec, k: int = 1) -> dict:
    return temporal_stencil(g, m.temporal_layers(k, 1))


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args, cfg) -> dict:
    g = build_periodic_lattice(cfg["side"])
    sim = datagen.SimConfig(K=cfg["k"], seed=cfg["seed"])
    mask = datagen.MaskConfig(w=cfg["w"], sigma=cfg["sigma"], seed=cfg["seed"] + 1)
    ds = datagen.make_dataset(g, sim, mask)
    ds.save(args.out)
    return {"out": str(args.out), "n_truth": int(ds.truth.size), "n_test": int(ds.test_k.size)}


def build_model(cfg: dict, n_steps: int, rng) -> ModelParams:
    return ModelParams.init(
        n_steps,
        L_spatial=cfg["l_spatial"],
        L_temporal=cfg["l_temporal"],
        markov_order=cfg["markov_order"],
        temporal_variant=cfg["temporal_variant"],
        time_invariant=cfg["time_invariant"],
        rng=rng,
    )


def cmd_train(args, cfg) -> dict:
    ds = datagen.SyntheticDataset.load(args.data)
    g = lattice_graph(ds.side)
    obs = ds.observations(("train",))
    rng = np.random.default_rng(cfg["seed"])
    m = build_model(cfg, ds.n_steps, rng)
    vp = VariationalParams.init(obs, temporal=cfg["vi_temporal"])
    tc = TrainConfig(iterations=cfg["iterations"], learning_rate=cfg["lr"], mc_samples=cfg["mc_samples"],
                     seed=cfg["seed"], log_every=max(1, cfg["iterations"] // 20) if args.verbose else 0)
    t0 = time.perf_counter()
    m, vp, trace = train(m, vp, g, obs, tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_checkpoint(out / "checkpoint.bin", m, vp, extra={k: cfg[k] for k in sorted(cfg)})
    io.write_loss_csv(out / "loss.csv", trace)
    info = {"iterations": cfg["iterations"], "final_elbo": float(trace[-1]) if len(trace) else None,
            "seconds": time.perf_counter() - t0, "config": cfg}
    io.write_json(out / "train.json", info)
    return info


def cmd_infer(args, cfg) -> dict:
    ds = datagen.SyntheticDataset.load(args.data)
    g = lattice_graph(ds.side)
    obs = ds.observations(("train",))
    m, vp, _ = io.load_checkpoint(args.checkpoint)
    summary = infer.summarize_posterior(m, vp, g, obs, n_samples=cfg["n_posterior_samples"], seed=cfg["seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_posterior_csv(out / "posterior.csv", summary.mean, summary.marginal_std)
    io.write_json(out / "diagnostics.json", summary.diagnostics)
    return {"out": str(out), "outer_iterations": summary.diagnostics.get("outer_iterations")}


def cmd_evaluate(args, cfg) -> dict:
    ds = datagen.SyntheticDataset.load(args.data)
    if args.posterior == "truth":
        mean, std = ds.truth.copy(), np.zeros_like(ds.truth)
    else:
        mean, std = io.read_posterior_csv(args.posterior, ds.truth.shape)
    test = ds.test_mask
    if not test.any():
        test = np.ones_like(test)
    rmse_mu = rmse_sigma = None
    note = None
    if args.reference == "oracle":
        try:
            ref = oracle_posterior(ds, ds.observations(("train",)))
            rmse_mu = metrics.rmse(mean, ref.mean, test)
            rmse_sigma = metrics.rmse(std, ref.marginal_std, test)
        except TooLarge as exc:
            note = f"oracle skipped: {exc}"
    else:
        rmse_mu = metrics.rmse(mean, ds.truth, test)
    crps = metrics.mean_crps(mean, std, ds.truth, test)
    pearson = None
    if args.checkpoint:
        m, _, _ = io.load_checkpoint(args.checkpoint)
        if m.temporal_variant == "advection_diffusion" and m.L_temporal > 0 and m.n_steps > 1:
            g = build_periodic_lattice(ds.side)
            pearson = metrics.stencil_pearson(learned_stencil(m, g), true_stencil(ds.side, ds.meta, m.L_temporal))
    report = metrics.MetricReport(rmse_mu, rmse_sigma, crps, pearson,
                                  config={"reference": args.reference, "crps_sigma": "latent", "note": note},
                                  seed=cfg["seed"])
    if args.out:
        io.write_json(args.out, report.to_dict())
    return report.to_dict()


def run_oracle_checks(seed: int = 0) -> dict:
    """Cross-module agreement on small random instances."""
    from .prior import precision_matvec

    rng = np.random.default_rng(seed)
    g = precompute_spectrum(build_periodic_lattice(3))
    m = ModelParams.init(3, L_spatial=2, L_temporal=2, temporal_variant="advection_diffusion",
                         time_invariant=False, rng=rng)
    m.temporal[...] = rng.uniform(-0.3, 0.3, m.temporal.shape)
    m.bias_f[:] = rng.normal(size=m.bias_f.shape)
    m.bias_s[:] = rng.normal(size=m.bias_s.shape)
    mask = rng.random((3, 9)) < 0.6
    obs = ObservationSet.from_dense(rng.normal(size=(3, 9)), mask, 0.5)
    dense = oracle.dense_posterior(m, g, obs)
    cg_mean = infer.posterior_mean(m, None, g, obs)
    x = rng.normal(size=(3, 9))
    om = oracle.dense_precision(m, g)
    blocks = oracle.precision_from_blocks(oracle.dense_F_blocks(m, g),
                                          [s.T @ s for s in oracle.dense_S_blocks(m, g)], 1)
    ssm = oracle.model_to_ssm(m, g)
    sm = oracle.rts_smoother(ssm.mu0, ssm.Q0, ssm.F, ssm.c, ssm.Q, obs)
    checks = {
        "precision_matvec_vs_dense": float(np.max(np.abs(precision_matvec(m, g, x).ravel() - om @ x.ravel()))),
        "block_precision_vs_dense": float(np.max(np.abs(blocks - om))),
        "cg_mean_vs_dense": float(np.linalg.norm(cg_mean - dense.mean) / np.linalg.norm(dense.mean)),
        "rts_mean_vs_dense": float(np.max(np.abs(sm.means - dense.mean))),
        "rts_std_vs_dense": float(np.max(np.abs(sm.marginal_std - dense.marginal_std))),
    }
    limits = {"precision_matvec_vs_dense": 1e-9, "block_precision_vs_dense": 1e-10,
              "cg_mean_vs_dense": 1e-5, "rts_mean_vs_dense": 1e-6, "rts_std_vs_dense": 1e-6}
    return {name: {"value": val, "limit": limits[name], "ok": val < limits[name]} for name, val in checks.items()}


def cmd_oracle_check(args, cfg) -> dict:
    res = run_oracle_checks(cfg["seed"])
    if not all(r["ok"] for r in res.values()):
        raise RuntimeError("oracle checks failed: " + json.dumps(res))
    return res


def cmd_bench(args, cfg) -> dict:
    from .bench import benchmark_scaling

    res = benchmark_scaling(args.sides, K=cfg["k"], iters=args.iters, reps=args.reps, seed=cfg["seed"])
    if args.out:
        res.write_csv(args.out)
    return {"rows": res.rows, "refused": res.refused}


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stdgmrf", description="Spatiotemporal DGMRF engine")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--side", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--w", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[common], help="fit prior and variational parameters")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--iterations", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--mc-samples", dest="mc_samples", type=int)
    t.add_argument("--markov-order", dest="markov_order", type=int)
    t.add_argument("--l-spatial", dest="l_spatial", type=int)
    t.add_argument("--l-temporal", dest="l_temporal", type=int)
    t.add_argument("--temporal-variant", dest="temporal_variant",
                   choices=["ar", "diffusion", "directed_flow", "advection_diffusion"])
    t.add_argument("--time-invariant", dest="time_invariant", choices=["true", "false"])
    t.add_argument("--vi-temporal", dest="vi_temporal", choices=["true", "false"])

    i = sub.add_parser("infer", parents=[common], help="posterior mean, samples and marginal std")
    i.add_argument("--data", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--n-posterior-samples", dest="n_posterior_samples", type=int)

    e = sub.add_parser("evaluate", parents=[common], help="metrics against the oracle posterior or truth")
    e.add_argument("--data", required=True)
    e.add_argument("--posterior", required=True, help="posterior.csv, or 'truth' for the identity estimate")
    e.add_argument("--reference", choices=["oracle", "truth"], default="oracle")
    e.add_argument("--checkpoint")
    e.add_argument("--out")

    sub.add_parser("oracle-check", parents=[common], help="cross-module equivalence checks")

    b = sub.add_parser("bench", parents=[common], help="engine vs dense smoother timings")
    b.add_argument("--sides", type=int, nargs="+", default=[16, 32, 64])
    b.add_argument("--k", type=int)
    b.add_argument("--iters", type=int, default=20)
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--out")
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "oracle-check": cmd_oracle_check,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
    except (UsageError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"stdgmrf: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        result = COMMANDS[args.command](args, cfg)
    except (STDGMRFError, RuntimeError, OSError, ValueError, KeyError) as exc:
        diag = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "iteration"):
            diag["iteration"] = exc.iteration
        print(json.dumps(diag), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=io._default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
