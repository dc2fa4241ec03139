"""Command-line entry point: ``elista {gen,train,bench,stereo}``.

Every command reads one YAML run config. Keys not listed in :data:`DEFAULTS`
are rejected. Exit codes: 0 success, 2 invalid config or inputs, 3 runtime
failure.
"""

import argparse
import copy
import csv
import logging
import os
import sys
import time

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from .evaluation import DISPLAY, BenchReport, MissingCheckpointError, run_benchmark
from .problem import (
    SignalClass,
    dictionary_to_csv,
    gen_dictionary,
    load_dictionary,
    sample_set,
    samples_to_csv,
    save_dictionary,
    save_samples,
)
from .stereo import (
    build_projector,
    ista_solver,
    mean_angular_error,
    network_solver,
    pixel_sampler,
    random_rig,
    recover_pixels,
    synth_scene,
    write_normal_map_ppm,
    write_results_csv,
)
from .training import TrainConfig, train_network, train_stagewise
from .unrolled import KINDS, load_params

log = logging.getLogger("elista")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3

DEFAULTS = {
    "out_dir": "runs",
    "seeds": [0],
    "problem": {
        "m": 40,
        "n": 80,
        "kappa": [5.0],
        "snr_db": ["inf"],
        "B": 1.0,
        "s": 16,
        "support_prob": 0.1,
        "dict_seed": 0,
        "lipschitz_convention": "squared",
    },
    "data": {
        "dictionary": None,
        "n_test": 1000,
        "test_seed_offset": 10_000,
    },
    "network": {
        "kinds": ["lista", "elista_tied"],
        "T": 8,
        "lam": None,
    },
    "training": {
        "batch_size": 128,
        "samples_per_stage": 128 * 250,
        "lr_init": 2e-2,
        "lr_decay_factors": [1.0, 0.2, 0.02],
        "validation_size": 500,
        "val_every": 10,
        "patience": 20,
        "improve_tol": 1e-4,
    },
    "bench": {
        "methods": ["ista", "lista", "elista_tied"],
    },
    "stereo": {
        "q": [15, 25, 35],
        "resolution": 24,
        "corruption_frac": 0.4,
        "max_polar_deg": 50.0,
        "ista_iters": None,
        "normal_maps": False,
    },
}

HELP_NOTES = {
    "problem.kappa": "list of condition numbers; one dictionary each",
    "problem.snr_db": "list of SNRs in dB; 'inf' for noiseless",
    "data.dictionary": "npz from 'gen' to train on instead of generating one",
    "data.test_seed_offset": "test set of seed k uses seed k + offset",
    "network.lam": "l1 weight; null picks 0.1*mean||A^T y||_inf",
    "stereo.ista_iters": "ISTA iterations for stereo; null means network.T",
}


class ConfigError(ValueError):
    pass


def _flat(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flat(v, key + ".")
        else:
            yield key, v


def _merge(base, over, prefix=""):
    for k, v in over.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {key!r} must be a mapping")
            _merge(base[k], v, key + ".")
        else:
            base[k] = v


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _snr(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
        return np.inf
    return float(v)


def load_config(path=None, overrides=None):
    """Defaults merged with the YAML file at ``path``, then validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, doc)
    if overrides:
        _merge(cfg, overrides)
    return validate_config(cfg)


def validate_config(cfg):
    p = cfg["problem"]
    if not isinstance(p["m"], int) or not isinstance(p["n"], int) or not 0 < p["m"] < p["n"]:
        raise ConfigError(f"problem dimensions need 0 < m < n, got m={p['m']}, n={p['n']}")
    p["kappa"] = [float(k) for k in _as_list(p["kappa"])]
    if any(k < 1 for k in p["kappa"]):
        raise ConfigError(f"problem.kappa values must be >= 1, got {p['kappa']}")
    p["snr_db"] = [_snr(v) for v in _as_list(p["snr_db"])]
    if any(not v > 0 for v in p["snr_db"]):
        raise ConfigError(f"problem.snr_db values must be positive or inf, got {p['snr_db']}")
    try:
        SignalClass(float(p["B"]), int(p["s"]), float(p["support_prob"]))
    except ValueError as exc:
        raise ConfigError(f"problem signal class: {exc}") from None
    if p["s"] > p["n"]:
        raise ConfigError(f"problem.s={p['s']} exceeds n={p['n']}")
    cfg["seeds"] = [int(s) for s in _as_list(cfg["seeds"])]
    net = cfg["network"]
    net["kinds"] = _as_list(net["kinds"])
    for k in net["kinds"]:
        if k not in KINDS:
            raise ConfigError(f"network.kinds: unknown kind {k!r}; expected one of {KINDS}")
    if not isinstance(net["T"], int) or net["T"] < 1:
        raise ConfigError(f"network.T must be a positive integer, got {net['T']}")
    for m in _as_list(cfg["bench"]["methods"]):
        if m not in DISPLAY:
            raise ConfigError(f"bench.methods: unknown method {m!r}")
    try:
        train_config(cfg, 0)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"training: {exc}") from None
    st = cfg["stereo"]
    st["q"] = [int(q) for q in _as_list(st["q"])]
    if any(q < 4 for q in st["q"]):
        raise ConfigError(f"stereo.q values must be >= 4, got {st['q']}")
    if not 0 <= st["corruption_frac"] < 1:
        raise ConfigError(f"stereo.corruption_frac must lie in [0, 1), got {st['corruption_frac']}")
    return cfg


def train_config(cfg, seed):
    t = dict(cfg["training"])
    t["lr_decay_factors"] = tuple(t["lr_decay_factors"])
    return TrainConfig(seed=seed, lam=cfg["network"]["lam"], **t)


def signal_class(cfg):
    p = cfg["problem"]
    return SignalClass(float(p["B"]), int(p["s"]), float(p["support_prob"]))


def _snr_tag(snr):
    return "inf" if np.isinf(snr) else f"{snr:g}"


def cell_dictionary(cfg, kappa):
    path = cfg["data"]["dictionary"]
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"dataset path does not exist: {path}")
        return load_dictionary(path)
    p = cfg["problem"]
    return gen_dictionary(p["m"], p["n"], kappa, p["dict_seed"], p["lipschitz_convention"])


def cell_kappas(cfg):
    if cfg["data"]["dictionary"] is not None:
        return [None]
    return cfg["problem"]["kappa"]


def checkpoint_path(cfg, kind, kappa, snr, seed):
    name = f"{kind}_k{kappa:g}_snr{_snr_tag(snr)}_s{seed}.npz"
    return os.path.join(cfg["out_dir"], "checkpoints", name)


# -- experiments (also used directly by the acceptance tests) --------------

def train_grid(cfg, resume=False, write=True):
    """Train every (kappa, snr, seed, kind) cell. Returns ``{key: TrainResult}``."""
    cls = signal_class(cfg)
    T = cfg["network"]["T"]
    out = {}
    for kappa in cell_kappas(cfg):
        d = cell_dictionary(cfg, kappa)
        for snr in cfg["problem"]["snr_db"]:
            for seed in cfg["seeds"]:
                for kind in cfg["network"]["kinds"]:
                    ck = checkpoint_path(cfg, kind, d.kappa, snr, seed) if write else None
                    if ck is not None:
                        os.makedirs(os.path.dirname(ck), exist_ok=True)
                    t0 = time.time()
                    res = train_stagewise(kind, d, cls, snr, train_config(cfg, seed), T,
                                          checkpoint_path=ck, resume=bool(resume and ck and os.path.exists(ck)))
                    log.info("trained %s kappa=%g snr=%s seed=%d in %.1fs: val %.2f dB", kind, d.kappa,
                             _snr_tag(snr), seed, time.time() - t0, res.stage_summary[-1]["val_nmse_db"])
                    if write:
                        res.write_log(ck[:-4] + "_log.csv")
                    out[(kind, round(d.kappa, 4), snr, seed)] = res
    return out


def load_trained(cfg, kind, kappa, snr, seed):
    ck = checkpoint_path(cfg, kind, kappa, snr, seed)
    if not os.path.exists(ck):
        raise MissingCheckpointError(f"no checkpoint for method {kind!r}: {ck} (run 'train' first)")
    params, extra = load_params(ck)
    if int(extra["stage"]) + 1 != params.depth:
        raise MissingCheckpointError(f"checkpoint for method {kind!r} is incomplete: {ck} (resume 'train')")
    return params


def bench_grid(cfg, trained=None):
    """Evaluate ``bench.methods`` in every cell; learned parameters come from
    ``trained`` (as returned by :func:`train_grid`) or from checkpoints."""
    cls = signal_class(cfg)
    methods = _as_list(cfg["bench"]["methods"])
    off = cfg["data"]["test_seed_offset"]
    report = BenchReport()
    for kappa in cell_kappas(cfg):
        d = cell_dictionary(cfg, kappa)
        for snr in cfg["problem"]["snr_db"]:
            params = {}
            for seed in cfg["seeds"]:
                for kind in (m for m in methods if m in KINDS):
                    key = (kind, round(d.kappa, 4), snr, seed)
                    if trained is not None and key in trained:
                        p = trained[key].params
                    else:
                        p = load_trained(cfg, kind, d.kappa, snr, seed)
                    params[(kind, seed + off)] = p
            rep = run_benchmark(methods, d, cls, snr, cfg["data"]["n_test"],
                                [s + off for s in cfg["seeds"]], T=cfg["network"]["T"],
                                params=params)
            for r in rep.results:
                r.seed -= off
            report.extend(rep)
    return report


def stereo_grid(cfg, write=True):
    """Train and evaluate on synthetic sphere scenes for every ``q`` and seed.

    Returns rows ``{method, q, seed, mean_angular_error}``.
    """
    st = cfg["stereo"]
    T = cfg["network"]["T"]
    iters = st["ista_iters"] or T
    methods = [m for m in _as_list(cfg["bench"]["methods"]) if m == "ista" or m in KINDS]
    frac = st["corruption_frac"]
    rows = []
    for q in st["q"]:
        for seed in cfg["seeds"]:
            rig = random_rig(q, seed, st["max_polar_deg"])
            P = build_projector(rig)
            scene = synth_scene("sphere", st["resolution"], rig, frac, seed + cfg["data"]["test_seed_offset"])
            for method in methods:
                if method == "ista":
                    solver = ista_solver(iters)
                else:
                    tcfg = train_config(cfg, seed)
                    res = train_network(method, P, pixel_sampler(rig, P, frac), tcfg, T, L=1.0)
                    solver = network_solver(res.params)
                W, _, _ = recover_pixels(rig, P, scene.O, solver)
                err = mean_angular_error(W.T, scene.normals)
                log.info("stereo %s q=%d seed=%d: %.5f rad", method, q, seed, err)
                rows.append({"method": method, "q": q, "seed": seed, "mean_angular_error": err})
                if write:
                    tag = f"{method}_q{q}_s{seed}"
                    write_results_csv(os.path.join(cfg["out_dir"], f"stereo_{tag}.csv"), scene.normals, W.T)
                    if st["normal_maps"]:
                        write_normal_map_ppm(os.path.join(cfg["out_dir"], f"normals_{tag}.ppm"),
                                             scene.mask, W.T)
    return rows


def stereo_table(rows, stat=np.median):
    """Mean angular error (rad), one row per method, one column per ``q``."""
    qs = sorted({r["q"] for r in rows})
    methods = list(dict.fromkeys(r["method"] for r in rows))
    head = ["method"] + [f"q={q}" for q in qs]
    lines = []
    for m in methods:
        vals = [stat([r["mean_angular_error"] for r in rows if r["method"] == m and r["q"] == q])
                for q in qs]
        lines.append([DISPLAY.get(m, m)] + [f"{v:.5f}" for v in vals])
    widths = [max(len(r[i]) for r in [head] + lines) for i in range(len(head))]
    fmt = lambda r: " | ".join(c.rjust(w) for c, w in zip(r, widths))
    return "\n".join([fmt(head), "-+-".join("-" * w for w in widths)] + [fmt(r) for r in lines]) + "\n"


# -- commands --------------------------------------------------------------

def cmd_gen(cfg, args):
    cls = signal_class(cfg)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    off = cfg["data"]["test_seed_offset"]
    for kappa in cell_kappas(cfg):
        d = cell_dictionary(cfg, kappa)
        base = os.path.join(cfg["out_dir"], f"dict_k{d.kappa:g}")
        save_dictionary(base + ".npz", d)
        dictionary_to_csv(base + ".csv", d)
        print(f"dictionary m={d.m} n={d.n} kappa={d.kappa:.6g} L={d.L:.6g} -> {base}.npz")
        for snr in cfg["problem"]["snr_db"]:
            for seed in cfg["seeds"]:
                X, Y, N = sample_set(d, cls, cfg["data"]["n_test"], snr, seed + off)
                sb = f"{base}_snr{_snr_tag(snr)}_s{seed}"
                save_samples(sb + ".npz", X, Y, N, snr)
                samples_to_csv(sb + ".csv", X, Y)
                print(f"  samples snr={_snr_tag(snr)} seed={seed}: {X.shape[1]} -> {sb}.npz")
    return EXIT_OK


def cmd_train(cfg, args):
    results = train_grid(cfg, resume=args.resume)
    for (kind, kappa, snr, seed), res in results.items():
        print(f"{DISPLAY[kind]:>14} kappa={kappa:g} SNR={_snr_tag(snr)} seed={seed}: "
              f"val NMSE {res.stage_summary[-1]['val_nmse_db']:.3f} dB")
    return EXIT_OK


def cmd_bench(cfg, args):
    report = bench_grid(cfg)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    path = os.path.join(cfg["out_dir"], "bench.csv")
    report.write_csv(path)
    sys.stdout.write(report.format_table())
    print(f"wrote {path}")
    return EXIT_OK


def cmd_stereo(cfg, args):
    os.makedirs(cfg["out_dir"], exist_ok=True)
    rows = stereo_grid(cfg)
    path = os.path.join(cfg["out_dir"], "stereo_summary.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "q", "seed", "mean_angular_error"])
        w.writeheader()
        w.writerows(rows)
    sys.stdout.write(stereo_table(rows))
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "bench": cmd_bench, "stereo": cmd_stereo}


def _epilog():
    lines = ["config keys (YAML, nested by section) and defaults:"]
    for key, val in _flat(DEFAULTS):
        note = HELP_NOTES.get(key)
        lines.append(f"  {key} = {val!r}" + (f"  # {note}" if note else ""))
    lines.append("")
    lines.append("exit codes: 0 success, 2 invalid config or inputs, 3 runtime failure")
    return "\n".join(lines)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, deterministic)")
    common.add_argument("--out-dir", help="override out_dir")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(
        prog="elista", parents=[common], epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Sparse coding with unrolled ISTA/extragradient networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "write dictionaries and test sets",
        "train": "stage-wise training of every configured network",
        "bench": "evaluate trained networks and classical solvers",
        "stereo": "photometric stereo on a synthetic sphere",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, parents=[common], help=text, epilog=_epilog(),
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "train":
            sp.add_argument("--resume", action="store_true", help="continue from stage checkpoints")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    try:
        cfg = load_config(args.config, overrides)
        with threadpool_limits(args.threads):
            return COMMANDS[args.command](cfg, args)
    except (ConfigError, MissingCheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except yaml.YAMLError as exc:
        print(f"error: malformed config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ArithmeticError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
