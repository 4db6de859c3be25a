"""Command-line entry point: ``lencollapse {verify,simulate,diagnose} TARGET [flags]``.

Every run writes its data tables as CSV plus a ``report.json`` into ``--out``.
Data files are a pure function of the resolved configuration; the wall-clock
fields live only in the report.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage error, 3 input error.
"""

import argparse
from dataclasses import dataclass
import datetime
import json
import logging
import math
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from .attention import (
    AttentionConfig,
    fenton_monte_carlo,
    fenton_params,
    norm_lemma_check,
    sample_attention,
    sigma_a_sweep,
    theorem2_check,
)
from .encoder import (
    EncoderConfig,
    collapse_sweep,
    encoder_forward,
    init_encoder,
    mean_word_embedding_similarity,
    random_sequences,
    repeated_token_experiment,
)
from .io import InputError, read_embeddings, read_ranking_run, write_csv
from .metrics import (
    BucketSpec,
    RecordError,
    centroid_distance_by_bucket,
    mean_rank_of_longest,
    pairwise_cosine_by_bucket,
    ranking_position_histogram,
)
from .rng import derive_seed, make_rng
from .spectral import DegenerateSignalError, low_pass_iterate

log = logging.getLogger("lencollapse")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_INPUT = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class Check:
    name: str
    passed: bool
    measured: object = None
    tolerance: object = None


# Defaults per (command, target). Config-file values override these and
# explicit flags override both.
COMMON = {"seed": 0, "threads": 1}
DEFAULTS = {
    ("verify", "lemma1"): {"n": 64, "trials": 100, "t_max": 100, "probe_mean": 1.0,
                           "threshold": 1e-6, "sigma_q": 1.0, "sigma_k": 1.0, "d": 64,
                           "tau": [1.0]},
    ("verify", "theorem2"): {"trials": 1000, "n_min": 4, "n_max": 128, "d_min": 4,
                             "d_max": 64, "tolerance": 1e-9},
    ("verify", "theorem3"): {"n": [8, 16, 32, 64, 128, 256], "tau": [1.0], "trials": 100,
                             "d": 64, "sigma_q": 1.0, "sigma_k": 1.0, "slack": 1.05},
    ("verify", "fenton"): {"n": [10, 100], "sigma": [0.25, 0.5, 1.0], "samples": 100_000,
                           "rel_tol": 0.1},
    ("verify", "norm-lemma"): {"trials": 500, "dim_max": 32, "tolerance": 1e-9},
    ("simulate", "collapse"): {"lengths": [16, 32, 64, 128, 256], "tau": [1.0], "pairs": 200},
    ("simulate", "repeated-token"): {"lengths": [4, 16, 64, 256], "tau": [1.0],
                                     "token_a": 1, "token_b": 2, "positional": True},
    ("simulate", "sigma-a-sweep"): {"n": [8, 16, 32, 64, 128, 256], "tau": [1.0],
                                    "trials": 100, "d": 64, "sigma_q": 1.0, "sigma_k": 1.0},
    ("simulate", "word-mean"): {"lengths": [10, 50, 100, 200, 400], "samples": 200},
    ("diagnose", "embeddings"): {"input": None, "edges": [0, 100, 200, 300, 400, 500]},
    ("diagnose", "ranking"): {"run": None, "qrels": None, "doc_lengths": None,
                              "percentile": 0.2, "bins": 10},
}
ENCODER_DEFAULTS = {"layers": 4, "heads": 4, "model_dim": 64, "ff_dim": 256,
                    "vocab_size": 1000, "residual": True, "ffn": True,
                    "layernorm": False, "positional": False, "pooling": "mean"}
TARGETS = {
    "verify": ["lemma1", "theorem2", "theorem3", "fenton", "norm-lemma"],
    "simulate": ["collapse", "repeated-token", "sigma-a-sweep", "word-mean"],
    "diagnose": ["embeddings", "ranking"],
}


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(prog="lencollapse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, targets in TARGETS.items():
        p = sub.add_parser(command)
        p.add_argument("target", choices=targets)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--threads", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--config", type=Path, help="JSON file of parameters; flags win")
        p.add_argument("-v", "--verbose", action="store_true")
        # target-specific parameters; unused ones are rejected after parsing
        p.add_argument("--n", type=_ints)
        p.add_argument("--d", type=int)
        p.add_argument("--tau", type=_floats)
        p.add_argument("--sigma", type=_floats)
        p.add_argument("--sigma-q", type=float)
        p.add_argument("--sigma-k", type=float)
        p.add_argument("--t-max", type=int)
        p.add_argument("--probe-mean", type=float)
        p.add_argument("--threshold", type=float)
        p.add_argument("--tolerance", type=float)
        p.add_argument("--rel-tol", type=float)
        p.add_argument("--slack", type=float)
        p.add_argument("--samples", type=int)
        p.add_argument("--n-min", type=int)
        p.add_argument("--n-max", type=int)
        p.add_argument("--d-min", type=int)
        p.add_argument("--d-max", type=int)
        p.add_argument("--dim-max", type=int)
        p.add_argument("--lengths", type=_ints)
        p.add_argument("--pairs", type=int)
        p.add_argument("--token-a", type=int)
        p.add_argument("--token-b", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--model-dim", type=int)
        p.add_argument("--ff-dim", type=int)
        p.add_argument("--vocab-size", type=int)
        p.add_argument("--residual", type=_bool)
        p.add_argument("--ffn", type=_bool)
        p.add_argument("--layernorm", type=_bool)
        p.add_argument("--positional", type=_bool)
        p.add_argument("--pooling", choices=["mean", "first"])
        p.add_argument("--input", type=Path)
        p.add_argument("--edges", type=_ints)
        p.add_argument("--run", type=Path)
        p.add_argument("--qrels", type=Path)
        p.add_argument("--doc-lengths", type=Path)
        p.add_argument("--percentile", type=float)
        p.add_argument("--bins", type=int)
    return parser


_META = {"command", "target", "out", "config", "verbose"}


def resolve_config(args):
    """Merge defaults, the optional config file and explicit flags, in that order."""
    key = (args.command, args.target)
    allowed = dict(COMMON, **DEFAULTS[key])
    if args.command == "simulate" and args.target != "sigma-a-sweep":
        allowed = dict(ENCODER_DEFAULTS, **allowed)
    cfg = dict(allowed)
    if args.config is not None:
        try:
            from_file = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from None
        unknown = set(from_file) - set(allowed)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command} {args.target}: "
                             f"{sorted(unknown)}")
        cfg.update(from_file)
    for name, value in vars(args).items():
        if name in _META or value is None:
            continue
        if name not in allowed:
            raise UsageError(f"--{name.replace('_', '-')} does not apply to "
                             f"{args.command} {args.target}")
        cfg[name] = value
    for name, value in cfg.items():
        if value is None:
            raise UsageError(f"--{name.replace('_', '-')} is required for "
                             f"{args.command} {args.target}")
    if cfg["seed"] < 0:
        raise UsageError("--seed must be non-negative")
    if cfg["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return cfg


def _encoder_config(cfg):
    return EncoderConfig(
        layers=cfg["layers"], heads=cfg["heads"], model_dim=cfg["model_dim"],
        ff_dim=cfg["ff_dim"], tau=1.0, use_residual=cfg["residual"], use_ffn=cfg["ffn"],
        use_layernorm=cfg["layernorm"], positional=cfg["positional"],
        pooling=cfg["pooling"], vocab_size=cfg["vocab_size"], seed=cfg["seed"],
    )


def _monotone(values, strict, increasing):
    pairs = list(zip(values, values[1:]))
    if increasing:
        return all(b > a if strict else b >= a for a, b in pairs)
    return all(b < a if strict else b <= a for a, b in pairs)


# --- verify ---------------------------------------------------------------


def verify_lemma1(cfg, out):
    n, t_max, thr = cfg["n"], cfg["t_max"], cfg["threshold"]
    if not isinstance(n, int):
        (n,) = n
    rows, worst_final, not_below = [], 0.0, 0
    for trial in range(cfg["trials"]):
        seed = derive_seed(cfg["seed"], trial)
        a = sample_attention(AttentionConfig(n=n, d=cfg["d"], sigma_q=cfg["sigma_q"],
                                             sigma_k=cfg["sigma_k"], tau=cfg["tau"][0],
                                             seed=seed)).data
        z = make_rng(derive_seed(seed, 1)).standard_normal(n)
        z = z - z.mean() + cfg["probe_mean"]
        ratios = low_pass_iterate(a, z, t_max)
        not_below += int(np.any(ratios[2:] >= ratios[1]))
        worst_final = max(worst_final, float(ratios[-1]))
        rows.extend({"trial": trial, "t": t, "ratio": r} for t, r in enumerate(ratios))
    write_csv(out / "lemma1.csv", rows, ["trial", "t", "ratio"])
    return [
        Check("ratio below its t=1 value for all t>=2", not_below == 0,
              f"{not_below} trials violated", "strict"),
        Check(f"ratio at t={t_max} below threshold", worst_final < thr, worst_final, thr),
    ], ["lemma1.csv"]


def verify_theorem2(cfg, out):
    rng = make_rng(cfg["seed"])
    rows = []
    for trial in range(cfg["trials"]):
        n = int(rng.integers(cfg["n_min"], cfg["n_max"] + 1))
        d = int(rng.integers(cfg["d_min"], cfg["d_max"] + 1))
        sq, sk = rng.uniform(0.25, 2.0, size=2)
        tau = float(rng.uniform(0.1, 1.0))
        a = sample_attention(AttentionConfig(n=n, d=d, sigma_q=float(sq), sigma_k=float(sk),
                                             tau=tau, seed=derive_seed(cfg["seed"], trial)))
        x = rng.standard_normal((n, d)) + rng.standard_normal(d)
        w_v = rng.standard_normal((d, d)) / math.sqrt(d)
        rep = theorem2_check(x, a.data, w_v, cfg["tolerance"])
        rows.append({"trial": trial, "n": n, "d": d, "tau": tau, "lhs": rep.lhs,
                     "rhs": rep.rhs, "holds": rep.holds})
    write_csv(out / "theorem2.csv", rows, ["trial", "n", "d", "tau", "lhs", "rhs", "holds"])
    held = sum(r["holds"] for r in rows)
    return [Check("lhs <= rhs in every trial", held == len(rows),
                  f"{held}/{len(rows)}", cfg["tolerance"])], ["theorem2.csv"]


SWEEP_COLUMNS = ["n", "tau", "sigma_s_hat", "sigma_a_mean", "sigma_a_std",
                 "theorem3_bound", "trials", "seed"]


def _run_sweep(cfg, name, out):
    template = AttentionConfig(n=2, d=cfg["d"], sigma_q=cfg["sigma_q"],
                               sigma_k=cfg["sigma_k"], seed=cfg["seed"])
    rows = sigma_a_sweep(cfg["n"], template, cfg["trials"], taus=cfg["tau"],
                         threads=cfg["threads"])
    write_csv(out / name, [r.as_record() for r in rows], SWEEP_COLUMNS)
    return rows


def _sweep_direction_checks(rows, taus):
    checks = []
    for tau in taus:
        means = [r.sigma_a_mean for r in rows if r.tau == tau]
        checks.append(Check(f"mean sigma_a strictly decreasing in n (tau={tau})",
                            _monotone(means, True, False), means, "strict"))
    if len(taus) > 1:
        order = sorted(taus, reverse=True)
        for n in sorted({r.n for r in rows}):
            means = [next(r.sigma_a_mean for r in rows if r.n == n and r.tau == t)
                     for t in order]
            checks.append(Check(f"mean sigma_a increases as tau decreases (n={n})",
                                _monotone(means, True, True), means, "strict"))
    return checks


def verify_theorem3(cfg, out):
    rows = _run_sweep(cfg, "theorem3.csv", out)
    checks = _sweep_direction_checks(rows, cfg["tau"])
    for r in rows:
        limit = r.theorem3_bound * cfg["slack"]
        checks.append(Check(f"mean sigma_a <= bound x {cfg['slack']} (n={r.n}, tau={r.tau})",
                            r.sigma_a_mean <= limit, r.sigma_a_mean, limit))
    return checks, ["theorem3.csv"]


def verify_fenton(cfg, out):
    rows, checks = [], []
    tol = cfg["rel_tol"]
    for i, (n, sigma) in enumerate((n, s) for n in cfg["n"] for s in cfg["sigma"]):
        mu, var = fenton_params(n, sigma)
        mc_mu, mc_var = fenton_monte_carlo(n, sigma, cfg["samples"],
                                           seed=derive_seed(cfg["seed"], i))
        # relative to the magnitude of the target; for n=1 mu is 0 and the
        # spread of the variable sets the scale instead
        scale_mu = max(abs(mu), math.sqrt(var))
        err_mu = abs(mc_mu - mu) / scale_mu
        err_var = abs(mc_var - var) / var
        rows.append({"n": n, "sigma": sigma, "mu_sum": mu, "sigma_sum_sq": var,
                     "mc_mean": mc_mu, "mc_var": mc_var, "rel_err_mean": err_mu,
                     "rel_err_var": err_var, "samples": cfg["samples"]})
        checks.append(Check(f"mean matches (n={n}, sigma={sigma})", err_mu <= tol, err_mu, tol))
        checks.append(Check(f"variance matches (n={n}, sigma={sigma})", err_var <= tol,
                            err_var, tol))
        if n == 1:
            checks.append(Check(f"n=1 identity mu_sum=0, sigma_sum_sq=sigma^2 (sigma={sigma})",
                                mu == 0.0 and math.isclose(var, sigma**2, rel_tol=1e-12),
                                [mu, var], "exact"))
    write_csv(out / "fenton.csv", rows, list(rows[0]))
    return checks, ["fenton.csv"]


def verify_norm_lemma(cfg, out):
    rng = make_rng(cfg["seed"])
    rows = []
    for trial in range(cfg["trials"]):
        m, k, p = (int(v) for v in rng.integers(1, cfg["dim_max"] + 1, size=3))
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, p))
        left, right = norm_lemma_check(a, b, cfg["tolerance"])
        rows.append({"trial": trial, "m": m, "k": k, "p": p, "ab_fro": left.lhs,
                     "a2_bfro": left.rhs, "afro_b2": right.rhs,
                     "holds": left.holds and right.holds})
    write_csv(out / "norm_lemma.csv", rows, list(rows[0]))
    held = sum(r["holds"] for r in rows)
    return [Check("both inequalities hold in every trial", held == len(rows),
                  f"{held}/{len(rows)}", cfg["tolerance"])], ["norm_lemma.csv"]


# --- simulate -------------------------------------------------------------


def simulate_collapse(cfg, out):
    params = init_encoder(_encoder_config(cfg))
    rows = []
    for tau in cfg["tau"]:
        rows.extend(collapse_sweep(params, cfg["lengths"], cfg["pairs"], tau, cfg["seed"]))
    write_csv(out / "collapse.csv", rows, ["length", "tau", "mean_cos", "std_cos", "pairs",
                                           "seed"])
    checks = []
    for tau in cfg["tau"]:
        means = [r["mean_cos"] for r in rows if r["tau"] == tau]
        checks.append(Check(f"mean cosine non-decreasing in length (tau={tau})",
                            _monotone(means, False, True), means, "non-strict"))
    if len(cfg["tau"]) > 1:
        order = sorted(cfg["tau"], reverse=True)
        for length in cfg["lengths"]:
            means = [next(r["mean_cos"] for r in rows if r["length"] == length
                          and r["tau"] == t) for t in order]
            checks.append(Check(f"mean cosine decreases as tau decreases (length={length})",
                                _monotone(means, True, False), means, "strict"))

    # per-layer trace of one sequence at the longest length, first tau
    longest = max(cfg["lengths"])
    seq = random_sequences(params.config.vocab_size, longest, 1, cfg["seed"])[0]
    _, trace = encoder_forward(params, seq, cfg["tau"][0])
    trace_rows = [{"layer": i + 1, "log_hc_ratio": trace.log_hc_ratio[i],
                   "log_bound": trace.log_bound[i], "degenerate": trace.degenerate[i]}
                  for i in range(len(trace))]
    write_csv(out / "layer_trace.csv", trace_rows,
              ["layer", "log_hc_ratio", "log_bound", "degenerate"])
    return checks, ["collapse.csv", "layer_trace.csv"]


def simulate_repeated_token(cfg, out):
    if cfg["token_a"] == cfg["token_b"]:
        raise UsageError("--token-a and --token-b must differ")
    for name in ("token_a", "token_b"):
        if not 0 <= cfg[name] < cfg["vocab_size"]:
            raise UsageError(f"--{name.replace('_', '-')} must lie in [0, vocab_size)")
    params = init_encoder(_encoder_config(cfg))
    rows = []
    for tau in cfg["tau"]:
        for r in repeated_token_experiment(params, cfg["token_a"], cfg["token_b"],
                                           cfg["lengths"], tau):
            rows.append(dict(r, tau=tau))
    write_csv(out / "repeated_token.csv", rows, ["length", "tau", "cosine"])
    checks = []
    for tau in cfg["tau"]:
        cos = [r["cosine"] for r in rows if r["tau"] == tau]
        checks.append(Check(f"cosine non-decreasing in length (tau={tau})",
                            _monotone(cos, False, True), cos, "non-strict"))
    return checks, ["repeated_token.csv"]


def simulate_sigma_a_sweep(cfg, out):
    rows = _run_sweep(cfg, "sigma_a_sweep.csv", out)
    return _sweep_direction_checks(rows, cfg["tau"]), ["sigma_a_sweep.csv"]


def simulate_word_mean(cfg, out):
    params = init_encoder(_encoder_config(cfg))
    rows = mean_word_embedding_similarity(params, cfg["lengths"], cfg["samples"], cfg["seed"])
    write_csv(out / "word_mean.csv", rows, ["length", "mean_cos", "std_cos", "pairs", "seed"])
    means = [r["mean_cos"] for r in rows]
    return [Check("mean cosine increasing in length", _monotone(means, True, True), means,
                  "strict")], ["word_mean.csv"]


# --- diagnose -------------------------------------------------------------


def diagnose_embeddings(cfg, out):
    records = read_embeddings(cfg["input"])
    buckets = BucketSpec(tuple(cfg["edges"]))
    cos_rows = pairwise_cosine_by_bucket(records, buckets)
    dist_rows = centroid_distance_by_bucket(records, buckets)
    write_csv(out / "cosine_by_bucket.csv", cos_rows,
              ["bucket_lo", "bucket_hi", "count", "pairs", "mean_cos", "std_cos"])
    write_csv(out / "centroid_distance_by_bucket.csv", dist_rows,
              ["bucket_lo", "bucket_hi", "count", "mean_distance"])
    total = sum(r["count"] for r in cos_rows)
    return [Check("every record assigned to exactly one bucket", total == len(records),
                  total, len(records))], ["cosine_by_bucket.csv",
                                          "centroid_distance_by_bucket.csv"]


def diagnose_ranking(cfg, out):
    run = read_ranking_run(cfg["run"], cfg["qrels"], cfg["doc_lengths"])
    hist = ranking_position_histogram(run, cfg["percentile"], cfg["bins"])
    checks, files = [], []
    for cohort in ("short", "long"):
        h = hist[cohort]
        name = f"histogram_{cohort}.csv"
        write_csv(out / name, [{"bin_lo": lo, "bin_hi": hi, "count": c}
                               for lo, hi, c in h["bins"]], ["bin_lo", "bin_hi", "count"])
        files.append(name)
        counted = sum(c for _, _, c in h["bins"]) + h["unranked"]
        checks.append(Check(f"{cohort} cohort counts conserved", counted == h["size"],
                            counted, h["size"]))
    summary = [{"cohort": c, "size": hist[c]["size"], "unranked": hist[c]["unranked"]}
               for c in ("short", "long")]
    summary[1]["mean_rank"] = mean_rank_of_longest(run, cfg["percentile"])
    summary[0]["mean_rank"] = ""
    write_csv(out / "ranking_summary.csv", summary, ["cohort", "size", "unranked", "mean_rank"])
    return checks, files + ["ranking_summary.csv"]


RUNNERS = {
    ("verify", "lemma1"): verify_lemma1,
    ("verify", "theorem2"): verify_theorem2,
    ("verify", "theorem3"): verify_theorem3,
    ("verify", "fenton"): verify_fenton,
    ("verify", "norm-lemma"): verify_norm_lemma,
    ("simulate", "collapse"): simulate_collapse,
    ("simulate", "repeated-token"): simulate_repeated_token,
    ("simulate", "sigma-a-sweep"): simulate_sigma_a_sweep,
    ("simulate", "word-mean"): simulate_word_mean,
    ("diagnose", "embeddings"): diagnose_embeddings,
    ("diagnose", "ranking"): diagnose_ranking,
}


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def run(command, target, cfg, out):
    """Execute one subcommand and write its report; returns the report dict."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    checks, artifacts = RUNNERS[(command, target)](cfg, out)
    report = {
        "subcommand": f"{command} {target}",
        "version": __version__,
        "config": {k: _jsonable(v) for k, v in sorted(cfg.items())},
        "checks": [{"name": c.name, "passed": bool(c.passed),
                    "measured": _jsonable(c.measured), "tolerance": _jsonable(c.tolerance)}
                   for c in checks],
        "passed": all(c.passed for c in checks),
        "artifacts": artifacts,
        "duration_s": round(time.perf_counter() - started, 3),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        report = run(args.command, args.target, cfg, args.out)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except DegenerateSignalError as exc:
        print(f"error: degenerate input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, RecordError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, TypeError) as exc:
        print(f"error: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}  "
              f"measured={c['measured']}  tolerance={c['tolerance']}")
    print(f"{report['subcommand']}: {'PASS' if report['passed'] else 'FAIL'} "
          f"({report['duration_s']} s) -> {args.out}")
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
