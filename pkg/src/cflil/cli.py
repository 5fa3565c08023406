"""Command-line driver: ``cflil --preset geometric --experiment moments``.

Configuration is a flat ``key = value`` file (``#`` comments, one key per
line, no sections).  Recognised keys:

  preset                 one of the shipped presets (family defaults)
  kind, c, p, lambda, b, offset, values
                         family description (values: comma separated)
  experiment             simulate | lil | moments | dimension | contraction |
                         martingale | duality | condition | all
  n, n_max               trajectory length / level count
  seeds                  inclusive range ``A..B``
  depth, width, tol      grid settings
  mode, K                sampler mode (product | operator) and operator steps
  delta                  growth-condition / threshold parameter
  out                    output directory

Command-line flags override the file.  Exit status: 0 when every executed
check passes (inconclusive checks do not count), 1 when a check fails, 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import verify as V
from .sampler import sample_trajectory
from .seqpot import AlphaFamily
from .stats import distribution_tests, lil_series, local_dimension, q_identity

EXPERIMENTS = ("simulate", "lil", "moments", "dimension", "contraction", "martingale",
               "duality", "condition", "all")
FAMILY_KEYS = ("kind", "c", "p", "lambda", "b", "offset", "values")
RUN_KEYS = ("preset", "experiment", "n", "n_max", "seeds", "depth", "width", "tol", "mode",
            "K", "delta", "out")
DEFAULT_N = {"simulate": 100, "lil": 10_000, "dimension": 10_000, "moments": 30}


@dataclass(frozen=True)
class Preset:
    family: AlphaFamily
    delta: float
    note: str


PRESETS = {
    "polynomial": Preset(
        AlphaFamily.polynomial(1, 1.5, 2), 0.5,
        "alpha_n = ceil(n^1.5) + 2; sum 1/alpha_n < inf; growth condition holds (delta=0.5); "
        "LLN, CLT, LIL and dimension 1/2 apply"),
    "geometric": Preset(
        AlphaFamily.geometric(4, 2), 0.1,
        "alpha_n = 4 * 2^n; sum 1/alpha_n < inf; growth condition holds (delta=0.1); "
        "LLN, CLT, LIL and dimension 1/2 apply"),
    "doubly_exponential": Preset(
        AlphaFamily.doubly_exponential(2, 2), 0.1,
        "alpha_n = 2^(2^n); sum 1/alpha_n < inf, so the limit laws apply; "
        "dimension < 1/2, condition fails (negative control)"),
}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    family: AlphaFamily
    experiment: str
    n: int
    n_max: int = 15
    seeds: tuple[int, int] = (0, 9)
    depth: int = 3
    width: int = 64
    tol: float = 1e-10
    mode: str = "product"
    K: int = 3
    delta: float = 0.1
    out: str = "cflil-out"
    preset: str = ""
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def seed_list(self) -> list[int]:
        return list(range(self.seeds[0], self.seeds[1] + 1))

    def header(self) -> dict:
        d = {"experiment": self.experiment, "family": self.family.label(), "n": self.n,
             "n_max": self.n_max, "seeds": f"{self.seeds[0]}..{self.seeds[1]}",
             "depth": self.depth, "width": self.width, "tol": self.tol, "mode": self.mode,
             "K": self.K, "delta": self.delta, "preset": self.preset}
        for k, v in self.family.to_mapping().items():
            d[f"family.{k}"] = ",".join(map(str, v)) if isinstance(v, list) else v
        return d


# -- parsing ---------------------------------------------------------------------------


def read_config_file(path: str) -> dict:
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#",), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as e:
        raise UsageError(f"cannot parse {path}: {e}") from None
    return dict(cp["run"])


def parse_seed_range(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in str(text).split(".."))
    except ValueError:
        raise UsageError(f"seeds: expected A..B, got {text!r}") from None
    if a < 0 or b < a:
        raise UsageError(f"seeds: empty or negative range {text!r}")
    return a, b


def _num(key, raw, cast):
    try:
        v = cast(raw)
    except ValueError:
        raise UsageError(f"{key}: not a number: {raw!r}") from None
    if not v > 0:
        raise UsageError(f"{key}: must be positive, got {raw!r}")
    return v


def build_config(values: dict) -> RunConfig:
    unknown = [k for k in values if k not in FAMILY_KEYS + RUN_KEYS]
    if unknown:
        raise UsageError(f"unknown config key {unknown[0]!r}")
    preset = values.get("preset", "")
    fam_spec = {k: values[k] for k in FAMILY_KEYS if k in values}
    if preset:
        if preset not in PRESETS:
            raise UsageError(f"preset: unknown preset {preset!r}; see --list-presets")
        if fam_spec:
            raise UsageError(f"family key {next(iter(fam_spec))!r} conflicts with preset")
        family = PRESETS[preset].family
        delta = PRESETS[preset].delta
    else:
        if "kind" not in fam_spec:
            raise UsageError("kind: family kind missing (give kind=... or a preset)")
        try:
            family = AlphaFamily.from_mapping(fam_spec)
        except KeyError as e:
            raise UsageError(f"{e.args[0]}: missing family parameter") from None
        except ValueError as e:
            raise UsageError(f"kind: {e}") from None
        delta = 0.1
    exp = values.get("experiment", "")
    if exp not in EXPERIMENTS:
        raise UsageError(f"experiment: expected one of {', '.join(EXPERIMENTS)}, got {exp!r}")
    mode = values.get("mode", "product")
    if mode not in ("product", "operator"):
        raise UsageError(f"mode: expected product or operator, got {mode!r}")
    cfg = RunConfig(
        family=family, experiment=exp,
        n=_num("n", values.get("n", DEFAULT_N.get(exp, 100)), int),
        n_max=_num("n_max", values.get("n_max", 15), int),
        seeds=parse_seed_range(values.get("seeds", "0..9")),
        depth=_num("depth", values.get("depth", 3), int),
        width=_num("width", values.get("width", 64), int),
        tol=_num("tol", values.get("tol", 1e-10), float),
        mode=mode, K=_num("K", values.get("K", 3), int),
        delta=_num("delta", values.get("delta", delta), float),
        out=str(values.get("out", "cflil-out")), preset=preset, raw=dict(values))
    if cfg.n_max < 2:
        raise UsageError("n_max: must be >= 2")
    return cfg


# -- output ----------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, cfg: RunConfig, header: list[str], rows) -> None:
    buf = io.StringIO()
    for k, v in cfg.header().items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue())


def write_json(path: Path, cfg: RunConfig, reports, summary: dict) -> None:
    doc = {"config": cfg.header(), "summary": V._jsonable(summary),
           "reports": [r.to_dict() for r in reports]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _pool_size() -> int:
    env = os.environ.get("CF_RESTRICTED_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, min(cap, int(env)))
        except ValueError:
            raise UsageError(f"CF_RESTRICTED_THREADS: not an integer: {env!r}") from None
    return cap


def _map_seeds(fn, seeds):
    with ThreadPoolExecutor(max_workers=_pool_size()) as ex:
        return list(ex.map(fn, seeds))


def _checkpoints(n: int) -> list[int]:
    pts = [10 ** j for j in range(2, 12) if 10 ** j < n]
    return pts + [n]


# -- experiments -----------------------------------------------------------------------


def _trajectory(cfg: RunConfig, seed: int):
    return sample_trajectory(cfg.family, cfg.n, cfg.mode, seed, cfg.K,
                             depth=2, width=min(cfg.width, 64))


def run_simulate(cfg: RunConfig, out: Path):
    trajs = _map_seeds(lambda s: _trajectory(cfg, s), cfg.seed_list)
    rows = []
    for s, tr in zip(cfg.seed_list, trajs):
        for k in range(tr.length):
            e = tr.exact[k]
            rows.append((s, k, "" if e < 0 else int(e), tr.log_digit[k], tr.log_cond_prob[k]))
    write_csv(out / "simulate.csv", cfg, ["seed", "k", "digit", "log_digit", "log_cond_prob"], rows)
    qi = max(q_identity(tr).max_abs for tr in trajs)
    rep = V.VerificationReport("q_identity", qi, 4 + 2 * math.log(2), 0.0,
                               qi <= 4 + 2 * math.log(2), cfg.header())
    return [rep], {"trajectories": len(trajs), "length": cfg.n}


def _seed_rows(cfg: RunConfig, seed: int, with_dim: bool):
    tr = _trajectory(cfg, seed)
    ser = lil_series(tr)
    rows = []
    for n in _checkpoints(cfg.n):
        ld = local_dimension(tr, n, cfg.delta).estimate if with_dim else ""
        rows.append((seed, n, ser.S[n - 1], ser.lil_ratio[n - 1], ser.log_q[n], ld))
    return rows, ser, q_identity(tr).max_abs


def _series_experiment(cfg: RunConfig, out: Path, name: str):
    if cfg.n < 16:
        raise UsageError("n: must be >= 16 for this experiment")
    with_dim = name == "dimension"
    res = _map_seeds(lambda s: _seed_rows(cfg, s, with_dim), cfg.seed_list)
    rows = [r for rr, _, _ in res for r in rr]
    write_csv(out / f"{name}.csv", cfg, ["seed", "n", "S_n", "lil_ratio", "log_q", "local_dim"], rows)
    S = np.array([ser.S[-1] for _, ser, _ in res])
    qmax = max(q for *_, q in res)
    reps = [V.VerificationReport("q_identity", qmax, 4 + 2 * math.log(2), 0.0,
                                 qmax <= 4 + 2 * math.log(2), cfg.header())]
    summary = {"seeds": len(res), "n": cfg.n, "mean_abs_S_over_n": float(np.mean(np.abs(S)) / cfg.n),
               "max_abs_lil": float(max(ser.max_abs_lil for _, ser, _ in res))}
    if name == "lil":
        lln = summary["mean_abs_S_over_n"]
        reps.append(V.VerificationReport("lln", lln, 0.0, 0.02, lln <= 0.02, cfg.header(),
                                         inconclusive=cfg.n < 10 ** 5,
                                         note="decisive for n >= 1e5"))
        if len(S) >= 100:
            ks = distribution_tests(S / math.sqrt(cfg.n), "std_normal")
            summary["ks_normal"] = {"stat": ks.ks_stat, "p": ks.p_value}
            reps.append(V.VerificationReport("clt_ks", ks.p_value, 0.01, 0.0,
                                             ks.p_value >= 0.01, cfg.header()))
    else:
        per_n = {}
        for n in _checkpoints(cfg.n):
            vals = [r[5] for r in rows if r[1] == n]
            per_n[str(n)] = float(np.mean(vals))
        summary["mean_local_dim"] = per_n
        if cfg.n >= 10 ** 4:
            m = per_n[str(10 ** 4)]
            reps.append(V.VerificationReport("local_dim_band", m, 0.52, 0.04,
                                             0.48 <= m <= 0.56, cfg.header()))
        d = [abs(v - 0.5) for v in per_n.values()]
        reps.append(V.VerificationReport("local_dim_trend", d, 0.5, 0.0,
                                         bool(np.all(np.diff(d) < 0)), cfg.header()))
    return reps, summary


def run_experiment(cfg: RunConfig, out: Path):
    fam, exp = cfg.family, cfg.experiment
    if exp == "simulate":
        return run_simulate(cfg, out)
    if exp in ("lil", "dimension"):
        return _series_experiment(cfg, out, exp)
    if exp == "moments":
        reps = V.moment_check(fam, cfg.n, cfg.depth, cfg.width, cfg.tol)
        reps.append(V.moment_trend(fam, (10, 20, 30), cfg.depth, cfg.width, cfg.tol))
        return reps, {r.name: r.computed for r in reps if r.name in ("m1", "m2c", "m4c")}
    if exp == "contraction":
        return V.contraction_fit(fam, 0, 6, None, cfg.depth, cfg.width), {}
    if exp == "martingale":
        return V.martingale_check(fam, cfg.n_max, 2, min(cfg.width, 16), cfg.tol,
                                  mc_seeds=len(cfg.seed_list) if len(cfg.seed_list) >= 100
                                  else 10_000), {}
    if exp == "duality":
        reps = V.duality_check(fam, 0, 4, None, 2, min(cfg.width, 32), 1e-8)
        reps.append(V.bilinear_check(fam))
        return reps, {}
    if exp == "condition":
        reps = V.condition_check(fam, cfg.delta)
        return reps, {"condition": "satisfied" if reps[0].passed else "not satisfied"}
    raise UsageError(f"experiment: {exp!r}")


ALL_ORDER = ("condition", "duality", "contraction", "moments", "martingale", "simulate", "lil",
             "dimension")


def run(cfg: RunConfig, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    exps = ALL_ORDER if cfg.experiment == "all" else (cfg.experiment,)
    all_reports = []
    for exp in exps:
        sub = cfg if exp == cfg.experiment else replace(
            cfg, experiment=exp, n=int(cfg.raw.get("n", DEFAULT_N.get(exp, 100))))
        reps, summary = run_experiment(sub, out)
        if exp == "condition":
            print(summary["condition"], file=stream)
        write_json(out / f"{exp}.json", sub, reps, summary)
        all_reports.extend(reps)
        for r in reps:
            print(f"{exp:<12} {r.summary_line()}", file=stream)
    if cfg.experiment == "all":
        r = V.normalization_check(cfg.family, 30, 8, cfg.depth, cfg.width)
        print(f"{'all':<12} {r.summary_line()}", file=stream)
        all_reports.append(r)
        write_json(out / "all.json", cfg, all_reports, {})
    return 1 if V.any_failed(all_reports) else 0


def list_presets() -> str:
    lines = []
    for name, p in PRESETS.items():
        lines.append(f"{name:<20} {p.family.label():<28} delta={p.delta:g}  {p.note}")
    return "\n".join(lines) + "\n"


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cflil", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", metavar="PATH", help="flat key=value run file")
    ap.add_argument("--experiment", choices=EXPERIMENTS)
    ap.add_argument("--seed-range", metavar="A..B", help="inclusive seed range")
    ap.add_argument("--out", metavar="DIR")
    ap.add_argument("--preset", metavar="NAME")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    ap.add_argument("--list-presets", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    if args.list_presets:
        sys.stdout.write(list_presets())
        return 0
    try:
        values = read_config_file(args.config) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            values[k.strip()] = v.strip()
        for key, val in (("experiment", args.experiment), ("seeds", args.seed_range),
                         ("out", args.out), ("preset", args.preset)):
            if val is not None:
                values[key] = val
        cfg = build_config(values)
    except UsageError as e:
        print(f"cflil: usage error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"cflil: {e}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except UsageError as e:
        print(f"cflil: usage error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"cflil: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
