"""``passivity-lab`` command line front end.

Every run is described by one JSON config (``--config``) whose top level
holds ``dt``, ``window``, ``seed``, ``out``, an ``ensemble`` block and one
block per subcommand; command-line options override the file.  Reports
embed the resolved config and its sha256.

Exit codes: 0 on success or a clean verdict, 2 when a violation is found
(``indices``: passivity violated; ``falsify``: destabilized or gain
exceeded; ``certify``: no feasible multiplier; ``suite``: a failed row),
3 for an inconclusive ``indices`` verdict, 1 on input or solver errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


from . import formats
from .errors import PassivityLabError
from .falsify import (
    DESTABILIZED,
    GAIN_EXCEEDED,
    VARIANTS,
    adversary_search,
    certificate_gamma,
    h_samples,
    nyquist_pole_oracle,
    probe_ensemble,
    s_procedure_necessity_check,
)
from .interconnect import closed_loop_gain, closed_loop_gain_e1_to_y1, solve_feedback
from .passivity import (
    INCONCLUSIVE,
    PASSIVE,
    VIOLATED,
    EnsembleSpec,
    estimate_indices,
    estimated_strict_trend,
    lti_frequency_indices,
    standard_ensemble,
    strict_index_trend,
)
from .signals import SampledSignal, zeros
from .systems import LtiStateSpace, ScalarGain

__all__ = ["ExperimentConfig", "ConfigError", "main", "build_parser"]

MAX_SAMPLES = 10_000_000

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION, EXIT_INCONCLUSIVE = 0, 1, 2, 3

CAVEATS = [
    "estimates are taken over finite windows; behaviour beyond the window is not tested",
    "indices are upper bounds on the infima over all inputs; only a negative deficit is conclusive",
    "well-posedness is checked as per-sample loop solvability at the chosen dt",
]

# per-command defaults; keys double as the accepted config fields
COMMAND_DEFAULTS = {
    "indices": {"system": None, "iterations": 500},
    "simulate": {"loop": None, "e1": None, "e2": None},
    "gain": {"loop": None, "ensemble": None, "e1_to_y1": False},
    "falsify": {"system": None, "family": "all", "budget": 50, "threshold": 1e3},
    "certify": {"system": None, "variant": "thm2", "gamma": None, "samples": 100, "subset": "full"},
    "suite": {"filter": None},
}
FILE_FIELDS = {"system", "loop", "e1", "e2", "ensemble"}


class ConfigError(PassivityLabError, ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Resolved settings of one run."""

    command: str
    dt: float = 0.005
    window: float = 100.0
    seed: int = 0
    out: str = "out"
    ensemble: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), repr=False)

    def __post_init__(self):
        if self.command not in COMMAND_DEFAULTS:
            raise ConfigError(f"unknown command {self.command!r}")
        self.dt, self.window, self.seed = float(self.dt), float(self.window), int(self.seed)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be positive")
        if not (self.window > 0 and math.isfinite(self.window)):
            raise ConfigError("window must be positive")
        if self.window / self.dt > MAX_SAMPLES:
            raise ConfigError(f"window/dt exceeds {MAX_SAMPLES:.0e} samples")
        names = {f.name for f in fields(EnsembleSpec)}
        unknown = set(self.ensemble) - names
        if unknown:
            raise ConfigError(f"unknown ensemble fields {sorted(unknown)}")
        unknown = set(self.params) - set(COMMAND_DEFAULTS[self.command])
        if unknown:
            raise ConfigError(f"unknown {self.command} fields {sorted(unknown)}")
        merged = dict(COMMAND_DEFAULTS[self.command])
        merged.update(self.params)
        self.params = merged
        for key in FILE_FIELDS & set(self.params):
            v = self.params[key]
            if v is not None and not self.path(key).exists():
                raise ConfigError(f"{key} file {v} does not exist")

    @classmethod
    def load(cls, command: str, config_path=None, overrides: dict | None = None) -> "ExperimentConfig":
        """Merge the config file's top level and ``command`` block with ``overrides``."""
        doc, base = {}, Path(".")
        if config_path is not None:
            try:
                doc = json.loads(Path(config_path).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
            except ValueError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigError("config must be a JSON object")
            base = Path(config_path).parent
        top = {k: doc[k] for k in ("dt", "window", "seed", "out") if k in doc}
        params = dict(doc.get(command, {}))
        for k, v in (overrides or {}).items():
            if v is None:
                continue
            if k in ("dt", "window", "seed", "out"):
                top[k] = v
            else:
                params[k] = v
        # paths given on the command line are relative to the working directory
        for k in FILE_FIELDS & set(overrides or {}):
            if overrides[k] is not None:
                params[k] = str(Path(overrides[k]).resolve())
        return cls(command, ensemble=dict(doc.get("ensemble", {})), params=params, base_dir=base,
                   **top)

    def path(self, key) -> Path:
        p = Path(self.params[key])
        return p if p.is_absolute() else self.base_dir / p

    def spec(self) -> EnsembleSpec:
        kw = dict(self.ensemble)
        kw.setdefault("seed", self.seed)
        return EnsembleSpec(**kw)

    def resolved(self) -> dict:
        """Location-independent description: referenced files enter by content hash."""
        params = {}
        for k, v in self.params.items():
            if k in FILE_FIELDS and v is not None:
                params[k] = {"name": Path(v).name, "sha256": _file_digest(self.path(k))}
            else:
                params[k] = v
        return {"command": self.command, "dt": self.dt, "window": self.window, "seed": self.seed,
                "ensemble": asdict(self.spec()), "params": params}

    def digest(self) -> str:
        return formats.config_hash(self.resolved())


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(path.glob("*.csv")):
            h.update(f.name.encode())
            h.update(f.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# commands


class _Run:
    def __init__(self, cfg: ExperimentConfig, quiet: bool):
        self.cfg, self.quiet = cfg, quiet
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)

    def say(self, msg: str):
        if not self.quiet:
            print(msg)

    def report(self, name: str, body: dict) -> Path:
        body = dict(body)
        body["config"] = self.cfg.resolved()
        body["config_sha256"] = self.cfg.digest()
        return formats.write_json(self.out / name, body)

    def signal(self, name: str, sig: SampledSignal | None) -> str | None:
        if sig is None:
            return None
        formats.write_signal(self.out / name, sig)
        return name


def _require(cfg, key):
    if cfg.params.get(key) is None:
        raise ConfigError(f"{cfg.command} needs --{key.replace('_', '-')}")
    return cfg.path(key)


def run_indices(cfg: ExperimentConfig, quiet: bool = False) -> int:
    run = _Run(cfg, quiet)
    op = formats.read_operator(_require(cfg, "system"))
    spec = cfg.spec()
    rep = estimate_indices(op, cfg.dt, cfg.window, cfg.seed, spec, int(cfg.params["iterations"]))
    body = {
        "deficit": rep.deficit,
        "margin": rep.margin,
        "strict_index": rep.strict_index,
        "output_index": rep.output_index,
        "witness_deficit": run.signal("witness_deficit.csv", rep.witness_deficit),
        "witness_strict": run.signal("witness_strict.csv", rep.witness_strict),
        "witness_output": run.signal("witness_output.csv", rep.witness_output),
        "verdicts": rep.verdicts,
        "search_metadata": rep.search_metadata,
        "strict_index_vs_omega_max": estimated_strict_trend(op, cfg.dt, cfg.window, spec),
        "caveats": CAVEATS,
        "system": formats.operator_to_dict(op),
    }
    if isinstance(op, LtiStateSpace):
        try:
            ref = lti_frequency_indices(op)
            body["frequency_oracle"] = {k: ref[k] for k in
                                        ("passivity_margin", "strict_index", "output_index")}
            body["frequency_oracle_strict_vs_omega_max"] = strict_index_trend(op)
        except PassivityLabError as exc:
            body["frequency_oracle"] = {"unavailable": str(exc)}
    run.report("report.json", body)
    verdict = rep.passivity_verdict
    run.say(f"deficit {rep.deficit:.6g}  strict {rep.strict_index:.6g}  "
            f"output {rep.output_index if rep.output_index is None else format(rep.output_index, '.6g')}"
            f"  verdict {verdict}")
    return {PASSIVE: EXIT_OK, VIOLATED: EXIT_VIOLATION, INCONCLUSIVE: EXIT_INCONCLUSIVE}[verdict]


def run_simulate(cfg: ExperimentConfig, quiet: bool = False) -> int:
    run = _Run(cfg, quiet)
    loop = formats.read_loop(_require(cfg, "loop"))
    e1 = formats.read_signal(_require(cfg, "e1"))
    n1, n2 = loop.dims
    if cfg.params.get("e2") is not None:
        e2 = formats.read_signal(cfg.path("e2"))
    else:
        e2 = zeros(n2, e1.samples, e1.dt)
    sol = solve_feedback(loop, e1, e2)
    body = {"path": sol.path, "converged": bool(sol.converged), "failed_at": sol.failed_at,
            "max_residual": float(sol.residual),
            "dt": e1.dt, "samples": e1.samples}
    if sol.converged:
        for name in ("u1", "u2", "y1", "y2"):
            body[name] = run.signal(f"{name}.csv", getattr(sol, name))
    else:
        body["residual_history"] = [float(r) for r in getattr(sol, "_trace", [sol.residual])]
    run.report("simulate.json", body)
    if not sol.converged:
        print(f"error: loop not solvable at sample {sol.failed_at}", file=sys.stderr)
        return EXIT_ERROR
    run.say(f"solved {e1.samples} samples via {sol.path}; max residual {body['max_residual']:.3g}")
    return EXIT_OK


def _ensemble_from_dir(path: Path) -> list[SampledSignal]:
    files = sorted(path.glob("*.csv"))
    if not files:
        raise ConfigError(f"no CSV signals in {path}")
    return [formats.read_signal(f) for f in files]


def run_gain(cfg: ExperimentConfig, quiet: bool = False) -> int:
    run = _Run(cfg, quiet)
    loop = formats.read_loop(_require(cfg, "loop"))
    n1, n2 = loop.dims
    e1_only = bool(cfg.params["e1_to_y1"])
    if cfg.params.get("ensemble") is not None:
        ens = _ensemble_from_dir(cfg.path("ensemble"))
    else:
        ens = standard_ensemble(n1 if e1_only else n1 + n2, cfg.dt, cfg.window, cfg.spec())
    est = closed_loop_gain_e1_to_y1(loop, ens) if e1_only else closed_loop_gain(loop, ens)
    body = {"map": "e1 -> y1" if e1_only else "(e1, e2) -> (y1, y2)",
            "lower_bound": est.lower_bound, "is_lower_bound": True,
            "label": "lower bound on the closed-loop gain", "ensemble_size": est.ensemble_size,
            "method": est.method, "witness": run.signal("gain_witness.csv", est.witness)}
    run.report("gain.json", body)
    run.say(f"gain lower bound {est.lower_bound:.6g} over {est.ensemble_size} inputs")
    return EXIT_OK


def _nyquist_rows(sigma1, adversary):
    """Loop locus when both blocks are LTI, else the locus of ``sigma1`` alone."""
    for other, source in ((adversary, "loop"), (ScalarGain(1.0), "sigma1")):
        try:
            res = nyquist_pole_oracle(sigma1, other)
        except PassivityLabError:
            continue
        return [(w, z.real, z.imag) for w, z in zip(res.omegas, res.nyquist_locus)], source
    return [], "unavailable"


def run_falsify(cfg: ExperimentConfig, quiet: bool = False) -> int:
    run = _Run(cfg, quiet)
    op = formats.read_operator(_require(cfg, "system"))
    p = cfg.params
    res = adversary_search(op, p["family"], int(p["budget"]), float(p["threshold"]), cfg.seed,
                           cfg.dt, cfg.window)
    try:
        adversary = formats.operator_to_dict(res.adversary)
    except PassivityLabError:
        adversary = repr(res.adversary)
    rows, source = _nyquist_rows(op, res.adversary)
    with open(run.out / "nyquist.csv", "w") as fh:
        fh.write("omega,re,im\n")
        for w, re, im in rows:
            fh.write(f"{w:.17g},{re:.17g},{im:.17g}\n")
    body = {"verdict": res.verdict, "adversary": adversary, "adversary_family": res.adversary_family,
            "adversary_params": res.adversary_params,
            "gain_trace": [{"family": f, "params": prm, "gain": g} for f, prm, g in res.gain_trace],
            "evidence": res.evidence, "threshold": res.threshold, "budget": res.budget,
            "nyquist": {"file": "nyquist.csv", "locus_of": source}}
    run.report("result.json", body)
    run.say(f"verdict {res.verdict} ({res.adversary_family} {res.adversary_params})")
    return EXIT_VIOLATION if res.verdict in (DESTABILIZED, GAIN_EXCEEDED) else EXIT_OK


def run_certify(cfg: ExperimentConfig, quiet: bool = False) -> int:
    run = _Run(cfg, quiet)
    op = formats.read_operator(_require(cfg, "system"))
    p = cfg.params
    variant = p["variant"]
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}")
    gamma, gamma_source = p["gamma"], "given"
    if gamma is None:
        if op.input_dim != 1 or op.output_dim != 1:
            raise ConfigError("certify needs --gamma for multichannel systems")
        envs = [ScalarGain(0.1), ScalarGain(1.0), ScalarGain(10.0),
                LtiStateSpace.from_tf([1.0], [1.0, 1.0])]
        dim = 1 if variant == "thm4" else 2
        gamma = certificate_gamma(variant, op, envs, probe_ensemble(dim, cfg.dt, cfg.window, cfg.seed))
        gamma_source = "1.05 x measured gain against gains 0.1, 1, 10 and 1/(s+1)"
    hs = h_samples(variant, op, int(p["samples"]), cfg.dt, cfg.window, cfg.seed, subset=p["subset"])
    res = s_procedure_necessity_check(variant, op, float(gamma), samples=hs)
    body = asdict(res)
    body["gamma_source"] = gamma_source
    body["outcome"] = "feasible" if res.feasible else "no tau satisfies the bound on these samples"
    run.report("certify.json", body)
    run.say(f"{variant}: gamma {float(gamma):.6g}, best tau {res.best_tau:.6g}, "
            f"max combined {res.max_combined:.3g}, feasible {res.feasible}")
    return EXIT_OK if res.feasible else EXIT_VIOLATION


def run_suite(cfg: ExperimentConfig, quiet: bool = False) -> int:
    from .suite import run_suite as _suite

    run = _Run(cfg, quiet)
    rows = _suite(cfg.params["filter"], dt=cfg.dt, window=cfg.window, seed=cfg.seed)
    with open(run.out / "suite.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["criterion", "theorem", "pair", "measured", "bound", "status"])
        for r in rows:
            w.writerow([r.criterion, r.theorem, r.pair,
                        "" if r.measured is None else format(r.measured, ".17g"),
                        "" if r.bound is None else format(r.bound, ".17g"), r.status])
    body = {"rows": [{k: v for k, v in r.as_dict().items() if k != "seconds"} for r in rows],
            "failed": sum(r.status == "fail" for r in rows)}
    run.report("suite.json", body)
    for r in rows:
        m = "-" if r.measured is None else f"{r.measured:.6g}"
        b = "-" if r.bound is None else f"{r.bound:.6g}"
        run.say(f"{r.criterion:>2} {r.theorem:<7} {r.status:<4} {r.pair:<44} {m:>14} {b:>14}")
    return EXIT_VIOLATION if body["failed"] else EXIT_OK


COMMANDS = {"indices": run_indices, "simulate": run_simulate, "gain": run_gain,
            "falsify": run_falsify, "certify": run_certify, "suite": run_suite}


# --------------------------------------------------------------------------
# argument parsing


def _globals(defaults: bool) -> argparse.ArgumentParser:
    # shared by the main parser and every subparser so the flags work in either position
    d = None if defaults else argparse.SUPPRESS
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=d, help="JSON run configuration")
    g.add_argument("--out", default=d, help="output directory")
    g.add_argument("--seed", type=int, default=d)
    g.add_argument("--quiet", action="store_true", default=False if defaults else argparse.SUPPRESS)
    return g


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="passivity-lab", parents=[_globals(True)],
                                     description="Passivity estimates, loop simulation and "
                                                 "falsification for sampled systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _globals(False)

    def add(name, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        if name != "suite":
            p.add_argument("--dt", type=float)
            p.add_argument("--window", type=float)
        return p

    p = add("indices", "passivity deficit and strict/output indices of one system")
    p.add_argument("--system")
    p.add_argument("--iterations", type=int)

    p = add("simulate", "solve a feedback loop for given exogenous inputs")
    p.add_argument("--loop")
    p.add_argument("--e1")
    p.add_argument("--e2")

    p = add("gain", "closed-loop gain lower bound over an input ensemble")
    p.add_argument("--loop")
    p.add_argument("--ensemble", help="directory of signal CSV files")
    p.add_argument("--e1-to-y1", dest="e1_to_y1", action="store_true", default=None)

    p = add("falsify", "search passive environments that break a loop")
    p.add_argument("--system")
    p.add_argument("--family")
    p.add_argument("--budget", type=int)
    p.add_argument("--threshold", type=float)

    p = add("certify", "multiplier search for the quadratic loop certificate")
    p.add_argument("--system")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--gamma", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--subset", choices=("full", "zero-e"))

    p = add("suite", "run the acceptance checks")
    p.add_argument("--filter", help="comma-separated tags (thm1..thm4, lemma1, crossval) or numbers")
    p.add_argument("--dt", type=float)
    p.add_argument("--window", type=float)
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    quiet = bool(args.pop("quiet", False))
    try:
        cfg = ExperimentConfig.load(command, config_path, args)
        return COMMANDS[command](cfg, quiet)
    except (PassivityLabError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
