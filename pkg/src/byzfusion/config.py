"""JSON experiment configs.

A config names a channel, a code mode, the protocol parameters (explicit or
derived from eps via the schedule), an adversary, and the Monte Carlo
trial count and master seed.  Validation failures carry the line of the
offending key so the CLI can point at it.

Example::

    {
      "dmc": {"bsc": 0.1},
      "code_mode": "ideal",
      "schedule": {"eps": 0.05, "beta": 0.3},
      "adversary": {"strategy": "mdp_optimal"},
      "trials": 20000,
      "master_seed": 1
    }
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import adversary as adv
from . import analysis
from .channel import ChannelError, Dmc, bsc
from .protocol import ParamsError, ProtocolParams, paper_schedule, schedule_violations

STRATEGIES = ("honest_mimic", "always_lie", "mdp_optimal", "half_split")
CODE_MODES = ("ideal", "random_codebook")
MAX_CODEBOOK_CHUNK_BITS = 12

_TOP_KEYS = {
    "dmc", "code_mode", "codebook_seed", "certify_trials", "params", "schedule", "check_schedule",
    "adversary", "pool_size", "max_attempts", "trials", "master_seed", "outputs",
}
_PARAM_KEYS = set(ProtocolParams.__dataclass_fields__)
_SCHEDULE_KEYS = {"eps", "beta", "chunk_bits", "verify_block_length"}
_ADVERSARY_KEYS = {"strategy", "verify", "offset", "mdp_source", "tail", "false_message"}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.message = message
        self.line = line
        self.source = source
        where = source or "<config>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    pat = re.compile(r'"' + re.escape(key) + r'"\s*:')
    for no, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return no
    return None


@dataclass
class ExperimentConfig:
    dmc: Dmc
    params: ProtocolParams
    code_mode: str = "ideal"
    schedule: dict | None = None
    check_schedule: bool = False
    adversary: dict = field(default_factory=lambda: {"strategy": "honest_mimic"})
    pool_size: int | None = None
    max_attempts: int = 10**6
    trials: int = 1000
    master_seed: int = 0
    codebook_seed: int = 0
    certify_trials: int = 0
    outputs: dict = field(default_factory=dict)

    @property
    def strategy_name(self) -> str:
        return self.adversary["strategy"]

    def normalized(self) -> dict:
        doc: dict[str, Any] = {
            "dmc": self.dmc.to_json(),
            "code_mode": self.code_mode,
            "adversary": dict(sorted(self.adversary.items())),
            "pool_size": self.pool_size,
            "max_attempts": self.max_attempts,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "check_schedule": self.check_schedule,
        }
        if self.schedule is not None:
            doc["schedule"] = dict(sorted(self.schedule.items()))
        else:
            doc["params"] = self.params.to_dict()
        if self.code_mode == "random_codebook":
            doc["codebook_seed"] = self.codebook_seed
            doc["certify_trials"] = self.certify_trials
        if self.outputs:
            doc["outputs"] = dict(sorted(self.outputs.items()))
        return doc

    def normalized_json(self) -> str:
        return json.dumps(self.normalized(), indent=2, sort_keys=True) + "\n"

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with ``beta``, ``eps``, ``v``, ``j``, ``k`` or ``strategy`` changed, re-validated."""
        doc = self.normalized()
        for key, val in changes.items():
            if key == "strategy":
                doc["adversary"] = {"strategy": val, **{k: v for k, v in doc["adversary"].items() if k != "strategy"}}
                if val != "mdp_optimal":
                    doc["adversary"].pop("mdp_source", None)
                    doc["adversary"].pop("tail", None)
                continue
            if "schedule" in doc:
                sched_key = {"beta": "beta", "eps": "eps"}.get(key)
                if sched_key is None:
                    raise ConfigError(f"'{key}' cannot be varied for a schedule-derived config")
                doc["schedule"][sched_key] = val
            else:
                name = {"beta": "byzantine_fraction", "eps": "code_error", "v": "chunk_count",
                        "j": "bin_count", "k": "verifier_count"}.get(key)
                if name is None:
                    raise ConfigError(f"unknown grid axis '{key}'")
                doc["params"][name] = val
        return parse_config(doc)


def _get(doc: dict, key: str, typ, default, text, source):
    if key not in doc:
        return default
    val = doc[key]
    ok = isinstance(val, typ) and not (typ in (int, (int, float)) and isinstance(val, bool))
    if val is None and default is None:
        ok = True
    if not ok:
        raise ConfigError(f"'{key}' has the wrong type ({type(val).__name__})", _line_of(text, key), source)
    return val


def _load_dmc(spec, text, base: Path | None, source) -> Dmc:
    line = _line_of(text, "dmc")
    try:
        if isinstance(spec, str):
            path = Path(spec)
            if not path.is_absolute() and base is not None:
                path = base / path
            if not path.exists():
                raise ConfigError(f"DMC file '{spec}' not found", line, source)
            return Dmc.load(path)
        if isinstance(spec, dict) and set(spec) == {"bsc"}:
            return bsc(float(spec["bsc"]))
        if isinstance(spec, dict):
            return Dmc.from_json(spec)
    except (ChannelError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid DMC: {exc}", line, source) from None
    raise ConfigError("'dmc' must be a file path, {\"bsc\": p} or {inputs, outputs, rows}", line, source)


def parse_config(doc: dict, text: str | None = None, base: Path | None = None, source: str | None = None,
                 schedule_eps: float | None = None) -> ExperimentConfig:
    """Validate a decoded JSON document.  ``schedule_eps`` forces schedule-derived parameters."""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object", 1, source)
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key '{key}'", _line_of(text, key), source)
    if "dmc" not in doc:
        raise ConfigError("missing 'dmc'", None, source)
    dmc = _load_dmc(doc["dmc"], text, base, source)

    code_mode = _get(doc, "code_mode", str, "ideal", text, source)
    if code_mode not in CODE_MODES:
        raise ConfigError(f"code_mode must be one of {CODE_MODES}", _line_of(text, "code_mode"), source)

    schedule = doc.get("schedule")
    explicit = doc.get("params")
    if schedule_eps is not None:
        base_beta = None
        if schedule is not None:
            base_beta = schedule.get("beta")
        elif explicit is not None:
            base_beta = explicit.get("byzantine_fraction")
        if base_beta is None:
            raise ConfigError("--paper-schedule needs beta from 'schedule' or 'params'", None, source)
        schedule = {**({} if schedule is None else schedule), "eps": schedule_eps, "beta": base_beta}
        explicit = None
    if (schedule is None) == (explicit is None):
        raise ConfigError("exactly one of 'params' and 'schedule' is required",
                          _line_of(text, "params") or _line_of(text, "schedule"), source)

    if schedule is not None:
        line = _line_of(text, "schedule")
        if not isinstance(schedule, dict) or not {"eps", "beta"} <= set(schedule) or set(schedule) - _SCHEDULE_KEYS:
            raise ConfigError(f"'schedule' needs eps and beta and only keys {sorted(_SCHEDULE_KEYS)}", line, source)
        schedule = {"chunk_bits": 16, "verify_block_length": 1, **schedule}
        try:
            alpha = analysis.alpha_of(float(schedule["beta"]), float(schedule["eps"]))
            if alpha >= 0.5:
                raise ConfigError(
                    f"schedule requires alpha = 1-(1-beta)(1-eps) < 1/2, got {alpha:.9g}", line, source)
            params = paper_schedule(float(schedule["eps"]), float(schedule["beta"]),
                                    int(schedule["chunk_bits"]), int(schedule["verify_block_length"]))
        except (ParamsError, analysis.RegimeError) as exc:
            raise ConfigError(str(exc), line, source) from None
    else:
        line = _line_of(text, "params")
        if not isinstance(explicit, dict):
            raise ConfigError("'params' must be an object", line, source)
        missing = _PARAM_KEYS - set(explicit)
        extra = set(explicit) - _PARAM_KEYS
        if missing or extra:
            key = sorted(extra)[0] if extra else None
            msg = f"unknown parameter '{key}'" if extra else f"missing parameters {sorted(missing)}"
            raise ConfigError(msg, _line_of(text, key) if key else line, source)
        try:
            params = ProtocolParams(**explicit)
        except (ParamsError, TypeError) as exc:
            bad = next((k for k in explicit if k in str(exc)), None)
            raise ConfigError(str(exc), _line_of(text, bad) if bad else line, source) from None

    check_schedule = _get(doc, "check_schedule", bool, False, text, source)
    if check_schedule:
        problems = schedule_violations(params)
        if problems:
            raise ConfigError("schedule check failed: " + "; ".join(problems), _line_of(text, "check_schedule"), source)

    advdoc = _get(doc, "adversary", dict, {"strategy": "honest_mimic"}, text, source)
    adversary = _check_adversary(dict(advdoc), params, code_mode, text, source)

    pool_size = _get(doc, "pool_size", int, None, text, source)
    if pool_size is not None and pool_size < params.verifier_count:
        raise ConfigError("pool_size must be at least verifier_count", _line_of(text, "pool_size"), source)
    max_attempts = _get(doc, "max_attempts", int, 10**6, text, source)
    trials = _get(doc, "trials", int, 1000, text, source)
    if "master_seed" not in doc:
        raise ConfigError("'master_seed' is required (no implicit seeding)", None, source)
    master_seed = _get(doc, "master_seed", int, 0, text, source)
    if max_attempts < 1 or trials < 1 or master_seed < 0:
        key = "max_attempts" if max_attempts < 1 else "trials" if trials < 1 else "master_seed"
        raise ConfigError(f"'{key}' out of range", _line_of(text, key), source)

    if code_mode == "random_codebook":
        if params.chunk_bits > MAX_CODEBOOK_CHUNK_BITS:
            raise ConfigError(
                f"random_codebook mode supports chunk_bits <= {MAX_CODEBOOK_CHUNK_BITS}, got {params.chunk_bits}",
                _line_of(text, "code_mode"), source)
    codebook_seed = _get(doc, "codebook_seed", int, 0, text, source)
    certify_trials = _get(doc, "certify_trials", int, 0, text, source)
    outputs = _get(doc, "outputs", dict, {}, text, source)

    return ExperimentConfig(
        dmc=dmc, params=params, code_mode=code_mode,
        schedule=None if schedule is None else {k: schedule[k] for k in sorted(schedule)},
        check_schedule=check_schedule, adversary=adversary, pool_size=pool_size,
        max_attempts=max_attempts, trials=trials, master_seed=master_seed,
        codebook_seed=codebook_seed, certify_trials=certify_trials, outputs=dict(outputs),
    )


def _check_adversary(doc: dict, params: ProtocolParams, code_mode: str, text, source) -> dict:
    line = _line_of(text, "adversary")
    extra = set(doc) - _ADVERSARY_KEYS
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"unknown adversary key '{key}'", _line_of(text, key) or line, source)
    name = doc.get("strategy")
    if name not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {name!r}", _line_of(text, "strategy") or line, source)
    beta = params.byzantine_fraction
    out: dict[str, Any] = {"strategy": name}
    if name in ("always_lie", "mdp_optimal"):
        out["verify"] = doc.get("verify", "collude")
        out["offset"] = doc.get("offset", 1)
        if out["verify"] not in adv.VERIFY_MODES:
            raise ConfigError(f"verify must be one of {sorted(adv.VERIFY_MODES)}", _line_of(text, "verify") or line, source)
        if not isinstance(out["offset"], int) or out["offset"] % params.chunk_space == 0:
            raise ConfigError("offset must be an integer nonzero modulo the chunk space",
                              _line_of(text, "offset") or line, source)
    if name == "mdp_optimal":
        out["mdp_source"] = doc.get("mdp_source", "bounds")
        out["tail"] = doc.get("tail", "chain")
        if out["mdp_source"] not in ("bounds", "exact"):
            raise ConfigError("mdp_source must be 'bounds' or 'exact'", _line_of(text, "mdp_source") or line, source)
        if out["tail"] not in ("chain", "exact"):
            raise ConfigError("tail must be 'chain' or 'exact'", _line_of(text, "tail") or line, source)
        if out["mdp_source"] == "exact" and out["verify"] == "obstruct":
            raise ConfigError("exact MDP parameters are unavailable for verify='obstruct'", line, source)
        if analysis.alpha_of(beta, params.code_error) >= 0.5 and out["mdp_source"] == "bounds":
            raise ConfigError("mdp_optimal with bound-derived MDP needs alpha < 1/2", line, source)
    if name == "half_split":
        if beta < 0.5:
            raise ConfigError(f"half_split needs beta >= 1/2, got {beta}", line, source)
        fm = doc.get("false_message")
        if fm is not None and (not isinstance(fm, int) or not 0 <= fm < params.message_count):
            raise ConfigError("false_message outside the message space", _line_of(text, "false_message") or line, source)
        out["false_message"] = fm
    elif "false_message" in doc:
        raise ConfigError("false_message only applies to half_split", _line_of(text, "false_message") or line, source)
    return out


def load_config(path: str | Path, schedule_eps: float | None = None) -> ExperimentConfig:
    path = Path(path)
    source = str(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, source) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, source) from None
    return parse_config(doc, text, path.parent, source, schedule_eps)


def build_strategy(cfg: ExperimentConfig) -> adv.Strategy:
    a = cfg.adversary
    name = a["strategy"]
    if name == "honest_mimic":
        return adv.honest_mimic()
    if name == "always_lie":
        return adv.always_lie(offset=a["offset"], verify=a["verify"])
    if name == "half_split":
        return adv.half_split(a.get("false_message"))
    return adv.mdp_optimal(analysis.solve_mdp(strategy_mdp_params(cfg)), verify=a["verify"], offset=a["offset"])


def strategy_mdp_params(cfg: ExperimentConfig) -> analysis.MdpParams:
    """MDP inputs behind an mdp_optimal adversary."""
    p, a = cfg.params, cfg.adversary
    if a.get("mdp_source", "bounds") == "exact":
        return analysis.ideal_mdp_params(p.byzantine_fraction, p.code_error, p.bin_count, p.verifier_count,
                                         p.chunk_count, p.chunk_space, a["verify"])
    eb = analysis.lemma1_bounds(p.byzantine_fraction, p.code_error, p.bin_count, p.verifier_count,
                                a.get("tail", "chain"))
    return eb.mdp_params(p.byzantine_fraction, p.chunk_count)
