"""Experiment configuration: JSON file -> validated, fully defaulted config."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

from ..constrained import CsrecHyper
from ..exceptions import ParseError, ValidationError
from ..serialization import dumps, sha256_bytes
from ..seqrec import Hyperparams
from ..sim import DecisionModelParams, ExposurePolicy


@dataclass
class PolicyConfig:
    kind: str
    kappa: float = 3.0
    weights: list | None = None

    def to_policy(self) -> ExposurePolicy:
        return ExposurePolicy(self.kind, self.kappa, None if self.weights is None else tuple(self.weights))


@dataclass
class SimulatorConfig:
    n_users: int = 200
    n_genres: int = 10
    items_per_genre: int = 20
    w_p: float = 4.0
    w_d: float = 0.8
    w_r: float = -3.0
    b: float = -2.0
    obs_policy: PolicyConfig = field(default_factory=lambda: PolicyConfig("user-proposal", 3.0))
    intv_policy: PolicyConfig = field(default_factory=lambda: PolicyConfig("uniform", 0.0))
    obs_length: int = 60
    intv_length: int = 30
    drift_rate: float = 0.0
    split: list = field(default_factory=lambda: [0.8, 0.1, 0.1])

    @property
    def decision_params(self) -> DecisionModelParams:
        return DecisionModelParams(self.w_p, self.w_d, self.w_r, self.b)

    @property
    def n_items(self) -> int:
        return self.n_genres * self.items_per_genre


@dataclass
class ModelConfig:
    embed_dim: int = 64
    max_seq_len: int = 50
    batch_size: int = 256
    learning_rate: float = 0.0005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    csrec_epochs: int = 10
    lam: float = 1.0
    detach_target: bool = True
    csrec_init: str = "ftilde"

    def hyperparams(self, seed: int) -> Hyperparams:
        return Hyperparams(
            embed_dim=self.embed_dim, max_seq_len=self.max_seq_len, batch_size=self.batch_size,
            learning_rate=self.learning_rate, adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps, epochs=self.epochs, seed=seed,
        )

    def csrec_hyper(self, seed: int) -> CsrecHyper:
        base = asdict(self.hyperparams(seed))
        base["epochs"] = self.csrec_epochs
        return CsrecHyper(**base, lam=self.lam, detach_target=self.detach_target, init=self.csrec_init)


@dataclass
class EvalConfig:
    k: list = field(default_factory=lambda: [5, 10, 20])
    alpha: list = field(default_factory=lambda: [0.2, 0.5])
    beta: int = 3
    mode: str = "teacher"
    split: str = "test"


@dataclass
class ExperimentConfig:
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_bytes(self) -> bytes:
        return dumps(self.to_dict()).encode("utf-8")

    @property
    def config_hash(self) -> str:
        return sha256_bytes(self.canonical_bytes())


# --------------------------------------------------------------------------
# validation


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _int(path, x, lo=None):
    if not _is_int(x):
        raise ValidationError(path, f"expected an integer, got {x!r}")
    if lo is not None and x < lo:
        raise ValidationError(path, f"must be >= {lo}, got {x}")
    return x


def _num(path, x, lo=None, hi=None, lo_open=False, hi_open=False):
    if not _is_num(x):
        raise ValidationError(path, f"expected a finite number, got {x!r}")
    if lo is not None and (x < lo or (lo_open and x == lo)):
        raise ValidationError(path, f"must be {'>' if lo_open else '>='} {lo}, got {x}")
    if hi is not None and (x > hi or (hi_open and x == hi)):
        raise ValidationError(path, f"must be {'<' if hi_open else '<='} {hi}, got {x}")
    return float(x)


def _choice(path, x, options):
    if x not in options:
        raise ValidationError(path, f"must be one of {sorted(options)}, got {x!r}")
    return x


def _block(path, raw, cls):
    if not isinstance(raw, dict):
        raise ValidationError(path or "config", "expected an object")
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ValidationError(f"{path}.{key}" if path else key, "unknown key")
    return raw


def _policy(path, raw, default: PolicyConfig, allowed) -> PolicyConfig:
    raw = _block(path, raw, PolicyConfig)
    kind = _choice(f"{path}.kind", raw.get("kind", default.kind), allowed)
    kappa = _num(f"{path}.kappa", raw.get("kappa", default.kappa), lo=0)
    weights = raw.get("weights", default.weights)
    if weights is not None:
        if not isinstance(weights, list) or not weights:
            raise ValidationError(f"{path}.weights", "expected a non-empty list")
        weights = [_num(f"{path}.weights[{i}]", w, lo=0) for i, w in enumerate(weights)]
    return PolicyConfig(kind, kappa, weights)


def _simulator(raw) -> SimulatorConfig:
    raw = _block("simulator", raw, SimulatorConfig)
    d = SimulatorConfig()
    p = "simulator."
    cfg = SimulatorConfig(
        n_users=_int(p + "n_users", raw.get("n_users", d.n_users), lo=1),
        n_genres=_int(p + "n_genres", raw.get("n_genres", d.n_genres), lo=1),
        items_per_genre=_int(p + "items_per_genre", raw.get("items_per_genre", d.items_per_genre), lo=1),
        w_p=_num(p + "w_p", raw.get("w_p", d.w_p)),
        w_d=_num(p + "w_d", raw.get("w_d", d.w_d)),
        w_r=_num(p + "w_r", raw.get("w_r", d.w_r)),
        b=_num(p + "b", raw.get("b", d.b)),
        obs_policy=_policy(p + "obs_policy", raw.get("obs_policy", {}), d.obs_policy, {"user-proposal"}),
        intv_policy=_policy(p + "intv_policy", raw.get("intv_policy", {}), d.intv_policy, {"uniform", "popularity"}),
        obs_length=_int(p + "obs_length", raw.get("obs_length", d.obs_length), lo=1),
        intv_length=_int(p + "intv_length", raw.get("intv_length", d.intv_length), lo=1),
        drift_rate=_num(p + "drift_rate", raw.get("drift_rate", d.drift_rate), lo=0, hi=1, hi_open=True),
        split=raw.get("split", d.split),
    )
    if not isinstance(cfg.split, list) or len(cfg.split) != 3:
        raise ValidationError(p + "split", "expected three ratios")
    cfg.split = [_num(f"{p}split[{i}]", r, lo=0) for i, r in enumerate(cfg.split)]
    if abs(sum(cfg.split) - 1.0) > 1e-9 or cfg.split[0] <= 0:
        raise ValidationError(p + "split", "ratios must sum to 1 with a positive train share")
    for pol, name in ((cfg.intv_policy, "intv_policy"), (cfg.obs_policy, "obs_policy")):
        if pol.weights is not None and len(pol.weights) != cfg.n_items:
            raise ValidationError(f"{p}{name}.weights", f"expected {cfg.n_items} weights")
    return cfg


def _model(raw) -> ModelConfig:
    raw = _block("model", raw, ModelConfig)
    d = ModelConfig()
    p = "model."
    get = lambda k: raw.get(k, getattr(d, k))  # noqa: E731
    cfg = ModelConfig(
        embed_dim=_int(p + "embed_dim", get("embed_dim"), lo=1),
        max_seq_len=_int(p + "max_seq_len", get("max_seq_len"), lo=1),
        batch_size=_int(p + "batch_size", get("batch_size"), lo=1),
        learning_rate=_num(p + "learning_rate", get("learning_rate"), lo=0, lo_open=True),
        adam_beta1=_num(p + "adam_beta1", get("adam_beta1"), lo=0, hi=1, lo_open=True, hi_open=True),
        adam_beta2=_num(p + "adam_beta2", get("adam_beta2"), lo=0, hi=1, lo_open=True, hi_open=True),
        adam_eps=_num(p + "adam_eps", get("adam_eps"), lo=0, lo_open=True),
        epochs=_int(p + "epochs", get("epochs"), lo=0),
        csrec_epochs=_int(p + "csrec_epochs", get("csrec_epochs"), lo=0),
        lam=_num(p + "lam", get("lam"), lo=0),
        detach_target=get("detach_target"),
        csrec_init=_choice(p + "csrec_init", get("csrec_init"), {"ftilde", "random"}),
    )
    if not isinstance(cfg.detach_target, bool):
        raise ValidationError(p + "detach_target", "expected true or false")
    return cfg


def _eval(raw) -> EvalConfig:
    raw = _block("eval", raw, EvalConfig)
    d = EvalConfig()
    ks = raw.get("k", d.k)
    alphas = raw.get("alpha", d.alpha)
    if not isinstance(ks, list) or not ks:
        raise ValidationError("eval.k", "expected a non-empty list")
    if not isinstance(alphas, list) or not alphas:
        raise ValidationError("eval.alpha", "expected a non-empty list")
    return EvalConfig(
        k=[_int(f"eval.k[{i}]", k, lo=1) for i, k in enumerate(ks)],
        alpha=[_num(f"eval.alpha[{i}]", a, lo=0, hi=1, lo_open=True, hi_open=True) for i, a in enumerate(alphas)],
        beta=_int("eval.beta", raw.get("beta", d.beta), lo=1),
        mode=_choice("eval.mode", raw.get("mode", d.mode), {"teacher", "rollout"}),
        split=_choice("eval.split", raw.get("split", d.split), {"train", "valid", "test"}),
    )


def config_from_dict(raw) -> ExperimentConfig:
    raw = _block("", raw, ExperimentConfig)
    d = ExperimentConfig()
    out = raw.get("output_dir", d.output_dir)
    if not isinstance(out, str) or not out:
        raise ValidationError("output_dir", "expected a non-empty string")
    return ExperimentConfig(
        simulator=_simulator(raw.get("simulator", {})),
        model=_model(raw.get("model", {})),
        eval=_eval(raw.get("eval", {})),
        seed=_int("seed", raw.get("seed", d.seed), lo=0),
        output_dir=out,
    )


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno) from None
    return config_from_dict(raw)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        line = data[: e.start].count(b"\n") + 1
        raise ParseError("file is not valid UTF-8", line, e.start - data.rfind(b"\n", 0, e.start)) from None
    return parse_config(text)
