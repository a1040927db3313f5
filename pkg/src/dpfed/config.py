"""Experiment configuration: flat dotted-key files, validated and defaulted.

Format: one ``key=value`` per line, ``#`` starts a comment, blank lines
ignored. Example::

    mode=central-dp
    seed=7
    data.synthetic.n_samples=10000
    model.hidden=64,64,64
    train.lr=0.003
    train.lot_size=2048
    train.epochs=50
    dp.clip_norm=4.0
    dp.sigma=0.8
    dp.epsilon=22.59
    dp.delta=1e-5

Unknown keys are rejected; every mode checks that its required sections
are present.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .data import SyntheticSpec
from .dp import DpSpec, TrainConfig
from .accountant import PrivacyBudget
from .federated import LdpSpec, RoundConfig

MODES = ("central", "central-dp", "fed", "fed-ldp")
SAMPLING_MODES = ("shuffle", "poisson")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message carries the key path."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture knobs; input/output widths are bound to the data at run time."""

    hidden_dims: tuple[int, ...] = (64, 64, 64)
    activation: str = "relu"


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    seed: int = 0
    csv_path: str | None = None
    synthetic: SyntheticSpec | None = None
    model: ModelSpec = ModelSpec()
    train: TrainConfig = TrainConfig()
    dp: DpSpec | None = None
    budget: PrivacyBudget | None = None
    fed: RoundConfig | None = None
    sampling: str = "shuffle"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"sampling: must be one of {SAMPLING_MODES}")
        if self.seed < 0:
            raise ConfigError("seed: must be non-negative")
        if (self.csv_path is None) == (self.synthetic is None):
            raise ConfigError("data: exactly one of data.csv or data.synthetic.* required")
        if self.mode in ("central-dp", "fed-ldp"):
            if self.dp is None or self.budget is None:
                raise ConfigError(f"dp: mode {self.mode} requires the dp section "
                                  "(dp.clip_norm, dp.sigma, dp.epsilon, dp.delta)")
            if not (self.dp.noise_multiplier > 0):
                raise ConfigError("dp.sigma: must be positive in private modes")
        if self.mode in ("fed", "fed-ldp") and self.fed is None:
            raise ConfigError(f"fed: mode {self.mode} requires the fed section")


_KNOWN_KEYS = {
    "mode", "seed", "sampling",
    "data.csv",
    "data.synthetic.n_samples", "data.synthetic.n_features",
    "data.synthetic.class_separation", "data.synthetic.noise_std",
    "model.hidden", "model.activation",
    "train.lr", "train.lot_size", "train.epochs", "train.optimizer",
    "dp.clip_norm", "dp.sigma", "dp.epsilon", "dp.delta",
    "fed.clients", "fed.fraction", "fed.local_batch", "fed.local_epochs",
    "fed.lr", "fed.prox_mu", "fed.rounds", "fed.optimizer",
}


def _parse_value(key: str, raw: str, kind):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


def _parse_hidden(key: str, raw: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from None
    if not dims:
        raise ConfigError(f"{key}: needs at least one hidden width")
    return dims


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate the dotted-key format; defaults fill missing keys."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value

    if "mode" not in raw:
        raise ConfigError(f"{source}: missing required key 'mode'")

    def take(key, kind, default=None):
        if key not in raw:
            return default
        return _parse_value(key, raw.pop(key), kind)

    mode = raw.pop("mode")
    seed = take("seed", int, 0)
    sampling = take("sampling", str, "shuffle")

    csv_path = take("data.csv", str)
    synth_keys = [k for k in raw if k.startswith("data.synthetic.")]
    synthetic = None
    if synth_keys or csv_path is None:
        try:
            synthetic = SyntheticSpec(
                n_samples=take("data.synthetic.n_samples", int, 10_000),
                n_features=take("data.synthetic.n_features", int, 20),
                class_separation=take("data.synthetic.class_separation", float, 6.0),
                noise_std=take("data.synthetic.noise_std", float, 1.0),
            )
        except ValueError as exc:
            raise ConfigError(f"data.synthetic: {exc}") from None
        if csv_path is not None:
            raise ConfigError("data: data.csv and data.synthetic.* are mutually exclusive")

    model = ModelSpec(
        hidden_dims=(_parse_hidden("model.hidden", raw.pop("model.hidden"))
                     if "model.hidden" in raw else (64, 64, 64)),
        activation=take("model.activation", str, "relu"),
    )
    if model.activation not in ("relu", "tanh"):
        raise ConfigError(f"model.activation: must be relu or tanh, got {model.activation!r}")

    try:
        train = TrainConfig(
            learning_rate=take("train.lr", float, 0.001),
            lot_size=take("train.lot_size", int, 1024),
            epochs=take("train.epochs", int, 50),
            optimizer=take("train.optimizer", str, "adam"),
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None

    dp_spec = None
    budget = None
    if any(k.startswith("dp.") for k in raw):
        try:
            dp_spec = DpSpec(clip_norm=take("dp.clip_norm", float, 4.0),
                             noise_multiplier=take("dp.sigma", float, 0.8))
            budget = PrivacyBudget(epsilon=take("dp.epsilon", float, 22.59),
                                   delta=take("dp.delta", float, 1e-5))
        except ValueError as exc:
            raise ConfigError(f"dp: {exc}") from None

    fed = None
    if any(k.startswith("fed.") for k in raw) or mode in ("fed", "fed-ldp"):
        optimizer = take("fed.optimizer", str, None)
        if optimizer is None:
            optimizer = "dp-adam" if mode == "fed-ldp" else "adam"
        ldp = None
        if mode == "fed-ldp":
            if dp_spec is None or budget is None:
                raise ConfigError("dp: mode fed-ldp requires the dp section")
            ldp = LdpSpec(dp_spec=dp_spec, budget=budget)
        try:
            fed = RoundConfig(
                num_clients=take("fed.clients", int, 5),
                client_fraction=take("fed.fraction", float, 0.5),
                local_batch=take("fed.local_batch", int, 1024),
                local_epochs=take("fed.local_epochs", int, 5),
                learning_rate=take("fed.lr", float, 0.003),
                prox_mu=take("fed.prox_mu", float, 0.0),
                optimizer=optimizer,
                rounds=take("fed.rounds", int, 20),
                ldp=ldp,
            )
        except ValueError as exc:
            raise ConfigError(f"fed: {exc}") from None

    leftover = set(raw)
    if leftover:
        raise ConfigError(f"{source}: unused keys {sorted(leftover)}")

    try:
        return ExperimentConfig(mode=mode, seed=seed, csv_path=csv_path,
                                synthetic=synthetic, model=model, train=train,
                                dp=dp_spec, budget=budget, fed=fed,
                                sampling=sampling)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path: str | Path) -> ExperimentConfig:
    """Read and parse a config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Copy of the config with the seed overridden (CLI --seed)."""
    if seed < 0:
        raise ConfigError("seed: must be non-negative")
    return replace(cfg, seed=seed)


def to_flat_dict(cfg: ExperimentConfig) -> dict:
    """Resolved config as dotted keys, defaults included.

    Echoed into metrics headers so a sweep can be audited: two runs that
    vary one parameter differ in exactly that key.
    """
    out: dict = {"mode": cfg.mode, "seed": cfg.seed, "sampling": cfg.sampling}
    if cfg.csv_path is not None:
        out["data.csv"] = cfg.csv_path
    else:
        s = cfg.synthetic
        out.update({"data.synthetic.n_samples": s.n_samples,
                    "data.synthetic.n_features": s.n_features,
                    "data.synthetic.class_separation": s.class_separation,
                    "data.synthetic.noise_std": s.noise_std})
    out["model.hidden"] = ",".join(str(h) for h in cfg.model.hidden_dims)
    out["model.activation"] = cfg.model.activation
    out.update({"train.lr": cfg.train.learning_rate,
                "train.lot_size": cfg.train.lot_size,
                "train.epochs": cfg.train.epochs,
                "train.optimizer": cfg.train.optimizer})
    if cfg.dp is not None:
        out.update({"dp.clip_norm": cfg.dp.clip_norm,
                    "dp.sigma": cfg.dp.noise_multiplier,
                    "dp.epsilon": cfg.budget.epsilon,
                    "dp.delta": cfg.budget.delta})
    if cfg.fed is not None:
        f = cfg.fed
        out.update({"fed.clients": f.num_clients, "fed.fraction": f.client_fraction,
                    "fed.local_batch": f.local_batch,
                    "fed.local_epochs": f.local_epochs, "fed.lr": f.learning_rate,
                    "fed.prox_mu": f.prox_mu, "fed.rounds": f.rounds,
                    "fed.optimizer": f.optimizer})
    return out
