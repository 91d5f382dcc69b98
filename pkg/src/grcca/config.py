"""Line-oriented ``key=value`` run configuration with dotted keys."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .augment import AugParams
from .pipeline import TrainConfig


class ConfigError(ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


# key -> (parser, default)
KEYS = {
    "dataset": (str, ""),
    "name": (str, ""),
    "out": (str, "runs"),
    "seed": (int, 0),
    "deterministic": (_bool, False),
    "threads": (int, 1),
    "epochs": (int, 10),
    "lr": (float, 0.0005),
    "tau": (float, 0.05),
    "k": (int, 14),
    "h": (int, 2),
    "dim": (int, 256),
    "activation": (str, "relu"),
    "mode": (str, "async"),
    "aug.p_re": (float, 0.2),
    "aug.p_mnf_1": (float, 0.3),
    "aug.p_mnf_2": (float, 0.4),
    "aug.alpha": (float, 0.05),
    "aug.eps": (_opt_float, None),
    "ablation.disable_multi_clustering": (_bool, False),
    "ablation.disable_async": (_bool, False),
    "ablation.disable_diffusion": (_bool, False),
    "eval.task": (str, "node"),
    "eval.runs": (int, 10),
    "eval.protocol": (str, "citation"),
    "eval.per_class": (int, 20),
    "eval.test_size": (int, 1000),
    "eval.link_runs": (int, 5),
    "eval.val_frac": (float, 0.05),
    "eval.test_frac": (float, 0.10),
    "eval.kmeans_restarts": (int, 10),
}

TASKS = ("node", "link", "community")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    dataset: str = ""
    name: str = ""
    out: str = "runs"
    deterministic: bool = False
    threads: int = 1
    task: str = "node"
    runs: int = 10
    protocol: str = "citation"
    per_class: int = 20
    test_size: int = 1000
    link_runs: int = 5
    val_frac: float = 0.05
    test_frac: float = 0.10
    kmeans_restarts: int = 10
    raw: dict = field(default_factory=dict, compare=False)

    def to_text(self):
        return "".join(f"{k}={_fmt(v)}\n" for k, v in sorted(self.raw.items()))


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_text(text, source="<config>"):
    """Parse ``key=value`` lines into a dict of typed values (no defaults)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(None, f"{source}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = _convert(key, val)
    return values


def _convert(key, val):
    if key not in KEYS:
        raise ConfigError(key, "unknown key")
    parser = KEYS[key][0]
    try:
        return parser(val)
    except ValueError as exc:
        raise ConfigError(key, f"bad value {val!r} ({exc})") from None


def build(values):
    """Merge ``values`` over the defaults and validate everything."""
    merged = {k: d for k, (_, d) in KEYS.items()}
    for k, v in values.items():
        if k not in KEYS:
            raise ConfigError(k, "unknown key")
        merged[k] = v
    checks = {
        "threads": merged["threads"] >= 1,
        "eval.runs": merged["eval.runs"] >= 1,
        "eval.link_runs": merged["eval.link_runs"] >= 1,
        "eval.per_class": merged["eval.per_class"] >= 1,
        "eval.test_size": merged["eval.test_size"] >= 1,
        "eval.kmeans_restarts": merged["eval.kmeans_restarts"] >= 1,
        "eval.task": merged["eval.task"] in TASKS,
        "eval.protocol": merged["eval.protocol"] in ("citation", "copurchase"),
    }
    for key, ok in checks.items():
        if not ok:
            raise ConfigError(key, f"invalid value {merged[key]!r}")
    aug_keys = {k: merged[f"aug.{k}"] for k in ("p_re", "p_mnf_1", "p_mnf_2", "alpha", "eps")}
    try:
        aug = AugParams(**aug_keys)
    except ValueError as exc:
        raise ConfigError(_key_in_message(exc, "aug."), str(exc)) from None
    try:
        train = TrainConfig(
            aug=aug,
            k=merged["k"],
            h=merged["h"],
            tau=merged["tau"],
            epochs=merged["epochs"],
            lr=merged["lr"],
            activation=merged["activation"],
            mode=merged["mode"],
            seed=merged["seed"],
            dim=merged["dim"],
            disable_multi_clustering=merged["ablation.disable_multi_clustering"],
            disable_async=merged["ablation.disable_async"],
            disable_diffusion=merged["ablation.disable_diffusion"],
        )
    except ValueError as exc:
        raise ConfigError(_key_in_message(exc, ""), str(exc)) from None
    return RunConfig(
        train=train,
        dataset=merged["dataset"],
        name=merged["name"],
        out=merged["out"],
        deterministic=merged["deterministic"],
        threads=merged["threads"],
        task=merged["eval.task"],
        runs=merged["eval.runs"],
        protocol=merged["eval.protocol"],
        per_class=merged["eval.per_class"],
        test_size=merged["eval.test_size"],
        link_runs=merged["eval.link_runs"],
        val_frac=merged["eval.val_frac"],
        test_frac=merged["eval.test_frac"],
        kmeans_restarts=merged["eval.kmeans_restarts"],
        raw=merged,
    )


def _key_in_message(exc, prefix):
    first = str(exc).split(" ", 1)[0]
    return prefix + first


def load(path, overrides=None):
    """Read a config file (or preset name) and apply ``key=value`` overrides."""
    text, source = _read_source(path)
    values = parse_text(text, source)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(None, f"override {item!r} is not key=value")
        key, val = (s.strip() for s in item.split("=", 1))
        values[key] = _convert(key, val)
    cfg = build(values)
    if cfg.dataset and source != "<preset>" and not Path(cfg.dataset).is_absolute():
        resolved = Path(path).parent / cfg.dataset
        if resolved.exists():
            cfg = replace(cfg, dataset=str(resolved), raw={**cfg.raw, "dataset": str(resolved)})
    return cfg


def _read_source(path):
    p = Path(path)
    if p.exists():
        return p.read_text(encoding="utf-8"), str(p)
    name = p.name if p.suffix == ".conf" else f"{p.name}.conf"
    preset = resources.files("grcca") / "presets" / name
    if preset.is_file():
        return preset.read_text(encoding="utf-8"), "<preset>"
    raise ConfigError(None, f"config file not found: {path}")


def preset(name, **overrides):
    """A committed preset, e.g. ``preset("cora")``, as a RunConfig."""
    text, source = _read_source(name)
    values = parse_text(text, source)
    values.update(overrides)
    return build(values)


def preset_names():
    return sorted(p.name[:-5] for p in (resources.files("grcca") / "presets").iterdir() if p.name.endswith(".conf"))
