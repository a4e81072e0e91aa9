"""Flat ``key = value`` run configuration with typed defaults."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable

from .data.dataset import DataConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


# key -> (parser, default)
SCHEMA: dict[str, tuple[Any, Any]] = {
    # model
    "channels": (int, 16),
    "event_bins": (int, 5),
    "levels": (int, 3),
    "blocks": (int, 2),
    "fusion": (str, "complex"),
    "temporal": (str, "gru"),
    "freq_branch": (_bool, True),
    "cln": (str, "whiten"),
    "seed": (int, 0),
    # data
    "height": (int, 64),
    "width": (int, 64),
    "n_objects": (int, 3),
    "latent_rate": (int, 13),
    "background": (float, 0.45),
    "max_speed": (float, 1.5),
    "blur_m": (int, 6),
    "brightness": (float, 0.15),
    "gamma": (float, 2.2),
    "noise": (float, 0.01),
    "threshold": (float, 0.15),
    "eps_log": (float, 1e-3),
    "data_seed": (int, 7),
    "n_train": (int, 8),
    "n_eval": (int, 8),
    "image_format": (str, "cten"),
    # training
    "lr": (float, 2e-4),
    "steps": (int, 500),
    "batch": (int, 2),
    "eval_every": (int, 100),
    "eval_split": (str, "eval"),
    # ablation
    "variants": (str, "a,c,e"),
    "seeds": (str, "0"),
    # gradient check
    "gc_h": (float, 1e-4),
    "gc_tol": (float, 1e-3),
    "gc_samples": (int, 64),
    "gc_e2e_samples": (int, 4),
    "gc_ops": (str, "all"),
    "gc_corrupt": (str, ""),
    # paths
    "data_dir": (str, ""),
    "input_dir": (str, ""),
}


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    return str(v)


class RunConfig:
    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {k: default for k, (_, default) in SCHEMA.items()}
        self.explicit: set[str] = set()
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, raw: Any) -> None:
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            self.values[key] = parser(raw.strip()) if isinstance(raw, str) else parser(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        self.explicit.add(key)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Iterable[str] = ()) -> "RunConfig":
        cfg = cls()
        if path is not None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            for lineno, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                k, v = line.split("=", 1)
                try:
                    cfg.set(k, v)
                except ConfigError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from None
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            cfg.set(k, v)
        return cfg

    def text(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in sorted(self.values))

    def write(self, directory: str | Path, name: str = "config.txt") -> Path:
        path = Path(directory) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.text(), encoding="utf-8")
        return path

    def model(self, **changes) -> ModelConfig:
        keys = ("channels", "event_bins", "levels", "blocks", "fusion", "temporal", "freq_branch", "cln", "seed")
        kwargs = {k: self.values[k] for k in keys}
        kwargs.update(changes)
        try:
            return ModelConfig(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def data(self) -> DataConfig:
        v = self.values
        cfg = DataConfig(
            height=v["height"], width=v["width"], n_objects=v["n_objects"],
            latent_rate=v["latent_rate"], background=v["background"], max_speed=v["max_speed"],
            blur_m=v["blur_m"], brightness=v["brightness"], gamma=v["gamma"], noise=v["noise"],
            threshold=v["threshold"], eps_log=v["eps_log"], seed=v["data_seed"],
        )
        try:
            cfg.validate()
        except ValueError as exc:
            raise ConfigError(f"invalid data config: {exc}") from None
        return cfg

    def train(self, **changes) -> TrainConfig:
        v = self.values
        kwargs = dict(lr=v["lr"], steps=v["steps"], batch=v["batch"], seed=v["seed"], eval_every=v["eval_every"])
        kwargs.update(changes)
        if kwargs["lr"] <= 0 or kwargs["batch"] < 1 or kwargs["steps"] < 0:
            raise ConfigError("lr must be > 0, batch >= 1, steps >= 0")
        return TrainConfig(**kwargs)
