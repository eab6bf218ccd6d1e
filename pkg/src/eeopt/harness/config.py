"""Flat ``key = value`` run configuration.

Lines are ``section.key = value``; ``#`` starts a comment. Every key has a
default except ``experiment`` and ``task``. Unknown or duplicate keys are
errors. :meth:`RunConfig.echo` renders the fully-defaulted config in a
canonical form that parses back to the same config.
"""
from dataclasses import dataclass
import math
import os

from ..errors import ConfigError, ValidationError
from ..objective import LANDSCAPES, LandscapeSpec
from ..optimizer import SCALING_MODES, EEOConfig

TASKS = ("landscape", "forecast", "attention_align")
MECHANISMS = ("sam", "escape", "sgld", "ema")


def _float_list(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(float(x) for x in text.split(","))


def _optional_float(text):
    return None if text.strip() in ("", "auto") else float(text)


def _optional_int(text):
    return None if text.strip() in ("", "auto") else int(text)


def _ablation(text):
    items = [x.strip() for x in text.split(",") if x.strip()]
    if items == ["none"]:
        return ()
    bad = [x for x in items if x not in MECHANISMS]
    if bad:
        raise ValueError(f"unknown mechanisms {bad}; expected a subset of {MECHANISMS} or 'none'")
    return tuple(m for m in MECHANISMS if m in items)


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {options}")
        return text

    return parse


REQUIRED = ("experiment", "task")

# key -> (parser, default)
SCHEMA = {
    "experiment": (str, None),
    "task": (_choice(TASKS), None),
    "seed": (int, 0),
    "out_dir": (str, "runs/out"),
    "ablation": (_ablation, MECHANISMS),
    "landscape.name": (_choice(LANDSCAPES), "saddle"),
    "landscape.start": (_float_list, ()),
    "landscape.diag": (_float_list, (1.0, 10.0)),
    "landscape.dim": (int, 2),
    "landscape.depth": (float, 0.3),
    "landscape.sharpness": (float, 200.0),
    "landscape.n": (int, 64),
    "landscape.lookback": (int, 8),
    "landscape.horizon": (int, 2),
    "landscape.sigma": (float, 0.1),
    "data.path": (str, ""),
    "data.lookback": (int, 24),
    "data.horizon": (int, 4),
    "data.split": (_float_list, (0.7, 0.1, 0.2)),
    "data.stride": (int, 1),
    "data.length": (int, 600),
    "data.variables": (int, 3),
    "data.noise": (float, 0.1),
    "model.d": (int, 16),
    "model.d_m": (int, 16),
    "model.d_out": (int, 16),
    "model.patch_len": (_optional_int, None),
    "model.layers": (int, 1),
    "model.batch_size": (_optional_int, None),
    "model.teacher_scale": (float, 4.0),
    "optimizer.eta": (float, 1e-3),
    "optimizer.rho": (float, 0.05),
    "optimizer.eps": (float, 1e-12),
    "optimizer.scaling_mode": (_choice(SCALING_MODES), "identity"),
    "optimizer.alpha_fd": (_optional_float, None),
    "optimizer.negcur_kick": (float, 1.0),
    "optimizer.grad_trigger": (float, 1e-2),
    "optimizer.curvature_threshold": (float, 1e-3),
    "optimizer.probe_iters": (int, 20),
    "optimizer.check_every": (int, 10),
    "optimizer.temperature": (float, 1e-4),
    "optimizer.temp_decay": (float, 0.999),
    "optimizer.beta": (float, 0.999),
    "optimizer.seed": (_optional_int, None),
    "optimizer.max_steps": (int, 1000),
    "diag.every": (int, 10),
    "diag.spectrum_every": (int, 50),
    "diag.window": (int, 20),
    "diag.drop_frac": (float, 0.5),
}


def _render(value):
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def experiment(self):
        return self.values["experiment"]

    @property
    def task(self):
        return self.values["task"]

    @property
    def seed(self):
        return self.values["seed"]

    @property
    def out_dir(self):
        return self.values["out_dir"]

    @property
    def ablation(self):
        return self.values["ablation"]

    def echo(self):
        lines = []
        for key in SCHEMA:
            value = self.values[key]
            if key == "ablation":
                text = ",".join(value) if value else "none"
            else:
                text = _render(value)
            lines.append(f"{key} = {text}".rstrip())
        return "\n".join(lines) + "\n"

    def with_overrides(self, overrides):
        """Copy with some dotted keys replaced by already-parsed values."""
        values = dict(self.values)
        for key, v in overrides.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = v
        cfg = RunConfig(values)
        cfg.validate()
        return cfg

    def eeo_config(self):
        seed = self.values["optimizer.seed"]
        cfg = EEOConfig(
            eta=self["optimizer.eta"],
            rho=self["optimizer.rho"],
            eps=self["optimizer.eps"],
            scaling_mode=self["optimizer.scaling_mode"],
            alpha_fd=self["optimizer.alpha_fd"],
            negcur_kick=self["optimizer.negcur_kick"],
            grad_trigger=self["optimizer.grad_trigger"],
            curvature_threshold=self["optimizer.curvature_threshold"],
            probe_iters=self["optimizer.probe_iters"],
            check_every=self["optimizer.check_every"],
            temperature=self["optimizer.temperature"],
            temp_decay=self["optimizer.temp_decay"],
            beta=self["optimizer.beta"],
            seed=self.seed if seed is None else seed,
            max_steps=self["optimizer.max_steps"],
        )
        on = set(self.ablation)
        return cfg.ablate(sam="sam" in on, escape="escape" in on, sgld="sgld" in on, ema="ema" in on)

    def landscape_spec(self):
        name = self["landscape.name"]
        params = {
            "quadratic": {"diag": list(self["landscape.diag"])},
            "saddle": {},
            "cubic": {"dim": self["landscape.dim"]},
            "two_well": {"depth": self["landscape.depth"], "sharpness": self["landscape.sharpness"]},
            "toy_linear": {
                "n": self["landscape.n"],
                "lookback": self["landscape.lookback"],
                "horizon": self["landscape.horizon"],
                "sigma": self["landscape.sigma"],
            },
        }[name]
        return LandscapeSpec(name, params, self.seed)

    def validate(self):
        v = self.values
        split = v["data.split"]
        if len(split) != 3 or any(f < 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError(f"data.split must be three non-negative fractions summing to 1, got {split}")
        if v["data.path"] and not os.path.exists(v["data.path"]):
            raise ConfigError(f"data.path {v['data.path']!r} does not exist")
        for key in ("data.lookback", "data.horizon", "data.stride", "data.length", "data.variables",
                    "model.layers", "diag.every", "diag.spectrum_every", "diag.window"):
            if v[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        if not 0 < v["diag.drop_frac"] < 1:
            raise ConfigError("diag.drop_frac must be in (0, 1)")
        for x in v.values():
            if isinstance(x, float) and not math.isfinite(x):
                raise ConfigError("non-finite numeric value")
        try:
            self.eeo_config()
        except ValidationError as exc:
            raise ConfigError(f"optimizer.{exc}") from exc


def parse_config_text(text):
    values = {}
    lines_of = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines_of[key]})", lineno)
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})", lineno) from None
        lines_of[key] = lineno
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    for key, (_, default) in SCHEMA.items():
        values.setdefault(key, default)
    values = {k: values[k] for k in SCHEMA}
    cfg = RunConfig(values)
    try:
        cfg.validate()
    except ConfigError as exc:
        key = next((k for k in lines_of if k in str(exc)), None)
        if key is not None and exc.line is None:
            raise ConfigError(str(exc), lines_of[key]) from None
        raise
    return cfg


def parse_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read())
