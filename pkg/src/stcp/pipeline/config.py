"""Run configuration read from INI-style ``key = value`` files.

Every key has a default, so an empty file (or none) yields a usable
configuration. Sections: ``[data]``, ``[model]``, ``[prior]``, ``[mcmc]``,
``[simulate]`` and ``[output]``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..kron_linalg import InvalidInput
from ..mcmc import DECAYS, Hyperparams, SamplerConfig

DEFAULTS = {
    "data": {"path": "", "metric": "great-circle", "origin": "0", "calendar_start": "",
             "pre_event_end": "0", "deseasonalize": "no", "detrend": "no", "normalize": "no",
             "zonal": "no"},
    "model": {"variance_mode": "equal", "tau0_support": "all", "pin_beta": "no",
              "random_effects": "yes", "delta_update": "integrated", "eps_support": "active"},
    "prior": {"s_a_sq": "100", "s_b_sq": "100", "a": "2", "b": "1", "decay_lower": "0.01",
              "decay_upper": "10", "trunc_floor": "1e-8"},
    "mcmc": {"iterations": "4000", "burn_in": "1000", "thin": "1", "batch_size": "50",
             "chains": "1", "seed": "0"},
    "simulate": {"study": "mean", "replications": "20", "side": "11", "m": "61",
                 "gamma0": "", "sigma2_sq": "", "spacing": "1", "workers": "1"},
    "output": {"dir": "runs"},
}


@dataclass
class RunConfig:
    data_path: str = ""
    metric: str = "great-circle"
    origin: str = "0"
    calendar_start: str = ""
    pre_event_end: int = 0
    deseasonalize: bool = False
    detrend: bool = False
    normalize: bool = False
    zonal: bool = False
    variance_mode: str = "equal"
    tau0_support: str = "all"
    pin_beta: bool = False
    random_effects: bool = True
    delta_update: str = "integrated"
    eps_support: str = "active"
    s_a_sq: float = 100.0
    s_b_sq: float = 100.0
    a: float = 2.0
    b: float = 1.0
    decay_lower: float = 0.01
    decay_upper: float = 10.0
    trunc_floor: float = 1e-8
    iterations: int = 4000
    burn_in: int = 1000
    thin: int = 1
    batch_size: int = 50
    chains: int = 1
    seed: int = 0
    study: str = "mean"
    replications: int = 20
    side: int = 11
    m: int = 61
    gamma0: list = field(default_factory=list)
    sigma2_sq: list = field(default_factory=list)
    spacing: float = 1.0
    workers: int = 1
    out_dir: str = "runs"

    def sampler_config(self, variance_mode: str | None = None) -> SamplerConfig:
        cfg = SamplerConfig(iterations=self.iterations, burn_in=self.burn_in, thin=self.thin,
                            batch_size=self.batch_size,
                            variance_mode=variance_mode or self.variance_mode,
                            delta_update=self.delta_update, eps_support=self.eps_support,
                            random_effects=self.random_effects, pin_beta=self.pin_beta)
        cfg.check()
        return cfg

    def hyperparams(self, m: int) -> Hyperparams:
        sup = parse_support(self.tau0_support, m)
        h = Hyperparams(s_a_sq=self.s_a_sq, s_b_sq=self.s_b_sq,
                        decay_bounds={k: (self.decay_lower, self.decay_upper) for k in DECAYS},
                        tau0_support=sup, tau0_prior=np.full(sup.size, 1.0 / sup.size),
                        trunc_floor=self.trunc_floor)
        for i in range(1, 6):
            setattr(h, f"a{i}", self.a)
            setattr(h, f"b{i}", self.b)
        h.check()
        h.support(m)
        return h


def parse_support(text: str, m: int) -> np.ndarray:
    """Parse a ``tau0`` support such as ``all``, ``5-20`` or ``5-20,61``.

    ``M`` may be written literally as ``M``; it is always added to the support.
    """
    text = text.strip().lower()
    if text in ("", "all"):
        return np.arange(1, m + 1)
    vals: set[int] = set()
    for part in text.split(","):
        part = part.strip().replace("m", str(m))
        if "-" in part:
            lo, hi = (int(p) for p in part.split("-", 1))
            vals.update(range(lo, hi + 1))
        elif part:
            vals.add(int(part))
    vals.add(m)
    sup = np.array(sorted(vals))
    if sup[0] < 1 or sup[-1] > m:
        raise InvalidInput(f"tau0 support must lie in 1..{m}")
    return sup


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def load_config(path: str | Path | None = None) -> RunConfig:
    """Read a configuration file; missing keys take their defaults."""
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise InvalidInput(f"config file {p} not found")
        cp.read(p)
    known = {s: set(v) for s, v in DEFAULTS.items()}
    for sec in cp.sections():
        if sec not in known:
            raise InvalidInput(f"unknown config section [{sec}]")
        extra = set(cp[sec]) - known[sec]
        if extra:
            raise InvalidInput(f"unknown keys in [{sec}]: {sorted(extra)}")
    d, mo, pr, mc, si = cp["data"], cp["model"], cp["prior"], cp["mcmc"], cp["simulate"]
    try:
        rc = RunConfig(
            data_path=d["path"], metric=d["metric"], origin=d["origin"],
            calendar_start=d["calendar_start"], pre_event_end=d.getint("pre_event_end"),
            deseasonalize=d.getboolean("deseasonalize"), detrend=d.getboolean("detrend"),
            normalize=d.getboolean("normalize"), zonal=d.getboolean("zonal"),
            variance_mode=mo["variance_mode"], tau0_support=mo["tau0_support"],
            pin_beta=mo.getboolean("pin_beta"), random_effects=mo.getboolean("random_effects"),
            delta_update=mo["delta_update"], eps_support=mo["eps_support"],
            s_a_sq=pr.getfloat("s_a_sq"), s_b_sq=pr.getfloat("s_b_sq"), a=pr.getfloat("a"),
            b=pr.getfloat("b"), decay_lower=pr.getfloat("decay_lower"),
            decay_upper=pr.getfloat("decay_upper"), trunc_floor=pr.getfloat("trunc_floor"),
            iterations=mc.getint("iterations"), burn_in=mc.getint("burn_in"),
            thin=mc.getint("thin"), batch_size=mc.getint("batch_size"),
            chains=mc.getint("chains"), seed=mc.getint("seed"),
            study=si["study"], replications=si.getint("replications"), side=si.getint("side"),
            m=si.getint("m"), gamma0=_floats(si["gamma0"]), sigma2_sq=_floats(si["sigma2_sq"]),
            spacing=si.getfloat("spacing"), workers=si.getint("workers"),
            out_dir=cp["output"]["dir"],
        )
    except ValueError as exc:
        raise InvalidInput(f"bad config value: {exc}") from exc
    if rc.variance_mode not in ("equal", "increase", "decrease", "all"):
        raise InvalidInput("variance_mode must be equal, increase, decrease or all")
    if rc.data_path and path is not None and not Path(rc.data_path).is_absolute():
        rc.data_path = str(Path(path).parent / rc.data_path)
    return rc
