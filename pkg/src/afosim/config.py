"""Run configuration: a flat key = value text format and its validation.

Scalars are plain tokens, vectors are space-separated numbers, matrices are
rows separated by ';' or a ``@relative/path`` reference to a whitespace
matrix file.  Scalar values for per-agent or per-epoch fields broadcast.
A canonical serialization backs the config hash, which deterministically
identifies a run's inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "EpochSpec",
    "SimConfig",
    "parse_config",
    "format_config",
    "config_hash",
    "with_overrides",
]

_OUTPUT_MAP_KINDS = ("random", "aircraft", "explicit")
_EPOCH_KINDS = ("random_qp", "aircraft", "explicit")
_INIT_KINDS = ("center", "trim", "explicit")


@dataclass(frozen=True)
class EpochSpec:
    """Explicitly configured epoch; exactly one of theta or p is given."""

    t: float
    Q: np.ndarray
    q: np.ndarray
    P: np.ndarray
    theta: np.ndarray | None = None
    p: np.ndarray | None = None

    def __post_init__(self):
        if (self.theta is None) == (self.p is None):
            raise ValueError("an explicit epoch needs exactly one of theta or p")


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce one run."""

    agent_count: int
    input_dims: tuple[int, ...]
    output_dims: tuple[int, ...]
    box_lower: np.ndarray
    box_upper: np.ndarray
    output_map_kind: str
    epoch_kind: str
    epoch_count: int
    kappas: tuple[int, ...]
    B: int
    p_update: tuple[float, ...]
    p_measure: tuple[float, ...]
    p_communicate: tuple[float, ...]
    delay_max: int
    gamma: tuple[float, ...] | str  # "auto" or per-epoch values
    seed: int
    t_step: float = 1.0
    init_kind: str = "center"
    init_vector: np.ndarray | None = None
    trace_thin: int = 0
    C_explicit: np.ndarray | None = None
    explicit_epochs: tuple[EpochSpec, ...] = ()

    def __post_init__(self):
        if self.output_map_kind not in _OUTPUT_MAP_KINDS:
            raise ValueError(f"output_map must be one of {_OUTPUT_MAP_KINDS}")
        if self.epoch_kind not in _EPOCH_KINDS:
            raise ValueError(f"epoch_source must be one of {_EPOCH_KINDS}")
        if self.init_kind not in _INIT_KINDS:
            raise ValueError(f"init must be one of {_INIT_KINDS}")

    @property
    def n(self) -> int:
        return int(sum(self.input_dims))

    @property
    def m(self) -> int:
        return int(sum(self.output_dims))

    def validate(self) -> None:
        """Cross-field consistency beyond what module constructors enforce."""
        N = self.agent_count
        if len(self.input_dims) != N or len(self.output_dims) != N:
            raise ValueError("input_dims/output_dims must have one entry per agent")
        if self.box_lower.shape != (self.n,) or self.box_upper.shape != (self.n,):
            raise ValueError("box bounds must be full n-vectors")
        if len(self.kappas) != self.epoch_count:
            raise ValueError("kappa must have one entry per epoch")
        for ell, kappa in enumerate(self.kappas):
            if kappa < self.B or kappa % self.B != 0:
                raise ValueError(f"kappa[{ell}]={kappa} must be a positive multiple of B")
        if not 0 <= self.delay_max <= self.B - 1:
            raise ValueError("delay_max must lie in [0, B-1]")
        if isinstance(self.gamma, tuple):
            if len(self.gamma) != self.epoch_count:
                raise ValueError("gamma must be 'auto' or one value per epoch")
            if any(g <= 0 for g in self.gamma):
                raise ValueError("gamma values must be positive")
        elif self.gamma != "auto":
            raise ValueError("gamma must be 'auto' or a per-epoch list")
        for probs, name in (
            (self.p_update, "p_update"),
            (self.p_measure, "p_measure"),
            (self.p_communicate, "p_communicate"),
        ):
            if len(probs) != N:
                raise ValueError(f"{name} must broadcast to one value per agent")
            if any(not 0 <= p <= 1 for p in probs):
                raise ValueError(f"{name} values must lie in [0, 1]")
        if self.output_map_kind == "explicit" and self.C_explicit is None:
            raise ValueError("explicit output map requires C")
        if self.epoch_kind == "explicit" and len(self.explicit_epochs) != self.epoch_count:
            raise ValueError("explicit epoch source requires one epoch spec per epoch")
        if self.init_kind == "explicit":
            if self.init_vector is None or self.init_vector.shape != (self.n,):
                raise ValueError("explicit init requires a full n-vector")
        if self.init_kind == "trim" and self.epoch_kind != "aircraft":
            raise ValueError("trim initialization is only defined for the aircraft problem")
        if self.trace_thin < 0:
            raise ValueError("trace_thin must be non-negative")


def _fmt_num(v) -> str:
    return f"{float(v):.17g}"


def _fmt_vec(v) -> str:
    return " ".join(_fmt_num(x) for x in np.asarray(v, dtype=float))


def _fmt_mat(mat) -> str:
    return "; ".join(_fmt_vec(row) for row in np.asarray(mat, dtype=float))


def format_config(cfg: SimConfig) -> str:
    """Canonical text form; stable field order so hashes are reproducible."""
    lines = [
        f"agent_count = {cfg.agent_count}",
        "input_dims = " + " ".join(str(d) for d in cfg.input_dims),
        "output_dims = " + " ".join(str(d) for d in cfg.output_dims),
        "box_lower = " + _fmt_vec(cfg.box_lower),
        "box_upper = " + _fmt_vec(cfg.box_upper),
        f"output_map = {cfg.output_map_kind}",
        f"epoch_source = {cfg.epoch_kind}",
        f"epoch_count = {cfg.epoch_count}",
        "kappa = " + " ".join(str(k) for k in cfg.kappas),
        f"B = {cfg.B}",
        "p_update = " + _fmt_vec(cfg.p_update),
        "p_measure = " + _fmt_vec(cfg.p_measure),
        "p_communicate = " + _fmt_vec(cfg.p_communicate),
        f"delay_max = {cfg.delay_max}",
        "gamma = " + (cfg.gamma if isinstance(cfg.gamma, str) else _fmt_vec(cfg.gamma)),
        f"seed = {cfg.seed}",
        f"t_step = {_fmt_num(cfg.t_step)}",
        f"init = {cfg.init_kind}",
        f"trace_thin = {cfg.trace_thin}",
    ]
    if cfg.init_vector is not None:
        lines.append("init_vector = " + _fmt_vec(cfg.init_vector))
    if cfg.C_explicit is not None:
        lines.append("C = " + _fmt_mat(cfg.C_explicit))
    for ell, spec in enumerate(cfg.explicit_epochs):
        lines.append(f"epoch{ell}.t = {_fmt_num(spec.t)}")
        lines.append(f"epoch{ell}.Q = " + _fmt_mat(spec.Q))
        lines.append(f"epoch{ell}.q = " + _fmt_vec(spec.q))
        lines.append(f"epoch{ell}.P = " + _fmt_mat(spec.P))
        if spec.theta is not None:
            lines.append(f"epoch{ell}.theta = " + _fmt_vec(spec.theta))
        else:
            lines.append(f"epoch{ell}.p = " + _fmt_vec(spec.p))
    return "\n".join(lines) + "\n"


def config_hash(cfg: SimConfig) -> str:
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()


def _parse_vec(value: str, base_dir: Path | None) -> np.ndarray:
    value = value.strip()
    if value.startswith("@"):
        if base_dir is None:
            raise ValueError("file references need a base directory")
        return np.loadtxt(base_dir / value[1:], dtype=float).reshape(-1)
    return np.asarray([float(tok) for tok in value.split()], dtype=float)


def _parse_mat(value: str, base_dir: Path | None) -> np.ndarray:
    value = value.strip()
    if value.startswith("@"):
        if base_dir is None:
            raise ValueError("file references need a base directory")
        return np.atleast_2d(np.loadtxt(base_dir / value[1:], dtype=float))
    rows = [r for r in value.split(";") if r.strip()]
    return np.asarray([[float(tok) for tok in r.split()] for r in rows], dtype=float)


def _broadcast_int(value: str, count: int) -> tuple[int, ...]:
    toks = value.split()
    vals = [int(t) for t in toks]
    if len(vals) == 1:
        vals = vals * count
    if len(vals) != count:
        raise ValueError(f"expected 1 or {count} integers, got {len(vals)}")
    return tuple(vals)


def _broadcast_float(value: str, count: int) -> tuple[float, ...]:
    toks = value.split()
    vals = [float(t) for t in toks]
    if len(vals) == 1:
        vals = vals * count
    if len(vals) != count:
        raise ValueError(f"expected 1 or {count} numbers, got {len(vals)}")
    return tuple(vals)


def parse_config(text: str, base_dir: Path | str | None = None) -> SimConfig:
    """Parse the flat key = value format (see README for the key list)."""
    base_dir = Path(base_dir) if base_dir is not None else None
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = value.strip()

    def need(key: str) -> str:
        if key not in raw:
            raise ValueError(f"missing required key {key!r}")
        return raw[key]

    N = int(need("agent_count"))
    input_dims = _broadcast_int(need("input_dims"), N)
    output_dims = _broadcast_int(need("output_dims"), N)
    n = sum(input_dims)
    epoch_count = int(need("epoch_count"))
    B = int(need("B"))

    box_lower = np.asarray(_broadcast_float(need("box_lower"), n))
    box_upper = np.asarray(_broadcast_float(need("box_upper"), n))

    gamma_raw = raw.get("gamma", "auto")
    gamma: tuple[float, ...] | str
    if gamma_raw.strip() == "auto":
        gamma = "auto"
    else:
        gamma = _broadcast_float(gamma_raw, epoch_count)

    init_kind = raw.get("init", "center")
    init_vector = None
    if init_kind == "explicit":
        init_vector = _parse_vec(need("init_vector"), base_dir)

    C_explicit = None
    if raw.get("output_map", "random") == "explicit":
        C_explicit = _parse_mat(need("C"), base_dir)

    epoch_kind = need("epoch_source")
    explicit_epochs: list[EpochSpec] = []
    if epoch_kind == "explicit":
        for ell in range(epoch_count):
            prefix = f"epoch{ell}."
            theta = raw.get(prefix + "theta")
            p = raw.get(prefix + "p")
            explicit_epochs.append(
                EpochSpec(
                    t=float(raw.get(prefix + "t", ell)),
                    Q=_parse_mat(need(prefix + "Q"), base_dir),
                    q=_parse_vec(need(prefix + "q"), base_dir),
                    P=_parse_mat(need(prefix + "P"), base_dir),
                    theta=None if theta is None else _parse_vec(theta, base_dir),
                    p=None if p is None else _parse_vec(p, base_dir),
                )
            )

    cfg = SimConfig(
        agent_count=N,
        input_dims=input_dims,
        output_dims=output_dims,
        box_lower=box_lower,
        box_upper=box_upper,
        output_map_kind=raw.get("output_map", "random"),
        epoch_kind=epoch_kind,
        epoch_count=epoch_count,
        kappas=_broadcast_int(need("kappa"), epoch_count),
        B=B,
        p_update=_broadcast_float(need("p_update"), N),
        p_measure=_broadcast_float(need("p_measure"), N),
        p_communicate=_broadcast_float(need("p_communicate"), N),
        delay_max=int(raw.get("delay_max", max(B - 1, 0))),
        gamma=gamma,
        seed=int(need("seed")),
        t_step=float(raw.get("t_step", 1.0)),
        init_kind=init_kind,
        init_vector=init_vector,
        trace_thin=int(raw.get("trace_thin", 0)),
        C_explicit=C_explicit,
        explicit_epochs=tuple(explicit_epochs),
    )
    cfg.validate()
    return cfg


def with_overrides(cfg: SimConfig, **kwargs) -> SimConfig:
    """Functional update helper used by the CLI and sweeps."""
    new = replace(cfg, **kwargs)
    new.validate()
    return new
