"""Run configuration and CSV serialization.

Configuration files are plain ``key = value`` lines; ``#`` starts a comment.
Values resolve in three layers: built-in defaults, then the config file,
then command-line flags. The fully resolved configuration is echoed into
the header of every output file.
"""

from __future__ import annotations

import csv
import io as _io
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConfigError, InvalidParameters
from .model import ClockParams
from .sweep import BACKENDS, QUANTUM_METHODS, RATE_MEASURES, SweepRecord

MODES = ("simulate", "analytic", "chain", "sweep", "figure3", "validate", "power-estimate")
CONVENTIONS = (
    "units=hbar=k_B=E_w=1",
    "basis=n_c*2d+n_h*d+k",
    "vec=column-stacking",
    "chain_steps=d-1",
    "analytic_steps=d",
)
COLUMNS = ("d", "E_c", "Q_c", "Q_h", "dS_tick", "t_tick", "dt_tick", "nu_tick", "N", "backend", "flags")
ERROR_PREFIX = "error="
OUTPUT_KEYS = ("output", "contour_output", "wtd_output", "operator_dump")


def _parse_float(text):
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    return float(text)


def _parse_int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_list(conv):
    """Comma list, inclusive ``start:stop:step`` range, or ``log:start:stop:num``."""

    def parse(text):
        text = text.strip()
        if text.startswith("log:"):
            start, stop, num = text[4:].split(":")
            return tuple(conv(repr(float(x))) for x in np.geomspace(float(start), float(stop), int(num)))
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return tuple(conv(repr(start + i * step)) for i in range(count))
        return tuple(conv(x) for x in text.split(",") if x.strip())

    return parse


def _parse_choice(choices):
    def parse(text):
        text = text.strip()
        if text not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}, got {text!r}")
        return text

    return parse


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_number(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    """Resolved configuration for one CLI invocation."""

    mode: str = "analytic"
    # clock parameters (default working point)
    E_c: float = 1.0
    E_w: float = 1.0
    d: int = 10
    g: float = 0.05
    gamma_h: float = 0.05
    gamma_c: float = 0.05
    Gamma: float = 0.05
    T_c: float = 1.0
    T_h: float = 1000.0
    # backend selection
    backend: str = "chain"
    boundary: str = "leaky"
    quantum_method: str = "resolvent"
    quantum_d_max: int = 60
    # integrator
    rtol: float = 1e-8
    atol: float = 1e-12
    eps: float = 1e-9
    t_end: float = math.inf
    # sweep grid
    d_values: tuple = tuple(range(10, 61, 5))
    E_c_values: tuple = field(default_factory=lambda: tuple(float(x) for x in np.geomspace(0.25, 4.0, 16)))
    workers: int = 1
    iso_nu: tuple = ()
    iso_N: tuple = ()
    iso_rate: tuple = ()
    rate_measure: str = "entropy"
    # figure3 subcommand
    d_list: tuple = (10, 100, 1000)
    Q_c_max: float = 2000.0
    Q_c_points: int = 201
    # power estimate, SI units
    nu_hz: float = 1e10
    accuracy: float = 1e6
    T_c_kelvin: float = 300.0
    T_h_kelvin: float = math.inf
    # output
    output: str = "-"
    contour_output: str = ""
    wtd_output: str = ""
    operator_dump: str = ""
    quick: bool = False
    deterministic: bool = True

    def clock_params(self) -> ClockParams:
        return ClockParams(
            E_c=self.E_c, d=self.d, g=self.g, gamma_h=self.gamma_h, gamma_c=self.gamma_c,
            Gamma=self.Gamma, T_c=self.T_c, T_h=self.T_h, E_w=self.E_w,
        )

    def echo_lines(self) -> list[str]:
        """``key = value`` lines for every setting that can affect results.

        Output destinations are left out so that identical runs written to
        different files stay byte-identical.
        """
        return [
            f"{f.name} = {_fmt(getattr(self, f.name))}" for f in fields(self) if f.name not in OUTPUT_KEYS
        ]


_PARSERS = {
    "mode": _parse_choice(MODES),
    "E_c": _parse_float, "E_w": _parse_float, "d": _parse_int, "g": _parse_float,
    "gamma_h": _parse_float, "gamma_c": _parse_float, "Gamma": _parse_float,
    "T_c": _parse_float, "T_h": _parse_float,
    "backend": _parse_choice(BACKENDS),
    "boundary": _parse_choice(("leaky", "absorbing")),
    "quantum_method": _parse_choice(QUANTUM_METHODS),
    "quantum_d_max": _parse_int,
    "rtol": _parse_float, "atol": _parse_float, "eps": _parse_float, "t_end": _parse_float,
    "d_values": _parse_list(_parse_int), "E_c_values": _parse_list(_parse_float),
    "workers": _parse_int,
    "iso_nu": _parse_list(_parse_float), "iso_N": _parse_list(_parse_float),
    "iso_rate": _parse_list(_parse_float),
    "rate_measure": _parse_choice(RATE_MEASURES),
    "d_list": _parse_list(_parse_int), "Q_c_max": _parse_float, "Q_c_points": _parse_int,
    "nu_hz": _parse_float, "accuracy": _parse_float,
    "T_c_kelvin": _parse_float, "T_h_kelvin": _parse_float,
    "output": str, "contour_output": str, "wtd_output": str, "operator_dump": str,
    "quick": _parse_bool, "deterministic": _parse_bool,
}

# keys each mode needs in addition to the defaults being sensible
_CLOCK_MODES = ("simulate", "analytic", "chain")


def config_keys() -> tuple[str, ...]:
    return tuple(f.name for f in fields(RunConfig))


def _normalize_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    if key in _PARSERS:
        return key
    lowered = {k.lower(): k for k in _PARSERS}
    return lowered.get(key.lower(), key)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into typed values.

    Raises
    ------
    ConfigError
        On malformed lines, unknown keys, or unparsable values; the error
        carries the key and 1-based line number.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: expected 'key = value'", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        key = _normalize_key(key)
        if key not in _PARSERS:
            raise ConfigError(f"{source}: unknown key", key=key, line=lineno)
        if key in values:
            raise ConfigError(f"{source}: duplicate key", key=key, line=lineno)
        try:
            values[key] = _PARSERS[key](value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: {exc}", key=key, line=lineno) from None
    return values


def parse_overrides(pairs: dict) -> dict:
    """Parse flag values given as strings (already keyed by config name)."""
    values = {}
    for key, value in pairs.items():
        key = _normalize_key(key)
        if key not in _PARSERS:
            raise ConfigError("unknown key", key=key)
        try:
            values[key] = _PARSERS[key](value) if isinstance(value, str) else value
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), key=key) from None
    return values


def resolve_config(file_text: str | None = None, flags: dict | None = None, mode: str | None = None) -> RunConfig:
    """Layer defaults, an optional config file and flag overrides into a :class:`RunConfig`.

    Raises
    ------
    ConfigError
        For parse errors and unknown keys.
    InvalidParameters
        If the resolved clock parameters violate an invariant.
    """
    merged = {}
    if file_text is not None:
        merged.update(parse_config_text(file_text))
    if flags:
        merged.update(parse_overrides(flags))
    if mode is not None:
        merged["mode"] = _parse_choice(MODES)(mode)
    cfg = RunConfig(**merged)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    # raises InvalidParameters naming the violated invariant
    cfg.clock_params()
    if cfg.mode == "sweep":
        for name in ("d_values", "E_c_values"):
            values = getattr(cfg, name)
            if not values:
                raise InvalidParameters(f"invariant violated: {name} must not be empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise InvalidParameters(f"invariant violated: {name} must be strictly increasing")
    if cfg.mode == "power-estimate" and not cfg.T_h_kelvin > cfg.T_c_kelvin:
        raise InvalidParameters("invariant violated: T_h_kelvin > T_c_kelvin")
    if min(cfg.rtol, cfg.atol, cfg.eps) <= 0:
        raise InvalidParameters("invariant violated: rtol, atol, eps > 0")
    if cfg.workers < 1:
        raise InvalidParameters("invariant violated: workers >= 1")


# ---------------------------------------------------------------- CSV


def format_number(x) -> str:
    """Shortest-safe text for a float: 17 significant digits, round-trip exact."""
    if x is None:
        return ""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _header_block(config: RunConfig | None, extra: dict | None) -> str:
    lines = [f"# autoclock {__version__}"]
    lines.append("# conventions: " + " ".join(CONVENTIONS))
    if extra:
        for key, value in extra.items():
            lines.append(f"# {key}: {value}")
    if config is not None:
        lines.append("# config:")
        lines.extend(f"#   {line}" for line in config.echo_lines())
    return "\n".join(lines) + "\n"


def _flags_field(record: SweepRecord) -> str:
    tags = list(record.flags)
    if record.error is not None:
        tags.append(ERROR_PREFIX + record.error)
    return ";".join(tags)


def records_to_csv(records, config: RunConfig | None = None, extra: dict | None = None) -> str:
    if not records:
        raise ValueError("no records to emit")
    buf = _io.StringIO()
    buf.write(_header_block(config, extra))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in records:
        writer.writerow(
            [
                str(r.d), format_number(r.E_c), format_number(r.Q_c), format_number(r.Q_h),
                format_number(r.dS_tick), format_number(r.t_tick), format_number(r.dt_tick),
                format_number(r.nu_tick), format_number(r.N), r.backend, _flags_field(r),
            ]
        )
    return buf.getvalue()


def write_text(text: str, path) -> None:
    """Write ``text`` to ``path`` (``"-"`` for stdout), surfacing the path on failure."""
    if path in ("-", "", None):
        import sys

        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_records(records, path, config: RunConfig | None = None, extra: dict | None = None) -> None:
    """Write records as CSV with a ``#`` metadata header."""
    write_text(records_to_csv(records, config, extra), path)


def _opt_float(text):
    return None if text == "" else _parse_float(text)


def parse_records(text: str) -> list[SweepRecord]:
    """Inverse of :func:`records_to_csv`."""
    rows = [line for line in text.splitlines() if line and not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    if tuple(header) != COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    out = []
    for row in reader:
        data = dict(zip(COLUMNS, row))
        tags = [t for t in data["flags"].split(";") if t]
        error = None
        flags = []
        for tag in tags:
            if tag.startswith(ERROR_PREFIX):
                error = tag[len(ERROR_PREFIX):]
            else:
                flags.append(tag)
        out.append(
            SweepRecord(
                d=int(data["d"]), E_c=_parse_float(data["E_c"]), Q_c=_parse_float(data["Q_c"]),
                Q_h=_parse_float(data["Q_h"]), dS_tick=_parse_float(data["dS_tick"]),
                t_tick=_opt_float(data["t_tick"]), dt_tick=_opt_float(data["dt_tick"]),
                nu_tick=_opt_float(data["nu_tick"]), N=_opt_float(data["N"]),
                backend=data["backend"], flags=tuple(flags), error=error,
            )
        )
    return out


def read_records(path) -> list[SweepRecord]:
    return parse_records(Path(path).read_text(encoding="utf-8"))


def table_to_csv(columns: dict, config: RunConfig | None = None, extra: dict | None = None) -> str:
    """Generic numeric table (equal-length columns) with the metadata header."""
    names = list(columns)
    length = {len(v) for v in columns.values()}
    if len(length) != 1:
        raise ValueError("columns must have equal length")
    buf = _io.StringIO()
    buf.write(_header_block(config, extra))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for i in range(length.pop()):
        writer.writerow([_fmt_cell(columns[n][i]) for n in names])
    return buf.getvalue()


def _fmt_cell(v):
    if isinstance(v, (str, bool)):
        return _fmt(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format_number(v)


def curves_to_csv(curves, config: RunConfig | None = None, extra: dict | None = None) -> str:
    """Long-format contour table: one row per contour point."""
    cols = {k: [] for k in ("quantity", "level", "index", "d", "E_c", "Q_c", "nu_tick", "N", "rate")}
    for curve in curves:
        for i in range(len(curve)):
            cols["quantity"].append(curve.quantity)
            cols["level"].append(curve.level)
            cols["index"].append(i)
            for name in ("d", "E_c", "Q_c", "nu_tick", "N", "rate"):
                cols[name].append(float(curve.column(name)[i]))
    if not cols["quantity"]:
        raise ValueError("no contour points to emit")
    return table_to_csv(cols, config, extra)
