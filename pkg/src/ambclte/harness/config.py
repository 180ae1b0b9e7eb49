"""Sectioned ``key = value`` experiment configuration.

Sections::

    [cell]     pci, n_rb, traffic_fill, include_pss, carrier_freq
    [channel]  cfo, quantizer_bits, quantizer_full_scale
    [path.N]   delay, amplitude, doppler        (N = 0 is the direct path)
    [bd]       delay, amplitude, doppler, chip_duration, payload, guard
    [sweep]    snr_db, packets, seed, fidelity, snr_mode, timing, highpass, output, jobs

Every key can be overridden with ``section.key=value`` strings (the CLI's
``--set``). Delays are in seconds, frequencies in Hz, amplitudes are Python
complex literals (``0.1``, ``0.1j``, ``0.3-0.2j``). ``snr_db`` is a comma
list and accepts ``inf``.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace

from ..channel import BdPathSpec, ChannelSpec, PathSpec
from ..codec import DEFAULT_CHIP_DURATION, hex_to_bits
from ..lte import CellConfig

CONFIG_ENV = "AMBCLTE_CONFIG"
FIDELITIES = ("waveform", "tap")
SNR_MODES = ("decision", "lte")
TIMINGS = ("search", "known")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.

    Attributes:
        cell: LTE cell.
        channel: Paths, backscatter path (waveform filled in per packet) and impairments.
        payload: Fixed 8-digit hex payload, or ``None`` for a fresh random payload per packet.
        chip_duration: Backscatter chip length in seconds.
        guard: Silence before and after each packet, seconds.
        snr_db: Sweep grid. With ``snr_mode="decision"`` the values are nominal
            decision SNRs; with ``"lte"`` they are direct-path SNRs at the ADC.
        packets: Packets per SNR point.
        seed: Master seed; each packet uses ``SeedSequence([seed, point, packet])``.
        fidelity: ``"waveform"`` (full IQ chain) or ``"tap"`` (tap-domain model).
        timing: ``"search"`` (PSS + header search) or ``"known"`` (genie timing).
        highpass: Enable the direct-path removal filter.
        output: Result CSV path (``None`` -> stdout for the CLI).
        jobs: Worker processes for the sweep.
    """

    cell: CellConfig = field(default_factory=CellConfig)
    channel: ChannelSpec = field(
        default_factory=lambda: ChannelSpec(paths=(PathSpec(),), bd=BdPathSpec(amplitude=0.1))
    )
    payload: str | None = None
    chip_duration: float = DEFAULT_CHIP_DURATION
    guard: float = 0.3
    snr_db: tuple[float, ...] = (float("inf"),)
    packets: int = 10
    seed: int = 0
    fidelity: str = "waveform"
    snr_mode: str = "decision"
    timing: str = "search"
    highpass: bool = True
    output: str | None = None
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        if not self.snr_db:
            raise ConfigError("snr grid must not be empty")
        if self.packets < 1:
            raise ConfigError("packets must be >= 1")
        if self.guard < 0:
            raise ConfigError("guard must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for name, allowed in (("fidelity", FIDELITIES), ("snr_mode", SNR_MODES), ("timing", TIMINGS)):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.payload is not None:
            try:
                hex_to_bits(self.payload)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.channel.bd is None:
            raise ConfigError("experiments need a backscatter path ([bd] section)")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _complex(text: str) -> complex:
    try:
        return complex(text.strip().replace(" ", ""))
    except ValueError:
        raise ConfigError(f"not a complex number: {text!r}") from None


def _opt(text: str):
    t = text.strip()
    return None if t.lower() in ("", "none") else t


_CELL_KEYS = {
    "pci": int,
    "n_rb": int,
    "n_fft": int,
    "traffic_fill": str,
    "include_pss": _bool,
    "carrier_freq": float,
    "subcarrier_spacing": float,
}
_PATH_KEYS = {"delay": float, "amplitude": _complex, "doppler": float}
_BD_KEYS = {**_PATH_KEYS, "chip_duration": float, "payload": _opt, "guard": float}
_CHANNEL_KEYS = {
    "cfo": float,
    "noise_psd": float,
    "quantizer_bits": lambda t: None if _opt(t) is None else int(t),
    "quantizer_full_scale": lambda t: None if _opt(t) is None else float(t),
}
_SWEEP_KEYS = {
    "snr_db": lambda t: tuple(float(x) for x in t.split(",") if x.strip()),
    "packets": int,
    "seed": int,
    "fidelity": str,
    "snr_mode": str,
    "timing": str,
    "highpass": _bool,
    "output": _opt,
    "jobs": int,
}


def _parse_section(name: str, items, schema) -> dict:
    out = {}
    for key, value in items:
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")
        try:
            out[key] = schema[key](value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    return out


def apply_overrides(parser: configparser.ConfigParser, overrides) -> None:
    """Apply ``section.key=value`` strings to a parser in place."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        if "." not in lhs:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        section, key = lhs.strip().rsplit(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key.strip(), value.strip())


def parse_config(text: str = "", overrides=()) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from config text plus overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    apply_overrides(parser, overrides)

    known = {"cell", "channel", "bd", "sweep"}
    for s in parser.sections():
        if s not in known and not s.startswith("path."):
            raise ConfigError(f"unknown section [{s}]")

    cell = CellConfig(**_parse_section("cell", parser.items("cell"), _CELL_KEYS)) if parser.has_section("cell") else CellConfig()

    path_sections = sorted(
        (s for s in parser.sections() if s.startswith("path.")), key=lambda s: int(s.split(".", 1)[1])
    )
    paths = tuple(PathSpec(**_parse_section(s, parser.items(s), _PATH_KEYS)) for s in path_sections) or (PathSpec(),)

    bd_vals = _parse_section("bd", parser.items("bd"), _BD_KEYS) if parser.has_section("bd") else {}
    chip_duration = bd_vals.pop("chip_duration", DEFAULT_CHIP_DURATION)
    payload = bd_vals.pop("payload", None)
    guard = bd_vals.pop("guard", 0.3)
    bd = BdPathSpec(**{"amplitude": 0.1, **bd_vals})

    ch_vals = _parse_section("channel", parser.items("channel"), _CHANNEL_KEYS) if parser.has_section("channel") else {}
    channel = ChannelSpec(paths=paths, bd=bd, **ch_vals)

    sweep = _parse_section("sweep", parser.items("sweep"), _SWEEP_KEYS) if parser.has_section("sweep") else {}
    return ExperimentConfig(
        cell=cell, channel=channel, payload=payload, chip_duration=chip_duration, guard=guard, **sweep
    )


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read ``path`` (or ``$AMBCLTE_CONFIG`` when ``path`` is None; defaults if neither)."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    text = ""
    if path is not None:
        with open(path) as f:
            text = f.read()
    return parse_config(text, overrides)


def _fmt(v) -> str:
    if isinstance(v, complex):
        return repr(v).strip("()")
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Config text that :func:`parse_config` reads back to an equal config."""
    c = cfg.cell
    lines = ["[cell]"]
    lines += [f"{k} = {_fmt(getattr(c, k))}" for k in ("pci", "n_rb", "n_fft", "carrier_freq", "subcarrier_spacing", "include_pss")]
    lines.append(f"traffic_fill = {c.traffic_fill.value}")
    ch = cfg.channel
    lines += ["", "[channel]", f"cfo = {ch.cfo!r}", f"noise_psd = {ch.noise_psd!r}",
              f"quantizer_bits = {ch.quantizer_bits}", f"quantizer_full_scale = {ch.quantizer_full_scale}"]
    for i, p in enumerate(ch.paths):
        lines += ["", f"[path.{i}]", f"delay = {p.delay!r}", f"amplitude = {_fmt(complex(p.amplitude))}", f"doppler = {p.doppler!r}"]
    bd = ch.bd
    lines += ["", "[bd]", f"delay = {bd.delay!r}", f"amplitude = {_fmt(complex(bd.amplitude))}", f"doppler = {bd.doppler!r}",
              f"chip_duration = {cfg.chip_duration!r}", f"payload = {cfg.payload}", f"guard = {cfg.guard!r}"]
    lines += ["", "[sweep]", "snr_db = " + ", ".join(repr(s) for s in cfg.snr_db),
              f"packets = {cfg.packets}", f"seed = {cfg.seed}", f"fidelity = {cfg.fidelity}",
              f"snr_mode = {cfg.snr_mode}", f"timing = {cfg.timing}", f"highpass = {cfg.highpass}",
              f"output = {cfg.output}", f"jobs = {cfg.jobs}"]
    return "\n".join(lines) + "\n"


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)
