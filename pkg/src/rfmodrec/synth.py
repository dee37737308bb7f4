"""Baseband I/Q waveform synthesis, channel gain and AWGN.

Two label sets are provided: :class:`ModScheme` (the eight RF1024-style
classes) and :class:`RmlScheme` (the eleven RadioML2016-style classes used
with 128-sample frames). Every generated waveform is normalised to unit
average power before the channel is applied.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]


class ModScheme(enum.IntEnum):
    QAM16 = 0
    FSK2 = 1
    FM = 2
    GMSK = 3
    OFDM = 4
    FSK4 = 5
    PSK4 = 6
    QPSK = 7


class RmlScheme(enum.IntEnum):
    BPSK = 0
    QPSK = 1
    PSK8 = 2
    QAM16 = 3
    QAM64 = 4
    PAM4 = 5
    CPFSK = 6
    GFSK = 7
    WBFM = 8
    AM_SSB = 9
    AM_DSB = 10


Scheme = Union[ModScheme, RmlScheme]

# per-family namespace folded into frame seeds so the two enums never share streams
_FAMILY_TAG = {ModScheme: 0, RmlScheme: 1}


@dataclass(frozen=True)
class OfdmConfig:
    subcarriers: int = 64
    cyclic_prefix: int = 16


@dataclass(frozen=True)
class SynthConfig:
    samples_per_symbol: int = 8
    rrc_rolloff: float = 0.35
    rrc_span: int = 8
    gmsk_bt: float = 0.3
    fsk_mod_index: float = 1.0
    fm_deviation: float = 0.1
    fm_bandwidth: float = 0.05
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_symbol < 2:
            raise ValueError(f"samples_per_symbol must be >= 2, got {self.samples_per_symbol}")
        if not 0 < self.rrc_rolloff <= 1:
            raise ValueError(f"rrc_rolloff must lie in (0, 1], got {self.rrc_rolloff}")
        for name in ("rrc_span", "gmsk_bt", "fsk_mod_index", "fm_deviation", "fm_bandwidth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.ofdm.subcarriers <= 0 or self.ofdm.cyclic_prefix < 0:
            raise ValueError("invalid OFDM configuration")


@dataclass(frozen=True)
class ChannelConfig:
    """Single-antenna channel ``s = z*x + n``."""

    z: complex = 1.0 + 0.0j
    n_r: int = 1
    noise_mode: str = "awgn_at_snr"  # or "noiseless"
    snr_db: Optional[float] = None

    def __post_init__(self):
        if self.n_r != 1:
            raise ValueError("only single-antenna reception (n_r == 1) is supported")
        if abs(self.z) == 0:
            raise ValueError("channel gain z must be non-zero")
        if self.noise_mode not in ("awgn_at_snr", "noiseless"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        if self.noise_mode == "awgn_at_snr" and self.snr_db is None:
            raise ValueError("awgn_at_snr needs snr_db")


@dataclass
class SignalFrame:
    """One labelled I/Q observation; row 0 of ``iq`` is I, row 1 is Q."""

    iq: np.ndarray
    label: int
    snr_db: float = math.inf
    seed: int = 0

    def __post_init__(self):
        self.iq = np.asarray(self.iq, dtype=np.float32)
        if self.iq.ndim != 2 or self.iq.shape[0] != 2:
            raise ValueError(f"iq must be a 2xN matrix, got shape {self.iq.shape}")

    @classmethod
    def from_complex(cls, x: np.ndarray, label: int, snr_db: float = math.inf, seed: int = 0) -> "SignalFrame":
        x = np.asarray(x)
        return cls(np.stack([x.real, x.imag]), int(label), snr_db, seed)

    @property
    def complex(self) -> np.ndarray:
        return self.iq[0].astype(np.float64) + 1j * self.iq[1].astype(np.float64)

    @property
    def n_samples(self) -> int:
        return self.iq.shape[1]


def average_power(x: np.ndarray) -> float:
    """mean(|x|^2) of a complex sequence or of a 2xN I/Q matrix."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return float(np.mean(np.abs(x) ** 2))
    return float(np.mean(np.sum(x.astype(np.float64) ** 2, axis=0)))


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# constellations and pulse shapes
# ---------------------------------------------------------------------------


def constellation(name: str) -> np.ndarray:
    """Unit average-energy symbol alphabet."""
    name = name.upper()
    if name == "QPSK":
        pts = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / math.sqrt(2)
    elif name == "PSK4":
        pts = np.array([1, 1j, -1, -1j], dtype=complex)
    elif name == "BPSK":
        pts = np.array([1, -1], dtype=complex)
    elif name == "PSK8":
        pts = np.exp(2j * np.pi * np.arange(8) / 8)
    elif name in ("QAM16", "QAM64"):
        m = 4 if name == "QAM16" else 8
        lv = np.arange(-(m - 1), m, 2)
        pts = (lv[:, None] + 1j * lv[None, :]).ravel()
        pts = pts / math.sqrt(np.mean(np.abs(pts) ** 2))
    elif name == "PAM4":
        pts = np.array([-3, -1, 1, 3], dtype=complex) / math.sqrt(5)
    else:
        raise ValueError(f"no constellation for {name!r}")
    return pts


def linear_symbols(name: str, n: int, rng: SeedLike) -> np.ndarray:
    """Draw ``n`` symbols; PSK4 is differentially encoded on the axis-aligned alphabet."""
    rng = _rng(rng)
    if name.upper() == "PSK4":
        steps = rng.integers(0, 4, size=n)
        start = rng.integers(0, 4)
        return np.exp(0.5j * np.pi * ((start + np.cumsum(steps)) % 4))
    pts = constellation(name)
    return pts[rng.integers(0, len(pts), size=n)]


def rrc_taps(rolloff: float, sps: int, span: int) -> np.ndarray:
    """Root-raised-cosine impulse response, unit energy, ``span*sps + 1`` taps."""
    b = rolloff
    t = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1 - b + 4 * b / math.pi
        elif abs(abs(ti) - 1 / (4 * b)) < 1e-9:
            h[i] = b / math.sqrt(2) * (
                (1 + 2 / math.pi) * math.sin(math.pi / (4 * b)) + (1 - 2 / math.pi) * math.cos(math.pi / (4 * b))
            )
        else:
            num = math.sin(math.pi * ti * (1 - b)) + 4 * b * ti * math.cos(math.pi * ti * (1 + b))
            h[i] = num / (math.pi * ti * (1 - (4 * b * ti) ** 2))
    return h / math.sqrt(np.sum(h**2))


def pulse_shape(symbols: np.ndarray, sps: int, taps: np.ndarray) -> np.ndarray:
    up = np.zeros(len(symbols) * sps, dtype=complex)
    up[::sps] = symbols
    return np.convolve(up, taps)


def gaussian_freq_pulse(bt: float, sps: int, span: int = 4) -> np.ndarray:
    """Rectangular symbol pulse smoothed by a Gaussian of bandwidth-time ``bt``; sums to 1."""
    t = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    g = math.sqrt(2 * math.pi / math.log(2)) * bt * np.exp(-2 * (math.pi * bt * t) ** 2 / math.log(2))
    p = np.convolve(np.ones(sps), g)
    return p / p.sum()


def cpm(symbols: np.ndarray, sps: int, mod_index: float, freq_pulse: Optional[np.ndarray] = None) -> np.ndarray:
    """Continuous-phase modulation: symbol ``a`` advances the phase by ``pi*h*a`` per symbol."""
    if freq_pulse is None:
        freq_pulse = np.full(sps, 1.0 / sps)
    up = np.zeros(len(symbols) * sps)
    up[::sps] = symbols
    dphi = math.pi * mod_index * np.convolve(up, freq_pulse)
    return np.exp(1j * np.cumsum(dphi))


def bandlimited_message(n: int, bandwidth: float, rng: np.random.Generator) -> np.ndarray:
    """Real Gaussian message with flat spectrum on |f| <= bandwidth (cycles/sample), peak |m| = 1."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n)
    spec[f > bandwidth] = 0
    spec[0] = 0
    m = np.fft.irfft(spec, n)
    return m / np.max(np.abs(m))


def _analytic(m: np.ndarray) -> np.ndarray:
    n = len(m)
    spec = np.fft.fft(m)
    h = np.zeros(n)
    h[0] = 1
    if n % 2 == 0:
        h[n // 2] = 1
        h[1 : n // 2] = 2
    else:
        h[1 : (n + 1) // 2] = 2
    return np.fft.ifft(spec * h)


# ---------------------------------------------------------------------------
# per-scheme generators (raw, not yet normalised or cropped)
# ---------------------------------------------------------------------------


def _linear(name: str, n: int, cfg: SynthConfig, rng) -> Tuple[np.ndarray, int]:
    sps = cfg.samples_per_symbol
    n_sym = -(-n // sps) + 2 * cfg.rrc_span + 4
    x = pulse_shape(linear_symbols(name, n_sym, rng), sps, rrc_taps(cfg.rrc_rolloff, sps, cfg.rrc_span))
    # skip the filter transient at the start
    return x, cfg.rrc_span * sps


def _fsk(levels: int, n: int, cfg: SynthConfig, rng, h: float, pulse=None) -> Tuple[np.ndarray, int]:
    sps = cfg.samples_per_symbol
    n_sym = -(-n // sps) + 8
    a = 2 * rng.integers(0, levels, size=n_sym) - (levels - 1)
    x = cpm(a, sps, h, pulse)
    x = x * np.exp(1j * rng.uniform(0, 2 * math.pi))
    return x, 2 * sps


def _fm(n: int, cfg: SynthConfig, rng, deviation: float) -> Tuple[np.ndarray, int]:
    m = bandlimited_message(n + 64, cfg.fm_bandwidth, rng)
    phase = 2 * math.pi * np.cumsum(deviation * m) + rng.uniform(0, 2 * math.pi)
    return np.exp(1j * phase), 0


def _ofdm(n: int, cfg: SynthConfig, rng) -> Tuple[np.ndarray, int]:
    k, cp = cfg.ofdm.subcarriers, cfg.ofdm.cyclic_prefix
    n_blocks = -(-n // (k + cp)) + 1
    blocks = []
    for _ in range(n_blocks):
        sym = np.fft.ifft(linear_symbols("QPSK", k, rng)) * math.sqrt(k)
        blocks.append(np.concatenate([sym[-cp:], sym]) if cp else sym)
    return np.concatenate(blocks), 0


def _am(n: int, cfg: SynthConfig, rng, ssb: bool) -> Tuple[np.ndarray, int]:
    m = bandlimited_message(n + 64, cfg.fm_bandwidth / 2, rng)
    x = _analytic(m) if ssb else (1 + 0.5 * m).astype(complex)
    return x, 0


def _raw_waveform(scheme: Scheme, n: int, cfg: SynthConfig, rng) -> Tuple[np.ndarray, int, int]:
    """Return (waveform, first usable index, maximum extra start offset)."""
    sps = cfg.samples_per_symbol
    if isinstance(scheme, ModScheme):
        S = ModScheme
        if scheme == S.QPSK:
            x, lo = _linear("QPSK", n, cfg, rng)
        elif scheme == S.PSK4:
            x, lo = _linear("PSK4", n, cfg, rng)
        elif scheme == S.QAM16:
            x, lo = _linear("QAM16", n, cfg, rng)
        elif scheme == S.FSK2:
            x, lo = _fsk(2, n, cfg, rng, cfg.fsk_mod_index)
        elif scheme == S.FSK4:
            x, lo = _fsk(4, n, cfg, rng, cfg.fsk_mod_index)
        elif scheme == S.GMSK:
            x, lo = _fsk(2, n, cfg, rng, 0.5, gaussian_freq_pulse(cfg.gmsk_bt, sps))
        elif scheme == S.FM:
            x, lo = _fm(n, cfg, rng, cfg.fm_deviation)
        elif scheme == S.OFDM:
            x, lo = _ofdm(n, cfg, rng)
            return x, lo, cfg.ofdm.subcarriers + cfg.ofdm.cyclic_prefix
        else:  # pragma: no cover - IntEnum exhausts members
            raise ValueError(f"unknown scheme {scheme!r}")
        return x, lo, sps
    if isinstance(scheme, RmlScheme):
        R = RmlScheme
        linear = {R.BPSK: "BPSK", R.QPSK: "QPSK", R.PSK8: "PSK8", R.QAM16: "QAM16", R.QAM64: "QAM64", R.PAM4: "PAM4"}
        if scheme in linear:
            x, lo = _linear(linear[scheme], n, cfg, rng)
        elif scheme == R.CPFSK:
            x, lo = _fsk(2, n, cfg, rng, 0.5)
        elif scheme == R.GFSK:
            x, lo = _fsk(2, n, cfg, rng, cfg.fsk_mod_index, gaussian_freq_pulse(0.35, sps))
        elif scheme == R.WBFM:
            x, lo = _fm(n, cfg, rng, cfg.fm_deviation)
        elif scheme in (R.AM_SSB, R.AM_DSB):
            x, lo = _am(n, cfg, rng, ssb=scheme == R.AM_SSB)
        else:  # pragma: no cover
            raise ValueError(f"unknown scheme {scheme!r}")
        return x, lo, sps
    raise ValueError(f"unknown scheme {scheme!r}")


def resolve_scheme(scheme) -> Scheme:
    """Accept enum members, or names like ``"qpsk"`` / ``"rml:qam64"``."""
    if isinstance(scheme, (ModScheme, RmlScheme)):
        return scheme
    if isinstance(scheme, str):
        key = scheme.strip().upper().replace("-", "_")
        if key.startswith("RML:"):
            return RmlScheme[key[4:]]
        return ModScheme[key]
    raise ValueError(f"unknown scheme code {scheme!r}")


def modulate(scheme, n_samples: int, cfg: Optional[SynthConfig] = None, seed: SeedLike = None) -> SignalFrame:
    """Noiseless, unit-power frame of ``n_samples`` complex samples."""
    cfg = cfg or SynthConfig()
    scheme = resolve_scheme(scheme)
    if n_samples < cfg.samples_per_symbol:
        raise ValueError(f"n_samples ({n_samples}) must be >= samples_per_symbol ({cfg.samples_per_symbol})")
    rng = _rng(seed)
    x, lo, jitter = _raw_waveform(scheme, n_samples, cfg, rng)
    start = lo + int(rng.integers(0, jitter))
    if start + n_samples > len(x):
        start = lo
    x = x[start : start + n_samples]
    x = x / math.sqrt(np.mean(np.abs(x) ** 2))
    s = seed if isinstance(seed, (int, np.integer)) else 0
    return SignalFrame.from_complex(x, int(scheme), math.inf, int(s))


def apply_channel(frame: SignalFrame, ch: ChannelConfig, seed: SeedLike = None) -> SignalFrame:
    x = complex(ch.z) * frame.complex
    out = SignalFrame.from_complex(x, frame.label, frame.snr_db, frame.seed)
    if ch.noise_mode == "noiseless":
        return out
    return add_awgn(out, ch.snr_db, seed)


def add_awgn(frame: SignalFrame, snr_db: Optional[float], seed: SeedLike = None) -> SignalFrame:
    """Add circular Gaussian noise of power ``P_signal / 10**(snr_db/10)``.

    ``snr_db=None`` (noiseless mode) returns the frame unchanged.
    """
    if snr_db is None or math.isinf(snr_db):
        return frame
    rng = _rng(seed)
    x = frame.complex
    sigma2 = average_power(x) / 10 ** (snr_db / 10)
    noise = math.sqrt(sigma2 / 2) * (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x)))
    return SignalFrame.from_complex(x + noise, frame.label, float(snr_db), frame.seed)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SnrPolicy:
    """``fixed``: every frame at ``values[0]``. ``grid``: uniform random draw from ``values``.
    ``cycle``: frame ``i`` of each class gets ``values[i % len(values)]`` (balanced buckets).
    ``noiseless``: no noise."""

    mode: str = "grid"
    values: Tuple[float, ...] = tuple(range(0, 20, 2))

    @classmethod
    def fixed(cls, snr_db: float) -> "SnrPolicy":
        return cls("fixed", (float(snr_db),))

    @classmethod
    def grid(cls, lo: float, hi: float, step: float, balanced: bool = False) -> "SnrPolicy":
        vals = tuple(float(v) for v in np.arange(lo, hi + step / 2, step))
        return cls("cycle" if balanced else "grid", vals)

    @classmethod
    def noiseless(cls) -> "SnrPolicy":
        return cls("noiseless", ())

    def pick(self, index: int, rng: np.random.Generator) -> Optional[float]:
        if self.mode == "noiseless":
            return None
        if self.mode == "fixed":
            return self.values[0]
        if self.mode == "cycle":
            return self.values[index % len(self.values)]
        if self.mode == "grid":
            return self.values[int(rng.integers(0, len(self.values)))]
        raise ValueError(f"unknown SNR policy {self.mode!r}")


def frame_seed(master: int, scheme: Scheme, index: int) -> int:
    """Deterministic 64-bit seed for frame ``index`` of ``scheme``."""
    tag = _FAMILY_TAG[type(scheme)]
    state = np.random.SeedSequence([int(master), tag, int(scheme), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def synth_frame(scheme: Scheme, index: int, n_samples: int, snr_policy: SnrPolicy, cfg: SynthConfig,
                channel: Optional[ChannelConfig] = None) -> SignalFrame:
    seed = frame_seed(cfg.seed, scheme, index)
    mod_ss, snr_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    frame = modulate(scheme, n_samples, cfg, np.random.default_rng(mod_ss))
    frame.seed = seed
    snr = snr_policy.pick(index, np.random.default_rng(snr_ss))
    z = 1.0 if channel is None else channel.z
    if z != 1.0:
        frame = apply_channel(frame, ChannelConfig(z=z, noise_mode="noiseless"))
    noisy = add_awgn(frame, snr, np.random.default_rng(noise_ss))
    if snr is None:
        noisy.snr_db = math.inf
    return noisy


def generate_dataset(classes: Sequence, per_class_train: int, per_class_test: int, n_samples: int,
                     snr_policy: Optional[SnrPolicy] = None, cfg: Optional[SynthConfig] = None,
                     channel: Optional[ChannelConfig] = None):
    """Synthesise a labelled dataset with a built-in train/test split.

    Train frames of each class use indices ``[0, per_class_train)`` and test
    frames ``[per_class_train, per_class_train + per_class_test)``, so the two
    splits never share a frame seed. Labels are positions in ``classes``.
    """
    from .dataset import IqDataset

    if per_class_train < 0 or per_class_test < 0 or per_class_train + per_class_test == 0:
        raise ValueError("frame counts must be non-negative and not both zero")
    cfg = cfg or SynthConfig()
    snr_policy = snr_policy or SnrPolicy()
    schemes = [resolve_scheme(c) for c in classes]
    if len(set(schemes)) != len(schemes):
        raise ValueError("duplicate classes")
    total = per_class_train + per_class_test
    n = len(schemes) * total
    iq = np.empty((n, 2, n_samples), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    snr_centi = np.empty(n, dtype=np.int64)
    seeds = np.empty(n, dtype=np.uint64)
    split = np.empty(n, dtype=np.uint8)
    row = 0
    for which, (lo, hi) in enumerate([(0, per_class_train), (per_class_train, total)]):
        for label, scheme in enumerate(schemes):
            for idx in range(lo, hi):
                # cycle index restarts per split so both splits are balanced over SNR
                f = synth_frame(scheme, idx, n_samples, _Shifted(snr_policy, lo), cfg, channel)
                iq[row] = f.iq
                labels[row] = label
                snr_centi[row] = _centi(f.snr_db)
                seeds[row] = f.seed
                split[row] = which
                row += 1
    names = [scheme_name(s) for s in schemes]
    return IqDataset(iq, labels, snr_centi, seeds, names, split=split)


class _Shifted:
    def __init__(self, policy: SnrPolicy, offset: int):
        self.policy, self.offset = policy, offset

    def pick(self, index, rng):
        return self.policy.pick(index - self.offset, rng)


NOISELESS_CENTI = 2**31 - 1


def _centi(snr_db: float) -> int:
    if math.isinf(snr_db):
        return NOISELESS_CENTI
    return int(round(snr_db * 100))


def scheme_name(s: Scheme) -> str:
    return s.name if isinstance(s, ModScheme) else f"RML:{s.name}"
