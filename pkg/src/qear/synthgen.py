"""Deterministic synthetic machinery sounds.

A recording is a broadband noise floor with a spectral tilt, a stack of
slowly drifting sinusoids, Poisson-timed decaying clicks, and optionally a
fault signature (an amplitude-modulated squeal).  Preset names refer to
common aggregate-plant machinery, but no acoustic fidelity is claimed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .audio_io import DEFAULT_SAMPLE_RATE, StereoSignal

PEAK = 0.9
CLICK_TAU_S = 0.004
DRIFT_RAD_PER_SQRT_S = 0.5
AM_DEPTH = 0.5


@dataclass(frozen=True)
class Damage:
    squeal_hz: float
    am_rate_hz: float
    gain: float


@dataclass(frozen=True)
class StereoSpread:
    gain_db: float = 0.0  # right relative to left
    delay_ms: float = 0.0  # right lags left
    noise_corr: float = 0.5  # correlation of the two noise floors


@dataclass(frozen=True)
class MachineProfile:
    name: str
    noise_level: float = 0.0
    noise_color: float = 0.0  # dB/octave
    harmonics: tuple[tuple[float, float], ...] = ()
    impact_rate: float = 0.0
    impact_gain: float = 0.0
    damage: Damage | None = None
    stereo_spread: StereoSpread = field(default_factory=StereoSpread)

    def validate(self, fs: int = DEFAULT_SAMPLE_RATE) -> None:
        nyq = fs / 2
        freqs = [f for f, _ in self.harmonics]
        gains = [g for _, g in self.harmonics] + [self.noise_level, self.impact_gain]
        if self.damage is not None:
            freqs.append(self.damage.squeal_hz)
            gains.append(self.damage.gain)
            if self.damage.am_rate_hz < 0:
                raise ValueError(f"{self.name}: negative modulation rate")
        if any(f <= 0 or f >= nyq for f in freqs):
            raise ValueError(f"{self.name}: frequencies must lie in (0, {nyq})")
        if any(g < 0 for g in gains):
            raise ValueError(f"{self.name}: gains must be >= 0")
        if self.impact_rate < 0:
            raise ValueError(f"{self.name}: impact_rate must be >= 0")
        if not -1.0 <= self.stereo_spread.noise_corr <= 1.0:
            raise ValueError(f"{self.name}: noise_corr must lie in [-1, 1]")
        if self.stereo_spread.delay_ms < 0:
            raise ValueError(f"{self.name}: delay_ms must be >= 0")


def tilt_filter(tilt_db_per_octave: float, fs: int) -> np.ndarray | None:
    """Second-order sections approximating a constant dB/octave slope.

    One first-order shelf (pole/zero pair) every two octaves from 20 Hz up;
    each shelf contributes 2*tilt dB so the average slope matches.
    """
    if tilt_db_per_octave == 0:
        return None
    r = 10 ** (abs(2 * tilt_db_per_octave) / 20)
    sos = []
    f = 20.0
    while f * r < 0.45 * fs and f < 0.45 * fs:
        fp, fz = (f, f * r) if tilt_db_per_octave < 0 else (f * r, f)
        wp, wz = (2 * fs * np.tan(np.pi * x / fs) for x in (fp, fz))
        z, p, k = sps.bilinear_zpk([-wz], [-wp], wp / wz, fs)
        sos.append(sps.zpk2sos(z, p, k)[0])
        f *= 4
    return np.array(sos) if sos else None


def colored_noise(n: int, tilt: float, fs: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal(n)
    sos = tilt_filter(tilt, fs)
    if sos is not None:
        x = sps.sosfilt(sos, x)
    rms = np.sqrt(np.mean(x ** 2)) if n else 0.0
    return x / rms if rms > 0 else x


def _drifting_phase(n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    # random walk on a 100 Hz control grid, linearly interpolated
    steps = int(np.ceil(n / fs * 100)) + 2
    walk = np.cumsum(rng.standard_normal(steps)) * DRIFT_RAD_PER_SQRT_S * np.sqrt(0.01)
    walk += rng.uniform(0, 2 * np.pi)
    return np.interp(np.arange(n) / fs * 100, np.arange(steps), walk)


def impact_times(rate: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    count = rng.poisson(rate * duration)
    return np.sort(rng.uniform(0.0, duration, count))


def _impacts(n: int, fs: int, profile: MachineProfile, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(n)
    if profile.impact_rate <= 0 or profile.impact_gain <= 0:
        return out
    L = int(5 * CLICK_TAU_S * fs)
    env = np.exp(-np.arange(L) / (CLICK_TAU_S * fs))
    for t0 in impact_times(profile.impact_rate, n / fs, rng):
        a = int(t0 * fs)
        amp = profile.impact_gain * rng.uniform(0.5, 1.0)
        burst = amp * env * rng.uniform(-1.0, 1.0, L)
        m = min(L, n - a)
        out[a:a + m] += burst[:m]
    return out


def generate(profile: MachineProfile, duration_s: float, fs: int = DEFAULT_SAMPLE_RATE,
             seed: int = 0) -> StereoSignal:
    """Render ``duration_s`` seconds of ``profile``; identical for identical seeds."""
    if duration_s < 0:
        raise ValueError("duration must be >= 0")
    profile.validate(fs)
    n = int(round(duration_s * fs))
    if n == 0:
        return StereoSignal(fs, np.zeros(0), np.zeros(0))
    rng = np.random.default_rng(seed)
    t = np.arange(n) / fs

    src = np.zeros(n)
    for f, g in profile.harmonics:
        src += g * np.sin(2 * np.pi * f * t + _drifting_phase(n, fs, rng))
    src += _impacts(n, fs, profile, rng)
    if profile.damage is not None:
        d = profile.damage
        am = 1.0 + AM_DEPTH * np.sin(2 * np.pi * d.am_rate_hz * t + rng.uniform(0, 2 * np.pi))
        src += d.gain * am * np.sin(2 * np.pi * d.squeal_hz * t + _drifting_phase(n, fs, rng))

    sp = profile.stereo_spread
    lag = int(round(sp.delay_ms * 1e-3 * fs))
    right = np.zeros(n)
    right[lag:] = src[:n - lag]
    right *= 10 ** (sp.gain_db / 20)
    left = src

    if profile.noise_level > 0:
        nl = colored_noise(n, profile.noise_color, fs, rng)
        ni = colored_noise(n, profile.noise_color, fs, rng)
        nr = sp.noise_corr * nl + np.sqrt(1 - sp.noise_corr ** 2) * ni
        left = left + profile.noise_level * nl
        right = right + profile.noise_level * nr

    peak = max(np.max(np.abs(left)), np.max(np.abs(right)))
    if peak > 0:
        left, right = left * (PEAK / peak), right * (PEAK / peak)
    return StereoSignal(fs, left, right)


BELT = MachineProfile(
    "belt", noise_level=0.05, noise_color=-3.0,
    harmonics=((60.0, 0.3), (120.0, 0.15), (180.0, 0.08), (730.0, 0.04)),
    impact_rate=0.5, impact_gain=0.1,
    stereo_spread=StereoSpread(-1.0, 0.3, 0.6),
)
MILL = MachineProfile(
    "mill", noise_level=0.08, noise_color=-6.0,
    harmonics=((25.0, 0.4), (50.0, 0.3), (100.0, 0.2), (150.0, 0.1)),
    impact_rate=8.0, impact_gain=0.15,
    stereo_spread=StereoSpread(0.5, 0.5, 0.4),
)
CRUSHER = MachineProfile(
    "crusher", noise_level=0.1, noise_color=-2.0,
    harmonics=((40.0, 0.2), (80.0, 0.1)),
    impact_rate=3.0, impact_gain=1.0,
    stereo_spread=StereoSpread(-2.0, 0.8, 0.3),
)
SCREEN = MachineProfile(
    "screen", noise_level=0.1, noise_color=0.0,
    harmonics=((16.0, 0.2), (1200.0, 0.08), (2400.0, 0.05)),
    impact_rate=20.0, impact_gain=0.08,
    stereo_spread=StereoSpread(1.0, 0.2, 0.5),
)
BELT_DAMAGED = dataclasses.replace(
    BELT, name="belt_damaged", damage=Damage(squeal_hz=3150.0, am_rate_hz=6.0, gain=0.25),
)


def anomaly_profile() -> MachineProfile:
    """Damaged belt recorded under a different noise floor (brighter and louder),
    emulating an out-of-domain fragment from another site or device."""
    return dataclasses.replace(BELT_DAMAGED, name="belt_damaged_offsite",
                               noise_level=0.15, noise_color=6.0)


def preset_profiles() -> list[MachineProfile]:
    """Four normal presets (belt, mill, crusher, screen) then the damaged belt."""
    return [BELT, MILL, CRUSHER, SCREEN, BELT_DAMAGED]


def normal_profiles() -> list[MachineProfile]:
    return [p for p in preset_profiles() if p.damage is None]


def get_profile(name: str) -> MachineProfile:
    for p in preset_profiles():
        if p.name == name:
            return p
    raise KeyError(f"unknown profile {name!r}; known: {[p.name for p in preset_profiles()]}")


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.replace(" ", "").split(",") if v]


def parse_profile(text: str) -> MachineProfile:
    """Parse the ``key=value`` profile format; ``#`` starts a comment.

    ``harmonics`` is ``f:g,f:g``; ``damage`` is ``squeal_hz,am_rate_hz,gain``
    or ``none``; ``stereo_spread`` is ``gain_db,delay_ms,noise_corr``.
    """
    kw: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "name":
            kw[key] = val
        elif key in ("noise_level", "noise_color", "impact_rate", "impact_gain"):
            kw[key] = float(val)
        elif key == "harmonics":
            pairs = [p.split(":") for p in val.replace(" ", "").split(",") if p]
            kw[key] = tuple((float(f), float(g)) for f, g in pairs)
        elif key == "damage":
            kw[key] = None if val.lower() in ("", "none") else Damage(*_floats(val))
        elif key == "stereo_spread":
            kw[key] = StereoSpread(*_floats(val))
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if "name" not in kw:
        raise ValueError("profile needs a name")
    prof = MachineProfile(**kw)
    prof.validate()
    return prof


def format_profile(p: MachineProfile) -> str:
    lines = [
        f"name={p.name}",
        f"noise_level={p.noise_level!r}",
        f"noise_color={p.noise_color!r}",
        "harmonics=" + ",".join(f"{f!r}:{g!r}" for f, g in p.harmonics),
        f"impact_rate={p.impact_rate!r}",
        f"impact_gain={p.impact_gain!r}",
        "damage=" + ("none" if p.damage is None else
                     f"{p.damage.squeal_hz!r},{p.damage.am_rate_hz!r},{p.damage.gain!r}"),
        "stereo_spread={!r},{!r},{!r}".format(*dataclasses.astuple(p.stereo_spread)),
    ]
    return "\n".join(lines) + "\n"


def load_profile(path) -> MachineProfile:
    with open(path) as fh:
        return parse_profile(fh.read())
