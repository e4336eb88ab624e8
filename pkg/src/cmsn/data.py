"""Radar-like traces, fingerprints, signal-strength metrics, and file I/O.

A trace is one complex-valued frequency sweep: 1,600 points linearly spaced
over 675 MHz - 8.5 GHz.  Twelve traces per object and angle would come from
repeated chamber sessions; here a synthetic generator stands in, building
each class from a set of complex Lorentzian resonances with per-angle gain,
per-sample jitter, and additive complex Gaussian noise.  A fingerprint
stacks one object's three angle traces as separately normalized real and
imaginary blocks: 3 angles x 1,600 points x {real, imag} = 9,600 values.

Canonical trace files are CSV (``frequency_hz, real, imag``) with full
float64 precision; a dataset is a directory of trace files plus a JSON
manifest, and ``load_dataset(save_dataset(d))`` reproduces the fingerprint
matrix bit-exactly.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

FREQ_START_HZ = 675e6
FREQ_STOP_HZ = 8.5e9
TRACE_POINTS = 1600
ANGLES = (0, 45, 90)
BLOCK_LEN = TRACE_POINTS
FINGERPRINT_LEN = 2 * TRACE_POINTS * len(ANGLES)  # 9,600

MANIFEST_NAME = "manifest.json"


class DataError(ValueError):
    """Malformed trace/fingerprint/dataset input."""


def frequency_grid():
    return np.linspace(FREQ_START_HZ, FREQ_STOP_HZ, TRACE_POINTS)


@dataclass
class Trace:
    """One frequency sweep: complex values on the canonical grid plus metadata."""
    frequencies: np.ndarray
    values: np.ndarray
    object_id: int = 0
    angle: int = 0
    session: int = 0

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.frequencies.shape != (TRACE_POINTS,) or self.values.shape != (TRACE_POINTS,):
            raise DataError(
                f"trace must have exactly {TRACE_POINTS} points, "
                f"got {self.values.shape[0] if self.values.ndim else 0}")
        dif = np.diff(self.frequencies)
        if not np.all(dif > 0):
            raise DataError("trace frequencies must be strictly increasing")
        if not np.allclose(dif, dif[0], rtol=1e-9):
            raise DataError("trace frequencies must be linearly spaced")


@dataclass(frozen=True)
class Resonance:
    center_hz: float
    width_hz: float
    amplitude: complex


@dataclass
class SyntheticClassSpec:
    """Generator recipe for one object class.

    ``angle_gains`` scales the whole resonance response per angle (indexed
    like :data:`ANGLES`), ``noise_level`` is the std of the added complex
    Gaussian noise, and the jitter fields perturb resonance centers and
    amplitudes once per sample (session), mimicking repositioning error.
    """
    resonances: list
    angle_gains: tuple = (1.0, 1.0, 1.0)
    noise_level: float = 0.0
    center_jitter_hz: float = 0.0
    amp_jitter: float = 0.0

    def __post_init__(self):
        if len(self.angle_gains) != len(ANGLES):
            raise DataError("angle_gains must have one entry per angle")
        if self.noise_level < 0:
            raise DataError("noise level must be >= 0")
        for r in self.resonances:
            if not FREQ_START_HZ <= r.center_hz <= FREQ_STOP_HZ:
                raise DataError(
                    f"resonance center {r.center_hz:.3e} Hz outside the sweep band")
            if r.width_hz <= 0:
                raise DataError("resonance width must be > 0")


@dataclass
class Fingerprint:
    values: np.ndarray
    label: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (FINGERPRINT_LEN,):
            raise DataError(f"fingerprint must have {FINGERPRINT_LEN} values")


@dataclass
class Dataset:
    """Fingerprint matrix plus labels; rows are grouped by class, then session."""
    x: np.ndarray                  # (N, 9600) float64
    labels: np.ndarray             # (N,) int64
    num_classes: int
    samples_per_class: int
    manifest: dict = field(default_factory=dict)
    traces: list | None = None     # per sample: tuple of 3 angle-sorted Traces

    def __post_init__(self):
        if self.x.shape[0] != self.num_classes * self.samples_per_class:
            raise DataError("dataset size must equal classes x samples_per_class")

    def class_indices(self, label):
        return np.flatnonzero(self.labels == label)

    def subset_classes(self, num_classes):
        """Restrict to the lowest ``num_classes`` class indices."""
        if num_classes > self.num_classes:
            raise DataError(f"cannot take {num_classes} of {self.num_classes} classes")
        keep = self.labels < num_classes
        return Dataset(x=self.x[keep], labels=self.labels[keep],
                       num_classes=num_classes,
                       samples_per_class=self.samples_per_class,
                       manifest=dict(self.manifest, subset_classes=num_classes),
                       traces=[t for t, k in zip(self.traces, keep) if k]
                       if self.traces is not None else None)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

def _resonance_response(freqs, center, width, amplitude):
    # complex Lorentzian line: unit magnitude at the center, width sets the Q
    return amplitude * width / (width + 1j * (freqs - center))


def generate_trace(spec, angle_index, rng, jitter=None, drift=(1.0 + 0j, 0.0),
                   object_id=0, session=0):
    """One synthetic sweep for ``spec`` at the given angle.

    ``jitter`` is the per-sample draw shared by the sample's three angles:
    ``(center_shifts, amp_factors)`` arrays aligned with the resonances.
    ``drift`` is the session's ``(complex gain, frequency shift)`` shared by
    every object measured in that session, mimicking instrument drift
    between measurement days.
    """
    freqs = frequency_grid()
    values = np.zeros(TRACE_POINTS, dtype=np.complex128)
    if jitter is None:
        jitter = (np.zeros(len(spec.resonances)), np.ones(len(spec.resonances)))
    shifts, factors = jitter
    session_gain, session_shift = drift
    gain = spec.angle_gains[angle_index]
    for r, shift, factor in zip(spec.resonances, shifts, factors):
        values += gain * factor * _resonance_response(
            freqs, r.center_hz + shift + session_shift, r.width_hz, r.amplitude)
    values *= session_gain
    if spec.noise_level > 0:
        noise = rng.normal(size=TRACE_POINTS) + 1j * rng.normal(size=TRACE_POINTS)
        values += spec.noise_level * noise / np.sqrt(2.0)
    return Trace(freqs, values, object_id=object_id,
                 angle=ANGLES[angle_index], session=session)


def _draw_jitter(spec, rng):
    k = len(spec.resonances)
    shifts = spec.center_jitter_hz * rng.normal(size=k)
    factors = 1.0 + spec.amp_jitter * rng.normal(size=k)
    return shifts, factors


def generate_dataset(specs, samples_per_class, seed,
                     session_gain_std=0.0, session_phase_std=0.0,
                     session_shift_hz=0.0):
    """Deterministic synthetic dataset: one fingerprint per (class, session).

    Pure function of its arguments: the same inputs reproduce the same
    dataset bit-exactly.  The optional session parameters add per-session
    drift shared by all classes (a complex gain and a global frequency
    shift), standing in for instrument drift across measurement days; the
    k-th session of every class gets the same drift draw.
    """
    if len(specs) < 2:
        raise DataError("need at least 2 classes")
    if samples_per_class < 2:
        raise DataError("need at least 2 samples per class")
    rng = np.random.default_rng(seed)
    gains = ((1.0 + session_gain_std * rng.normal(size=samples_per_class))
             * np.exp(1j * session_phase_std * rng.normal(size=samples_per_class)))
    shifts = session_shift_hz * rng.normal(size=samples_per_class)
    fingerprints = []
    all_traces = []
    for label, spec in enumerate(specs):
        for session in range(samples_per_class):
            jitter = _draw_jitter(spec, rng)
            drift = (gains[session], shifts[session])
            triple = tuple(
                generate_trace(spec, ai, rng, jitter=jitter, drift=drift,
                               object_id=label, session=session)
                for ai in range(len(ANGLES)))
            fingerprints.append(build_fingerprint(triple, label))
            all_traces.append(triple)
    x = np.stack([fp.values for fp in fingerprints])
    labels = np.array([fp.label for fp in fingerprints], dtype=np.int64)
    manifest = {"kind": "generated", "num_classes": len(specs),
                "samples_per_class": samples_per_class, "seed": seed,
                "session_gain_std": session_gain_std,
                "session_phase_std": session_phase_std,
                "session_shift_hz": session_shift_hz}
    return Dataset(x=x, labels=labels, num_classes=len(specs),
                   samples_per_class=samples_per_class,
                   manifest=manifest, traces=all_traces)


# ---------------------------------------------------------------------------
# Fingerprints
# ---------------------------------------------------------------------------

def normalize_block(values, name="block"):
    """Zero-mean, unit-sample-std (n-1 divisor) normalization of one block."""
    values = np.asarray(values, dtype=np.float64)
    std = values.std(ddof=1)
    if std < 1e-12:
        raise DataError(f"{name}: standard deviation below 1e-12, cannot normalize")
    return (values - values.mean()) / std


def build_fingerprint(traces, label):
    """Assemble the 9,600-value fingerprint from one sample's three angle traces.

    Input order does not matter (traces are sorted by angle); each angle
    contributes its real then imaginary part, each normalized separately.
    """
    if len(traces) != len(ANGLES):
        raise DataError(f"need exactly {len(ANGLES)} traces, got {len(traces)}")
    angles = sorted(t.angle for t in traces)
    if angles != sorted(ANGLES):
        raise DataError(f"angles must be {set(ANGLES)}, got {set(angles)}")
    if len({t.object_id for t in traces}) != 1 or len({t.session for t in traces}) != 1:
        raise DataError("fingerprint traces must share object and session")
    blocks = []
    for trace in sorted(traces, key=lambda t: t.angle):
        blocks.append(normalize_block(trace.values.real, f"angle {trace.angle} real"))
        blocks.append(normalize_block(trace.values.imag, f"angle {trace.angle} imag"))
    return Fingerprint(np.concatenate(blocks), label)


# ---------------------------------------------------------------------------
# Signal strength
# ---------------------------------------------------------------------------

DEFAULT_SIGNAL_WINDOW = 100
DEFAULT_FLAT_REGION = (1400, 1500)


def background_average(traces):
    """Pointwise complex mean of empty-scene traces (the low-noise background)."""
    if not traces:
        raise DataError("need at least one background trace")
    grid = traces[0].frequencies
    for t in traces[1:]:
        if not np.array_equal(t.frequencies, grid):
            raise DataError("background traces must share the frequency grid")
    mean = np.mean([t.values for t in traces], axis=0)
    return Trace(grid, mean, object_id=-1, angle=0, session=0)


def snr_db(trace, background, signal_window=DEFAULT_SIGNAL_WINDOW,
           flat_region=DEFAULT_FLAT_REGION):
    """SNR in dB from the background-subtracted magnitude trace.

    Signal: mean of ``signal_window`` points centered on the magnitude peak.
    Noise: sample std of the points in ``flat_region`` (a feature-poor span,
    by default the high-frequency end).  Returns ``20*log10(signal/noise)``.
    """
    lo, hi = flat_region
    if not (0 <= lo < hi <= TRACE_POINTS) or signal_window > TRACE_POINTS:
        raise DataError("signal window and flat region must fit in the trace")
    mag = np.abs(trace.values - background.values)
    peak = int(np.argmax(mag))
    half = signal_window // 2
    start = min(max(peak - half, 0), TRACE_POINTS - signal_window)
    signal = mag[start:start + signal_window].mean()
    noise = mag[lo:hi].std(ddof=1)
    if noise <= 0:
        raise DataError("flat-region noise estimate is zero")
    return float(20.0 * np.log10(signal / noise))


def rrcs(traces, background):
    """Relative radar cross sections per (object, angle).

    Each trace contributes the trapezoidal integral of its background-
    subtracted magnitude over frequency; integrals are averaged per
    (object, angle) and normalized to the largest average, so values lie in
    [0, 1] with the maximum exactly 1.  Returns ``(means, per_trace)`` where
    both map (object_id, angle) keys to the normalized mean and the list of
    normalized per-trace values.
    """
    if not traces:
        raise DataError("need at least one object trace")
    grid = background.frequencies
    areas = {}
    for t in traces:
        if not np.array_equal(t.frequencies, grid):
            raise DataError("object traces must share the background grid")
        area = float(np.trapezoid(np.abs(t.values - background.values), grid))
        areas.setdefault((t.object_id, t.angle), []).append(area)
    raw_means = {k: float(np.mean(v)) for k, v in areas.items()}
    top = max(raw_means.values())
    if top <= 0:
        raise DataError("all integrated magnitudes are zero")
    means = {k: v / top for k, v in raw_means.items()}
    per_trace = {k: [a / top for a in v] for k, v in areas.items()}
    return means, per_trace


def signal_strength_table(traces, background, **snr_kwargs):
    """Per-(object, angle) SNR and rRCS summary rows.

    Returns a list of dicts with keys ``object``, ``angle``, ``snr_db_mean``,
    ``snr_db_std``, ``rrcs_mean``, ``rrcs_std``; stds are sample standard
    deviations over the repeated traces.
    """
    groups = {}
    for t in traces:
        groups.setdefault((t.object_id, t.angle), []).append(t)
    rrcs_means, rrcs_traces = rrcs(traces, background)
    rows = []
    for key in sorted(groups):
        snrs = [snr_db(t, background, **snr_kwargs) for t in groups[key]]
        vals = rrcs_traces[key]
        rows.append({
            "object": key[0], "angle": key[1],
            "snr_db_mean": float(np.mean(snrs)),
            "snr_db_std": float(np.std(snrs, ddof=1)) if len(snrs) > 1 else 0.0,
            "rrcs_mean": rrcs_means[key],
            "rrcs_std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
        })
    return rows


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def save_trace(trace, path):
    """Canonical CSV: header plus ``frequency_hz, real, imag`` rows (full precision)."""
    with open(path, "w") as fh:
        fh.write("frequency_hz,real,imag\n")
        for f, v in zip(trace.frequencies, trace.values):
            # repr of builtin floats round-trips float64 exactly
            fh.write(f"{float(f)!r},{float(v.real)!r},{float(v.imag)!r}\n")


def load_trace(path, object_id=0, angle=0, session=0):
    freqs, re, im = [], [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "frequency_hz,real,imag":
            raise DataError(f"{path}: expected header 'frequency_hz,real,imag'")
        for line_no, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != 3:
                raise DataError(f"{path}:{line_no}: expected 3 comma-separated values")
            try:
                f, r, i = (float(p) for p in parts)
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
            freqs.append(f)
            re.append(r)
            im.append(i)
    if len(freqs) != TRACE_POINTS:
        raise DataError(f"{path}: expected {TRACE_POINTS} points, got {len(freqs)}")
    values = np.array(re) + 1j * np.array(im)
    return Trace(np.array(freqs), values, object_id=object_id, angle=angle, session=session)


def save_dataset(dataset, out_dir):
    """Write per-trace CSVs plus a JSON manifest; requires retained traces."""
    if dataset.traces is None:
        raise DataError("dataset has no retained traces to save")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for triple, label in zip(dataset.traces, dataset.labels):
        for trace in triple:
            name = f"obj{trace.object_id:02d}_ang{trace.angle:02d}_s{trace.session:02d}.csv"
            save_trace(trace, os.path.join(out_dir, name))
            entries.append({"file": name, "label": int(label),
                            "object_id": trace.object_id, "angle": trace.angle,
                            "session": trace.session})
    manifest = dict(dataset.manifest)
    manifest.update({"num_classes": dataset.num_classes,
                     "samples_per_class": dataset.samples_per_class,
                     "traces": entries})
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def load_dataset(manifest_path):
    """Rebuild a Dataset from a manifest written by :func:`save_dataset`."""
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, MANIFEST_NAME)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(manifest_path)
    samples = {}
    for entry in manifest["traces"]:
        trace = load_trace(os.path.join(base, entry["file"]),
                           object_id=entry["object_id"], angle=entry["angle"],
                           session=entry["session"])
        samples.setdefault((entry["label"], entry["session"]), []).append(trace)
    fingerprints = []
    traces = []
    for (label, _session), triple in sorted(samples.items()):
        fingerprints.append(build_fingerprint(triple, label))
        traces.append(tuple(sorted(triple, key=lambda t: t.angle)))
    x = np.stack([fp.values for fp in fingerprints])
    labels = np.array([fp.label for fp in fingerprints], dtype=np.int64)
    meta = {k: v for k, v in manifest.items() if k != "traces"}
    return Dataset(x=x, labels=labels, num_classes=manifest["num_classes"],
                   samples_per_class=manifest["samples_per_class"],
                   manifest=meta, traces=traces)


# ---------------------------------------------------------------------------
# Class-spec JSON round trip (generator recipes for the CLI)
# ---------------------------------------------------------------------------

def specs_to_json(specs, samples_per_class, seed):
    return {
        "samples_per_class": samples_per_class,
        "seed": seed,
        "classes": [
            {
                "resonances": [
                    {"center_hz": r.center_hz, "width_hz": r.width_hz,
                     "amp_real": r.amplitude.real, "amp_imag": r.amplitude.imag}
                    for r in s.resonances
                ],
                "angle_gains": list(s.angle_gains),
                "noise_level": s.noise_level,
                "center_jitter_hz": s.center_jitter_hz,
                "amp_jitter": s.amp_jitter,
            }
            for s in specs
        ],
    }


def specs_from_json(obj):
    specs = [
        SyntheticClassSpec(
            resonances=[Resonance(r["center_hz"], r["width_hz"],
                                  complex(r["amp_real"], r["amp_imag"]))
                        for r in c["resonances"]],
            angle_gains=tuple(c.get("angle_gains", (1.0, 1.0, 1.0))),
            noise_level=c.get("noise_level", 0.0),
            center_jitter_hz=c.get("center_jitter_hz", 0.0),
            amp_jitter=c.get("amp_jitter", 0.0),
        )
        for c in obj["classes"]
    ]
    return specs, obj["samples_per_class"], obj["seed"]
