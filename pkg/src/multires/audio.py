"""Waveform type, 16 kHz PCM WAV I/O, manifests, and synthetic utterances."""

from __future__ import annotations

import os
import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError

SAMPLE_RATE = 16000


@dataclass
class Waveform:
    samples: np.ndarray  # 1-D float array in [-1, 1]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]


def read_wav(path: str) -> Waveform:
    """Read a mono 16-bit linear-PCM RIFF file at 16 kHz."""
    with wave.open(path, "rb") as wf:
        if wf.getnchannels() != 1:
            raise FormatError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise FormatError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        if wf.getcomptype() != "NONE":
            raise FormatError(f"{path}: expected linear PCM, got {wf.getcomptype()}")
        if wf.getframerate() != SAMPLE_RATE:
            raise FormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {wf.getframerate()}")
        raw = wf.readframes(wf.getnframes())
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0)


def write_wav(path: str, waveform: Waveform) -> None:
    clipped = np.clip(waveform.samples, -1.0, 1.0)
    ints = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(path, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate)
        wf.writeframes(ints.tobytes())


@dataclass
class ManifestEntry:
    utt_id: str
    path: str
    num_samples: int


def write_manifest(path: str, entries: list[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("utt_id\tpath\tnum_samples\n")
        for e in entries:
            fh.write(f"{e.utt_id}\t{e.path}\t{e.num_samples}\n")


def read_manifest(path: str, check_files: bool = True) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    base = os.path.dirname(os.path.abspath(path))
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.split("\t") != ["utt_id", "path", "num_samples"]:
            raise FormatError(f"{path}: bad manifest header {header!r}")
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            utt_id, rel, n = parts[0], parts[1], int(parts[2])
            if utt_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate utterance id {utt_id!r}")
            seen.add(utt_id)
            audio_path = rel if os.path.isabs(rel) else os.path.join(base, rel)
            if check_files:
                if not os.path.exists(audio_path):
                    raise DataError(f"manifest entry {utt_id!r}: missing file {audio_path}")
                actual = read_wav(audio_path).num_samples
                if actual != n:
                    raise DataError(
                        f"manifest entry {utt_id!r}: listed {n} samples, file has {actual}")
            entries.append(ManifestEntry(utt_id, audio_path, n))
    return entries


def synth_utterance(rng: np.random.Generator, num_samples: int) -> np.ndarray:
    """One deterministic synthetic utterance: filtered-noise walk plus chirps."""
    from scipy.signal import lfilter

    t = np.arange(num_samples) / SAMPLE_RATE
    # Random-walk noise, leaky-integrated so it stays bounded, then high-passed
    # by first differences mixed back in for broadband content.
    steps = rng.standard_normal(num_samples)
    walk = lfilter([0.1], [1.0, -0.995], steps)
    broadband = 0.6 * walk + 0.4 * np.concatenate([[0.0], np.diff(walk)]) * 10.0
    # Two chirps with utterance-specific parameters.
    signal = broadband
    for _ in range(2):
        f0 = rng.uniform(80.0, 600.0)
        rate = rng.uniform(-200.0, 400.0)
        amp = rng.uniform(0.2, 0.8)
        phase = rng.uniform(0.0, 2 * np.pi)
        signal = signal + amp * np.sin(2 * np.pi * (f0 * t + 0.5 * rate * t * t) + phase)
    # Slow amplitude envelope so utterances are non-stationary.
    env = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.3, 2.0) * t + rng.uniform(0, 2 * np.pi))
    signal = signal * (0.3 + 0.7 * env)
    peak = np.max(np.abs(signal))
    if peak > 0:
        signal = signal / peak * 0.7
    return signal


def synth_dataset(n_utts: int, min_seconds: float, max_seconds: float, seed: int,
                  out_dir: str) -> list[ManifestEntry]:
    """Write n deterministic WAV utterances plus a manifest; returns the entries."""
    if n_utts < 1:
        raise DataError(f"need at least 1 utterance, got {n_utts}")
    if not (0 < min_seconds <= max_seconds):
        raise DataError(f"bad duration range [{min_seconds}, {max_seconds}]")
    os.makedirs(out_dir, exist_ok=True)
    relative: list[ManifestEntry] = []
    entries: list[ManifestEntry] = []
    for i in range(n_utts):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        seconds = rng.uniform(min_seconds, max_seconds)
        num_samples = int(round(seconds * SAMPLE_RATE))
        samples = synth_utterance(rng, num_samples)
        name = f"utt{i:04d}.wav"
        full = os.path.join(out_dir, name)
        write_wav(full, Waveform(samples))
        relative.append(ManifestEntry(f"utt{i:04d}", name, num_samples))
        entries.append(ManifestEntry(f"utt{i:04d}", full, num_samples))
    write_manifest(os.path.join(out_dir, "manifest.tsv"), relative)
    return entries
