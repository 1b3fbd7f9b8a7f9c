"""Embedding backends.

The production backend wraps the frozen pretrained audio transformer
checkpoint (eval mode, no fine-tuning) and needs its optional dependencies
plus locally available weights.  The mel-projection backend is a
deterministic DSP stand-in with the same frame geometry and output width,
used for conformance testing and offline development; it makes no claim of
matching the transformer's feature values.
"""

from __future__ import annotations

import numpy as np

from .audio import TARGET_RATE
from .errors import BackendUnavailable, CompatibilityError

EXPECTED_DIM = 1295
HOP_SAMPLES = 512
WINDOW_SAMPLES = 1024
MEL_BANDS = 128
PASST_CHECKPOINT = "passt_s_swa_p16_128_ap476"
_PROJECTION_SEED = 0xBEE5


class PasstBackend:
    """Frozen pretrained transformer; timestamp embeddings at hop 512.

    Wraps the checkpoint's own timestamp-embedding surface; the hop is
    requested in milliseconds (512 samples at the working rate).  The
    checkpoint's internal preprocessing is taken as ground truth.
    """

    name = f"passt:{PASST_CHECKPOINT}"

    def __init__(self):
        try:
            import torch
            from hear21passt.base import get_timestamp_embeddings, load_model
        except ImportError as exc:
            raise BackendUnavailable(
                "hear21passt/torch not installed; install the [passt] extra "
                "or use the mel-projection backend"
            ) from exc
        self._torch = torch
        self._get_timestamp_embeddings = get_timestamp_embeddings
        try:
            self._model = load_model(mode="all")  # 768-dim embedding + 527 logits
        except Exception as exc:  # weights download/load failure
            raise BackendUnavailable(f"cannot load checkpoint {PASST_CHECKPOINT}: {exc}") from exc
        self._model.eval()
        if hasattr(self._model, "timestamp_hop"):
            self._model.timestamp_hop = HOP_SAMPLES * 1000.0 / TARGET_RATE

    def embed(self, samples: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            audio = torch.from_numpy(samples.astype(np.float32))[None, :]
            embeddings, _ = self._get_timestamp_embeddings(audio, self._model)
        out = embeddings.squeeze(0).cpu().numpy().astype(np.float32)
        if out.ndim != 2 or out.shape[1] != EXPECTED_DIM:
            raise CompatibilityError(
                f"checkpoint produced dim {out.shape[-1]}, expected {EXPECTED_DIM}"
            )
        return out


class MelProjectionBackend:
    """Deterministic stand-in: log-mel frames projected to the target width.

    Centered frames every HOP_SAMPLES with a Hann window, a triangular
    mel-style filterbank, then a fixed seeded linear expansion to
    EXPECTED_DIM.  Two runs over identical audio yield identical bytes.
    """

    name = "mel-projection"

    def __init__(self):
        self._window = np.hanning(WINDOW_SAMPLES)
        self._filterbank = _triangular_filterbank(
            MEL_BANDS, WINDOW_SAMPLES // 2 + 1, TARGET_RATE
        )
        rng = np.random.Generator(np.random.Philox(key=_PROJECTION_SEED))
        self._projection = rng.normal(
            scale=1.0 / np.sqrt(MEL_BANDS), size=(MEL_BANDS, EXPECTED_DIM)
        )

    def embed(self, samples: np.ndarray) -> np.ndarray:
        half = WINDOW_SAMPLES // 2
        padded = np.pad(samples, (half, half))
        n_frames = 1 + len(samples) // HOP_SAMPLES
        spectra = np.empty((n_frames, half + 1))
        for i in range(n_frames):
            frame = padded[i * HOP_SAMPLES:i * HOP_SAMPLES + WINDOW_SAMPLES]
            if len(frame) < WINDOW_SAMPLES:
                frame = np.pad(frame, (0, WINDOW_SAMPLES - len(frame)))
            spectrum = np.fft.rfft(frame * self._window)
            spectra[i] = np.abs(spectrum) ** 2
        mel = np.log(spectra @ self._filterbank.T + 1e-10)
        return (mel @ self._projection).astype(np.float32)


def _triangular_filterbank(n_bands: int, n_bins: int, rate: float) -> np.ndarray:
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2.0), n_bands + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.floor((n_bins - 1) * 2.0 * hz_points / rate).astype(int)
    bank = np.zeros((n_bands, n_bins))
    for b in range(n_bands):
        left, center, right = bins[b], bins[b + 1], bins[b + 2]
        center = max(center, left + 1)
        right = max(right, center + 1)
        for i in range(left, min(center, n_bins)):
            bank[b, i] = (i - left) / (center - left)
        for i in range(center, min(right, n_bins)):
            bank[b, i] = (right - i) / (right - center)
    return bank


BACKENDS = {
    "passt": PasstBackend,
    "mel-projection": MelProjectionBackend,
}


def make_backend(name: str):
    if name not in BACKENDS:
        raise BackendUnavailable(f"unknown backend {name!r}; choices: {sorted(BACKENDS)}")
    return BACKENDS[name]()
