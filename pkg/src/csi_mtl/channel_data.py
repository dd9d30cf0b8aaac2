"""Channel data: spatial-frequency <-> angular-delay transforms, synthetic
multipath generation, normalization, and the dataset file format.

Conventions. A spatial-frequency channel H_sf is a complex (n_subcarriers,
n_tx) matrix. Its angular-delay image is A = F_d @ H_sf @ F_a^H with unitary
DFT matrices; multipath energy concentrates in the first rows of A, so only
the first n_delay rows are kept. The truncated complex matrix is stored as a
real (2, n_delay, n_tx) tensor (real plane, then imaginary plane) mapped
affinely into [0, 1].

The affine map is x = (raw - norm_offset) / norm_scale + 0.5 with offset 0
and scale the smallest power of two >= 2 * max|raw| over the dataset.
A power-of-two scale makes the division exact, so denormalization recovers
raw values to within one float32 ulp at the dataset's peak magnitude.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .errors import (
    CorruptHeaderError,
    DataError,
    InvalidArgumentError,
    ShapeMismatchError,
    TruncatedPayloadError,
)

DEFAULT_DIMS = (1024, 32, 32)  # (n_subcarriers, n_delay, n_tx)

MAGIC = "CSIDS1"
SPLITS = ("train", "val", "test")

_HEADER_KEYS = (
    "magic",
    "count",
    "n_subcarriers",
    "n_delay",
    "n_tx",
    "scenario",
    "seed",
    "norm_offset",
    "norm_scale",
    "split",
)


def _require_pow2(value, label):
    if not (isinstance(value, (int, np.integer)) and value >= 2 and (value & (value - 1)) == 0):
        raise InvalidArgumentError(f"{label} must be a power of two >= 2, got {value!r}")


def check_dims(dims):
    """Validate a (n_subcarriers, n_delay, n_tx) triple."""
    if len(dims) != 3:
        raise InvalidArgumentError(f"dims must be (n_subcarriers, n_delay, n_tx), got {dims!r}")
    n_sub, n_delay, n_tx = dims
    _require_pow2(n_sub, "n_subcarriers")
    _require_pow2(n_delay, "n_delay")
    _require_pow2(n_tx, "n_tx")
    if n_delay > n_sub:
        raise InvalidArgumentError(f"n_delay={n_delay} exceeds n_subcarriers={n_sub}")
    return int(n_sub), int(n_delay), int(n_tx)


@dataclass
class SpatialFrequencyChannel:
    matrix: np.ndarray  # complex (n_subcarriers, n_tx)

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or not np.iscomplexobj(m):
            raise InvalidArgumentError(f"matrix must be 2-D complex, got shape {m.shape}")
        _require_pow2(m.shape[0], "n_subcarriers")
        _require_pow2(m.shape[1], "n_tx")
        if not np.all(np.isfinite(m)):
            raise DataError("channel matrix contains non-finite entries")
        self.matrix = m

    @property
    def n_subcarriers(self):
        return self.matrix.shape[0]

    @property
    def n_tx(self):
        return self.matrix.shape[1]


@dataclass
class AngularDelayChannel:
    tensor: np.ndarray  # float32 (2, n_delay, n_tx), values in [0, 1]
    norm_offset: float = 0.0
    norm_scale: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.float32)
        if t.ndim != 3 or t.shape[0] != 2:
            raise InvalidArgumentError(f"tensor must have shape (2, n_delay, n_tx), got {t.shape}")
        if not (math.isfinite(self.norm_scale) and self.norm_scale > 0):
            raise DataError(f"norm_scale must be positive and finite, got {self.norm_scale!r}")
        if not math.isfinite(self.norm_offset):
            raise DataError(f"norm_offset must be finite, got {self.norm_offset!r}")
        self.tensor = t

    @property
    def n_delay(self):
        return self.tensor.shape[1]

    @property
    def n_tx(self):
        return self.tensor.shape[2]

    def raw(self):
        """Denormalized truncated complex matrix, shape (n_delay, n_tx)."""
        return denormalize(self.tensor, self.norm_offset, self.norm_scale)


@dataclass
class ScenarioConfig:
    name: str
    n_paths: int
    max_delay_taps: int
    angle_spread: float
    delay_decay: float
    seed: int

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise InvalidArgumentError("scenario name must be a non-empty string")
        if self.n_paths < 1:
            raise InvalidArgumentError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.max_delay_taps < 1:
            raise InvalidArgumentError(f"max_delay_taps must be >= 1, got {self.max_delay_taps}")
        if not 0.0 < self.angle_spread <= math.pi:
            raise InvalidArgumentError(f"angle_spread must be in (0, pi], got {self.angle_spread}")
        if self.delay_decay <= 0:
            raise InvalidArgumentError(f"delay_decay must be > 0, got {self.delay_decay}")
        if not -(2**63) <= int(self.seed) < 2**64:
            raise InvalidArgumentError(f"seed must fit in 64 bits, got {self.seed}")
        self.seed = int(self.seed) & (2**64 - 1)

    def to_dict(self):
        return {
            "name": self.name,
            "n_paths": self.n_paths,
            "max_delay_taps": self.max_delay_taps,
            "angle_spread": self.angle_spread,
            "delay_decay": self.delay_decay,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def preset(cls, name, seed=0):
        """Built-in scenarios: 'indoor' (few short taps) and 'outdoor'
        (many taps over the full delay window)."""
        if name == "indoor":
            return cls(name="indoor", n_paths=6, max_delay_taps=8,
                       angle_spread=math.pi / 2, delay_decay=3.0, seed=seed)
        if name == "outdoor":
            return cls(name="outdoor", n_paths=12, max_delay_taps=32,
                       angle_spread=math.pi, delay_decay=16.0, seed=seed)
        raise InvalidArgumentError(f"unknown scenario preset {name!r}")


@dataclass
class ChannelDataset:
    tensors: np.ndarray  # float32 (count, 2, n_delay, n_tx)
    scenario: ScenarioConfig
    split: str
    n_subcarriers: int
    norm_offset: float = 0.0
    norm_scale: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.tensors, dtype=np.float32)
        if t.ndim != 4 or t.shape[1] != 2:
            raise InvalidArgumentError(f"tensors must have shape (count, 2, n_delay, n_tx), got {t.shape}")
        if self.split not in SPLITS:
            raise InvalidArgumentError(f"split must be one of {SPLITS}, got {self.split!r}")
        self.tensors = t

    def __len__(self):
        return self.tensors.shape[0]

    def __getitem__(self, i):
        return AngularDelayChannel(self.tensors[i], self.norm_offset, self.norm_scale)

    @property
    def samples(self):
        return [self[i] for i in range(len(self))]

    @property
    def n_delay(self):
        return self.tensors.shape[2]

    @property
    def n_tx(self):
        return self.tensors.shape[3]

    def raw(self):
        """Denormalized complex samples, shape (count, n_delay, n_tx)."""
        return denormalize(self.tensors, self.norm_offset, self.norm_scale)


def dft_matrix(n):
    """Unitary DFT matrix F[j, k] = exp(-2i*pi*j*k/n) / sqrt(n)."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    jk = np.outer(np.arange(n), np.arange(n))
    return np.exp(-2j * np.pi * jk / n) / np.sqrt(n)


def _angular_image(matrix):
    """F_d @ H @ F_a^H via FFTs (unitary scaling), preserving input precision."""
    n_sub, n_tx = matrix.shape[-2], matrix.shape[-1]
    out = scipy.fft.fft(matrix, axis=-2) / np.sqrt(n_sub)
    return scipy.fft.ifft(out, axis=-1) * np.sqrt(n_tx)


def _spatial_image(matrix):
    """F_d^H @ A @ F_a, inverse of _angular_image."""
    n_sub, n_tx = matrix.shape[-2], matrix.shape[-1]
    out = scipy.fft.ifft(matrix, axis=-2) * np.sqrt(n_sub)
    return scipy.fft.fft(out, axis=-1) / np.sqrt(n_tx)


def normalize(raw, norm_offset, norm_scale):
    """Complex (..., n_delay, n_tx) -> float32 (..., 2, n_delay, n_tx) in [0, 1]."""
    re = (raw.real - norm_offset) / norm_scale + 0.5
    im = (raw.imag - norm_offset) / norm_scale + 0.5
    return np.stack([re, im], axis=-3).astype(np.float32)


def denormalize(tensor, norm_offset, norm_scale):
    """Inverse of normalize: (x - 0.5) * norm_scale + norm_offset, recombined."""
    t = np.asarray(tensor)
    re = (t[..., 0, :, :] - np.float32(0.5)) * np.float32(norm_scale) + np.float32(norm_offset)
    im = (t[..., 1, :, :] - np.float32(0.5)) * np.float32(norm_scale) + np.float32(norm_offset)
    return re + 1j * im


def norm_scale_for(max_abs):
    """Smallest power of two >= 2*max_abs (1.0 for an all-zero input)."""
    m = float(max_abs)
    if not math.isfinite(m) or m < 0:
        raise InvalidArgumentError(f"max_abs must be finite and >= 0, got {max_abs!r}")
    if m == 0.0:
        return 1.0
    scale = 2.0 ** math.ceil(math.log2(2.0 * m))
    while scale < 2.0 * m:  # guard against log2 round-down at exact powers
        scale *= 2.0
    while scale >= 4.0 * m:
        scale /= 2.0
    return scale


def to_angular_delay(h, n_delay, norm_offset=0.0, norm_scale=None):
    """Transform, truncate to the first n_delay rows, and normalize.

    norm_scale None means self-scaling (single-sample use); dataset builders
    pass the shared split-level scale instead.
    """
    if not isinstance(h, SpatialFrequencyChannel):
        h = SpatialFrequencyChannel(np.asarray(h))
    if n_delay > h.n_subcarriers:
        raise InvalidArgumentError(f"n_delay={n_delay} exceeds n_subcarriers={h.n_subcarriers}")
    raw = _angular_image(h.matrix)[:n_delay].astype(np.complex64)
    if norm_scale is None:
        norm_scale = norm_scale_for(np.max(np.abs(raw - complex(norm_offset, norm_offset))))
    return AngularDelayChannel(normalize(raw, norm_offset, norm_scale), float(norm_offset), float(norm_scale))


def from_angular_delay(h, n_subcarriers):
    """Denormalize, zero-pad rows n_delay..n_subcarriers-1, invert the transform."""
    if not isinstance(h, AngularDelayChannel):
        raise InvalidArgumentError(f"expected AngularDelayChannel, got {type(h).__name__}")
    if n_subcarriers < h.n_delay:
        raise InvalidArgumentError(f"n_subcarriers={n_subcarriers} below n_delay={h.n_delay}")
    _require_pow2(n_subcarriers, "n_subcarriers")
    raw = h.raw()
    full = np.zeros((n_subcarriers, h.n_tx), dtype=raw.dtype)
    full[: h.n_delay] = raw
    return SpatialFrequencyChannel(_spatial_image(full))


_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


def sample_rng(seed, split, index):
    """Independent per-sample stream; allows per-sample parallel generation."""
    return np.random.default_rng((seed, _SPLIT_CODES[split], index))


def generate_spatial_channel(cfg, dims, rng, dtype=np.complex64):
    """One multipath draw: sum of n_paths outer(delay ramp, steering row).

    Path delays are integer taps < max_delay_taps, so the angular-delay image
    concentrates in the first max_delay_taps rows and truncation to n_delay
    rows loses only transform round-off. The sum is accumulated in complex128
    and rounded once to dtype.
    """
    n_sub, n_delay, n_tx = check_dims(dims)
    if cfg.max_delay_taps > n_delay:
        raise InvalidArgumentError(
            f"max_delay_taps={cfg.max_delay_taps} exceeds n_delay={n_delay}; truncation would discard paths"
        )
    num = cfg.n_paths
    taps = rng.integers(0, cfg.max_delay_taps, size=num)
    center = rng.uniform(-np.pi / 2, np.pi / 2)
    angles = center + rng.uniform(-cfg.angle_spread / 2, cfg.angle_spread / 2, size=num)
    gains = (rng.standard_normal(num) + 1j * rng.standard_normal(num)) / np.sqrt(2)
    gains = gains * np.exp(-taps / (2.0 * cfg.delay_decay))
    # delay signature across subcarriers: exp(+2i*pi*n*tap/n_sub) puts the
    # angular-delay spike exactly at row `tap`
    ramps = np.exp(2j * np.pi * np.outer(np.arange(n_sub), taps) / n_sub)
    steer = np.exp(1j * np.pi * np.outer(np.sin(angles), np.arange(n_tx)))
    return SpatialFrequencyChannel((ramps @ (gains[:, None] * steer)).astype(dtype))


def _raw_truncated(cfg, count, dims, split):
    n_sub, n_delay, n_tx = check_dims(dims)
    out = np.empty((count, n_delay, n_tx), dtype=np.complex64)
    for i in range(count):
        h = generate_spatial_channel(cfg, dims, sample_rng(cfg.seed, split, i))
        out[i] = _angular_image(h.matrix)[:n_delay]
    return out


def generate_dataset(cfg, count, dims=DEFAULT_DIMS, split="train", norm_scale=None):
    """Synthesize `count` channels for one scenario split.

    Deterministic: sample i depends only on (cfg.seed, split, i). norm_scale
    None self-scales from this split's peak magnitude.
    """
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    if split not in SPLITS:
        raise InvalidArgumentError(f"split must be one of {SPLITS}, got {split!r}")
    raw = _raw_truncated(cfg, count, dims, split)
    if norm_scale is None:
        norm_scale = norm_scale_for(np.max(np.abs(raw)))
    tensors = normalize(raw, 0.0, norm_scale)
    meta = {"seed": cfg.seed, "count": count, "norm_offset": 0.0, "norm_scale": norm_scale}
    return ChannelDataset(tensors, cfg, split, dims[0], 0.0, float(norm_scale), meta)


def generate_split_datasets(cfg, counts, dims=DEFAULT_DIMS):
    """Generate several splits that share one normalization scale (the scale
    is taken over all splits so every tensor stays inside [0, 1])."""
    raws = {s: _raw_truncated(cfg, c, dims, s) for s, c in counts.items() if c >= 1}
    if len(raws) != len(counts):
        raise InvalidArgumentError(f"all split counts must be >= 1, got {counts!r}")
    scale = norm_scale_for(max(float(np.max(np.abs(r))) for r in raws.values()))
    return {s: generate_dataset(cfg, counts[s], dims, s, norm_scale=scale) for s in raws}


def save_dataset(ds, path):
    """Header line (JSON + newline) followed by the float32 LE payload."""
    header = {
        "magic": MAGIC,
        "count": len(ds),
        "n_subcarriers": int(ds.n_subcarriers),
        "n_delay": int(ds.n_delay),
        "n_tx": int(ds.n_tx),
        "scenario": ds.scenario.name,
        "seed": int(ds.scenario.seed),
        "norm_offset": float(ds.norm_offset),
        "norm_scale": float(ds.norm_scale),
        "split": ds.split,
        "scenario_params": ds.scenario.to_dict(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    with open(path, "wb") as f:
        f.write(blob)
        f.write(np.ascontiguousarray(ds.tensors, dtype="<f4").tobytes())


def load_dataset(path):
    with open(path, "rb") as f:
        line = f.readline()
        payload = f.read()
    if not line.endswith(b"\n"):
        raise CorruptHeaderError(f"{path}: header line is not newline-terminated")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptHeaderError(f"{path}: header is not valid JSON: {e}") from e
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic {header.get('magic')!r}" if isinstance(header, dict)
                                 else f"{path}: header is not a JSON object")
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise CorruptHeaderError(f"{path}: header missing keys {missing}")

    count, n_delay, n_tx = header["count"], header["n_delay"], header["n_tx"]
    n_sub = header["n_subcarriers"]
    for label, v in (("count", count), ("n_delay", n_delay), ("n_tx", n_tx), ("n_subcarriers", n_sub)):
        if not isinstance(v, int) or v < 1:
            raise ShapeMismatchError(f"{path}: header {label}={v!r} is not a positive integer")
    if n_delay > n_sub:
        raise ShapeMismatchError(f"{path}: n_delay={n_delay} exceeds n_subcarriers={n_sub}")

    expected = count * 2 * n_delay * n_tx * 4
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    if len(payload) > expected:
        raise ShapeMismatchError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")

    tensors = np.frombuffer(payload, dtype="<f4").reshape(count, 2, n_delay, n_tx).copy()
    params = header.get("scenario_params")
    if isinstance(params, dict):
        scenario = ScenarioConfig.from_dict(params)
    else:
        scenario = ScenarioConfig(header["scenario"], 1, 1, math.pi, 1.0, header["seed"])
    meta = {"seed": header["seed"], "count": count,
            "norm_offset": header["norm_offset"], "norm_scale": header["norm_scale"]}
    return ChannelDataset(tensors, scenario, header["split"], n_sub,
                          float(header["norm_offset"]), float(header["norm_scale"]), meta)
