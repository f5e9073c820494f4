"""One-shot self-supervised channel denoising.

The noisy least-squares estimate is the only training sample.  Every
iteration draws a fresh Bernoulli mask that splits the estimate into a
network input (kept entries) and a training label support (blinded
entries); a partial-convolution U-Net is trained to predict the blinded
entries from their neighbours, which suppresses spatially independent
noise while preserving the spatially correlated channel.  Prediction
averages many dropout- and mask-perturbed passes of the trained network.
"""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    concat_channels,
    conv2d,
    dropout,
    masked_sq_error,
    maxpool2,
    pconv2d,
    relu,
    upsample_nearest2,
)
from .estimators import ls_estimate, nmse
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)

__all__ = [
    "BernoulliMask",
    "UNetConfig",
    "DenoiserConfig",
    "UNetParams",
    "DenoiseReport",
    "TrainResult",
    "complex_to_channels",
    "channels_to_complex",
    "bernoulli_sample",
    "standardize",
    "destandardize",
    "init_unet",
    "unet_forward",
    "s2s_loss",
    "train",
    "ensemble_term",
    "predict_ensemble",
    "denoise",
    "save_params",
    "load_params",
    "params_from_arrays",
    "save_loss_trace",
    "load_loss_trace",
]

_MAX_MASK_RESAMPLES = 1000


@dataclass(frozen=True)
class BernoulliMask:
    """Binary keep-mask over the complex channel entries."""

    matrix: np.ndarray
    keep_prob: float


@dataclass(frozen=True)
class UNetConfig:
    """Architecture of the denoising network.

    ``depth`` contracting stages (partial conv + ReLU + 2x2 max pool) narrow
    the input to a base_width feature map of 1/2^depth the spatial size;
    ``depth`` expansive blocks (nearest upsample, skip concatenation, two
    3x3 convolutions) restore it.  Dropout sits after every expansive
    convolution except the output layer.
    """

    depth: int = 5
    in_channels: int = 2
    base_width: int = 48
    expand_width: int = 96
    kernel_size: int = 3
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.in_channels < 1 or self.base_width < 1 or self.expand_width < 1:
            raise ValueError("channel widths must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


@dataclass(frozen=True)
class DenoiserConfig:
    """Training and prediction hyperparameters."""

    p_drop: float = 0.3
    iterations: int = 500
    ensemble: int = 50
    learning_rate: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p_drop < 1.0:
            raise ValueError("p_drop must lie strictly inside (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.ensemble < 1:
            raise ValueError("ensemble size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class UNetParams:
    """Convolution kernels and biases in canonical layer order."""

    kernels: list[Tensor]
    biases: list[Tensor]

    def tensors(self) -> list[Tensor]:
        out = []
        for k, b in zip(self.kernels, self.biases):
            out.append(k)
            out.append(b)
        return out

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors()]


@dataclass
class TrainResult:
    params: UNetParams
    loss_trace: np.ndarray


@dataclass
class DenoiseReport:
    loss_trace: np.ndarray
    train_seconds: float
    predict_seconds: float
    input_nmse: float | None = None
    output_nmse: float | None = None


def complex_to_channels(matrix: np.ndarray) -> Tensor:
    """Complex (H, W) matrix -> real (1, 2, H, W) tensor: [real, imag]."""
    m = np.asarray(matrix)
    return Tensor(np.stack([m.real, m.imag])[None])


def channels_to_complex(t: Tensor | np.ndarray) -> np.ndarray:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if data.ndim != 4 or data.shape[0] != 1 or data.shape[1] != 2:
        raise ValueError(f"expected shape (1, 2, H, W), got {data.shape}")
    return data[0, 0] + 1j * data[0, 1]


def bernoulli_sample(noisy: np.ndarray, p_drop: float, rng: np.random.Generator
                     ) -> tuple[np.ndarray, np.ndarray, BernoulliMask]:
    """Split the noisy channel into kept (input) and blinded (label) parts.

    Each complex entry is kept with probability 1 - p_drop; one mask entry
    covers both the real and imaginary component.  Degenerate all-kept or
    all-blinded draws are resampled so both parts stay non-empty.
    """
    if not 0.0 < p_drop < 1.0:
        raise ValueError("p_drop must lie strictly inside (0, 1)")
    for attempt in range(_MAX_MASK_RESAMPLES):
        b = (rng.random(noisy.shape) >= p_drop).astype(np.float64)
        total = b.sum()
        if 0 < total < b.size:
            break
        logger.info("resampling degenerate Bernoulli mask (attempt %d)", attempt + 1)
    else:
        raise RuntimeError(f"no non-degenerate mask after {_MAX_MASK_RESAMPLES} draws")
    kept = b * noisy
    blinded = (1.0 - b) * noisy
    return kept, blinded, BernoulliMask(b, 1.0 - p_drop)


def standardize(matrix: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Zero-mean unit-std rescaling over the pooled real and imaginary parts."""
    parts = np.concatenate([matrix.real.ravel(), matrix.imag.ravel()])
    mu = float(parts.mean())
    sigma = float(parts.std())
    if sigma < 1e-300:
        sigma = 1.0
    return (matrix - mu * (1.0 + 1.0j)) / sigma, mu, sigma


def destandardize(matrix: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return matrix * sigma + mu * (1.0 + 1.0j)


def _layer_shapes(cfg: UNetConfig) -> list[tuple[int, int]]:
    """(C_in, C_out) per convolution in canonical order: contracting then expansive."""
    shapes = [(cfg.in_channels, cfg.base_width)]
    shapes += [(cfg.base_width, cfg.base_width)] * (cfg.depth - 1)
    for block in range(cfg.depth):
        c_in = 2 * cfg.base_width if block == 0 else cfg.expand_width + cfg.base_width
        shapes.append((c_in, cfg.expand_width))
        c_out = cfg.expand_width if block < cfg.depth - 1 else cfg.in_channels
        shapes.append((cfg.expand_width, c_out))
    return shapes


def init_unet(cfg: UNetConfig, rng: np.random.Generator) -> UNetParams:
    """Kaiming-uniform fan-in initialization, fully determined by the rng."""
    k = cfg.kernel_size
    kernels, biases = [], []
    for c_in, c_out in _layer_shapes(cfg):
        fan_in = c_in * k * k
        bound = np.sqrt(6.0 / fan_in)
        kernels.append(Tensor(rng.uniform(-bound, bound, (c_out, c_in, k, k)),
                              requires_grad=True))
        biases.append(Tensor(rng.uniform(-1.0, 1.0, c_out) / np.sqrt(fan_in),
                             requires_grad=True))
    return UNetParams(kernels, biases)


def unet_forward(x: Tensor, mask: Tensor, params: UNetParams, cfg: UNetConfig,
                 dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Forward pass; supply ``dropout_rng`` to activate expansive-path dropout."""
    n, c, h, w = x.data.shape
    step = 2 ** cfg.depth
    if h % step or w % step:
        raise ValueError(f"spatial dims {h}x{w} must be divisible by 2^depth = {step}")
    if c != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels} input channels, got {c}")
    pad = cfg.kernel_size // 2

    idx = 0
    skips = []
    feat, m = x, mask
    for _ in range(cfg.depth):
        feat, m = pconv2d(feat, m, params.kernels[idx], params.biases[idx], pad)
        feat = relu(feat)
        idx += 1
        skips.append(feat)
        feat = maxpool2(feat)
        m = maxpool2(m)

    for block in range(cfg.depth):
        feat = upsample_nearest2(feat)
        feat = concat_channels(feat, skips[cfg.depth - 1 - block])
        feat = relu(conv2d(feat, params.kernels[idx], params.biases[idx], pad))
        if dropout_rng is not None:
            feat = dropout(feat, cfg.dropout_rate, dropout_rng)
        idx += 1
        feat = conv2d(feat, params.kernels[idx], params.biases[idx], pad)
        if block < cfg.depth - 1:
            feat = relu(feat)
            if dropout_rng is not None:
                feat = dropout(feat, cfg.dropout_rate, dropout_rng)
        idx += 1
    return feat


def _mask_tensor(mask2d: np.ndarray) -> Tensor:
    return Tensor(mask2d[None, None])


def _blind_weight(mask2d: np.ndarray) -> Tensor:
    # one complex entry blinds both real and imaginary channels
    w = 1.0 - mask2d
    return Tensor(np.stack([w, w])[None])


def s2s_loss(params: UNetParams, noisy: np.ndarray, mask: BernoulliMask,
             cfg: UNetConfig, dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Blind-spot loss: squared error of the prediction on the blinded entries only.

    The network sees only the kept part of ``noisy``; on the blinded support
    the target equals the blinded part, so no entry's own value can leak
    into its prediction.
    """
    kept = mask.matrix * noisy
    pred = unet_forward(complex_to_channels(kept), _mask_tensor(mask.matrix),
                        params, cfg, dropout_rng)
    return masked_sq_error(pred, complex_to_channels(noisy), _blind_weight(mask.matrix))


def _rng_streams(seed: int) -> dict[str, np.random.Generator]:
    init_ss, mask_ss, drop_ss, predict_ss = np.random.SeedSequence(seed).spawn(4)
    return {
        "init": np.random.default_rng(init_ss),
        "mask": np.random.default_rng(mask_ss),
        "dropout": np.random.default_rng(drop_ss),
        "predict": np.random.default_rng(predict_ss),
    }


def train(noisy: np.ndarray, unet_cfg: UNetConfig, den_cfg: DenoiserConfig) -> TrainResult:
    """Fit the network to the single noisy estimate by iterated masked regression.

    The input is standardized before training (prediction undoes it); each
    iteration draws a fresh Bernoulli mask and fresh dropout masks, then
    takes one Adam step on the blind-spot loss.  There is no early stopping.
    """
    streams = _rng_streams(den_cfg.seed)
    params = init_unet(unet_cfg, streams["init"])
    if den_cfg.iterations == 0:
        return TrainResult(params, np.zeros(0))

    std_noisy, _, _ = standardize(noisy)
    tensors = params.tensors()
    state = AdamState.for_params(tensors, learning_rate=den_cfg.learning_rate)
    trace = np.empty(den_cfg.iterations)
    for it in range(den_cfg.iterations):
        _, _, mask = bernoulli_sample(std_noisy, den_cfg.p_drop, streams["mask"])
        loss = s2s_loss(params, std_noisy, mask, unet_cfg, streams["dropout"])
        value = float(loss.data)
        if not np.isfinite(value):
            raise RuntimeError(f"training diverged at iteration {it + 1}: loss={value}")
        trace[it] = value
        loss.backward()
        grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
        adam_step(tensors, grads, state)
        for t in tensors:
            t.zero_grad()
    return TrainResult(params, trace)


def ensemble_term(params: UNetParams, std_noisy: np.ndarray, mask2d: np.ndarray,
                  cfg: UNetConfig, dropout_rng: np.random.Generator | None,
                  mu: float, sigma: float) -> np.ndarray:
    """One prediction-ensemble member: masked forward pass, de-standardized."""
    kept = mask2d * std_noisy
    out = unet_forward(complex_to_channels(kept), _mask_tensor(mask2d), params,
                       cfg, dropout_rng)
    return destandardize(channels_to_complex(out), mu, sigma)


def predict_ensemble(params: UNetParams, noisy: np.ndarray, unet_cfg: UNetConfig,
                     den_cfg: DenoiserConfig, rng: np.random.Generator) -> np.ndarray:
    """Average ``ensemble`` dropout- and mask-perturbed predictions.

    Terms are accumulated in draw order so the result is bit-reproducible
    for a fixed rng stream.
    """
    if den_cfg.ensemble < 1:
        raise ValueError("ensemble size must be at least 1")
    std_noisy, mu, sigma = standardize(noisy)
    acc = np.zeros(noisy.shape, dtype=complex)
    for _ in range(den_cfg.ensemble):
        _, _, mask = bernoulli_sample(std_noisy, den_cfg.p_drop, rng)
        acc += ensemble_term(params, std_noisy, mask.matrix, unet_cfg, rng, mu, sigma)
    return acc / den_cfg.ensemble


def denoise(received: np.ndarray, pilots: np.ndarray, unet_cfg: UNetConfig,
            den_cfg: DenoiserConfig, true_channel: np.ndarray | None = None
            ) -> tuple[np.ndarray, DenoiseReport]:
    """Full pipeline: LS estimate, one-shot training, ensemble prediction."""
    noisy = ls_estimate(received, pilots)
    t0 = time.perf_counter()
    result = train(noisy, unet_cfg, den_cfg)
    t1 = time.perf_counter()
    estimate = predict_ensemble(result.params, noisy, unet_cfg, den_cfg,
                                _rng_streams(den_cfg.seed)["predict"])
    t2 = time.perf_counter()
    report = DenoiseReport(result.loss_trace, t1 - t0, t2 - t1)
    if true_channel is not None:
        report.input_nmse = nmse(noisy, true_channel)
        report.output_nmse = nmse(estimate, true_channel)
    return estimate, report


_MAGIC = b"S2SC"
_VERSION = 1


def save_params(params: UNetParams, path) -> None:
    """Write parameters as flat little-endian records: magic, version, count,
    then per tensor a u32 rank, u32 dims and float64 data."""
    arrays = params.arrays()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(arrays)))
        for arr in arrays:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> list[np.ndarray]:
    """Read back the flat records written by :func:`save_params`."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a serialized parameter file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported parameter file version {version}")
        arrays = []
        for _ in range(count):
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            arrays.append(data.astype(np.float64))
    return arrays


def params_from_arrays(cfg: UNetConfig, arrays: list[np.ndarray]) -> UNetParams:
    """Rebuild a parameter set, validating every shape against the config."""
    shapes = _layer_shapes(cfg)
    if len(arrays) != 2 * len(shapes):
        raise ValueError(f"expected {2 * len(shapes)} tensors, got {len(arrays)}")
    k = cfg.kernel_size
    kernels, biases = [], []
    for i, (c_in, c_out) in enumerate(shapes):
        kern, bias = arrays[2 * i], arrays[2 * i + 1]
        if kern.shape != (c_out, c_in, k, k):
            raise ValueError(f"layer {i}: kernel shape {kern.shape} != {(c_out, c_in, k, k)}")
        if bias.shape != (c_out,):
            raise ValueError(f"layer {i}: bias shape {bias.shape} != {(c_out,)}")
        kernels.append(Tensor(kern, requires_grad=True))
        biases.append(Tensor(bias, requires_grad=True))
    return UNetParams(kernels, biases)


def save_loss_trace(trace: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write("iter,loss\n")
        for i, v in enumerate(trace, start=1):
            fh.write(f"{i},{v:.17g}\n")


def load_loss_trace(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "iter,loss":
            raise ValueError(f"unexpected loss-trace header {header!r}")
        return np.array([float(line.split(",")[1]) for line in fh if line.strip()])
