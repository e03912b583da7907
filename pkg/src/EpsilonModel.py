import json
from dataclasses import dataclass, asdict, field
from typing import Dict, List, Tuple

import numpy as np

from DiffusionUtil import time_embedding_batch
from Util import setup_logger
from numerics import ops
from numerics.tensor import Tensor, ShapeError

CHECKPOINT_MAGIC = 'LMD-CHECKPOINT'
CHECKPOINT_VERSION = 1
logger = setup_logger('EpsilonModel')


@dataclass
class ModelArchitecture:
    channels: int = 1
    height: int = 16
    width: int = 16
    widths: List[int] = field(default_factory=lambda: [16, 32, 32, 16])
    time_dim: int = 32
    kernel: int = 3

    @property
    def downsample(self) -> bool:
        # the half-resolution middle only exists when 2×2 pooling divides the image
        return self.height % 2 == 0 and self.width % 2 == 0

    def validate(self):
        if len(self.widths) != 4 or any(w <= 0 for w in self.widths):
            raise ValueError(f"model.widths needs four positive widths, got {self.widths}")
        if self.time_dim <= 0 or self.time_dim % 2:
            raise ValueError(f"model.time_dim must be a positive even number, got {self.time_dim}")
        if self.kernel % 2 == 0:
            raise ValueError(f"model.kernel must be odd, got {self.kernel}")
        if min(self.channels, self.height, self.width) <= 0:
            raise ValueError(f"image shape ({self.channels}, {self.height}, {self.width}) must be positive")

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return self.channels, self.height, self.width


class EpsilonModel:
    """
    Noise-prediction network ε_θ(x_t, t).

    Four conv blocks (conv, plus a learned affine of the time embedding added per channel, then SiLU):
    block 1 at full resolution, blocks 2-3 after 2×2 mean pooling, block 4 back at full resolution on the
    upsampled features concatenated with block 1's output. A final conv maps back to the image channels.
    """

    BLOCKS = ('block1', 'block2', 'block3', 'block4')

    def __init__(self, architecture: ModelArchitecture, seed: int = 0):
        architecture.validate()
        self.architecture = architecture
        self.seed = seed
        self.params: Dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    def _block_channels(self) -> List[Tuple[int, int]]:
        a = self.architecture
        w1, w2, w3, w4 = a.widths
        return [(a.channels, w1), (w1, w2), (w2, w3), (w3 + w1, w4)]

    def _add_param(self, name: str, value: np.ndarray):
        self.params[name] = Tensor(value.astype(np.float32), requires_grad=True, name=name)

    def _init_params(self, rng: np.random.Generator):
        a = self.architecture
        k = a.kernel
        for block, (c_in, c_out) in zip(self.BLOCKS, self._block_channels()):
            self._add_param(f'{block}.conv.w', rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / (c_in * k * k)))
            self._add_param(f'{block}.conv.b', np.zeros(c_out))
            self._add_param(f'{block}.time.w', rng.standard_normal((a.time_dim, c_out)) * np.sqrt(1.0 / a.time_dim))
            self._add_param(f'{block}.time.b', np.zeros(c_out))
        c_in = a.widths[3]
        # small output weights keep the first predictions near zero
        self._add_param('out.conv.w', rng.standard_normal((a.channels, c_in, k, k)) * 0.1 * np.sqrt(2.0 / (c_in * k * k)))
        self._add_param('out.conv.b', np.zeros(a.channels))

    def parameter_names(self) -> List[str]:
        return list(self.params.keys())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def _block(self, p: Dict[str, Tensor], block: str, h, temb: Tensor) -> Tensor:
        h = ops.conv2d(h, p[f'{block}.conv.w'], p[f'{block}.conv.b'])
        h = ops.add_channelwise(h, ops.affine(temb, p[f'{block}.time.w'], p[f'{block}.time.b']))
        return ops.silu(h)

    def forward(self, x, t, trainable: bool = True) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
        if x.data.ndim != 4 or x.shape[1:] != self.architecture.image_shape:
            raise ShapeError(f"EpsilonModel: input shape {x.shape} does not match model image shape "
                             f"{self.architecture.image_shape}")
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (x.shape[0],))
        if trainable:
            p = self.params
        else:
            p = {name: Tensor(param.data) for name, param in self.params.items()}
        temb = Tensor(time_embedding_batch(t, self.architecture.time_dim))

        h1 = self._block(p, 'block1', x, temb)
        h = ops.avg_pool2(h1) if self.architecture.downsample else h1
        h = self._block(p, 'block2', h, temb)
        h = self._block(p, 'block3', h, temb)
        h = ops.upsample2(h) if self.architecture.downsample else h
        h = self._block(p, 'block4', ops.concat_channels(h, h1), temb)
        return ops.conv2d(h, p['out.conv.w'], p['out.conv.b'])

    def predict(self, x: np.ndarray, t) -> np.ndarray:
        """ε_θ(x, t) without recording a graph; x is (B, C, H, W)."""
        return self.forward(x, t, trainable=False).data

    def __call__(self, x, t) -> Tensor:
        return self.forward(x, t)

    def state_copy(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.params.items()}


def save_checkpoint(model: EpsilonModel, path, T: int, beta_start: float, beta_end: float):
    header = {
        'format': CHECKPOINT_VERSION,
        'architecture': asdict(model.architecture),
        'parameters': [[name, list(param.shape)] for name, param in model.params.items()],
        'T': T,
        'beta_start': beta_start,
        'beta_end': beta_end,
        'seed': model.seed,
    }
    with open(path, 'wb') as f:
        f.write(f"{CHECKPOINT_MAGIC} {json.dumps(header, sort_keys=True)}\n".encode('utf-8'))
        for param in model.params.values():
            f.write(param.data.astype('<f4').tobytes())
    logger.info(f"save_checkpoint. path: {path}, parameters: {model.num_parameters()}")


def load_checkpoint(path) -> Tuple[EpsilonModel, dict]:
    with open(path, 'rb') as f:
        raw = f.read()
    newline = raw.find(b'\n')
    if newline < 0 or not raw.startswith(CHECKPOINT_MAGIC.encode()):
        raise ValueError(f"{path} is not an LMD checkpoint")
    header = json.loads(raw[len(CHECKPOINT_MAGIC) + 1:newline].decode('utf-8'))
    if header.get('format') != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')}")

    model = EpsilonModel(ModelArchitecture(**header['architecture']), seed=header['seed'])
    payload = raw[newline + 1:]
    expected = 4 * model.num_parameters()
    if len(payload) != expected:
        raise ValueError(f"{path}: parameter payload has {len(payload)} bytes, expected {expected}")

    offset = 0
    for name, shape in header['parameters']:
        param = model.params[name]
        if tuple(shape) != param.shape:
            raise ShapeError(f"{path}: parameter '{name}' shape {tuple(shape)} does not match {param.shape}")
        count = param.size
        param.data = np.frombuffer(payload, dtype='<f4', count=count, offset=offset).astype(np.float32).reshape(param.shape)
        offset += 4 * count
    logger.info(f"load_checkpoint. path: {path}, T: {header['T']}, seed: {header['seed']}")
    return model, header
