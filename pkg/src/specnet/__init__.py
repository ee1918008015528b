"""Convolutional networks whose feature maps live in the frequency domain.

Convolution becomes an element-wise product after a 2D DFT; small
spectral magnitudes are dropped and the survivors kept in sparse form.
"""

from .block import (
    BlockCache,
    SpecConvLayer,
    activate,
    activate_backward,
    spec_conv_backward,
    spec_conv_forward,
    spectral_downsample,
    spectral_downsample_backward,
)
from .data import LabeledImageSet, load_cifar_bin, load_idx, synthetic_shapes
from .errors import (
    ConsistencyError,
    DataError,
    DimensionError,
    FormatError,
    LabelValueError,
    LengthError,
    NumericIntegrityError,
    SpecNetError,
    StructuralError,
    UsageError,
)
from .fft import dft2d_reference, fft2d, ifft2d, zero_pad
from .memory import MemLedger, dense_bytes, relative_memory, sparse_bytes
from .network import (
    SPATIAL,
    SPECTRAL,
    Dense,
    DenseLayer,
    Flatten,
    Model,
    ModelSpec,
    SpecConv,
    SpectralPool,
    ToSpatial,
    dense_forward,
    model_backward,
    model_forward,
    softmax_xent,
    spatial_conv_reference,
    spec_lenet_mini,
    to_spatial,
)
from .sparse import SparseSpectral, check_hermitian, densify, nnz_fraction, threshold_to_sparse
from .train import SgdState, TrainConfig, evaluate, lr_at_epoch, sgd_momentum_step, train

__version__ = "0.1.0"
