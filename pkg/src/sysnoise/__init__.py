"""Measure the noise that implementation choices inject between two
builds of the same image/tensor pipeline.

Every stage where deployed stacks disagree (JPEG iDCT kernel, resize
kernel and support convention, color conversion route, reduced
precision, pooling rounding, upsampling alignment, box decode offsets)
is implemented from first principles with the disagreement exposed as an
explicit parameter, so pipelines can be composed per variant and their
outputs diffed bit by bit.
"""

__version__ = "0.1.0"

from .colorspace import (
    ROUNDTRIP_PATHS,
    YuvImage,
    color_roundtrip,
    rgb_to_yuv444,
    subsample_420,
    upsample_420,
    yuv_to_rgb_fixed,
    yuv_to_rgb_float,
)
from .detpost import (
    BBox,
    BoxCoder,
    decode_boxes,
    iou,
    nms,
    round_boxes,
    xywh2xyxy,
    xyxy2xywh,
)
from .jpegdec import (
    JpegFormatError,
    UnsupportedJpegError,
    decode_bytes,
    decode_to_rgb,
    idct_exact,
    idct_fast,
    parse_jpeg,
)
from .netops import (
    PoolConfig,
    maxpool2d,
    pool_output_shape,
    upsample_bilinear,
    upsample_nearest,
)
from .pipeline import (
    DivergenceReport,
    MixPolicy,
    PipelineSpec,
    SpecValidationError,
    StageExecutionError,
    compare,
    make_spec,
    mix_sample,
    parse_spec,
    run_pipeline,
    stepwise_combined,
)
from .precision import (
    QuantParams,
    calibrate_minmax,
    cast_fp16,
    dequantize,
    quantize,
)
from .resize import ResizeKernel, area_resize, kernel_weight, map_coord
from .resize import resize as resize_image
from .tensorcore import (
    DiffImage,
    ImageBuffer,
    Tensor,
    diff_image,
    image_to_tensor,
    load_tensor,
    read_ppm,
    round_half_away,
    save_tensor,
    write_ppm,
)
