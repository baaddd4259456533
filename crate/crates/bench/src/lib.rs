//! Benchmark fixtures shared by the criterion targets.

use cucl_core::frontend::ConvParams;
use cucl_core::tuner::downscale;
use cucl_core::variants::{ConvOp, OpDesc};

/// The 3x3, 64 -> 192 corpus convolution shrunk to `flops`.
pub fn conv3x3(flops: u64) -> OpDesc {
    let op = ConvOp::new(ConvParams { ksz: 3, stride: 1, pad: 1, out_chans: 192 }, None, 5, 64, 56, 56).expect("fits");
    OpDesc::Conv(downscale(&op, flops))
}

/// A 1x1 convolution shrunk to `flops`.
pub fn conv1x1(flops: u64) -> OpDesc {
    let op = ConvOp::new(ConvParams { ksz: 1, stride: 1, pad: 0, out_chans: 256 }, None, 5, 480, 14, 14).expect("fits");
    OpDesc::Conv(downscale(&op, flops))
}
