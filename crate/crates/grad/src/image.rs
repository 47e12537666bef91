//! Conversions between [`ImagePatch`] (HWC, [0,1]) and CHW tensors.

use crate::tensor::Tensor;
use stainlab_core::{ImagePatch, Magnification};

pub fn patch_to_chw(patch: &ImagePatch) -> Tensor {
    let side = patch.side();
    let hw = side * side;
    let mut data = vec![0.0; 3 * hw];
    for (i, px) in patch.pixels().chunks_exact(3).enumerate() {
        data[i] = px[0];
        data[hw + i] = px[1];
        data[2 * hw + i] = px[2];
    }
    Tensor::new(vec![3, side, side], data)
}

/// CHW tensor back to a patch; values are clamped to [0, 1].
pub fn chw_to_patch(
    tensor: &Tensor,
    id: impl Into<String>,
    magnification: Magnification,
) -> ImagePatch {
    let shape = tensor.shape();
    assert_eq!(shape.len(), 3);
    assert_eq!(shape[0], 3, "expected RGB channels first");
    assert_eq!(shape[1], shape[2], "patch must be square");
    let side = shape[1];
    let hw = side * side;
    let mut pixels = vec![0.0; hw * 3];
    for i in 0..hw {
        pixels[i * 3] = tensor.data()[i];
        pixels[i * 3 + 1] = tensor.data()[hw + i];
        pixels[i * 3 + 2] = tensor.data()[2 * hw + i];
    }
    ImagePatch::from_pixels_clamped(id, side, magnification, pixels)
        .expect("clamped pixels are always valid")
}
