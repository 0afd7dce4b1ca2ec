//! Minimal differentiable network engine: the layers, parameters, optimizer
//! and checkpoint format needed by the segmentation U-Net.

mod container;
pub mod layers;
mod params;
mod tensor;
mod unet;

pub use container::{
    checkpoint_from_file, checkpoint_to_file, load_checkpoint, save_checkpoint, NamedTensor, TensorFile,
};
pub use params::{adam_step, AdamConfig, Buffer, Init, Param, ParamSpec, ParameterStore};
pub use tensor::{gemm, Scalar, Tensor4D};
pub use unet::{build_unet, conv_param_count, count_parameters, UNet, UNetConfig, UpsampleMode};
