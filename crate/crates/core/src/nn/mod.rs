//! Dense tensors, MLPs with reverse- and forward-mode differentiation, Adam,
//! checkpoints and live-buffer accounting.

pub mod adam;
pub mod alloc;
pub mod checkpoint;
pub mod dual;
pub mod mlp;
pub mod special;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use alloc::{
    reset_peak as alloc_meter_reset_peak, snapshot as alloc_meter_snapshot, AllocSnapshot,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointMeta,
};
pub use dual::DualTensor;
pub use mlp::{
    gelu, gelu_grad, mlp_forward, mlp_forward_dual, mlp_init, mlp_jvp, Activation, GradTape,
    Gradients, Layer, LayerNormParams, MlpParams, MlpSpec,
};
pub use tensor::Tensor;

/// `target ← rho · online + (1 − rho) · target`, tensor by tensor.
pub fn soft_update_params(
    target: &mut MlpParams,
    online: &MlpParams,
    rho: f64,
) -> crate::Result<()> {
    if target.spec() != online.spec() {
        return Err(crate::Error::Shape(
            "soft update between different specs".into(),
        ));
    }
    for (t, o) in target.tensors_mut().into_iter().zip(online.tensors()) {
        for (ti, &oi) in t.data_mut().iter_mut().zip(o.data()) {
            *ti = rho * oi + (1.0 - rho) * *ti;
        }
    }
    Ok(())
}
