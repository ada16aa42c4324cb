//! Network architectures: random Fourier feature embedding, the gated
//! ("modified") fully connected network, two-head PINNs and PI-DeepONets.

mod checkpoint;
mod deeponet;
mod fcnn;
mod pinn;
mod rff;

pub use checkpoint::{load, read_checkpoint, save, write_checkpoint, Surrogate};
pub use deeponet::{deeponet_eval, DeepOnetArch, DeepOnetModel, OperatorInput};
pub use fcnn::{fcnn_forward, FcnnSpec};
pub use pinn::{pinn_eval, PinnArch, PinnModel, PinnOutput, TimeMarchingPinn};
pub use rff::{rff_embed, RffEmbedding};
