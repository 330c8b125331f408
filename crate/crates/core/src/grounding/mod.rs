//! Message grounding: the trajectory-contrastive loss, the autoencoder
//! reconstruction baseline, and the per-agent trajectory buffer feeding both.

mod ae;
mod buffer;
mod cacl;

pub use ae::{ae_agent_loss, ae_loss};
pub use buffer::{MessageBuffer, TrajectoryRecord, TrajectoryStep};
pub use cacl::{cacl_agent_loss, cacl_loss, cacl_loss_on_tape, CaclConfig, Reduction};
