//! The fall-detection network: dual-stream embedding, three basic blocks
//! (SGCN→TGCN pathway in parallel with an STCN pathway, plus residual) and
//! a pooled linear head.

mod config;
mod net;

pub use config::{BlockConfig, ModelConfig};
pub use net::{Batch, BnState, FallDetectorNet, ForwardPass, Mode, Parameter, Session, BN_MOMENTUM};
