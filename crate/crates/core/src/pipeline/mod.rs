//! End-to-end experiments: illumination sources, correlation-aware training,
//! evaluation sweeps and the pair-transmission audit.

mod eval;
mod source;
mod train;

pub use eval::{correlation_audit, eval_surface, evaluate, loss_sweep, window_clicks, AuditRow, EvalResult, EvalSpec, SurfaceCell};
pub use source::{pair_transmission, FreeS, Source, SourceKind};
pub use train::{CatTrainer, TrainConfig};
