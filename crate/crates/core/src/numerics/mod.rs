//! Dense matrices, a reverse-mode operation tape, Adam, and gradient checking.

mod gradcheck;
mod matrix;
mod optim;
mod param;
mod tape;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use matrix::Matrix;
pub use optim::{Adam, AdamConfig};
pub use param::{Param, ParamGrads, ParamId, ParamStore};
pub use tape::{softmax, Tape, Var, LAYER_NORM_EPS, STAT_POOL_EPS};
