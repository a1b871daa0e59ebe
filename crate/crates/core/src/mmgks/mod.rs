//! Generalized Krylov subspace solver for `min ‖Hu − b‖_p^p + λ‖Θu‖_q^q`.

mod gkb;
mod lambda;
mod solver;
mod weights;

pub use gkb::{bidiagonalize, gkb_seed, Bidiagonalization};
pub use lambda::{
    log_grid, select_lambda_dp, select_lambda_gcv, solve_reduced, LambdaChoice, LambdaSpectrum, LOG10_LAMBDA_MAX,
    LOG10_LAMBDA_MIN,
};
pub use solver::{
    mmgks, IterationRecord, KrylovWorkspace, LambdaRule, Mmgks, MmgksConfig, MmgksReport, MmgksSolution, Regularizer,
    Smoothing,
};
pub use weights::{smoothed_penalty, update_weights, Grouping, WeightVector};
