//! The ladder network model.

pub(crate) mod model;
mod params;
mod spec;

pub use model::{
    argmax_rows, clean_encoder, clean_level_stats, combinator_g, corrupted_encoder, decoder, ladder_pass, predict,
    predict_log_proba, reconstruction_cost, supervised_cost, total_cost, update_running_stats, BnMode, EncoderPass,
    LadderCosts, LadderPassOutput, LevelStats, BN_EPS, BN_MOMENTUM,
};
pub use params::{is_decoder_param, Combinator, LadderParams, LayerParams, ParamVars, RunningStats, COMBINATOR_INIT};
pub use spec::{Activation, LadderSpec, LayerKind, LayerSpec, ReconTarget};
