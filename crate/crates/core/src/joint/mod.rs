//! Joint decision across the heads of one network and across networks.

mod boost;
mod layers;
mod loss;
mod networks;

pub use layers::{head_weights, multilayer_loss, multilayer_output, HeadWeights};
pub use loss::{weighted_cross_entropy, LabelVector};
pub use networks::{
    clamp_acc, decode_weight_table, degenerate_ensemble, encode_weight_table, joint_network_output,
    load_weight_table, network_weight, reweight_factors, save_weight_table, update_sample_weights,
    ReweightMode, SampleWeightTable, ACC_CLAMP,
};
pub use boost::{
    boost_train, ensemble_error, BoostConfig, BoostManifest, BoostOutcome, BoostState, Judge, RoundRecord,
    MANIFEST_FILE,
};
