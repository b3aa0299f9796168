//! Comparing classifiers on one test set, plus a synthetic corpus on which
//! ignoring the context is provably costly.

mod adapters;
mod compare;
mod http;
mod registry;
mod synthetic;

pub use adapters::{
    probe_context_invariance, probe_inputs, AdapterMode, ClassifierAdapter, ConstantAdapter,
    FnAdapter, InvarianceViolation, LocalModelAdapter, OracleAdapter, ProbeReport,
};
pub use compare::{
    build_comparison, compare, evaluate_adapter, flip_accuracy, AdapterEvaluation, Comparison,
    EvalOptions, FlipRow, PredictionCache,
};
pub use http::{
    render_template, HttpAdapter, HttpAdapterConfig, CONTEXT_PLACEHOLDER, TEXT_PLACEHOLDER,
};
pub use registry::{load_local_adapter, AdapterSpec, Registry};
pub use synthetic::{
    complete_flip_groups, context_free_ceiling, generate_synthetic, split_keeping_flip_groups,
    synthetic_schema, SyntheticSpec, TopicSpec, FLIP_GROUP_KEY,
};
