//! Objective and subjective evaluation.

mod listening;
mod objective;
mod server;

pub use listening::{
    ab_orders, aggregate_subjective, dedupe_ratings, export_listening_bundle, read_ratings, AudioKey, BundleKey, FieldError, ListeningBundle,
    ListeningExport, MosItem, MosSummary, PairItem, PreferenceChoice, PreferenceSummary, Question, RatingKind, RatingRecord, SubjectiveSummary,
    AUDIO_DIR, BUNDLE_FILE, KEY_FILE, PEAK_TARGET, QUESTION_NATURALNESS, QUESTION_OVERALL, QUESTION_SARCASM,
};
pub use objective::{
    load_predictions, objective_eval, rows_from_predictions, save_predictions, test_set_id, EvalReport, EvalRow, EvalSource, EvalSystem,
    InputType, ObjectiveEvalOptions, UtterancePrediction, PREDICTIONS_FILE, REPORT_FILE,
};
pub use server::{router, serve_rating_api, AppState, RatingStore, ServerConfig};
