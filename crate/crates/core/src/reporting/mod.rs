//! Relevance and error maps, multi-instance aggregation, pictograms and the
//! convergence harness.

pub mod aggregate;
pub mod colormap;
pub mod convergence;
pub mod maps;
pub mod pictogram;

pub use aggregate::{aggregate_global, GlobalAggregate, PartAggregate};
pub use colormap::{ColorRange, Colormap};
pub use convergence::{
    default_ladder, parse_ladder, run_convergence, select_biggest, summarize, Band, ConvergenceConfig,
    ConvergenceRow, ConvergenceRun, ConvergenceSummary, ConvergenceTable, Subject,
};
pub use maps::{error_map, relevance_map, render_error_map, render_relevance_map, RelevanceMap};
pub use pictogram::render_pictogram;
