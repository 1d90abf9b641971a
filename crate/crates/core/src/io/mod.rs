//! File formats: binary containers for cubes and abundances, JSON model
//! documents, trace CSVs and evaluation reports.

mod container;
mod model;
mod report;
mod trace;

pub use container::{Container, Header, DTYPE, LAYOUT_PIXELS, LAYOUT_PLANES, MAGIC};
pub use model::{EndmemberDoc, ModelDocument, PcaDoc, MODEL_FORMAT};
pub use report::{evaluate, EvalInputs, EvalReport};
pub use trace::{trace_from_csv, trace_to_csv, write_trace};
