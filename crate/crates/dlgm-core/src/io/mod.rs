//! File formats: IDX datasets in, model files, CSV tables and PGM grids out.

pub mod idx;
pub mod model_file;
pub mod pgm;
pub mod tables;

pub use idx::{binarize, load_idx, load_idx_labels, parse_idx, Binarize, IdxArray};
pub use model_file::{load_model, save_model, ModelFile, FORMAT_VERSION};
pub use pgm::{emit_pgm_grid, pgm_grid_bytes};
pub use tables::{read_csv, reproducibility_stanza, write_csv, MetricLog};
