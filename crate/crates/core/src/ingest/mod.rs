//! Problem exports, submission exports and problem bundles.

pub mod bundle;
pub mod moodle;
pub mod submissions;

pub use moodle::{html_to_text, parse_moodle_xml, strip_images, IngestWarning, MoodleError, MoodleImport};
pub use submissions::{parse_submissions_csv, write_submissions_csv, CsvColumns, CsvError, RowError, SubmissionImport};
pub use bundle::{load_bundle, save_bundle, Bundle, BundleError, BUNDLE_VERSION};
