//! Readers and writers for point data.

pub mod csv;
pub mod image_stack;
pub mod mvbin;

pub use self::csv::{load_csv, read_csv, save_csv, write_csv, CsvOptions};
pub use image_stack::{list_stack_files, load_image_stack, ImageStack, ImageStackOptions};
