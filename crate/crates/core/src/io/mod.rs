//! File input: baseline JPEG coefficient extraction and PNM pixels.

pub mod jpeg;
pub mod pnm;

pub use jpeg::{coefficients_for_network, parse_jpeg, HuffmanClass, HuffmanTable, JpegComponent, ParsedJpeg};
pub use pnm::{load_pnm, PnmImage};
