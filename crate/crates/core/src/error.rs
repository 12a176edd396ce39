use alloc::string::String;
use core::fmt;

/// Errors raised by the pure algorithmic layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A rectangle, point or level lies outside the valid range.
    Bounds(String),
    /// Pyramid geometry violates the level invariants.
    CorruptGeometry(String),
    /// Otsu was handed a histogram with no mass.
    EmptyHistogram,
    /// Tissue mask came out empty after morphology.
    EmptyTissue,
    /// Invalid configuration or unusable input combination.
    Config(String),
    /// Raster or vector dimensions do not match what was expected.
    Shape(String),
    /// Score lists or patch positions do not line up.
    Alignment(String),
    /// Two scores occupy the same heatmap cell.
    DuplicatePatch { x: u64, y: u64 },
    /// Heatmap has no scored cells.
    EmptyHeatmap,
    /// Feature vector carries an unknown schema version.
    Schema { expected: u32, found: u32 },
    /// Non-finite or otherwise invalid numeric data.
    Data(String),
    /// Synthetic generator could not place its shapes.
    Generation(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Bounds(msg) => write!(f, "out of bounds: {msg}"),
            Error::CorruptGeometry(msg) => write!(f, "corrupt pyramid geometry: {msg}"),
            Error::EmptyHistogram => f.write_str("histogram has no mass"),
            Error::EmptyTissue => f.write_str("tissue mask is empty"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Alignment(msg) => write!(f, "misaligned input: {msg}"),
            Error::DuplicatePatch { x, y } => write!(f, "duplicate patch at ({x}, {y})"),
            Error::EmptyHeatmap => f.write_str("heatmap has no scored cells"),
            Error::Schema { expected, found } => {
                write!(f, "feature schema version {found}, expected {expected}")
            }
            Error::Data(msg) => write!(f, "invalid data: {msg}"),
            Error::Generation(msg) => write!(f, "synthetic generation failed: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
