use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("dimension {what}={value} does not fit the header field")]
    DimensionOverflow { what: &'static str, value: usize },
    #[error("frequency {freq} Hz is at or above the Nyquist limit {nyquist} Hz")]
    AliasRisk { freq: f64, nyquist: f64 },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("clip has {len} samples, at least {needed} required")]
    ClipTooShort { len: usize, needed: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("negative energy in input")]
    NegativeEnergy,
    #[error("clip is silent")]
    SilentClip,
    #[error("noise pool has {have} {kind} sources, {need} required")]
    PoolTooSmall { kind: &'static str, have: usize, need: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(e) => Error::Io(e),
            hound::Error::FormatError(msg) => Error::CorruptHeader(msg.to_string()),
            hound::Error::TooWide => Error::UnsupportedFormat("sample width".into()),
            hound::Error::Unsupported => Error::UnsupportedFormat("codec".into()),
            other => Error::UnsupportedFormat(other.to_string()),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(e) => Error::Io(e),
            other => Error::Manifest(format!("{other:?}")),
        }
    }
}
