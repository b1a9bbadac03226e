use protomatch::Error;

use crate::commands::ViolationsFound;

pub const OTHER: u8 = 1;
pub const IO: u8 = 3;
pub const FORMAT: u8 = 4;
pub const DATA: u8 = 5;
pub const CONFIG: u8 = 6;
pub const VIOLATIONS: u8 = 7;

pub const TAXONOMY: &str = "\
Exit codes:
  0  success
  1  unexpected failure
  2  invalid command line
  3  file could not be read or written
  4  malformed input (bad magic, version, checksum, schema, RLE, box)
  5  inconsistent inputs (dimension, missing embeddings, unknown class/image, duplicate class, empty or zero support)
  6  invalid run config
  7  `validate` found violations

Log level: PROTOMATCH_LOG (error, warn, info, debug, trace).";

pub fn family(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => IO,
        Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::Corrupt(_)
        | Error::SchemaViolation { .. }
        | Error::MalformedRle { .. }
        | Error::InvalidBox(_)
        | Error::EmptyMask
        | Error::NonFinite(_) => FORMAT,
        Error::DimensionMismatch { .. }
        | Error::MissingEmbeddings { .. }
        | Error::UnknownClass(_)
        | Error::UnknownImage { .. }
        | Error::DuplicateClass(_)
        | Error::EmptySupport(_)
        | Error::EmptyStore
        | Error::ZeroVector { .. } => DATA,
        Error::InvalidConfig(_) => CONFIG,
    }
}

pub fn code_for(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ViolationsFound>().is_some() {
        return VIOLATIONS;
    }
    e.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map_or(OTHER, family)
}
