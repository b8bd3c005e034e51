//! Command implementations behind the `adnfm` binary, split out as a library
//! so integration tests can drive them in-process.

pub mod checkpoint;
pub mod commands;
pub mod config;

/// Maps an error to the binary's exit code: config 2, data 3, numerical 4,
/// schema mismatch 5.
pub fn exit_code(err: &adnfm_core::Error) -> u8 {
    use adnfm_core::Error::*;
    match err {
        Config(_) => 2,
        Data(_) | Io(_) => 3,
        Numerical(_) => 4,
        SchemaMismatch(_) => 5,
    }
}
