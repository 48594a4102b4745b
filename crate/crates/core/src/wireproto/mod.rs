//! Line-based text protocol (`annb-proto/1`) for external algorithm programs.
//!
//! The harness writes one command per line to the adapter's stdin and reads
//! exactly one reply line (plus any declared continuation lines) from its
//! stdout. Lines are split into tokens with POSIX-shell quoting rules.
//!
//! | harness sends                    | adapter replies                        |
//! |----------------------------------|----------------------------------------|
//! | `config <key> <value>`           | `ok` or `error <msg>`                  |
//! | `config-done`                    | `ok`                                   |
//! | `train <n> <d>`, n point lines   | `ok` (after the header only)           |
//! | `train-done`                     | `ok` once the index is built           |
//! | `query-params <t1> …`            | `ok`                                   |
//! | `query <v1> … <vd> <k>`          | `ok <c>` then `c` lines `<id> [extra]` |
//! | `prepare <v1> … <vd>`            | `ok`                                   |
//! | `run <k>`                        | as `query`                             |
//! | `stats`                          | `ok <c>` then `c` lines `<key> <value>`|
//! | `exit`                           | process exits with status 0            |
//!
//! Bit points travel as one hex token: the packed bytes of the vector, bit
//! `j` at position `j % 8` of byte `j / 8`.

mod adapter;
mod conformance;
mod session;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{BitMatrix, PointRef};

pub use adapter::serve;
pub use conformance::{protocol_check, CheckOutcome};
pub use session::{ExternalSession, Phase, Reply};

pub const PROTOCOL_VERSION: &str = "annb-proto/1";

/// Splits a line into tokens following POSIX-shell quoting and escaping.
pub fn tokenize(line: &str) -> Result<Vec<String>> {
    if line.contains('\0') {
        return Err(Error::protocol("line contains a NUL byte"));
    }
    shell_words::split(line).map_err(|e| Error::protocol(format!("cannot tokenize `{line}`: {e}")))
}

/// Joins tokens into a line that [`tokenize`] maps back to the same tokens.
pub fn serialize<S: AsRef<str>>(tokens: &[S]) -> String {
    shell_words::join(tokens.iter().map(AsRef::as_ref))
}

/// Encodes a point as wire tokens.
pub fn point_tokens<T: Scalar>(p: PointRef<'_, T>, dim: usize) -> Vec<String> {
    match p {
        PointRef::Dense(v) => v.iter().map(|x| x.to_string()).collect(),
        PointRef::Bits(words) => {
            let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).take(dim.div_ceil(8)).collect();
            vec![hex::encode(bytes)]
        }
    }
}

/// Decodes a hex token into packed words of a `dim`-bit vector.
pub fn parse_bits(token: &str, dim: usize) -> Result<Vec<u64>> {
    let bytes = hex::decode(token).map_err(|e| Error::protocol(format!("bad hex point: {e}")))?;
    if bytes.len() != dim.div_ceil(8) {
        return Err(Error::protocol(format!(
            "hex point has {} bytes, expected {}",
            bytes.len(),
            dim.div_ceil(8)
        )));
    }
    let mut words = vec![0u64; BitMatrix::words_for(dim)];
    for (i, b) in bytes.into_iter().enumerate() {
        words[i / 8] |= (b as u64) << (8 * (i % 8));
    }
    if dim % 64 != 0 && words.last().is_some_and(|w| w >> (dim % 64) != 0) {
        return Err(Error::protocol("hex point has bits set past the dimension"));
    }
    Ok(words)
}

/// Parses `d` decimal tokens into a dense point.
pub fn parse_dense(tokens: &[String]) -> Result<Vec<f32>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f32>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::protocol(format!("bad coordinate `{t}`")))
        })
        .collect()
}
