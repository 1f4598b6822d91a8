//! Report serialization: the JSON conventions shared by every CLI command.
//!
//! Rationals are serialized as `"num/den"` strings, capped-precision p-adic
//! numbers as the decimal triple `(v, u, N)`.

use crate::padic::PadicNumber;
use crate::qrat::Q;
use serde::{Deserialize, Serialize};

/// serde adapter for `Q` as a `"num/den"` string.
pub mod qser {
    use super::*;
    use serde::de::Error;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Q, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::qrat::q_display(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Q, D::Error> {
        let text = String::deserialize(d)?;
        parse_q(&text).map_err(D::Error::custom)
    }
}

/// serde adapter for `Option<Q>`.
pub mod qser_opt {
    use super::*;
    use serde::de::Error;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Option<Q>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            None => s.serialize_none(),
            Some(v) => s.serialize_some(&crate::qrat::q_display(v)),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Q>, D::Error> {
        let text: Option<String> = Option::deserialize(d)?;
        text.map(|t| parse_q(&t).map_err(D::Error::custom)).transpose()
    }
}

/// Parses `"num/den"` or a bare integer.
pub fn parse_q(text: &str) -> Result<Q, String> {
    let text = text.trim();
    let (num, den) = match text.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (text, "1"),
    };
    let n: i128 = num.parse().map_err(|e| format!("bad numerator {num:?}: {e}"))?;
    let d: i128 = den.parse().map_err(|e| format!("bad denominator {den:?}: {e}"))?;
    if d == 0 {
        return Err("zero denominator".into());
    }
    Ok(Q::new(n, d))
}

/// Wire form of a `PadicNumber`: the decimal triple `(v, u, N)`, with exact
/// zero spelled out.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
pub enum PadicRepr {
    Zero { zero: bool },
    Triple { v: i64, u: String, n: u32 },
}

impl From<&PadicNumber> for PadicRepr {
    fn from(x: &PadicNumber) -> Self {
        match x {
            PadicNumber::Zero { .. } => PadicRepr::Zero { zero: true },
            PadicNumber::Nonzero { val, unit, prec, .. } => {
                PadicRepr::Triple { v: *val, u: unit.to_string(), n: *prec }
            }
        }
    }
}
