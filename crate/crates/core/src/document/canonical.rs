//! Canonical JSON.
//!
//! Object keys sorted by code point, no insignificant whitespace, integers
//! (and floats with an integral value below 2^53) written as plain integers,
//! every other number in shortest round-trip lowercase scientific notation
//! (`2e-1`, `6.31e-1`), UTF-8, one trailing LF.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{Number, Value};
use thiserror::Error;

/// Largest magnitude at which every integer is exactly representable in f64.
const EXACT_INTEGER_LIMIT: f64 = 9_007_199_254_740_992.0;

#[derive(Debug, Error)]
pub enum CanonicalError {
    #[error("cannot serialize: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("non-finite number cannot be represented in JSON")]
    NonFinite,
}

/// Canonical bytes of any serializable value.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&value, &mut out)?;
    out.push('\n');
    Ok(out.into_bytes())
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    Ok(String::from_utf8(to_canonical_bytes(value)?).expect("canonical output is UTF-8"))
}

fn write_value(value: &Value, out: &mut String) -> Result<(), CanonicalError> {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(n, out)?,
        Value::String(s) => out.push_str(&serde_json::to_string(s)?),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key)?);
                out.push(':');
                write_value(&map[key], out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

fn write_number(n: &Number, out: &mut String) -> Result<(), CanonicalError> {
    if let Some(u) = n.as_u64() {
        write!(out, "{u}").expect("write to String");
    } else if let Some(i) = n.as_i64() {
        write!(out, "{i}").expect("write to String");
    } else {
        let x = n.as_f64().ok_or(CanonicalError::NonFinite)?;
        out.push_str(&format_f64(x)?);
    }
    Ok(())
}

/// Canonical text of a float.
pub fn format_f64(x: f64) -> Result<String, CanonicalError> {
    if !x.is_finite() {
        return Err(CanonicalError::NonFinite);
    }
    if x == 0.0 {
        return Ok("0".into());
    }
    if x.fract() == 0.0 && x.abs() < EXACT_INTEGER_LIMIT {
        return Ok(format!("{}", x as i64));
    }
    Ok(format!("{x:e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn numbers() {
        assert_eq!(format_f64(0.2).unwrap(), "2e-1");
        assert_eq!(format_f64(0.631).unwrap(), "6.31e-1");
        assert_eq!(format_f64(1.5).unwrap(), "1.5e0");
        assert_eq!(format_f64(1e6).unwrap(), "1000000");
        assert_eq!(format_f64(-0.0).unwrap(), "0");
        assert_eq!(format_f64(1e300).unwrap(), "1e300");
        assert_eq!(format_f64(-2.5e-7).unwrap(), "-2.5e-7");
        assert!(format_f64(f64::NAN).is_err());
    }

    #[test]
    fn sorted_compact_newline_terminated() {
        let v = json!({"b": 1, "a": [true, null, "x\"y"], "c": {"z": 0.5, "y": -3}});
        assert_eq!(
            to_canonical_string(&v).unwrap(),
            "{\"a\":[true,null,\"x\\\"y\"],\"b\":1,\"c\":{\"y\":-3,\"z\":5e-1}}\n"
        );
    }

    #[test]
    fn float_text_round_trips() {
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, 1e-300, 123456.789] {
            let s = format_f64(x).unwrap();
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
