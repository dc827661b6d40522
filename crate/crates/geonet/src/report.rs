//! JSON writing with fixed 17-significant-digit floats.
//!
//! Every floating-point number in reports and geometry files is printed with
//! 17 significant digits, which round-trips f64 exactly.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};

use crate::error::Result;

/// Pretty formatter with `{:.16e}` floats (17 significant digits).
pub struct SigDigitFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Default for SigDigitFormatter<'_> {
    fn default() -> Self {
        SigDigitFormatter {
            inner: PrettyFormatter::new(),
        }
    }
}

impl Formatter for SigDigitFormatter<'_> {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_object_value(writer)
    }
}

/// Serialize a value to a 17-significant-digit JSON string.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = Serializer::with_formatter(&mut out, SigDigitFormatter::default());
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("json is utf8"))
}

/// Write a value as 17-significant-digit JSON to a file.
pub fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let s = to_json_string(value)?;
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_roundtrip_exactly() {
        let values = vec![
            std::f64::consts::PI,
            1.0 / 3.0,
            6.02e23,
            -2.2250738585072014e-308,
            0.1 + 0.2,
        ];
        let s = to_json_string(&values).unwrap();
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(values, back);
        assert!(s.contains("e"), "scientific notation expected: {s}");
    }
}
