//! Little-endian helpers shared by the binary file formats.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};

/// Fills `buf`, reporting a short read as a truncated `section`.
pub(crate) fn read_exact_or<R: Read>(input: &mut R, buf: &mut [u8], section: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Format(format!("truncated file: missing {section}")),
        _ => Error::Format(format!("read failed in {section}: {e}")),
    })
}

pub(crate) fn read_u32<R: Read>(input: &mut R, section: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(input, &mut b, section)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_u32<W: Write>(out: &mut W, v: u32) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}
