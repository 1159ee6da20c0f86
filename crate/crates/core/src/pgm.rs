//! Minimal binary PGM (P5) reader and writer.

use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Write `pixels` as a 16-bit big-endian P5 image, mapping `[0, full_scale]`
/// to `[0, 65535]` and clipping outside it.
pub fn write_pgm16<W: Write>(pixels: &Array2<f64>, full_scale: f64, mut out: W) -> Result<()> {
    if !(full_scale > 0.0) {
        return Err(Error::Argument("full_scale must be > 0".into()));
    }
    let (rows, cols) = pixels.dim();
    write!(out, "P5\n{cols} {rows}\n65535\n")?;
    let mut buf = Vec::with_capacity(rows * cols * 2);
    for &v in pixels.iter() {
        let q = (v / full_scale * 65535.0).round().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn next_token<R: BufRead>(input: &mut R) -> Result<String> {
    let mut token = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        if input.read(&mut byte)? == 0 {
            break;
        }
        let b = byte[0];
        if b == b'#' && token.is_empty() {
            let mut comment = Vec::new();
            input.read_until(b'\n', &mut comment)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(b);
    }
    if token.is_empty() {
        return Err(Error::Pgm("unexpected end of header".into()));
    }
    String::from_utf8(token).map_err(|_| Error::Pgm("non-ASCII header".into()))
}

fn parse_usize(tok: &str, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::Pgm(format!("bad {what} `{tok}`")))
}

/// Read an 8- or 16-bit P5 image. Values are scaled back to
/// `[0, full_scale]`.
pub fn read_pgm<R: BufRead>(mut input: R, full_scale: f64) -> Result<Array2<f64>> {
    let magic = next_token(&mut input)?;
    if magic != "P5" {
        return Err(Error::Pgm(format!("expected P5 magic, got `{magic}`")));
    }
    let cols = parse_usize(&next_token(&mut input)?, "width")?;
    let rows = parse_usize(&next_token(&mut input)?, "height")?;
    let maxval = parse_usize(&next_token(&mut input)?, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Pgm(format!("maxval {maxval} out of range")));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let mut data = vec![0u8; rows * cols * bytes_per];
    input
        .read_exact(&mut data)
        .map_err(|_| Error::Pgm("truncated pixel data".into()))?;
    let scale = full_scale / maxval as f64;
    let values: Vec<f64> = if bytes_per == 1 {
        data.iter().map(|&b| b as f64 * scale).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Pgm(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let px = Array2::from_shape_fn((3, 5), |(r, c)| (r * 5 + c) as f64 / 14.0);
        let mut buf = Vec::new();
        write_pgm16(&px, 1.0, &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n5 3\n65535\n"));
        assert_eq!(buf.len(), 13 + 3 * 5 * 2);
        // big-endian: last pixel is 1.0 -> 0xFFFF
        assert_eq!(&buf[buf.len() - 2..], &[0xFF, 0xFF]);
        let back = read_pgm(&buf[..], 1.0).unwrap();
        for (a, b) in px.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn reads_8bit_with_comments() {
        let mut data = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        data.extend_from_slice(&[0, 255]);
        let px = read_pgm(&data[..], 2.0).unwrap();
        assert_eq!(px.dim(), (1, 2));
        assert_eq!(px[[0, 1]], 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_pgm(&b"P2\n1 1\n255\n"[..], 1.0).is_err());
        assert!(read_pgm(&b"P5\n4 4\n65535\n\x00\x01"[..], 1.0).is_err());
        assert!(write_pgm16(&Array2::zeros((1, 1)), 0.0, Vec::new()).is_err());
    }
}
