//! Float images and their on-disk forms: binary PPM (P6, 8-bit) for viewing
//! and PFM (little-endian, scale -1.0) for exact values.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{invalid, Error, Result};

/// Row-major image with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return invalid(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height * channels
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        (v * self.width + u) * self.channels
    }

    pub fn pixel(&self, u: usize, v: usize) -> &[f64] {
        let i = self.index(u, v);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, u: usize, v: usize) -> &mut [f64] {
        let i = self.index(u, v);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn get(&self, u: usize, v: usize, c: usize) -> f64 {
        self.data[self.index(u, v) + c]
    }

    /// Mean of the color channels.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|p| p.iter().sum::<f64>() / self.channels as f64)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Area-average downsampling to `out_w × out_h`; input dimensions must
    /// be integer multiples of the output.
    pub fn downsample(&self, out_w: usize, out_h: usize) -> Result<Image> {
        if out_w == 0 || out_h == 0 || self.width % out_w != 0 || self.height % out_h != 0 {
            return invalid(format!(
                "cannot area-downsample {}x{} to {}x{}",
                self.width, self.height, out_w, out_h
            ));
        }
        let (fx, fy) = (self.width / out_w, self.height / out_h);
        let mut out = Image::new(out_w, out_h, self.channels);
        let norm = (fx * fy) as f64;
        for v in 0..out_h {
            for u in 0..out_w {
                for c in 0..self.channels {
                    let mut acc = 0.0;
                    for dv in 0..fy {
                        for du in 0..fx {
                            acc += self.get(u * fx + du, v * fy + dv, c);
                        }
                    }
                    let i = out.index(u, v) + c;
                    out.data[i] = acc / norm;
                }
            }
        }
        Ok(out)
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        if self.channels != 3 {
            return invalid("PPM output needs a 3-channel image");
        }
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    /// PFM rows are stored bottom-to-top.
    pub fn write_pfm<W: Write>(&self, mut w: W) -> Result<()> {
        let tag = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => return invalid(format!("PFM supports 1 or 3 channels, not {c}")),
        };
        write!(w, "{tag}\n{} {}\n-1.0\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in (0..self.height).rev() {
            let row = &self.data[self.index(0, v)..self.index(0, v) + self.width * self.channels];
            for x in row {
                buf.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_pfm<R: Read>(r: R) -> Result<Image> {
        let mut r = BufReader::new(r);
        let tag = read_token(&mut r)?;
        let channels = match tag.as_str() {
            "Pf" => 1,
            "PF" => 3,
            _ => return invalid(format!("not a PFM file (header '{tag}')")),
        };
        let width: usize = parse_token(&mut r)?;
        let height: usize = parse_token(&mut r)?;
        let scale: f64 = parse_token(&mut r)?;
        let little = scale < 0.0;
        let mut raw = vec![0u8; width * height * channels * 4];
        r.read_exact(&mut raw)?;
        let mut img = Image::new(width, height, channels);
        let row_len = width * channels;
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let value = if little {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            } as f64;
            let (file_row, col) = (k / row_len, k % row_len);
            let v = height - 1 - file_row;
            img.data[v * row_len + col] = value;
        }
        Ok(img)
    }
}

/// Reads one whitespace-delimited header token, consuming exactly one
/// trailing whitespace byte.
fn read_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte[0]);
    }
    String::from_utf8(token).map_err(|_| Error::InvalidArgument("non-UTF-8 image header".into()))
}

fn parse_token<R: BufRead, T: std::str::FromStr>(r: &mut R) -> Result<T> {
    let tok = read_token(r)?;
    tok.parse()
        .map_err(|_| Error::InvalidArgument(format!("bad image header token '{tok}'")))
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64;
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
