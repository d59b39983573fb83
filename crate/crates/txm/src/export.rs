//! PNG snapshots and line-profile CSVs of volume slices.

use std::fmt::Write as _;
use std::path::Path;

use image::{ImageBuffer, Luma};
use txm_core::Slice;

use crate::io::VolumeFile;
use crate::{Error, Result};

/// Display windows used for the figures, μm⁻¹.
pub const WINDOW_FULL: [f64; 2] = [0.0, 0.02];
pub const WINDOW_NARROW: [f64; 2] = [0.003, 0.015];

fn check_window([lo, hi]: [f64; 2]) -> Result<()> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Usage(format!("window [{lo}, {hi}] needs finite lo < hi")));
    }
    Ok(())
}

/// Linear window to 16-bit gray with clamping.
pub fn window_slice(slice: &Slice, window: [f64; 2]) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    check_window(window)?;
    let [lo, hi] = window;
    let data = slice
        .data
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    Ok(ImageBuffer::from_raw(slice.width as u32, slice.height as u32, data).expect("buffer matches dimensions"))
}

pub fn export_png(volume_path: &Path, slice_index: usize, window: [f64; 2], out: &Path) -> Result<()> {
    check_window(window)?;
    let slice = VolumeFile::read(volume_path)?.slice(slice_index)?;
    let img = window_slice(&slice, window)?;
    img.save(out).map_err(|e| Error::format(out, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Line {
    Row(usize),
    Column(usize),
}

/// `(pixel index, value)` along one row or column.
pub fn line_profile(slice: &Slice, line: Line) -> Result<Vec<(usize, f64)>> {
    let oob = |what: &str, i: usize, n: usize| -> Error {
        txm_core::Error::OutOfRange(format!("{what} {i} outside 0..{n}")).into()
    };
    match line {
        Line::Row(r) if r < slice.height => Ok((0..slice.width).map(|c| (c, slice.get(r, c))).collect()),
        Line::Column(c) if c < slice.width => Ok((0..slice.height).map(|r| (r, slice.get(r, c))).collect()),
        Line::Row(r) => Err(oob("row", r, slice.height)),
        Line::Column(c) => Err(oob("column", c, slice.width)),
    }
}

pub fn profile_csv(profile: &[(usize, f64)]) -> String {
    let mut s = String::from("index,value\n");
    for (i, v) in profile {
        writeln!(s, "{i},{v:e}").unwrap();
    }
    s
}

pub fn export_line_profile(volume_path: &Path, slice_index: usize, line: Line, out: &Path) -> Result<()> {
    let slice = VolumeFile::read(volume_path)?.slice(slice_index)?;
    let csv = profile_csv(&line_profile(&slice, line)?);
    std::fs::write(out, csv).map_err(Error::io(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_endpoints() {
        let w = [0.0, 0.02];
        let at = |v: f64| window_slice(&Slice::filled(3, 2, 1.0, v), w).unwrap();
        assert!(at(0.02).pixels().all(|p| p.0[0] == u16::MAX));
        assert!(at(0.0).pixels().all(|p| p.0[0] == 0));
        assert!(at(0.5).pixels().all(|p| p.0[0] == u16::MAX));
        let mid = at(0.01).get_pixel(0, 0).0[0];
        assert!(mid.abs_diff(32768) <= 1, "{mid}");
        assert!(window_slice(&Slice::zeros(1, 1, 1.0), [1.0, 1.0]).is_err());
    }

    #[test]
    fn profiles() {
        let s = Slice::new(3, 2, 1.0, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(line_profile(&s, Line::Row(1)).unwrap(), vec![(0, 3.0), (1, 4.0), (2, 5.0)]);
        assert_eq!(line_profile(&s, Line::Column(2)).unwrap(), vec![(0, 2.0), (1, 5.0)]);
        assert!(line_profile(&s, Line::Row(2)).is_err());
        assert!(line_profile(&s, Line::Column(3)).is_err());
        let csv = profile_csv(&line_profile(&Slice::filled(4, 4, 1.0, 0.5), Line::Row(0)).unwrap());
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",5e-1")));
    }
}
