//! The 49-point fiducial scheme.
//!
//! Point order is semantic and fixed; expression-distance measures compare
//! coordinates index-by-index, so every producer and consumer in this crate
//! uses the layout below (no jaw outline):
//!
//! | indices | feature                                                      |
//! |---------|--------------------------------------------------------------|
//! | 0..=4   | left eyebrow, outer to inner (image-left)                    |
//! | 5..=9   | right eyebrow, inner to outer                                |
//! | 10..=13 | nose bridge, top to bottom                                   |
//! | 14..=18 | nose base: left nostril, left inner, center, right inner, right nostril |
//! | 19..=24 | left eye: outer corner, upper outer, upper inner, inner corner, lower inner, lower outer |
//! | 25..=30 | right eye: inner corner, upper inner, upper outer, outer corner, lower outer, lower inner |
//! | 31..=42 | outer lip: left corner, 5 upper left-to-right, right corner, 5 lower right-to-left |
//! | 43..=48 | inner lip: 3 upper left-to-right, 3 lower right-to-left      |

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

pub const FIDUCIAL_COUNT: usize = 49;

pub const LEFT_EYE_OUTER: usize = 19;
pub const LEFT_EYE_INNER: usize = 22;
pub const RIGHT_EYE_INNER: usize = 25;
pub const RIGHT_EYE_OUTER: usize = 28;
pub const NOSE_TIP: usize = 16;
pub const MOUTH_LEFT: usize = 31;
pub const MOUTH_RIGHT: usize = 37;

/// Ordered set of exactly 49 named 2D landmark points, in image pixel
/// coordinates.
#[derive(Clone, PartialEq)]
pub struct FiducialSet {
    points: [[f64; 2]; FIDUCIAL_COUNT],
}

impl fmt::Debug for FiducialSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FiducialSet(eyes L{:?} R{:?}, mouth {:?}..{:?})",
            self.points[LEFT_EYE_OUTER],
            self.points[RIGHT_EYE_OUTER],
            self.points[MOUTH_LEFT],
            self.points[MOUTH_RIGHT]
        )
    }
}

impl FiducialSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != FIDUCIAL_COUNT {
            return Err(Error::dims("fiducial count", FIDUCIAL_COUNT, points.len()));
        }
        if !points.iter().all(|p| p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::NonFinite("fiducial coordinates"));
        }
        let mut arr = [[0.0; 2]; FIDUCIAL_COUNT];
        arr.copy_from_slice(&points);
        Ok(Self { points: arr })
    }

    pub fn points(&self) -> &[[f64; 2]; FIDUCIAL_COUNT] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    /// Frobenius distance between two sets: sqrt of the summed squared
    /// coordinate differences over all 49 points.
    pub fn distance(&self, other: &FiducialSet) -> f64 {
        self.points
            .iter()
            .zip(other.points.iter())
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Coordinate-wise mean of several sets.
    pub fn mean(sets: &[FiducialSet]) -> Result<FiducialSet> {
        if sets.is_empty() {
            return Err(Error::Empty("fiducial sets".into()));
        }
        let n = sets.len() as f64;
        let mut acc = vec![[0.0f64; 2]; FIDUCIAL_COUNT];
        for s in sets {
            for (a, p) in acc.iter_mut().zip(s.points.iter()) {
                a[0] += p[0];
                a[1] += p[1];
            }
        }
        for a in &mut acc {
            a[0] /= n;
            a[1] /= n;
        }
        FiducialSet::new(acc)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> FiducialSet {
        let points = self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        FiducialSet::new(points).expect("translation preserves validity")
    }

    /// Reads the landmark CSV format: `x,y` per row, exactly 49 data rows,
    /// optional header.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn parse_csv(text: &str) -> std::result::Result<Self, String> {
        let mut points = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let xs = cols.next().map(str::trim).unwrap_or("");
            let ys = cols.next().map(str::trim).unwrap_or("");
            match (xs.parse::<f64>(), ys.parse::<f64>()) {
                (Ok(x), Ok(y)) => points.push([x, y]),
                _ if ln == 0 && points.is_empty() => continue, // header row
                _ => return Err(format!("line {}: expected `x,y`, got `{line}`", ln + 1)),
            }
        }
        if points.len() != FIDUCIAL_COUNT {
            return Err(format!(
                "expected {FIDUCIAL_COUNT} landmark rows, got {}",
                points.len()
            ));
        }
        FiducialSet::new(points).map_err(|e| e.to_string())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("x,y\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p[0], p[1]));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
