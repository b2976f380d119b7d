//! Loading photo collections from disk.
//!
//! A collection is a directory of PNG images where each `name.png` has a
//! sibling `name.csv` carrying its 49 landmark positions. Files that cannot
//! be used are skipped and reported rather than aborting the whole ingest;
//! an empty result is an error.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::core::fiducials::FiducialSet;
use crate::core::image::FaceImage;
use crate::error::{Error, Result};

/// One photo with its landmarks. `id` is the file stem and doubles as the
/// stable ordering key for everything downstream.
#[derive(Clone, Debug)]
pub struct PhotoRecord {
    pub id: String,
    pub path: PathBuf,
    pub image: FaceImage,
    pub fiducials: FiducialSet,
}

/// Photos sorted by id.
#[derive(Clone, Debug)]
pub struct PhotoCollection {
    records: Vec<PhotoRecord>,
}

impl PhotoCollection {
    pub fn new(mut records: Vec<PhotoRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("photo collection".into()));
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in records.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::InvalidInput(format!(
                    "duplicate photo id {:?}",
                    pair[0].id
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PhotoRecord] {
        &self.records
    }

    pub fn iter(&self) -> impl Iterator<Item = &PhotoRecord> {
        self.records.iter()
    }

    pub fn get(&self, idx: usize) -> &PhotoRecord {
        &self.records[idx]
    }

    /// Mean landmark set across the collection.
    pub fn mean_fiducials(&self) -> FiducialSet {
        let sets: Vec<FiducialSet> = self.records.iter().map(|r| r.fiducials.clone()).collect();
        FiducialSet::mean(&sets).expect("collections are never empty")
    }
}

/// What happened during an ingest: how many photos loaded and which files
/// were passed over, with the reason for each.
#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub loaded: usize,
    pub skipped: Vec<(PathBuf, String)>,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} photos loaded", self.loaded)?;
        if !self.skipped.is_empty() {
            write!(f, ", {} skipped:", self.skipped.len())?;
            for (path, reason) in &self.skipped {
                write!(f, "\n  {}: {reason}", path.display())?;
            }
        }
        Ok(())
    }
}

/// Load every usable `*.png` + `*.csv` pair in `dir`, in filename order.
pub fn load_photo_collection(dir: impl AsRef<Path>) -> Result<(PhotoCollection, IngestReport)> {
    let dir = dir.as_ref();
    let mut png_paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    png_paths.sort();

    let mut report = IngestReport::default();
    let mut records = Vec::with_capacity(png_paths.len());
    for path in png_paths {
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            report
                .skipped
                .push((path.clone(), "file stem is not valid UTF-8".into()));
            continue;
        };
        let csv_path = path.with_extension("csv");
        if !csv_path.exists() {
            report
                .skipped
                .push((path.clone(), format!("no landmark file {}", csv_path.display())));
            continue;
        }
        let image = match FaceImage::load_png(&path) {
            Ok(img) => img,
            Err(e) => {
                report.skipped.push((path.clone(), e.to_string()));
                continue;
            }
        };
        let fiducials = match FiducialSet::load_csv(&csv_path) {
            Ok(f) => f,
            Err(e) => {
                report.skipped.push((path.clone(), e.to_string()));
                continue;
            }
        };
        records.push(PhotoRecord {
            id: stem.to_string(),
            path,
            image,
            fiducials,
        });
    }
    report.loaded = records.len();
    if records.is_empty() {
        return Err(Error::Empty(format!(
            "no usable photos in {} ({})",
            dir.display(),
            report
        )));
    }
    Ok((PhotoCollection::new(records)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn fiducial_csv() -> String {
        (0..49)
            .map(|i| format!("{}.0,{}.5\n", 10 + i, 20 + i))
            .collect()
    }

    fn temp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("collection-{}-{name}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn write_photo(dir: &Path, stem: &str, with_csv: bool) {
        let img = FaceImage::filled(16, 16, [0.5, 0.5, 0.5]).unwrap();
        img.save_png(dir.join(format!("{stem}.png"))).unwrap();
        if with_csv {
            fs::write(dir.join(format!("{stem}.csv")), fiducial_csv()).unwrap();
        }
    }

    #[test]
    fn loads_pairs_in_filename_order() {
        let dir = temp_dir("order");
        write_photo(&dir, "b_photo", true);
        write_photo(&dir, "a_photo", true);
        write_photo(&dir, "c_photo", true);
        let (coll, report) = load_photo_collection(&dir).unwrap();
        assert_eq!(report.loaded, 3);
        assert!(report.skipped.is_empty());
        let ids: Vec<&str> = coll.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a_photo", "b_photo", "c_photo"]);
    }

    #[test]
    fn missing_landmarks_are_skipped_with_reason() {
        let dir = temp_dir("skip");
        write_photo(&dir, "good", true);
        write_photo(&dir, "lonely", false);
        fs::write(dir.join("broken.png"), b"not a png").unwrap();
        fs::write(dir.join("broken.csv"), fiducial_csv()).unwrap();
        let (coll, report) = load_photo_collection(&dir).unwrap();
        assert_eq!(coll.len(), 1);
        assert_eq!(report.skipped.len(), 2);
        let summary = report.to_string();
        assert!(summary.contains("lonely"), "{summary}");
        assert!(summary.contains("broken"), "{summary}");
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = temp_dir("empty");
        assert!(matches!(
            load_photo_collection(&dir),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let img = FaceImage::filled(16, 16, [0.1; 3]).unwrap();
        let fid = FiducialSet::parse_csv(&fiducial_csv()).unwrap();
        let rec = |id: &str| PhotoRecord {
            id: id.into(),
            path: PathBuf::from(format!("{id}.png")),
            image: img.clone(),
            fiducials: fid.clone(),
        };
        assert!(PhotoCollection::new(vec![rec("x"), rec("x")]).is_err());
    }
}
