//! Occupancy map files: binary graymap plus a map_server style sidecar.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::global::{GlobalMap, GridPatch};
use super::MappingError;

/// P5 image of a full-extent block; row 0 is the northernmost row.
pub fn patch_to_pgm(p: &GridPatch) -> Vec<u8> {
    let (w, h) = (p.rect.width as usize, p.rect.height as usize);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h);
    for row in (0..h).rev() {
        out.extend(p.cells[row * w..(row + 1) * w].iter().map(|c| c.pgm_value()));
    }
    out
}

pub fn export_pgm(map: &GlobalMap) -> Result<Vec<u8>, MappingError> {
    if map.is_empty() {
        return Err(MappingError::EmptyMap);
    }
    Ok(patch_to_pgm(&map.snapshot()))
}

pub fn export_yaml(map: &GlobalMap, image: &str) -> Result<String, MappingError> {
    if map.is_empty() {
        return Err(MappingError::EmptyMap);
    }
    let e = map.extent();
    let (ox, oy) = map.cell_corner(e.x, e.y);
    let mut s = String::new();
    let _ = writeln!(s, "image: {image}");
    let _ = writeln!(s, "resolution: {:.6}", map.resolution());
    let _ = writeln!(s, "origin: [{ox:.6}, {oy:.6}, 0.0]");
    let _ = writeln!(s, "width: {}", e.width);
    let _ = writeln!(s, "height: {}", e.height);
    let _ = writeln!(s, "negate: 0");
    let _ = writeln!(s, "occupied_thresh: 0.65");
    let _ = writeln!(s, "free_thresh: 0.196");
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapFiles {
    pub pgm: PathBuf,
    pub yaml: PathBuf,
}

/// Writes `<stem>.pgm` and `<stem>.yaml` into `dir`.
pub fn save_map(map: &GlobalMap, dir: &Path, stem: &str) -> Result<MapFiles, MappingError> {
    let image = format!("{stem}.pgm");
    let files = MapFiles {
        pgm: dir.join(&image),
        yaml: dir.join(format!("{stem}.yaml")),
    };
    let pgm = export_pgm(map)?;
    let yaml = export_yaml(map, &image)?;
    std::fs::write(&files.pgm, pgm).map_err(|source| MappingError::Io {
        path: files.pgm.clone(),
        source,
    })?;
    std::fs::write(&files.yaml, yaml).map_err(|source| MappingError::Io {
        path: files.yaml.clone(),
        source,
    })?;
    Ok(files)
}
