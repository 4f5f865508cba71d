//! ASCII PLY export with per-vertex colors, for viewing labelings.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::scene::SceneCloud;

pub const SENTINEL_GRAY: [u8; 3] = [128, 128, 128];

/// How vertex colors are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    /// Color derived from a hash of the label id; negative ids are gray.
    HashedId,
    /// The cloud's own RGB, labels ignored.
    Original,
}

/// Stable color for a label id. Negative ids (unassigned, ignored) map to gray.
pub fn id_color(id: i32) -> [u8; 3] {
    if id < 0 {
        return SENTINEL_GRAY;
    }
    // splitmix64 finalizer
    let mut z = (id as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    // keep channels away from the sentinel and from near-black
    let ch = |shift: u32| 48 + ((z >> shift) & 0xFF) as u8 % 208;
    let c = [ch(0), ch(8), ch(16)];
    if c == SENTINEL_GRAY {
        [c[0], c[1], c[2] ^ 0x40]
    } else {
        c
    }
}

pub fn ply_string(cloud: &SceneCloud, labels: &[i32], colormap: Colormap) -> Result<String> {
    if labels.len() != cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            cloud.len()
        )));
    }
    let mut s = String::with_capacity(64 * cloud.len() + 256);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "comment scene {}", cloud.scene_id());
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    s.push_str("end_header\n");
    for (n, p) in cloud.positions().iter().enumerate() {
        let c = match colormap {
            Colormap::HashedId => id_color(labels[n]),
            Colormap::Original => cloud.colors()[n],
        };
        let _ = writeln!(s, "{} {} {} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]);
    }
    Ok(s)
}

pub fn export_ply(path: impl AsRef<Path>, cloud: &SceneCloud, labels: &[i32], colormap: Colormap) -> Result<()> {
    let path = path.as_ref();
    let text = ply_string(cloud, labels, colormap)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads back the vertex block of an ASCII PLY written by [`export_ply`]
/// (x y z red green blue per vertex).
pub fn parse_ply_ascii(text: &str, origin: &str) -> Result<(Vec<Point3<f64>>, Vec<[u8; 3]>)> {
    let mut offset = 0u64;
    let mut lines = text.lines();
    let mut count = None;
    let mut properties = 0usize;
    let mut saw_magic = false;
    for line in lines.by_ref() {
        let here = offset;
        offset += line.len() as u64 + 1;
        let t = line.trim();
        if !saw_magic {
            if t != "ply" {
                return Err(Error::parse(origin, here, "missing `ply` magic"));
            }
            saw_magic = true;
            continue;
        }
        if t == "end_header" {
            break;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        match fields.as_slice() {
            ["format", fmt, _] if *fmt != "ascii" => {
                return Err(Error::parse(origin, here, format!("unsupported PLY format `{fmt}`")))
            }
            ["element", "vertex", n] => {
                count = Some(
                    n.parse::<usize>()
                        .map_err(|e| Error::parse(origin, here, format!("bad vertex count: {e}")))?,
                )
            }
            ["property", ..] => properties += 1,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::parse(origin, offset, "no vertex element"))?;
    if properties != 6 {
        return Err(Error::parse(origin, offset, format!("expected 6 vertex properties, found {properties}")));
    }
    let mut positions = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for line in lines.take(count) {
        let here = offset;
        offset += line.len() as u64 + 1;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::parse(origin, here, format!("vertex row has {} fields", f.len())));
        }
        let coord = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(origin, here, format!("bad coordinate `{s}`: {e}")));
        let channel = |s: &str| s.parse::<u8>().map_err(|e| Error::parse(origin, here, format!("bad color `{s}`: {e}")));
        positions.push(Point3::new(coord(f[0])?, coord(f[1])?, coord(f[2])?));
        colors.push([channel(f[3])?, channel(f[4])?, channel(f[5])?]);
    }
    if positions.len() != count {
        return Err(Error::parse(origin, offset, format!("expected {count} vertices, found {}", positions.len())));
    }
    Ok((positions, colors))
}

pub fn read_ply_ascii(path: impl AsRef<Path>) -> Result<(Vec<Point3<f64>>, Vec<[u8; 3]>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply_ascii(&text, &path.display().to_string())
}
