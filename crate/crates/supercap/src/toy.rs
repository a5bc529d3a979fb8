//! A tiny synthetic captioning set: eight coloured shapes with one caption each.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use supercap_core::imaging::Image;

use crate::imageio::save_png;

pub const SIZE: usize = 32;

const COLOURS: [([u8; 3], &str); 4] =
    [([220, 30, 30], "red"), ([30, 160, 40], "green"), ([40, 60, 220], "blue"), ([230, 210, 40], "yellow")];

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub name: String,
    pub image: Image,
    pub caption: String,
}

/// Squares on white and discs on black, one per colour.
pub fn samples() -> Vec<ToySample> {
    let mut out = Vec::with_capacity(8);
    for (rgb, colour) in COLOURS {
        for disc in [false, true] {
            let background = if disc { [20, 20, 20] } else { [250, 250, 250] };
            let image = Image::from_fn(SIZE, SIZE, |x, y| {
                let (dx, dy) = (x as i64 - 16, y as i64 - 16);
                let inside = if disc { dx * dx + dy * dy < 81 } else { (8..24).contains(&x) && (8..24).contains(&y) };
                if inside {
                    rgb
                } else {
                    background
                }
            })
            .expect("non-empty image");
            let (shape, ground) = if disc { ("circle", "black") } else { ("square", "white") };
            out.push(ToySample {
                name: format!("{colour}_{shape}"),
                image,
                caption: format!("a {colour} {shape} on a {ground} background"),
            });
        }
    }
    out
}

/// Writes `images/*.png` and a Karpathy-layout `dataset.json` with every image in the
/// train split. Returns the JSON path.
pub fn write_dataset(dir: impl AsRef<Path>) -> anyhow::Result<PathBuf> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    let mut entries = Vec::new();
    for (i, s) in samples().into_iter().enumerate() {
        let file = format!("{}.png", s.name);
        save_png(&s.image, images.join(&file))?;
        let tokens: Vec<String> = supercap_core::text::tokenize(&s.caption);
        entries.push(json!({
            "imgid": i,
            "filename": file,
            "split": "train",
            "sentences": [{"raw": s.caption, "tokens": tokens}],
        }));
    }
    let path = dir.join("dataset.json");
    fs::write(&path, serde_json::to_string_pretty(&json!({ "images": entries }))?)?;
    Ok(path)
}
