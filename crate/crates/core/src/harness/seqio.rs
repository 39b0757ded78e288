//! Sequence directories in the common RGB-T benchmark layout:
//! `visible/` and `infrared/` image folders plus a ground-truth text file,
//! one `x,y,w,h` line per frame (comma or tab separated). Two-corner files
//! (`x1,y1,x2,y2`) are detected heuristically and converted.

use crate::backbone::{FramePair, ImageTensor, Modality};
use crate::datanet::AttentionMap;
use crate::geom::BoundingBox;
use crate::harness::SequenceRecord;
use crate::{Error, Result};
use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};
use std::path::{Path, PathBuf};

const GT_CANDIDATES: &[&str] = &["groundtruth.txt", "groundTruth.txt", "init.txt", "gt.txt"];

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image_rgb(img: &Array3<f64>, path: &Path) -> Result<()> {
    let (_, h, w) = img.dim();
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    to_u8(img[[0, y, x]]),
                    to_u8(img[[1, y, x]]),
                    to_u8(img[[2, y, x]]),
                ]),
            );
        }
    }
    out.save(path)?;
    Ok(())
}

pub fn save_image_gray(img: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = img.dim();
    let mut out = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(x as u32, y as u32, image::Luma([to_u8(img[[y, x]])]));
        }
    }
    out.save(path)?;
    Ok(())
}

/// Attention maps export as 8-bit grayscale.
pub fn save_attention(att: &AttentionMap, path: &Path) -> Result<()> {
    save_image_gray(&att.data, path)
}

fn load_image(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = p.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Write a sequence as a benchmark-layout directory.
pub fn save_sequence(dir: &Path, seq: &SequenceRecord) -> Result<()> {
    std::fs::create_dir_all(dir.join("visible"))?;
    std::fs::create_dir_all(dir.join("infrared"))?;
    for (i, pair) in seq.frames.iter().enumerate() {
        save_image_rgb(&pair.visible.data, &dir.join(format!("visible/{i:05}.png")))?;
        let gray = crate::imgutil::gray_from_rgb(&pair.thermal.data);
        save_image_gray(&gray, &dir.join(format!("infrared/{i:05}.png")))?;
    }
    save_boxes(&dir.join("groundtruth.txt"), &seq.gt)?;
    if !seq.tags.is_empty() {
        std::fs::write(dir.join("tags.txt"), seq.tags.join("\n"))?;
    }
    Ok(())
}

/// One `x,y,w,h` line per box, the common result/ground-truth format.
pub fn save_boxes(path: &Path, boxes: &[BoundingBox]) -> Result<()> {
    let mut text = String::new();
    for b in boxes {
        text.push_str(&format!("{},{},{},{}\n", b.x, b.y, b.w, b.h));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_line(line: &str, file: &str, lineno: usize) -> Result<[f64; 4]> {
    let fields: Vec<&str> = line
        .split(|c: char| c == ',' || c == '\t' || c == ' ')
        .filter(|s| !s.is_empty())
        .collect();
    if fields.len() != 4 {
        return Err(Error::Parse {
            file: file.to_string(),
            line: lineno + 1,
            message: format!("expected 4 fields, got {}", fields.len()),
        });
    }
    let mut out = [0.0; 4];
    for (i, f) in fields.iter().enumerate() {
        out[i] = f.parse().map_err(|_| Error::Parse {
            file: file.to_string(),
            line: lineno + 1,
            message: format!("bad number `{f}`"),
        })?;
    }
    Ok(out)
}

/// Load boxes, with two-corner detection: a file where every line satisfies
/// `c > a, d > b` and at least one `(w,h)` reading overflows the image bounds
/// is treated as corner format. Bounds of 0 disable the overflow check.
pub fn load_boxes(path: &Path, img_w: usize, img_h: usize) -> Result<Vec<BoundingBox>> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        raw.push(parse_line(line, &file, lineno)?);
    }
    if raw.is_empty() {
        return Err(Error::Sequence(format!("{file}: no boxes")));
    }

    let all_corner_like = raw.iter().all(|r| r[2] > r[0] && r[3] > r[1]);
    let wh_overflows = img_w > 0
        && img_h > 0
        && raw
            .iter()
            .any(|r| r[0] + r[2] > img_w as f64 + 0.5 || r[1] + r[3] > img_h as f64 + 0.5);
    let corner_format = all_corner_like && wh_overflows;

    raw.iter()
        .enumerate()
        .map(|(lineno, r)| {
            let (w, h) = if corner_format {
                (r[2] - r[0], r[3] - r[1])
            } else {
                (r[2], r[3])
            };
            if w <= 0.0 || h <= 0.0 {
                return Err(Error::Parse {
                    file: file.clone(),
                    line: lineno + 1,
                    message: format!("non-positive box size {w}x{h}"),
                });
            }
            Ok(BoundingBox::new(r[0], r[1], w, h))
        })
        .collect()
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|_| Error::Sequence(format!("missing folder {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png" | "jpg" | "jpeg" | "bmp")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Load a benchmark-layout sequence directory.
pub fn load_sequence(dir: &Path) -> Result<SequenceRecord> {
    let vis_files = sorted_images(&dir.join("visible"))?;
    let ir_files = sorted_images(&dir.join("infrared"))?;
    if vis_files.len() != ir_files.len() {
        return Err(Error::Sequence(format!(
            "{} visible frames vs {} infrared frames",
            vis_files.len(),
            ir_files.len()
        )));
    }
    if vis_files.is_empty() {
        return Err(Error::Sequence("no frames found".into()));
    }

    let mut frames = Vec::with_capacity(vis_files.len());
    for (vf, tf) in vis_files.iter().zip(ir_files.iter()) {
        let v = load_image(vf)?;
        let t = load_image(tf)?;
        let visible = ImageTensor::new(v, Modality::Visible)?;
        let thermal = ImageTensor::new(t, Modality::Thermal)?;
        frames.push(FramePair::new(visible, thermal)?);
    }
    let (w, h) = (frames[0].width(), frames[0].height());

    let gt_path = GT_CANDIDATES
        .iter()
        .map(|c| dir.join(c))
        .find(|p| p.exists())
        .ok_or_else(|| {
            Error::Sequence(format!(
                "no ground-truth file in {} (looked for {GT_CANDIDATES:?})",
                dir.display()
            ))
        })?;
    let gt = load_boxes(&gt_path, w, h)?;
    if gt.len() != frames.len() {
        return Err(Error::Sequence(format!(
            "{} frames but {} ground-truth lines",
            frames.len(),
            gt.len()
        )));
    }
    let tags = std::fs::read_to_string(dir.join("tags.txt"))
        .map(|t| t.lines().map(str::to_string).collect())
        .unwrap_or_default();
    SequenceRecord::new(frames, gt, tags)
}
