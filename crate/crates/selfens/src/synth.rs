//! Synthetic grayscale dataset for desk-scale experiments: two classes of
//! soft ellipses, wide versus tall. The discriminative cue is the
//! elongation axis, which survives the train-time perturbations (flips,
//! small crops, brightness shifts), while position, size, contrast, and
//! background vary as nuisance factors. Records are grouped into
//! subjects that share their nuisance draw, so subject-disjoint splits
//! are meaningful.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfens_core::augment::Image;

use crate::error::{Error, Result};
use crate::imageio::save_pgm;
use crate::manifest::{Manifest, Record};

pub const SYNTH_SIZE: usize = 40;
pub const IMAGES_PER_SUBJECT: usize = 5;

struct Subject {
    background: f32,
    bg_slope: f32,
    foreground: f32,
    radius: f32,
    noise: f32,
}

/// Soft-edged blob membership for a point in ellipse coordinates.
fn soft_inside(d: f32, edge: f32) -> f32 {
    1.0 / (1.0 + ((d - 1.0) / edge).exp())
}

fn render(s: &Subject, class: usize, rng: &mut ChaCha8Rng) -> Image {
    let n = SYNTH_SIZE as f32;
    let cx = n / 2.0 + rng.random_range(-4.0..4.0);
    let cy = n / 2.0 + rng.random_range(-4.0..4.0);
    let elongation = rng.random_range(1.2..1.45);
    // class 0: wide (rx > ry), class 1: tall
    let (rx, ry) = if class == 0 {
        (s.radius * elongation, s.radius)
    } else {
        (s.radius, s.radius * elongation)
    };
    // small rotation keeps the elongation axis ambiguous near the margin
    let theta = rng.random_range(-0.45f32..0.45);
    let (sin_t, cos_t) = theta.sin_cos();
    let softness = rng.random_range(0.6..1.4);
    let edge = softness / s.radius.max(1.0);

    // class-free distractor blobs
    let blobs: Vec<(f32, f32, f32, f32)> = (0..rng.random_range(2..=4))
        .map(|_| {
            (
                rng.random_range(3.0..n - 3.0),
                rng.random_range(3.0..n - 3.0),
                rng.random_range(2.0..5.0),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();

    let mut pixels = Vec::with_capacity(SYNTH_SIZE * SYNTH_SIZE);
    for y in 0..SYNTH_SIZE {
        for x in 0..SYNTH_SIZE {
            let bg = s.background + s.bg_slope * (y as f32 / n - 0.5);
            let rel_x = x as f32 - cx;
            let rel_y = y as f32 - cy;
            let dx = (rel_x * cos_t + rel_y * sin_t) / rx;
            let dy = (-rel_x * sin_t + rel_y * cos_t) / ry;
            let d = (dx * dx + dy * dy).sqrt();
            let mut inside = soft_inside(d, edge);
            for &(bx, by, br, bw) in &blobs {
                let bd = ((x as f32 - bx).powi(2) + (y as f32 - by).powi(2)).sqrt() / br;
                inside = inside.max(bw * soft_inside(bd, edge));
            }
            let v = bg + (s.foreground - bg) * inside + rng.random_range(-s.noise..s.noise);
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    Image { width: SYNTH_SIZE, height: SYNTH_SIZE, channels: 1, pixels }
}

/// Write `count` PGM images plus a manifest into `dir`, deterministically
/// from the seed. Classes alternate by subject so both stay balanced.
pub fn generate_synthetic(dir: &Path, count: usize, seed: u64) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::Usage("synth-gen: count must be positive".into()));
    }
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(count);
    let classes = vec!["wide".to_string(), "tall".to_string()];
    let mut i = 0;
    let mut subject_id = 0;
    while i < count {
        let class = subject_id % 2;
        let subject = Subject {
            background: rng.random_range(0.1..0.4),
            bg_slope: rng.random_range(-0.15..0.15),
            foreground: rng.random_range(0.45..0.8),
            radius: rng.random_range(5.0..8.0),
            noise: rng.random_range(0.09..0.16),
        };
        for _ in 0..IMAGES_PER_SUBJECT {
            if i >= count {
                break;
            }
            let img = render(&subject, class, &mut rng);
            let name = format!("img{i:05}.pgm");
            save_pgm(&dir.join(&name), &img)?;
            records.push(Record {
                path: name,
                label: Some(class),
                subject: Some(format!("subj{subject_id:04}")),
            });
            i += 1;
        }
        subject_id += 1;
    }
    let manifest = Manifest { root: dir.to_path_buf(), classes, records };
    crate::manifest::save_manifest(&dir.join("manifest.csv"), &manifest)?;
    Ok(manifest)
}
