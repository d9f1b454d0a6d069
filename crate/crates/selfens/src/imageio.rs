//! Image file IO: PNG and binary PPM/PGM in, PGM out. Pixel values map
//! to [0,1] by dividing by 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use selfens_core::augment::Image;

use crate::error::{Error, Result};

pub fn load_image(path: &Path) -> Result<Image> {
    let dynimg = image::open(path)
        .map_err(|e| Error::Data(format!("{}: cannot decode image: {e}", path.display())))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let img = match dynimg {
        image::DynamicImage::ImageLuma8(buf) => Image::new(
            w,
            h,
            1,
            buf.into_raw().into_iter().map(|p| p as f32 / 255.0).collect(),
        ),
        other => {
            let rgb = other.to_rgb8();
            Image::new(w, h, 3, rgb.into_raw().into_iter().map(|p| p as f32 / 255.0).collect())
        }
    };
    img.map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Binary PGM (P5, maxval 255), written byte-for-byte deterministically.
pub fn save_pgm(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::Data(format!("{}: PGM output needs 1 channel", path.display())));
    }
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut f = fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(&bytes).map_err(Error::io(path))
}
