//! Debug PNG renderer. Each cell becomes an 8x8 block in its color; glyphs
//! are drawn as a small darker mark so that digit changes stay visible.
//! Output is for humans only and is not part of any contract.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::palette::RGB;
use super::Observation;

pub const CELL_PX: u32 = 8;

pub fn render(obs: &Observation) -> RgbImage {
    let mut img = RgbImage::new(obs.width() as u32 * CELL_PX, obs.height() as u32 * CELL_PX);
    for row in 0..obs.height() {
        for col in 0..obs.width() {
            let cell = obs.cell(col, row);
            let base = RGB.get(cell.color as usize).copied().unwrap_or([255, 0, 255]);
            let mark = [base[0] / 2, base[1] / 2, base[2] / 2];
            for dy in 0..CELL_PX {
                for dx in 0..CELL_PX {
                    // glyph bits pick which of the inner 4x4 pixels are marked
                    let inner = (2..6).contains(&dx) && (2..6).contains(&dy);
                    let marked = inner && !cell.is_background() && {
                        let bit = ((dy - 2) * 4 + (dx - 2)) as u16;
                        (cell.glyph >> bit) & 1 == 1
                    };
                    let px = if marked { mark } else { base };
                    img.put_pixel(col as u32 * CELL_PX + dx, row as u32 * CELL_PX + dy, Rgb(px));
                }
            }
        }
    }
    img
}

pub fn write_png(obs: &Observation, path: impl AsRef<Path>) -> image::ImageResult<()> {
    render(obs).save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_env, EnvId};

    #[test]
    fn png_has_expected_size() {
        let env = make_env(EnvId::MicroSpire, 1);
        let img = render(&env.observe());
        assert_eq!(img.dimensions(), (24 * 8, 16 * 8));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("spire.png");
        write_png(&env.observe(), &p).unwrap();
        assert!(std::fs::metadata(&p).unwrap().len() > 0);
    }
}
