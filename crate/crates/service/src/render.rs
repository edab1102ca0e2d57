//! Procedural shot thumbnails. Each tag is drawn as a colored glyph whose
//! color depends only on the tag name; placement and background come from
//! the video's thumbnail seed and the shot index.

use std::io::Cursor;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, ImageFormat, Rgb, RgbImage, Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WIDTH: u32 = 96;
pub const HEIGHT: u32 = 64;
pub const GIF_FRAMES: usize = 6;
pub const GIF_DELAY_MS: u32 = 120;

const GLYPH: u32 = 18;

fn tag_color(tag: &str) -> [u8; 3] {
    // FNV-1a keeps a tag's color stable across videos and runs
    let h = tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    let channel = |shift: u32| 96 + ((h >> shift) & 0x7f) as u8;
    [channel(0), channel(8), channel(16)]
}

struct Layout {
    background: [u8; 3],
    glyphs: Vec<(u32, u32, [u8; 3], bool)>,
    drift: i32,
}

fn layout(seed: u64, shot: usize, tags: &[String]) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (shot as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let shade = rng.random_range(16..48u8);
    let background = [
        shade,
        shade + rng.random_range(0..16u8),
        shade + rng.random_range(0..24u8),
    ];
    let glyphs = tags
        .iter()
        .map(|t| {
            let x = rng.random_range(2..WIDTH - GLYPH - 2);
            let y = rng.random_range(2..HEIGHT - GLYPH - 2);
            (x, y, tag_color(t), rng.random_bool(0.5))
        })
        .collect();
    Layout {
        background,
        glyphs,
        drift: rng.random_range(-2..=2),
    }
}

fn draw(l: &Layout, frame: usize) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb(l.background));
    for &(x0, y0, color, round) in &l.glyphs {
        let dx = l.drift * frame as i32;
        for y in 0..GLYPH {
            for x in 0..GLYPH {
                let (cx, cy) = (x as i32 - GLYPH as i32 / 2, y as i32 - GLYPH as i32 / 2);
                if round && cx * cx + cy * cy > (GLYPH as i32 / 2).pow(2) {
                    continue;
                }
                let px = (x0 + x) as i32 + dx;
                if (0..WIDTH as i32).contains(&px) {
                    img.put_pixel(px as u32, y0 + y, Rgb(color));
                }
            }
        }
    }
    img
}

/// PNG still of one shot.
pub fn frame_png(seed: u64, shot: usize, tags: &[String]) -> Vec<u8> {
    let img = draw(&layout(seed, shot, tags), 0);
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png encodes to memory");
    out.into_inner()
}

/// Looping animation of one shot: the glyphs drift across a few frames.
pub fn shot_gif(seed: u64, shot: usize, tags: &[String]) -> Vec<u8> {
    let l = layout(seed, shot, tags);
    let mut out = Vec::new();
    {
        let mut enc = GifEncoder::new(&mut out);
        enc.set_repeat(Repeat::Infinite).expect("gif header");
        for f in 0..GIF_FRAMES {
            let rgb = draw(&l, f);
            let rgba = RgbaImage::from_fn(WIDTH, HEIGHT, |x, y| {
                let p = rgb.get_pixel(x, y).0;
                Rgba([p[0], p[1], p[2], 255])
            });
            let delay = Delay::from_numer_denom_ms(GIF_DELAY_MS, 1);
            enc.encode_frame(Frame::from_parts(rgba, 0, 0, delay))
                .expect("gif frame");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags() -> Vec<String> {
        vec!["dog".into(), "beach".into()]
    }

    #[test]
    fn png_is_deterministic_and_decodes() {
        let a = frame_png(7, 3, &tags());
        assert_eq!(a, frame_png(7, 3, &tags()));
        assert_ne!(a, frame_png(7, 4, &tags()));
        assert_ne!(a, frame_png(8, 3, &tags()));
        let img = image::load_from_memory_with_format(&a, ImageFormat::Png).unwrap();
        assert_eq!((img.width(), img.height()), (WIDTH, HEIGHT));
    }

    #[test]
    fn gif_is_deterministic_and_animated() {
        let a = shot_gif(7, 3, &tags());
        assert_eq!(a, shot_gif(7, 3, &tags()));
        assert_eq!(&a[..6], b"GIF89a");
        use image::AnimationDecoder;
        let frames = image::codecs::gif::GifDecoder::new(Cursor::new(&a))
            .unwrap()
            .into_frames()
            .collect_frames()
            .unwrap();
        assert_eq!(frames.len(), GIF_FRAMES);
    }

    #[test]
    fn tag_colors_are_stable() {
        assert_eq!(tag_color("dog"), tag_color("dog"));
        assert_ne!(tag_color("dog"), tag_color("beach"));
        let empty = frame_png(1, 0, &[]);
        assert!(!empty.is_empty());
    }
}
