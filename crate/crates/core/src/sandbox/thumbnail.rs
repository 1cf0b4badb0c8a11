use std::io::Cursor;

use image::ImageFormat;

/// Longest edge of generated thumbnails.
pub const THUMBNAIL_EDGE: u32 = 256;

/// Decodes an image and re-encodes it as a PNG no larger than
/// [`THUMBNAIL_EDGE`] on its longest side. Smaller images are not upscaled.
pub fn make_thumbnail(bytes: &[u8]) -> Option<Vec<u8>> {
    let img = image::load_from_memory(bytes).ok()?;
    let img = if img.width() > THUMBNAIL_EDGE || img.height() > THUMBNAIL_EDGE {
        img.thumbnail(THUMBNAIL_EDGE, THUMBNAIL_EDGE)
    } else {
        img
    };
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).ok()?;
    Some(out.into_inner())
}
