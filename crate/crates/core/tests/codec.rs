use crowdenhance_core::imaging::{decode_image, encode_png, load_image, save_image, Image};
use crowdenhance_core::Error;

fn gradient() -> Image {
    Image::from_fn(7, 5, |x, y| [x as f32 / 6.0, y as f32 / 4.0, 0.5]).unwrap()
}

#[test]
fn png_round_trip_is_8_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.png");
    let img = gradient();
    save_image(&img, &path).unwrap();
    let back = load_image(&path).unwrap();
    assert_eq!((back.width(), back.height()), (7, 5));
    for (a, b) in img.pixels().iter().zip(back.pixels()) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
    assert_eq!(encode_png(&back), encode_png(&load_image(&path).unwrap()));
}

#[test]
fn jpeg_decodes() {
    let rgb = gradient().to_rgb8();
    let mut bytes = std::io::Cursor::new(Vec::new());
    rgb.write_to(&mut bytes, image::ImageFormat::Jpeg).unwrap();
    let img = decode_image(bytes.get_ref()).unwrap();
    assert_eq!((img.width(), img.height()), (7, 5));
}

#[test]
fn unsupported_and_missing_inputs() {
    assert!(matches!(decode_image(b"GIF89a......"), Err(Error::UnsupportedFormat(_))));
    assert!(matches!(load_image("/nonexistent/file.png"), Err(Error::Unreadable { .. })));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("missing-dir").join("out.png");
    assert!(matches!(save_image(&gradient(), &bad), Err(Error::Unwritable { .. })));
}
