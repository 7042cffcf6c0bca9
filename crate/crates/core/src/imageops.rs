//! Image tensors are `[N, 3, H, W]` with values in `[-1, 1]`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::warp::sample::{canonical_grid, grid_sample};

/// Differentiable resize. Integer downscale factors use box averaging;
/// anything else is bilinear resampling at pixel centers.
pub fn resize(images: &Tensor, size: usize) -> Result<Tensor> {
    let (n, _, h, w) = images.dims4()?;
    if h == size && w == size {
        return Ok(images.clone());
    }
    if h == w && h > size && h % size == 0 {
        let k = h / size;
        return Ok(images.avg_pool2d(k)?);
    }
    let grid = canonical_grid(size, size, images.dtype(), images.device())?
        .unsqueeze(0)?
        .broadcast_as((n, size, size, 2))?
        .contiguous()?;
    grid_sample(images, &grid)
}

pub fn load_image(path: &Path, device: &Device) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "image not found"),
        ));
    }
    let img = image::open(path)?.to_rgb8();
    rgb_to_tensor(&img, device)
}

/// Load and resize to a square `size × size` image.
pub fn load_image_resized(path: &Path, size: usize, device: &Device) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "image not found"),
        ));
    }
    let img = image::open(path)?.to_rgb8();
    let img = if img.width() as usize != size || img.height() as usize != size {
        image::imageops::resize(&img, size as u32, size as u32, image::imageops::FilterType::Triangle)
    } else {
        img
    };
    rgb_to_tensor(&img, device)
}

pub fn rgb_to_tensor(img: &RgbImage, device: &Device) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (1, 3, h, w), device)?)
}

/// First image of a batch as 8-bit RGB.
pub fn tensor_to_rgb(image: &Tensor) -> Result<RgbImage> {
    let img = if image.rank() == 4 {
        image.get(0)?
    } else {
        image.clone()
    };
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let data = img.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut out: RgbImage = ImageBuffer::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for (ch, p) in px.iter_mut().enumerate() {
                let v = data[ch * h * w + y * w + x];
                *p = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    Ok(out)
}

pub fn save_image(image: &Tensor, path: &Path) -> Result<()> {
    let rgb = tensor_to_rgb(image)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    rgb.save(path)?;
    Ok(())
}

/// Soft elliptical color blob on a flat background, `[1, 3, size, size]`.
/// `center` and `radii` are in normalized coordinates.
pub fn synthetic_blob(
    size: usize,
    center: (f64, f64),
    radii: (f64, f64),
    color: [f64; 3],
    background: [f64; 3],
    device: &Device,
) -> Result<Tensor> {
    let mut data = vec![0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let u = (2 * x + 1) as f64 / size as f64 - 1.0;
            let v = (2 * y + 1) as f64 / size as f64 - 1.0;
            let r2 = ((u - center.0) / radii.0).powi(2) + ((v - center.1) / radii.1).powi(2);
            let m = 1.0 / (1.0 + (8.0 * (r2 - 1.0)).exp());
            for c in 0..3 {
                data[c * size * size + y * size + x] = (m * color[c] + (1.0 - m) * background[c]) as f32;
            }
        }
    }
    Ok(Tensor::from_vec(data, (1, 3, size, size), device)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_roundtrip_is_lossless_on_u8_grid() {
        let mut img: RgbImage = ImageBuffer::new(4, 3);
        for (x, y, px) in img.enumerate_pixels_mut() {
            *px = Rgb([(x * 60) as u8, (y * 80) as u8, 200]);
        }
        let t = rgb_to_tensor(&img, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 3, 4]);
        assert_eq!(tensor_to_rgb(&t).unwrap(), img);
    }

    #[test]
    fn box_downscale_averages() {
        let t = Tensor::arange(0f32, 16.0, &Device::Cpu).unwrap().reshape((1, 1, 4, 4)).unwrap();
        let r = resize(&t, 2).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(r, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn missing_image_names_path() {
        let err = load_image(Path::new("/nonexistent/face.png"), &Device::Cpu).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/face.png"));
    }
}
