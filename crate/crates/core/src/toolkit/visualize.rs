use std::path::{Path, PathBuf};

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::semantics::{pca_visualize, Encoder, Level};

pub const PCA_COMPONENTS: usize = 3;

pub fn pca_file_name(stem: &str, level: Level) -> String {
    format!("{stem}_pca_L{}.png", level.layer())
}

/// Write one PCA color map per image and level, fitted jointly over all
/// images of that level. Returns the written paths.
pub fn visualize_features(
    encoder: &Encoder,
    images: &[(String, Tensor)],
    levels: &[Level],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if images.is_empty() {
        return Err(Error::invalid("no images to visualize"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let tensors: Vec<Tensor> = images.iter().map(|(_, t)| t.clone()).collect();
    let mut written = Vec::new();
    for &level in levels {
        let vis = pca_visualize(encoder, &tensors, level, PCA_COMPONENTS)?;
        for ((stem, _), map) in images.iter().zip(&vis.maps) {
            let path = out_dir.join(pca_file_name(stem, level));
            map.save(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}
