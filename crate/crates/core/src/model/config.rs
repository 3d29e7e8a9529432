use serde::{Deserialize, Serialize};

use super::ModelError;

/// Encoder topology and output ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Channels of the stem and of each down-sampling stage. Every stage
    /// after the first halves the resolution.
    pub channels: Vec<usize>,
    pub latent: usize,
    pub parts: usize,
    pub image_size: usize,
    /// Camera-frame depth range of the depth maps.
    pub depth_range: (f64, f64),
    pub subdivision: u32,
}

impl EncoderConfig {
    /// Small network for CPU training on 64×64 images.
    pub fn desk(camera_distance: f64) -> Self {
        Self {
            channels: vec![8, 16, 32, 64],
            latent: 64,
            parts: 5,
            image_size: 64,
            depth_range: (camera_distance - 1.5, camera_distance + 1.5),
            subdivision: 2,
        }
    }

    /// Full-width channels and nine parts.
    pub fn paper(camera_distance: f64) -> Self {
        Self {
            channels: vec![64, 128, 256, 512],
            latent: 256,
            parts: 9,
            image_size: 128,
            depth_range: (camera_distance - 1.5, camera_distance + 1.5),
            subdivision: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.channels.len() < 2 || self.channels.contains(&0) {
            return bad(format!("need at least two nonzero stages, got {:?}", self.channels));
        }
        if self.parts == 0 || self.latent == 0 {
            return bad("parts and latent width must be positive".into());
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad(format!("depth range ({lo}, {hi}) must satisfy 0 < min < max"));
        }
        let stride = 1usize << (self.channels.len() - 1);
        if self.image_size == 0 || self.image_size % stride != 0 {
            return bad(format!(
                "image size {} must be a positive multiple of {stride}",
                self.image_size
            ));
        }
        if self.subdivision > crate::geometry::MAX_LEVEL {
            return bad(format!("subdivision {} too large", self.subdivision));
        }
        Ok(())
    }

    /// Vertices of the shared icosphere.
    pub fn vertices_per_part(&self) -> usize {
        10 * 4usize.pow(self.subdivision) + 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        EncoderConfig::desk(4.0).validate().unwrap();
        EncoderConfig::paper(4.0).validate().unwrap();
        assert_eq!(EncoderConfig::desk(4.0).vertices_per_part(), 162);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = EncoderConfig::desk(4.0);
        c.parts = 0;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::desk(4.0);
        c.depth_range = (0.0, 1.0);
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::desk(4.0);
        c.channels = vec![8];
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::desk(4.0);
        c.image_size = 60;
        assert!(c.validate().is_err());
    }
}
