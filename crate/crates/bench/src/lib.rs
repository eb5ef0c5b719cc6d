//! Fixtures shared by the criterion benches.

use securepose::csi2pose::{PoseModel, PoseNetConfig};
use securepose::detector::{DetectorConfig, DetectorModel};
use securepose::evalkit::gop_features;
use securepose::localizer::GopFeatures;
use securepose::scene_sim::{generate_dataset, DatasetConfig, GopLabel, GopSample};

/// Default-sized untrained models and a few GOPs; timing does not depend on the weights.
pub struct Fixture {
    pub dataset: DatasetConfig,
    pub pose: PoseModel,
    pub detector: DetectorModel,
    pub samples: Vec<GopSample>,
}

impl Fixture {
    pub fn new(gops: usize) -> Self {
        let dataset = DatasetConfig {
            gops,
            min_people: 1,
            ..DatasetConfig::default()
        };
        let samples = generate_dataset(&dataset, 0).expect("dataset").samples;
        Fixture {
            pose: PoseModel::init(PoseNetConfig::default(), 1).expect("pose model"),
            detector: DetectorModel::init(DetectorConfig::default(), 2).expect("detector"),
            dataset,
            samples,
        }
    }

    pub fn forged(&self) -> &GopSample {
        self.samples
            .iter()
            .find(|s| s.label == GopLabel::Tampering)
            .unwrap_or(&self.samples[0])
    }

    pub fn features(&self, sample: &GopSample) -> GopFeatures {
        gop_features(&self.pose, sample, &self.dataset.visual).expect("features")
    }
}
