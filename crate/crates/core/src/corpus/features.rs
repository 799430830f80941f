use crate::encoder::{RoiFeatureSet, RoiRole};
use crate::tensor::rng::Rng;
use crate::tensor::{Real, Tensor};

use super::{CorpusSpec, Scene};

/// Trailing columns of every RoI row that encode the region position.
pub(super) const POSITION_DIMS: usize = 8;

/// Fixed class embeddings that stand in for pretrained detector outputs.
/// Object rows only see the class, attribute rows only see the attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTables {
    objects: Vec<Vec<f64>>,
    attributes: Vec<Vec<f64>>,
    d_r: usize,
    noise: f64,
    seed: u64,
}

impl FeatureTables {
    pub fn new(spec: &CorpusSpec) -> Self {
        let width = spec.d_r - POSITION_DIMS;
        let mut rng = Rng::derive(spec.seed, 10);
        let mut table = |n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..width).map(|_| rng.gaussian()).collect()).collect()
        };
        let objects = table(spec.n_objects);
        let attributes = table(spec.n_attributes);
        Self {
            objects,
            attributes,
            d_r: spec.d_r,
            noise: spec.noise,
            seed: spec.seed,
        }
    }

    pub fn d_r(&self) -> usize {
        self.d_r
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    /// Features with the per-scene noise stream derived from the corpus seed.
    pub fn synthesize<F: Real>(&self, scene: &Scene) -> (RoiFeatureSet<F>, RoiFeatureSet<F>) {
        let mut rng = Rng::derive(self.seed, 1_000_000 + scene.id as u64);
        self.synthesize_with(scene, &mut rng)
    }

    /// `K×d_r` object and attribute feature sets for `scene`.
    pub fn synthesize_with<F: Real>(&self, scene: &Scene, rng: &mut Rng) -> (RoiFeatureSet<F>, RoiFeatureSet<F>) {
        let k = scene.regions.len();
        let width = self.d_r - POSITION_DIMS;
        let mut ro = Vec::with_capacity(k * self.d_r);
        let mut ra = Vec::with_capacity(k * self.d_r);
        for region in &scene.regions {
            let pos = position_block(region.position);
            let obj = &self.objects[region.object];
            let mut att = vec![0.0; width];
            for &a in &region.attributes {
                for (x, e) in att.iter_mut().zip(&self.attributes[a]) {
                    *x += e;
                }
            }
            // noise draws happen in a fixed order so neither set leaks the other's labels
            for j in 0..self.d_r {
                let base = if j < width { obj[j] } else { pos[j - width] };
                ro.push(F::lit(base + self.noise * rng.gaussian()));
            }
            for j in 0..self.d_r {
                let base = if j < width { att[j] } else { pos[j - width] };
                ra.push(F::lit(base + self.noise * rng.gaussian()));
            }
        }
        let ro = Tensor::new(vec![k, self.d_r], ro).expect("scene has regions");
        let ra = Tensor::new(vec![k, self.d_r], ra).expect("scene has regions");
        (
            RoiFeatureSet::new(ro, RoiRole::Object).expect("finite features"),
            RoiFeatureSet::new(ra, RoiRole::Attribute).expect("finite features"),
        )
    }
}

fn position_block([x, y]: [f64; 2]) -> [f64; POSITION_DIMS] {
    use std::f64::consts::PI;
    [
        (PI * x).sin(),
        (PI * x).cos(),
        (2.0 * PI * x).sin(),
        (2.0 * PI * x).cos(),
        (PI * y).sin(),
        (PI * y).cos(),
        (2.0 * PI * y).sin(),
        (2.0 * PI * y).cos(),
    ]
}
