//! Synthetic scenes: per-pixel Gaussian features arranged as blobs.
//!
//! In-distribution classes have means `sep · e_j`, so the feature dimensions
//! past the class count carry pure noise for in-distribution pixels. Proxy and
//! test OoD families are separate sets of Gaussian components drawn from
//! independent random streams. Both are displaced along those unused
//! dimensions, so the families differ in every component but share the
//! property of lying off the in-distribution manifold; the proxy data used in
//! training never contains a test-time OoD distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::manifest::Role;
use crate::tensor::{FeatureMap, LabelMap, IGNORE_LABEL};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub height: usize,
    pub width: usize,
    /// Distance of each class mean from the origin along its own axis.
    pub class_separation: f64,
    pub noise: f64,
    /// Fraction of in-distribution pixels replaced by outlier features while
    /// keeping their label.
    pub outlier_rate: f64,
    pub outlier_noise: f64,
    /// Number of Gaussian components in each OoD family.
    pub ood_components: usize,
    /// Norm range of an OoD component mean within the feature dimensions
    /// that no class uses.
    pub ood_radius: (f64, f64),
    /// Standard deviation of an OoD component mean along the class axes.
    pub ood_class_spread: f64,
    /// Minimum distance between an OoD component mean and any class mean.
    pub ood_min_distance: f64,
    /// Rows at the top of every scene labelled as ignore.
    pub void_rows: usize,
    /// Range of the number of OoD objects pasted into a test scene.
    pub ood_objects: (usize, usize),
    /// Radius range of OoD objects, in pixels.
    pub ood_object_radius: (f64, f64),
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            feature_dim: 8,
            height: 32,
            width: 32,
            class_separation: 3.0,
            noise: 1.0,
            outlier_rate: 0.01,
            outlier_noise: 2.5,
            ood_components: 6,
            ood_radius: (3.0, 5.0),
            ood_class_spread: 1.0,
            ood_min_distance: 2.5,
            void_rows: 2,
            ood_objects: (1, 3),
            ood_object_radius: (2.5, 4.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    pub std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    InDist,
    ProxyOod,
    TestOod,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub features: FeatureMap,
    pub labels: LabelMap,
    pub family: Family,
}

/// A seeded synthetic world: class distributions plus the two OoD families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub class_means: Vec<Vec<f64>>,
    pub proxy: Vec<Component>,
    pub test: Vec<Component>,
}

const STREAM_PROXY: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_SCENES: u64 = 16;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl World {
    pub fn new(config: WorldConfig, seed: u64) -> Result<Self> {
        let c = &config;
        if c.num_classes < 2 || c.feature_dim <= c.num_classes {
            return Err(Error::InvalidArgument(format!(
                "need 2 <= num_classes < feature_dim, got {} and {}",
                c.num_classes, c.feature_dim
            )));
        }
        if c.height < 4 || c.width < 4 || c.void_rows >= c.height / 2 {
            return Err(Error::InvalidArgument("scene too small".into()));
        }
        if c.ood_components == 0 || !(c.ood_radius.0 > 0.0 && c.ood_radius.0 <= c.ood_radius.1) {
            return Err(Error::InvalidArgument("bad OoD family parameters".into()));
        }
        let class_means: Vec<Vec<f64>> = (0..c.num_classes)
            .map(|j| (0..c.feature_dim).map(|k| if k == j { c.class_separation } else { 0.0 }).collect())
            .collect();
        let proxy = Self::family(c, &class_means, &mut rng_for(seed, STREAM_PROXY))?;
        let test = Self::family(c, &class_means, &mut rng_for(seed, STREAM_TEST))?;
        let world = Self { config, seed, class_means, proxy, test };
        world.check_disjoint()?;
        Ok(world)
    }

    fn family(c: &WorldConfig, class_means: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Vec<Component>> {
        let mut out = Vec::with_capacity(c.ood_components);
        let mut attempts = 0;
        while out.len() < c.ood_components {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::InvalidArgument("cannot place OoD components with these constraints".into()));
            }
            let q = c.num_classes;
            let dir: Vec<f64> = (q..c.feature_dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue;
            }
            let r = rng.random_range(c.ood_radius.0..=c.ood_radius.1);
            let mut mean: Vec<f64> = (0..q).map(|_| { let z: f64 = StandardNormal.sample(rng); c.ood_class_spread * z }).collect();
            mean.extend(dir.iter().map(|v| v / norm * r));
            if class_means.iter().any(|m| dist(m, &mean) < c.ood_min_distance) {
                continue;
            }
            out.push(Component { mean, std: c.noise });
        }
        Ok(out)
    }

    /// Fails if the proxy and test families share a component.
    pub fn check_disjoint(&self) -> Result<()> {
        for p in &self.proxy {
            for t in &self.test {
                if p == t {
                    return Err(Error::InvalidArgument("proxy and test OoD families share a component".into()));
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Deterministic scene `index` of the given role.
    pub fn scene(&self, role: Role, index: usize) -> Scene {
        let role_tag = Role::ALL.iter().position(|&r| r == role).expect("known role") as u64;
        let mut rng = rng_for(self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), STREAM_SCENES + role_tag);
        let c = &self.config;
        let q = c.num_classes as i32;
        let (h, w) = (c.height, c.width);
        let id = format!("{}-{index:04}", role.as_str());

        let (labels, comps, family) = match role {
            Role::OutProxy => {
                let (labels, comps) = self.proxy_layout(&mut rng);
                (labels, comps, Family::ProxyOod)
            }
            _ => {
                let mut labels = self.in_layout(&mut rng);
                let mut comps = vec![None; h * w];
                if role == Role::OodTest {
                    let k = rng.random_range(c.ood_objects.0..=c.ood_objects.1);
                    for _ in 0..k {
                        let comp = rng.random_range(0..self.test.len());
                        let (ch, cw, rad) = self.random_disc(&mut rng, c.ood_object_radius);
                        for_disc(h, w, ch, cw, rad, |i| {
                            if labels[i] != IGNORE_LABEL {
                                labels[i] = q;
                                comps[i] = Some(comp);
                            }
                        });
                    }
                }
                let fam = if role == Role::OodTest { Family::TestOod } else { Family::InDist };
                (labels, comps, fam)
            }
        };

        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut feats = Vec::with_capacity(h * w * c.feature_dim);
        for i in 0..h * w {
            let label = labels[i];
            let (mean, std): (&[f64], f64) = if label == q || family == Family::ProxyOod {
                let fam = if family == Family::ProxyOod { &self.proxy } else { &self.test };
                let comp = &fam[comps[i].expect("OoD pixel has a component")];
                (&comp.mean, comp.std)
            } else if label == IGNORE_LABEL {
                // Void pixels look like the last class.
                (&self.class_means[c.num_classes - 1], c.noise)
            } else if rng.random::<f64>() < c.outlier_rate {
                (&self.class_means[label as usize], c.outlier_noise)
            } else {
                (&self.class_means[label as usize], c.noise)
            };
            for &m in mean {
                feats.push((m + std * normal.sample(&mut rng)) as f32);
            }
        }
        Scene {
            id,
            features: FeatureMap::new(h, w, c.feature_dim, feats).expect("finite features"),
            labels: LabelMap::new(h, w, c.num_classes, labels).expect("legal labels"),
            family,
        }
    }

    fn random_disc(&self, rng: &mut ChaCha8Rng, radius: (f64, f64)) -> (f64, f64, f64) {
        let c = &self.config;
        let ch = rng.random_range(c.void_rows as f64 + 1.0..c.height as f64 - 1.0);
        let cw = rng.random_range(1.0..c.width as f64 - 1.0);
        (ch, cw, rng.random_range(radius.0..=radius.1))
    }

    /// Road (class 0) background, a few blobs of other classes, void strip on top.
    fn in_layout(&self, rng: &mut ChaCha8Rng) -> Vec<i32> {
        let c = &self.config;
        let (h, w) = (c.height, c.width);
        let mut labels = vec![0i32; h * w];
        let blobs = rng.random_range(2..=4);
        for _ in 0..blobs {
            let class = rng.random_range(1..c.num_classes) as i32;
            let (ch, cw, rad) = self.random_disc(rng, (3.0, 7.0));
            for_disc(h, w, ch, cw, rad, |i| labels[i] = class);
        }
        for l in labels.iter_mut().take(c.void_rows * w) {
            *l = IGNORE_LABEL;
        }
        labels
    }

    /// Proxy scenes are covered entirely by proxy components, all labelled OoD.
    fn proxy_layout(&self, rng: &mut ChaCha8Rng) -> (Vec<i32>, Vec<Option<usize>>) {
        let c = &self.config;
        let (h, w) = (c.height, c.width);
        let background = rng.random_range(0..self.proxy.len());
        let mut comps = vec![Some(background); h * w];
        for _ in 0..rng.random_range(2..=5) {
            let comp = rng.random_range(0..self.proxy.len());
            let (ch, cw, rad) = self.random_disc(rng, (3.0, 8.0));
            for_disc(h, w, ch, cw, rad, |i| comps[i] = Some(comp));
        }
        (vec![c.num_classes as i32; h * w], comps)
    }
}

fn for_disc(h: usize, w: usize, ch: f64, cw: f64, rad: f64, mut f: impl FnMut(usize)) {
    for r in 0..h {
        for col in 0..w {
            let (dr, dc) = (r as f64 - ch, col as f64 - cw);
            if dr * dr + dc * dc <= rad * rad {
                f(r * w + col);
            }
        }
    }
}
