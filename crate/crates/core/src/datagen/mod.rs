//! Synthetic multipath MIMO-OFDM channels with ground-truth positions.
//!
//! A base station carries a uniform linear array along the x axis with its
//! broadside facing +y. Every UE sees a line-of-sight path plus one
//! single-bounce path per scatterer:
//!
//! ```text
//! h[a + Na*s] = sum_p c_p * exp(-j 2pi f_s tau_p) * exp(j pi (2 spacing) a sin(theta_p))
//! f_s = f_c - B/2 + s B / Ns
//! ```
//!
//! Angles are measured from broadside, so a UE and its mirror image behind
//! the array (y reflected about the BS) produce the same channel. Scenes meant
//! for charting keep the area in front of the array.

mod format;

pub use format::{
    load_dataset, load_dataset_json, read_dataset, save_dataset, save_dataset_json, write_dataset, DATASET_MAGIC,
    DATASET_VERSION,
};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

fn default_spacing() -> f64 {
    0.5
}

fn default_reflectivity() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub antenna_count: usize,
    /// Inter-element spacing in carrier wavelengths.
    #[serde(default = "default_spacing")]
    pub element_spacing: f64,
}

impl ArrayGeometry {
    pub fn new(antenna_count: usize) -> Self {
        ArrayGeometry {
            antenna_count,
            element_spacing: default_spacing(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.antenna_count == 0 {
            return Err(Error::config("antenna_count must be >= 1"));
        }
        if !(self.element_spacing > 0.0) {
            return Err(Error::config("element_spacing must be > 0"));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Area {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Area { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Hz.
    pub carrier_frequency: f64,
    /// Hz.
    pub bandwidth: f64,
    pub subcarrier_count: usize,
    pub area: Area,
    pub scatterer_count: usize,
    /// Amplitude factor applied to every single-bounce path.
    #[serde(default = "default_reflectivity")]
    pub scatterer_reflectivity: f64,
    pub bs_position: [f64; 2],
    pub rng_seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency > 0.0) {
            return Err(Error::config("carrier_frequency must be > 0"));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::config("bandwidth must be > 0"));
        }
        if self.subcarrier_count == 0 {
            return Err(Error::config("subcarrier_count must be >= 1"));
        }
        if !(self.area.width() > 0.0 && self.area.height() > 0.0) {
            return Err(Error::config("area must have positive width and height"));
        }
        if !(self.scatterer_reflectivity >= 0.0) {
            return Err(Error::config("scatterer_reflectivity must be >= 0"));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn subcarrier_frequency(&self, s: usize) -> f64 {
        self.carrier_frequency - self.bandwidth / 2.0 + s as f64 * self.bandwidth / self.subcarrier_count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: [f64; 2],
    /// Reflection phase in radians, fixed per scene.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub scatterers: Vec<Scatterer>,
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub complex_gain: Complex<f64>,
    /// Seconds, nonnegative.
    pub delay: f64,
    /// Radians from array broadside.
    pub angle_of_departure: f64,
}

/// Draws scatterer positions uniformly inside the area (strictly) and one
/// reflection phase per scatterer from `rng_seed`.
pub fn build_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let area = config.area;
    let mut scatterers = Vec::with_capacity(config.scatterer_count);
    while scatterers.len() < config.scatterer_count {
        let x = area.min[0] + rng.random::<f64>() * area.width();
        let y = area.min[1] + rng.random::<f64>() * area.height();
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        // random::<f64>() is in [0, 1); reject the boundary itself.
        if x > area.min[0] && y > area.min[1] {
            scatterers.push(Scatterer {
                position: [x, y],
                phase,
            });
        }
    }
    Ok(Scene {
        config: config.clone(),
        scatterers,
    })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn departure_angle(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[0] - from[0]).atan2(to[1] - from[1])
}

/// Line-of-sight path followed by one single-bounce path per scatterer.
pub fn scene_paths(scene: &Scene, ue_position: [f64; 2]) -> Result<Vec<Path>> {
    let cfg = &scene.config;
    let bs = cfg.bs_position;
    let d0 = dist(bs, ue_position);
    if !(d0 > 0.0) {
        return Err(Error::domain("UE position coincides with the base station"));
    }
    let lambda = cfg.wavelength();
    let mut paths = Vec::with_capacity(1 + scene.scatterers.len());
    paths.push(Path {
        complex_gain: Complex::new(lambda / (4.0 * std::f64::consts::PI * d0), 0.0),
        delay: d0 / SPEED_OF_LIGHT,
        angle_of_departure: departure_angle(bs, ue_position),
    });
    for sc in &scene.scatterers {
        let d1 = dist(bs, sc.position);
        let length = d1 + dist(sc.position, ue_position);
        if !(d1 > 0.0) {
            continue;
        }
        let amp = cfg.scatterer_reflectivity * lambda / (4.0 * std::f64::consts::PI * length);
        paths.push(Path {
            complex_gain: Complex::from_polar(amp, sc.phase),
            delay: length / SPEED_OF_LIGHT,
            angle_of_departure: departure_angle(bs, sc.position),
        });
    }
    Ok(paths)
}

/// Evaluates the multipath sum on the antenna x subcarrier grid, antenna-major.
pub fn channel_from_paths(paths: &[Path], geometry: &ArrayGeometry, scene: &SceneConfig) -> Vec<Complex<f64>> {
    let na = geometry.antenna_count;
    let ns = scene.subcarrier_count;
    let mut h = vec![Complex::new(0.0, 0.0); na * ns];
    for p in paths {
        let spatial = std::f64::consts::PI * 2.0 * geometry.element_spacing * p.angle_of_departure.sin();
        for s in 0..ns {
            // Reduce cycles before scaling by 2pi to keep the phase accurate.
            let cycles = (scene.subcarrier_frequency(s) * p.delay).fract();
            let delay_term = p.complex_gain * Complex::from_polar(1.0, -std::f64::consts::TAU * cycles);
            for a in 0..na {
                h[a + na * s] += delay_term * Complex::from_polar(1.0, spatial * a as f64);
            }
        }
    }
    h
}

pub fn synth_channel<T: Scalar>(
    scene: &Scene,
    geometry: &ArrayGeometry,
    ue_position: [f64; 2],
) -> Result<ChannelSample<T>> {
    if !scene.config.area.contains(ue_position) {
        return Err(Error::domain(format!(
            "UE position {ue_position:?} outside the scene area"
        )));
    }
    let paths = scene_paths(scene, ue_position)?;
    let h = channel_from_paths(&paths, geometry, &scene.config);
    let h = h
        .into_iter()
        .map(|z| Complex::new(T::lit(z.re), T::lit(z.im)))
        .collect();
    ChannelSample::new(h, ue_position, geometry.antenna_count, Split::Calibration)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Calibration,
    Train,
    Test,
}

impl Split {
    pub fn tag(self) -> u8 {
        match self {
            Split::Calibration => 0,
            Split::Train => 1,
            Split::Test => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Calibration),
            1 => Some(Split::Train),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// A vectorized channel `h` (index `a + Na*s`) with its ground-truth position.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample<T> {
    pub h: Vec<Complex<T>>,
    pub position: [f64; 2],
    pub full_norm: T,
    pub subcarrier_norms: Vec<T>,
    pub split: Split,
}

impl<T: Scalar> ChannelSample<T> {
    pub fn new(h: Vec<Complex<T>>, position: [f64; 2], antenna_count: usize, split: Split) -> Result<Self> {
        if antenna_count == 0 || h.is_empty() || !h.len().is_multiple_of(antenna_count) {
            return Err(Error::Dimension {
                what: "channel length (multiple of antenna count)",
                expected: antenna_count,
                found: h.len(),
            });
        }
        let subcarrier_norms = h.chunks(antenna_count).map(linalg::norm).collect();
        let full_norm = linalg::norm(&h);
        Ok(ChannelSample {
            h,
            position,
            full_norm,
            subcarrier_norms,
            split,
        })
    }

    pub fn antenna_count(&self) -> usize {
        self.h.len() / self.subcarrier_norms.len()
    }

    pub fn subcarrier_count(&self) -> usize {
        self.subcarrier_norms.len()
    }

    /// The `Na` antenna coefficients of subcarrier `s`.
    pub fn subcarrier(&self, s: usize) -> &[Complex<T>] {
        let na = self.antenna_count();
        &self.h[s * na..(s + 1) * na]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub calibration: usize,
    pub train: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.calibration + self.train + self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    /// Regular lattice with nodes on the area boundary, total = rows * cols.
    Grid {
        rows: usize,
        cols: usize,
    },
    UniformRandom,
}

/// The physical parameters persisted with a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub antenna_count: usize,
    pub subcarrier_count: usize,
    pub carrier_frequency: f64,
    pub bandwidth: f64,
}

impl DatasetMeta {
    pub fn channel_dim(&self) -> usize {
        self.antenna_count * self.subcarrier_count
    }
}

/// Immutable collection of labelled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub meta: DatasetMeta,
    pub samples: Vec<ChannelSample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(meta: DatasetMeta, samples: Vec<ChannelSample<T>>) -> Result<Self> {
        let dim = meta.channel_dim();
        for s in &samples {
            if s.h.len() != dim || s.subcarrier_count() != meta.subcarrier_count {
                return Err(Error::Dimension {
                    what: "sample channel length",
                    expected: dim,
                    found: s.h.len(),
                });
            }
        }
        Ok(Dataset { meta, samples })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ChannelSample<T>> + '_ {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_vec(&self, split: Split) -> Vec<&ChannelSample<T>> {
        self.split(split).collect()
    }

    pub fn counts(&self) -> SplitCounts {
        let n = |s| self.split(s).count();
        SplitCounts {
            calibration: n(Split::Calibration),
            train: n(Split::Train),
            test: n(Split::Test),
        }
    }

    /// Converts the payload to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let h =
                    s.h.iter()
                        .map(|z| Complex::new(U::lit(z.re.as_f64()), U::lit(z.im.as_f64())))
                        .collect();
                ChannelSample::new(h, s.position, self.meta.antenna_count, s.split).expect("shape preserved")
            })
            .collect();
        Dataset {
            meta: self.meta,
            samples,
        }
    }
}

fn grid_positions(area: &Area, rows: usize, cols: usize) -> Vec<[f64; 2]> {
    let coord = |lo: f64, span: f64, i: usize, n: usize| {
        if n == 1 {
            lo + span / 2.0
        } else {
            lo + span * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push([
                coord(area.min[0], area.width(), c, cols),
                coord(area.min[1], area.height(), r, rows),
            ]);
        }
    }
    out
}

/// Samples UE positions, labels them and synthesizes their channels.
///
/// Grid placement keeps row-major node order and assigns split labels through
/// a seeded shuffle; uniform placement lists calibration, train and test
/// samples in that order.
pub fn generate_dataset<T: Scalar>(
    scene: &Scene,
    geometry: &ArrayGeometry,
    counts: SplitCounts,
    placement: Placement,
) -> Result<Dataset<T>> {
    geometry.validate()?;
    scene.config.validate()?;
    if counts.calibration == 0 {
        return Err(Error::config("calibration count must be >= 1"));
    }
    let total = counts.total();
    let area = scene.config.area;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.config.rng_seed);
    rng.set_stream(1);

    let mut labels: Vec<Split> = std::iter::repeat_n(Split::Calibration, counts.calibration)
        .chain(std::iter::repeat_n(Split::Train, counts.train))
        .chain(std::iter::repeat_n(Split::Test, counts.test))
        .collect();

    let positions = match placement {
        Placement::Grid { rows, cols } => {
            if rows == 0 || cols == 0 || rows * cols != total {
                return Err(Error::config(format!(
                    "grid placement needs rows*cols == total count: {rows}x{cols} != {total}"
                )));
            }
            // Fisher-Yates on the labels.
            for i in (1..labels.len()).rev() {
                let j = rng.random_range(0..=i);
                labels.swap(i, j);
            }
            grid_positions(&area, rows, cols)
        }
        Placement::UniformRandom => (0..total)
            .map(|_| loop {
                let p = [
                    area.min[0] + rng.random::<f64>() * area.width(),
                    area.min[1] + rng.random::<f64>() * area.height(),
                ];
                if p != scene.config.bs_position {
                    break p;
                }
            })
            .collect(),
    };

    let samples = positions
        .par_iter()
        .zip(labels.par_iter())
        .map(|(&p, &split)| {
            let mut s = synth_channel::<T>(scene, geometry, p)?;
            s.split = split;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(
        DatasetMeta {
            antenna_count: geometry.antenna_count,
            subcarrier_count: scene.config.subcarrier_count,
            carrier_frequency: scene.config.carrier_frequency,
            bandwidth: scene.config.bandwidth,
        },
        samples,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_scene(scatterers: usize, seed: u64) -> SceneConfig {
        SceneConfig {
            carrier_frequency: 3.5e9,
            bandwidth: 20e6,
            subcarrier_count: 4,
            area: Area::new([0.0, 0.0], [1.0, 1.0]),
            scatterer_count: scatterers,
            scatterer_reflectivity: 0.5,
            bs_position: [0.5, -10.0],
            rng_seed: seed,
        }
    }

    fn single_path(theta: f64) -> Vec<Path> {
        vec![Path {
            complex_gain: Complex::new(1.0, 0.0),
            delay: 0.0,
            angle_of_departure: theta,
        }]
    }

    fn one_subcarrier() -> SceneConfig {
        SceneConfig {
            subcarrier_count: 1,
            ..unit_scene(0, 0)
        }
    }

    #[test]
    fn broadside_path_has_flat_phase() {
        let h = channel_from_paths(&single_path(0.0), &ArrayGeometry::new(2), &one_subcarrier());
        for z in h {
            assert!((z - Complex::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn endfire_path_alternates_sign() {
        let h = channel_from_paths(
            &single_path(std::f64::consts::FRAC_PI_2),
            &ArrayGeometry::new(2),
            &one_subcarrier(),
        );
        assert!((h[0] - Complex::new(1.0, 0.0)).norm() < 1e-12);
        assert!((h[1] - Complex::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn single_path_norm_is_gain_times_sqrt_dim() {
        let paths = vec![Path {
            complex_gain: Complex::from_polar(0.3, 1.1),
            delay: 123e-9,
            angle_of_departure: 0.4,
        }];
        let scene = unit_scene(0, 0);
        let h = channel_from_paths(&paths, &ArrayGeometry::new(8), &scene);
        let n = linalg::norm(&h);
        assert!((n - 0.3 * (8.0f64 * 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_has_only_los() {
        let scene = build_scene(&unit_scene(0, 7)).unwrap();
        assert!(scene.scatterers.is_empty());
        assert_eq!(scene_paths(&scene, [0.5, 0.5]).unwrap().len(), 1);
    }

    #[test]
    fn scene_is_deterministic_per_seed() {
        let a = build_scene(&unit_scene(5, 1)).unwrap();
        let b = build_scene(&unit_scene(5, 1)).unwrap();
        let c = build_scene(&unit_scene(5, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.scatterers, c.scatterers);
        for s in &a.scatterers {
            assert!(s.position[0] > 0.0 && s.position[0] < 1.0);
            assert!(s.position[1] > 0.0 && s.position[1] < 1.0);
        }
    }

    #[test]
    fn zero_area_is_rejected() {
        let mut cfg = unit_scene(1, 0);
        cfg.area = Area::new([0.0, 0.0], [0.0, 1.0]);
        assert!(matches!(build_scene(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn ue_on_bs_is_rejected() {
        let mut cfg = unit_scene(0, 0);
        cfg.bs_position = [0.5, 0.5];
        let scene = build_scene(&cfg).unwrap();
        let err = synth_channel::<f64>(&scene, &ArrayGeometry::new(4), [0.5, 0.5]);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn sample_norms_are_consistent() {
        let scene = build_scene(&unit_scene(3, 4)).unwrap();
        let s = synth_channel::<f64>(&scene, &ArrayGeometry::new(4), [0.2, 0.9]).unwrap();
        assert_eq!(s.h.len(), 16);
        let direct: f64 = s.h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((s.full_norm - direct).abs() <= 1e-10 * direct);
        for sc in 0..4 {
            assert!((s.subcarrier_norms[sc] - linalg::norm(s.subcarrier(sc))).abs() < 1e-18);
        }
    }

    #[test]
    fn global_path_phase_rotates_channel() {
        let scene = build_scene(&unit_scene(3, 4)).unwrap();
        let geom = ArrayGeometry::new(4);
        let paths = scene_paths(&scene, [0.3, 0.6]).unwrap();
        let rot = Complex::from_polar(1.0, 0.9);
        let rotated: Vec<Path> = paths
            .iter()
            .map(|p| Path {
                complex_gain: p.complex_gain * rot,
                ..*p
            })
            .collect();
        let h1 = channel_from_paths(&paths, &geom, &scene.config);
        let h2 = channel_from_paths(&rotated, &geom, &scene.config);
        for (a, b) in h1.iter().zip(&h2) {
            assert!((a * rot - b).norm() < 1e-15);
        }
    }

    #[test]
    fn grid_counts_and_nodes() {
        let scene = build_scene(&unit_scene(0, 0)).unwrap();
        let ds: Dataset<f64> = generate_dataset(
            &scene,
            &ArrayGeometry::new(2),
            SplitCounts {
                calibration: 4,
                train: 0,
                test: 0,
            },
            Placement::Grid { rows: 2, cols: 2 },
        )
        .unwrap();
        let mut pos: Vec<_> = ds.samples.iter().map(|s| s.position).collect();
        pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pos, vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]);
        assert_eq!(ds.counts().calibration, 4);
    }

    #[test]
    fn grid_rejects_inexpressible_counts() {
        let scene = build_scene(&unit_scene(0, 0)).unwrap();
        let err = generate_dataset::<f64>(
            &scene,
            &ArrayGeometry::new(2),
            SplitCounts {
                calibration: 5,
                train: 0,
                test: 0,
            },
            Placement::Grid { rows: 2, cols: 2 },
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn uniform_labels_partition() {
        let scene = build_scene(&unit_scene(2, 9)).unwrap();
        let counts = SplitCounts {
            calibration: 500,
            train: 1000,
            test: 500,
        };
        let ds: Dataset<f64> =
            generate_dataset(&scene, &ArrayGeometry::new(2), counts, Placement::UniformRandom).unwrap();
        assert_eq!(ds.samples.len(), 2000);
        assert_eq!(ds.counts(), counts);
    }
}
