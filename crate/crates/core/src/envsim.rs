//! Synthetic plant atmosphere: ambient background plus static Gaussian
//! contamination hotspots, observed through noisy gas sensors.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coverage::{GeoPoint, LocalFrame};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GasVector {
    pub co2_ppm: f64,
    pub co_ppm: f64,
    pub ch4_ppm: f64,
}

impl GasVector {
    pub const fn new(co2_ppm: f64, co_ppm: f64, ch4_ppm: f64) -> Self {
        Self {
            co2_ppm,
            co_ppm,
            ch4_ppm,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.co2_ppm, self.co_ppm, self.ch4_ppm]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    fn axpy(self, a: f64, other: GasVector) -> GasVector {
        GasVector::new(
            self.co2_ppm + a * other.co2_ppm,
            self.co_ppm + a * other.co_ppm,
            self.ch4_ppm + a * other.ch4_ppm,
        )
    }
}

/// Contamination classes seen by the classifier. The discriminant is the
/// class index used in model weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContaminationClass {
    None = 0,
    Co2 = 1,
    Co = 2,
    Ch4 = 3,
    Multi = 4,
}

impl ContaminationClass {
    pub const ALL: [ContaminationClass; 5] = [
        ContaminationClass::None,
        ContaminationClass::Co2,
        ContaminationClass::Co,
        ContaminationClass::Ch4,
        ContaminationClass::Multi,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ContaminationClass::None => "none",
            ContaminationClass::Co2 => "co2",
            ContaminationClass::Co => "co",
            ContaminationClass::Ch4 => "ch4",
            ContaminationClass::Multi => "multi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub center: (f64, f64),
    pub amplitude: GasVector,
    pub radius_m: f64,
    pub onset_s: f64,
    pub label: ContaminationClass,
}

impl Hotspot {
    fn active(&self, t: f64) -> bool {
        t >= self.onset_s
    }

    fn dist(&self, pos: (f64, f64)) -> f64 {
        ((pos.0 - self.center.0).powi(2) + (pos.1 - self.center.1).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasField {
    pub background: GasVector,
    pub hotspots: Vec<Hotspot>,
    pub noise_sd: GasVector,
}

/// Radius multiple inside which a reading inherits a hotspot's class.
pub const LABEL_FOOTPRINT: f64 = 2.0;

impl GasField {
    pub fn new(background: GasVector, hotspots: Vec<Hotspot>, noise_sd: GasVector) -> Result<Self> {
        if !background.is_valid() || !noise_sd.is_valid() {
            return Err(invalid("background and noise must be finite and non-negative"));
        }
        for h in &hotspots {
            if !(h.radius_m > 0.0) || !h.amplitude.is_valid() || !(h.onset_s >= 0.0) {
                return Err(invalid("hotspot needs positive radius, valid amplitude and onset"));
            }
        }
        Ok(Self {
            background,
            hotspots,
            noise_sd,
        })
    }

    /// Noise-free concentration at `pos` (local meters) and time `t`.
    pub fn concentration_at(&self, pos: (f64, f64), t: f64) -> GasVector {
        self.hotspots
            .iter()
            .filter(|h| h.active(t))
            .fold(self.background, |acc, h| {
                let d2 = (pos.0 - h.center.0).powi(2) + (pos.1 - h.center.1).powi(2);
                acc.axpy((-d2 / (2.0 * h.radius_m * h.radius_m)).exp(), h.amplitude)
            })
    }

    /// Ground-truth class at `pos`: the active hotspot with the smallest
    /// distance-to-radius ratio, if that ratio is within the label footprint.
    pub fn label_at(&self, pos: (f64, f64), t: f64) -> ContaminationClass {
        self.hotspots
            .iter()
            .filter(|h| h.active(t))
            .map(|h| (h.dist(pos) / h.radius_m, h.label))
            .filter(|(r, _)| *r <= LABEL_FOOTPRINT)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, c)| c)
            .unwrap_or(ContaminationClass::None)
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        frame: &LocalFrame,
        pos: (f64, f64),
        t: f64,
        rng: &mut R,
    ) -> SensorReading {
        let truth = self.concentration_at(pos, t).to_array();
        let sd = self.noise_sd.to_array();
        let mut noisy = [0.0; 3];
        for i in 0..3 {
            let eps = if sd[i] > 0.0 {
                Normal::new(0.0, sd[i]).expect("validated sd").sample(rng)
            } else {
                0.0
            };
            noisy[i] = (truth[i] + eps).max(0.0);
        }
        SensorReading {
            position: frame.to_geo(pos.0, pos.1),
            local: pos,
            gases: GasVector::from_array(noisy),
            timestamp: t,
        }
    }

    /// Concentration grid as CSV `x_m,y_m,co2_ppm,co_ppm,ch4_ppm`.
    pub fn grid_csv(&self, width_m: f64, length_m: f64, step_m: f64, t: f64) -> String {
        let mut out = String::from("x_m,y_m,co2_ppm,co_ppm,ch4_ppm\n");
        let nx = (width_m / step_m).floor() as usize;
        let ny = (length_m / step_m).floor() as usize;
        for j in 0..=ny {
            for i in 0..=nx {
                let (x, y) = (i as f64 * step_m, j as f64 * step_m);
                let c = self.concentration_at((x, y), t);
                out.push_str(&format!("{x},{y},{},{},{}\n", c.co2_ppm, c.co_ppm, c.ch4_ppm));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub position: GeoPoint,
    /// Same position in the robot's local frame, meters.
    pub local: (f64, f64),
    pub gases: GasVector,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }

    fn valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeight {
    pub class: ContaminationClass,
    pub weight: f64,
}

/// Recipe for a randomized field over a `width_m` x `length_m` box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub hotspot_count: (usize, usize),
    pub class_mix: Vec<ClassWeight>,
    /// Peak excess for a gas elevated by a hotspot's class.
    pub co2_amplitude: Range,
    pub co_amplitude: Range,
    pub ch4_amplitude: Range,
    pub radius_m: Range,
    pub onset_s: Range,
    pub background: GasVector,
    pub noise_sd: GasVector,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            hotspot_count: (4, 6),
            class_mix: [
                ContaminationClass::Co2,
                ContaminationClass::Co,
                ContaminationClass::Ch4,
                ContaminationClass::Multi,
            ]
            .into_iter()
            .map(|class| ClassWeight { class, weight: 1.0 })
            .collect(),
            co2_amplitude: Range::new(1200.0, 2400.0),
            co_amplitude: Range::new(60.0, 120.0),
            ch4_amplitude: Range::new(1500.0, 3000.0),
            radius_m: Range::new(2.5, 4.0),
            onset_s: Range::new(0.0, 0.0),
            background: GasVector::new(420.0, 1.0, 2.0),
            noise_sd: GasVector::new(15.0, 1.0, 15.0),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_mix.is_empty() {
            return Err(invalid("class mix must name at least one contamination class"));
        }
        if self
            .class_mix
            .iter()
            .any(|c| c.class == ContaminationClass::None || !(c.weight > 0.0))
        {
            return Err(invalid("class mix entries need a contamination class and positive weight"));
        }
        let (lo, hi) = self.hotspot_count;
        if lo > hi {
            return Err(invalid("hotspot count range is inverted"));
        }
        if hi > 0 && lo < self.class_mix.len() {
            return Err(invalid(
                "minimum hotspot count must cover every requested class",
            ));
        }
        let ranges = [
            self.co2_amplitude,
            self.co_amplitude,
            self.ch4_amplitude,
            self.radius_m,
            self.onset_s,
        ];
        if ranges.iter().any(|r| !r.valid() || r.min < 0.0) || !(self.radius_m.min > 0.0) {
            return Err(invalid("amplitude, radius and onset ranges must be non-negative and ordered"));
        }
        if !self.background.is_valid() || !self.noise_sd.is_valid() {
            return Err(invalid("background and noise must be finite and non-negative"));
        }
        Ok(())
    }
}

pub fn generate_scenario<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    width_m: f64,
    length_m: f64,
    rng: &mut R,
) -> Result<GasField> {
    spec.validate()?;
    if !(width_m > 0.0) || !(length_m > 0.0) {
        return Err(invalid("scenario area must be positive"));
    }
    let (lo, hi) = spec.hotspot_count;
    let count = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let total_weight: f64 = spec.class_mix.iter().map(|c| c.weight).sum();

    let mut hotspots = Vec::with_capacity(count);
    for i in 0..count {
        let class = if i < spec.class_mix.len() {
            spec.class_mix[i].class
        } else {
            let mut pick = rng.random_range(0.0..total_weight);
            let mut chosen = spec.class_mix[spec.class_mix.len() - 1].class;
            for c in &spec.class_mix {
                if pick < c.weight {
                    chosen = c.class;
                    break;
                }
                pick -= c.weight;
            }
            chosen
        };
        let elevate = |gas: usize| match class {
            ContaminationClass::Multi => true,
            ContaminationClass::Co2 => gas == 0,
            ContaminationClass::Co => gas == 1,
            ContaminationClass::Ch4 => gas == 2,
            ContaminationClass::None => false,
        };
        let amp = [spec.co2_amplitude, spec.co_amplitude, spec.ch4_amplitude];
        let mut a = [0.0; 3];
        for g in 0..3 {
            a[g] = if elevate(g) { amp[g].draw(rng) } else { 0.0 };
        }
        hotspots.push(Hotspot {
            center: (rng.random_range(0.0..=width_m), rng.random_range(0.0..=length_m)),
            amplitude: GasVector::from_array(a),
            radius_m: spec.radius_m.draw(rng),
            onset_s: spec.onset_s.draw(rng),
            label: class,
        });
    }
    GasField::new(spec.background, hotspots, spec.noise_sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::{GeoBoundingBox, GeoPoint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame() -> LocalFrame {
        let b = GeoBoundingBox::new(
            GeoPoint::new(10.0, 20.0).unwrap(),
            GeoPoint::new(10.001, 20.001).unwrap(),
        )
        .unwrap();
        LocalFrame::from_box(&b)
    }

    fn one_hotspot(noise: GasVector) -> GasField {
        GasField::new(
            GasVector::new(420.0, 1.0, 2.0),
            vec![Hotspot {
                center: (5.0, 5.0),
                amplitude: GasVector::new(1000.0, 50.0, 0.0),
                radius_m: 1.5,
                onset_s: 10.0,
                label: ContaminationClass::Multi,
            }],
            noise,
        )
        .unwrap()
    }

    #[test]
    fn background_only() {
        let f = GasField::new(GasVector::new(420.0, 1.0, 2.0), vec![], GasVector::default()).unwrap();
        assert_eq!(f.concentration_at((3.0, 4.0), 100.0), f.background);
    }

    #[test]
    fn hotspot_peak_and_onset() {
        let f = one_hotspot(GasVector::default());
        assert_eq!(f.concentration_at((5.0, 5.0), 10.0), GasVector::new(1420.0, 51.0, 2.0));
        assert_eq!(f.concentration_at((5.0, 5.0), 9.9), f.background);
        assert_eq!(f.label_at((5.0, 5.0), 9.9), ContaminationClass::None);
        assert_eq!(f.label_at((5.0, 7.9), 10.0), ContaminationClass::Multi);
        assert_eq!(f.label_at((5.0, 8.1), 10.0), ContaminationClass::None);
    }

    #[test]
    fn far_field_is_background() {
        let f = one_hotspot(GasVector::default());
        let c = f.concentration_at((5.0 + 15.0, 5.0), 20.0);
        // amplitude * exp(-50) ~ 1.9e-19 ppm
        assert!((c.co2_ppm - 420.0).abs() / 420.0 < 1e-6);
        assert!((c.co_ppm - 1.0).abs() / 1.0 < 1e-6);
    }

    #[test]
    fn noiseless_sample_is_exact() {
        let f = one_hotspot(GasVector::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = f.sample(&frame(), (4.0, 5.5), 12.0, &mut rng);
        assert_eq!(r.gases, f.concentration_at((4.0, 5.5), 12.0));
        assert_eq!(r.timestamp, 12.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = one_hotspot(GasVector::new(5.0, 1.0, 1.0));
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|i| f.sample(&frame(), (i as f64 * 0.1, 5.0), i as f64, &mut rng).gases)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn sample_mean_within_standard_error() {
        let f = GasField::new(
            GasVector::new(420.0, 1.0, 2.0),
            vec![],
            GasVector::new(5.0, 0.0, 0.0),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| f.sample(&frame(), (1.0, 1.0), 0.0, &mut rng).gases.co2_ppm)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 420.0).abs() <= 3.0 * 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn readings_never_negative() {
        let f = GasField::new(GasVector::new(0.5, 0.1, 0.0), vec![], GasVector::new(10.0, 10.0, 10.0))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            assert!(f.sample(&frame(), (0.0, 0.0), 0.0, &mut rng).gases.is_valid());
        }
    }

    #[test]
    fn superposition() {
        let a = Hotspot {
            center: (2.0, 3.0),
            amplitude: GasVector::new(300.0, 20.0, 0.0),
            radius_m: 2.0,
            onset_s: 0.0,
            label: ContaminationClass::Co2,
        };
        let b = Hotspot {
            center: (6.0, 1.0),
            amplitude: GasVector::new(0.0, 5.0, 800.0),
            radius_m: 3.0,
            onset_s: 0.0,
            label: ContaminationClass::Ch4,
        };
        let bg = GasVector::new(420.0, 1.0, 2.0);
        let ab = GasField::new(bg, vec![a.clone(), b.clone()], GasVector::default()).unwrap();
        let only_b = GasField::new(bg, vec![b], GasVector::default()).unwrap();
        let only_a = GasField::new(bg, vec![a], GasVector::default()).unwrap();
        for &p in &[(0.0, 0.0), (2.0, 3.0), (4.5, 2.2), (9.0, 9.0)] {
            let lhs = ab.concentration_at(p, 1.0).to_array();
            let rb = only_b.concentration_at(p, 1.0).to_array();
            let ra = only_a.concentration_at(p, 1.0).to_array();
            for g in 0..3 {
                let l = lhs[g] - rb[g];
                let r = ra[g] - bg.to_array()[g];
                assert!((l - r).abs() <= 1e-12 * lhs[g].abs().max(1.0));
            }
        }
    }

    #[test]
    fn scenario_generation() {
        let mut spec = ScenarioSpec {
            hotspot_count: (0, 0),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(generate_scenario(&spec, 20.0, 20.0, &mut rng).unwrap().hotspots.is_empty());

        spec.hotspot_count = (3, 3);
        spec.class_mix = vec![ClassWeight {
            class: ContaminationClass::Ch4,
            weight: 1.0,
        }];
        let f = generate_scenario(&spec, 20.0, 20.0, &mut rng).unwrap();
        assert_eq!(f.hotspots.len(), 3);
        assert!(f.hotspots.iter().all(|h| h.label == ContaminationClass::Ch4));
        assert!(f.hotspots.iter().all(|h| h.amplitude.co2_ppm == 0.0 && h.amplitude.ch4_ppm > 0.0));

        spec.class_mix.clear();
        assert!(generate_scenario(&spec, 20.0, 20.0, &mut rng).is_err());
    }

    #[test]
    fn scenario_covers_every_class_and_is_reproducible() {
        let spec = ScenarioSpec::default();
        let gen = |s| generate_scenario(&spec, 30.0, 30.0, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        let f = gen(11);
        assert_eq!(f, gen(11));
        for c in &spec.class_mix {
            assert!(f.hotspots.iter().any(|h| h.label == c.class));
        }
    }
}
