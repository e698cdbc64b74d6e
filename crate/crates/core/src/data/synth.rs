//! Seeded synthetic corpus: users clustered around hotspots, posting hours
//! coupled to longitude through a local diurnal cycle, and a noisy but
//! calibrated probability source standing in for an image classifier.

use super::{DataError, ImageRecord};
use crate::mesh::{Mesh, MeshParams};
use crate::sphere::{GeoPoint, UnitVector, EARTH_RADIUS_KM};
use chrono::{DateTime, TimeZone, Utc};
use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Images per user are `1 + Poisson(mean - 1)`, capped at `images_per_user_max`.
    pub images_per_user_mean: f64,
    pub images_per_user_max: usize,
    pub n_hotspots: usize,
    /// Hotspot popularity follows `1 / rank^hotspot_zipf`.
    pub hotspot_zipf: f64,
    /// User homes fall uniformly within this distance of their hotspot.
    pub hotspot_spread_km: f64,
    /// Every image falls within this distance of its user's home.
    pub coherence_radius_km: f64,
    /// Probability that an image's posting hour follows the local diurnal cycle.
    pub coupling: f64,
    pub diurnal_peak_hour: f64,
    pub diurnal_sd_hours: f64,
    pub outdoor_prob: f64,
    /// Observation noise of the probability source (larger = less accurate).
    pub noise_temperature: f64,
    pub first_year: i32,
    pub last_year: i32,
    pub mesh: MeshParams,
    pub seed: u64,
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            n_users: 10_000,
            images_per_user_mean: 10.0,
            images_per_user_max: 200,
            n_hotspots: 60,
            hotspot_zipf: 0.8,
            hotspot_spread_km: 250.0,
            coherence_radius_km: 150.0,
            coupling: 0.8,
            diurnal_peak_hour: 15.0,
            diurnal_sd_hours: 2.5,
            outdoor_prob: 0.7,
            noise_temperature: 0.6,
            first_year: 2004,
            last_year: 2014,
            mesh: MeshParams::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        for (name, p) in [("coupling", self.coupling), ("outdoor_prob", self.outdoor_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.n_users == 0 || self.n_hotspots == 0 {
            return bad("n_users and n_hotspots must be positive");
        }
        if self.images_per_user_mean < 1.0 || self.images_per_user_max == 0 {
            return bad("images_per_user_mean must be >= 1 and the cap positive");
        }
        if !(self.noise_temperature > 0.0) || !(self.diurnal_sd_hours > 0.0) {
            return bad("noise_temperature and diurnal_sd_hours must be positive");
        }
        if self.hotspot_spread_km < 0.0 || self.coherence_radius_km < 0.0 {
            return bad("radii must be non-negative");
        }
        if self.first_year > self.last_year {
            return bad("first_year must not exceed last_year");
        }
        self.mesh.validate().map_err(|e| DataError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub records: Vec<ImageRecord>,
    /// Row `i` is the probability vector of record `i` (`prob_row = i`).
    pub probs: Array2<f32>,
    /// Geo-class of each record's true location; `None` in inactive cells.
    pub truth: Vec<Option<usize>>,
    pub mesh: Mesh,
    /// Home location per user, indexed like the user ids `user{index}`.
    pub homes: Vec<GeoPoint>,
}

/// Uniform point within angular radius `radius_rad` of `center`.
fn point_in_cap<R: Rng>(rng: &mut R, center: &UnitVector, radius_rad: f64) -> UnitVector {
    let cos_r = radius_rad.min(std::f64::consts::PI).cos();
    let cos_t: f64 = rng.random_range(cos_r..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let helper = if center.z.abs() < 0.9 {
        UnitVector::from_raw(0.0, 0.0, 1.0)
    } else {
        UnitVector::from_raw(1.0, 0.0, 0.0)
    };
    let [ux, uy, uz] = center.cross(&helper);
    let u = UnitVector::new(ux, uy, uz).expect("helper is not parallel to center");
    let [vx, vy, vz] = center.cross(&u);
    let v = UnitVector::from_raw(vx, vy, vz);
    let (c, s) = (phi.cos() * sin_t, phi.sin() * sin_t);
    UnitVector::new(
        center.x * cos_t + u.x * c + v.x * s,
        center.y * cos_t + u.y * c + v.y * s,
        center.z * cos_t + u.z * c + v.z * s,
    )
    .expect("cap sample is non-zero")
}

fn uniform_on_sphere<R: Rng>(rng: &mut R) -> UnitVector {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    UnitVector::from_raw(r * phi.cos(), r * phi.sin(), z)
}

/// Posting instant: a uniform day in the year range and an hour that with
/// probability `coupling` follows the local diurnal cycle shifted to UTC.
fn posting_time<R: Rng>(rng: &mut R, cfg: &SynthConfig, lon_deg: f64, first: i64, days: i64) -> DateTime<Utc> {
    let day = rng.random_range(0..days);
    let hour = if rng.random_bool(cfg.coupling) {
        let local = Normal::new(cfg.diurnal_peak_hour, cfg.diurnal_sd_hours)
            .expect("validated sd")
            .sample(rng);
        (local - lon_deg / 15.0).rem_euclid(24.0)
    } else {
        rng.random_range(0.0..24.0)
    };
    let secs = first + day * 86_400 + ((hour * 3600.0) as i64).min(86_399);
    Utc.timestamp_opt(secs, 0).single().expect("in range")
}

/// Calibrated posterior of a Gaussian-noised one-hot observation:
/// `softmax((e_c + noise) / t^2 + log prior)`.
fn oracle_probs<R: Rng>(rng: &mut R, class: usize, t: f64, log_prior: &[f64], out: &mut [f32]) {
    let inv = 1.0 / (t * t);
    let mut logits: Vec<f64> = log_prior
        .iter()
        .enumerate()
        .map(|(k, lp)| {
            let eps: f64 = StandardNormal.sample(rng);
            let signal = if k == class { 1.0 } else { 0.0 };
            (signal + t * eps) * inv + lp
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in &mut logits {
        *l = (*l - max).exp();
        sum += *l;
    }
    for (o, l) in out.iter_mut().zip(&logits) {
        *o = (*l / sum) as f32;
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let hotspots: Vec<UnitVector> = (0..cfg.n_hotspots).map(|_| uniform_on_sphere(&mut rng)).collect();
    let popularity = WeightedIndex::new(
        (0..cfg.n_hotspots).map(|k| 1.0 / ((k + 1) as f64).powf(cfg.hotspot_zipf)),
    )
    .map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    let extra_images = if cfg.images_per_user_mean > 1.0 {
        Some(Poisson::new(cfg.images_per_user_mean - 1.0).map_err(|e| DataError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };

    let first = Utc
        .with_ymd_and_hms(cfg.first_year, 1, 1, 0, 0, 0)
        .single()
        .ok_or_else(|| DataError::InvalidConfig("bad first_year".into()))?
        .timestamp();
    let end = Utc
        .with_ymd_and_hms(cfg.last_year + 1, 1, 1, 0, 0, 0)
        .single()
        .ok_or_else(|| DataError::InvalidConfig("bad last_year".into()))?
        .timestamp();
    let days = (end - first) / 86_400;

    let spread = cfg.hotspot_spread_km / EARTH_RADIUS_KM;
    let coherence = cfg.coherence_radius_km / EARTH_RADIUS_KM;
    let mut homes = Vec::with_capacity(cfg.n_users);
    let mut records = Vec::new();
    for user in 0..cfg.n_users {
        let hotspot = &hotspots[popularity.sample(&mut rng)];
        let home = point_in_cap(&mut rng, hotspot, spread);
        homes.push(home.to_geo());
        let n = match &extra_images {
            Some(p) => 1 + p.sample(&mut rng) as usize,
            None => 1,
        }
        .min(cfg.images_per_user_max);
        for _ in 0..n {
            let location = point_in_cap(&mut rng, &home, coherence).to_geo();
            let posted_time = posting_time(&mut rng, cfg, location.lon_deg(), first, days);
            let outdoor = Some(rng.random_bool(cfg.outdoor_prob));
            let index = records.len();
            records.push(ImageRecord {
                image_id: format!("img{index:07}"),
                user_id: format!("user{user:05}"),
                location,
                posted_time,
                outdoor,
                prob_row: Some(index as u64),
            });
        }
    }

    let points: Vec<GeoPoint> = records.iter().map(|r| r.location).collect();
    let mut mesh = Mesh::build_initial(cfg.mesh).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    mesh.refine_and_prune(&points)
        .map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    let n = mesh.num_classes();
    if n == 0 {
        return Err(DataError::InvalidConfig(
            "no mesh cell reached minimum_examples; enlarge the corpus or lower the threshold".into(),
        ));
    }
    let truth: Vec<Option<usize>> = points.iter().map(|p| mesh.assign(*p)).collect();

    let mut counts = vec![0usize; n];
    for c in truth.iter().flatten() {
        counts[*c] += 1;
    }
    let total: usize = counts.iter().sum();
    let log_prior: Vec<f64> = counts.iter().map(|&c| (c as f64 / total as f64).ln()).collect();
    let centroids: Vec<UnitVector> = mesh
        .active_index()
        .iter()
        .map(|&id| mesh.cell_centroid(id).to_unit_vector())
        .collect();

    let mut probs = Array2::<f32>::zeros((records.len(), n));
    for (i, p) in points.iter().enumerate() {
        let class = truth[i].unwrap_or_else(|| {
            // Images in pruned cells look like their nearest active cell.
            let v = p.to_unit_vector();
            (0..n)
                .max_by(|&a, &b| v.dot(&centroids[a]).total_cmp(&v.dot(&centroids[b])))
                .expect("n > 0")
        });
        let row = probs.row_mut(i);
        oracle_probs(
            &mut rng,
            class,
            cfg.noise_temperature,
            &log_prior,
            row.into_slice().expect("rows are contiguous"),
        );
    }

    Ok(SynthCorpus {
        records,
        probs,
        truth,
        mesh,
        homes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::great_circle_distance;
    use chrono::Timelike;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small(coupling: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n_users: 1200,
            coupling,
            mesh: MeshParams {
                init_rows: 8,
                init_cols: 8,
                refinement_limit: 2000,
                minimum_examples: 50,
                max_depth: 8,
            },
            ..SynthConfig::with_seed(seed)
        }
    }

    /// Pearson chi-square independence test of UTC hour x longitude octant.
    fn independence_p_value(records: &[ImageRecord]) -> f64 {
        let mut table = [[0f64; 8]; 24];
        for r in records {
            let octant = (((r.location.lon_deg() + 180.0) / 45.0) as usize).min(7);
            table[r.posted_time.hour() as usize][octant] += 1.0;
        }
        let n: f64 = table.iter().flatten().sum();
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..8).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        let mut stat = 0.0;
        let mut df_rows = 0;
        let used_cols = cols.iter().filter(|c| **c > 0.0).count();
        for (i, row) in table.iter().enumerate() {
            if rows[i] == 0.0 {
                continue;
            }
            df_rows += 1;
            for j in 0..8 {
                if cols[j] == 0.0 {
                    continue;
                }
                let e = rows[i] * cols[j] / n;
                stat += (row[j] - e).powi(2) / e;
            }
        }
        let df = ((df_rows - 1) * (used_cols - 1)) as f64;
        1.0 - ChiSquared::new(df).unwrap().cdf(stat)
    }

    #[test]
    fn hour_longitude_independence_follows_coupling() {
        let independent = generate_synthetic(&small(0.0, 1)).unwrap();
        assert!(independent.records.len() >= 10_000);
        assert!(independence_p_value(&independent.records[..10_000]) > 0.01);
        let coupled = generate_synthetic(&small(1.0, 1)).unwrap();
        assert!(independence_p_value(&coupled.records[..10_000]) < 0.01);
    }

    #[test]
    fn images_stay_within_coherence_radius() {
        let cfg = small(0.5, 2);
        let corpus = generate_synthetic(&cfg).unwrap();
        for r in &corpus.records {
            let user: usize = r.user_id[4..].parse().unwrap();
            let d = great_circle_distance(corpus.homes[user], r.location);
            assert!(d <= cfg.coherence_radius_km + 1e-6, "{d}");
        }
    }

    #[test]
    fn probabilities_are_normalized_and_mostly_right() {
        let corpus = generate_synthetic(&small(0.5, 3)).unwrap();
        let mut correct = 0;
        let mut labelled = 0;
        for (row, truth) in corpus.probs.rows().into_iter().zip(&corpus.truth) {
            let sum: f64 = row.iter().map(|v| *v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-5);
            if let Some(c) = truth {
                labelled += 1;
                let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap();
                correct += usize::from(argmax == *c);
            }
        }
        let acc = correct as f64 / labelled as f64;
        assert!(acc > 0.2 && acc < 0.99, "{acc}");
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic(&small(0.5, 4)).unwrap();
        let b = generate_synthetic(&small(0.5, 4)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.probs, b.probs);
        let c = generate_synthetic(&small(0.5, 5)).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = small(1.5, 1);
        assert!(generate_synthetic(&cfg).is_err());
        cfg.coupling = 0.5;
        cfg.noise_temperature = 0.0;
        assert!(generate_synthetic(&cfg).is_err());
    }
}
